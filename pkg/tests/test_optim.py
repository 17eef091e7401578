import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from tonesplat.colorspace import identity_matrix
from tonesplat.optim import (
    AdamState,
    NonFiniteGradientError,
    OptimConfig,
    ParamGroup,
    adam_step,
    audit_error,
    grad_audit,
    remap_state,
)
from tonesplat.pipeline.train import _det_guard_hook


def _t(*vals):
    return torch.tensor(vals, dtype=torch.float64)


def test_default_rates():
    o = OptimConfig()
    assert o.color_adjust_lr == 2.5e-3
    assert (o.matrix_lr, o.matrix_decay) == (2.5e-4, 1e-5)
    assert (o.curve_lr, o.curve_decay) == (1e-3, 1e-4)
    assert (o.generator_lr, o.generator_decay) == (1e-5, 1e-5)
    assert (o.position_lr, o.scale_lr, o.rotation_lr, o.opacity_lr, o.color_lr) == (1.6e-4, 5e-3, 1e-3, 5e-2, 2.5e-3)


def test_group_validation():
    with pytest.raises(ValueError):
        ParamGroup("g", {}, lr=0.0)
    with pytest.raises(ValueError):
        ParamGroup("g", {}, lr=1.0, weight_decay=-1.0)


def test_zero_gradient_no_decay_is_noop():
    p = _t(0.3, -1.2)
    before = p.clone()
    adam_step([ParamGroup("g", {"p": p}, lr=0.1)], {"g": {"p": torch.zeros(2, dtype=torch.float64)}}, AdamState())
    assert torch.equal(p, before)


@pytest.mark.parametrize("g", [3.0, -0.02, 1e-3])
def test_first_step_is_lr_times_sign(g):
    p = _t(1.0)
    lr = 0.01
    adam_step([ParamGroup("g", {"p": p}, lr=lr)], {"g": {"p": _t(g)}}, AdamState())
    expected = 1.0 - lr * g / (abs(g) + 1e-8)
    assert p.item() == pytest.approx(expected, abs=1e-15)
    assert abs(1.0 - p.item()) == pytest.approx(lr, rel=1e-4)


def test_matches_torch_adam_without_decay():
    rng = np.random.default_rng(0)
    p = torch.as_tensor(rng.normal(size=5))
    q = p.clone().requires_grad_(True)
    ref = torch.optim.Adam([q], lr=0.05, betas=(0.9, 0.999), eps=1e-8)
    state = AdamState()
    group = ParamGroup("g", {"p": p}, lr=0.05)
    for _ in range(6):
        g = torch.as_tensor(rng.normal(size=5))
        adam_step([group], {"g": {"p": g}}, state)
        q.grad = g.clone()
        ref.step()
    assert torch.allclose(p, q.detach(), atol=1e-12)


def test_decay_only_pulls_toward_anchor():
    m = identity_matrix() + 0.5
    lr, wd = 2.5e-4, 1e-5
    group = ParamGroup("view_matrices", {"m0": m}, lr=lr, weight_decay=wd, decay_anchor={"m0": identity_matrix()})
    before = m.clone()
    adam_step([group], {"view_matrices": {"m0": torch.zeros(3, 3, dtype=torch.float64)}}, AdamState())
    expected = before - lr * wd * (before - identity_matrix())
    assert torch.allclose(m, expected, atol=1e-18)


def test_decay_without_anchor_toward_zero():
    p = _t(2.0)
    adam_step([ParamGroup("g", {"p": p}, lr=0.1, weight_decay=0.5)], {"g": {"p": _t(0.0)}}, AdamState())
    assert p.item() == pytest.approx(2.0 - 0.1 * 0.5 * 2.0, abs=1e-15)


def test_missing_gradient_skips_parameter():
    a, b = _t(1.0), _t(1.0)
    state = AdamState()
    group = ParamGroup("g", {"a": a, "b": b}, lr=0.1, weight_decay=0.1)
    adam_step([group], {"g": {"a": _t(1.0)}}, state)
    assert b.item() == 1.0 and a.item() != 1.0
    assert "g/b" not in state.exp_avg


def test_frozen_group_untouched():
    p = _t(1.0)
    adam_step([ParamGroup("g", {"p": p}, lr=0.1, frozen=True)], {"g": {"p": _t(1.0)}}, AdamState())
    assert p.item() == 1.0


@pytest.mark.parametrize("bad", [float("nan"), float("inf")])
def test_non_finite_gradient_aborts_whole_step(bad):
    a, b = _t(1.0), _t(1.0)
    groups = [ParamGroup("first", {"a": a}, lr=0.1), ParamGroup("second", {"b": b}, lr=0.1)]
    state = AdamState()
    with pytest.raises(NonFiniteGradientError) as info:
        adam_step(groups, {"first": {"a": _t(1.0)}, "second": {"b": _t(bad)}}, state)
    assert info.value.group == "second" and "second" in str(info.value)
    assert a.item() == 1.0 and state.step == 0


def test_bitwise_deterministic():
    def run():
        rng = np.random.default_rng(3)
        p = torch.as_tensor(rng.normal(size=(4, 3)))
        state = AdamState()
        g = ParamGroup("g", {"p": p}, lr=0.01, weight_decay=0.01)
        for _ in range(5):
            adam_step([g], {"g": {"p": torch.as_tensor(rng.normal(size=(4, 3)))}}, state)
        return p

    assert torch.equal(run(), run())


def test_rollback_guard_restores_matrix():
    m = torch.diag(_t(1.0, 1.0, 1.5e-3))
    group = ParamGroup("view_matrices", {"m0": m}, lr=1e-3, post_step=_det_guard_hook)
    before = m.clone()
    # a step that would shrink the last diagonal entry below the guard
    adam_step([group], {"view_matrices": {"m0": torch.diag(_t(0.0, 0.0, 1.0))}}, AdamState())
    assert torch.equal(m, before)
    assert abs(torch.linalg.det(m).item()) >= 1e-3


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_guard_invariant_random_steps(seed):
    rng = np.random.default_rng(seed)
    m = identity_matrix() * float(rng.uniform(0.11, 0.2))
    group = ParamGroup("view_matrices", {"m0": m}, lr=0.05, post_step=_det_guard_hook)
    state = AdamState()
    for _ in range(20):
        adam_step([group], {"view_matrices": {"m0": torch.as_tensor(rng.normal(size=(3, 3)))}}, state)
        assert abs(torch.linalg.det(m).item()) >= 1e-3


def test_remap_state():
    state = AdamState()
    state.exp_avg["g/p"] = _t(1.0, 2.0, 3.0)
    state.exp_avg_sq["g/p"] = _t(4.0, 5.0, 6.0)
    remap_state(state, "g", "p", torch.tensor([2, 0, -1]))
    assert state.exp_avg["g/p"].tolist() == [3.0, 1.0, 0.0]
    assert state.exp_avg_sq["g/p"].tolist() == [6.0, 4.0, 0.0]


# -- gradient audit ------------------------------------------------------------


def test_audit_error_floor():
    assert audit_error(1.0, 1.0005, 1e-3, 1e-5) == pytest.approx(0.0005 / 1.0005)
    assert audit_error(0.0, 5e-6, 1e-3, 1e-5) <= 1e-3  # inside the absolute floor
    assert audit_error(0.0, 2e-5, 1e-3, 1e-5) > 1e-3


def test_audit_quadratic_exact():
    rng = np.random.default_rng(0)
    x = torch.as_tensor(rng.normal(size=6))
    y = torch.as_tensor(rng.normal(size=(2, 2)))
    a = torch.as_tensor(rng.uniform(0.5, 2, size=6))
    report = grad_audit(lambda: (a * x**2).sum() + (y**2).sum() * 0.5, {"gx": {"x": x}, "gy": {"y": y}}, 20, seed=1)
    assert report.passed and report.groups == {"gx", "gy"}
    assert report.max_error < 1e-9
    assert "PASS" in str(report)


def test_audit_corrupted_gradient_fails():
    x = torch.as_tensor(np.linspace(0.5, 2.0, 5))

    def corrupted():
        g = 2 * x.detach().clone()
        g[3] *= 1.5
        return {"g": {"x": g}}

    report = grad_audit(lambda: (x**2).sum(), {"g": {"x": x}}, 30, seed=0, gradient_fn=corrupted)
    assert not report.passed
    assert {e.index for e in report.failures()} == {(3,)}
    assert report.worst.param == "x" and "FAIL" in str(report) and "x[3]" in str(report)


def test_audit_restores_parameters():
    x = torch.as_tensor(np.linspace(-1, 1, 4))
    before = x.clone()
    grad_audit(lambda: (x**3).sum(), {"g": {"x": x}}, 10, seed=2)
    assert torch.equal(x.detach(), before)


def test_audit_spreads_samples_over_groups():
    ps = {f"g{i}": {"p": torch.as_tensor(np.ones(3) * (i + 1.0))} for i in range(6)}
    report = grad_audit(lambda: sum((v["p"] ** 2).sum() for v in ps.values()), ps, 12, seed=0)
    assert report.groups == set(ps)
    assert math.isclose(report.max_error, 0.0, abs_tol=1e-9)
