"""View-adaptive generators: image tokens as keys/values, camera as query.

Two independent networks share the same trunk layout. The curve generator
predicts a bounded 256-entry curve bias; the parameter generator predicts the
(power exponent, S-curve pivot, S-curve exponent) triple of the shape prior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F

from . import instrument
from .scene import DTYPE, Camera

INPUT_SIZE = 64
TOKEN_DIM = 64
BIAS_BOUND = 0.2
GAMMA_RANGE = (0.25, 4.0)
PIVOT_RANGE = (0.01, 0.99)
SEXP_RANGE = (0.5, 4.0)
LEAK = 0.01


class GeneratorCacheError(RuntimeError):
    pass


@dataclass
class GeneratorWeights:
    conv1_w: torch.Tensor  # (16, 3, 3, 3)
    conv1_b: torch.Tensor
    conv2_w: torch.Tensor  # (32, 16, 3, 3)
    conv2_b: torch.Tensor
    key_w: torch.Tensor  # (64, 32)
    key_b: torch.Tensor
    value_w: torch.Tensor  # (64, 32)
    value_b: torch.Tensor
    query_w: torch.Tensor  # (64, 16)
    query_b: torch.Tensor
    attn_out_w: torch.Tensor  # (64, 64)
    attn_out_b: torch.Tensor
    ffn1_w: torch.Tensor  # (256, 64) curve head, (64, 64) parameter head
    ffn1_b: torch.Tensor
    ffn2_w: torch.Tensor  # (256, 256) curve head, (3, 64) parameter head
    ffn2_b: torch.Tensor

    @property
    def kind(self) -> str:
        return "curve" if self.ffn2_w.shape[0] == 256 else "params"

    def tensors(self) -> dict[str, torch.Tensor]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def requires_grad_(self, flag: bool = True) -> "GeneratorWeights":
        for t in self.tensors().values():
            t.requires_grad_(flag)
        return self


def init_weights(kind: str, seed: int, zero_head: bool = True) -> GeneratorWeights:
    """Fan-in scaled uniform trunk; output layer zeroed unless ``zero_head`` is off."""
    if kind not in ("curve", "params"):
        raise ValueError(f"unknown generator kind {kind!r}")
    hidden, out = (256, 256) if kind == "curve" else (64, 3)
    shapes = {
        "conv1_w": (16, 3, 3, 3), "conv1_b": (16,),
        "conv2_w": (32, 16, 3, 3), "conv2_b": (32,),
        "key_w": (64, 32), "key_b": (64,),
        "value_w": (64, 32), "value_b": (64,),
        "query_w": (64, 16), "query_b": (64,),
        "attn_out_w": (64, 64), "attn_out_b": (64,),
        "ffn1_w": (hidden, 64), "ffn1_b": (hidden,),
        "ffn2_w": (out, hidden), "ffn2_b": (out,),
    }
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in shapes.items():
        wshape = shapes[name[:-1] + "w"]
        bound = 1.0 / math.sqrt(int(np.prod(wshape[1:])))
        params[name] = torch.as_tensor(rng.uniform(-bound, bound, size=shape), dtype=DTYPE)
    if zero_head:
        params["ffn2_w"].zero_()
        params["ffn2_b"].zero_()
    return GeneratorWeights(**params)


@dataclass
class PriorParams:
    gamma: torch.Tensor
    pivot: torch.Tensor
    exponent: torch.Tensor

    def as_tuple(self) -> tuple[float, float, float]:
        return self.gamma.item(), self.pivot.item(), self.exponent.item()


@dataclass
class GeneratorOutput:
    curve_bias: Optional[torch.Tensor] = None
    prior: Optional[PriorParams] = None
    attention: Optional[torch.Tensor] = None
    cache: Optional[dict] = None


def image_tokens(image: torch.Tensor, w: GeneratorWeights) -> torch.Tensor:
    """(H, W, 3) image -> (256, 32) spatial tokens."""
    if image.numel() == 0:
        raise ValueError("empty image")
    x = image.permute(2, 0, 1)[None]
    x = F.interpolate(x, size=(INPUT_SIZE, INPUT_SIZE), mode="bilinear", align_corners=False)
    x = F.leaky_relu(F.conv2d(x, w.conv1_w, w.conv1_b, stride=2, padding=1), LEAK)
    x = F.leaky_relu(F.conv2d(x, w.conv2_w, w.conv2_b, stride=2, padding=1), LEAK)
    return x[0].flatten(1).T


def attention_block(tokens: torch.Tensor, camera_query: torch.Tensor, w: GeneratorWeights):
    """Single-query cross attention. Returns (context, attention weights)."""
    keys = tokens @ w.key_w.T + w.key_b
    values = tokens @ w.value_w.T + w.value_b
    query = w.query_w @ camera_query + w.query_b
    attn = torch.softmax(keys @ query / math.sqrt(TOKEN_DIM), dim=0)
    return attn @ values, attn


def _raw(image: torch.Tensor, camera: Camera, w: GeneratorWeights):
    ctx, attn = attention_block(image_tokens(image, w), camera.query_vector(), w)
    h = ctx @ w.attn_out_w.T + w.attn_out_b
    h = F.leaky_relu(h @ w.ffn1_w.T + w.ffn1_b, LEAK)
    return h @ w.ffn2_w.T + w.ffn2_b, attn


def squash_bias(raw: torch.Tensor) -> torch.Tensor:
    return BIAS_BOUND * torch.tanh(raw)


def squash_params(raw: torch.Tensor) -> PriorParams:
    s = torch.sigmoid(raw)
    g_lo, g_hi = GAMMA_RANGE
    e_lo, e_hi = SEXP_RANGE
    return PriorParams(
        gamma=g_lo * (g_hi / g_lo) ** s[0],
        pivot=s[1].clamp(*PIVOT_RANGE),
        exponent=e_lo * (e_hi / e_lo) ** s[2],
    )


def gen_curve_bias(image: torch.Tensor, camera: Camera, w: GeneratorWeights) -> GeneratorOutput:
    instrument.hit("generator")
    raw, attn = _raw(image, camera, w)
    bias = squash_bias(raw)
    return GeneratorOutput(curve_bias=bias, attention=attn, cache={"weights": w, "outputs": bias})


def gen_prior_params(image: torch.Tensor, camera: Camera, w: GeneratorWeights) -> GeneratorOutput:
    instrument.hit("generator")
    raw, attn = _raw(image, camera, w)
    prior = squash_params(raw)
    outputs = torch.stack([prior.gamma, prior.pivot, prior.exponent])
    return GeneratorOutput(prior=prior, attention=attn, cache={"weights": w, "outputs": outputs})


def generator_backward(output: GeneratorOutput, upstream) -> dict[str, torch.Tensor]:
    """Weight gradients of ``<upstream, outputs>``.

    ``upstream`` is a 256-vector for the curve generator or the 3-vector
    (d/d gamma, d/d pivot, d/d exponent) for the parameter generator.
    """
    cache = output.cache
    if not cache or not cache["outputs"].requires_grad:
        raise GeneratorCacheError("no cached forward graph; run the generator with grad enabled")
    outputs, w = cache["outputs"], cache["weights"]
    upstream = torch.as_tensor(upstream, dtype=DTYPE).reshape(outputs.shape)
    names = list(w.tensors())
    grads = torch.autograd.grad(
        outputs, [w.tensors()[n] for n in names], grad_outputs=upstream,
        retain_graph=True, allow_unused=True,
    )
    return {
        n: (g if g is not None else torch.zeros_like(w.tensors()[n]))
        for n, g in zip(names, grads)
    }
