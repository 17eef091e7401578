"""Independent reference implementations used only by the tests.

Nothing here imports the package's math: rotations come from scipy, the
projection Jacobian and compositing are plain per-pixel Python loops, and
SSIM uses scipy.ndimage filtering.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import correlate
from scipy.spatial.transform import Rotation

NEAR = 0.01
BLUR = 0.3
CUTOFF_SQ = 9.0
T_MIN = 1e-4


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def brute_force_render(positions, log_scales, quats_wxyz, opacity_logits, colors, cam, background=(0, 0, 0)):
    """Front-to-back compositing evaluated pixel by pixel.

    ``cam`` is a dict with width, height, fx, fy, cx, cy and a 4x4 ``w2c``.
    Returns (image (H, W, 3), final transmittance (H, W)).
    """
    w2c = np.asarray(cam["w2c"], dtype=np.float64)
    rot_w2c, t = w2c[:3, :3], w2c[:3, 3]
    splats = []
    for i in range(len(positions)):
        x, y, z = rot_w2c @ positions[i] + t
        if z <= NEAR:
            continue
        q = quats_wxyz[i]
        r = Rotation.from_quat([q[1], q[2], q[3], q[0]]).as_matrix()
        s = np.diag(np.exp(log_scales[i]) ** 2)
        cov3 = r @ s @ r.T
        fx, fy = cam["fx"], cam["fy"]
        jac = np.array([[fx / z, 0.0, -fx * x / z**2], [0.0, fy / z, -fy * y / z**2]])
        cov2 = jac @ rot_w2c @ cov3 @ rot_w2c.T @ jac.T + BLUR * np.eye(2)
        mean = np.array([fx * x / z + cam["cx"], fy * y / z + cam["cy"]])
        splats.append((z, i, mean, np.linalg.inv(cov2), sigmoid(opacity_logits[i]), np.asarray(colors[i])))
    splats.sort(key=lambda s: (s[0], s[1]))

    h, w = cam["height"], cam["width"]
    image = np.zeros((h, w, 3))
    trans = np.ones((h, w))
    for v in range(h):
        for u in range(w):
            p = np.array([u + 0.5, v + 0.5])
            t_acc, c = 1.0, np.zeros(3)
            for _, _, mean, conic, op, col in splats:
                if t_acc < T_MIN:
                    break
                d = p - mean
                qq = float(d @ conic @ d)
                if qq > CUTOFF_SQ:
                    continue
                a = op * math.exp(-0.5 * qq)
                c += col * a * t_acc
                t_acc *= 1.0 - a
            image[v, u] = c + t_acc * np.asarray(background, dtype=np.float64)
            trans[v, u] = t_acc
    return image, trans


def gaussian_kernel_2d(size=11, sigma=1.5):
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def ssim_reference(x, y, size=11, sigma=1.5):
    """Mean SSIM of (H, W, C) arrays, zero-padded Gaussian window, per channel."""
    k = gaussian_kernel_2d(size, sigma)
    c1, c2 = 0.01**2, 0.03**2
    vals = []
    for ch in range(x.shape[2]):
        a, b = x[..., ch], y[..., ch]

        def f(img):
            return correlate(img, k, mode="constant", cval=0.0)

        mu_a, mu_b = f(a), f(b)
        saa = f(a * a) - mu_a**2
        sbb = f(b * b) - mu_b**2
        sab = f(a * b) - mu_a * mu_b
        m = ((2 * mu_a * mu_b + c1) * (2 * sab + c2)) / ((mu_a**2 + mu_b**2 + c1) * (saa + sbb + c2))
        vals.append(m)
    return float(np.mean(vals))


def spa_reference(pred, inp, region=4, floor=0.05):
    """Region neighbor-difference loss by explicit enumeration of 4-neighborhoods."""
    wts = np.array([0.299, 0.587, 0.114])
    yp, yi = pred @ wts, inp @ wts
    coef = 0.5 / max(yi.mean(), floor)
    gh, gw = yp.shape[0] // region, yp.shape[1] // region

    def pool(y):
        return y[: gh * region, : gw * region].reshape(gh, region, gw, region).mean(axis=(1, 3))

    pp, pi = pool(yp), pool(yi)
    total = 0.0
    for r in range(gh):
        for c in range(gw):
            for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                rr, cc = r + dr, c + dc
                if 0 <= rr < gh and 0 <= cc < gw:
                    total += (abs(pp[r, c] - pp[rr, cc]) - coef * abs(pi[r, c] - pi[rr, cc])) ** 2
    return total / (gh * gw)


def lut_reference(values, curve):
    """Per-element linear interpolation of a 256-entry LUT on clamped inputs."""
    out = np.empty_like(values)
    flat_in, flat_out = values.ravel(), out.ravel()
    for n, v in enumerate(flat_in):
        t = min(max(v, 0.0), 1.0) * 255.0
        lo = int(math.floor(t))
        hi = min(lo + 1, 255)
        frac = t - lo
        flat_out[n] = (1 - frac) * curve[lo] + frac * curve[hi]
    return out


def central_difference(f, x, step=1e-4):
    """Gradient of scalar f at numpy array x (copied), entry by entry."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + step
        fp = f(x)
        x[idx] = orig - step
        fm = f(x)
        x[idx] = orig
        g[idx] = (fp - fm) / (2 * step)
    return g
