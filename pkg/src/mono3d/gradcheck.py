"""Central finite-difference checks for every analytic loss gradient."""

from __future__ import annotations

import numpy as np

from . import losses

STEP = 1e-5
KINK_MARGIN = 1e-3


def numeric_grad(f, x: np.ndarray, h: float = STEP) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def max_rel_error(analytic, numeric, keep=None) -> float:
    """max |a - n| / max |n| over the kept elements.

    Normalising by the gradient's scale rather than per element keeps the
    roundoff of the difference quotient (~1e-11 absolute) from dominating on
    elements whose true gradient is itself ~1e-8.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if keep is not None:
        a, n = a[keep], n[keep]
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - n)) / max(np.max(np.abs(n)), 1e-12))


def _away_from(r, margin=KINK_MARGIN):
    return np.abs(r) >= margin


def check_focal(rng) -> float:
    shape = (8, 8)
    target = rng.uniform(0.0, 0.95, shape)
    peaks = rng.choice(target.size, size=rng.integers(1, 4), replace=False)
    target.flat[peaks] = 1.0
    pred = rng.uniform(0.05, 0.95, shape)
    cfg = losses.FocalConfig()
    _, grad = losses.focal_loss(pred, target, cfg)
    num = numeric_grad(lambda p: losses.focal_loss(p, target, cfg, also_grad=False)[0], pred)
    return max_rel_error(grad, num)


def check_laplacian(rng) -> float:
    n = int(rng.integers(1, 9))
    z_t = rng.uniform(1.0, 60.0, n)
    z = z_t + rng.normal(0.0, 3.0, n)
    sigma = rng.uniform(0.2, 5.0, n)
    _, dz, ds = losses.laplacian_depth_loss(z, sigma, z_t)
    num_z = numeric_grad(lambda v: losses.laplacian_depth_loss(v, sigma, z_t)[0], z)
    num_s = numeric_grad(lambda v: losses.laplacian_depth_loss(z, v, z_t)[0], sigma)
    keep = _away_from(z - z_t)
    return max(max_rel_error(dz, num_z, keep), max_rel_error(ds, num_s, keep))


def check_dim_aware(rng) -> float:
    n = int(rng.integers(1, 9))
    target = rng.uniform(0.4, 5.0, (n, 3))
    dims = np.clip(target + rng.normal(0.0, 0.5, (n, 3)), 0.2, None)
    lam = losses.dim_aware_lambda(dims, target)
    _, grad = losses.dim_aware_l1(dims, target, lam)
    num = numeric_grad(lambda d: losses.dim_aware_l1(d, target, lam)[0], dims)
    return max_rel_error(grad, num, _away_from(dims - target))


def check_masked_l1(rng) -> float:
    shape = (3, 6, 7)
    pred = rng.normal(size=shape)
    target = rng.normal(size=shape)
    mask = rng.random(shape[1:]) < 0.4
    mask.flat[0] = True
    _, grad = losses.masked_l1(pred, target, mask)
    num = numeric_grad(lambda p: losses.masked_l1(p, target, mask)[0], pred)
    return max_rel_error(grad, num, _away_from(pred - target) | ~mask[None])


def check_angle_ce(rng) -> float:
    n = int(rng.integers(1, 9))
    b = 12
    logits = rng.normal(0.0, 2.0, (n, b))
    target = rng.integers(0, b, n)
    _, grad = losses.angle_bin_ce(logits, target)
    num = numeric_grad(lambda v: losses.angle_bin_ce(v, target)[0], logits)
    return max_rel_error(grad, num)


CHECKS = {
    "focal": check_focal,
    "laplacian_depth": check_laplacian,
    "dim_aware_l1": check_dim_aware,
    "masked_l1": check_masked_l1,
    "angle_bin_ce": check_angle_ce,
}


def run_gradcheck(instances: int = 50, seed: int = 0) -> dict[str, float]:
    """Max relative gradient error per loss over ``instances`` random draws."""
    out = {}
    for name, check in CHECKS.items():
        rng = np.random.Generator(np.random.Philox(seed))
        out[name] = max(check(rng) for _ in range(instances))
    return out
