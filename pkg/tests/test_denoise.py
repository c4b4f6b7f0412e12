import numpy as np
import pytest

from cystseg.denoise import (
    TvParams,
    divergence,
    gradient,
    rof_energy,
    total_variation,
    tv_denoise,
    tv_denoise_trace,
)
from cystseg.errors import NonFiniteInput


def tv_brute(u):
    """Isotropic TV by explicit per-pixel loops (forward differences, zero at the far edge)."""
    h, w = u.shape
    total = 0.0
    for y in range(h):
        for x in range(w):
            dx = u[y, x + 1] - u[y, x] if x + 1 < w else 0.0
            dy = u[y + 1, x] - u[y, x] if y + 1 < h else 0.0
            total += (dx * dx + dy * dy) ** 0.5
    return total


def test_tv_hand_cases():
    assert total_variation(np.full((5, 5), 0.3)) == 0.0
    assert total_variation(np.array([[0.0, 1.0], [0.0, 1.0]])) == 2.0
    H, h = 7, 0.4
    step = np.zeros((H, 6))
    step[:, 3:] = h
    assert total_variation(step) == pytest.approx(H * h, abs=1e-12)


def test_tv_matches_loops(rng):
    u = rng.random((9, 13))
    assert total_variation(u) == pytest.approx(tv_brute(u), rel=1e-12)


def test_divergence_is_negative_adjoint(rng):
    u = rng.random((8, 11))
    px, py = rng.standard_normal((2, 8, 11))
    gx, gy = gradient(u)
    lhs = float((gx * px + gy * py).sum())
    rhs = -float((u * divergence(px, py)).sum())
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_constant_is_fixed_point():
    f = np.full((32, 40), 0.41)
    assert np.array_equal(tv_denoise(f), f)


def test_huge_lambda_keeps_input(rng):
    f = rng.random((32, 32))
    assert np.max(np.abs(tv_denoise(f, TvParams(lam=1e6)) - f)) <= 1e-3


def test_step_signal():
    f = np.full((16, 32), 0.2)
    f[:, 16:] = 0.8
    u = tv_denoise(f, TvParams(lam=2.0))
    assert total_variation(u) <= total_variation(f)
    col = lambda img: int(np.argmax(np.abs(np.diff(img, axis=1)).sum(axis=0)))  # noqa: E731
    assert col(u) == col(f) == 15


def test_energy_non_increasing(rng):
    f = rng.random((48, 48))
    u, trace = tv_denoise_trace(f, TvParams(lam=4.0, tol=1e-8))
    energies = [e for _, e in trace]
    assert len(energies) >= 2
    assert all(b <= a + 1e-9 for a, b in zip(energies, energies[1:]))
    assert rof_energy(u, f, 4.0) <= rof_energy(f, f, 4.0)


def test_lambda_ordering(rng):
    f = rng.random((40, 40))
    dist = [np.linalg.norm(tv_denoise(f, TvParams(lam=lam, tol=1e-6, max_iter=2000)) - f)
            for lam in (1.0, 4.0, 16.0, 64.0)]
    assert all(a >= b for a, b in zip(dist, dist[1:]))


def test_mean_roughly_preserved(rng):
    f = rng.random((64, 64))
    assert abs(tv_denoise(f).mean() - f.mean()) <= 1e-3


def test_output_range_and_shape(rng):
    f = rng.random((20, 30))
    u = tv_denoise(f, TvParams(lam=0.5))
    assert u.shape == f.shape and u.min() >= 0.0 and u.max() <= 1.0


def test_non_finite_rejected():
    f = np.zeros((4, 4))
    f[1, 2] = np.nan
    with pytest.raises(NonFiniteInput):
        tv_denoise(f)


@pytest.mark.parametrize("kw", [{"lam": 0.0}, {"tol": 0.0}, {"max_iter": 0}])
def test_bad_params(kw):
    with pytest.raises(ValueError):
        TvParams(**kw)


def test_log_variant_runs(rng):
    f = rng.random((16, 16))
    u = tv_denoise(f, TvParams(log_transform=True))
    assert np.all(np.isfinite(u)) and u.min() >= 0 and u.max() <= 1
