import dataclasses
import math

import numpy as np
import pytest

from cystseg.errors import InfeasibleSpec
from cystseg.evaluation import SizeClass, gt_regions, size_class
from cystseg.phantom import PhantomSpec, generate_phantom, generate_slice, rayleigh_field


def test_rayleigh_sigma_zero():
    f = rayleigh_field(64, 32, 0.0, 1)
    assert f.shape == (32, 64) and np.all(f == 1.0)


@pytest.mark.parametrize("seed", [0, 1, 99])
def test_rayleigh_moments(seed):
    f = rayleigh_field(512, 256, 1.0, seed)
    assert 0.99 <= f.mean() <= 1.01
    target = (4 - math.pi) / math.pi
    assert abs(f.var() - target) <= 0.1 * target


def test_rayleigh_inverse_cdf():
    sigma = 0.7
    u = np.random.default_rng(5).random((4, 6))
    expected = sigma * np.sqrt(-2 * np.log(1 - u)) / (sigma * math.sqrt(math.pi / 2))
    assert np.allclose(rayleigh_field(6, 4, sigma, 5), expected, rtol=1e-12)


def test_area_500_noise_free():
    spec = PhantomSpec(n_slices=1, speckle_sigma=0.0, cyst_areas=(500,), seed=4)
    vol, truth = generate_phantom(spec)
    n = truth.masks[0].count()
    assert abs(n - 500) <= 25
    assert len(truth.cyst_list) == 1
    # noise free: only the four scene intensities appear
    assert np.unique(vol.slices[0]).size == 4


def test_determinism():
    spec = PhantomSpec(n_slices=3, seed=11)
    a, ta = generate_phantom(spec)
    b, tb = generate_phantom(spec)
    for x, y in zip(a.slices, b.slices):
        assert np.array_equal(x, y)
    assert ta.cyst_list == tb.cyst_list
    c, _ = generate_phantom(dataclasses.replace(spec, seed=12))
    assert not np.array_equal(a.slices[0], c.slices[0])


def test_noisy_mean_close_to_clean():
    clean = PhantomSpec(speckle_sigma=0.0, seed=21)
    noisy = dataclasses.replace(clean, speckle_sigma=0.3)
    for i in range(10):
        c = generate_slice(clean, i)[0].astype(float)
        n = generate_slice(noisy, i)[0].astype(float)
        assert abs(n.mean() - c.mean()) <= 0.03 * c.mean()


def test_cysts_strictly_inside_band():
    _, truth = generate_phantom(PhantomSpec(n_slices=4, seed=8, cyst_area_range=(30, 6000)))
    for b, m in zip(truth.boundaries, truth.masks):
        ys, xs = np.nonzero(m.bits)
        assert np.all(ys > b.ilm_row[xs]) and np.all(ys < b.rpe_row[xs])
        assert np.all(b.rpe_row - b.ilm_row >= 40)


def test_small_range_gives_small_regions():
    _, truth = generate_phantom(PhantomSpec(n_slices=5, seed=2, cyst_area_range=(50, 150)))
    regions = [r for m in truth.masks for r in gt_regions(m)]
    assert regions
    assert all(size_class(int(r.sum())) is SizeClass.Small for r in regions)


def test_grader_union_is_planted_mask():
    vol, truth = generate_phantom(PhantomSpec(n_slices=2, seed=6))
    for t, m in zip(vol.truth(), truth.masks):
        assert np.array_equal(t.bits, m.bits)
    for g1, g2 in zip(vol.grader1, vol.grader2):
        assert np.all(g1.bits >= g2.bits)


def test_infeasible_specs():
    with pytest.raises(InfeasibleSpec):
        generate_phantom(PhantomSpec(cyst_area_range=(5, 100)))
    with pytest.raises(InfeasibleSpec):
        generate_phantom(PhantomSpec(ilm_depth=120, rpe_depth=150))
    with pytest.raises(InfeasibleSpec):
        # twelve near-maximal cysts cannot share one band
        generate_phantom(PhantomSpec(n_slices=1, cyst_areas=(8000,) * 12))
