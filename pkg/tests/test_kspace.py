"""Sampling masks, coil containers, and the acquisition operator pair."""

import numpy as np
import pytest

from csmri.kspace import (
    MultiCoilKSpace,
    SamplingMask,
    adjoint_model,
    apply_mask,
    estimate_sensitivities,
    expected_kept_columns,
    forward_model,
    lowpass_images,
    make_cartesian_mask,
    mask_columns,
    rss_combine,
    sense_expand,
    sense_reduce,
    zero_filled_recon,
)
from csmri.transforms import fft2c, ifft2c, center_index


def random_kspace(rng, coils, n, mask):
    planes = rng.standard_normal((coils, n, n)) + 1j * rng.standard_normal((coils, n, n))
    return apply_mask(planes, mask)


# -- masks -------------------------------------------------------------------


def test_center_block_size_and_position():
    mask = make_cartesian_mask(100, 4, 0.08, seed=0)
    assert mask.num_center == 8
    lo, hi = mask.center_block()
    assert (lo, hi) == (46, 54)
    assert mask.keep[lo:hi].all()

    mask8 = make_cartesian_mask(100, 8, 0.04, seed=0)
    assert mask8.num_center == 4
    lo, hi = mask8.center_block()
    assert mask8.keep[lo:hi].all()


def test_expected_kept_columns_reference_values():
    # E[kept] = n_center + (W - n_center) * p with p chosen so E[kept] = W/R.
    assert expected_kept_columns(100, 4, 0.08) == pytest.approx(25.0)
    assert expected_kept_columns(100, 8, 0.04) == pytest.approx(12.5)


def test_mask_determinism_and_seed_sensitivity():
    a = make_cartesian_mask(64, 4, 0.08, seed=7)
    b = make_cartesian_mask(64, 4, 0.08, seed=7)
    c = make_cartesian_mask(64, 4, 0.08, seed=8)
    assert np.array_equal(a.keep, b.keep)
    assert not np.array_equal(a.keep, c.keep)


def test_exact_mode_kept_count():
    for seed in range(20):
        mask = make_cartesian_mask(64, 4, 0.08, seed=seed, exact=True)
        assert mask.keep.sum() == 16


def test_kept_fraction_concentrates_around_nominal():
    counts = [make_cartesian_mask(128, 4, 0.08, seed=s).keep.sum() for s in range(300)]
    assert abs(np.mean(counts) / 128 - 0.25) < 0.02


def test_acceleration_one_keeps_everything_in_expectation():
    mask = make_cartesian_mask(64, 1, 0.1, seed=0)
    # p = 1 for R = 1, so every column is kept.
    assert mask.keep.all()


def test_overfull_center_block_rejected():
    with pytest.raises(ValueError):
        make_cartesian_mask(100, 8, 0.5, seed=0)


def test_mask_argument_validation():
    with pytest.raises(ValueError):
        make_cartesian_mask(0, 4, 0.08, seed=0)
    with pytest.raises(ValueError):
        make_cartesian_mask(64, 0.5, 0.08, seed=0)
    with pytest.raises(ValueError):
        make_cartesian_mask(64, 4, 0.0, seed=0)
    with pytest.raises(ValueError):
        make_cartesian_mask(64, 4, 1.0, seed=0)


def test_mask_json_round_trip():
    mask = make_cartesian_mask(48, 4, 0.1, seed=3)
    back = SamplingMask.from_json(mask.to_json())
    assert back.width == mask.width
    assert back.acceleration == mask.acceleration
    assert back.center_fraction == mask.center_fraction
    assert back.seed == mask.seed
    assert np.array_equal(back.keep, mask.keep)


def test_sampled_center_run_contains_center_block():
    mask = make_cartesian_mask(64, 4, 0.08, seed=1)
    lo, hi = mask.sampled_center_run()
    blo, bhi = mask.center_block()
    assert lo <= blo and hi >= bhi
    assert mask.keep[lo:hi].all()
    # Maximality: the surrounding columns are either borders or dropped.
    assert lo == 0 or not mask.keep[lo - 1]
    assert hi == mask.width or not mask.keep[hi]


def test_mask_columns_zeroes_exactly_the_dropped_columns():
    rng = np.random.default_rng(2)
    mask = make_cartesian_mask(32, 4, 0.1, seed=2)
    planes = rng.standard_normal((2, 32, 32)) + 1j * rng.standard_normal((2, 32, 32))
    masked = mask_columns(planes, mask)
    assert np.array_equal(masked[..., mask.keep], planes[..., mask.keep])
    assert np.all(masked[..., ~mask.keep] == 0)


def test_mask_width_mismatch_rejected():
    mask = make_cartesian_mask(32, 4, 0.1, seed=0)
    with pytest.raises(ValueError):
        mask_columns(np.zeros((1, 16, 16), dtype=complex), mask)


# -- containers ---------------------------------------------------------------


def test_kspace_container_validation():
    mask = make_cartesian_mask(16, 2, 0.2, seed=0)
    with pytest.raises(ValueError):
        MultiCoilKSpace(planes=np.zeros((16, 16), dtype=complex), mask=mask)
    with pytest.raises(ValueError):
        MultiCoilKSpace(planes=np.zeros((1, 16, 8), dtype=complex), mask=mask)


def test_apply_mask_is_idempotent():
    rng = np.random.default_rng(3)
    mask = make_cartesian_mask(24, 4, 0.1, seed=3)
    full = rng.standard_normal((2, 24, 24)) + 1j * rng.standard_normal((2, 24, 24))
    once = apply_mask(full, mask)
    twice = apply_mask(once.planes, mask)
    assert np.array_equal(once.planes, twice.planes)


# -- low-pass and sensitivities ------------------------------------------------


def test_lowpass_images_matches_scripted_crop():
    # Independent script: zero everything outside the contiguous kept run
    # around DC, then inverse transform.
    rng = np.random.default_rng(4)
    mask = make_cartesian_mask(32, 4, 0.12, seed=4)
    ksp = random_kspace(rng, 2, 32, mask)
    lo, hi = mask.sampled_center_run()
    manual = np.zeros_like(ksp.planes)
    manual[..., lo:hi] = ksp.planes[..., lo:hi]
    assert np.allclose(lowpass_images(ksp), ifft2c(manual), atol=1e-14)


def test_lowpass_requires_center_block():
    keep = np.zeros(16, dtype=bool)
    keep[8] = True
    mask = SamplingMask(width=16, acceleration=16.0, center_fraction=0.01,
                        seed=0, keep=keep)
    ksp = MultiCoilKSpace(planes=np.ones((1, 16, 16), dtype=complex), mask=mask)
    with pytest.raises(ValueError):
        lowpass_images(ksp)


def test_rss_combine_hand_case():
    imgs = np.array([[[3.0 + 0j]], [[4.0 + 0j]]])
    assert rss_combine(imgs)[0, 0] == pytest.approx(5.0)


def test_estimated_sensitivities_unit_rss_on_support():
    rng = np.random.default_rng(5)
    mask = make_cartesian_mask(32, 4, 0.12, seed=5)
    ksp = random_kspace(rng, 3, 32, mask)
    sens = estimate_sensitivities(ksp)
    rss = rss_combine(sens.maps)
    support = rss > 0.5
    assert support.any()
    assert np.allclose(rss[support], 1.0, atol=1e-10)


def test_sense_reduce_is_adjoint_of_sense_expand():
    rng = np.random.default_rng(6)
    maps = rng.standard_normal((3, 8, 8)) + 1j * rng.standard_normal((3, 8, 8))
    from csmri.kspace import SensitivityMaps

    sens = SensitivityMaps(maps=maps)
    x = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
    y = rng.standard_normal((3, 8, 8)) + 1j * rng.standard_normal((3, 8, 8))
    lhs = np.vdot(sense_expand(x, sens), y)
    rhs = np.vdot(x, sense_reduce(y, sens))
    assert abs(lhs - rhs) < 1e-10 * max(abs(lhs), 1.0)


# -- acquisition operator -------------------------------------------------------


def test_forward_adjoint_pair_single_coil():
    rng = np.random.default_rng(7)
    mask = make_cartesian_mask(16, 2, 0.2, seed=7)
    x = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
    y = rng.standard_normal((1, 16, 16)) + 1j * rng.standard_normal((1, 16, 16))
    lhs = np.vdot(forward_model(x, mask), y)
    rhs = np.vdot(x, adjoint_model(y, mask))
    assert abs(lhs - rhs) < 1e-10 * abs(lhs)


def test_forward_adjoint_pair_multi_coil():
    rng = np.random.default_rng(8)
    mask = make_cartesian_mask(16, 2, 0.2, seed=8)
    ksp = random_kspace(rng, 3, 16, mask)
    sens = estimate_sensitivities(ksp)
    x = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
    y = rng.standard_normal((3, 16, 16)) + 1j * rng.standard_normal((3, 16, 16))
    lhs = np.vdot(forward_model(x, mask, sens), y)
    rhs = np.vdot(x, adjoint_model(y, mask, sens))
    assert abs(lhs - rhs) < 1e-10 * max(abs(lhs), 1.0)


def test_forward_model_operator_norm_at_most_one():
    # Unitary FFT, binary mask, unit-RSS maps: |A x| <= |x|.
    rng = np.random.default_rng(9)
    mask = make_cartesian_mask(16, 2, 0.2, seed=9)
    ksp = random_kspace(rng, 3, 16, mask)
    sens = estimate_sensitivities(ksp)
    for _ in range(5):
        x = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
        assert np.linalg.norm(forward_model(x, mask, sens)) <= np.linalg.norm(x) + 1e-12


def test_zero_filled_recon_single_coil_is_plain_inverse():
    rng = np.random.default_rng(10)
    mask = make_cartesian_mask(16, 2, 0.2, seed=10)
    ksp = random_kspace(rng, 1, 16, mask)
    assert np.array_equal(zero_filled_recon(ksp), ifft2c(ksp.planes[0]))


def test_zero_filled_recon_fully_sampled_multi_coil_recovers_image():
    # Unit-RSS synthetic maps and no undersampling: the combine inverts
    # the coil projection exactly.
    import csmri

    vol = csmri.make_phantom(24, num_slices=1, num_coils=3, seed=11)
    acq = csmri.simulate_acquisition(vol, 1, 0.2, seed=11)
    recon = zero_filled_recon(acq.kspaces[0])
    assert np.allclose(np.abs(recon), acq.ground_truth[0], atol=1e-10)
