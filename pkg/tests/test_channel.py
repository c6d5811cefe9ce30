import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cdpauth import normalized_correlation, random_template
from cdpauth.channel import (DEFAULT_PROFILES, IDENTITY, PrinterProfile, channel_stages, derive_seed,
                             dot_gain_spread, load_profiles, print_and_scan, reprint)
from cdpauth.errors import ConfigError
from cdpauth.types import Kind


def _coverage(pixels):
    # independent pixel-count oracle for the fraction of inked pixels
    flat = np.ravel(pixels)
    return sum(1 for v in flat if v < 0.5) / len(flat)


def test_identity_round_trip_exact(rng):
    for _ in range(5):
        t = random_template(32, 0.5, rng)
        x = print_and_scan(t, IDENTITY, 0)
        assert np.array_equal(x.pixels, t.pixels.astype(float))
        assert x.kind is Kind.ORIGINAL and x.defender_printer == "identity"


def test_deterministic_given_seed(rng):
    t = random_template(32, 0.5, rng)
    p = DEFAULT_PROFILES["vpB"]
    assert np.array_equal(print_and_scan(t, p, 9).pixels, print_and_scan(t, p, 9).pixels)
    assert not np.array_equal(print_and_scan(t, p, 9).pixels, print_and_scan(t, p, 10).pixels)


def test_dot_gain_increases_coverage(rng):
    t = random_template(64, 0.5, rng)
    cov0 = _coverage(print_and_scan(t, PrinterProfile("p", dot_gain=0), 0).pixels)
    cov1 = _coverage(print_and_scan(t, PrinterProfile("p", dot_gain=1), 0).pixels)
    assert cov1 > cov0


def test_dot_gain_coverage_monotone_sweep(rng):
    t = random_template(64, 0.5, rng)
    sweep = [0.0, 0.7, 1.0, 1.5, 2.2]
    covs = [_coverage(print_and_scan(t, PrinterProfile("p", dot_gain=g, psf_sigma=0.6), 0).pixels)
            for g in sweep]
    assert all(a <= b for a, b in zip(covs, covs[1:])), covs
    assert covs[-1] > covs[0]


@given(st.integers(0, 2 ** 32 - 1), st.floats(0.0, 2.0))
def test_blur_conserves_mean_before_clamp(seed, sigma):
    t = random_template(24, 0.5, np.random.default_rng(seed))
    stages = channel_stages(t.pixels, PrinterProfile("p", dot_gain=0.8, psf_sigma=sigma), 0)
    assert abs(stages["blurred"].mean() - (1 - stages["spread"]).mean()) < 1e-6


def test_mean_coverage_invariant_under_psf(rng):
    t = random_template(64, 0.5, rng)
    means = [channel_stages(t.pixels, PrinterProfile("p", dot_gain=1.0, psf_sigma=s), 0)["blurred"].mean()
             for s in (0.0, 0.5, 1.0, 2.0)]
    assert np.ptp(means) < 1e-6


def test_stage_order():
    t = np.ones((8, 8), np.uint8)
    t[4, 4] = 0
    p = PrinterProfile("p", dot_gain=1.0, psf_sigma=0.5, noise_sigma=0.3, scan_gamma=2.0)
    s = channel_stages(t, p, 3)
    assert np.array_equal(s["clamped"], np.clip(s["noisy"], 0, 1))
    assert np.allclose(s["scanned"], s["clamped"] ** 2.0)
    assert s["noisy"].min() < 0 or s["noisy"].max() > 1


class TestDotGain:
    def test_radius_zero_identity(self, rng):
        ink = (rng.random((9, 9)) < 0.5).astype(float)
        assert np.array_equal(dot_gain_spread(ink, 0), ink)

    def test_single_pixel_radius_one(self):
        ink = np.zeros((5, 5))
        ink[2, 2] = 1
        out = dot_gain_spread(ink, 1.0)
        assert out[2, 2] == 1.0
        for y, x in ((1, 2), (3, 2), (2, 1), (2, 3)):
            assert out[y, x] > 0
        for y, x in ((1, 1), (1, 3), (3, 1), (3, 3)):
            assert out[y, x] == 0

    @given(st.floats(0.0, 4.0))
    def test_all_ink_saturated(self, radius):
        ink = np.ones((9, 9))
        assert np.array_equal(dot_gain_spread(ink, radius), ink)

    def test_negative_radius(self):
        with pytest.raises(ValueError):
            dot_gain_spread(np.zeros((8, 8)), -0.5)

    @given(st.floats(0.0, 3.0), st.floats(0.0, 3.0), st.integers(0, 1000))
    def test_monotone_in_radius(self, r1, r2, seed):
        ink = (np.random.default_rng(seed).random((12, 12)) < 0.3).astype(float)
        lo, hi = sorted((r1, r2))
        assert (dot_gain_spread(ink, lo) <= dot_gain_spread(ink, hi) + 1e-12).all()


def test_reprint_provenance_and_identity(rng):
    t = random_template(16, 0.5, rng, id=7)
    f = reprint(t.pixels, IDENTITY, 0, ("vpB", "vpA"), 7)
    assert f.kind is Kind.FAKE and f.attacker_printer == "vpB" and f.defender_printer == "vpA"
    assert np.array_equal(f.pixels, t.pixels.astype(float))
    with pytest.raises(ValueError):
        reprint(np.full((16, 16), 0.5), IDENTITY, 0, ("a", "d"), 7)


def test_noisy_fakes_differ_from_originals(rng):
    p = DEFAULT_PROFILES["vpA"]
    for i in range(20):
        t = random_template(16, 0.5, rng, id=i + 1)
        x = print_and_scan(t, p, derive_seed(0, i + 1, p.seed_salt, "original:vpA"))
        # even a perfect estimate reprinted with fresh noise differs pixelwise
        f = reprint(t.pixels, p, derive_seed(0, i + 1, p.seed_salt, "fake:vpA/vpA"), ("vpA", "vpA"), i + 1)
        assert not np.array_equal(x.pixels, f.pixels)


def test_default_profiles_degrade_and_differ(rng):
    ncs = {pid: [] for pid in DEFAULT_PROFILES}
    for i in range(40):
        t = random_template(64, 0.5, rng, id=i + 1)
        for pid, p in DEFAULT_PROFILES.items():
            nc = normalized_correlation(t, print_and_scan(t, p, derive_seed(0, i, p.seed_salt, pid)))
            assert 0 < nc < 1
            ncs[pid].append(nc)
    assert abs(np.mean(ncs["vpA"]) - np.mean(ncs["vpB"])) >= 0.02


def test_derive_seed_independent_of_order():
    a = [derive_seed(1, i, 2, "original:vpA") for i in range(5)]
    b = [derive_seed(1, i, 2, "original:vpA") for i in reversed(range(5))][::-1]
    assert a == b
    assert len({derive_seed(1, 1, 2, r) for r in ("original:vpA", "fake:vpA/vpA", "template")}) == 3


class TestProfiles:
    def test_ranges(self):
        with pytest.raises(ConfigError):
            PrinterProfile("p", scan_gamma=20)
        with pytest.raises(ConfigError):
            PrinterProfile("p", noise_sigma=-1)
        assert IDENTITY.is_identity and not DEFAULT_PROFILES["vpA"].is_identity

    def test_load_from_ini(self, tmp_path):
        cfg = tmp_path / "printers.ini"
        cfg.write_text("[printer:hp55]\ndot_gain = 0.5\nnoise_sigma = 0.02\nseed_salt = 9\n"
                       "[estimator]\nmethod = otsu\n")
        profiles = load_profiles(cfg)
        assert profiles == {"hp55": PrinterProfile("hp55", dot_gain=0.5, noise_sigma=0.02, seed_salt=9)}

    def test_unknown_key(self, tmp_path):
        cfg = tmp_path / "printers.ini"
        cfg.write_text("[printer:x]\ndotgain = 1\n")
        with pytest.raises(ConfigError, match="unknown key"):
            load_profiles(cfg)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_profiles(tmp_path / "nope.ini")
