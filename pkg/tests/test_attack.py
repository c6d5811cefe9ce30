from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cdpauth import CdpTuple, hamming_distance, normalized_correlation, random_template
from cdpauth.attack import (EstimatorSpec, estimate_template, fabricate_fakes, otsu_threshold,
                            parse_estimator, wiener_deconvolve)
from cdpauth.channel import DEFAULT_PROFILES, IDENTITY, attacker_view, print_and_scan
from cdpauth.dataset import attack, synthesize
from cdpauth.errors import ConfigError, DegenerateImageError
from cdpauth.types import Kind

PROFILES = list(DEFAULT_PROFILES.values())


def _otsu_loop(image, bins=256):
    """Plain-loop Otsu over a histogram of the data range: best split index range."""
    lo, hi = float(image.min()), float(image.max())
    hist, edges = np.histogram(image, bins=bins, range=(lo, hi))
    total = hist.sum()
    centers = [(edges[i] + edges[i + 1]) / 2 for i in range(bins)]
    scores = []
    for k in range(bins - 1):
        n0 = sum(hist[:k + 1])
        n1 = total - n0
        if n0 == 0 or n1 == 0:
            scores.append(-1.0)
            continue
        m0 = sum(hist[i] * centers[i] for i in range(k + 1)) / n0
        m1 = sum(hist[i] * centers[i] for i in range(k + 1, bins)) / n1
        scores.append(n0 * n1 / total ** 2 * (m0 - m1) ** 2)
    best = max(scores)
    winners = [k for k, s in enumerate(scores) if s >= best - 1e-9 * best]
    return edges[winners[0] + 1], edges[winners[-1] + 1]


class TestOtsu:
    @given(st.floats(0.0, 1.0), st.integers(0, 10_000))
    def test_two_level_image_splits_the_gap(self, frac, seed):
        rng = np.random.default_rng(seed)
        img = np.where(rng.random((16, 16)) < frac, 0.2, 0.8)
        if np.ptp(img) == 0:
            return
        assert 0.2 < otsu_threshold(img) < 0.8

    def test_matches_loop_oracle(self, rng):
        for _ in range(5):
            img = np.clip(np.where(rng.random((24, 24)) < 0.5, 0.25, 0.7)
                          + rng.normal(0, 0.08, (24, 24)), 0, 1)
            lo, hi = _otsu_loop(img)
            assert lo - 1e-12 <= otsu_threshold(img) <= hi + 1e-12

    def test_constant_image(self):
        with pytest.raises(DegenerateImageError):
            otsu_threshold(np.full((8, 8), 0.3))


class TestEstimate:
    def test_identity_channel_recovers_template(self, rng):
        t = random_template(32, 0.5, rng)
        x = print_and_scan(t, IDENTITY, 0)
        specs = (EstimatorSpec(), EstimatorSpec("fixed", level=0.5), EstimatorSpec("wiener", psf_sigma=0.0))
        for spec in specs:
            assert hamming_distance(estimate_template(x, spec), t) == 0

    def test_vpA_error_rates(self, rng):
        p = DEFAULT_PROFILES["vpA"]
        for i in range(5):
            t = random_template(64, 0.5, rng, id=i + 1)
            x = print_and_scan(t, p, i)
            otsu = hamming_distance(estimate_template(x, EstimatorSpec()), t) / t.pixels.size
            wiener = hamming_distance(estimate_template(x, EstimatorSpec("wiener")), t) / t.pixels.size
            assert 0 < otsu < 0.5
            assert wiener <= otsu

    def test_only_originals(self, rng):
        t = random_template(16, 0.5, rng)
        fake = print_and_scan(t, IDENTITY, 0)
        from cdpauth.types import PrintedCode
        fake = PrintedCode(fake.pixels, t.id, Kind.FAKE, "identity", "identity")
        with pytest.raises(ValueError):
            estimate_template(fake, EstimatorSpec())

    def test_constant_original(self):
        from cdpauth.types import PrintedCode
        x = PrintedCode(np.full((8, 8), 0.5), 1, Kind.ORIGINAL, "p")
        with pytest.raises(DegenerateImageError):
            estimate_template(x, EstimatorSpec())

    def test_wiener_identity_without_blur(self, rng):
        img = rng.random((16, 16))
        assert np.array_equal(wiener_deconvolve(img, 0.0, 0.01), img)

    def test_wiener_undoes_blur(self, rng):
        from scipy import ndimage
        img = (rng.random((32, 32)) < 0.5).astype(float)
        blurred = ndimage.gaussian_filter(img, 0.8, mode="reflect")
        restored = wiener_deconvolve(blurred, 0.8, 1e-4)
        assert np.abs(restored - img).mean() < np.abs(blurred - img).mean()


class TestSpec:
    def test_parse(self):
        assert parse_estimator("otsu") == EstimatorSpec()
        assert parse_estimator("fixed:0.4") == EstimatorSpec("fixed", level=0.4)
        assert parse_estimator("wiener:0.9:0.02+sharpen") == EstimatorSpec(
            "wiener", psf_sigma=0.9, noise_ratio=0.02, sharpen=True)

    def test_invalid(self):
        for text in ("magic", "fixed:1.5", "wiener:0.6:0", "otsu:3", "fixed:x"):
            with pytest.raises(ConfigError):
                parse_estimator(text)

    def test_summary_round_trip(self):
        for spec in (EstimatorSpec(), EstimatorSpec("wiener", psf_sigma=0.9), EstimatorSpec(sharpen=True)):
            text = spec.summary().replace("psf_sigma=", "").replace(",noise_ratio=", ":")
            assert parse_estimator(text.replace(":sharpen", "+sharpen")) == spec


class TestFabricate:
    def test_four_fakes_complete_product(self):
        (tup,) = synthesize(1, 16, 0.5, PROFILES, seed=1)
        out = fabricate_fakes(tup, EstimatorSpec(), PROFILES, seed=2)
        assert set(out.fakes) == {(a, d) for a in ("vpA", "vpB") for d in ("vpA", "vpB")}
        for (a, d), f in out.fakes.items():
            assert f.kind is Kind.FAKE and f.attacker_printer == a and f.defender_printer == d

    def test_singleton(self):
        (tup,) = synthesize(1, 16, 0.5, PROFILES[:1], seed=1)
        out = fabricate_fakes(tup, EstimatorSpec(), PROFILES[1:], seed=2)
        assert list(out.fakes) == [("vpB", "vpA")]

    def test_identity_round_trip(self, rng):
        t = random_template(16, 0.5, rng)
        tup = CdpTuple(t, {"identity": print_and_scan(t, IDENTITY, 0)})
        out = fabricate_fakes(tup, EstimatorSpec(), [IDENTITY], seed=0)
        assert np.array_equal(out.fakes["identity", "identity"].pixels, tup.originals["identity"].pixels)

    def test_deterministic(self):
        tuples = synthesize(3, 16, 0.5, PROFILES, seed=1)
        assert attack(tuples, EstimatorSpec(), PROFILES, 4) == attack(tuples, EstimatorSpec(), PROFILES, 4)
        assert attack(tuples, EstimatorSpec(), PROFILES, 4) != attack(tuples, EstimatorSpec(), PROFILES, 5)

    def test_errors(self):
        (tup,) = synthesize(1, 16, 0.5, PROFILES, seed=1)
        with pytest.raises(ValueError):
            fabricate_fakes(tup, EstimatorSpec(), [], seed=0)
        with pytest.raises(ValueError):
            fabricate_fakes(CdpTuple(tup.template), EstimatorSpec(), PROFILES, seed=0)

    def test_resolution_advantage(self, rng):
        base = DEFAULT_PROFILES["vpA"]
        sharp = replace(base, attack_noise_scale=0.0)
        errors = []
        for i in range(5):
            t = random_template(64, 0.5, rng, id=i + 1)
            published = print_and_scan(t, base, i)
            own_scan = attacker_view(t, sharp, i)
            errors.append([hamming_distance(estimate_template(x, EstimatorSpec()), t)
                           for x in (published, own_scan)])
        errors = np.array(errors)
        assert (errors[:, 1] <= errors[:, 0]).all() and errors[:, 1].sum() < errors[:, 0].sum()
        tuples = synthesize(2, 32, 0.5, [base], seed=3)
        plain = attack(tuples, EstimatorSpec(), [base], 1)
        assert attack(tuples, EstimatorSpec(), [base], 1, {"vpA": base}) == plain
        assert attack(tuples, EstimatorSpec(), [base], 1, {"vpA": sharp}) != plain


def test_fakes_correlate_less_than_originals():
    tuples = attack(synthesize(100, 64, 0.5, PROFILES, seed=7), EstimatorSpec(), PROFILES, seed=11)
    for d in ("vpA", "vpB"):
        orig = np.median([normalized_correlation(t.template, t.originals[d]) for t in tuples])
        for a in ("vpA", "vpB"):
            fake = np.median([normalized_correlation(t.template, t.fakes[a, d]) for t in tuples])
            assert fake < orig, (a, d)
