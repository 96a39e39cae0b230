import math

import numpy as np
import pytest

from livqual.config import LivQualConfig, SpectralBandParams
from livqual.errors import EmptyForeground, ForegroundTooSmall, InvalidParams, LivQualError, NoComparableBlocks
from livqual.image import GrayImage, Mask, block_partition
from livqual.preprocessing import GradientMoments, OrientationField
from livqual.quality import (
    FEATURE_NAMES,
    FLAG_LCS1_FALLBACK,
    N_FEATURES,
    QualityVector,
    band_concentration,
    band_energies,
    block_ocl,
    compute_cof,
    compute_energy_concentration,
    compute_gray_stats,
    compute_loq,
    compute_ocl,
    extract_quality_vector,
    feature_usage,
    gradient_eigenvalues,
)
from livqual.synth import FAKE_DEGRADATIONS, corpus_specs, generate, make_spec

from conftest import oracle_count, stripe_pixels


def moments(gxx, gyy, gxy):
    return GradientMoments(np.array([[gxx]], float), np.array([[gyy]], float), np.array([[gxy]], float))


class TestQualityVector:
    def test_order_is_fixed(self):
        assert FEATURE_NAMES[0] == "q_ocl" and FEATURE_NAMES[-1] == "q_var"
        assert N_FEATURES == 10

    def test_array_round_trip_ignores_flags_in_equality(self):
        values = np.linspace(0.0, 0.9, N_FEATURES)
        a = QualityVector.from_array(values, flags=[FLAG_LCS1_FALLBACK])
        b = QualityVector.from_array(values)
        assert a == b
        assert np.array_equal(a.as_array(), values)
        assert a.flags == {FLAG_LCS1_FALLBACK}

    def test_wrong_length_is_rejected(self):
        with pytest.raises(ValueError):
            QualityVector.from_array([0.0] * 9)

    def test_range_violations(self):
        values = [0.5] * N_FEATURES
        values[0] = 1.5
        values[4] = float("nan")
        problems = QualityVector.from_array(values).range_violations()
        assert len(problems) == 2
        assert problems[0].startswith("q_ocl=")


class TestRidgeStrength:
    def test_closed_form_eigenvalues_match_numpy(self, rng):
        g = rng.normal(size=(50, 2, 2))
        s = np.einsum("nij,nkj->nik", g, g)
        lam_max, lam_min = gradient_eigenvalues(s[:, 0, 0], s[:, 1, 1], s[:, 0, 1])
        expected = np.linalg.eigvalsh(s)
        assert lam_max == pytest.approx(expected[:, 1], abs=1e-9)
        assert lam_min == pytest.approx(expected[:, 0], abs=1e-9)

    @pytest.mark.parametrize(
        "gxx, gyy, gxy, expected",
        [(4.0, 0.0, 0.0, 1.0), (2.0, 2.0, 0.0, 0.0), (0.0, 0.0, 0.0, 0.0), (1.0, 1.0, 1.0, 1.0)],
        ids=["one-direction", "isotropic", "no-energy", "diagonal"],
    )
    def test_block_ocl(self, gxx, gyy, gxy, expected):
        assert block_ocl(moments(gxx, gyy, gxy))[0, 0] == pytest.approx(expected, abs=1e-12)

    def test_ocl_separates_stripes_from_noise(self, stripes, full_mask, rng):
        mask = full_mask(stripes)
        assert compute_ocl(stripes, mask.grid, mask) > 0.9
        noise = GrayImage(rng.integers(0, 256, size=(256, 256)))
        assert compute_ocl(noise, mask.grid, full_mask(noise)) < 0.5

    def test_ocl_needs_foreground(self, stripes):
        grid = block_partition(stripes, 32)
        empty = Mask.from_blocks(np.zeros(grid.shape, dtype=bool), grid, stripes.pixels.shape)
        with pytest.raises(EmptyForeground):
            compute_ocl(stripes, grid, empty)


class TestEnergyConcentration:
    def test_uniform_bands_score_zero(self):
        assert band_concentration(np.full(30, 2.5)) == 0.0

    def test_single_band_scores_one(self):
        energies = np.zeros(30)
        energies[7] = 4.0
        assert band_concentration(energies) == 1.0

    def test_no_energy_scores_zero(self):
        assert band_concentration(np.zeros(30)) == 0.0

    def test_two_equal_bands(self):
        energies = np.zeros(30)
        energies[[3, 4]] = 1.0
        assert band_concentration(energies) == pytest.approx(1.0 - math.log(2) / math.log(30))

    @pytest.mark.parametrize("bin_index", [20, 27, 34, 41])
    def test_sinusoid_inside_one_band_concentrates_energy(self, make_stripes, full_mask, bin_index):
        # FFT bins k-1..k+1 all fall inside a single band for these k at 256 px
        image = make_stripes(frequency=bin_index / 256)
        assert compute_energy_concentration(image, full_mask(image)) >= 0.8

    def test_sinusoid_on_a_band_edge_splits_energy(self, make_stripes, full_mask):
        image = make_stripes(frequency=0.1)
        assert 0.5 < compute_energy_concentration(image, full_mask(image)) < 0.9

    def test_white_noise_spreads_energy(self, rng, full_mask):
        noise = GrayImage(rng.integers(0, 256, size=(256, 256)))
        assert compute_energy_concentration(noise, full_mask(noise)) <= 0.05

    def test_band_count_follows_params(self, stripes, full_mask):
        energies = band_energies(stripes, full_mask(stripes), SpectralBandParams(n_bands=12))
        assert energies.shape == (12,)
        assert (energies >= 0).all()

    def test_small_foreground_is_rejected(self, stripes):
        grid = block_partition(stripes, 32)
        flags = np.zeros(grid.shape, dtype=bool)
        flags[3, 3] = True
        mask = Mask.from_blocks(flags, grid, stripes.pixels.shape)
        with pytest.raises(ForegroundTooSmall):
            band_energies(stripes, mask)

    def test_empty_foreground_is_rejected(self, stripes):
        grid = block_partition(stripes, 32)
        empty = Mask.from_blocks(np.zeros(grid.shape, dtype=bool), grid, stripes.pixels.shape)
        with pytest.raises(EmptyForeground):
            band_energies(stripes, empty)


class TestContinuity:
    def test_uniform_field_is_perfect(self):
        field = OrientationField.from_angles(np.full((3, 3), 0.4))
        assert compute_loq(field) == 1.0
        assert compute_cof(field) == 1.0

    def test_alternating_field(self):
        field = OrientationField.from_angles(np.array([[0.0, math.pi / 2], [math.pi / 2, 0.0]]))
        assert compute_loq(field) == pytest.approx(1 / 3)
        assert compute_cof(field) == 0.0

    def test_perpendicular_pair_scores_zero(self):
        field = OrientationField.from_angles(np.array([[0.0, math.pi / 2]]))
        assert compute_loq(field) == 0.0

    def test_random_orientations_score_about_half(self, rng):
        field = OrientationField.from_angles(rng.uniform(0.0, math.pi, size=(64, 64)))
        assert compute_loq(field) == pytest.approx(0.5, abs=0.05)

    def test_abrupt_turn_counts_once(self):
        field = OrientationField.from_angles(np.array([[0.0, 0.1, 1.0]]))
        assert compute_cof(field) == 0.5
        assert compute_cof(field, t_abrupt=1.0) == 1.0

    @pytest.mark.parametrize("t_abrupt", [0.0, -0.2, 2.0])
    def test_abrupt_threshold_out_of_range(self, t_abrupt):
        field = OrientationField.from_angles(np.full((2, 2), 0.4))
        with pytest.raises(InvalidParams, match="t_abrupt"):
            compute_cof(field, t_abrupt=t_abrupt)

    def test_invalid_blocks_are_skipped(self):
        field = OrientationField.from_angles(np.array([[0.0, 0.1, 1.0]]), np.array([[True, True, False]]))
        assert compute_cof(field) == 1.0
        assert compute_loq(field) == pytest.approx(1.0 - 0.1 / (math.pi / 2))

    def test_wraparound_is_close(self):
        field = OrientationField.from_angles(np.array([[0.05, math.pi - 0.05]]))
        assert compute_cof(field) == 1.0

    def test_isolated_block_has_nothing_to_compare(self):
        field = OrientationField.from_angles(np.array([[0.3, 0.0], [0.0, 0.0]]), np.array([[True, False], [False, False]]))
        with pytest.raises(NoComparableBlocks):
            compute_loq(field)
        with pytest.raises(NoComparableBlocks):
            compute_cof(field)


class TestGrayStats:
    def test_population_statistics(self):
        pixels = np.hstack([np.full((32, 32), 10, np.uint8), np.full((32, 32), 30, np.uint8)])
        image = GrayImage(pixels)
        grid = block_partition(image, 32)
        assert compute_gray_stats(image, Mask.full(image, grid)) == pytest.approx((20.0, 10.0))
        left = Mask.from_blocks(np.array([[True, False]]), grid, pixels.shape)
        assert compute_gray_stats(image, left) == (10.0, 0.0)

    def test_black_and_white_halves(self):
        pixels = np.hstack([np.zeros((32, 32), np.uint8), np.full((32, 32), 255, np.uint8)])
        image = GrayImage(pixels)
        assert compute_gray_stats(image, Mask.full(image, block_partition(image, 32))) == (127.5, 127.5)

    def test_needs_two_pixels(self):
        image = GrayImage(np.zeros((32, 32), np.uint8))
        grid = block_partition(image, 32)
        single = np.zeros((32, 32), dtype=bool)
        single[0, 0] = True
        with pytest.raises(EmptyForeground):
            compute_gray_stats(image, Mask(single, grid))


class TestExtraction:
    def test_synthetic_fingerprint_is_in_range(self):
        image, _ = generate(make_spec(seed=3))
        vector = extract_quality_vector(image)
        assert vector.range_violations() == []
        assert vector.q_ocl > 0.9
        assert vector.q_a == 1.0
        assert not vector.flags

    def test_is_deterministic(self):
        image, _ = generate(make_spec(seed=4, flow="smooth", angle=1.1))
        first = extract_quality_vector(image)
        second = extract_quality_vector(image)
        assert np.array_equal(first.as_array(), second.as_array())

    def test_degradation_lowers_clarity(self):
        spec = make_spec(seed=8, flow="smooth")
        clean = extract_quality_vector(generate(spec)[0])
        fake = extract_quality_vector(generate(spec.model_copy(update={"degradations": list(FAKE_DEGRADATIONS)}))[0])
        assert fake.q_std < clean.q_std
        assert fake.q_lcs2 > clean.q_lcs2

    def test_weak_ridges_flag_the_clarity_fallback(self, make_stripes):
        vector = extract_quality_vector(make_stripes(amplitude=7.0))
        assert FLAG_LCS1_FALLBACK in vector.flags
        assert vector.q_lcs1 == 0.5
        assert vector.q_a == 0.0

    def test_flat_image_names_its_source(self, flat_image):
        with pytest.raises(EmptyForeground) as info:
            extract_quality_vector(flat_image, source="scans/empty.pgm")
        assert info.value.source == "scans/empty.pgm"
        assert "scans/empty.pgm" in str(info.value)

    def test_block_size_comes_from_config(self):
        image, _ = generate(make_spec(seed=3))
        default = extract_quality_vector(image)
        smaller = extract_quality_vector(image, LivQualConfig(block_size=16))
        assert not np.array_equal(default.as_array(), smaller.as_array())

    def test_generated_corpus_stays_in_range(self):
        specs = corpus_specs(oracle_count(3, 25), seed=99, size=192)
        for spec in specs:
            for variant in (spec, spec.model_copy(update={"degradations": list(FAKE_DEGRADATIONS)})):
                vector = extract_quality_vector(generate(variant)[0])
                assert vector.range_violations() == [], variant


class TestFeatureUsage:
    def test_counts_features_and_properties(self):
        usage = feature_usage({"a": 0b11, "b": 0b1, "c": 0b1000000000})
        assert usage.n_subsets == 3
        assert usage.per_feature["q_ocl"] == 2
        assert usage.per_feature["q_e"] == 1
        assert usage.per_feature["q_var"] == 1
        assert usage.per_property == {"ridge strength": 3, "ridge continuity": 0, "ridge clarity": 1}
        assert usage.per_source == {"local angle": 2, "power spectrum": 1, "pixel intensity": 1}
        assert usage.ranked()[:3] == [("q_ocl", 2), ("q_e", 1), ("q_var", 1)]

    def test_empty_input(self):
        usage = feature_usage({})
        assert usage.n_subsets == 0
        assert set(usage.per_feature.values()) == {0}


FUZZ_KINDS = ("noise", "constant", "mixed", "tiny", "synthetic")


def fuzz_image(rng, kind):
    if kind == "noise":
        h, w = rng.integers(64, 200, size=2)
        return GrayImage(rng.integers(0, 256, size=(h, w)), source=kind)
    if kind == "constant":
        return GrayImage(np.full((128, 160), rng.integers(0, 256), dtype=np.uint8), source=kind)
    if kind == "mixed":
        pixels = stripe_pixels(192, angle=rng.uniform(0.0, math.pi), frequency=rng.uniform(0.06, 0.14),
                               amplitude=rng.uniform(5.0, 100.0))
        half = rng.integers(0, 2)
        if half:
            pixels[96:] = rng.integers(0, 256, size=(96, 192))
        else:
            pixels[:, 96:] = rng.integers(0, 256)
        return GrayImage(pixels, source=kind)
    if kind == "tiny":
        h, w = rng.integers(32, 64, size=2)
        return GrayImage(stripe_pixels(64)[:h, :w], source=kind)
    spec = corpus_specs(1, seed=int(rng.integers(0, 2 ** 32)), size=int(rng.choice([96, 160, 192])))[0]
    if rng.integers(0, 2):
        spec = spec.model_copy(update={"degradations": list(FAKE_DEGRADATIONS)})
    return generate(spec)[0]


class TestRangeFuzz:
    @pytest.mark.parametrize("case", range(oracle_count(30, 1000)))
    def test_vector_is_in_range_or_a_typed_error(self, case):
        rng = np.random.default_rng(7000 + case)
        image = fuzz_image(rng, FUZZ_KINDS[case % len(FUZZ_KINDS)])
        try:
            vector = extract_quality_vector(image)
        except LivQualError as exc:
            assert exc.source == image.source
            return
        assert vector.range_violations() == [], image.source


class TestDirectOracles:
    @pytest.mark.parametrize("case", range(oracle_count(20, 100)))
    def test_gray_stats_match_two_pass(self, case):
        rng = np.random.default_rng(8000 + case)
        image = GrayImage(rng.integers(0, 256, size=(96, 128)))
        grid = block_partition(image, 32)
        flags = rng.random(grid.shape) < 0.6
        flags[0, 0] = True
        mask = Mask.from_blocks(flags, grid, image.pixels.shape)

        values = [float(v) for v, inside in zip(image.pixels.ravel(), mask.pixels.ravel()) if inside]
        mean = sum(values) / len(values)
        std = math.sqrt(sum((v - mean) ** 2 for v in values) / len(values))
        assert compute_gray_stats(image, mask) == pytest.approx((mean, std), rel=1e-12)

    @pytest.mark.parametrize("case", range(oracle_count(20, 100)))
    def test_band_concentration_matches_shannon_entropy(self, case):
        rng = np.random.default_rng(9000 + case)
        n = int(rng.integers(2, 40))
        energies = rng.exponential(1.0, n) * (rng.random(n) < 0.7)
        energies[int(rng.integers(0, n))] = rng.uniform(0.5, 2.0)

        total = sum(energies)
        entropy = -sum(e / total * math.log(e / total) for e in energies if e > 0)
        expected = min(1.0, max(0.0, 1.0 - entropy / math.log(n)))
        assert band_concentration(energies) == pytest.approx(expected, abs=1e-12)


class TestInvariance:
    @pytest.mark.parametrize("seed", range(oracle_count(3, 20)))
    def test_gray_offset_moves_only_the_mean(self, seed):
        spec = corpus_specs(1, seed=500 + seed, size=192)[0]
        image = generate(spec)[0]
        assert int(image.pixels.max()) <= 225
        brighter = GrayImage(image.pixels.astype(np.int64) + 30)

        before = extract_quality_vector(image)
        after = extract_quality_vector(brighter)
        assert after.q_mean == pytest.approx(before.q_mean + 30.0, abs=1e-9)
        for name in FEATURE_NAMES:
            if name != "q_mean":
                assert getattr(after, name) == pytest.approx(getattr(before, name), abs=1e-6), name

    def test_degradation_orders_many_pairs(self):
        for spec in corpus_specs(oracle_count(5, 100), seed=321, size=192):
            clean = extract_quality_vector(generate(spec)[0])
            fake = extract_quality_vector(generate(spec.model_copy(update={"degradations": list(FAKE_DEGRADATIONS)}))[0])
            assert fake.q_ocl < clean.q_ocl, spec.seed
            assert fake.q_e < clean.q_e, spec.seed
            assert fake.q_std < clean.q_std, spec.seed
            assert fake.q_lcs1 > clean.q_lcs1, spec.seed
