"""Tests for the collapse instruments."""

import math

import numpy as np
import pytest
import torch

from src.core.errors import DegenerateInputError, ShapeError
from src.models.diagnostics import Centering
from src.models.encoder import EncoderConfig
from src.models.mask import BinaryMask, MaskKind
from src.models.volume import MultiModalVolume
from src.network.model import EmimModel
from src.services.diagnostics import (
    build_mask_graph,
    collapse_report,
    effective_rank,
    enumerate_random_masks,
    estimate_masked_variance,
    exhaustive_masked_variance,
    singular_spectrum,
    trivial_solution_score,
)
from src.services.masking import RandomMaskGenerator, apply_mask
from src.services.volume import partition


def _mask(bits) -> BinaryMask:
    bits = np.asarray(bits, dtype=bool)
    return BinaryMask(bits=bits, mask_ratio=float(bits.mean()), phase_log=bits.astype(np.int8) * 4)


class TestMaskedVariance:
    def test_monte_carlo_matches_exhaustive(self, oracle_dataset):
        exact = exhaustive_masked_variance(
            oracle_dataset, enumerate_random_masks(6, 2, 3), (2, 2, 2)
        )
        estimate = estimate_masked_variance(
            oracle_dataset,
            RandomMaskGenerator(ratio=0.5),
            (2, 2, 2),
            20_000,
            np.random.default_rng(0),
        )
        assert estimate.num_draws == 20_000
        assert abs(estimate.mean_var - exact) <= max(0.01 * exact, 3 * estimate.std_error)

    def test_mask_unit_centering_matches_exhaustive(self, oracle_dataset):
        exact = exhaustive_masked_variance(
            oracle_dataset,
            enumerate_random_masks(6, 2, 3),
            (2, 2, 2),
            centering=Centering.MASK_UNIT,
        )
        estimate = estimate_masked_variance(
            oracle_dataset,
            RandomMaskGenerator(ratio=0.5),
            (2, 2, 2),
            20_000,
            np.random.default_rng(1),
            centering=Centering.MASK_UNIT,
        )
        assert abs(estimate.mean_var - exact) <= max(0.01 * exact, 3 * estimate.std_error)

    def test_constant_dataset_has_zero_variance(self):
        volumes = [MultiModalVolume(data=np.full((2, 4, 4, 4), 0.3)) for _ in range(4)]
        estimate = estimate_masked_variance(
            volumes, RandomMaskGenerator(ratio=0.5), (2, 2, 2), 500, np.random.default_rng(0)
        )
        assert estimate.mean_var == 0.0

    def test_binary_volumes_have_quarter_variance(self):
        volumes = [
            MultiModalVolume(data=np.full((2, 4, 4, 4), float(i % 2))) for i in range(4)
        ]
        estimate = estimate_masked_variance(
            volumes, RandomMaskGenerator(ratio=0.5), (2, 2, 2), 500, np.random.default_rng(0)
        )
        assert estimate.mean_var == pytest.approx(0.25)

    def test_all_empty_draws_are_degenerate(self, oracle_dataset):
        # round(0.05 * 6) = 0 positions per mask
        with pytest.raises(DegenerateInputError):
            estimate_masked_variance(
                oracle_dataset,
                RandomMaskGenerator(ratio=0.05),
                (2, 2, 2),
                100,
                np.random.default_rng(0),
            )

    def test_independent_of_worker_count(self, oracle_dataset, monkeypatch):
        from src.core.config import get_settings

        results = []
        for threads in ("1", "3"):
            monkeypatch.setenv("EMIM_THREADS", threads)
            monkeypatch.setenv("EMIM_MC_CHUNK_SIZE", "64")
            get_settings.cache_clear()
            results.append(
                estimate_masked_variance(
                    oracle_dataset,
                    RandomMaskGenerator(ratio=0.5),
                    (2, 2, 2),
                    1000,
                    np.random.default_rng(4),
                )
            )
        assert results[0] == results[1]

    def test_rejects_zero_draws(self, oracle_dataset):
        with pytest.raises(ShapeError):
            estimate_masked_variance(
                oracle_dataset, RandomMaskGenerator(ratio=0.5), (2, 2, 2), 0,
                np.random.default_rng(0),
            )

    def test_enumerates_every_subset(self):
        masks = enumerate_random_masks(6, 2, 3)
        assert len(masks) == math.comb(6, 3)
        assert len({m.tobytes() for m in masks}) == len(masks)


class TestTrivialSolutionScore:
    def _inputs(self):
        rng = np.random.default_rng(0)
        return [rng.uniform(size=(2, 4, 4, 4)) for _ in range(3)]

    def test_constant_outputs_score_one(self):
        inputs = self._inputs()
        outputs = [np.full((2, 4, 4, 4), 0.5)] * 3
        assert trivial_solution_score(outputs, inputs).score == 1.0

    def test_identity_scores_zero(self):
        inputs = self._inputs()
        assert trivial_solution_score(inputs, inputs).score == pytest.approx(0.0)

    def test_half_scaled_outputs(self):
        inputs = self._inputs()
        outputs = [0.5 * x for x in inputs]
        assert trivial_solution_score(outputs, inputs).score == pytest.approx(0.75)

    def test_amplified_outputs_clamp_to_zero(self):
        inputs = self._inputs()
        outputs = [3.0 * x for x in inputs]
        assert trivial_solution_score(outputs, inputs).score == 0.0

    def test_region_restricts_voxels(self):
        inputs = self._inputs()
        region = np.zeros((2, 4, 4, 4), dtype=bool)
        region[0] = True
        outputs = [x.copy() for x in inputs]
        for out in outputs:
            out[1] = 0.5
        assert trivial_solution_score(outputs, inputs, region=region).score == pytest.approx(0.0)

    def test_target_correlation_for_mean_field(self):
        inputs = self._inputs()
        mean = np.mean(inputs, axis=0)
        result = trivial_solution_score([mean] * 3, inputs, mean_target=mean)
        assert result.target_correlation == pytest.approx(1.0)

    def test_single_input_is_degenerate(self):
        with pytest.raises(DegenerateInputError):
            trivial_solution_score([np.zeros(3)], [np.zeros(3)])

    def test_constant_inputs_are_degenerate(self):
        inputs = [np.full(4, 0.2)] * 3
        with pytest.raises(DegenerateInputError):
            trivial_solution_score(inputs, inputs)

    def test_rounding_residue_counts_as_zero_variance(self):
        # 0.2 is not exactly representable, so the stacked variance is not exactly 0
        outputs = [np.zeros(4)] * 3
        inputs = [np.full(4, 0.2)] * 3
        with pytest.raises(DegenerateInputError):
            trivial_solution_score(outputs, inputs)

    def test_small_but_real_variance_is_scored(self):
        inputs = [np.full(4, 0.5), np.full(4, 0.5 + 1e-3), np.full(4, 0.5 - 1e-3)]
        outputs = [np.full(4, 0.5)] * 3
        assert trivial_solution_score(outputs, inputs).score == 1.0

    def test_empty_region_is_degenerate(self):
        inputs = self._inputs()
        with pytest.raises(DegenerateInputError):
            trivial_solution_score(inputs, inputs, region=np.zeros((2, 4, 4, 4), dtype=bool))


class TestSpectrum:
    def test_orthogonal_columns(self):
        matrix = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 2.0], [0.0, -2.0]])
        np.testing.assert_allclose(singular_spectrum(matrix), [math.sqrt(8), math.sqrt(2)])

    def test_column_means_are_removed(self):
        matrix = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 2.0], [0.0, -2.0]])
        np.testing.assert_allclose(singular_spectrum(matrix + 5.0), singular_spectrum(matrix))

    def test_row_permutation_invariance(self):
        rng = np.random.default_rng(0)
        matrix = rng.normal(size=(12, 5))
        np.testing.assert_allclose(
            singular_spectrum(matrix[rng.permutation(12)]), singular_spectrum(matrix)
        )

    def test_rank_one(self):
        u = np.array([1.0, -1.0, 2.0, -2.0])
        v = np.array([3.0, 4.0, 0.0])
        sigma = singular_spectrum(np.outer(u, v))
        assert sigma[0] == pytest.approx(np.linalg.norm(u) * 5.0)
        assert np.all(sigma[1:] < 1e-12)
        assert effective_rank(sigma) == pytest.approx(1.0, abs=1e-6)

    def test_rejects_non_finite(self):
        with pytest.raises(DegenerateInputError):
            singular_spectrum(np.array([[np.inf, 1.0], [0.0, 1.0]]))


class TestEffectiveRank:
    @pytest.mark.parametrize(
        "sigma, expected",
        [
            ([1.0, 1.0, 1.0, 1.0], 4.0),
            ([5.0, 0.0, 0.0], 1.0),
            ([1.0, 1.0, 0.0], 2.0),
            ([2.0, 0.0, 0.0], 1.0),
            ([1.0, 1.0], 2.0),
        ],
    )
    def test_known_spectra(self, sigma, expected):
        assert effective_rank(sigma) == pytest.approx(expected, abs=1e-12)

    def test_scale_invariance(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            sigma = np.sort(rng.uniform(size=int(rng.integers(1, 20))))[::-1]
            scale = float(rng.uniform(1e-3, 1e3))
            assert effective_rank(sigma * scale) == pytest.approx(
                effective_rank(sigma), rel=1e-12
            )

    def test_random_features_are_near_full_rank(self):
        # probe_size * n rows of d-dim features, as the collapse report sees them
        features = np.random.default_rng(0).normal(size=(8 * 64, 64))
        assert effective_rank(singular_spectrum(features)) >= 0.9 * 64

    def test_bounds(self):
        sigma = np.random.default_rng(0).uniform(size=6)
        assert 1.0 <= effective_rank(sigma) <= 6.0

    def test_all_zero_is_degenerate(self):
        with pytest.raises(DegenerateInputError):
            effective_rank([0.0, 0.0])


class TestMaskGraph:
    def _grid(self):
        rng = np.random.default_rng(0)
        volume = MultiModalVolume(data=rng.uniform(size=(1, 4, 2, 2)))
        return partition(volume, (1, 2, 2))  # C=1, n=4

    def test_self_pair_is_positive(self):
        grid = self._grid()
        view = apply_mask(grid, _mask([[True, False, False, False]]))
        graph = build_mask_graph([view, view])
        assert graph.weight(0, 0) == pytest.approx(0.75 * 0.25)
        assert graph.weight(0, 1) > 0

    def test_disjoint_masks_have_zero_weight(self):
        grid = self._grid()
        first = apply_mask(grid, _mask([[True, True, False, False]]))
        second = apply_mask(grid, _mask([[False, False, True, True]]))
        assert build_mask_graph([first, second]).weight(0, 1) == 0.0

    def test_different_content_shares_nothing(self):
        grid = self._grid()
        other = grid.model_copy(update={"blocks": grid.blocks + 1.0})
        mask = _mask([[True, False, True, False]])
        graph = build_mask_graph([apply_mask(grid, mask), apply_mask(other, mask)])
        assert graph.weight(0, 1) == 0.0

    def test_weights_match_brute_force(self):
        grid = self._grid()
        rng = np.random.default_rng(3)
        bit_sets = [rng.random((1, 4)) < 0.5 for _ in range(3)]
        graph = build_mask_graph([apply_mask(grid, _mask(bits)) for bits in bit_sets])
        for i, a in enumerate(bit_sets):
            for j, b in enumerate(bit_sets):
                expected = ((~a & ~b).sum() / 4) * ((a & b).sum() / 4)
                assert graph.weight(i, j) == pytest.approx(expected)

    def test_labels(self):
        grid = self._grid()
        view = apply_mask(grid, _mask([[True, False, False, False]]))
        assert build_mask_graph([view, view]).nodes == ["view_0", "view_1"]
        with pytest.raises(ShapeError):
            build_mask_graph([view, view], labels=["only"])

    def test_needs_two_samples(self):
        grid = self._grid()
        with pytest.raises(ShapeError):
            build_mask_graph([apply_mask(grid, _mask([[True, False, False, False]]))])


class TestCollapseReport:
    def _report(self, model, dataset, probe_size=4):
        return collapse_report(
            model,
            dataset,
            RandomMaskGenerator(ratio=0.5),
            probe_size,
            np.random.default_rng(0),
            num_draws=200,
        )

    def test_shape_contract(self, small_encoder_config, small_dataset):
        report = self._report(EmimModel(small_encoder_config), small_dataset)
        assert len(report.singular_values) == small_encoder_config.embed_dim
        assert report.singular_values == sorted(report.singular_values, reverse=True)
        assert 1.0 <= report.effective_rank <= small_encoder_config.embed_dim
        assert 0.0 <= report.trivial_score <= 1.0
        assert len(report.probes) == 4
        assert report.mean_target.shape == (2, 8, 8, 8)
        assert report.feature_level == 2

    def test_constant_model_is_trivial(self, small_encoder_config, small_dataset):
        model = EmimModel(small_encoder_config)
        with torch.no_grad():
            model.head.weight.zero_()
        assert self._report(model, small_dataset).trivial_score == 1.0

    def test_fresh_model_is_not_rank_collapsed(self, small_encoder_config, small_dataset):
        report = self._report(EmimModel(small_encoder_config), small_dataset)
        assert report.effective_rank > 1.5

    def test_fresh_default_encoder_rank_on_noise(self):
        # d=64, n=64; a fresh encoder measures about 52 here, 0.82 of min(n, d)
        config = EncoderConfig(
            num_modalities=4,
            volume_dims=(16, 16, 16),
            patch_size=(4, 4, 4),
            depth=4,
            embed_dim=64,
            num_heads=4,
            mlp_ratio=2.0,
            seed=0,
        )
        rng = np.random.default_rng(0)
        noise = [MultiModalVolume(data=rng.uniform(size=(4, 16, 16, 16))) for _ in range(8)]
        report = self._report(EmimModel(config), noise, probe_size=8)
        assert report.effective_rank >= 0.75 * min(config.num_positions, config.embed_dim)

    def test_reuses_given_variance(self, small_encoder_config, small_dataset):
        model = EmimModel(small_encoder_config)
        first = self._report(model, small_dataset)
        second = collapse_report(
            model,
            small_dataset,
            RandomMaskGenerator(ratio=0.5),
            4,
            np.random.default_rng(9),
            variance=first.variance,
        )
        assert second.variance == first.variance

    def test_rejects_probe_size_one(self, small_encoder_config, small_dataset):
        with pytest.raises(ShapeError):
            self._report(EmimModel(small_encoder_config), small_dataset, probe_size=1)

    def test_mask_kind_recorded(self, small_encoder_config, small_dataset):
        report = self._report(EmimModel(small_encoder_config), small_dataset)
        assert report.variance.mask_kind is MaskKind.RANDOM
