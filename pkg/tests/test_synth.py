"""Tests for the synthetic-city generator and its pipeline-level oracles."""

import numpy as np
import pytest

from urbanbench.align import coverage
from urbanbench.core import Rect, ValidationError
from urbanbench.heads import HeadConfig
from urbanbench.synth import (
    SynthConfig,
    align_synth,
    generate_field,
    lag1_autocorr,
    leakage_experiment,
    synth_city,
)

EXTENT32 = Rect(-0.1, -0.1, 0.1, 0.1)
CELL32 = 0.2 / 32  # one cell in extent units

LINEAR_HEAD = HeadConfig(kind="linear", output="scalar", n_out=1,
                         batch_size=128, max_epochs=150, patience=10)


class TestGenerateField:
    def test_deterministic(self):
        a = generate_field(EXTENT32, 32, 0.01, seed=5)
        b = generate_field(EXTENT32, 32, 0.01, seed=5)
        np.testing.assert_array_equal(a, b)

    def test_standardized(self):
        f = generate_field(EXTENT32, 32, 0.02, seed=1)
        assert abs(f.mean()) < 1e-12
        assert abs(f.std() - 1.0) < 1e-12

    def test_small_scale_is_white(self):
        # kernel width below one cell: lag-1 autocorrelation ~ 0 over 10 seeds
        acs = [lag1_autocorr(generate_field(EXTENT32, 32, CELL32 * 0.2, seed=s))
               for s in range(10)]
        assert abs(float(np.mean(acs))) < 0.05

    def test_half_grid_scale_is_smooth(self):
        f = generate_field(EXTENT32, 32, CELL32 * 16, seed=0)
        assert lag1_autocorr(f) > 0.9

    def test_autocorr_monotone_in_scale(self):
        for seed in range(3):
            acs = [lag1_autocorr(generate_field(EXTENT32, 32, CELL32 * c, seed=seed))
                   for c in (1, 4, 16)]
            assert acs[0] < acs[1] < acs[2]

    def test_too_small_grid(self):
        with pytest.raises(ValidationError):
            generate_field(EXTENT32, 4, 0.01, seed=0)


class TestSynthCity:
    def test_deterministic(self):
        cfg = SynthConfig(n=16, seed=3)
        t1, r1 = synth_city(cfg)
        t2, r2 = synth_city(cfg)
        np.testing.assert_array_equal(t1.labels, t2.labels)
        np.testing.assert_array_equal(r1.support.values, r2.support.values)

    def test_units_at_cell_centers(self):
        cfg = SynthConfig(n=8, extent=Rect(0.0, 0.0, 0.8, 0.8))
        task, _ = synth_city(cfg)
        assert task.n == 64
        u = task.units[0]
        assert u.geometry_kind == "raster_cell"
        assert u.lon == pytest.approx(0.05)
        assert u.cell_extent.contains(u.lon, u.lat)

    def test_scalar_labels_equal_field(self):
        cfg = SynthConfig(n=16, seed=7, label_kind="scalar", embedding_kind="field_value")
        task, rep = synth_city(cfg)
        m = align_synth(task, rep)
        # embedding replicates the label across dim (up to float32 storage)
        np.testing.assert_allclose(m.rows[:, 0], task.labels, atol=1e-6)

    def test_quantile_binning_balanced(self):
        cfg = SynthConfig(n=32, seed=2, label_kind="class", n_classes=4)
        task, _ = synth_city(cfg)
        freqs = np.bincount(task.labels, minlength=4) / task.n
        np.testing.assert_allclose(freqs, 0.25, atol=0.02)

    def test_distribution_labels_sum_to_one(self):
        cfg = SynthConfig(n=16, seed=2, label_kind="distribution", n_classes=5)
        task, _ = synth_city(cfg)
        assert task.labels.shape == (256, 5)
        np.testing.assert_allclose(task.labels.sum(axis=1), 1.0, atol=1e-12)

    def test_sparse_entities_density(self):
        cfg = SynthConfig(n=32, seed=4, embedding_kind="sparse_entities", density=0.2)
        _, rep = synth_city(cfg)
        assert 0.1 < rep.support.n / 1024 < 0.3

    def test_coordinate_pe_dim(self):
        cfg = SynthConfig(n=8, embedding_kind="coordinate_pe")
        _, rep = synth_city(cfg)
        assert rep.dim == 192


class TestSparseCoverage:
    def test_h3_first_improves_coverage(self):
        cfg = SynthConfig(n=40, extent=Rect(-0.05, -0.05, 0.05, 0.05), length_scale=0.025,
                          noise_sd=1.0, embedding_kind="sparse_entities", density=0.05, seed=3)
        task, rep = synth_city(cfg)
        cov_h3 = coverage(align_synth(task, rep, "h3_first"))
        cov_direct = coverage(align_synth(task, rep, "direct"))
        assert cov_h3 > cov_direct


class TestLeakage:
    def test_fully_informative_control(self):
        cfg = SynthConfig(n=40, extent=Rect(-0.1, -0.1, 0.1, 0.1), length_scale=0.05,
                          label_kind="scalar", embedding_kind="field_value", seed=3)
        res = leakage_experiment(cfg, LINEAR_HEAD, seeds=(42, 24))
        assert min(res.spatial_r2) > 0.95
        assert min(res.random_r2) > 0.95
        assert abs(res.mean_delta) < 0.05

    def test_pe_on_autocorrelated_field_leaks(self):
        cfg = SynthConfig(n=40, extent=Rect(-0.1, -0.1, 0.1, 0.1), length_scale=0.05,
                          label_kind="scalar", embedding_kind="coordinate_pe", seed=3)
        res = leakage_experiment(cfg, LINEAR_HEAD, seeds=(42, 24))
        assert res.mean_delta > 0

    def test_white_field_no_leak(self):
        cfg = SynthConfig(n=40, extent=Rect(-0.1, -0.1, 0.1, 0.1), length_scale=0.002,
                          label_kind="scalar", embedding_kind="coordinate_pe", seed=3)
        res = leakage_experiment(cfg, LINEAR_HEAD, seeds=(42, 24))
        assert abs(res.mean_delta) < 0.05

    def test_delta_monotone_in_length_scale(self):
        # pinned configuration: n=32, 5x5 blocks, synth seed 0; under 10x10
        # blocks the relationship is an inverted U (spatial splits become
        # learnable at large scales), so the property is tested here, not
        # claimed universally
        deltas = []
        for cells in (1.0, 4.0, 8.0):  # n/32, n/8, n/4
            cfg = SynthConfig(n=32, extent=EXTENT32, length_scale=CELL32 * cells,
                              label_kind="scalar", embedding_kind="coordinate_pe", seed=0)
            res = leakage_experiment(cfg, LINEAR_HEAD, seeds=(42, 24, 7, 0, 100), nx=5, ny=5)
            deltas.append(res.mean_delta)
        assert deltas[0] <= deltas[1] <= deltas[2]

    def test_rejects_class_labels(self):
        cfg = SynthConfig(n=16, label_kind="class", embedding_kind="coordinate_pe")
        with pytest.raises(ValidationError):
            leakage_experiment(cfg, LINEAR_HEAD, seeds=(42,))
