import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nmvsde import fbm, fbm_stats
from nmvsde.fbm import (
    EmbeddingError,
    FgnBatch,
    PathBatch,
    TimeGrid,
    coarsen,
    covariance,
    fgn_autocovariance,
    sample_fgn,
    scale_and_cumulate,
)

from oracles import fbm_cov_scalar


class TestCovariance:
    @pytest.mark.parametrize("H", [0.1, 0.5, 0.8, 0.95])
    def test_diagonal(self, H):
        assert covariance(1.0, 1.0, H) == 1.0
        assert covariance(2.5, 2.5, H) == pytest.approx(2.5 ** (2 * H), rel=1e-15)

    def test_brownian_is_min(self):
        assert covariance(1.0, 2.0, 0.5) == pytest.approx(1.0, abs=1e-15)
        s = np.linspace(0, 3, 7)
        assert np.allclose(covariance(s[:, None], s[None, :], 0.5), np.minimum.outer(s, s), atol=1e-15)

    def test_frozen_value(self):
        # 2^{0.6}, also checked against the scalar oracle
        assert covariance(1.0, 2.0, 0.8) == pytest.approx(1.515716566510398, abs=1e-14)
        assert fbm_cov_scalar(1.0, 2.0, 0.8) == pytest.approx(1.515716566510398, abs=1e-14)

    @given(
        st.floats(0, 10, allow_nan=False),
        st.floats(0, 10, allow_nan=False),
        st.floats(0.01, 0.99),
    )
    def test_symmetric_and_matches_oracle(self, s, t, H):
        assert covariance(s, t, H) == covariance(t, s, H)
        assert covariance(s, t, H) == pytest.approx(fbm_cov_scalar(s, t, H), rel=1e-12, abs=1e-12)

    def test_negative_time_rejected(self):
        with pytest.raises(ValueError):
            covariance(-1.0, 1.0, 0.7)

    @pytest.mark.parametrize("H", [0.0, 1.0, -0.2, 1.3])
    def test_hurst_range(self, H):
        with pytest.raises(ValueError):
            covariance(1.0, 1.0, H)


class TestAutocovariance:
    @pytest.mark.parametrize("H", [0.3, 0.5, 0.8])
    def test_lag_zero(self, H):
        assert fgn_autocovariance(0, H) == pytest.approx(1.0, abs=1e-15)

    def test_brownian_white(self):
        assert np.allclose(fgn_autocovariance(np.arange(1, 20), 0.5), 0.0, atol=1e-15)

    def test_frozen_lag_one(self):
        # E[B_1 (B_2 - B_1)] = R(1, 2) - R(1, 1)
        expected = fbm_cov_scalar(1, 2, 0.8) - fbm_cov_scalar(1, 1, 0.8)
        assert expected == pytest.approx(0.515716566510398, abs=1e-14)
        assert fgn_autocovariance(1, 0.8) == pytest.approx(expected, abs=1e-14)

    def test_negative_lag(self):
        with pytest.raises(ValueError):
            fgn_autocovariance(-1, 0.7)


class TestTimeGrid:
    def test_from_horizon(self):
        g = TimeGrid.from_horizon(1.0, 0.25, 64)
        assert g.step == 1 / 64 and g.delay_steps == 16
        assert g.step * g.delay_steps == 0.25
        assert g.horizon == 1.0

    def test_misaligned_delay(self):
        with pytest.raises(ValueError):
            TimeGrid.from_horizon(1.0, 0.3, 64)

    def test_coarsen_requires_divisor(self):
        g = TimeGrid(1 / 64, 64, 64)
        assert g.coarsen(4) == TimeGrid(1 / 16, 16, 16)
        with pytest.raises(ValueError):
            g.coarsen(3)

    @pytest.mark.parametrize("kwargs", [dict(step=0, n_steps=4, delay_steps=1), dict(step=1, n_steps=0, delay_steps=1)])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            TimeGrid(**kwargs)


class TestSampling:
    @pytest.mark.parametrize("method", ["circulant", "cholesky"])
    def test_rows_independent_of_batch_layout(self, method):
        full = sample_fgn(0.8, 32, 12, seed=9, method=method).increments
        part = sample_fgn(0.8, 32, 5, seed=9, method=method, first_path=7).increments
        single = sample_fgn(0.8, 32, 1, seed=9, method=method, first_path=3).increments
        assert np.array_equal(full[7:], part)
        assert np.array_equal(full[3], single[0])

    def test_streams_differ(self):
        a = sample_fgn(0.7, 16, 3, seed=1).increments
        b = sample_fgn(0.7, 16, 3, seed=1, stream=1).increments
        c = sample_fgn(0.7, 16, 3, seed=2).increments
        assert not np.array_equal(a, b) and not np.array_equal(a, c)

    def test_lineage(self):
        batch = sample_fgn(0.7, 8, 2, seed=5, method="cholesky", stream=3)
        assert batch.seed_lineage == {"seed": 5, "method": "cholesky", "stream": 3, "first_path": 0}

    @pytest.mark.parametrize("kwargs", [dict(n_steps=0, n_paths=1), dict(n_steps=4, n_paths=0)])
    def test_bad_sizes(self, kwargs):
        with pytest.raises(ValueError):
            sample_fgn(0.7, seed=0, **kwargs)

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            sample_fgn(0.7, 8, 2, 0, method="wavelet")

    def test_lag_one_autocovariance_h08(self):
        incr = sample_fgn(0.8, 64, 10_000, seed=11).increments
        prods = (incr[:, :-1] * incr[:, 1:]).mean(axis=1)
        est, se = prods.mean(), prods.std(ddof=1) / np.sqrt(len(prods))
        assert abs(est - 0.515716566510398) <= 4 * se

    def test_brownian_lag_one_uncorrelated(self):
        incr = sample_fgn(0.5, 64, 5_000, seed=12).increments
        prods = (incr[:, :-1] * incr[:, 1:]).mean(axis=1)
        assert abs(prods.mean()) <= 3 * prods.std(ddof=1) / np.sqrt(len(prods))

    def test_broken_embedding_is_reported(self, monkeypatch):
        def bad(lag, H):
            out = np.zeros(np.shape(lag))
            out[...] = -1.0
            out[0] = 1.0
            return out

        fbm._embedding.cache_clear()
        monkeypatch.setattr(fbm, "fgn_autocovariance", bad)
        with pytest.raises(EmbeddingError):
            sample_fgn(0.71234, 8, 1, 0)
        fbm._embedding.cache_clear()

    @pytest.mark.parametrize("H", [0.55, 0.7, 0.8, 0.95])
    def test_spectrum_nonnegative(self, H):
        eig = fbm.circulant_eigenvalues(H, 2**10)
        assert eig.min() >= -1e-10 * eig.max()


class TestScaleAndCoarsen:
    def test_zero_increments(self):
        batch = FgnBatch(np.zeros((3, 4)), 0.7)
        paths = scale_and_cumulate(batch, TimeGrid(0.25, 4, 4))
        assert np.array_equal(paths.values, np.zeros((3, 5)))

    def test_cumulative_sum(self):
        paths = scale_and_cumulate(FgnBatch(np.array([[1.0, -1.0]]), 0.8), TimeGrid(1.0, 2, 1))
        assert np.array_equal(paths.values, [[0.0, 1.0, 0.0]])

    def test_brownian_scaling(self):
        paths = scale_and_cumulate(FgnBatch(np.array([[1.0]]), 0.5), TimeGrid(0.25, 1, 1))
        assert paths.values[0, 1] == 0.5

    def test_grid_mismatch(self):
        with pytest.raises(ValueError):
            scale_and_cumulate(FgnBatch(np.zeros((1, 3)), 0.7), TimeGrid(0.25, 4, 4))

    def test_increments_reproduced(self):
        batch = sample_fgn(0.8, 64, 20, seed=2)
        grid = TimeGrid(1 / 64, 64, 64)
        paths = scale_and_cumulate(batch, grid)
        assert np.all(paths.values[:, 0] == 0.0)
        scaled = grid.step**0.8 * batch.increments
        assert np.allclose(paths.increments(), scaled, rtol=0, atol=1e-14)

    def test_coarsen_identity(self):
        paths = fbm.sample_fbm(0.7, TimeGrid(1 / 8, 8, 8), 3, seed=0)
        same = coarsen(paths, 1)
        assert np.array_equal(same.values, paths.values) and same.grid == paths.grid

    def test_coarsen_subsample(self):
        paths = PathBatch(np.array([[0.0, 1.0, 0.0, 2.0, 4.0]]), TimeGrid(0.25, 4, 4), 0.7)
        out = coarsen(paths, 2)
        assert np.array_equal(out.values, [[0.0, 0.0, 4.0]])
        assert out.grid.step == 0.5

    def test_coarsen_composes(self):
        paths = fbm.sample_fbm(0.7, TimeGrid(1 / 64, 64, 64), 4, seed=3)
        assert np.array_equal(coarsen(coarsen(paths, 2), 2).values, coarsen(paths, 4).values)

    def test_coarsen_non_divisor(self):
        paths = fbm.sample_fbm(0.7, TimeGrid(1 / 6, 6, 6), 1, seed=0)
        with pytest.raises(ValueError):
            coarsen(paths, 4)


class TestDump:
    def test_roundtrip(self, tmp_path):
        grid = TimeGrid(1 / 16, 16, 16)
        paths = fbm.sample_fbm(0.8, grid, 5, seed=42)
        target = tmp_path / "p.fbmp"
        fbm.write_paths(target, paths, seed=42)
        raw = target.read_bytes()
        assert raw[:4] == b"FBMP"
        assert len(raw) == 4 + 4 + 8 + 8 + 8 + 8 + 8 + 8 * 5 * 17
        back, seed = fbm.read_paths(target)
        assert seed == 42 and back.hurst == 0.8 and back.grid == grid
        assert np.array_equal(back.values, paths.values)

    def test_bad_magic(self, tmp_path):
        target = tmp_path / "bad.fbmp"
        target.write_bytes(b"NOPE" + bytes(60))
        with pytest.raises(ValueError):
            fbm.read_paths(target)


@pytest.mark.parametrize("H", [0.5, 0.7, 0.8])
@pytest.mark.parametrize("method", ["circulant", "cholesky"])
def test_covariance_reproduction(H, method):
    result = fbm_stats.check_covariance(H, n_paths=10_000, seed=1, method=method)
    assert result.passed, result


@pytest.mark.parametrize("H", [0.5, 0.8])
def test_variance_law(H):
    assert fbm_stats.check_variance_law(H, seed=2).passed


@pytest.mark.parametrize("H", [0.5, 0.7, 0.8])
def test_stationarity(H):
    assert fbm_stats.check_stationarity(H, seed=3).passed


def test_method_equivalence():
    assert fbm_stats.check_method_agreement(0.7, n_steps=64, n_paths=5_000, seed=4).passed


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 40), st.floats(0.05, 0.95))
def test_embedding_valid_for_fgn(n, H):
    eig = fbm.circulant_eigenvalues(H, n)
    assert eig.min() >= -1e-10 * eig.max()
