"""Truth generation, matrix powers, error norms, and the study runner."""

import numpy as np
import pytest

from ipriorkit.error_models import AR1, IID, covariance_matrix
from ipriorkit.kernels import FbmKernel, center_kernel, gram
from ipriorkit.simulation import (
    StudyConfig,
    gen_truth,
    mae,
    matrix_power,
    run_study,
    write_study_csv,
)


def _bm_gram(n, seed=0):
    rng = np.random.default_rng(seed)
    X = np.sort(rng.uniform(0, 1, n))
    kern = center_kernel(FbmKernel(hurst=0.5), X)
    return gram(kern, X).values


class TestMatrixPower:
    def test_power_one_is_identity_map(self):
        H = _bm_gram(8)
        np.testing.assert_array_equal(matrix_power(H, 1.0), H)

    def test_half_power_squares_back(self):
        H = _bm_gram(10)
        root = matrix_power(H, 0.5)
        np.testing.assert_allclose(root @ root, H, atol=1e-8 * np.abs(H).max())

    def test_diagonal_scalar_powers(self):
        H = np.diag([4.0, 9.0])
        np.testing.assert_allclose(matrix_power(H, 0.5), np.diag([2.0, 3.0]), atol=1e-12)

    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError, match="symmetric"):
            matrix_power(np.array([[1.0, 2.0], [0.0, 1.0]]), 0.5)

    def test_result_symmetric_psd(self):
        H = _bm_gram(12)
        P = matrix_power(H, 0.75)
        np.testing.assert_allclose(P, P.T, atol=1e-12)
        assert np.linalg.eigvalsh(P)[0] >= -1e-12


class TestGenTruth:
    @pytest.mark.parametrize("kind", ["rough", "iprior"])
    def test_centered_and_unit_norm(self, kind):
        H = _bm_gram(30)
        rng = np.random.default_rng(1)
        f = gen_truth(kind, H, rng)
        assert abs(np.sum(f)) <= 1e-8 * len(f)
        w, V = np.linalg.eigh(H)
        cut = 1e-10 * w[-1]
        inv = np.where(w > cut, 1.0 / np.where(w > cut, w, 1.0), 0.0)
        nrm2 = float(f @ (V @ (inv * (V.T @ f))))
        assert abs(np.sqrt(nrm2) - 1.0) <= 1e-6

    def test_iprior_path_norm_identity(self):
        # f = Hw implies f' H^+ f = w' H w (range component), scaled to one
        H = _bm_gram(20)
        rng = np.random.default_rng(2)
        w = rng.standard_normal(20)
        f = H @ w
        f = f - f.mean()
        wHw = float(w @ H @ w)
        Hp = np.linalg.pinv(H, rcond=1e-10)
        assert float(f @ Hp @ f) == pytest.approx(wHw, rel=1e-8)

    def test_fixed_seed_reproducible(self):
        H = _bm_gram(15)
        a = gen_truth("rough", H, np.random.default_rng(42))
        b = gen_truth("rough", H, np.random.default_rng(42))
        np.testing.assert_array_equal(a, b)

    def test_se_requires_path_factor(self):
        H = _bm_gram(10)
        with pytest.raises(ValueError, match="factor"):
            gen_truth("se", H, np.random.default_rng(0))


class TestMae:
    def test_perfect_fit_is_zero(self):
        H = _bm_gram(6)
        assert mae([np.zeros(6), np.zeros(6)], "l2", H, IID()) == 0.0

    def test_single_replicate_is_its_norm(self):
        H = _bm_gram(4)
        d = np.array([1.0, -1.0, 0.5, 0.0])
        assert mae([d], "l2", H, IID()) == pytest.approx(float(np.sqrt(np.mean(d**2))))

    def test_l2_hand_value(self):
        # delta = (3, 4), n = 2: sqrt((9 + 16)/2) = sqrt(12.5)
        H = np.eye(2)
        assert mae([np.array([3.0, 4.0])], "l2", H, IID()) == pytest.approx(np.sqrt(12.5))

    def test_fn_norm_uses_error_model(self):
        H = _bm_gram(8)
        rng = np.random.default_rng(3)
        d = H @ rng.standard_normal(8)  # in the span, exact weights exist
        v1 = mae([d], "fn", H, IID(precision=1.0))
        v4 = mae([d], "fn", H, IID(precision=4.0))
        # precision psi scales the squared norm by 1/psi
        assert v4 == pytest.approx(v1 / 2.0, rel=1e-8)

    def test_median_across_replicates(self):
        H = np.eye(3)
        ds = [np.full(3, c) for c in (1.0, 2.0, 10.0)]
        assert mae(ds, "l2", H, IID()) == pytest.approx(2.0)

    def test_unknown_norm_rejected(self):
        with pytest.raises(ValueError, match="norm"):
            mae([np.zeros(3)], "sup", np.eye(3), IID())


class TestRunStudy:
    def test_smoke_single_replicate(self):
        cfg = StudyConfig(n=10, truths=("rough", "iprior", "se"), sds=(0.1,),
                          replicates=1, master_seed=3,
                          estimators=("iprior", "tikhonov", "se"))
        res = run_study(cfg)
        # one row per (truth, sd, estimator, norm)
        assert len(res.rows) == 3 * 1 * 3 * 3
        for r in res.rows:
            assert r["mae"] >= 0.0
            assert r["baseline"] >= 0.0

    def test_baseline_identical_across_estimators(self):
        cfg = StudyConfig(n=12, truths=("iprior",), sds=(0.1, 0.5), replicates=2,
                          master_seed=1, estimators=("iprior", "tikhonov"))
        res = run_study(cfg)
        by_key = {}
        for r in res.rows:
            by_key.setdefault((r["sd"], r["norm"]), set()).add(r["baseline"])
        assert all(len(v) == 1 for v in by_key.values())

    def test_baseline_monotone_in_sd(self):
        cfg = StudyConfig(n=12, truths=("rough",), sds=(0.05, 0.2, 0.8), replicates=3,
                          master_seed=5, estimators=("iprior",))
        res = run_study(cfg)
        for norm in ("l2", "fn", "f"):
            base = [r["baseline"] for r in res.rows if r["norm"] == norm]
            assert all(a <= b + 1e-12 for a, b in zip(base, base[1:]))

    def test_thread_count_does_not_change_results(self):
        cfg = StudyConfig(n=10, truths=("rough", "iprior"), sds=(0.1, 0.5),
                          replicates=2, master_seed=7, estimators=("iprior",))
        r1 = run_study(cfg, threads=1)
        r4 = run_study(cfg, threads=4)
        assert r1.rows == r4.rows

    def test_csv_bytes_reproducible(self, tmp_path):
        cfg = StudyConfig(n=10, truths=("iprior",), sds=(0.1,), replicates=1,
                          master_seed=7, estimators=("iprior",))
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_study_csv(run_study(cfg), p1)
        write_study_csv(run_study(cfg, threads=3), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_config_validation(self):
        with pytest.raises(ValueError, match="replicate"):
            StudyConfig(replicates=0)
        with pytest.raises(ValueError, match="positive"):
            StudyConfig(sds=(0.1, -0.2))
        with pytest.raises(ValueError, match="truth"):
            StudyConfig(truths=("spline",))
        with pytest.raises(ValueError, match="estimator"):
            StudyConfig(estimators=("loess",))
