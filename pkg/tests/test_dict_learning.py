import numpy as np
import pytest

from gprdl.dict_learning import (DictLearnConfig, default_config, init_dictionary, ksvd_train,
                                 objective, odl_train, train)
from gprdl.errors import ConfigurationError, DataError, InputError
from gprdl.gpr_data import ProfileMatrix
from gprdl.sparse_coding import CodingParams, Dictionary, SparseCode, batch_encode

from oracles import greedy_recovery, planted_model

OMP = CodingParams("omp", alpha=1e-6)
LASSO = CodingParams("lars_lasso", lam=0.1)


def norms_ok(atoms):
    return np.all(np.abs(np.linalg.norm(atoms, axis=0) - 1) <= 1e-9)


@pytest.fixture(scope="module")
def small_data():
    rng = np.random.default_rng(0)
    return rng.standard_normal((12, 80))


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(n_atoms=0), dict(iterations=0), dict(init="svd"),
                                    dict(batch_size=0), dict(forget=0.0), dict(forget=1.5)])
    def test_invalid(self, kw):
        with pytest.raises(ConfigurationError):
            DictLearnConfig(**kw)

    def test_defaults(self):
        cfg = default_config("odl")
        assert (cfg.n_atoms, cfg.iterations, cfg.coding.lam) == (512, 40, 0.1)
        assert (cfg.batch_size, cfg.forget) == (1, 1.0)
        assert default_config("ksvd").coding.method == "omp"

    def test_coding_from_dict(self):
        cfg = DictLearnConfig(coding={"method": "lars_lasso", "lam": 0.2})
        assert cfg.coding == CodingParams("lars_lasso", lam=0.2)


class TestInit:
    def test_permutation_when_n_equals_l(self, small_data):
        D = init_dictionary(small_data, 80, "random_columns", seed=1)
        ref = small_data / np.linalg.norm(small_data, axis=0)
        key = lambda a: sorted(map(tuple, np.round(a.T, 12)))
        assert key(D.atoms) == key(ref)

    @pytest.mark.parametrize("strategy", ["random_columns", "random_gaussian"])
    def test_unit_norm_and_repeatable(self, small_data, strategy):
        a = init_dictionary(small_data, 20, strategy, seed=3)
        b = init_dictionary(small_data, 20, strategy, seed=3)
        assert np.all(np.abs(np.linalg.norm(a.atoms, axis=0) - 1) <= 1e-12)
        assert a.atoms.tobytes() == b.atoms.tobytes()

    def test_too_few_columns(self, small_data):
        with pytest.raises(DataError):
            init_dictionary(small_data, 81)

    def test_zero_column_selected(self):
        with pytest.raises(DataError):
            init_dictionary(np.zeros((3, 4)), 4)


class TestObjective:
    def test_exact_codes(self):
        D = Dictionary(np.eye(3))
        Y = np.array([[1.0, 0.0], [0.0, 2.0], [0.0, 0.0]])
        codes = [SparseCode([0], [1.0], 3), SparseCode([1], [2.0], 3)]
        assert objective(D, Y, codes) == 0

    def test_empty_codes(self, small_data):
        D = init_dictionary(small_data, 5)
        codes = [SparseCode.empty(5)] * small_data.shape[1]
        assert objective(D, small_data, codes) == pytest.approx(np.linalg.norm(small_data), rel=1e-15)

    def test_dense_oracle(self, small_data):
        D = init_dictionary(small_data, 30, seed=2)
        codes = batch_encode(D, small_data, CodingParams(alpha=0.5))
        X = np.zeros((30, small_data.shape[1]))
        for i, c in enumerate(codes):
            for j, v in c.entries:
                X[j, i] = v
        R = small_data - D.atoms @ X
        assert abs(objective(D, small_data, codes) - np.sqrt(np.sum(R * R))) <= 1e-12

    def test_mismatch(self, small_data):
        D = init_dictionary(small_data, 5)
        with pytest.raises(InputError):
            objective(D, small_data, [SparseCode.empty(5)])


class TestKsvd:
    def test_rank_one_data(self):
        v = np.arange(1.0, 9.0)
        Y = np.tile(v, (20, 1)).T
        cfg = DictLearnConfig(n_atoms=1, iterations=3, coding=CodingParams(alpha=1e-12, max_nonzeros=1))
        D, rep = ksvd_train(Y, cfg)
        assert abs(D.atoms[:, 0] @ v) / np.linalg.norm(v) >= 1 - 1e-9
        assert rep.objective_trace[-1] <= 1e-9 * np.linalg.norm(Y)

    @pytest.mark.parametrize("seed", range(4))
    def test_trace_monotone_and_norms(self, seed):
        D_true, Y = planted_model(seed, L=400)
        seen = []
        cfg = DictLearnConfig(n_atoms=50, iterations=15, coding=CodingParams(alpha=1e-6, max_nonzeros=3),
                              seed=seed)
        D, rep = ksvd_train(Y, cfg, callback=lambda it, Dm, X: seen.append(norms_ok(Dm)))
        tr = rep.objective_trace
        assert len(tr) == 15
        assert all(b <= a * (1 + 1e-9) for a, b in zip(tr, tr[1:]))
        assert all(seen)
        assert rep.wall_time_coding >= 0 and rep.wall_time_update >= 0

    def test_unused_atoms_replaced(self):
        # 3 clusters coded by one atom each leave at least 3 of 6 Gaussian atoms unused
        rng = np.random.default_rng(1)
        basis = rng.standard_normal((10, 3))
        Y = basis @ np.repeat(np.eye(3), 10, axis=1) + 1e-3 * rng.standard_normal((10, 30))
        cfg = DictLearnConfig(n_atoms=6, iterations=2, init="random_gaussian",
                              coding=CodingParams(alpha=1e-12, max_nonzeros=1))
        D, rep = ksvd_train(Y, cfg)
        assert rep.replaced_atoms >= 1
        assert norms_ok(D.atoms)

    def test_deterministic(self, small_data):
        cfg = DictLearnConfig(n_atoms=20, iterations=3, coding=CodingParams(alpha=1.0), seed=9)
        a, ra = ksvd_train(small_data, cfg)
        b, rb = ksvd_train(small_data, cfg)
        assert a.atoms.tobytes() == b.atoms.tobytes()
        assert ra.objective_trace == rb.objective_trace

    def test_wrong_method(self, small_data):
        with pytest.raises(ConfigurationError):
            ksvd_train(small_data, DictLearnConfig(n_atoms=4, coding=LASSO))

    def test_zero_data(self):
        with pytest.raises(DataError):
            ksvd_train(np.zeros((4, 10)), DictLearnConfig(n_atoms=2, coding=OMP))

    def test_provenance(self, small_data):
        D, _ = ksvd_train(small_data, DictLearnConfig(n_atoms=4, iterations=1, coding=CodingParams(alpha=1.0)))
        assert D.provenance["method"] == "ksvd"


class CountingProfiles(ProfileMatrix):
    def column(self, i):
        object.__setattr__(self, "calls", getattr(self, "calls", 0) + 1)
        return super().column(i)


class TestOdl:
    def test_rank_one_data(self):
        rng = np.random.default_rng(3)
        v = rng.standard_normal(10)
        Y = np.tile(v, (20, 1)).T
        cfg = DictLearnConfig(n_atoms=1, iterations=5, init="random_gaussian",
                              coding=CodingParams("lars_lasso", lam=0.01))
        D, _ = odl_train(Y, cfg)
        assert abs(D.atoms[:, 0] @ v) / np.linalg.norm(v) >= 1 - 1e-3

    def test_unused_atoms_stay_put(self, small_data):
        # lam above every correlation: all codes empty, A stays zero, no atom moves
        cfg = DictLearnConfig(n_atoms=5, iterations=2, coding=CodingParams("lars_lasso", lam=1e3), seed=4)
        D, rep = odl_train(small_data, cfg)
        assert D.atoms.tobytes() == init_dictionary(small_data, 5, seed=4).atoms.tobytes()
        assert rep.dictionary_updates == 160

    def test_guard_skips_only_empty_rows(self):
        from gprdl.dict_learning import _bcd_sweep
        rng = np.random.default_rng(2)
        Dt = rng.standard_normal((3, 4))
        Dt /= np.linalg.norm(Dt, axis=1)[:, None]
        before = Dt.copy()
        A = np.diag([1.0, 0.0, 2.0])
        Bt = rng.standard_normal((3, 4))
        _bcd_sweep(Dt, A, Bt)
        assert np.array_equal(Dt[1], before[1])
        assert not np.allclose(Dt[0], before[0])

    def test_norms_after_every_update(self, small_data, monkeypatch):
        import gprdl.dict_learning as dl
        checks = []
        orig = dl._bcd_sweep

        def spy(Dt, A, Bt):
            orig(Dt, A, Bt)
            checks.append(norms_ok(Dt.T))
        monkeypatch.setattr(dl, "_bcd_sweep", spy)
        odl_train(small_data, DictLearnConfig(n_atoms=20, iterations=2, coding=LASSO), trace=False)
        assert len(checks) == 160 and all(checks)

    def test_one_column_per_coding_step(self, small_data):
        Y = CountingProfiles(small_data)
        _, rep = odl_train(Y, DictLearnConfig(n_atoms=10, iterations=3, coding=LASSO), trace=False)
        assert Y.calls == 3 * 80
        assert rep.dictionary_updates == 3 * 80

    def test_trace_length(self, small_data):
        _, rep = odl_train(small_data, DictLearnConfig(n_atoms=10, iterations=4, coding=LASSO))
        assert len(rep.objective_trace) == 4

    def test_batch_updates(self, small_data):
        _, rep = odl_train(small_data, DictLearnConfig(n_atoms=10, iterations=2, coding=LASSO,
                                                       batch_size=32), trace=False)
        # 80 draws per pass: 32, 32, 16
        assert rep.dictionary_updates == 6

    @pytest.mark.parametrize("kw", [{}, dict(batch_size=16, forget=0.99)])
    def test_deterministic(self, small_data, kw):
        cfg = DictLearnConfig(n_atoms=10, iterations=2, coding=LASSO, seed=5, **kw)
        a, ra = odl_train(small_data, cfg)
        b, rb = odl_train(small_data, cfg)
        assert a.atoms.tobytes() == b.atoms.tobytes()
        assert ra.objective_trace == rb.objective_trace

    def test_forget_weights_per_draw(self):
        from gprdl.dict_learning import _accumulate
        rng = np.random.default_rng(0)
        pairs = [(SparseCode.from_dense(rng.standard_normal(4)), rng.standard_normal(3)) for _ in range(5)]
        A, Bt = np.eye(4), np.ones((4, 3))
        _accumulate(A, Bt, pairs, 4, 0.9)
        A_ref, B_ref = np.eye(4), np.ones((4, 3))
        for c, y in pairs:
            x = c.to_dense()
            A_ref = 0.9 * A_ref + np.outer(x, x)
            B_ref = 0.9 * B_ref + np.outer(x, y)
        np.testing.assert_allclose(A, A_ref, atol=1e-12)
        np.testing.assert_allclose(Bt, B_ref, atol=1e-12)

    def test_wrong_method(self, small_data):
        with pytest.raises(ConfigurationError):
            odl_train(small_data, DictLearnConfig(n_atoms=4, coding=OMP))

    def test_train_dispatch(self, small_data):
        with pytest.raises(ConfigurationError):
            train(small_data, DictLearnConfig(n_atoms=4), "mod")


@pytest.mark.slow
@pytest.mark.parametrize("seed", [20, 21])
def test_planted_recovery(seed):
    D_true, Y = planted_model(seed)
    ks = DictLearnConfig(n_atoms=50, iterations=30, seed=seed,
                         coding=CodingParams(alpha=1e-6, max_nonzeros=3))
    od = DictLearnConfig(n_atoms=50, iterations=30, seed=seed, coding=LASSO,
                         batch_size=256, forget=0.999)
    Dk, rk = ksvd_train(Y, ks)
    Do, ro = odl_train(Y, od, trace=False)
    assert greedy_recovery(D_true, Dk.atoms) >= 0.8
    assert greedy_recovery(D_true, Do.atoms) >= 0.8
    assert ro.wall_time_update < rk.wall_time_update
