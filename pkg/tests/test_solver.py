import itertools

import numpy as np
import pytest

from smcd.constraints import ConstraintPair, ConstraintSet
from smcd.diffops import lift_matrix, save_model
from smcd.errors import DataError, NumericError
from smcd.solver import (
    SolverState,
    TrainConfig,
    aggregate_constraint,
    find_most_violated,
    fit_lifted,
    psd_project,
    solve_working_qp,
    train,
)


def make_set(vs, ys, op="sub"):
    vs = np.atleast_2d(np.asarray(vs, dtype=np.float64))
    pairs = [
        ConstraintPair(v=v, y=int(y), center1=(0, 0), center2=(0, 0))
        for v, y in zip(vs, ys)
    ]
    return ConstraintSet(pairs=pairs, d=vs.shape[1], op=op)


TOY = make_set([[2.0], [-2.0], [0.0], [0.0]], [+1, +1, -1, -1])


class TestFindMostViolated:
    def test_separating_w_selects_nothing(self):
        u = np.array([[1.0, 4.0], [1.0, 0.0]])
        y = np.array([1.0, -1.0])
        state = SolverState(w=np.array([-1.0, 0.5]), xi=0.25)
        c, violation = find_most_violated(state, u, y)
        assert not c.any()
        assert violation == pytest.approx(-0.25)

    def test_zero_w_selects_everything(self):
        rng = np.random.default_rng(20)
        u = rng.normal(size=(8, 3))
        y = np.where(rng.random(8) < 0.5, 1.0, -1.0)
        state = SolverState(w=np.zeros(3))
        c, violation = find_most_violated(state, u, y)
        assert c.all()
        assert violation == pytest.approx(1.0)

    def test_brute_force_enumeration(self):
        rng = np.random.default_rng(21)
        n, dim = 10, 4
        for _ in range(10):
            u = rng.normal(size=(n, dim))
            y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
            state = SolverState(w=rng.normal(size=dim), xi=float(abs(rng.normal())))
            _, violation = find_most_violated(state, u, y)
            best = -np.inf
            for bits in itertools.product((0, 1), repeat=n):
                sel = np.array(bits, dtype=bool)
                r = sel.sum() / n
                a = (y[sel] @ u[sel]) / n if sel.any() else np.zeros(dim)
                best = max(best, r - float(state.w @ a) - state.xi)
            assert violation == pytest.approx(best, abs=1e-12)


class TestWorkingQp:
    def test_single_constraint_closed_form(self):
        rng = np.random.default_rng(22)
        for c in (0.05, 5.0):
            a = rng.normal(size=6)
            r = float(abs(rng.normal()) + 0.1)
            alpha, w, xi = solve_working_qp([a], [r], c)
            expected = min(c, r / float(a @ a))
            assert alpha[0] == pytest.approx(expected, rel=1e-10)
            assert np.allclose(w, expected * a, rtol=1e-10)

    def test_orthogonal_decoupling(self):
        scales = np.array([2.0, 3.0, 0.5])
        a_rows = list(np.diag(scales))
        r = [1.0, 2.0, 0.2]
        alpha, w, xi = solve_working_qp(a_rows, r, 100.0)
        expected = np.array([r[i] / scales[i] ** 2 for i in range(3)])
        assert np.allclose(alpha, expected, atol=1e-9)
        assert xi == pytest.approx(0.0, abs=1e-9)

    def test_inactive_constraint_stays_zero(self):
        a_rows = [np.array([1.0, 0.0]), np.zeros(2)]
        r = [1.0, 0.0]  # second row is an empty-violation aggregate
        alpha, w, xi = solve_working_qp(a_rows, r, 10.0)
        assert alpha[1] == 0.0
        assert alpha[0] == pytest.approx(1.0, rel=1e-10)

    def test_dual_feasibility_and_primal_link(self):
        rng = np.random.default_rng(23)
        for _ in range(20):
            t = int(rng.integers(1, 8))
            a_rows = list(rng.normal(size=(t, 5)))
            r = list(rng.uniform(-0.2, 1.0, size=t))
            c = float(rng.choice([0.5, 4.0, 40.0]))
            alpha, w, xi = solve_working_qp(a_rows, r, c)
            assert (alpha >= 0).all()
            assert alpha.sum() <= c + 1e-12
            assert np.allclose(w, alpha @ np.asarray(a_rows), atol=1e-12)
            assert xi >= 0
            # KKT: every working constraint satisfied up to xi
            slacks = np.asarray(r) - np.asarray(a_rows) @ w
            assert slacks.max(initial=0.0) <= xi + 1e-10

    def test_budget_face_needs_pair_exchange(self):
        # At sum(alpha) == c the optimum moves mass between coordinates;
        # single-coordinate ascent would stall here.
        a_rows = [np.array([1.0, 0.0]), np.array([0.0, 1.0])]
        r = [1.0, 0.3]
        c = 0.5
        alpha, w, xi = solve_working_qp([a_rows[1], a_rows[0]], [r[1], r[0]], c)
        # all budget should flow to the higher-payoff constraint
        assert alpha.sum() == pytest.approx(0.5, abs=1e-10)
        assert alpha[1] == pytest.approx(0.5, abs=1e-9)

    def test_empty_working_set_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            solve_working_qp([], [], 1.0)


class TestTrain:
    def test_1d_analytic_solution(self):
        cfg = TrainConfig(c=1e4, tol=1e-7, max_iters=500, psd_project=False)
        model = train(TOY, cfg)
        assert model.m[0, 0] == pytest.approx(0.5, abs=1e-3)
        assert model.b == pytest.approx(-1.0, abs=1e-3)

    def test_1d_analytic_solution_survives_psd_projection(self):
        cfg = TrainConfig(c=1e4, tol=1e-7, max_iters=500, psd_project=True)
        model = train(TOY, cfg)
        assert model.m[0, 0] == pytest.approx(0.5, abs=1e-3)
        assert model.b == pytest.approx(-1.0, abs=1e-3)

    def test_duplication_invariance(self):
        rng = np.random.default_rng(24)
        vs = rng.normal(size=(12, 9))
        ys = [1, -1] * 6
        cfg = TrainConfig(c=40.0, tol=1e-6, max_iters=1000, psd_project=False)
        base = train(make_set(vs, ys), cfg)
        doubled = train(make_set(np.vstack([vs, vs]), ys * 2), cfg)
        # identical in exact arithmetic; summation order over the doubled
        # array shifts the optimization path by a few ulps
        assert np.allclose(doubled.m, base.m, rtol=1e-6, atol=1e-8)
        assert doubled.b == pytest.approx(base.b, rel=1e-6, abs=1e-8)

    def test_slack_shrinks_as_c_grows(self):
        u = lift_matrix(TOY.vs)
        y = TOY.ys
        xis = []
        for c in (1.0, 10.0, 100.0):
            state, _ = fit_lifted(u, y, TrainConfig(c=c, tol=1e-8, max_iters=500))
            xis.append(state.xi)
        assert xis[0] >= xis[1] >= xis[2]
        assert xis[2] < 0.05

    def test_dual_objective_monotone(self, capsys):
        rng = np.random.default_rng(25)
        vs = rng.normal(size=(30, 3))
        ys = np.where(rng.random(30) < 0.5, 1, -1)
        ys[:2] = (1, -1)
        fit_lifted(lift_matrix(np.asarray(vs)), ys.astype(np.float64),
                   TrainConfig(c=40.0, tol=1e-6, max_iters=400))
        lines = [l for l in capsys.readouterr().err.splitlines() if "\t" in l]
        objectives = [float(l.split("\t")[4]) for l in lines]
        # restricted optimum is a growing lower bound on the full problem
        assert all(b >= a - 1e-9 for a, b in zip(objectives, objectives[1:]))

    def test_deterministic_model_file(self, tmp_path):
        rng = np.random.default_rng(26)
        vs = rng.normal(size=(20, 1))
        ys = [1, -1] * 10
        cfg = TrainConfig(c=40.0, tol=1e-6, max_iters=300)
        p1, p2 = tmp_path / "a.smcd", tmp_path / "b.smcd"
        save_model(train(make_set(vs, ys), cfg), p1)
        save_model(train(make_set(vs, ys), cfg), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_single_class_rejected(self):
        with pytest.raises(DataError, match="both positive and negative"):
            train(make_set([[1.0], [2.0]], [1, 1]))

    def test_non_finite_rejected(self):
        with pytest.raises(DataError, match="non-finite"):
            train(make_set([[np.nan], [1.0]], [1, -1]))

    def test_empty_rejected(self):
        with pytest.raises(DataError, match="empty"):
            train(ConstraintSet(pairs=[], d=1, op="sub"))

    def test_max_iters_warning(self, capsys):
        rng = np.random.default_rng(27)
        vs = rng.normal(size=(40, 1))
        ys = [1, -1] * 20
        train(make_set(vs, ys), TrainConfig(c=40.0, tol=1e-9, max_iters=2))
        assert "stopped at max_iters=2" in capsys.readouterr().err

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(c=0.0)
        with pytest.raises(ValueError):
            TrainConfig(tol=-1.0)
        with pytest.raises(ValueError):
            TrainConfig(max_iters=0)


class TestPsdProject:
    def test_diagonal_clamp(self):
        out = psd_project(np.diag([2.0, -1.0]))
        assert np.allclose(out, np.diag([2.0, 0.0]), atol=1e-12)

    def test_psd_fixed_point(self):
        rng = np.random.default_rng(28)
        a = rng.normal(size=(6, 6))
        psd = a @ a.T
        assert np.allclose(psd_project(psd), psd, atol=1e-12 * np.abs(psd).max())

    def test_exchange_matrix(self):
        out = psd_project(np.array([[0.0, 1.0], [1.0, 0.0]]))
        assert np.allclose(out, np.full((2, 2), 0.5), atol=1e-12)

    def test_random_matrices_eigenfloor_and_nearest(self):
        import scipy.linalg

        rng = np.random.default_rng(29)
        for _ in range(30):
            n = int(rng.integers(2, 9))
            a = rng.normal(size=(n, n))
            sym = (a + a.T) / 2
            out = psd_project(sym)
            assert np.array_equal(out, out.T)
            assert np.linalg.eigvalsh(out).min() >= -1e-9
            # independent reconstruction through a different eigensolver
            evals, evecs = scipy.linalg.eigh(sym)
            ref = (evecs * np.maximum(evals, 0.0)) @ evecs.T
            assert np.allclose(out, ref, atol=1e-8)
            # no random PSD candidate sits closer in Frobenius norm
            best = np.linalg.norm(sym - out)
            for _ in range(20):
                b = rng.normal(size=(n, n))
                cand = b @ b.T
                assert best <= np.linalg.norm(sym - cand) + 1e-9

    def test_projected_quadratic_form_nonnegative(self):
        rng = np.random.default_rng(44)
        a = rng.normal(size=(7, 7))
        out = psd_project((a + a.T) / 2)
        for _ in range(200):
            v = rng.normal(size=7)
            assert float(v @ out @ v) >= -1e-9

    def test_non_finite_rejected(self):
        with pytest.raises(NumericError, match="non-finite"):
            psd_project(np.array([[np.inf, 0.0], [0.0, 1.0]]))

    def test_non_square_rejected(self):
        with pytest.raises(DataError, match="square"):
            psd_project(np.zeros((2, 3)))


class TestAggregate:
    def test_matches_manual_average(self):
        rng = np.random.default_rng(30)
        u = rng.normal(size=(7, 3))
        y = np.where(rng.random(7) < 0.5, 1.0, -1.0)
        sel = np.array([1, 0, 1, 1, 0, 0, 1], dtype=np.uint8)
        got = aggregate_constraint(u, y, sel)
        manual = sum(y[k] * u[k] for k in range(7) if sel[k]) / 7
        assert np.allclose(got, manual, atol=1e-15)
