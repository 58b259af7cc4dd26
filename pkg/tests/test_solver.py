import numpy as np
import pytest

from smgo.cache import CandidateBounds
from smgo.candidates import CandidateStore, add_from_sample, prune_at, seed_sobol
from smgo.problems import evaluate, get_problem
from smgo.solver import (
    EXPLOIT,
    EXPLORE,
    INITIAL,
    EvaluationError,
    Solver,
    SolverConfig,
    exploit,
    exploitation_cost,
    exploration_merit,
    explore,
    improvement_test,
    run,
    update_trust,
)
from smgo.surrogate import Dataset, Envelope, Sample, SurrogateState, envelope, insert_sample, update_lipschitz


def merit_oracle(points, ages, ds, st_, delta, phi):
    """Exploration merit written out term by term with plain loops."""
    out = []
    for p, age in zip(points, ages):
        d = np.linalg.norm(ds.x - p, axis=1)
        fu = np.min(ds.z + st_.gamma * d) + st_.eps_f
        fl = np.max(ds.z - st_.gamma * d) - st_.eps_f
        fu = max(fu, fl)
        lam = fu - fl
        ok = True
        w_pi = 0.0
        count = 0
        for s in range(ds.n_constraints):
            gu = np.min(ds.c[:, s] + st_.rho[s] * d) + st_.eps_s[s]
            gl = np.max(ds.c[:, s] - st_.rho[s] * d) - st_.eps_s[s]
            gu = max(gu, gl)
            gc = 0.5 * (gu + gl)
            ok &= delta * gc + (1 - delta) * gl >= 0
            w_pi += (gu - gl) / st_.rho[s]
            count += gc >= 0
        w_lam = lam if ok else 0.0
        h = d.min() * ((1 - delta) * w_lam + delta * w_pi * 2.0**count)
        out.append(h + phi * age)
    return np.array(out)


def random_state(seed, n=10, D=2, S=2):
    rng = np.random.default_rng(seed)
    ds = Dataset(D, S)
    for _ in range(n):
        insert_sample(ds, Sample(rng.random(D), rng.normal(), rng.normal(size=S)))
    return ds, update_lipschitz(ds, SurrogateState.initial(S))


class TestConfig:
    def test_defaults(self):
        c = SolverConfig()
        assert (c.alpha, c.delta, c.beta, c.phi, c.B, c.L, c.tr_max, c.tr_shrink) == (
            0.005, 0.20, 0.1, 1e-6, 5, 500, 0.1, 0.5
        )
        assert c.tr_min == pytest.approx(0.5**10 * 0.1)

    @pytest.mark.parametrize(
        "kw", [{"delta": 1.5}, {"alpha": -1}, {"B": 1}, {"L": -1}, {"phi": 0}, {"tr_shrink": 1.0}]
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SolverConfig(**kw)


class TestImprovementTest:
    def test_alpha_zero(self):
        assert improvement_test(10.0, 10.0, 2.0, 0.0)
        assert not improvement_test(10.1, 10.0, 2.0, 0.0)

    def test_passes(self):
        assert improvement_test(9.9, 10.0, 2.0, 0.005)

    def test_fails(self):
        assert not improvement_test(10.0, 10.0, 2.0, 0.005)


class TestTrustUpdate:
    cfg = SolverConfig()

    def test_shrink_on_exploration(self):
        assert update_trust(0.1, EXPLORE, True, 0.0, 1.0, 1.0, self.cfg) == pytest.approx(0.05)

    def test_floor_clamp(self):
        assert update_trust(self.cfg.tr_min, EXPLORE, True, 0.0, 1.0, 1.0, self.cfg) == self.cfg.tr_min

    def test_expand_capped(self):
        assert update_trust(0.08, EXPLOIT, True, 0.0, 1.0, 1.0, self.cfg) == pytest.approx(0.1)

    def test_infeasible_exploit_shrinks(self):
        assert update_trust(0.08, EXPLOIT, False, 0.0, 1.0, 1.0, self.cfg) == pytest.approx(0.04)

    def test_small_improvement_keeps_size(self):
        # improves on best but by less than alpha * gamma
        assert update_trust(0.08, EXPLOIT, True, 0.999, 1.0, 1.0, self.cfg) == 0.08

    def test_no_improvement_shrinks(self):
        assert update_trust(0.08, EXPLOIT, True, 1.0, 1.0, 1.0, self.cfg) == pytest.approx(0.04)


class TestExploit:
    def _env(self, fc, lam):
        fc, lam = np.asarray(fc, float), np.asarray(lam, float)
        return Envelope(fc + lam / 2, fc - lam / 2, np.ones((2, 1)), np.ones((2, 1)), np.ones(2))

    def test_cost_hand_values(self):
        cost = exploitation_cost(self._env([5.0, 5.05], [2.0, 4.0]), 0.1)
        assert cost == pytest.approx([4.8, 4.65])

    def test_beta_zero_uses_central(self):
        ds, st_ = random_state(1)
        pts = np.random.default_rng(2).random((50, 2))
        cfg = SolverConfig(beta=0.0, delta=1.0)
        env = envelope(pts, ds, st_)
        ok = np.all(env.g_central >= 0, axis=1)
        if not ok.any():
            pytest.skip("no eligible point for this draw")
        picked, _ = exploit(pts, ds, st_, cfg)
        want = pts[ok][np.argmin(env.f_central[ok])]
        assert np.array_equal(picked, want)

    def test_none_when_nothing_eligible(self):
        ds = Dataset(1, 1)
        insert_sample(ds, Sample(np.array([0.5]), 0.0, np.array([0.0])))
        insert_sample(ds, Sample(np.array([0.0]), 1.0, np.array([-1.0])))
        st_ = update_lipschitz(ds, SurrogateState.initial(1))
        assert exploit(np.array([[0.1], [0.2]]), ds, st_, SolverConfig(delta=0.0)) is None

    def test_requires_feasible_best(self):
        ds = Dataset(1, 1)
        insert_sample(ds, Sample(np.array([0.5]), 0.0, np.array([-1.0])))
        with pytest.raises(ValueError):
            exploit(np.array([[0.1]]), ds, SurrogateState.initial(1), SolverConfig())

    def test_tie_breaks_lexicographically(self):
        ds = Dataset(2, 0)
        insert_sample(ds, Sample(np.array([0.5, 0.5]), 0.0, np.zeros(0)))
        st_ = SurrogateState(gamma=1.0, rho=np.zeros(0))
        # equidistant points have identical costs
        pts = np.array([[0.6, 0.5], [0.5, 0.4], [0.4, 0.5], [0.5, 0.6]])
        picked, _ = exploit(pts, ds, st_, SolverConfig())
        assert np.array_equal(picked, [0.4, 0.5])


class TestExplorationMerit:
    @pytest.mark.parametrize("seed", range(5))
    @pytest.mark.parametrize("delta", [0.0, 0.2, 1.0])
    def test_matches_oracle(self, seed, delta):
        ds, st_ = random_state(seed)
        pts = np.random.default_rng(seed + 50).random((40, 2))
        ages = np.arange(40.0)
        got = exploration_merit(envelope(pts, ds, st_), ages, st_, delta, 1e-3)
        want = merit_oracle(pts, ages, ds, st_, delta, 1e-3)
        assert np.allclose(got, want, rtol=1e-12, atol=1e-12)

    def test_older_candidate_wins_tie(self):
        ds = Dataset(1, 0)
        insert_sample(ds, Sample(np.array([0.5]), 0.0, np.zeros(0)))
        st_ = SurrogateState(gamma=1.0, rho=np.zeros(0))
        env = envelope(np.array([[0.3], [0.7]]), ds, st_)
        m = exploration_merit(env, np.array([10.0, 0.0]), st_, 0.2, 1e-6)
        assert m[0] - m[1] == pytest.approx(1e-5)

    def test_two_satisfied_constraints_weight_four(self):
        ds = Dataset(1, 2)
        insert_sample(ds, Sample(np.array([0.5]), 0.0, np.array([1.0, 1.0])))
        insert_sample(ds, Sample(np.array([0.0]), 0.0, np.array([1.0, 1.0])))
        st_ = update_lipschitz(ds, SurrogateState.initial(2))
        env = envelope(np.array([[0.25]]), ds, st_)
        # all cones flat: lambda = 0, pi_s = 2 * floor * d, w_pi = 2 * 2 d, w_g = 4
        m = exploration_merit(env, np.zeros(1), st_, 1.0, 1e-6)
        d = 0.25
        assert m[0] == pytest.approx(d * (2 * 2 * d) * 4)


class TestExplore:
    def _store(self, ds, L=64, seed=0):
        store = seed_sobol(ds.dimension, L, seed=seed)
        for i in range(len(ds)):
            prune_at(store, ds.x[i])
            add_from_sample(store, ds.x[i], ds.x[:i], i + 1)
        return store

    @pytest.mark.parametrize("seed", range(6))
    def test_cached_equals_brute_force(self, seed):
        ds, st_ = random_state(seed, n=15)
        store = self._store(ds, seed=seed)
        cache = CandidateBounds(1 + ds.n_constraints)
        # build the cache at an older, smaller constant so the intervals are loose
        older = SurrogateState(gamma=st_.gamma / 3, rho=st_.rho / 2, eps_s=np.zeros(2), rho_floor=st_.rho_floor)
        cache.sync(store, ds, older)
        cfg = SolverConfig(delta=0.3)
        a = explore(store, ds, st_, cfg, 15, cache)
        b = explore(store, ds, st_, cfg, 15, None)
        assert np.array_equal(a, b)

    def test_brute_force_is_argmax_of_oracle(self):
        ds, st_ = random_state(3)
        store = self._store(ds)
        cfg = SolverConfig()
        x = explore(store, ds, st_, cfg, 10)
        idx = store.active()
        m = merit_oracle(store.x[idx], 10 - store.birth[idx], ds, st_, cfg.delta, cfg.phi)
        best = store.x[idx][np.argmax(m)]
        assert np.allclose(x, best)

    def test_empty_store_raises(self):
        ds, st_ = random_state(0)
        with pytest.raises(ValueError):
            explore(CandidateStore(2), ds, st_, SolverConfig(), 1)

    def test_merit_bounds_bracket_exact_values(self):
        ds, st_ = random_state(7, n=12)
        store = self._store(ds)
        cache = CandidateBounds(3)
        older = SurrogateState(gamma=st_.gamma / 2, rho=st_.rho / 4, eps_s=np.zeros(2), rho_floor=st_.rho_floor)
        cache.sync(store, ds, older)
        lb, ub = cache.merit_bounds(store, st_, 12, 0.4, 1e-6, np.sqrt(2))
        idx = store.active()
        exact = merit_oracle(store.x[idx], 12 - store.birth[idx], ds, st_, 0.4, 1e-6)
        tol = 1e-9 * np.abs(exact) + 1e-12
        assert np.all(lb[idx] <= exact + tol) and np.all(exact <= ub[idx] + tol)


class TestSolverLoop:
    def test_first_mode_initial_then_explore_when_infeasible(self):
        s = Solver([0.0], [1.0], 1, SolverConfig(L=8))
        s.ask()
        r = s.tell(1.0, [-1.0])
        assert r.mode == INITIAL and s.next_mode == EXPLORE

    def test_budget_one(self):
        p = get_problem("G24")
        res = run(lambda x, n: evaluate(p, x), p.lower, p.upper, 2, SolverConfig(budget=1))
        assert len(res.history) == 1
        assert res.found_feasible == res.history[0].feasible

    def test_default_start_is_box_center(self):
        s = Solver([0.0, -2.0], [4.0, 2.0], 0, SolverConfig(L=4))
        assert np.allclose(s.ask(), [2.0, 0.0])

    def test_start_outside_box_rejected(self):
        with pytest.raises(ValueError):
            Solver([0.0], [1.0], 0, x0=[2.0])

    def test_pure_exploration_with_large_alpha(self):
        p = get_problem("styblinski2d")
        res = run(lambda x, n: evaluate(p, x), p.lower, p.upper, 2, SolverConfig(alpha=100, budget=60), x0=p.start)
        assert all(r.mode == EXPLORE for r in res.history[1:])

    def test_invariants_along_a_run(self):
        p = get_problem("G24")
        res = run(lambda x, n: evaluate(p, x), p.lower, p.upper, 2, SolverConfig(budget=120, seed=4), x0=[0.3, 3.5])
        best = np.inf
        prev = None
        for r in res.history:
            assert np.all(np.asarray(r.x) >= p.lower) and np.all(np.asarray(r.x) <= p.upper)
            if r.feasible:
                best = min(best, r.z)
            assert (r.z_best is None and best == np.inf) or r.z_best == best
            if prev is not None and prev.trust_size is not None and r.trust_size is not None:
                if r.mode == EXPLORE:
                    assert r.trust_size == max(SolverConfig().tr_min, 0.5 * prev.trust_size)
                if r.trust_size > prev.trust_size:
                    assert r.mode == EXPLOIT and r.feasible
            prev = r
        assert 0 < sum(r.mode == EXPLOIT for r in res.history) < len(res.history)

    def test_same_seed_same_points(self):
        p = get_problem("T3")
        cfg = SolverConfig(budget=40, seed=11)
        a = run(lambda x, n: evaluate(p, x), p.lower, p.upper, 1, cfg, x0=[1.0, 1.0])
        b = run(lambda x, n: evaluate(p, x), p.lower, p.upper, 1, cfg, x0=[1.0, 1.0])
        assert [r.x for r in a.history] == [r.x for r in b.history]

    def test_evaluation_failure_keeps_history(self):
        def bad(x, n):
            if n == 4:
                raise RuntimeError("simulator crashed")
            return float(x[0]), [1.0]

        with pytest.raises(EvaluationError) as info:
            run(bad, [0.0], [1.0], 1, SolverConfig(L=8, budget=10))
        assert len(info.value.history) == 3

    def test_non_finite_rejected(self):
        with pytest.raises(EvaluationError):
            run(lambda x, n: (np.nan, [1.0]), [0.0], [1.0], 1, SolverConfig(L=8, budget=3))

    def test_wrong_constraint_count_rejected(self):
        with pytest.raises(EvaluationError):
            run(lambda x, n: (0.0, [1.0, 2.0]), [0.0], [1.0], 1, SolverConfig(L=8, budget=3))

    def test_no_feasible_result(self):
        res = run(lambda x, n: (0.0, [-1.0]), [0.0], [1.0], 1, SolverConfig(L=8, budget=5))
        assert not res.found_feasible and res.x_best is None and len(res.history) == 5
