"""Runtime policies: sampling laws, belief moves, dual initialization."""

import inspect

import numpy as np
import pytest

from cams.dsgda import DsgdaConfig
from cams.errors import IncompatibleBundleError, NumericalDomainError
from cams.game import DualInfoState, InfoState, make_hexner
from cams.runtime import (
    atom_conditionals,
    dual_sample,
    init_dual,
    p1_act,
    p2_act_dual,
    split_sample,
)
from cams.simplex import split_from_alpha
from cams.solver import (
    DualPlan,
    SolveConfig,
    SplitPlan,
    cams_solve,
    solve_stage_primal,
)
from cams.value import FitConfig, TerminalPrimalSlice


def spec_1d(**kw):
    return make_hexner(
        targets=((1.0,), (-1.0,)),
        pos_dim=1,
        flow="exact",
        pos_range=(-1.0, 1.0),
        vel_range=(-1.0, 1.0),
        **kw,
    )


@pytest.fixture(scope="module")
def shot():
    # one stage over the whole horizon; V(0, x, .) is linear in p here
    return spec_1d(horizon=1.0, step=1.0)


@pytest.fixture(scope="module")
def quick():
    return spec_1d(horizon=0.25, step=0.25)


@pytest.fixture(scope="module")
def quick_cfg():
    return SolveConfig(
        samples=64,
        min_samples=32,
        dsgda=DsgdaConfig(max_iters=400, restarts=2, refine_starts=2, refine_iters=100),
        fit=FitConfig(hidden=(16, 16), max_epochs=80, min_samples=32),
        chunk=24,
    )


@pytest.fixture(scope="module")
def pb_q(quick, quick_cfg):
    return cams_solve(quick, "primal", cfg=quick_cfg, seed=5)


@pytest.fixture(scope="module")
def db_q(quick, quick_cfg):
    return cams_solve(quick, "dual", cfg=quick_cfg, seed=6)


@pytest.fixture(scope="module")
def mixed_plan(shot):
    # interior belief on a linear-in-p value: the optimal split reveals
    cfg = SolveConfig(dsgda=DsgdaConfig(restarts=3, refine_starts=2, refine_iters=200))
    s = InfoState(0.0, np.array([0.4, -0.3, -0.2, 0.5]), np.array([0.55, 0.45]))
    plan, _ = solve_stage_primal(
        s, TerminalPrimalSlice(shot), shot, cfg, rng=np.random.default_rng(1)
    )
    return plan


def hand_plan(alpha, p):
    w = split_from_alpha(alpha, p)
    n = alpha.shape[0]
    return SplitPlan(
        u_atoms=np.linspace(-1.0, 1.0, n)[:, None],
        alpha=np.asarray(alpha, dtype=float),
        lam=w.lam,
        posteriors=w.posteriors,
        v_atoms=np.zeros((n, 1)),
        stage_value=0.0,
    )


class TestAtomConditionals:
    def test_fully_revealing_law(self):
        plan = hand_plan(np.eye(2), np.array([0.5, 0.5]))
        w = atom_conditionals(plan, np.array([0.5, 0.5]), 1)
        assert np.array_equal(w, [0.0, 1.0])
        k, u, p_next = split_sample(plan, np.array([0.5, 0.5]), 1, np.random.default_rng(0))
        assert k == 1
        assert np.array_equal(p_next, [0.0, 1.0])

    def test_nonrevealing_keeps_belief(self):
        p = np.array([0.25, 0.75])
        plan = hand_plan(np.array([[0.3, 0.3], [0.7, 0.7]]), p)
        for i in range(2):
            w = atom_conditionals(plan, p, i)
            assert np.allclose(w, plan.lam, atol=1e-15)
        assert np.allclose(plan.posteriors, p[None, :], atol=1e-15)

    def test_total_mass_one_on_solved_plan(self, mixed_plan):
        p = np.array([0.55, 0.45])
        for i in range(2):
            w = atom_conditionals(mixed_plan, p, i)
            assert np.all(w >= 0.0)
            assert abs(w.sum() - 1.0) <= 1e-12

    def test_dead_type_raises(self, mixed_plan):
        with pytest.raises(NumericalDomainError):
            atom_conditionals(mixed_plan, np.array([1.0, 0.0]), 1)

    def test_bad_index_raises(self, mixed_plan):
        with pytest.raises(NumericalDomainError):
            atom_conditionals(mixed_plan, np.array([0.5, 0.5]), 2)


class TestSplitSampleLaw:
    def test_conditional_frequencies(self):
        rng = np.random.default_rng(42)
        alpha = rng.dirichlet(np.ones(2), size=2).T  # columns stochastic
        p = np.array([0.3, 0.7])
        plan = hand_plan(alpha, p)
        w = atom_conditionals(plan, p, 0)
        n = 100_000
        counts = np.zeros(2)
        for _ in range(n):
            k, _, _ = split_sample(plan, p, 0, rng)
            counts[k] += 1
        freq = counts / n
        sig = np.sqrt(w * (1 - w) / n)
        assert np.all(np.abs(freq - w) <= 3 * sig + 1e-9)

    def test_posterior_martingale(self):
        # type ~ p, then the observed split: E[p_next] must be p
        rng = np.random.default_rng(7)
        alpha = rng.dirichlet(np.ones(2), size=2).T
        p = np.array([0.35, 0.65])
        plan = hand_plan(alpha, p)
        n = 20_000
        acc = np.zeros((n, 2))
        for j in range(n):
            i = int(rng.random() < p[1])
            _, _, p_next = split_sample(plan, p, i, rng)
            acc[j] = p_next
        err = np.abs(acc.mean(axis=0) - p)
        tol = 3 * acc.std(axis=0) / np.sqrt(n) + 1e-12
        assert np.all(err <= tol)


def hand_dual_plan(lam, spec):
    na = len(lam)
    return DualPlan(
        v_atoms=np.linspace(-0.5, 0.5, na)[:, None],
        lam=np.asarray(lam, dtype=float),
        dual_atoms=np.arange(2.0 * na).reshape(na, 2),
        u_atoms=np.full((na, 1), 0.25),
        stage_value=0.0,
    )


class TestDualSample:
    def test_deterministic_atom_and_advance(self, quick):
        plan = hand_dual_plan([1.0, 0.0, 0.0], quick)
        rng = np.random.default_rng(3)
        for _ in range(50):
            k, v, ph_next = dual_sample(plan, quick, rng)
            assert k == 0
            assert np.array_equal(v, plan.v_atoms[0])
        cost = quick.running_cost(plan.u_atoms[0], plan.v_atoms[0])
        assert np.allclose(ph_next, plan.dual_atoms[0] - quick.step * cost, atol=1e-15)

    def test_zero_running_cost_keeps_atoms(self):
        spec = spec_1d(horizon=0.25, step=0.25, running_scale=0.0)
        plan = hand_dual_plan([0.2, 0.5, 0.3], spec)
        rng = np.random.default_rng(11)
        for _ in range(200):
            k, _, ph_next = dual_sample(plan, spec, rng)
            assert np.array_equal(ph_next, plan.dual_atoms[k])

    def test_lambda_frequencies(self, quick):
        lam = np.array([0.3, 0.5, 0.2])
        plan = hand_dual_plan(lam, quick)
        rng = np.random.default_rng(4)
        n = 100_000
        counts = np.zeros(3)
        for _ in range(n):
            k, _, _ = dual_sample(plan, quick, rng)
            counts[k] += 1
        freq = counts / n
        sig = np.sqrt(lam * (1 - lam) / n)
        assert np.all(np.abs(freq - lam) <= 3 * sig + 1e-9)

    def test_dead_atom_never_sampled(self, quick):
        plan = hand_dual_plan([1.0 - 5e-7, 5e-7, 0.0], quick)
        rng = np.random.default_rng(5)
        for _ in range(10_000):
            k, _, _ = dual_sample(plan, quick, rng)
            assert k == 0


class TestInformedPolicy:
    def test_action_and_posterior(self, quick, pb_q, quick_cfg):
        s = InfoState(0.0, np.array([0.3, -0.1, 0.2, 0.4]), np.array([0.6, 0.4]))
        u, k, p_next = p1_act(s, 0, pb_q, quick, np.random.default_rng(3), cfg=quick_cfg)
        assert u.shape == (quick.u_dim,)
        assert np.all(u >= quick.u_box[:, 0]) and np.all(u <= quick.u_box[:, 1])
        assert k in (0, 1)
        assert np.all(p_next >= -1e-12) and abs(p_next.sum() - 1.0) <= 1e-10

    def test_same_seed_reproduces(self, quick, pb_q, quick_cfg):
        s = InfoState(0.0, np.array([-0.2, 0.5, 0.1, -0.3]), np.array([0.5, 0.5]))
        a = p1_act(s, 1, pb_q, quick, np.random.default_rng(9), cfg=quick_cfg)
        b = p1_act(s, 1, pb_q, quick, np.random.default_rng(9), cfg=quick_cfg)
        assert np.array_equal(a[0], b[0])
        assert a[1] == b[1]
        assert np.array_equal(a[2], b[2])

    def test_wrong_kind_bundle(self, quick, db_q, quick_cfg):
        s = InfoState(0.0, np.zeros(4), np.array([0.5, 0.5]))
        with pytest.raises(IncompatibleBundleError):
            p1_act(s, 0, db_q, quick, np.random.default_rng(0), cfg=quick_cfg)

    def test_dead_type_raises(self, quick, pb_q, quick_cfg):
        s = InfoState(0.0, np.zeros(4), np.array([1.0, 0.0]))
        with pytest.raises(NumericalDomainError):
            p1_act(s, 1, pb_q, quick, np.random.default_rng(0), cfg=quick_cfg)


class TestUninformedPolicy:
    def test_action_in_box_and_advance(self, quick, pb_q, db_q, quick_cfg):
        x0 = np.array([0.2, 0.1, -0.4, 0.3])
        ph = init_dual(0.0, x0, np.array([0.5, 0.5]), pb_q, quick)
        s = DualInfoState(0.0, x0, ph)
        v, ph_next = p2_act_dual(s, db_q, quick, np.random.default_rng(2), cfg=quick_cfg)
        assert v.shape == (quick.v_dim,)
        assert np.all(v >= quick.v_box[:, 0]) and np.all(v <= quick.v_box[:, 1])
        assert ph_next.shape == (2,) and np.all(np.isfinite(ph_next))

    def test_no_belief_no_type_in_signature(self):
        # P2's whole interface is (t, x, p_hat); the signature must not
        # leak a belief or a type argument
        names = list(inspect.signature(p2_act_dual).parameters)
        assert names == ["s", "bundle_dual", "spec", "rng", "cfg"]

    def test_wrong_kind_bundle(self, quick, pb_q, quick_cfg):
        s = DualInfoState(0.0, np.zeros(4), np.zeros(2))
        with pytest.raises(IncompatibleBundleError):
            p2_act_dual(s, pb_q, quick, np.random.default_rng(0), cfg=quick_cfg)


class TestInitDual:
    def test_terminal_time_is_terminal_cost(self, quick, pb_q):
        x0 = np.array([0.7, -0.6, 0.2, 0.9])
        ph = init_dual(quick.horizon, x0, np.array([0.3, 0.7]), pb_q, quick)
        assert np.array_equal(ph, quick.terminal_cost(x0))

    def test_single_type_reduces_to_value(self, quick_cfg):
        spec = make_hexner(
            targets=((1.0,),),
            pos_dim=1,
            horizon=0.25,
            step=0.25,
            flow="exact",
            pos_range=(-1.0, 1.0),
            vel_range=(-1.0, 1.0),
        )
        pb = cams_solve(spec, "primal", cfg=quick_cfg, seed=5)
        x0 = np.array([0.3, -0.2, 0.1, 0.4])
        ph = init_dual(0.0, x0, np.array([1.0]), pb, spec)
        assert abs(ph[0] - pb.slices[0].value(x0, np.array([1.0]))) <= 1e-13

    def test_tangency(self, quick, pb_q):
        rng = np.random.default_rng(8)
        for _ in range(10):
            x = rng.uniform(quick.state_box[:, 0], quick.state_box[:, 1])
            p = rng.dirichlet(np.ones(2))
            ph = init_dual(0.0, x, p, pb_q, quick)
            assert abs(p @ ph - pb_q.slices[0].value(x, p)) <= 1e-10

    def test_wrong_kind_bundle(self, quick, db_q):
        with pytest.raises(IncompatibleBundleError):
            init_dual(0.0, np.zeros(4), np.array([0.5, 0.5]), db_q, quick)

    def test_fenchel_consistency(self, quick):
        # V*(t0,x,p_hat) ~ p.p_hat - V(t0,x,p) at p_hat = init_dual, within
        # 5% of the value range.  Needs a short stage: the one-shot dual
        # backup genuinely exceeds the conjugate at kinks of V (the gap is
        # a finite-step effect, ~0.2 at tau=1 and ~5e-3 at tau=0.25 here),
        # and probes stay off the state-box corners where the fits
        # extrapolate.
        cfgp = SolveConfig(
            samples=640,
            min_samples=32,
            chunk=128,
            dsgda=DsgdaConfig(restarts=6, refine_starts=2, refine_iters=200, max_iters=1000),
            fit=FitConfig(hidden=(32, 32), max_epochs=2500, min_samples=32, batch=128),
        )
        cfgd = SolveConfig(
            samples=1920,
            min_samples=32,
            dual_subgradients=0.5,
            chunk=128,
            dsgda=DsgdaConfig(restarts=10, refine_starts=2, refine_iters=200, max_iters=1000),
            fit=FitConfig(hidden=(48, 48), max_epochs=5000, min_samples=32, batch=128),
        )
        pb = cams_solve(quick, "primal", cfg=cfgp, seed=3)
        db = cams_solve(quick, "dual", cfg=cfgd, seed=4)
        slp, sld = pb.slices[0], db.slices[0]

        scale_rng = np.random.default_rng(11)
        vals = [
            slp.value(
                scale_rng.uniform(quick.state_box[:, 0], quick.state_box[:, 1]),
                scale_rng.dirichlet(np.ones(2)),
            )
            for _ in range(256)
        ]
        slack = 0.05 * np.ptp(vals)

        mid = quick.state_box.mean(axis=1)
        half = 0.35 * (quick.state_box[:, 1] - quick.state_box[:, 0])
        rng = np.random.default_rng(7)
        gaps = []
        for _ in range(40):
            x = rng.uniform(mid - half, mid + half)
            p = rng.dirichlet(np.ones(2))
            ph = init_dual(0.0, x, p, pb, quick)
            gaps.append(sld.value(x, ph) - (p @ ph - slp.value(x, p)))
        assert np.abs(gaps).max() <= slack
