import numpy as np
import pytest
from scipy import stats

from dpiid.engine import (_DRAW, DPTarget, EngineConfig, ShellEstimate, ShellState, ToyTarget,
                          check_in_shell, estimate_rejection_mass, estimate_shell, estimate_shells,
                          expected_cost, initial_state, mh_step, minorization_constant, p_hat_stability,
                          perfect_draw, planned_regen_times, residual_step, resolve_shell, sample_iid,
                          select_shell, stream)
from dpiid.errors import EngineError, InvalidInputError
from dpiid.geometry import EllipsoidFrame, ShellSchedule, mahalanobis, shell_log_volume
from dpiid.model import HyperParams
from dpiid.tmcmc import TmcmcConfig, run_chain
from dpiid.geometry import fit_frame


def std_normal(x):
    return stats.norm.logpdf(x).sum(axis=1)


def flat(x):
    return np.zeros(x.shape[0])


def normal_laplace(x):
    return stats.norm.logpdf(x[:, 0]) + stats.laplace.logpdf(x[:, 1])


def unit_frame(d):
    return EllipsoidFrame.from_cov(np.zeros(d), np.eye(d))


SCHED_1D = ShellSchedule.arithmetic(0.25, 0.25, 24)


# ------------------------------------------------------------------ estimate_shell

def test_shell_masses_match_normal_probabilities():
    t, fr = ToyTarget(std_normal, 1), unit_frame(1)
    cfg = EngineConfig(n_mc=100_000, seed=4)
    for i in (0, 3, 8):
        est = estimate_shell(i, fr, SCHED_1D, t, cfg, stream(4, 0, i))
        lo, hi = SCHED_1D.inner(i), SCHED_1D.outer(i)
        exact = 2 * (stats.norm.cdf(hi) - stats.norm.cdf(lo))
        # standard error from an independent uniform sample of the same shell
        x = np.random.default_rng(i).uniform(lo, hi, 100_000)
        se = 2 * (hi - lo) * stats.norm.pdf(x).std() / np.sqrt(cfg.n_mc)
        assert abs(np.exp(est.log_mass) - exact) < 3 * se
        assert est.log_s_hat <= est.log_S_hat and 0 < est.p_hat < 1


def test_constant_ratio_shell():
    t, fr = ToyTarget(flat, 3), unit_frame(3)
    cfg = EngineConfig(n_mc=50, seed=1)
    est = estimate_shell(2, fr, SCHED_1D, t, cfg, stream(1, 0, 2))
    assert est.p_hat == pytest.approx(1 - cfg.eta, abs=1e-15)
    assert est.log_mass == pytest.approx(shell_log_volume(fr, SCHED_1D, 2), rel=1e-12)


def test_empty_shell_and_zero_minorization():
    fr = unit_frame(1)
    empty = estimate_shell(1, fr, SCHED_1D, ToyTarget(lambda x: np.full(len(x), -np.inf), 1),
                           EngineConfig(n_mc=20), np.random.default_rng(0))
    assert empty.empty and empty.log_mass == -np.inf and empty.p_hat == 0.0
    with pytest.raises(EngineError):
        perfect_draw(1, empty, fr, SCHED_1D, ToyTarget(flat, 1), EngineConfig(), np.random.default_rng(0))
    half = ToyTarget(lambda x: np.where(x[:, 0] > 0, 0.0, -np.inf), 1)
    est = estimate_shell(3, fr, SCHED_1D, half, EngineConfig(n_mc=200), np.random.default_rng(0))
    assert not est.empty and est.p_hat == 0.0
    with pytest.raises(EngineError, match="minorization constant is zero"):
        perfect_draw(3, est, fr, SCHED_1D, half, EngineConfig(), np.random.default_rng(0))


def test_minorization_constant_rule():
    assert minorization_constant(0.0, 0.0, 1e-10) == pytest.approx(1 - 1e-10, abs=1e-16)
    assert minorization_constant(-1.0, 0.0, 1e-10) == pytest.approx(np.exp(-1) - 1e-10)
    # below eta the slack would make it negative; scale instead
    assert minorization_constant(-30.0, 0.0, 1e-10) == pytest.approx(np.exp(-30) * (1 - 1e-10))
    assert minorization_constant(-np.inf, 0.0, 1e-10) == 0.0


def test_estimates_reproducible_and_stream_keyed():
    t, fr = ToyTarget(std_normal, 2), unit_frame(2)
    cfg = EngineConfig(n_mc=500, seed=11)
    a = estimate_shells(fr, SCHED_1D, t, cfg, [2, 5])
    b = estimate_shells(fr, SCHED_1D, t, cfg, [5])
    assert a[1] == b[0]
    c = estimate_shells(fr, SCHED_1D, t, EngineConfig(n_mc=500, seed=12), [5])
    assert c[0] != b[0]


def test_p_hat_stability_diagnostic():
    t, fr = ToyTarget(std_normal, 2), unit_frame(2)
    p1, p2 = p_hat_stability(4, fr, SCHED_1D, t, EngineConfig(n_mc=500, seed=2))
    assert 0 < p2 <= 1 and 0 < p1 <= 1


# ------------------------------------------------------------------ select_shell

def _est(log_masses):
    return [ShellEstimate(i, m, 0.0, 0.0, 0.5, 10, not np.isfinite(m)) for i, m in enumerate(log_masses)]


def test_select_frequencies():
    est = _est([np.log(3.0), np.log(1.0)])
    rng = np.random.default_rng(5)
    n = 100_000
    picks = np.array([select_shell(est, rng) for _ in range(n)])
    se = np.sqrt(0.75 * 0.25 / n)
    assert abs(np.mean(picks == 0) - 0.75) < 3 * se


def test_select_skips_empty_shells():
    est = _est([-np.inf, 0.0, -np.inf])
    rng = np.random.default_rng(1)
    assert {select_shell(est, rng) for _ in range(500)} == {1}
    with pytest.raises(EngineError):
        resolve_shell(np.full(3, -np.inf), 0.5)


def test_select_extension_reuses_uniform():
    calls = []

    def extend(est):
        calls.append(len(est))
        return _est([0.0] * (2 * len(est)))

    assert select_shell(_est([0.0, 0.0]), u=0.999) == 1
    i = select_shell(_est([0.0, 0.0]), u=0.999, extend_callback=extend)
    assert i >= 1 and calls[0] == 2
    # the same uniform against the final cumulative masses
    assert i == resolve_shell(np.logaddexp.accumulate(np.zeros(2 * calls[-1])), 0.999)


# ------------------------------------------------------------------ kernels on one shell

def test_mh_step_extremes():
    fr, rng = unit_frame(2), np.random.default_rng(3)
    t = ToyTarget(flat, 2)
    st = initial_state(2, fr, SCHED_1D, t, rng)
    for _ in range(20):
        new, m, moved = mh_step(st, 2, fr, SCHED_1D, t, rng)
        assert m == 1.0 and moved
    dead = ToyTarget(lambda x: np.full(len(x), -np.inf), 2)
    for _ in range(20):
        new, m, moved = mh_step(ShellState(st.gamma, st.extra, 0.0), 2, fr, SCHED_1D, dead, rng)
        assert m == 0.0 and not moved and new.log_rho == 0.0


def test_mh_step_stationary_on_shell():
    fr, rng, t = unit_frame(1), np.random.default_rng(8), ToyTarget(std_normal, 1)
    sch = ShellSchedule(np.array([0.5, 1.5]))
    st = initial_state(1, fr, sch, t, rng)
    xs = []
    for k in range(40_000):
        st, _, _ = mh_step(st, 1, fr, sch, t, rng)
        if k % 4 == 0:
            xs.append(abs(st.gamma[0]))
    edges = np.linspace(0.5, 1.5, 11)
    obs = np.histogram(xs, edges)[0]
    p = np.diff(stats.norm.cdf(edges))
    assert stats.chisquare(obs, p / p.sum() * obs.sum()).pvalue > 1e-3


def test_rejection_mass():
    fr, rng = unit_frame(1), np.random.default_rng(2)
    st = initial_state(2, fr, SCHED_1D, ToyTarget(flat, 1), rng)
    assert estimate_rejection_mass(st, 2, fr, SCHED_1D, ToyTarget(flat, 1), rng, 500) == 0.0
    dead = ToyTarget(lambda x: np.full(len(x), -np.inf), 1)
    assert estimate_rejection_mass(ShellState(st.gamma, st.extra, 0.0), 2, fr, SCHED_1D, dead, rng, 500) == 1.0
    # against the empirical stay rate of the kernel itself
    t = ToyTarget(std_normal, 1)
    st = ShellState(np.array([0.55]), np.empty(0, np.int64), float(std_normal(np.array([[0.55]]))[0]))
    sch = ShellSchedule(np.array([0.5, 2.5]))
    r_hat = estimate_rejection_mass(st, 1, fr, sch, t, rng, 200_000)
    n = 20_000
    stays = sum(not mh_step(st, 1, fr, sch, t, rng)[2] for _ in range(n))
    assert abs(stays / n - r_hat) < 3 * np.sqrt(r_hat * (1 - r_hat) / n) + 3e-3


def test_residual_flat_shell_move_acceptance():
    fr, rng, t = unit_frame(2), np.random.default_rng(4), ToyTarget(flat, 2)
    st = initial_state(1, fr, SCHED_1D, t, rng)
    p = 0.3
    rej = sum(residual_step(st, 1, p, fr, SCHED_1D, t, rng)[1] for _ in range(20_000))
    # every kernel step moves; each is kept with probability 1 - p
    trials = 20_000 + rej
    assert abs(rej / trials - p) < 3 * np.sqrt(p * (1 - p) / trials)


def test_residual_stay_ratio_is_one_in_faithful_mode():
    fr, rng = unit_frame(1), np.random.default_rng(6)
    dead = ToyTarget(lambda x: np.full(len(x), -np.inf), 1)
    st = ShellState(np.array([0.6]), np.empty(0, np.int64), 0.0)
    for _ in range(10):
        new, rej = residual_step(st, 2, 0.2, fr, SCHED_1D, dead, rng, faithful=True, n_rhat=50)
        assert rej == 0 and new is st
    with pytest.raises(EngineError):
        residual_step(st, 2, 1.0, fr, SCHED_1D, dead, rng)


# ------------------------------------------------------------------ perfect draws

def test_flat_shell_returns_regeneration_draw():
    fr, t = unit_frame(2), ToyTarget(flat, 2)
    cfg = EngineConfig(n_mc=10, seed=3)
    est = estimate_shell(4, fr, SCHED_1D, t, cfg, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    draws = [perfect_draw(4, est, fr, SCHED_1D, t, cfg, rng) for _ in range(3000)]
    assert all(d.regen_time == 1 and d.proposals == 0 for d in draws)
    r = mahalanobis(fr, np.array([d.gamma for d in draws]))
    lo, hi = SCHED_1D.inner(4), SCHED_1D.outer(4)
    assert stats.kstest((r ** 2 - lo ** 2) / (hi ** 2 - lo ** 2), "uniform").pvalue > 1e-3


def test_regeneration_time_mean():
    fr, t = unit_frame(2), ToyTarget(std_normal, 2)
    cfg = EngineConfig(n_mc=2000, seed=3)
    est = estimate_shell(6, fr, SCHED_1D, t, cfg, np.random.default_rng(0))
    rng = np.random.default_rng(2)
    T = np.array([perfect_draw(6, est, fr, SCHED_1D, t, cfg, rng).regen_time for _ in range(4000)])
    p = est.p_hat
    assert abs(T.mean() - 1 / p) < 3 * np.sqrt((1 - p) / p ** 2 / T.size)
    assert abs(np.mean(T == 1) - p) < 3 * np.sqrt(p * (1 - p) / T.size)


def test_step_budget_and_deadline():
    fr, t = unit_frame(2), ToyTarget(std_normal, 2)
    est = ShellEstimate(6, 0.0, -20.0, 0.0, 1e-9, 10)
    with pytest.raises(EngineError, match="step budget"):
        perfect_draw(6, est, fr, SCHED_1D, t, EngineConfig(max_steps=1000), np.random.default_rng(0))
    with pytest.raises(EngineError, match="time budget"):
        perfect_draw(6, est, fr, SCHED_1D, t, EngineConfig(max_steps=10 ** 12), np.random.default_rng(0),
                     deadline=0.0)


# ------------------------------------------------------------------ orchestration

def test_single_draw_equals_direct_perfect_draw():
    fr, t = unit_frame(2), ToyTarget(std_normal, 2)
    cfg = EngineConfig(n_mc=400, c1=0.25, step=0.25, shells=24, draws=1, seed=21)
    s = sample_iid(t, fr, cfg)
    i = int(s.shell[0])
    d = perfect_draw(i, s.estimates[i], fr, s.schedule, t, cfg, stream(21, _DRAW, 0))
    np.testing.assert_array_equal(d.gamma, s.gamma[0])
    assert d.regen_time == s.regen_time[0]


def test_worker_count_does_not_change_output(tiny_y):
    hp = HyperParams(M=2, N=3, s=200, S=200, nu0=0, c=0.1, a_alpha=100, b_alpha=100)
    out = run_chain(tiny_y, hp, TmcmcConfig(scale=0.3, burn_in=5000, thin=5, keep=4000, seed=1), track=[])
    fr, t = fit_frame(out.theta), DPTarget(tiny_y, hp)
    base = dict(n_mc=300, c1=0.5, step=0.1, shells=60, draws=12, seed=5)
    a = sample_iid(t, fr, EngineConfig(**base, workers=1))
    b = sample_iid(t, fr, EngineConfig(**base, workers=8))
    for name in ("theta", "alloc", "gamma", "shell", "regen_time", "residual_rejections"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    assert a.estimates == b.estimates
    assert np.all((a.alloc >= 0) & (a.alloc < hp.N)) and check_in_shell(fr, a.schedule, a)
    np.testing.assert_array_equal(planned_regen_times(a.shell, a.estimates, EngineConfig(**base)),
                                  a.regen_time)


def test_shell_occupancy_matches_masses():
    fr, t = unit_frame(2), ToyTarget(std_normal, 2)
    cfg = EngineConfig(n_mc=300, c1=0.5, step=0.5, shells=12, draws=10_000, seed=8)
    s = sample_iid(t, fr, cfg)
    lm = np.array([e.log_mass for e in s.estimates])
    p = np.exp(lm - np.logaddexp.reduce(lm))
    obs = np.bincount(s.shell, minlength=p.size) / s.size
    se = np.sqrt(p * (1 - p) / s.size)
    assert np.all(np.abs(obs - p) <= 3 * se + 1e-12)


def test_exact_marginals_on_non_gaussian_toy():
    t = ToyTarget(normal_laplace, 2)
    fr = EllipsoidFrame.from_cov(np.zeros(2), np.diag([1.0, 2.0]))
    cfg = EngineConfig(n_mc=4000, c1=0.1, step=0.1, shells=60, draws=3000, seed=17)
    s = sample_iid(t, fr, cfg)
    assert stats.kstest(s.theta[:, 0], "norm").pvalue > 0.01
    assert stats.kstest(s.theta[:, 1], "laplace").pvalue > 0.01
    assert check_in_shell(fr, s.schedule, s)


def test_exact_with_diffeomorphism():
    b = 0.5
    t = ToyTarget(std_normal, 2, b=b)
    from dpiid.diffeo import h_inverse
    x = np.random.default_rng(0).normal(size=(20_000, 2))
    fr = fit_frame(h_inverse(x, b))
    cfg = EngineConfig(n_mc=4000, c1=0.1, step=0.1, shells=60, draws=2000, seed=3, b=b)
    s = sample_iid(t, fr, cfg)
    assert stats.kstest(s.theta[:, 0], "norm").pvalue > 0.01
    assert stats.kstest(np.sum(s.theta ** 2, axis=1), "chi2", args=(2,)).pvalue > 0.01


def test_lazy_extension_and_fixed_budget():
    fr, t = unit_frame(1), ToyTarget(std_normal, 1)
    short = ShellSchedule.arithmetic(0.25, 0.25, 3)  # covers |x| <= 0.75 only
    cfg = EngineConfig(n_mc=500, draws=400, seed=2)
    s = sample_iid(t, fr, cfg, schedule=short)
    assert s.schedule.count >= 12 and s.shell.max() < s.schedule.count - 1
    assert stats.kstest(s.theta[:, 0], "norm").pvalue > 0.01
    fixed = sample_iid(t, fr, EngineConfig(n_mc=500, draws=50, seed=2, lazy=False), schedule=short)
    assert fixed.schedule.count == 3
    with pytest.raises(EngineError):
        sample_iid(t, fr, EngineConfig(n_mc=50, draws=400, seed=2, max_shells=4), schedule=short)


def test_total_step_budget():
    fr, t = unit_frame(2), ToyTarget(std_normal, 2)
    cfg = EngineConfig(n_mc=200, c1=0.5, step=0.5, shells=12, draws=200, seed=8, max_total_steps=0)
    with pytest.raises(EngineError, match="residual steps"):
        sample_iid(t, fr, cfg)


def test_expected_cost_and_config_validation():
    assert expected_cost(_est([0.0, 0.0])) == pytest.approx(2.0)
    for bad in (dict(n_mc=1), dict(eta=0.0), dict(draws=0), dict(step=0.0), dict(workers=0), dict(b=-1.0)):
        with pytest.raises(InvalidInputError):
            EngineConfig(**bad)
    with pytest.raises(InvalidInputError):
        sample_iid(ToyTarget(flat, 1), unit_frame(1), EngineConfig(shells=4), estimates=_est([0.0]))
