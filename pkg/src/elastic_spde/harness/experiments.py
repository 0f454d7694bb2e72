"""The verification suites behind the CLI subcommands.

Each ``cmd_*`` takes an ExperimentConfig and returns a Report.  Work is split
along one parallel axis (replications, ladder points) and gathered in a fixed
order, so results do not depend on the thread count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .. import fdsolver, kernels
from ..coefficients import CoefficientSet, InitialLaw
from ..kernels import GridFunction, KernelParams
from ..measures import EmpiricalMeasure, elastic_test_function, interval_masses, martingale_from_pairings
from ..particles import (
    PairingRecorder,
    SimConfig,
    lipschitz_probe,
    pair_boundary_probability,
    pair_probability_ceiling,
    simulate,
)
from ..rng import NoisePath, Stream, normals, steps_for, uniforms
from .config import ConfigError, ExperimentConfig
from .report import Report

REP_STRIDE = 1_000_000  # replication id = level * REP_STRIDE + r
KERNEL_TOL = 1e-6


def _pmap(fn, items, threads: int) -> list:
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _mean_se(a, axis=0):
    a = np.asarray(a, dtype=float)
    n = a.shape[axis]
    se = np.std(a, axis=axis, ddof=1) / math.sqrt(n) if n > 1 else np.full(np.mean(a, axis=axis).shape, np.nan)
    return np.mean(a, axis=axis), se


def _kappa(cfg: ExperimentConfig) -> float:
    return cfg.coefficient_set().kappa


def _require_finite_kappa(cfg: ExperimentConfig, what: str) -> None:
    if math.isinf(_kappa(cfg)):
        raise ConfigError(f"{what} needs a finite kappa; the absorbing mode is not supported here")


def sigma_max(coeffs: CoefficientSet, T: float, x_hi: float) -> float:
    t = np.linspace(0.0, T, 21)
    x = np.linspace(0.0, x_hi, 201)
    return float(max(np.max(np.abs(coeffs.sigma(s, x) * np.ones_like(x))) for s in t))


def default_x_max(law: InitialLaw, coeffs: CoefficientSet, T: float, dx: float) -> float:
    """Upper support of nu_0 (its 1 - 1e-15 quantile) plus 6 max sigma sqrt(T), on the dx grid."""
    top = float(law.sample(np.array([1.0 - 1e-15]))[0])
    raw = top + 6.0 * sigma_max(coeffs, T, top + 10.0) * math.sqrt(T)
    return dx * math.ceil(raw / dx - 1e-9)


def solver_config(cfg: ExperimentConfig, coeffs: CoefficientSet, law: InitialLaw, T: float, snapshot_times=()):
    s = cfg.solver
    x_max = s.x_max or default_x_max(law, coeffs, T, s.dx)
    if abs(x_max / s.dx - round(x_max / s.dx)) > 1e-9:
        raise ConfigError(f"solver.x_max={x_max} is not a multiple of solver.dx={s.dx}")
    if math.isinf(coeffs.kappa):
        boundary, kappa = "absorbing", None
    elif coeffs.kappa == 0:
        boundary, kappa = "reflecting", None
    else:
        boundary, kappa = "elastic", coeffs.kappa
    try:
        return fdsolver.SolverConfig.from_density(
            law.density_v0, x_max, s.dx, s.dt, boundary=boundary, kappa=kappa,
            stability_guard=s.stability_guard, snapshot_times=tuple(snapshot_times),
        )
    except ValueError as e:
        raise ConfigError(str(e)) from e


def _shared_noise(cfg: ExperimentConfig, T: float, replication: int = 0) -> NoisePath:
    return NoisePath.generate(cfg.experiment.seed, T, cfg.particles.dt, replication)


def _solver_noise(noise: NoisePath, solver_dt: float) -> NoisePath:
    ratio = noise.dt / solver_dt
    if ratio < 1 - 1e-9 or abs(ratio - round(ratio)) > 1e-9:
        raise ConfigError(f"solver.dt={solver_dt} must divide particles.dt={noise.dt}")
    return noise.refined(int(round(ratio)))


def _sim_config(cfg: ExperimentConfig, N: int, replication: int, kappa=None, snapshot_times=None) -> SimConfig:
    p = cfg.particles
    try:
        return SimConfig(N=N, T=p.T, dt=p.dt, kappa=kappa,
                         snapshot_times=p.snapshot_times if snapshot_times is None else snapshot_times,
                         seed=cfg.experiment.seed, replication=replication)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def _grid_index(t: float, dt: float, K: int) -> int:
    return min(K, max(1, int(round(t / dt))))


# ---------------------------------------------------------------------------
# verify-kernels


def _corrupted_kernel(eps, kappa, x, y):
    """Elastic kernel whose correction uses a wrong kappa (fault-injection hook)."""
    return kernels.reflecting_kernel(eps, x, y) - kernels.elastic_correction(eps, 1.5 * kappa + 0.5, x, y)


def cmd_verify_kernels(cfg: ExperimentConfig, fault: str | None = None) -> Report:
    """Boundary identities, derivative switching, the correction bound,
    L2 contraction and Chapman-Kolmogorov on the epsilon ladder."""
    kappa = _kappa(cfg)
    if math.isinf(kappa):
        raise ConfigError("verify-kernels checks the elastic kernel; use a finite kappa or the reflecting mode")
    if fault not in (None, "kappa"):
        raise ValueError(f"unknown fault {fault!r}")
    rep = Report("verify-kernels")
    kern = _corrupted_kernel if fault == "kappa" else None
    pts = np.array([(x, y) for x in (0.05, 0.3, 1.0, 2.5) for y in (0.1, 0.7, 1.6)])
    others = np.array([0.0, 0.1, 0.5, 1.0, 2.0])
    rows = []
    worst = {"robin": 0.0, "switch": 0.0, "bound": 0.0, "l2": -math.inf, "ck": 0.0}
    for eps in cfg.ladders.epsilon:
        s = math.sqrt(eps)
        robin = kernels.robin_residual(eps, kappa, others * s, kernel=kern)
        switch = kernels.derivative_switch_residual(eps, kappa, pts * s)
        xs = np.linspace(0.0, 6.0 * s, 61)
        bound = kernels.correction_bound_excess(eps, kappa, xs[:, None], xs[None, :])
        f = GridFunction.from_function(lambda x: np.exp(-x) * (1.0 + np.sin(3.0 * x) ** 2), 20.0, 0.02)
        l2 = kernels.contraction_ratio(f, KernelParams(eps, kappa)) - 1.0
        ck = max(kernels.chapman_kolmogorov_residual(0.4 * eps, 0.6 * eps, kappa, x * s, y * s)
                 for x, y in ((0.2, 0.5), (1.0, 1.5), (0.0, 0.8)))
        rows.append((eps, kappa, robin, switch, bound, l2, ck))
        worst["robin"] = max(worst["robin"], robin)
        worst["switch"] = max(worst["switch"], switch)
        worst["bound"] = max(worst["bound"], bound)
        worst["l2"] = max(worst["l2"], l2)
        worst["ck"] = max(worst["ck"], ck)
    rep.table("kernel_residuals", ("epsilon", "kappa", "robin", "derivative_switch", "correction_bound_excess",
                                   "l2_ratio_minus_1", "chapman_kolmogorov"), rows)
    rep.check("elastic boundary identity", worst["robin"], KERNEL_TOL, worst["robin"] < KERNEL_TOL)
    rep.check("derivative switch", worst["switch"], KERNEL_TOL, worst["switch"] < KERNEL_TOL)
    rep.check("correction bound", worst["bound"], KERNEL_TOL, worst["bound"] < KERNEL_TOL)
    rep.check("L2 contraction", worst["l2"], KERNEL_TOL, worst["l2"] < KERNEL_TOL, "||T f|| / ||f|| - 1")
    rep.check("Chapman-Kolmogorov", worst["ck"], KERNEL_TOL, worst["ck"] < KERNEL_TOL)
    rep.info.update(kappa=kappa, fault=fault)
    return rep


# ---------------------------------------------------------------------------
# convergence


def _rep_counts(cfg: ExperimentConfig, ladder) -> list[int]:
    R, Rmin, N0 = cfg.mc.replications, cfg.mc.min_replications, cfg.particles.N
    return [max(min(Rmin, R), int(round(R * min(1.0, N0 / N)))) for N in ladder]


def cmd_convergence(cfg: ExperimentConfig, threads: int | None = None) -> Report:
    """Martingale z-tests at the main N and the N^-1/2 decay of J^N across the ladder."""
    _require_finite_kappa(cfg, "convergence")
    threads = threads or cfg.experiment.threads
    coeffs, law, drift = cfg.coefficient_set(), cfg.initial_law(), cfg.interaction_drift()
    kappa = coeffs.kappa
    p = cfg.particles
    K = steps_for(p.T, p.dt)
    phis = [elastic_test_function(kappa, lam) for lam in cfg.ladders.lam]
    ladder = list(p.N_ladder) or [p.N]
    if p.N not in ladder:
        ladder.append(p.N)
    ladder = sorted(set(ladder))
    counts = _rep_counts(cfg, ladder)
    t_idx = [_grid_index(f * p.T, p.dt, K) for f in (1 / 3, 2 / 3, 1.0)]

    def run(job):
        level, N, r = job
        rid = level * REP_STRIDE + r
        noise = _shared_noise(cfg, p.T, rid)
        sc = _sim_config(cfg, N, rid, snapshot_times=())
        main = N == p.N
        rec = PairingRecorder(phis, coeffs, K) if main else None
        sim = simulate(sc, coeffs, law, noise, observers=[rec] if main else [], drift=drift)
        out = {"J": float(np.max(np.abs(sim.j_series))), "loss": float(np.max(np.abs(sim.loss)))}
        if main:
            msc, resid = [], []
            W = noise.path
            for i, phi in enumerate(phis):
                ser = rec.series(i)
                st = martingale_from_pairings(ser, W, p.dt, phi.name)
                msc.append([[st.M[k], st.S[k], st.C[k]] for k in t_idx])
                common = np.concatenate(([0.0], np.cumsum(ser.noise[:-1] * noise.increments)))
                idio = st.M - common - float(phi.f(0.0)) * sim.j_series
                resid.append(float(np.max(np.abs(idio))))
            out["msc"] = msc
            out["resid"] = max(resid)
        return out

    jobs = [(lv, N, r) for lv, (N, R) in enumerate(zip(ladder, counts)) for r in range(R)]
    results = _pmap(run, jobs, threads)

    rows, jmeans = [], []
    for lv, (N, R) in enumerate(zip(ladder, counts)):
        res = [o for (l2, _, _), o in zip(jobs, results) if l2 == lv]
        jm, js = _mean_se([o["J"] for o in res])
        lm = max(o["loss"] for o in res)
        rm, rs = _mean_se([o["resid"] for o in res]) if N == p.N else (math.nan, math.nan)
        rows.append((N, R, float(jm), float(js), float(rm), float(rs), lm))
        jmeans.append(float(jm))
    rep = Report("convergence")
    rep.table("ladder", ("N", "replications", "J_sup_mean", "J_sup_se", "evolution_residual_mean",
                         "evolution_residual_se", "max_loss"), rows)

    main = [o for (_, N, _), o in zip(jobs, results) if N == p.N]
    arr = np.array([o["msc"] for o in main])  # reps x phi x time x {M,S,C}
    mean, se = _mean_se(arr)
    zrows = []
    zmax = 0.0
    for i, phi in enumerate(phis):
        for j, k in enumerate(t_idx):
            for c, name in enumerate(("M", "S", "C")):
                z = float(mean[i, j, c] / se[i, j, c]) if se[i, j, c] > 0 else 0.0
                zmax = max(zmax, abs(z))
                zrows.append((phi.name, k * p.dt, name, float(mean[i, j, c]), float(se[i, j, c]), z))
    rep.table("martingale_z", ("phi", "t", "component", "mean", "se", "z"), zrows)
    rep.check("martingale z-scores", zmax, 3.0, zmax <= 3.0, f"max |z| over {len(zrows)} tests, {len(main)} runs")
    if kappa > 0:
        for a, b, Na, Nb in zip(jmeans, jmeans[1:], ladder, ladder[1:]):
            ratio = a / b if b > 0 else math.inf
            expect = math.sqrt(Nb / Na)
            lo, hi = (1.5, 3.0) if abs(expect - 2.0) < 1e-9 else (0.75 * expect, 1.5 * expect)
            rep.check(f"J sup-norm ratio N={Na}->{Nb}", ratio, f"[{lo:g}, {hi:g}]", lo <= ratio <= hi)
    else:
        lm = max(r[-1] for r in rows)
        rep.check("zero loss at kappa=0", lm, 0.0, lm == 0.0)
    rep.info.update(kappa=kappa, replications=dict(zip(map(str, ladder), counts)), interaction=drift is not None)
    return rep


# ---------------------------------------------------------------------------
# class-lambda


def _jackknife_slope(logx, Y):
    """Slope of log(mean Y) on logx and its jackknife SE over the rows of Y."""
    Y = np.asarray(Y, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):  # an all-zero column gives a nan slope
        full = np.polyfit(logx, np.log(Y.mean(axis=0)), 1)[0]
        n = Y.shape[0]
        if n < 2:
            return float(full), math.nan
        loo = np.array([np.polyfit(logx, np.log(np.delete(Y, i, axis=0).mean(axis=0)), 1)[0] for i in range(n)])
    se = math.sqrt((n - 1) / n * float(np.sum((loo - loo.mean()) ** 2)))
    return float(full), se


TAIL_LAMBDAS = (4.0, 6.0, 8.0)
PAIR_EPS = (0.02, 0.05, 0.1)
PAIR_T = 1.0
CONCENTRATION_POINT = 1.0


def cmd_class_lambda(cfg: ExperimentConfig, threads: int | None = None) -> Report:
    """Boundary decay, tails, pair probabilities and spatial concentration."""
    threads = threads or cfg.experiment.threads
    coeffs, law, drift = cfg.coefficient_set(), cfg.initial_law(), cfg.interaction_drift()
    p = cfg.particles
    eps = np.array(sorted(cfg.ladders.epsilon))
    K = steps_for(p.T, p.dt)
    snaps = p.snapshot_times or (p.T,)

    def run(r):
        noise = _shared_noise(cfg, p.T, r)
        sc = _sim_config(cfg, p.N, r, snapshot_times=snaps)
        bd = np.zeros(eps.size)
        conc = np.zeros(eps.size)

        def obs(k, t, state, mu_values):
            if k == K:
                return
            x = state.X[state.alive]
            m = EmpiricalMeasure(x, state.N)
            bd[:] += p.dt * interval_masses(m, 0.0, eps) ** 2
            a = CONCENTRATION_POINT
            conc[:] += p.dt * interval_masses(m, a, a + eps) ** 2

        sim = simulate(sc, coeffs, law, noise, observers=[obs], drift=drift)
        tails = np.array([[interval_masses(m, lam, [math.inf])[0] for lam in TAIL_LAMBDAS] for _, m in sim.snapshots])
        return bd.copy(), conc.copy(), tails.max(axis=0)

    out = _pmap(run, range(cfg.mc.replications), threads)
    BD = np.array([o[0] for o in out])
    CO = np.array([o[1] for o in out])
    TL = np.array([o[2] for o in out])
    rep = Report("class-lambda")
    le = np.log(eps)
    slope, sse = _jackknife_slope(le, BD)
    cslope, csse = _jackknife_slope(le, CO)
    bm, bs = _mean_se(BD)
    cm, cs = _mean_se(CO)
    rep.table("boundary_decay", ("epsilon", "boundary_mean", "boundary_se", "concentration_mean", "concentration_se"),
              [(float(e), float(a), float(b), float(c), float(d)) for e, a, b, c, d in zip(eps, bm, bs, cm, cs)])
    rep.check("boundary decay slope lower bound", slope - 3 * sse, 1.0, slope - 3 * sse > 1.0,
              f"slope {slope:.4f} +- {sse:.4f} (jackknife SE)")
    rep.info.update(boundary_slope=slope, boundary_slope_se=sse, concentration_slope=cslope,
                    concentration_slope_se=csse, concentration_point=CONCENTRATION_POINT)

    tm, ts = _mean_se(TL)
    trows = []
    for lam, m_, s_ in zip(TAIL_LAMBDAS, tm, ts):
        env = math.exp(-2.0 * lam)
        s_ = 0.0 if not np.isfinite(s_) else float(s_)
        ok = m_ <= env + 3 * s_
        trows.append((lam, float(m_), s_, env, ok))
        rep.check(f"tail mass lambda={lam:g}", float(m_), f"exp(-2 lambda) + 3 SE = {env + 3 * s_:.3g}", ok)
    rep.table("tails", ("lambda", "sup_t_tail_mean", "se", "envelope", "below"), trows)

    rho = float(coeffs.rho(PAIR_T))
    prows = []
    for i, e in enumerate(PAIR_EPS):
        pr, pse = pair_boundary_probability(rho, PAIR_T, e, cfg.mc.pair_samples, cfg.experiment.seed + i, law=law)
        ceil = pair_probability_ceiling(rho, PAIR_T, e)
        ok = pr <= ceil + 3 * pse
        prows.append((e, pr, pse, ceil, ok))
        rep.check(f"pair probability eps={e:g}", pr, f"ceiling + 3 SE = {ceil + 3 * pse:.3g}", ok)
    rep.table("pair_probability", ("epsilon", "probability", "se", "ceiling", "below"), prows)
    rep.info.update(replications=cfg.mc.replications, interaction=drift is not None)
    return rep


# ---------------------------------------------------------------------------
# compare


def cmd_compare(cfg: ExperimentConfig, threads: int | None = None) -> Report:
    """Particle system vs SPDE solver on one shared W0 for each kappa in the ladder."""
    threads = threads or cfg.experiment.threads
    coeffs0, law = cfg.coefficient_set(), cfg.initial_law()
    p = cfg.particles
    snaps = p.snapshot_times or (0.0, p.T)
    ladder = list(p.N_ladder) or [p.N]
    bin_width = 0.05
    noise = _shared_noise(cfg, p.T)
    fine = _solver_noise(noise, cfg.solver.dt)
    kappas = cfg.ladders.kappa
    jobs = [(kappa, N) for kappa in kappas for N in ladder]

    def run(job):
        kappa, N = job
        coeffs = coeffs0.with_kappa(kappa)
        sim = simulate(_sim_config(cfg, N, 0, kappa=kappa, snapshot_times=snaps), coeffs, law, noise)
        return sim

    def solve(kappa):
        coeffs = coeffs0.with_kappa(kappa)
        sc = solver_config(cfg, coeffs, law, p.T, snaps)
        return fdsolver.solve_spde_path(coeffs, fine, sc)

    sols = dict(zip(kappas, _pmap(solve, kappas, threads)))
    sims = dict(zip(jobs, _pmap(run, jobs, threads)))
    rep = Report("compare")
    rows = []
    for kappa in kappas:
        comps = {N: fdsolver.compare_particle_vs_solver(sims[(kappa, N)], sols[kappa], bin_width) for N in ladder}
        for N, c in comps.items():
            rows += [(kappa, N, *r) for r in c.rows()]
        c0 = comps[ladder[0]]
        l1 = float(np.max(c0.l1))
        md = float(np.max(c0.mass_diff))
        rep.check(f"L1 distance kappa={kappa:g}", l1, 0.05, l1 <= 0.05, f"N={ladder[0]}, max over snapshots")
        rep.check(f"mass difference kappa={kappa:g}", md, 0.01, md <= 0.01, f"N={ladder[0]}")
        if snaps[0] == 0.0:
            rep.check(f"L1 at t=0 kappa={kappa:g}", float(c0.l1[0]), 0.01, c0.l1[0] <= 0.01, "sampling of nu_0")
        for Na, Nb in zip(ladder, ladder[1:]):
            ratio = float(comps[Na].stat[-1] / comps[Nb].stat[-1])
            expect = math.sqrt(Nb / Na)
            lo, hi = (1.4, 3.0) if abs(expect - 2.0) < 1e-9 else (0.7 * expect, 1.5 * expect)
            rep.check(f"statistical component ratio kappa={kappa:g} N={Na}->{Nb}", ratio,
                      f"[{lo:g}, {hi:g}]", lo <= ratio <= hi, f"at t={snaps[-1]:g}")
        rep.info[f"solver_kappa_{kappa:g}"] = sols[kappa].info
    rep.table("comparison", ("kappa", "N", "t", "l1", "mass_diff", "stat_component"), rows)
    rep.info.update(bin_width=bin_width)
    return rep


# ---------------------------------------------------------------------------
# kappa-limits


def cmd_kappa_limits(cfg: ExperimentConfig, threads: int | None = None) -> Report:
    """Distances from elastic solutions to the absorbing and reflecting ones on the kappa ladder."""
    threads = threads or cfg.experiment.threads
    coeffs, law = cfg.coefficient_set(), cfg.initial_law()
    T = cfg.particles.T
    noise = _solver_noise(_shared_noise(cfg, T), cfg.solver.dt)
    sc = solver_config(cfg, coeffs, law, T)
    ladder = sorted(cfg.ladders.kappa)
    if len(ladder) < 2:
        raise ConfigError("ladders.kappa needs at least two values")
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            tab = fdsolver.kappa_limit_study(ladder, noise, coeffs, sc, map_fn=pool.map)
    else:
        tab = fdsolver.kappa_limit_study(ladder, noise, coeffs, sc)
    rep = Report("kappa-limits")
    rep.table("kappa_ladder", ("kappa", "d_absorbing", "d_reflecting", "mass"), tab.rows())
    dA, dR = tab.d_absorbing, tab.d_reflecting
    rep.check("distance to absorbing strictly decreasing", float(np.max(np.diff(dA))), "< 0", bool(np.all(np.diff(dA) < 0)))
    rep.check("distance to reflecting strictly increasing", float(np.min(np.diff(dR))), "> 0", bool(np.all(np.diff(dR) > 0)))
    if ladder[0] <= 0.01:
        rep.check(f"d_R at kappa={ladder[0]:g}", float(dR[0]), 0.02, dR[0] <= 0.02)
    if ladder[-1] >= 100:
        rep.check(f"d_A at kappa={ladder[-1]:g}", float(dA[-1]), 0.05, dA[-1] <= 0.05)
    rep.info.update(solver=sc.manifest(), mass_absorbing=tab.mass_absorbing, mass_reflecting=tab.mass_reflecting)
    return rep


# ---------------------------------------------------------------------------
# mass-loss


class _KernelLossObserver:
    """kappa int <nu_s, (sigma^2/2) G_eps(0, .)> ds by left-endpoint sums, per eps."""

    def __init__(self, coeffs: CoefficientSet, eps, dt: float, K: int):
        self.coeffs, self.eps, self.dt, self.K = coeffs, list(eps), dt, K
        self.total = np.zeros(len(self.eps))

    def __call__(self, k, t, state, mu_values):
        if k == self.K:
            return
        kappa = self.coeffs.kappa
        x = state.X[state.alive]
        for i, e in enumerate(self.eps):
            near = x[x < 12.0 * math.sqrt(e) + kappa * e]
            if near.size:
                sig = self.coeffs.sigma(t, near) * np.ones_like(near)
                g = kernels.elastic_kernel_at_boundary(e, kappa, near)
                self.total[i] += self.dt * kappa * float(np.sum(0.5 * sig * sig * g)) / state.N


def cmd_mass_loss(cfg: ExperimentConfig, threads: int | None = None) -> Report:
    """Kernel-side loss estimate vs realized loss on the eps ladder, plus solver identities."""
    threads = threads or cfg.experiment.threads
    coeffs, law = cfg.coefficient_set(), cfg.initial_law()
    if math.isinf(coeffs.kappa):
        raise ConfigError("the boundary loss identity needs a finite kappa (the absorbing boundary has no "
                          "elastic Robin condition); use mode elastic or reflecting")
    p = cfg.particles
    K = steps_for(p.T, p.dt)
    eps = sorted(cfg.ladders.epsilon, reverse=True)

    def run(r):
        noise = _shared_noise(cfg, p.T, r)
        obs = _KernelLossObserver(coeffs, eps, p.dt, K)
        sim = simulate(_sim_config(cfg, p.N, r, snapshot_times=()), coeffs, law, noise, observers=[obs])
        return obs.total.copy(), float(sim.loss[-1])

    out = _pmap(run, range(cfg.mc.replications), threads)
    KS = np.array([o[0] for o in out])
    LS = np.array([o[1] for o in out])
    km, ks = _mean_se(KS)
    lm, ls = _mean_se(LS)
    dm, ds = _mean_se(KS - LS[:, None])
    gaps = np.abs(km - lm)
    combined = np.sqrt(ks**2 + ls**2)
    rep = Report("mass-loss")
    rep.table("loss_identity", ("epsilon", "kernel_side", "kernel_se", "loss_side", "loss_se", "abs_gap",
                                "combined_se", "paired_se"),
              [(e, float(a), float(b), float(lm), float(ls), float(g), float(c), float(d))
               for e, a, b, g, c, d in zip(eps, km, ks, gaps, combined, ds)])
    if coeffs.kappa == 0:
        total = float(np.max(np.abs(KS))) + float(np.max(np.abs(LS)))
        rep.check("both sides zero at kappa=0", total, 0.0, total == 0.0)
    else:
        c = float(combined[-1])
        c_ok = gaps[-1] <= 3 * c if c > 0 else gaps[-1] == 0
        rep.check(f"kernel vs loss at eps={eps[-1]:g}", float(gaps[-1]), f"3 SE = {3 * c:.3g}", c_ok,
                  f"paired SE {float(ds[-1]):.3g}")
        mono = bool(np.all(np.diff(gaps) < 0))
        rep.check("gap decreasing along the eps ladder", float(np.max(np.diff(gaps))), "< 0", mono)

    noise = _solver_noise(_shared_noise(cfg, p.T), cfg.solver.dt)
    sc = solver_config(cfg, coeffs, law, p.T)
    e_small = eps[-1]
    mon = fdsolver.WeakBCMonitor(coeffs, e_small, sc.V0.x, coeffs.kappa)
    res = fdsolver.solve_spde_path(coeffs, noise, sc, observers=[mon])
    ml = fdsolver.mass_loss_series(res, coeffs)
    wb = mon.residual(noise)
    if coeffs.kappa == 0:
        # nothing leaves through the boundary; the relative gap would be roundoff over roundoff
        gap = ml.absolute_gap
        rep.check("solver mass conserved at kappa=0", gap, 1e-10, gap <= 1e-10, "absolute gap at T")
    else:
        gap = ml.relative_gap
        rep.check("solver mass-loss consistency", gap, 0.05, gap <= 0.05, "relative gap at T")
    rep.check(f"solver weak boundary residual eps={e_small:g}", wb.sup, 5e-3, wb.sup <= 5e-3)
    rep.table("solver_mass_loss", ("t", "rate", "predicted", "actual", "weak_bc_residual"),
              list(zip(ml.t, ml.rate, ml.predicted, ml.actual, wb.cumulative)))
    rep.info.update(replications=cfg.mc.replications, solver=res.info, se_rule="unpaired combined SE")
    return rep


# ---------------------------------------------------------------------------
# simulate / solve


def probe_pairs(seed: int, n_pairs: int, n_atoms: int = 200):
    """Random pairs of sub-probability measures for the Lipschitz probe.

    The second measure moves every atom by a random amount and drops a random
    fraction, so the pairs span both small and O(1) distances.
    """
    pairs = []
    for i in range(n_pairs):
        g = normals(seed, Stream.PROBE, i, size=2 * n_atoms)
        u = uniforms(seed, Stream.PROBE, i, 1, size=n_atoms + 2)
        scale = 0.5 + 3.0 * u[-1]
        shift = 10.0 ** (-3.0 + 3.0 * u[-2])
        a = np.abs(scale * g[:n_atoms])
        b = np.abs(a + shift * g[n_atoms:])
        keep = u[:n_atoms] > 0.2 * u[-1]
        pairs.append((EmpiricalMeasure(a, n_atoms), EmpiricalMeasure(b[keep], n_atoms)))
    return pairs


def cmd_simulate(cfg: ExperimentConfig, threads: int | None = None) -> Report:
    """One particle run (linear, or mean-field when interaction is enabled)."""
    coeffs, law, drift = cfg.coefficient_set(), cfg.initial_law(), cfg.interaction_drift()
    p = cfg.particles
    noise = _shared_noise(cfg, p.T)
    sim = simulate(_sim_config(cfg, p.N, 0), coeffs, law, noise, drift=drift, lipschitz_check=drift is not None)
    rep = Report("simulate")
    rep.table("loss", ("t", "loss", "alive", "j_series"), list(zip(sim.t_grid, sim.loss, sim.alive_counts, sim.j_series)))
    rows = []
    for t, m in sim.snapshots:
        rows += [(t, x) for x in m.atoms]
    rep.table("snapshots", ("t", "position"), rows)
    nonneg = all(m.atoms.size == 0 or m.atoms[0] >= 0 for _, m in sim.snapshots)
    rep.check("positions non-negative", 0.0 if nonneg else 1.0, 0.0, nonneg)
    mono = bool(np.all(np.diff(sim.loss) >= 0))
    rep.check("loss non-decreasing", float(np.min(np.diff(sim.loss))) if sim.loss.size > 1 else 0.0, ">= 0", mono)
    if drift is not None:
        flags = lipschitz_probe(drift, probe_pairs(cfg.experiment.seed, cfg.interaction.probe_pairs))
        flags += sim.lipschitz_flags
        rep.check("Lipschitz probe", len(flags), 0, not flags,
                  f"c={drift.lipschitz_c:g}, {cfg.interaction.probe_pairs} random pairs + consecutive snapshots")
        rep.info["lipschitz_c"] = drift.lipschitz_c
    rep.info.update(N=p.N, kappa=sim.kappa, final_mass=float(1 - sim.loss[-1]))
    return rep


def cmd_solve(cfg: ExperimentConfig, threads: int | None = None) -> Report:
    """One SPDE solve on the common-noise path of replication 0."""
    coeffs, law = cfg.coefficient_set(), cfg.initial_law()
    p = cfg.particles
    snaps = p.snapshot_times or (0.0, p.T)
    noise = _solver_noise(_shared_noise(cfg, p.T), cfg.solver.dt)
    sc = solver_config(cfg, coeffs, law, p.T, snaps)
    res = fdsolver.solve_spde_path(coeffs, noise, sc)
    rep = Report("solve")
    rep.table("mass", ("t", "mass", "boundary_value", "tail_mass"),
              list(zip(res.t, res.mass, res.boundary_value, res.tail_mass)))
    rep.table("snapshots", ("t", "x", "V"), [(s, x, v) for s, V in res.snapshots for x, v in zip(V.x, V.values)])
    rise = float(np.max(np.diff(res.mass))) if res.mass.size > 1 else 0.0
    rep.check("mass non-increasing", rise, 1e-6, rise <= 1e-6)
    rep.check("tail mass", float(np.max(res.tail_mass)), sc.tail_tol, np.max(res.tail_mass) <= sc.tail_tol)
    if not math.isinf(res.kappa):
        ml = fdsolver.mass_loss_series(res, coeffs)
        rep.check("mass-loss consistency", ml.relative_gap, 0.05, ml.relative_gap <= 0.05 or ml.actual[-1] < 1e-12)
    rep.info.update(solver=res.info)
    return rep


COMMAND_FUNCS = {
    "verify-kernels": cmd_verify_kernels,
    "convergence": cmd_convergence,
    "class-lambda": cmd_class_lambda,
    "compare": cmd_compare,
    "kappa-limits": cmd_kappa_limits,
    "mass-loss": cmd_mass_loss,
    "simulate": cmd_simulate,
    "solve": cmd_solve,
}


def run_command(cfg: ExperimentConfig) -> Report:
    kind = cfg.experiment.kind
    fn = COMMAND_FUNCS[kind]
    return fn(cfg)
