"""Interior-point driver with pseudo-dynamic regularization and active sets.

The flow problem min c'x s.t. Ax = b, l <= x <= u is solved by a Mehrotra
predictor-corrector iteration on the barrier KKT system.  Each Newton step is
reduced to a graph-Laplacian solve (see schur); a mass term rho/dt^2 on the
metric diagonal, with the time step adapted to the smallest inequality
multiplier, keeps that Laplacian uniformly solvable near the optimum.  Arcs
whose slack collapses are frozen at their bound (active set) and their edges
removed from the graph.

Sign conventions: slacks g = (x - l; u - x), multipliers s ordered the same
way, residuals f_x = c - A'y - s_low + s_up, f_y = b - Ax,
f_s_i = sigma_mu - g_i s_i.  The reduced saddle system handed to the linear
solver is [D~, A'; A, 0] (dx, w) = (rx, f_y) with positive diagonal
D~ = s_low/g_low + s_up/g_up + rho/dt^2, rx = -(f~_x - s_low/g_low*... )
evaluated arc-wise; the Newton dual step is then dy = -w.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import amg, schur
from .netcore import Network
from .schur import Metric, SchurSolveError, apply_incidence, apply_incidence_t

_STALL_ALPHA = 1e-12


class SolverError(RuntimeError):
    pass


class StallError(SolverError):
    """Line search produced a negligible step in both blocks."""


class InfeasibleProblemError(SolverError):
    """Primal residual stagnated while the barrier parameter vanished."""


class NonConvergenceError(SolverError):
    """Newton iteration cap reached; carries the last state and records."""

    def __init__(self, message: str, state=None, records=None):
        super().__init__(message)
        self.state = state
        self.records = records or []


@dataclass(frozen=True)
class SolverConfig:
    rho: float = 1e-6            # mass density of the regularizing term
    eta: float = 1e-4            # adaptive time-step threshold on min(s)
    eps_x: float = 1e-6          # activation tolerance on slacks
    eps_s: float = 1e-8          # deactivation tolerance on s/g
    tau: float = 0.995           # fraction-to-boundary factor
    tol: float = 1e-8            # convergence tolerance on scaled residuals
    max_newton: int = 200
    krylov_tol: float = 1e-10
    krylov_maxit: int = 500
    solver: str = "cg"           # "cg" | "bicgstab"
    amg_theta: float = amg.DEFAULT_THETA
    regularize: bool = True
    use_active_set: bool = True
    # Activation is evaluated every Newton step by default; set a finite
    # threshold to defer it until mu has dropped that far.  Deferral turned
    # out to shatter the graph in one shot at the crossing, with a
    # near-singular step as the price, so the ungated rule is the default.
    activation_mu: float = np.inf
    keep_operator: bool = False  # retain the last pinned Schur matrix

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")
        for name in ("rho", "eta", "eps_x", "eps_s", "tol", "krylov_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.solver not in ("cg", "bicgstab"):
            raise ValueError("solver must be 'cg' or 'bicgstab'")


@dataclass(frozen=True)
class ActiveSet:
    lower_active: frozenset = frozenset()
    upper_active: frozenset = frozenset()

    @property
    def size(self) -> int:
        return len(self.lower_active) + len(self.upper_active)

    def arc_mask(self, m: int) -> np.ndarray:
        """True for arcs with either bound constraint active."""
        mask = np.zeros(m, dtype=bool)
        for idx in (self.lower_active, self.upper_active):
            if idx:
                mask[np.fromiter(idx, dtype=np.int64)] = True
        return mask


@dataclass
class IpmState:
    x: np.ndarray
    x_prev: np.ndarray
    y: np.ndarray
    s: np.ndarray          # length 2m: lower-slack multipliers then upper
    mu: float
    dt: float = 1.0
    beta: float = 0.0
    iter: int = 0
    active: ActiveSet = field(default_factory=ActiveSet)


@dataclass(frozen=True)
class Residuals:
    f_x: np.ndarray
    f_y: np.ndarray
    f_s: np.ndarray


@dataclass
class IterationRecord:
    iter: int
    mu: float
    res_x: float
    res_y: float
    comp: float
    krylov_iters: int
    active_lower: int
    active_upper: int
    dt: float
    beta: float


@dataclass
class SolveResult:
    flow: np.ndarray
    y: np.ndarray
    cost: float
    newton_iters: int
    krylov_total: int
    records: list[IterationRecord]
    schur_matrix: object = None


def slacks(x: np.ndarray, net: Network) -> tuple[np.ndarray, np.ndarray]:
    return x - net.lower, net.upper - x


def initial_state(net: Network) -> IpmState:
    """Midpoint flow, zero multipliers on nodes, s = max(1, mu0/g), mu0 = 1."""
    x = 0.5 * (net.lower + net.upper)
    g_l, g_u = slacks(x, net)
    s = np.concatenate([np.maximum(1.0, 1.0 / g_l), np.maximum(1.0, 1.0 / g_u)])
    mu = float(np.mean(np.concatenate([g_l, g_u]) * s)) if net.m else 0.0
    return IpmState(x=x, x_prev=x.copy(), y=np.zeros(net.n), s=s, mu=mu)


def kkt_residuals(state: IpmState, net: Network, sigma_mu: float) -> Residuals:
    """First-order optimality residuals; sigma_mu = 0 gives the exact KKT."""
    m = net.m
    s_l, s_u = state.s[:m], state.s[m:]
    g_l, g_u = slacks(state.x, net)
    f_x = net.cost - apply_incidence_t(net, state.y) - s_l + s_u
    f_y = net.supply - apply_incidence(net, state.x, np.ones(m, dtype=bool))
    f_s = sigma_mu - np.concatenate([g_l * s_l, g_u * s_u])
    return Residuals(f_x=f_x, f_y=f_y, f_s=f_s)


def unconstrained_step(state: IpmState, net: Network, cfg: SolverConfig
                       ) -> np.ndarray:
    """Pseudo-dynamic predicted point: x + dt*v - dt^2 (c/rho + beta*v)."""
    v = (state.x - state.x_prev) / state.dt
    return (state.x + state.dt * v
            - state.dt ** 2 * (net.cost / cfg.rho + state.beta * v))


def adaptive_dt(state: IpmState, cfg: SolverConfig) -> tuple[float, float]:
    """Time step and damping from the smallest inequality multiplier.

    Near the boundary (min s <= eta) the step shrinks so the mass term
    rho/dt^2 = eta - min(s) props up the metric; otherwise dt = 1 with no
    damping.  The measure-zero boundary case min(s) = eta keeps dt = 1 and
    switches damping on, continuing the else-branch.
    """
    s_min = float(state.s.min()) if state.s.size else np.inf
    if s_min < cfg.eta:
        return float(np.sqrt(cfg.rho / (cfg.eta - s_min))), 1.0
    if s_min == cfg.eta:
        return 1.0, 1.0
    return 1.0, 0.0


def line_search(state: IpmState, net: Network, dx: np.ndarray, ds: np.ndarray,
                cfg: SolverConfig) -> tuple[float, float]:
    """Fraction-to-boundary step lengths over the inactive constraints.

    Closed form over blocking coordinates; returns (1, 1) when nothing
    blocks.  Guarantees strict interiority of the post-step iterate.
    """
    m = net.m
    free = ~state.active.arc_mask(m)
    g_l, g_u = slacks(state.x, net)

    def max_step(gap: np.ndarray, d: np.ndarray) -> float:
        blocking = d < 0
        if not np.any(blocking):
            return np.inf
        return float(np.min(gap[blocking] / -d[blocking]))

    a_x = min(max_step(g_l[free], dx[free]), max_step(g_u[free], -dx[free]))
    smask = np.concatenate([free, free])
    a_s = max_step(state.s[smask], ds[smask])
    alpha_x = min(1.0, cfg.tau * a_x)
    alpha_s = min(1.0, cfg.tau * a_s)
    return alpha_x, alpha_s


def update_active_set(state: IpmState, net: Network, cfg: SolverConfig
                      ) -> ActiveSet:
    """Activate constraints with g <= eps_x; release those with s <= eps_s*g.

    At most one bound per arc activates; when both slacks qualify the tighter
    one wins and ties go to the upper bound.
    """
    m = net.m
    g_l, g_u = slacks(state.x, net)
    s_l, s_u = state.s[:m], state.s[m:]
    lower = set(state.active.lower_active)
    upper = set(state.active.upper_active)

    for j in sorted(lower):
        if s_l[j] <= cfg.eps_s * g_l[j]:
            lower.discard(j)
    for j in sorted(upper):
        if s_u[j] <= cfg.eps_s * g_u[j]:
            upper.discard(j)

    taken = lower | upper
    lo_hit = (g_l <= cfg.eps_x)
    up_hit = (g_u <= cfg.eps_x)
    for j in np.flatnonzero(lo_hit | up_hit):
        j = int(j)
        if j in taken:
            continue
        if lo_hit[j] and up_hit[j]:
            (upper if g_u[j] <= g_l[j] else lower).add(j)
        elif up_hit[j]:
            upper.add(j)
        else:
            lower.add(j)
    return ActiveSet(lower_active=frozenset(lower), upper_active=frozenset(upper))


def build_metric(state: IpmState, net: Network, cfg: SolverConfig) -> Metric:
    """Regularized metric diagonal s/g summed per arc plus the mass term."""
    m = net.m
    g_l, g_u = slacks(state.x, net)
    s_l, s_u = state.s[:m], state.s[m:]
    mass = cfg.rho / state.dt ** 2 if cfg.regularize else 0.0
    free = ~state.active.arc_mask(m)
    dtilde = np.ones(m)
    dtilde[free] = s_l[free] / g_l[free] + s_u[free] / g_u[free] + mass
    return Metric(dtilde=dtilde, free=free)


def _dirichlet_values(state: IpmState, net: Network) -> np.ndarray:
    """Per-arc Newton target on active arcs: step straight onto the bound."""
    m = net.m
    val = np.zeros(m)
    for j in state.active.lower_active:
        val[j] = net.lower[j] - state.x[j]
    for j in state.active.upper_active:
        val[j] = net.upper[j] - state.x[j]
    return val


def _reduced_rx(f_x_mod, f_s, inv_gl, inv_gu, free, dirichlet):
    m = inv_gl.size
    rx = dirichlet.copy()
    rx[free] = -(f_x_mod - (f_s[:m] * inv_gl - f_s[m:] * inv_gu))[free]
    return rx


def _refresh_active_multipliers(x, y, s, net, active: ActiveSet, mu: float):
    """Assign active-arc multipliers from stationarity so f_x vanishes there.

    The free bound of the arc gets the central value mu/g; the bound in
    contact absorbs the reduced cost.  A wrongly-activated constraint then
    shows a nonpositive multiplier, which the deactivation test releases.
    """
    m = net.m
    g_l, g_u = slacks(x, net)
    red = net.cost - apply_incidence_t(net, y)
    for j in active.lower_active:
        s[m + j] = mu / max(g_u[j], 1e-300)
        s[j] = red[j] + s[m + j]
    for j in active.upper_active:
        s[j] = mu / max(g_l[j], 1e-300)
        s[m + j] = s[j] - red[j]


def _mean_complementarity(x, s, net, free) -> float:
    m = net.m
    g_l, g_u = slacks(x, net)
    prods = np.concatenate([(g_l * s[:m])[free], (g_u * s[m:])[free]])
    return float(prods.mean()) if prods.size else 0.0


def mehrotra_step(state: IpmState, net: Network, cfg: SolverConfig,
                  linsolve) -> tuple[IpmState, int]:
    """One predictor-corrector Newton step through the supplied linear solver.

    linsolve(rx, ry) must solve the reduced saddle system for the current
    matrix; it is called twice (affine predictor, centred corrector) so one
    preconditioner setup serves both.  Returns the advanced state and the
    Krylov iterations consumed.
    """
    m = net.m
    free = ~state.active.arc_mask(m)
    g_l, g_u = slacks(state.x, net)
    s_l, s_u = state.s[:m], state.s[m:]
    inv_gl = np.zeros(m)
    inv_gl[free] = 1.0 / g_l[free]
    inv_gu = np.zeros(m)
    inv_gu[free] = 1.0 / g_u[free]
    n_inact = 2 * int(free.sum())

    # Mass-term pull towards the pseudo-dynamic predicted point replaces the
    # static cost gradient; it equals f_x exactly when beta = dt = 1.
    if cfg.regularize:
        x0_next = unconstrained_step(state, net, cfg)
        c_eff = (cfg.rho / state.dt ** 2) * (state.x - x0_next)
    else:
        c_eff = net.cost
    f_x_mod = c_eff - apply_incidence_t(net, state.y) - s_l + s_u
    f_y = net.supply - apply_incidence(net, state.x, np.ones(m, dtype=bool))
    dirichlet = _dirichlet_values(state, net)

    def recover_ds(f_s, dx):
        ds = np.zeros(2 * m)
        ds[:m] = (f_s[:m] - s_l * dx) * inv_gl
        ds[m:] = (f_s[m:] + s_u * dx) * inv_gu
        return ds

    krylov_its = 0

    # Affine predictor: sigma_mu = 0.
    f_s_aff = -np.concatenate([g_l * s_l, g_u * s_u])
    rx = _reduced_rx(f_x_mod, f_s_aff, inv_gl, inv_gu, free, dirichlet)
    dx_aff, w_aff, stats = linsolve(rx, f_y)
    krylov_its += stats.iterations
    ds_aff = recover_ds(f_s_aff, dx_aff)
    ax_aff, as_aff = line_search(state, net, dx_aff, ds_aff, cfg)

    gl_aff = g_l + ax_aff * dx_aff
    gu_aff = g_u - ax_aff * dx_aff
    sl_aff = s_l + as_aff * ds_aff[:m]
    su_aff = s_u + as_aff * ds_aff[m:]
    if n_inact:
        mu_aff = float(((gl_aff * sl_aff)[free].sum()
                        + (gu_aff * su_aff)[free].sum()) / n_inact)
        sigma = min(1.0, max(0.0, (mu_aff / state.mu) ** 3)) if state.mu > 0 else 0.0
    else:
        sigma = 0.0

    # Corrector: centring plus the second-order complementarity term.
    f_s_cor = np.concatenate([
        sigma * state.mu - g_l * s_l - dx_aff * ds_aff[:m],
        sigma * state.mu - g_u * s_u + dx_aff * ds_aff[m:],
    ])
    rx = _reduced_rx(f_x_mod, f_s_cor, inv_gl, inv_gu, free, dirichlet)
    dx, w, stats = linsolve(rx, f_y)
    krylov_its += stats.iterations
    dy = -w
    ds = recover_ds(f_s_cor, dx)
    alpha_x, alpha_s = line_search(state, net, dx, ds, cfg)
    if max(alpha_x, alpha_s) < _STALL_ALPHA:
        raise StallError(
            f"step lengths collapsed (alpha_x={alpha_x:.2e}, "
            f"alpha_s={alpha_s:.2e}) at iteration {state.iter}")

    x_new = state.x + alpha_x * dx
    y_new = state.y + alpha_s * dy
    s_new = state.s + alpha_s * ds
    mu_new = _mean_complementarity(x_new, s_new, net, free)
    _refresh_active_multipliers(x_new, y_new, s_new, net, state.active, mu_new)

    new_state = replace(
        state, x=x_new, x_prev=state.x.copy(), y=y_new, s=s_new,
        mu=mu_new, iter=state.iter + 1)
    return new_state, krylov_its


def _release_arcs(state: IpmState, net: Network, cfg: SolverConfig,
                  released: set[int]) -> None:
    """Push deactivated arcs strictly interior and recentre their multipliers."""
    m = net.m
    for j in released:
        span = net.upper[j] - net.lower[j]
        delta = min(0.25 * span, max(10 * cfg.eps_x, 1e-4 * span))
        state.x[j] = np.clip(state.x[j], net.lower[j] + delta,
                             net.upper[j] - delta)
        g_l = state.x[j] - net.lower[j]
        g_u = net.upper[j] - state.x[j]
        mu = max(state.mu, cfg.tol)
        state.s[j] = mu / g_l
        state.s[m + j] = mu / g_u


def _eliminate_fixed_arcs(net: Network):
    """Force arcs with equal bounds and return (subnet, mapping, fixed flow)."""
    fixed = net.lower == net.upper
    if not np.any(fixed):
        return net, None, None
    keep = ~fixed
    x_fix = net.lower[fixed]
    supply = net.supply.copy()
    np.subtract.at(supply, net.tail[fixed], x_fix)
    np.add.at(supply, net.head[fixed], x_fix)
    sub = Network(n=net.n, tail=net.tail[keep], head=net.head[keep],
                  cost=net.cost[keep], lower=net.lower[keep],
                  upper=net.upper[keep], supply=supply)
    return sub, keep, x_fix


def solve(net: Network, cfg: SolverConfig | None = None) -> SolveResult:
    """Run the interior-point method to the configured tolerance.

    Per Newton iteration: adapt the time step, assemble the regularized
    metric and the pinned Schur Laplacian, build one AMG hierarchy, take a
    predictor-corrector step through it, then update the active set.
    Terminates when the scaled stationarity and conservation residuals and
    the mean complementarity all drop below cfg.tol.
    """
    cfg = cfg or SolverConfig()
    full_net = net
    net, keep, x_fix = _eliminate_fixed_arcs(net)

    if net.m == 0:
        if float(np.abs(net.supply).max(initial=0.0)) > cfg.tol:
            raise InfeasibleProblemError("no free arcs but nonzero supplies")
        flow = _expand_flow(full_net, keep, np.zeros(0), x_fix)
        return SolveResult(flow=flow, y=np.zeros(net.n),
                           cost=float(full_net.cost @ flow), newton_iters=0,
                           krylov_total=0, records=[])

    state = initial_state(net)
    records: list[IterationRecord] = []
    scale_c = 1.0 + float(np.abs(net.cost).max(initial=0.0))
    scale_b = 1.0 + float(np.abs(net.supply).max(initial=0.0))
    krylov_total = 0
    labels = None
    labels_mask = None
    last_operator = None
    fy_window: list[float] = []

    while True:
        res = kkt_residuals(state, net, 0.0)
        free = ~state.active.arc_mask(net.m)
        res_x = float(np.abs(res.f_x).max(initial=0.0)) / scale_c
        res_y = float(np.abs(res.f_y).max(initial=0.0)) / scale_b
        comp = _mean_complementarity(state.x, state.s, net, free)
        if records:
            rec = records[-1]
            rec.res_x, rec.res_y, rec.comp = res_x, res_y, comp
        if res_x <= cfg.tol and res_y <= cfg.tol and comp <= cfg.tol:
            break

        fy_window.append(res_y)
        if (state.mu <= cfg.tol and res_y > 1e3 * cfg.tol
                and len(fy_window) >= 6
                and fy_window[-1] > 0.9 * fy_window[-6]):
            raise InfeasibleProblemError(
                f"conservation residual stagnated at {res_y:.3e} while the "
                "barrier parameter vanished")
        if state.iter >= cfg.max_newton:
            raise NonConvergenceError(
                f"no convergence in {cfg.max_newton} Newton iterations "
                f"(res_x={res_x:.2e}, res_y={res_y:.2e}, comp={comp:.2e})",
                state=state, records=records)

        if cfg.regularize:
            dt, beta = adaptive_dt(state, cfg)
        else:
            dt, beta = 1.0, 0.0
        state.dt, state.beta = dt, beta

        metric = build_metric(state, net, cfg)
        if labels is None or not np.array_equal(labels_mask, metric.free):
            labels = schur.connected_components_labelprop(net, free=metric.free)
            labels_mask = metric.free.copy()
        op = schur.SchurOperator(
            L=schur.assemble_schur(net, metric, state.active).L,
            components=labels)
        op = schur.pin_components(op)
        if cfg.keep_operator:
            last_operator = op
        hierarchy = amg.build_hierarchy(op.L, cfg.amg_theta)
        precond = hierarchy.as_preconditioner()

        def linsolve(rx, ry, _op=op, _metric=metric, _pc=precond):
            return schur.solve_newton_system(_op, _metric, net, rx, ry, _pc, cfg)

        state, kry = mehrotra_step(state, net, cfg, linsolve)
        krylov_total += kry
        records.append(IterationRecord(
            iter=state.iter, mu=state.mu, res_x=np.nan, res_y=np.nan,
            comp=np.nan, krylov_iters=kry,
            active_lower=len(state.active.lower_active),
            active_upper=len(state.active.upper_active),
            dt=dt, beta=beta))

        if cfg.use_active_set and state.mu < cfg.activation_mu:
            new_active = update_active_set(state, net, cfg)
            released = ((set(state.active.lower_active) - set(new_active.lower_active))
                        | (set(state.active.upper_active) - set(new_active.upper_active)))
            if released:
                _release_arcs(state, net, cfg, released)
            state.active = new_active

    flow = _expand_flow(full_net, keep, state.x, x_fix)
    return SolveResult(flow=flow, y=state.y, cost=float(full_net.cost @ flow),
                       newton_iters=state.iter, krylov_total=krylov_total,
                       records=records, schur_matrix=last_operator)


def _expand_flow(full_net: Network, keep, x_free: np.ndarray, x_fix):
    if keep is None:
        return x_free.copy()
    flow = np.empty(full_net.m)
    flow[keep] = x_free
    flow[~keep] = x_fix
    return flow
