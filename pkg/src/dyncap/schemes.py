"""One linearized sweep per solver strategy.

Strategies combine a coupling style with a linearization:

* monolithic: all three fields are updated together from the current iterate;
* splitting: the flow pair (psi, theta) is solved first with the
  concentration frozen, then transport is solved with the new flow fields;
* Newton: constitutive laws expanded to first order around the iterate;
* L-scheme: constitutive laws frozen at the iterate plus fixed stabilization
  terms L (gradient pairing for the flow equation per the governing weak
  form; a mass pairing is available behind ``l_stabilization = mass``);
* mixed: a few L-scheme sweeps to improve the initial guess, then Newton.

Every sweep assembles the block system of the linearized weak form, applies
Dirichlet rows (pressure head on its Dirichlet segments, concentration on
its own), solves, and clamps the water content back into [theta_eps, 1].
Increment norms between consecutive iterates are measured in the discrete
L2 norm by default.

The convective water flux in the transport equation is lagged to the
previous time level by default; ``flux_lag = "current-iterate"`` re-evaluates
it from the newest flow fields instead (the two converge to nearly identical
solutions).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import assembly as fem
from .assembly import EZ, BlockPattern, ElementTables, MeshPattern
from .linalg import ReusableLU, discrete_l2_norm
from .problems import Problem

STRATEGIES = (
    "MON-Newton",
    "MON-LS",
    "NonLinS-Newton",
    "NonLinS-LS",
    "MON-Mixed",
    "NonLinS-Mixed",
)

_LS_USERS = ("MON-LS", "NonLinS-LS", "MON-Mixed", "NonLinS-Mixed")


@dataclass
class StateTriple:
    """Nodal coefficients of pressure head, water content, concentration."""

    psi: np.ndarray
    theta: np.ndarray
    c: np.ndarray
    time: float = 0.0

    def copy(self) -> "StateTriple":
        return StateTriple(self.psi.copy(), self.theta.copy(), self.c.copy(), self.time)

    def is_finite(self) -> bool:
        return bool(
            np.all(np.isfinite(self.psi))
            and np.all(np.isfinite(self.theta))
            and np.all(np.isfinite(self.c))
        )


@dataclass
class SchemeConfig:
    """Solver strategy selection, stabilization constants, and stopping rules."""

    strategy: str = "MON-LS"
    l1_psi: float = 0.01
    l1_theta: float = 0.01
    l2: float = 0.01
    l3: float = 0.1
    tol: float = 1e-6
    max_iter: int = 100
    mixed_switch: int = 5
    mixed_switch_tol: float = 1e-2
    flux_lag: str = "previous-time"  # or "current-iterate"
    l_stabilization: str = "gradient"  # or "mass"
    splitting_mode: str = "merged"  # or "nested"
    newton_fallback: bool = False
    norm: str = "l2"  # or "euclidean"
    divergence_guard: float = 1e8
    lump_mass: bool = False

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if self.tol <= 0:
            raise ValueError(f"tolerance must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.flux_lag not in ("previous-time", "current-iterate"):
            raise ValueError(f"unknown flux_lag {self.flux_lag!r}")
        if self.l_stabilization not in ("gradient", "mass"):
            raise ValueError(f"unknown l_stabilization {self.l_stabilization!r}")
        if self.splitting_mode not in ("merged", "nested"):
            raise ValueError(f"unknown splitting_mode {self.splitting_mode!r}")
        if self.norm not in ("l2", "euclidean"):
            raise ValueError(f"unknown norm {self.norm!r}")
        ls = (self.l1_psi, self.l1_theta, self.l2, self.l3)
        if any(v < 0 for v in ls):
            raise ValueError("stabilization constants must be nonnegative")
        if self.strategy in _LS_USERS and any(v <= 0 for v in ls):
            raise ValueError(
                f"{self.strategy} performs L-scheme sweeps; all four L constants must be > 0"
            )


def convergence_check(prev_iter, curr_iter, mass, tol, norm="l2"):
    """All three increment norms strictly below tol; returns (ok, norms)."""
    if norm == "l2":
        nf = lambda v: discrete_l2_norm(mass, v)
    else:
        nf = np.linalg.norm
    norms = (
        nf(curr_iter.psi - prev_iter.psi),
        nf(curr_iter.theta - prev_iter.theta),
        nf(curr_iter.c - prev_iter.c),
    )
    return all(v < tol for v in norms), norms


@dataclass
class IterationHistory:
    """Per-step record of increment norms and the sweep kinds used."""

    norms: list = field(default_factory=list)  # (n_psi, n_theta, n_c) triples
    kinds: list = field(default_factory=list)  # "ls" | "newton"
    fallback_active: bool = False

    @property
    def last_max(self) -> float | None:
        return max(self.norms[-1]) if self.norms else None


def mixed_controller(history: IterationHistory, config: SchemeConfig) -> str:
    """Pick the linearization for the next sweep of a mixed strategy.

    L-scheme while the sweep index is <= mixed_switch and the previous
    increment is still above the switch tolerance; Newton afterwards.  Once
    the (optional) divergence fallback has triggered, the rest of the step
    stays with the L-scheme.
    """
    if history.fallback_active:
        return "ls"
    j = len(history.norms) + 1
    last = history.last_max
    if j <= config.mixed_switch and (last is None or last > config.mixed_switch_tol):
        return "ls"
    return "newton"


def sweep_kind(strategy: str, history: IterationHistory, config: SchemeConfig) -> str:
    if strategy.endswith("Newton"):
        return "newton"
    if strategy.endswith("LS"):
        return "ls"
    return mixed_controller(history, config)


@dataclass
class IterationOutcome:
    state: StateTriple
    clamp_events: int
    linear_solves: int = 1


@dataclass
class _StepContext:
    """Per-time-step frozen data shared by all sweeps of the step."""

    prev: StateTriple
    t: float
    dt: float
    initial_iterate: StateTriple
    initial_clamps: int
    psi_vals: np.ndarray | None
    c_vals: np.ndarray | None
    theta_prev_qp: np.ndarray
    m_theta_prev: np.ndarray  # <theta^{n-1}, v>
    tau_theta_prev_load: np.ndarray | None  # <tau(.) theta^{n-1}, v> when tau const
    tc_load: np.ndarray  # <theta^{n-1} c^{n-1}, v>
    conv_data: np.ndarray | None  # lagged convection operator data
    s1_load: np.ndarray | None
    spsi_load: np.ndarray | None
    s2_load: np.ndarray | None


class IterationEngine:
    """Assembles and solves one linearized iteration for every strategy."""

    def __init__(self, problem: Problem, config: SchemeConfig):
        self.problem = problem
        self.config = config
        self.cset = problem.cset
        self.tables = ElementTables(problem.mesh)
        self.pattern = MeshPattern(self.tables)

        t = self.tables
        p = self.pattern
        self.m_data = fem.mass_data(t, p, 1.0, lumped=config.lump_mass)
        self.a1_data = fem.stiffness_data(t, p, 1.0)
        self.ad_data = fem.tensor_stiffness_data(t, p, self.cset.diffusion_tensor())
        self.mass = p.csr(fem.mass_data(t, p, 1.0))  # consistent mass for norms
        self.m_csr = p.csr(self.m_data)
        self.a1_csr = p.csr(self.a1_data)

        self.tau_const = self.cset.tau_model == "constant"
        self.r_zero = self.cset.r_model == "zero"
        # benchmark/tabulated p_cap has dp/dc = gamma identically
        _, _, dpc = self.cset.capillary_pressure(np.array([0.5]), np.array([0.0]))
        self.has_c_coupling = bool(np.any(dpc != 0.0))

        flow_blocks = [(0, 0), (0, 1), (1, 0), (1, 1)]
        mono_blocks = flow_blocks + [(2, 2)]
        mono_newton_blocks = mono_blocks + ([(1, 2)] if self.has_c_coupling else [])
        self.bp_flow = BlockPattern(p, flow_blocks, nb=2)
        self.bp_mono_ls = BlockPattern(p, mono_blocks, nb=3)
        self.bp_mono_newton = (
            BlockPattern(p, mono_newton_blocks, nb=3)
            if self.has_c_coupling
            else self.bp_mono_ls
        )
        self.bp_transport = BlockPattern(p, [(0, 0)], nb=1)

        psi_nodes = problem.psi_bc.nodes if problem.psi_bc else np.empty(0, np.int64)
        c_nodes = problem.c_bc.nodes if problem.c_bc else np.empty(0, np.int64)
        self.plans = {
            ("flow", "psi"): self.bp_flow.dirichlet_plan(0, psi_nodes),
            ("mono-ls", "psi"): self.bp_mono_ls.dirichlet_plan(0, psi_nodes),
            ("mono-ls", "c"): self.bp_mono_ls.dirichlet_plan(2, c_nodes),
            ("transport", "c"): self.bp_transport.dirichlet_plan(0, c_nodes),
        }
        if self.bp_mono_newton is not self.bp_mono_ls:
            self.plans[("mono-newton", "psi")] = self.bp_mono_newton.dirichlet_plan(0, psi_nodes)
            self.plans[("mono-newton", "c")] = self.bp_mono_newton.dirichlet_plan(2, c_nodes)
        else:
            self.plans[("mono-newton", "psi")] = self.plans[("mono-ls", "psi")]
            self.plans[("mono-newton", "c")] = self.plans[("mono-ls", "c")]

        self._lus: dict[str, ReusableLU] = {}
        self.n = problem.mesh.n_nodes

    # -- helpers -------------------------------------------------------------

    def _lu(self, key: str) -> ReusableLU:
        if key not in self._lus:
            self._lus[key] = ReusableLU()
        return self._lus[key]

    def _norm_fn(self):
        if self.config.norm == "l2":
            return lambda v: discrete_l2_norm(self.mass, v)
        return lambda v: float(np.linalg.norm(v))

    def _mass_of(self, w_qp):
        return fem.mass_data(self.tables, self.pattern, w_qp, lumped=self.config.lump_mass)

    def _source_load(self, fn, t):
        if fn is None:
            return None
        xy = self.tables.qp_coords()
        vals = np.asarray(fn(xy[:, :, 0], xy[:, :, 1], t), dtype=float)
        vals = np.broadcast_to(vals, (self.tables.n_elements, self.tables.n_qp))
        return fem.load_vector(self.tables, np.ascontiguousarray(vals))

    def water_flux(self, state: StateTriple) -> np.ndarray:
        return fem.compute_water_flux(self.tables, state.psi, state.theta, self.cset.vg)

    # -- per-step setup --------------------------------------------------------

    def begin_step(self, prev: StateTriple, t: float, dt: float) -> _StepContext:
        cfg = self.config
        prob = self.problem
        it0 = prev.copy()
        it0.time = t
        psi_vals = c_vals = None
        if prob.psi_bc is not None and prob.psi_bc.nodes.size:
            psi_vals = np.asarray(prob.psi_bc.values(t), dtype=float)
            it0.psi[prob.psi_bc.nodes] = psi_vals
        if prob.c_bc is not None and prob.c_bc.nodes.size:
            c_vals = np.asarray(prob.c_bc.values(t), dtype=float)
            it0.c[prob.c_bc.nodes] = c_vals
        it0.theta, clamps = self.cset.clamp(it0.theta)

        theta_prev_qp = self.tables.interp(prev.theta)
        c_prev_qp = self.tables.interp(prev.c)
        m_theta_prev = self.m_csr @ prev.theta
        tau_prev = None
        if self.tau_const:
            tau_prev = self.cset.tau0 * m_theta_prev
        tc_load = fem.load_vector(self.tables, theta_prev_qp * c_prev_qp)
        conv_data = None
        if cfg.flux_lag == "previous-time":
            conv_data = fem.convection_data(self.tables, self.pattern, self.water_flux(prev))
        return _StepContext(
            prev=prev,
            t=t,
            dt=dt,
            initial_iterate=it0,
            initial_clamps=clamps,
            psi_vals=psi_vals,
            c_vals=c_vals,
            theta_prev_qp=theta_prev_qp,
            m_theta_prev=m_theta_prev,
            tau_theta_prev_load=tau_prev,
            tc_load=tc_load,
            conv_data=conv_data,
            s1_load=self._source_load(prob.sources.s1, t),
            spsi_load=self._source_load(prob.sources.s_psi, t),
            s2_load=self._source_load(prob.sources.s2, t),
        )

    # -- building blocks on the flow pair --------------------------------------

    def _flow_blocks(self, ctx, it, kind, tq, pq, cq, couple_c=True):
        """Rows (0: mass balance, 1: capillarity) of the linearized system.

        Returns (blocks dict, rhs0, rhs1, c_block_data).  The c-coupling
        pieces are produced only for the monolithic Newton sweep
        (``couple_c=True``); in the splitting scheme the concentration is
        frozen inside the flow subproblem and contributes through
        p_cap(theta, c_j) alone.
        """
        dt = ctx.dt
        cfg = self.config
        t = self.tables
        p = self.pattern

        k_qp = self.cset.conductivity(tq, pq)
        a_k = fem.stiffness_data(t, p, k_qp)
        grav = fem.vector_load_vector(
            t, np.stack([np.zeros_like(k_qp), k_qp], axis=-1)
        )
        pcap, dpdth, dpdc = self.cset.capillary_pressure(tq, cq)
        p_load = fem.load_vector(t, pcap)

        if self.tau_const:
            mtau = self.cset.tau0 * self.m_data
            tau_prev_load = ctx.tau_theta_prev_load
            dtau_qp = None
        else:
            tau_qp, dtau_qp = self.cset.tau(tq)
            mtau = self._mass_of(tau_qp)
            tau_prev_load = fem.load_vector(t, tau_qp * ctx.theta_prev_qp)

        blocks = {}
        b0 = ctx.m_theta_prev - dt * grav
        if ctx.s1_load is not None:
            b0 = b0 + dt * ctx.s1_load
        b1 = -dt * p_load - tau_prev_load
        if ctx.spsi_load is not None:
            b1 = b1 + dt * ctx.spsi_load

        c_block = None
        if kind == "newton":
            dk_dth, dk_dpsi = self.cset.conductivity_derivatives(tq, pq)
            w = t.grad(it.psi) + EZ
            wth = dk_dth[:, :, None] * w
            c_th = fem.convection_data(t, p, wth)
            blocks[(0, 0)] = dt * a_k
            if np.any(dk_dpsi != 0.0):  # hook for psi-dependent conductivities
                wps = dk_dpsi[:, :, None] * w
                blocks[(0, 0)] = blocks[(0, 0)] + dt * fem.convection_data(t, p, wps)
                b0 = b0 + dt * fem.vector_load_vector(t, wps * pq[:, :, None])
            blocks[(0, 1)] = self.m_data + dt * c_th
            b0 = b0 + dt * fem.vector_load_vector(t, wth * tq[:, :, None])
            blocks[(1, 0)] = dt * self.m_data
            d11 = dt * self._mass_of(dpdth) - mtau
            b1 = b1 + dt * fem.load_vector(t, dpdth * tq)
            if dtau_qp is not None:
                wdt = dtau_qp * (tq - ctx.theta_prev_qp)
                d11 = d11 - self._mass_of(wdt)
                b1 = b1 - fem.load_vector(t, wdt * tq)
            blocks[(1, 1)] = d11
            if couple_c and self.has_c_coupling:
                c_block = dt * self._mass_of(dpdc)
                b1 = b1 + dt * fem.load_vector(t, dpdc * cq)
        else:  # L-scheme
            stab_data = self.a1_data if cfg.l_stabilization == "gradient" else self.m_data
            stab_csr = self.a1_csr if cfg.l_stabilization == "gradient" else self.m_csr
            blocks[(0, 0)] = dt * a_k + dt * cfg.l1_psi * stab_data
            blocks[(0, 1)] = self.m_data + dt * cfg.l1_theta * stab_data
            b0 = b0 + dt * cfg.l1_psi * (stab_csr @ it.psi)
            b0 = b0 + dt * cfg.l1_theta * (stab_csr @ it.theta)
            blocks[(1, 0)] = dt * self.m_data
            blocks[(1, 1)] = -mtau - cfg.l2 * self.m_data
            b1 = b1 - cfg.l2 * (self.m_csr @ it.theta)
        return blocks, b0, b1, c_block

    def _transport_blocks(self, ctx, it, kind, theta_weight_qp, conv_data, cq):
        """Row 2 (transport) of the linearized system: (data, rhs)."""
        dt = ctx.dt
        d22 = self._mass_of(theta_weight_qp) + dt * self.ad_data + dt * conv_data
        b2 = ctx.tc_load.copy()
        if ctx.s2_load is not None:
            b2 += dt * ctx.s2_load
        if not self.r_zero:
            r_qp, dr_qp = self.cset.reaction(cq)
            b2 -= dt * fem.load_vector(self.tables, r_qp)
            if kind == "newton":
                d22 = d22 + dt * self._mass_of(dr_qp)
                b2 += dt * fem.load_vector(self.tables, dr_qp * cq)
        if kind == "ls":
            d22 = d22 + self.config.l3 * self.m_data
            b2 += self.config.l3 * (self.m_csr @ it.c)
        return d22, b2

    # -- sweeps ---------------------------------------------------------------

    def monolithic_sweep(self, ctx: _StepContext, it: StateTriple, kind: str) -> IterationOutcome:
        tq = self.tables.interp(it.theta)
        pq = self.tables.interp(it.psi)
        cq = self.tables.interp(it.c)
        blocks, b0, b1, c_block = self._flow_blocks(ctx, it, kind, tq, pq, cq)

        conv = ctx.conv_data
        if conv is None:  # current-iterate flux
            conv = fem.convection_data(self.tables, self.pattern, self.water_flux(it))
        d22, b2 = self._transport_blocks(ctx, it, kind, tq, conv, cq)
        blocks[(2, 2)] = d22
        if c_block is not None:
            blocks[(1, 2)] = c_block

        newton_layout = kind == "newton" and self.has_c_coupling
        bp = self.bp_mono_newton if newton_layout else self.bp_mono_ls
        plan_key = "mono-newton" if newton_layout else "mono-ls"
        data = bp.compose(blocks)
        rhs = np.concatenate([b0, b1, b2])
        if ctx.psi_vals is not None:
            self.plans[(plan_key, "psi")].apply(data, rhs, ctx.psi_vals)
        if ctx.c_vals is not None:
            self.plans[(plan_key, "c")].apply(data, rhs, ctx.c_vals)

        x = self._lu(f"mono-{kind}").solve(bp.csr(data), rhs)
        n = self.n
        theta, clamps = self.cset.clamp(x[n : 2 * n])
        return IterationOutcome(
            StateTriple(x[:n], theta, x[2 * n :], time=ctx.t), clamps, linear_solves=1
        )

    def _solve_flow(self, ctx, it, kind, tq, pq, cq):
        blocks, b0, b1, _ = self._flow_blocks(ctx, it, kind, tq, pq, cq, couple_c=False)
        data = self.bp_flow.compose(blocks)
        rhs = np.concatenate([b0, b1])
        if ctx.psi_vals is not None:
            self.plans[("flow", "psi")].apply(data, rhs, ctx.psi_vals)
        x = self._lu(f"flow-{kind}").solve(self.bp_flow.csr(data), rhs)
        psi = x[: self.n]
        theta, clamps = self.cset.clamp(x[self.n :])
        return psi, theta, clamps

    def _solve_transport(self, ctx, it, kind, flow_state, cq):
        conv = ctx.conv_data
        if conv is None:
            conv = fem.convection_data(self.tables, self.pattern, self.water_flux(flow_state))
        theta_new_qp = self.tables.interp(flow_state.theta)
        d22, b2 = self._transport_blocks(ctx, it, kind, theta_new_qp, conv, cq)
        data = self.bp_transport.compose({(0, 0): d22})
        rhs = b2
        if ctx.c_vals is not None:
            self.plans[("transport", "c")].apply(data, rhs, ctx.c_vals)
        return self._lu(f"transport-{kind}").solve(self.bp_transport.csr(data), rhs)

    def splitting_sweep(self, ctx: _StepContext, it: StateTriple, kind: str) -> IterationOutcome:
        """One coupling sweep: flow solve with frozen c, then transport."""
        tq = self.tables.interp(it.theta)
        pq = self.tables.interp(it.psi)
        cq = self.tables.interp(it.c)
        psi, theta, clamps = self._solve_flow(ctx, it, kind, tq, pq, cq)
        flow_state = StateTriple(psi, theta, it.c, time=ctx.t)
        c = self._solve_transport(ctx, it, kind, flow_state, cq)
        return IterationOutcome(
            StateTriple(psi, theta, c, time=ctx.t), clamps, linear_solves=2
        )

    def splitting_sweep_nested(self, ctx: _StepContext, it: StateTriple, kind: str) -> IterationOutcome:
        """One coupling sweep with the flow subproblem solved to tolerance."""
        cfg = self.config
        nf = self._norm_fn()
        sub = it.copy()
        clamps = 0
        solves = 0
        for _ in range(cfg.max_iter):
            tq = self.tables.interp(sub.theta)
            pq = self.tables.interp(sub.psi)
            cq = self.tables.interp(it.c)  # c frozen at the outer iterate
            psi, theta, cl = self._solve_flow(ctx, sub, kind, tq, pq, cq)
            clamps += cl
            solves += 1
            done = nf(psi - sub.psi) < cfg.tol and nf(theta - sub.theta) < cfg.tol
            sub = StateTriple(psi, theta, it.c, time=ctx.t)
            if done:
                break
        c = sub.c
        for _ in range(cfg.max_iter):
            cq = self.tables.interp(c)
            c_new = self._solve_transport(
                ctx, StateTriple(sub.psi, sub.theta, c, ctx.t), kind, sub, cq
            )
            solves += 1
            done = nf(c_new - c) < cfg.tol
            c = c_new
            if done:
                break
        return IterationOutcome(
            StateTriple(sub.psi, sub.theta, c, time=ctx.t), clamps, linear_solves=solves
        )

    def one_iteration(self, ctx: _StepContext, it: StateTriple, kind: str) -> IterationOutcome:
        if self.config.strategy.startswith("MON"):
            return self.monolithic_sweep(ctx, it, kind)
        if self.config.splitting_mode == "nested":
            return self.splitting_sweep_nested(ctx, it, kind)
        return self.splitting_sweep(ctx, it, kind)

    # -- spec-named convenience wrappers ---------------------------------------

    def newton_iteration_monolithic(self, prev, it, t, dt) -> StateTriple:
        ctx = self.begin_step(prev, t, dt)
        return self.monolithic_sweep(ctx, it, "newton").state

    def lscheme_iteration_monolithic(self, prev, it, t, dt) -> StateTriple:
        ctx = self.begin_step(prev, t, dt)
        return self.monolithic_sweep(ctx, it, "ls").state

    def splitting_iteration(self, prev, it, t, dt, inner="newton") -> StateTriple:
        ctx = self.begin_step(prev, t, dt)
        return self.splitting_sweep(ctx, it, inner).state
