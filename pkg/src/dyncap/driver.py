"""Backward Euler time stepping and run-level bookkeeping.

Each step starts the nonlinear iteration from the previous time level's
solution (with the new boundary values imposed), loops linearized sweeps
until all three increment norms drop below the tolerance, and classifies
the step as converged, diverged (an increment norm exceeded the guard or
went non-finite), or exhausted (iteration cap).  In the default fixed-step
mode the run aborts on the first failed step; an adaptive escape hatch that
locally halves the step is available but off by default.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field

import numpy as np

from . import assembly as fem
from .linalg import SingularSystemError
from .problems import Problem
from .schemes import (
    IterationEngine,
    IterationHistory,
    SchemeConfig,
    StateTriple,
    convergence_check,
    sweep_kind,
)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid covering (0, T] with N steps of size dt."""

    t_final: float
    dt: float

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        n = round(self.t_final / self.dt)
        if n < 1 or abs(n * self.dt - self.t_final) > 1e-12 * max(1.0, self.t_final):
            raise ValueError(
                f"dt={self.dt} does not divide t_final={self.t_final} evenly"
            )

    @property
    def n_steps(self) -> int:
        return round(self.t_final / self.dt)

    def times(self) -> np.ndarray:
        return self.dt * np.arange(1, self.n_steps + 1)


@dataclass
class IterationRecord:
    """Outcome of one time step; the raw material of the solver comparison."""

    step: int
    t: float
    iterations: int
    converged: bool
    final_norms: tuple
    norm_history: list  # one (n_psi, n_theta, n_c) triple per iteration
    kinds: list  # sweep kind per iteration ("ls" | "newton")
    clamp_events: int
    wall_time: float
    linear_solves: int = 0
    failure_reason: str | None = None


@dataclass
class RunReport:
    """All step records plus final state and totals."""

    records: list
    final_state: StateTriple
    strategy: str
    states: list | None = None  # per-step states when collected

    @property
    def total_iterations(self) -> int:
        return sum(r.iterations for r in self.records)

    @property
    def all_converged(self) -> bool:
        return bool(self.records) and all(r.converged for r in self.records)

    @property
    def steps_completed(self) -> int:
        return sum(1 for r in self.records if r.converged)

    @property
    def total_clamp_events(self) -> int:
        return sum(r.clamp_events for r in self.records)


class Simulation:
    """Couples a problem, a solver configuration, and a time grid."""

    def __init__(self, problem: Problem, config: SchemeConfig, grid: TimeGrid):
        self.problem = problem
        self.config = config
        self.grid = grid
        self.engine = IterationEngine(problem, config)

    def initial_state(self) -> StateTriple:
        psi, theta, c = self.problem.initial_fields()
        return StateTriple(psi, theta, c, time=0.0)

    def advance_time_step(self, state: StateTriple, t: float, step: int, dt: float | None = None):
        """One backward Euler step; returns (new_state, IterationRecord)."""
        cfg = self.config
        dt = self.grid.dt if dt is None else dt
        t0 = _time.perf_counter()
        ctx = self.engine.begin_step(state, t, dt)
        it = ctx.initial_iterate
        history = IterationHistory()
        clamp_events = ctx.initial_clamps
        solves = 0
        converged = False
        reason = None

        for _ in range(cfg.max_iter):
            kind = sweep_kind(cfg.strategy, history, cfg)
            try:
                out = self.engine.one_iteration(ctx, it, kind)
            except SingularSystemError as exc:
                reason = f"linear solver: {exc}"
                break
            _, norms = convergence_check(it, out.state, self.engine.mass, cfg.tol, cfg.norm)
            prev_max = history.last_max
            history.norms.append(norms)
            history.kinds.append(kind)
            clamp_events += out.clamp_events
            solves += out.linear_solves
            it = out.state

            if (
                cfg.newton_fallback
                and kind == "newton"
                and prev_max is not None
                and max(norms) > 10.0 * prev_max
            ):
                history.fallback_active = True
            if not it.is_finite() or max(norms) > cfg.divergence_guard:
                reason = "diverged"
                break
            if all(v < cfg.tol for v in norms):
                converged = True
                break
        else:
            reason = "iteration cap reached"

        record = IterationRecord(
            step=step,
            t=t,
            iterations=len(history.norms),
            converged=converged,
            final_norms=history.norms[-1] if history.norms else (np.nan,) * 3,
            norm_history=history.norms,
            kinds=history.kinds,
            clamp_events=clamp_events,
            wall_time=_time.perf_counter() - t0,
            linear_solves=solves,
            failure_reason=reason,
        )
        return it, record

    def _advance_adaptive(self, state, t_target, step, max_halvings=8):
        """Escape hatch: halve dt locally until the interval is covered."""
        dt_full = self.grid.dt
        t_left = t_target - dt_full
        dt = dt_full
        halvings = 0
        agg = None
        while t_left < t_target - 1e-14:
            new_state, rec = self.advance_time_step(state, t_left + dt, step, dt=dt)
            if rec.converged:
                state = new_state
                t_left += dt
            else:
                halvings += 1
                dt *= 0.5
                if halvings > max_halvings:
                    return state, rec, False
                continue
            if agg is None:
                agg = rec
            else:
                agg.iterations += rec.iterations
                agg.norm_history += rec.norm_history
                agg.kinds += rec.kinds
                agg.clamp_events += rec.clamp_events
                agg.wall_time += rec.wall_time
                agg.linear_solves += rec.linear_solves
                agg.final_norms = rec.final_norms
            agg.t = t_left
        agg.converged = True
        return state, agg, True

    def run(self, snapshot_cb=None, collect_states=False, adaptive=False) -> RunReport:
        state = self.initial_state()
        if snapshot_cb:
            snapshot_cb(0, 0.0, state)
        records = []
        states = [state.copy()] if collect_states else None
        for step, t in enumerate(self.grid.times(), start=1):
            new_state, rec = self.advance_time_step(state, float(t), step)
            if not rec.converged and adaptive:
                new_state, rec, _ = self._advance_adaptive(state, float(t), step)
            records.append(rec)
            if not rec.converged:
                break
            state = new_state
            if collect_states:
                states.append(state.copy())
            if snapshot_cb:
                snapshot_cb(step, float(t), state)
        return RunReport(
            records=records,
            final_state=state,
            strategy=self.config.strategy,
            states=states,
        )

    # -- diagnostics ------------------------------------------------------------

    def nonlinear_residual(self, prev: StateTriple, state: StateTriple, t: float, dt: float | None = None):
        """Residual of the fully nonlinear discrete system at `state`.

        Assembled directly from the governing weak form, independently of any
        linearization; Dirichlet rows are replaced by (value - prescribed).
        Returns a dict of Euclidean residual norms per equation block.
        """
        eng = self.engine
        dt = self.grid.dt if dt is None else dt
        tab = eng.tables
        cset = eng.cset
        tq = tab.interp(state.theta)
        pq = tab.interp(state.psi)
        cq = tab.interp(state.c)
        tprev_q = tab.interp(prev.theta)
        cprev_q = tab.interp(prev.c)

        k_qp = cset.conductivity(tq, pq)
        a_k = fem.assemble_weighted_stiffness(tab, k_qp, eng.pattern)
        grav = fem.vector_load_vector(
            tab, np.stack([np.zeros_like(k_qp), k_qp], axis=-1)
        )
        f_rich = eng.mass @ (state.theta - prev.theta) + dt * (a_k @ state.psi + grav)

        pcap, _, _ = cset.capillary_pressure(tq, cq)
        tau_qp, _ = cset.tau(tq)
        f_psi = dt * (eng.mass @ state.psi + fem.load_vector(tab, pcap)) - fem.load_vector(
            tab, tau_qp * (tq - tprev_q)
        )

        if self.config.flux_lag == "previous-time":
            u_w = eng.water_flux(prev)
        else:
            u_w = eng.water_flux(state)
        conv = fem.assemble_convection(tab, u_w, eng.pattern)
        r_qp, _ = cset.reaction(cq)
        f_tra = (
            fem.load_vector(tab, tq * cq - tprev_q * cprev_q)
            + dt * (eng.pattern.csr(eng.ad_data) @ state.c + conv @ state.c)
            + dt * fem.load_vector(tab, r_qp)
        )

        src = self.problem.sources
        if src.s1 is not None:
            f_rich -= dt * eng._source_load(src.s1, t)
        if src.s_psi is not None:
            f_psi -= dt * eng._source_load(src.s_psi, t)
        if src.s2 is not None:
            f_tra -= dt * eng._source_load(src.s2, t)

        if self.problem.psi_bc is not None and self.problem.psi_bc.nodes.size:
            nodes = self.problem.psi_bc.nodes
            f_rich[nodes] = state.psi[nodes] - self.problem.psi_bc.values(t)
        if self.problem.c_bc is not None and self.problem.c_bc.nodes.size:
            nodes = self.problem.c_bc.nodes
            f_tra[nodes] = state.c[nodes] - self.problem.c_bc.values(t)

        return {
            "richards": float(np.linalg.norm(f_rich)),
            "capillarity": float(np.linalg.norm(f_psi)),
            "transport": float(np.linalg.norm(f_tra)),
        }

    def water_volume(self, state: StateTriple) -> float:
        """Integral of theta over the domain (mass-balance diagnostic)."""
        return float(np.ones(self.engine.n) @ (self.engine.mass @ state.theta))


def run_simulation(problem: Problem, config: SchemeConfig, grid: TimeGrid, **kw) -> RunReport:
    """Build a Simulation and run it; see Simulation.run for keywords."""
    return Simulation(problem, config, grid).run(**kw)
