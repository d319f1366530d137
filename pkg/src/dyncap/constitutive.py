"""Nonlinear closure relations and their analytic derivatives.

Conductivity follows the van Genuchten-type law

    K(theta, psi) = K_s * theta^(1/2) * [1 - (1 - theta^(n/(n-1)))^((n-1)/n)]   psi <= 0
    K(theta, psi) = K_s                                                         psi > 0

so K depends on psi only through the branch switch: both open branches have
dK/dpsi = 0, and for theta < 1 the law jumps by K_s - K(theta, 0-) across
psi = 0.  The capillary pressure couples water content and solute
concentration; the recharge benchmark uses

    p_cap(theta, c) = (1 - theta)^2.5 + gamma * c,    gamma = 0.1,

while the classical van Genuchten curve (1/alpha) (theta^(-1/m) - 1)^(1/n)
and a tabulated curve are available as alternatives.  The damping factor tau
and the reaction R(c) have constant/affine and zero/linear models.

theta is an effective saturation in (0, 1].  All functions reject values
outside that interval; iterates are clamped by the caller (see
``clamp_theta``) before any constitutive evaluation.  dK/dtheta diverges at
full saturation (the bracket has an infinite one-sided slope at theta = 1),
so derivative evaluations are pulled back to 1 - DERIVATIVE_GUARD.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

#: Lower clamp for theta before constitutive evaluation.
THETA_EPS = 1e-6

#: Distance below full saturation at which dK/dtheta is evaluated when
#: theta = 1; the true one-sided derivative is +infinity.
DERIVATIVE_GUARD = 1e-12


class ThetaDomainError(ValueError):
    """Water content outside (0, 1] reached a constitutive evaluation."""


def clamp_theta(values: np.ndarray, eps: float = THETA_EPS):
    """Clamp nodal water content into [eps, 1]; returns (clamped, n_events)."""
    values = np.asarray(values, dtype=float)
    n_events = int(np.count_nonzero((values < eps) | (values > 1.0)))
    return np.clip(values, eps, 1.0), n_events


def _check_theta(theta: np.ndarray) -> None:
    if theta.size and (np.min(theta) <= 0.0 or np.max(theta) > 1.0 + 1e-14):
        bad = theta[(theta <= 0.0) | (theta > 1.0 + 1e-14)]
        raise ThetaDomainError(
            f"theta outside (0, 1]: offending value {bad.flat[0]:.6g} "
            f"(clamp iterates before evaluating closures)"
        )


@dataclass(frozen=True)
class VanGenuchtenParams:
    """Parameters of the conductivity/capillary-pressure family.

    ``psi_switch_width`` regularises the branch switch of the conductivity:
    the law as written jumps from the unsaturated branch to K_s at psi = 0
    whenever theta < 1, which makes every fixed-point map discontinuous and
    produces exact limit cycles at the water-table interface.  A thin C^1
    blend on 0 < psi < psi_switch_width keeps both branches exact outside
    the transition; width 0 restores the literal two-branch law.
    """

    k_s: float = 1.0
    n: float = 2.0
    alpha: float = 1.0
    m: float | None = None  # defaults to 1 - 1/n
    psi_switch_width: float = 0.05

    def __post_init__(self):
        if self.k_s <= 0:
            raise ValueError(f"K_s must be positive, got {self.k_s}")
        if self.n <= 1:
            raise ValueError(f"soil exponent n must exceed 1, got {self.n}")
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.m is None:
            object.__setattr__(self, "m", 1.0 - 1.0 / self.n)
        if not 0.0 < self.m < 1.0:
            raise ValueError(f"m must lie in (0, 1), got {self.m}")
        if self.psi_switch_width < 0:
            raise ValueError("psi_switch_width must be nonnegative")


def _unsaturated_k(theta, vg: VanGenuchtenParams):
    p = vg.n / (vg.n - 1.0)
    mexp = (vg.n - 1.0) / vg.n
    inner = np.clip(1.0 - np.minimum(theta, 1.0) ** p, 0.0, None)
    return vg.k_s * np.sqrt(theta) * (1.0 - inner**mexp)


def _switch_blend(psi, width):
    """Smoothstep 0 -> 1 across the branch transition; (s, ds/dpsi)."""
    if width == 0.0:
        s = (psi > 0.0).astype(float)
        return s, np.zeros_like(s)
    u = np.clip(psi / width, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u), 6.0 * u * (1.0 - u) / width


def conductivity(theta, psi, vg: VanGenuchtenParams):
    """K(theta, psi); K_s beyond the saturated switch, exact branch below 0."""
    theta = np.asarray(theta, dtype=float)
    psi = np.asarray(psi, dtype=float)
    _check_theta(theta)
    unsat = _unsaturated_k(theta, vg)
    s, _ = _switch_blend(psi, vg.psi_switch_width)
    return unsat + (vg.k_s - unsat) * s


def conductivity_derivatives(theta, psi, vg: VanGenuchtenParams):
    """(dK/dtheta, dK/dpsi) of the conductivity law.

    Outside the switch transition dK/dpsi is identically zero (the law is
    piecewise constant in psi there); inside, it is the blend slope times the
    branch gap.  On the unsaturated branch dK/dtheta is evaluated at
    min(theta, 1 - DERIVATIVE_GUARD) because the analytic expression diverges
    like (1 - theta)^(-1/n) at saturation.
    """
    theta = np.asarray(theta, dtype=float)
    psi = np.asarray(psi, dtype=float)
    _check_theta(theta)
    p = vg.n / (vg.n - 1.0)
    mexp = (vg.n - 1.0) / vg.n
    th = np.minimum(theta, 1.0 - DERIVATIVE_GUARD)
    inner = np.clip(1.0 - th**p, 0.0, None)
    bracket = 1.0 - inner**mexp
    dk_unsat = vg.k_s * (
        0.5 / np.sqrt(th) * bracket
        + np.sqrt(th) * mexp * inner ** (mexp - 1.0) * p * th ** (p - 1.0)
    )
    s, ds = _switch_blend(psi, vg.psi_switch_width)
    dk_dtheta = (1.0 - s) * dk_unsat
    dk_dpsi = (vg.k_s - _unsaturated_k(theta, vg)) * ds
    return dk_dtheta, dk_dpsi


def saturation_jump(theta, vg: VanGenuchtenParams):
    """Jump K_s - K(theta, 0-) of the conductivity across psi = 0."""
    return vg.k_s - conductivity(theta, np.full_like(np.asarray(theta, float), -1.0), vg)


@dataclass(frozen=True)
class ConstitutiveSet:
    """Closure bundle: conductivity, capillary pressure, damping, reaction."""

    vg: VanGenuchtenParams = field(default_factory=VanGenuchtenParams)
    p_cap_model: str = "benchmark"  # "benchmark" | "van-genuchten" | "tabulated"
    gamma: float = 0.1  # surfactant coupling d p_cap / dc of the benchmark form
    p_cap_table: tuple | None = None  # (theta_grid, p_values) for "tabulated"
    tau_model: str = "constant"  # "constant" | "affine"
    tau0: float = 1.0
    tau_a: float = 1.0
    tau_b: float = 0.0
    r_model: str = "zero"  # "zero" | "linear"
    rc: float = 0.0
    diffusion: object = 1.0  # scalar or 2x2 array-like
    theta_eps: float = THETA_EPS

    def __post_init__(self):
        if self.p_cap_model not in ("benchmark", "van-genuchten", "tabulated"):
            raise ValueError(f"unknown p_cap model {self.p_cap_model!r}")
        if self.p_cap_model == "tabulated":
            if self.p_cap_table is None:
                raise ValueError("tabulated p_cap requires p_cap_table")
            tg, pv = (np.asarray(a, dtype=float) for a in self.p_cap_table)
            if tg.ndim != 1 or tg.shape != pv.shape or tg.size < 2:
                raise ValueError("p_cap_table must be two equal-length 1-d arrays")
            if np.any(np.diff(tg) <= 0):
                raise ValueError("p_cap_table theta grid must be increasing")
        if self.tau_model not in ("constant", "affine"):
            raise ValueError(f"unknown tau model {self.tau_model!r}")
        if self.tau_model == "constant" and self.tau0 < 0:
            raise ValueError(f"constant tau must be nonnegative, got {self.tau0}")
        if self.tau_model == "affine":
            lo = min(self.tau_a, self.tau_a + self.tau_b)  # min over theta in (0, 1]
            if lo < 0:
                raise ValueError(
                    f"affine tau {self.tau_a} + {self.tau_b}*theta is negative on (0, 1]"
                )
        if self.r_model not in ("zero", "linear"):
            raise ValueError(f"unknown reaction model {self.r_model!r}")
        D = np.asarray(self.diffusion, dtype=float)
        if D.ndim not in (0, 2) or (D.ndim == 2 and D.shape != (2, 2)):
            raise ValueError("diffusion must be a scalar or a 2x2 tensor")

    # -- evaluation ---------------------------------------------------------

    def conductivity(self, theta, psi):
        return conductivity(theta, psi, self.vg)

    def conductivity_derivatives(self, theta, psi):
        return conductivity_derivatives(theta, psi, self.vg)

    def capillary_pressure(self, theta, c):
        return capillary_pressure(theta, c, self)

    def tau(self, theta):
        return tau(theta, self)

    def reaction(self, c):
        return reaction(c, self)

    def clamp(self, theta):
        return clamp_theta(theta, self.theta_eps)

    def diffusion_tensor(self) -> np.ndarray:
        D = np.asarray(self.diffusion, dtype=float)
        if D.ndim == 0:
            return np.array([[float(D), 0.0], [0.0, float(D)]])
        return D

    @property
    def dpcap_dc_is_constant(self) -> bool:
        return self.p_cap_model in ("benchmark",)

    def validate_monotonicity(self, samples: int = 200) -> None:
        """Sampled sanity checks: p_cap decreasing in theta, K increasing."""
        th = np.linspace(self.theta_eps, 1.0, samples)
        p, _, _ = self.capillary_pressure(th, np.zeros_like(th))
        if np.any(np.diff(p) > 1e-12):
            raise ValueError("p_cap is not non-increasing in theta")
        k = self.conductivity(th, np.full_like(th, -1.0))
        if np.any(np.diff(k) < -1e-12):
            raise ValueError("conductivity is not non-decreasing in theta")
        t, _ = self.tau(th)
        if np.any(t < 0):
            raise ValueError("tau is negative on (0, 1]")


def capillary_pressure(theta, c, cset: ConstitutiveSet):
    """(p_cap, dp/dtheta, dp/dc) for the selected model."""
    theta = np.asarray(theta, dtype=float)
    c = np.asarray(c, dtype=float)
    _check_theta(theta)
    if cset.p_cap_model == "benchmark":
        om = np.clip(1.0 - theta, 0.0, None)
        p = om**2.5 + cset.gamma * c
        dp_dth = -2.5 * om**1.5
        dp_dc = np.full(np.broadcast(theta, c).shape, cset.gamma)
        return p, dp_dth, dp_dc
    if cset.p_cap_model == "van-genuchten":
        vg = cset.vg
        base = np.clip(theta ** (-1.0 / vg.m) - 1.0, 0.0, None)
        p = (1.0 / vg.alpha) * base ** (1.0 / vg.n)
        guarded = np.maximum(base, 1e-300)
        dp_dth = (
            (1.0 / vg.alpha)
            * (1.0 / vg.n)
            * guarded ** (1.0 / vg.n - 1.0)
            * (-1.0 / vg.m)
            * theta ** (-1.0 / vg.m - 1.0)
        )
        zero = np.zeros(np.broadcast(theta, c).shape)
        return p, dp_dth, zero
    tg, pv = (np.asarray(a, dtype=float) for a in cset.p_cap_table)
    p = np.interp(theta, tg, pv) + cset.gamma * c
    slopes = np.diff(pv) / np.diff(tg)
    seg = np.clip(np.searchsorted(tg, theta, side="right") - 1, 0, slopes.size - 1)
    dp_dth = slopes[seg]
    dp_dc = np.full(np.broadcast(theta, c).shape, cset.gamma)
    return p, dp_dth, dp_dc


def tau(theta, cset: ConstitutiveSet):
    """(tau, dtau/dtheta) of the dynamic-capillarity damping factor."""
    theta = np.asarray(theta, dtype=float)
    _check_theta(theta)
    if cset.tau_model == "constant":
        return np.full_like(theta, cset.tau0), np.zeros_like(theta)
    val = cset.tau_a + cset.tau_b * theta
    return val, np.full_like(theta, cset.tau_b)


def reaction(c, cset: ConstitutiveSet):
    """(R(c), dR/dc)."""
    c = np.asarray(c, dtype=float)
    if cset.r_model == "zero":
        return np.zeros_like(c), np.zeros_like(c)
    return cset.rc * c, np.full_like(c, cset.rc)
