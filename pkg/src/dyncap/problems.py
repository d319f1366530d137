"""Problem setups: domain, closures, boundary data, initial data, sources.

The production scenario is the recharge of a two-dimensional underground
reservoir on (0,2) x (0,3): pressure head is prescribed on the top strip
(ramped from -2 to 0.2 during t <= 1, then held) and on the lower right
strip (hydrostatic 1 - y), with no flow elsewhere; concentration is
prescribed on the whole boundary (1 on the top strip while t <= 1, then 0;
3 - y elsewhere).  Initial data: psi = 1 - y, theta = 0.39, c = 3 - y.

Manufactured-solution problems for verification are built in
:mod:`dyncap.verification`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .constitutive import ConstitutiveSet
from .mesh import (
    TAG_D1,
    TAG_D2,
    BoundaryTags,
    Domain2D,
    GridMesh,
    build_grid,
    classify_boundary,
)


@dataclass(frozen=True, eq=False)
class FieldBC:
    """Dirichlet data for one field: node indices plus values at time t."""

    nodes: np.ndarray
    values: Callable[[float], np.ndarray]


@dataclass(frozen=True)
class Sources:
    """Volumetric sources (x, y, t) -> value; None means identically zero.

    ``s_psi`` is an auxiliary source in the capillarity relation used only by
    manufactured-solution runs; production problems keep it None.
    """

    s1: Callable | None = None
    s_psi: Callable | None = None
    s2: Callable | None = None

    @property
    def any_nonzero(self) -> bool:
        return any(f is not None for f in (self.s1, self.s_psi, self.s2))


@dataclass(frozen=True, eq=False)
class Problem:
    """Everything a simulation needs besides solver settings."""

    mesh: GridMesh
    tags: BoundaryTags
    cset: ConstitutiveSet
    psi_bc: FieldBC | None
    c_bc: FieldBC | None
    psi0: Callable  # (x, y) -> value
    theta0: Callable
    c0: Callable
    sources: Sources = field(default_factory=Sources)

    def initial_fields(self):
        x, y = self.mesh.nodes[:, 0], self.mesh.nodes[:, 1]
        broad = np.broadcast_to  # tolerate constant-returning callables
        psi = np.asarray(broad(self.psi0(x, y), x.shape), dtype=float).copy()
        theta = np.asarray(broad(self.theta0(x, y), x.shape), dtype=float).copy()
        c = np.asarray(broad(self.c0(x, y), x.shape), dtype=float).copy()
        return psi, theta, c


def recharge_problem(
    nx: int = 20,
    ny: int = 30,
    cset: ConstitutiveSet | None = None,
    domain: Domain2D | None = None,
    element_type: str = "quad",
) -> Problem:
    """The reservoir recharge scenario on its standard domain."""
    domain = domain or Domain2D(0.0, 2.0, 0.0, 3.0)
    mesh = build_grid(domain, nx, ny, element_type=element_type)
    tags = classify_boundary(mesh, domain)
    cset = cset or ConstitutiveSet()

    d1 = tags.nodes_with(TAG_D1)
    d2 = tags.nodes_with(TAG_D2)
    psi_nodes = np.concatenate([d1, d2])
    y_d2 = mesh.nodes[d2, 1]

    def psi_values(t: float) -> np.ndarray:
        top = -2.0 + 2.2 * t if t <= 1.0 else 0.2
        return np.concatenate([np.full(d1.size, top), 1.0 - y_d2])

    c_nodes = tags.boundary_nodes
    on_d1 = tags.node_tags == TAG_D1
    y_bdry = mesh.nodes[c_nodes, 1]

    def c_values(t: float) -> np.ndarray:
        vals = 3.0 - y_bdry  # D2 and N segments
        vals[on_d1] = 1.0 if t <= 1.0 else 0.0
        return vals

    return Problem(
        mesh=mesh,
        tags=tags,
        cset=cset,
        psi_bc=FieldBC(psi_nodes, psi_values),
        c_bc=FieldBC(c_nodes, c_values),
        psi0=lambda x, y: 1.0 - y,
        theta0=lambda x, y: np.full_like(np.asarray(x, dtype=float), 0.39),
        c0=lambda x, y: 3.0 - y,
    )


def hydrostatic_equilibrium_problem(
    nx: int = 4,
    ny: int = 6,
    theta_star: float = 0.5,
    domain: Domain2D | None = None,
    cset: ConstitutiveSet | None = None,
    psi_offset: float = -0.2,
    element_type: str = "quad",
) -> Problem:
    """A problem whose initial state is an exact discrete steady state.

    psi* = a - y is hydrostatic, theta* is constant, and c* is the linear
    profile that balances the capillarity relation pointwise:
    gamma c* = -(psi* + (1 - theta*)^2.5).  The water flux vanishes
    identically, so every solver strategy must hold the state fixed.
    """
    domain = domain or Domain2D(0.0, 2.0, 0.0, 3.0)
    cset = cset or ConstitutiveSet()
    if cset.p_cap_model != "benchmark" or cset.gamma == 0:
        raise ValueError("equilibrium construction assumes the benchmark p_cap")
    mesh = build_grid(domain, nx, ny, element_type=element_type)
    tags = classify_boundary(mesh, domain)

    a = psi_offset
    p0 = (1.0 - theta_star) ** 2.5
    gamma = cset.gamma

    def psi_star(x, y):
        return a - y

    def c_star(x, y):
        return (y - a - p0) / gamma

    d = tags.dirichlet_nodes
    yd = mesh.nodes[d, 1]
    c_nodes = tags.boundary_nodes
    yc = mesh.nodes[c_nodes, 1]

    return Problem(
        mesh=mesh,
        tags=tags,
        cset=cset,
        psi_bc=FieldBC(d, lambda t: a - yd),
        c_bc=FieldBC(c_nodes, lambda t: (yc - a - p0) / gamma),
        psi0=psi_star,
        theta0=lambda x, y: np.full_like(np.asarray(x, dtype=float), theta_star),
        c0=c_star,
    )
