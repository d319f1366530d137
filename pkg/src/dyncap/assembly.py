"""Finite-element operators on structured grids.

Everything the weak forms need: weighted mass matrices, weighted stiffness
matrices (scalar or constant-tensor coefficient), convection matrices in
flux form (tested against the gradient of the test function), gravity loads,
generic load vectors, the discrete water flux, and Dirichlet row
replacement.

Assembly is split into a geometry layer (``ElementTables``: basis values,
physical gradients and quadrature weights per element) and a scatter layer
(``MeshPattern``/``BlockPattern``: fixed CSR sparsity plus maps from element
matrix entries to positions in the CSR data array).  The hot kernels live in
:mod:`dyncap.kernels` with a compiled and a NumPy backend.

Coefficients given as nodal fields are interpolated to quadrature points
before the closure is evaluated; bilinear interpolation keeps interpolated
water content inside the clamped nodal range.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import kernels
from .constitutive import VanGenuchtenParams, conductivity
from .mesh import GridMesh

#: Unit vector opposite to gravity in the (x, y) plane.
EZ = np.array([0.0, 1.0])


class AssemblyError(ValueError):
    """Non-physical coefficient or inconsistent dimensions during assembly."""


@dataclass(frozen=True)
class QuadratureRule:
    """Reference-element quadrature: points (Q, 2) and positive weights (Q,)."""

    points: np.ndarray
    weights: np.ndarray
    ref_measure: float

    def __post_init__(self):
        if np.any(self.weights <= 0):
            raise ValueError("quadrature weights must be positive")
        if abs(self.weights.sum() - self.ref_measure) > 1e-12:
            raise ValueError("weights do not sum to the reference measure")


def gauss2x2_rule() -> QuadratureRule:
    """2x2 Gauss on [-1, 1]^2; exact through degree 3 per variable."""
    g = 1.0 / np.sqrt(3.0)
    pts = np.array([[-g, -g], [g, -g], [g, g], [-g, g]])
    return QuadratureRule(points=pts, weights=np.ones(4), ref_measure=4.0)


def midpoint_tri_rule() -> QuadratureRule:
    """Edge-midpoint rule on the unit triangle; exact through degree 2."""
    pts = np.array([[0.5, 0.0], [0.5, 0.5], [0.0, 0.5]])
    return QuadratureRule(points=pts, weights=np.full(3, 1.0 / 6.0), ref_measure=0.5)


def _q1_basis(pts):
    xi, eta = pts[:, 0], pts[:, 1]
    xs = np.array([-1.0, 1.0, 1.0, -1.0])
    es = np.array([-1.0, -1.0, 1.0, 1.0])
    phi = 0.25 * (1 + xi[:, None] * xs) * (1 + eta[:, None] * es)
    dxi = 0.25 * xs * (1 + eta[:, None] * es)
    deta = 0.25 * es * (1 + xi[:, None] * xs)
    return phi, np.stack([dxi, deta], axis=-1)  # (Q, 4), (Q, 4, 2)


def _p1_basis(pts):
    xi, eta = pts[:, 0], pts[:, 1]
    phi = np.stack([1 - xi - eta, xi, eta], axis=-1)
    dref = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    return phi, np.broadcast_to(dref, (pts.shape[0], 3, 2)).copy()


class ElementTables:
    """Basis values, physical gradients and weights at quadrature points.

    Attributes: ``phi`` (Q, K), ``dphi`` (E, Q, K, 2), ``wdet`` (E, Q),
    ``conn`` (E, K).
    """

    def __init__(self, mesh: GridMesh, rule: QuadratureRule | None = None):
        self.mesh = mesh
        if rule is None:
            rule = gauss2x2_rule() if mesh.element_type == "quad" else midpoint_tri_rule()
        self.rule = rule
        self.conn = mesh.conn
        E = mesh.n_elements
        Q = rule.points.shape[0]

        if mesh.element_type == "quad":
            phi, dref = _q1_basis(rule.points)
            # Uniform rectangular cells: the bilinear map is affine,
            # J = diag(dx/2, dy/2) on every element.
            scale = np.array([2.0 / mesh.dx, 2.0 / mesh.dy])
            dphys = dref * scale  # (Q, K, 2)
            detj = mesh.dx * mesh.dy / 4.0
            self.phi = phi
            self.dphi = np.ascontiguousarray(np.broadcast_to(dphys, (E, Q, 4, 2)))
            self.wdet = np.ascontiguousarray(
                np.broadcast_to(rule.weights * detj, (E, Q))
            )
        else:
            phi, dref = _p1_basis(rule.points)
            v0 = mesh.nodes[self.conn[:, 0]]
            e1 = mesh.nodes[self.conn[:, 1]] - v0
            e2 = mesh.nodes[self.conn[:, 2]] - v0
            detj = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
            if np.any(detj <= 0):
                raise AssemblyError("non-positive Jacobian in triangulation")
            # rows of J^{-1}: J = [e1 e2] (columns)
            inv = np.empty((E, 2, 2))
            inv[:, 0, 0] = e2[:, 1] / detj
            inv[:, 0, 1] = -e2[:, 0] / detj
            inv[:, 1, 0] = -e1[:, 1] / detj
            inv[:, 1, 1] = e1[:, 0] / detj
            # physical gradient: dphi_phys = J^{-T} dphi_ref
            dphys = np.einsum("qkr,erd->eqkd", dref, inv)
            self.phi = phi
            self.dphi = np.ascontiguousarray(dphys)
            self.wdet = np.ascontiguousarray(rule.weights[None, :] * detj[:, None])

        self.n_nodes = mesh.n_nodes
        self.n_elements = E
        self.n_qp = Q

    def interp(self, values: np.ndarray) -> np.ndarray:
        """Nodal field -> values at quadrature points, shape (E, Q)."""
        values = np.asarray(values, dtype=float)
        if values.shape != (self.n_nodes,):
            raise AssemblyError(
                f"field has length {values.shape}, mesh has {self.n_nodes} nodes"
            )
        return values[self.conn] @ self.phi.T

    def grad(self, values: np.ndarray) -> np.ndarray:
        """Nodal field -> gradients at quadrature points, shape (E, Q, 2)."""
        values = np.asarray(values, dtype=float)
        if values.shape != (self.n_nodes,):
            raise AssemblyError(
                f"field has length {values.shape}, mesh has {self.n_nodes} nodes"
            )
        return np.einsum("ek,eqkd->eqd", values[self.conn], self.dphi)

    def qp_coords(self) -> np.ndarray:
        """Physical coordinates of all quadrature points, shape (E, Q, 2)."""
        return np.einsum("qk,ekd->eqd", self.phi, self.mesh.nodes[self.conn])

    def as_qp(self, value) -> np.ndarray:
        """Coerce scalar / nodal field / (E, Q) array to a (E, Q) array."""
        arr = np.asarray(value, dtype=float)
        if arr.ndim == 0:
            return np.full((self.n_elements, self.n_qp), float(arr))
        if arr.shape == (self.n_nodes,):
            return self.interp(arr)
        if arr.shape == (self.n_elements, self.n_qp):
            return np.ascontiguousarray(arr)
        raise AssemblyError(f"cannot interpret weight of shape {arr.shape}")


class MeshPattern:
    """CSR sparsity of the nodal adjacency plus the element scatter map."""

    def __init__(self, tables: ElementTables):
        conn = tables.conn
        n = tables.n_nodes
        E, K = conn.shape
        rows = np.repeat(conn, K, axis=1).ravel()
        cols = np.tile(conn, (1, K)).ravel()
        keys = rows * np.int64(n) + cols
        uk = np.unique(keys)
        self.n = n
        self.nnz = uk.size
        counts = np.bincount((uk // n).astype(np.intp), minlength=n)
        self.indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self.indices = (uk % n).astype(np.int64)
        self.emap = np.ascontiguousarray(
            np.searchsorted(uk, keys).reshape(E, K, K), dtype=np.int64
        )
        self.emap_diag = np.ascontiguousarray(
            self.emap[:, np.arange(K), np.arange(K)], dtype=np.int64
        )
        self.diag_pos = np.searchsorted(uk, np.arange(n, dtype=np.int64) * (n + 1))

    def zeros(self) -> np.ndarray:
        return np.zeros(self.nnz)

    def csr(self, data: np.ndarray) -> sp.csr_matrix:
        A = sp.csr_matrix(
            (data, self.indices.copy(), self.indptr.copy()), shape=(self.n, self.n)
        )
        A.has_sorted_indices = True
        return A


@dataclass(frozen=True, eq=False)
class DirichletPlan:
    """Precomputed row replacement for one field of a block system."""

    rows: np.ndarray  # global row indices
    zero_idx: np.ndarray  # data positions to zero
    diag_idx: np.ndarray  # data positions set to one

    def apply(self, data: np.ndarray, rhs: np.ndarray, values: np.ndarray) -> None:
        if values.shape != self.rows.shape:
            raise AssemblyError("one prescribed value per constrained node required")
        data[self.zero_idx] = 0.0
        data[self.diag_idx] = 1.0
        rhs[self.rows] = values


class BlockPattern:
    """CSR layout of a block system whose blocks all share the mesh pattern.

    ``blocks`` lists the structurally present (block_row, block_col) pairs.
    Each present block contributes one data slot array mapping the scalar
    pattern's nnz positions into the composed data array.
    """

    def __init__(self, mp: MeshPattern, blocks, nb: int):
        blocks = sorted(set(blocks))
        if not blocks:
            raise ValueError("empty block layout")
        by_row: dict[int, list[int]] = {}
        for r, c in blocks:
            if not (0 <= r < nb and 0 <= c < nb):
                raise ValueError(f"block {(r, c)} outside {nb}x{nb} layout")
            by_row.setdefault(r, []).append(c)
        if sorted(by_row) != list(range(nb)):
            raise ValueError("every block row needs at least one block")

        N = mp.n
        self.mp = mp
        self.nb = nb
        self.shape = (nb * N, nb * N)
        counts_s = np.diff(mp.indptr)
        row_counts = np.concatenate(
            [counts_s * len(by_row[r]) for r in range(nb)]
        )
        self.indptr = np.concatenate([[0], np.cumsum(row_counts)]).astype(np.int64)
        self.nnz = int(self.indptr[-1])
        self.indices = np.empty(self.nnz, dtype=np.int64)
        self.slots: dict[tuple[int, int], np.ndarray] = {}

        entry_row = np.repeat(np.arange(N), counts_s)
        entry_off = np.arange(mp.nnz) - mp.indptr[entry_row]
        for r in range(nb):
            cs = sorted(by_row[r])
            for pos, c in enumerate(cs):
                slot = (
                    self.indptr[r * N + entry_row]
                    + pos * counts_s[entry_row]
                    + entry_off
                )
                self.indices[slot] = c * N + mp.indices
                self.slots[(r, c)] = slot

    def zeros(self) -> np.ndarray:
        return np.zeros(self.nnz)

    def compose(self, data_blocks: dict) -> np.ndarray:
        data = np.zeros(self.nnz)
        for key, arr in data_blocks.items():
            data[self.slots[key]] = arr
        return data

    def csr(self, data: np.ndarray) -> sp.csr_matrix:
        A = sp.csr_matrix((data, self.indices, self.indptr), shape=self.shape)
        A.has_sorted_indices = True
        return A

    def dirichlet_plan(self, block_row: int, nodes: np.ndarray) -> DirichletPlan:
        if (block_row, block_row) not in self.slots:
            raise ValueError(f"diagonal block {block_row} absent; cannot constrain")
        N = self.mp.n
        nodes = np.asarray(nodes, dtype=np.int64)
        rows = block_row * N + nodes
        spans = [np.arange(self.indptr[r], self.indptr[r + 1]) for r in rows]
        zero_idx = np.concatenate(spans) if spans else np.empty(0, dtype=np.int64)
        diag_idx = np.empty(nodes.size, dtype=np.int64)
        target = block_row * N + nodes
        for k, r in enumerate(rows):
            lo, hi = self.indptr[r], self.indptr[r + 1]
            j = np.searchsorted(self.indices[lo:hi], target[k])
            diag_idx[k] = lo + j
        return DirichletPlan(rows=rows, zero_idx=zero_idx, diag_idx=diag_idx)


# -- data-array assembly (hot path) -----------------------------------------


def mass_data(tables, pattern, weight, lumped=False) -> np.ndarray:
    w_qp = tables.as_qp(weight)
    out = pattern.zeros()
    if lumped:
        kernels.lumped_mass_scatter(tables.phi, tables.wdet, w_qp, pattern.emap_diag, out)
    else:
        kernels.mass_scatter(tables.phi, tables.wdet, w_qp, pattern.emap, out)
    return out


def stiffness_data(tables, pattern, coeff) -> np.ndarray:
    k_qp = tables.as_qp(coeff)
    if k_qp.size and np.min(k_qp) < 0:
        raise AssemblyError(
            f"negative stiffness coefficient at a quadrature point "
            f"(min {np.min(k_qp):.6g}); non-physical iterate escaped clamping"
        )
    out = pattern.zeros()
    kernels.stiffness_scatter(tables.dphi, tables.wdet, k_qp, pattern.emap, out)
    return out


def tensor_stiffness_data(tables, pattern, d_tensor) -> np.ndarray:
    D = np.ascontiguousarray(np.asarray(d_tensor, dtype=float).reshape(2, 2))
    out = pattern.zeros()
    kernels.tensor_stiffness_scatter(tables.dphi, tables.wdet, D, pattern.emap, out)
    return out


def convection_data(tables, pattern, u_qp) -> np.ndarray:
    u_qp = np.ascontiguousarray(u_qp, dtype=float)
    if u_qp.shape != (tables.n_elements, tables.n_qp, 2):
        raise AssemblyError(f"velocity field has shape {u_qp.shape}")
    out = pattern.zeros()
    kernels.convection_scatter(tables.phi, tables.dphi, tables.wdet, u_qp, pattern.emap, out)
    return out


def load_vector(tables, f) -> np.ndarray:
    """b[i] = integral f phi_i; f is a scalar, nodal field or (E, Q) array."""
    f_qp = tables.as_qp(f)
    out = np.zeros(tables.n_nodes)
    kernels.load_scatter(tables.phi, tables.wdet, f_qp, tables.conn, out)
    return out


def vector_load_vector(tables, f_qp) -> np.ndarray:
    """b[i] = integral f . grad(phi_i) for a vector field f at (E, Q, 2)."""
    f_qp = np.ascontiguousarray(f_qp, dtype=float)
    if f_qp.shape != (tables.n_elements, tables.n_qp, 2):
        raise AssemblyError(f"vector load field has shape {f_qp.shape}")
    out = np.zeros(tables.n_nodes)
    kernels.grad_load_scatter(tables.dphi, tables.wdet, f_qp, tables.conn, out)
    return out


# -- public operator API ------------------------------------------------------


def assemble_weighted_mass(tables, weight, pattern=None, lumped=False) -> sp.csr_matrix:
    """M[i, j] = integral w phi_i phi_j (consistent; optionally row-lumped)."""
    pattern = pattern or MeshPattern(tables)
    return pattern.csr(mass_data(tables, pattern, weight, lumped=lumped))


def assemble_weighted_stiffness(tables, coeff, pattern=None) -> sp.csr_matrix:
    """A[i, j] = integral k grad(phi_j).grad(phi_i); rejects negative k."""
    pattern = pattern or MeshPattern(tables)
    return pattern.csr(stiffness_data(tables, pattern, coeff))


def assemble_tensor_stiffness(tables, d_tensor, pattern=None) -> sp.csr_matrix:
    """A[i, j] = integral (D grad(phi_j)).grad(phi_i) for a constant 2x2 D."""
    pattern = pattern or MeshPattern(tables)
    return pattern.csr(tensor_stiffness_data(tables, pattern, d_tensor))


def assemble_convection(tables, u_qp, pattern=None) -> sp.csr_matrix:
    """C[i, j] = integral (u phi_j).grad(phi_i) -- flux-form convection."""
    pattern = pattern or MeshPattern(tables)
    return pattern.csr(convection_data(tables, pattern, u_qp))


def assemble_gravity_load(tables, k_field) -> np.ndarray:
    """b[i] = integral k (e_z . grad(phi_i)) with e_z = (0, 1)."""
    k_qp = tables.as_qp(k_field)
    f_qp = np.zeros((tables.n_elements, tables.n_qp, 2))
    f_qp[:, :, 1] = k_qp
    return vector_load_vector(tables, f_qp)


def compute_water_flux(tables, psi, theta, vg: VanGenuchtenParams) -> np.ndarray:
    """u_w = -K(theta, psi) (grad(psi) + e_z) at quadrature points, (E, Q, 2).

    Pass fields from the previous time level for the lagged flux or the
    current iterate for the alternative; both evaluations share this routine.
    """
    th_qp = tables.as_qp(theta)
    psi_qp = tables.as_qp(psi)
    k_qp = conductivity(th_qp, psi_qp, vg)
    grad_psi = tables.grad(np.asarray(psi, dtype=float))
    return -k_qp[:, :, None] * (grad_psi + EZ)


def apply_dirichlet(matrix, rhs, nodes, values, symmetric=False):
    """Row replacement: constrained row i becomes e_i with rhs_i = value.

    With ``symmetric=True`` the columns are eliminated as well (known values
    moved to the right-hand side), preserving symmetry of symmetric inputs.
    Returns a new (csr_matrix, rhs) pair.
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    values = np.asarray(values, dtype=float)
    if values.shape != nodes.shape:
        raise AssemblyError("one prescribed value per constrained node required")
    A = sp.csr_matrix(matrix, copy=True)
    n = A.shape[0]
    if rhs is None:
        rhs = np.zeros(n)
    b = np.asarray(rhs, dtype=float).copy()
    if b.shape != (n,):
        raise AssemblyError(f"rhs length {b.shape} does not match system size {n}")
    mask = np.zeros(n, dtype=bool)
    mask[nodes] = True

    if symmetric:
        full = np.zeros(n)
        full[nodes] = values
        b -= A @ full
        A.data[mask[A.indices]] = 0.0  # eliminate columns

    row_of_entry = np.repeat(np.arange(n), np.diff(A.indptr))
    A.data[mask[row_of_entry]] = 0.0
    A = (A + sp.coo_matrix((np.ones(nodes.size), (nodes, nodes)), shape=A.shape)).tocsr()
    b[nodes] = values
    return A, b
