"""Pure-NumPy assembly kernels (fallback backend).

Same contracts as the compiled module ``dyncap._kernels``: matrix kernels
accumulate element contributions into a flat CSR data array through the
precomputed element-entry map ``emap`` (shape (E, K, K), values are positions
in the data array); vector kernels accumulate into a nodal vector through the
connectivity ``conn``.  Tables: ``phi`` (Q, K) basis values, ``dphi``
(E, Q, K, 2) physical gradients, ``wdet`` (E, Q) quadrature weight times
Jacobian determinant.
"""

import numpy as np


def _scatter_matrix(elem, emap, out):
    out += np.bincount(emap.ravel(), weights=elem.ravel(), minlength=out.size)


def _scatter_vector(elem, conn, out):
    out += np.bincount(conn.ravel(), weights=elem.ravel(), minlength=out.size)


def mass_scatter(phi, wdet, w_qp, emap, out):
    """out[emap[e,i,j]] += sum_q wdet*w * phi_i phi_j."""
    elem = np.einsum("eq,qi,qj->eij", wdet * w_qp, phi, phi)
    _scatter_matrix(elem, emap, out)


def lumped_mass_scatter(phi, wdet, w_qp, emap_diag, out):
    """Row-sum lumping: out[emap_diag[e,i]] += sum_q wdet*w * phi_i."""
    elem = np.einsum("eq,qi->ei", wdet * w_qp, phi)
    _scatter_matrix(elem, emap_diag, out)


def stiffness_scatter(dphi, wdet, k_qp, emap, out):
    """out[emap[e,i,j]] += sum_q wdet*k * grad(phi_j).grad(phi_i)."""
    elem = np.einsum("eq,eqid,eqjd->eij", wdet * k_qp, dphi, dphi)
    _scatter_matrix(elem, emap, out)


def tensor_stiffness_scatter(dphi, wdet, d_tensor, emap, out):
    """out[emap[e,i,j]] += sum_q wdet * (D grad(phi_j)).grad(phi_i)."""
    elem = np.einsum("eq,ab,eqjb,eqia->eij", wdet, d_tensor, dphi, dphi)
    _scatter_matrix(elem, emap, out)


def convection_scatter(phi, dphi, wdet, u_qp, emap, out):
    """out[emap[e,i,j]] += sum_q wdet * (u phi_j).grad(phi_i)."""
    elem = np.einsum("eq,eqd,eqid,qj->eij", wdet, u_qp, dphi, phi)
    _scatter_matrix(elem, emap, out)


def load_scatter(phi, wdet, f_qp, conn, out):
    """out[conn[e,i]] += sum_q wdet*f * phi_i."""
    elem = np.einsum("eq,qi->ei", wdet * f_qp, phi)
    _scatter_vector(elem, conn, out)


def grad_load_scatter(dphi, wdet, f_qp, conn, out):
    """out[conn[e,i]] += sum_q wdet * f.grad(phi_i), with vector f (E, Q, 2)."""
    elem = np.einsum("eq,eqd,eqid->ei", wdet, f_qp, dphi)
    _scatter_vector(elem, conn, out)
