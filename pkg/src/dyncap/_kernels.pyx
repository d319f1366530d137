# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled assembly kernels.

Mirrors dyncap._kernels_py; see that module for the contracts.  The loops
fuse the element tensor contraction with the CSR scatter so no (E, K, K)
temporary is materialised.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def mass_scatter(double[:, ::1] phi, double[:, ::1] wdet, double[:, ::1] w_qp,
                 long[:, :, ::1] emap, double[::1] out):
    cdef Py_ssize_t E = wdet.shape[0], Q = wdet.shape[1], K = phi.shape[1]
    cdef Py_ssize_t e, q, i, j
    cdef double w, acc
    for e in range(E):
        for i in range(K):
            for j in range(K):
                acc = 0.0
                for q in range(Q):
                    acc += wdet[e, q] * w_qp[e, q] * phi[q, i] * phi[q, j]
                out[emap[e, i, j]] += acc


def lumped_mass_scatter(double[:, ::1] phi, double[:, ::1] wdet, double[:, ::1] w_qp,
                        long[:, ::1] emap_diag, double[::1] out):
    cdef Py_ssize_t E = wdet.shape[0], Q = wdet.shape[1], K = phi.shape[1]
    cdef Py_ssize_t e, q, i
    cdef double acc
    for e in range(E):
        for i in range(K):
            acc = 0.0
            for q in range(Q):
                acc += wdet[e, q] * w_qp[e, q] * phi[q, i]
            out[emap_diag[e, i]] += acc


def stiffness_scatter(double[:, :, :, ::1] dphi, double[:, ::1] wdet, double[:, ::1] k_qp,
                      long[:, :, ::1] emap, double[::1] out):
    cdef Py_ssize_t E = wdet.shape[0], Q = wdet.shape[1], K = dphi.shape[2]
    cdef Py_ssize_t e, q, i, j
    cdef double acc
    for e in range(E):
        for i in range(K):
            for j in range(K):
                acc = 0.0
                for q in range(Q):
                    acc += wdet[e, q] * k_qp[e, q] * (
                        dphi[e, q, i, 0] * dphi[e, q, j, 0]
                        + dphi[e, q, i, 1] * dphi[e, q, j, 1])
                out[emap[e, i, j]] += acc


def tensor_stiffness_scatter(double[:, :, :, ::1] dphi, double[:, ::1] wdet,
                             double[:, ::1] d_tensor, long[:, :, ::1] emap,
                             double[::1] out):
    cdef Py_ssize_t E = wdet.shape[0], Q = wdet.shape[1], K = dphi.shape[2]
    cdef Py_ssize_t e, q, i, j
    cdef double d00 = d_tensor[0, 0], d01 = d_tensor[0, 1]
    cdef double d10 = d_tensor[1, 0], d11 = d_tensor[1, 1]
    cdef double acc, gx, gy
    for e in range(E):
        for i in range(K):
            for j in range(K):
                acc = 0.0
                for q in range(Q):
                    gx = d00 * dphi[e, q, j, 0] + d01 * dphi[e, q, j, 1]
                    gy = d10 * dphi[e, q, j, 0] + d11 * dphi[e, q, j, 1]
                    acc += wdet[e, q] * (gx * dphi[e, q, i, 0] + gy * dphi[e, q, i, 1])
                out[emap[e, i, j]] += acc


def convection_scatter(double[:, ::1] phi, double[:, :, :, ::1] dphi, double[:, ::1] wdet,
                       double[:, :, ::1] u_qp, long[:, :, ::1] emap, double[::1] out):
    cdef Py_ssize_t E = wdet.shape[0], Q = wdet.shape[1], K = phi.shape[1]
    cdef Py_ssize_t e, q, i, j
    cdef double acc
    for e in range(E):
        for i in range(K):
            for j in range(K):
                acc = 0.0
                for q in range(Q):
                    acc += wdet[e, q] * phi[q, j] * (
                        u_qp[e, q, 0] * dphi[e, q, i, 0]
                        + u_qp[e, q, 1] * dphi[e, q, i, 1])
                out[emap[e, i, j]] += acc


def load_scatter(double[:, ::1] phi, double[:, ::1] wdet, double[:, ::1] f_qp,
                 long[:, ::1] conn, double[::1] out):
    cdef Py_ssize_t E = wdet.shape[0], Q = wdet.shape[1], K = phi.shape[1]
    cdef Py_ssize_t e, q, i
    cdef double acc
    for e in range(E):
        for i in range(K):
            acc = 0.0
            for q in range(Q):
                acc += wdet[e, q] * f_qp[e, q] * phi[q, i]
            out[conn[e, i]] += acc


def grad_load_scatter(double[:, :, :, ::1] dphi, double[:, ::1] wdet,
                      double[:, :, ::1] f_qp, long[:, ::1] conn, double[::1] out):
    cdef Py_ssize_t E = wdet.shape[0], Q = wdet.shape[1], K = dphi.shape[2]
    cdef Py_ssize_t e, q, i
    cdef double acc
    for e in range(E):
        for i in range(K):
            acc = 0.0
            for q in range(Q):
                acc += wdet[e, q] * (f_qp[e, q, 0] * dphi[e, q, i, 0]
                                     + f_qp[e, q, 1] * dphi[e, q, i, 1])
            out[conn[e, i]] += acc
