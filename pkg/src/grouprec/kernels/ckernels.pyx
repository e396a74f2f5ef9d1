# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for the factorization baselines."""

import numpy as np

from libc.math cimport sqrt
from libc.stdint cimport int64_t


def svd_sgd(const int[::1] u, const int[::1] i, const double[::1] r,
            double mu, double[::1] bu, double[::1] bi,
            double[:, ::1] P, double[:, ::1] Q,
            int epochs, double lr, double reg):
    """Biased matrix-factorization SGD, one rating at a time, in place."""
    cdef Py_ssize_t n = r.shape[0], f = P.shape[1]
    cdef Py_ssize_t e, k, j
    cdef int uu, ii
    cdef double err, dot, puf, qif
    for e in range(epochs):
        for k in range(n):
            uu = u[k]
            ii = i[k]
            dot = 0.0
            for j in range(f):
                dot += P[uu, j] * Q[ii, j]
            err = r[k] - (mu + bu[uu] + bi[ii] + dot)
            bu[uu] += lr * (err - reg * bu[uu])
            bi[ii] += lr * (err - reg * bi[ii])
            for j in range(f):
                puf = P[uu, j]
                qif = Q[ii, j]
                P[uu, j] += lr * (err * qif - reg * puf)
                Q[ii, j] += lr * (err * puf - reg * qif)


def svdpp_sgd(const int[::1] u, const int[::1] i, const double[::1] r,
              double mu, double[::1] bu, double[::1] bi,
              double[:, ::1] P, double[:, ::1] Q, double[:, ::1] Y,
              const int[::1] iu_flat, const int64_t[::1] iu_off,
              int epochs, double lr, double reg):
    """SVD++ SGD: adds the implicit-feedback sum over each user's rated items."""
    cdef Py_ssize_t n = r.shape[0], f = P.shape[1]
    cdef double[::1] impl = np.empty(f)
    cdef double[::1] qold = np.empty(f)
    cdef Py_ssize_t e, k, j, t, lo, hi
    cdef int uu, ii, jj
    cdef double err, dot, sq, puf
    for e in range(epochs):
        for k in range(n):
            uu = u[k]
            ii = i[k]
            lo = iu_off[uu]
            hi = iu_off[uu + 1]
            sq = 1.0 / sqrt(<double> (hi - lo))
            for j in range(f):
                impl[j] = 0.0
            for t in range(lo, hi):
                jj = iu_flat[t]
                for j in range(f):
                    impl[j] += Y[jj, j]
            dot = 0.0
            for j in range(f):
                impl[j] *= sq
                dot += Q[ii, j] * (P[uu, j] + impl[j])
            err = r[k] - (mu + bu[uu] + bi[ii] + dot)
            bu[uu] += lr * (err - reg * bu[uu])
            bi[ii] += lr * (err - reg * bi[ii])
            for j in range(f):
                puf = P[uu, j]
                qold[j] = Q[ii, j]
                P[uu, j] += lr * (err * qold[j] - reg * puf)
                Q[ii, j] += lr * (err * (puf + impl[j]) - reg * qold[j])
            for t in range(lo, hi):
                jj = iu_flat[t]
                for j in range(f):
                    Y[jj, j] += lr * (err * sq * qold[j] - reg * Y[jj, j])


def nmf_epochs(const int[::1] u, const int[::1] i, const double[::1] r,
               double[:, ::1] P, double[:, ::1] Q,
               const double[::1] user_counts, const double[::1] item_counts,
               int epochs, double reg_pu, double reg_qi):
    """Regularized multiplicative updates; factors stay non-negative."""
    cdef Py_ssize_t n = r.shape[0], f = P.shape[1]
    cdef Py_ssize_t n_users = P.shape[0], n_items = Q.shape[0]
    cdef double[:, ::1] user_num = np.empty((n_users, f))
    cdef double[:, ::1] user_den = np.empty((n_users, f))
    cdef double[:, ::1] item_num = np.empty((n_items, f))
    cdef double[:, ::1] item_den = np.empty((n_items, f))
    cdef Py_ssize_t e, k, j, a
    cdef int uu, ii
    cdef double est, den
    for e in range(epochs):
        for a in range(n_users):
            for j in range(f):
                user_num[a, j] = 0.0
                user_den[a, j] = 0.0
        for a in range(n_items):
            for j in range(f):
                item_num[a, j] = 0.0
                item_den[a, j] = 0.0
        for k in range(n):
            uu = u[k]
            ii = i[k]
            est = 0.0
            for j in range(f):
                est += P[uu, j] * Q[ii, j]
            for j in range(f):
                user_num[uu, j] += Q[ii, j] * r[k]
                user_den[uu, j] += Q[ii, j] * est
                item_num[ii, j] += P[uu, j] * r[k]
                item_den[ii, j] += P[uu, j] * est
        for a in range(n_users):
            for j in range(f):
                den = user_den[a, j] + user_counts[a] * reg_pu * P[a, j]
                if den > 0.0:
                    P[a, j] *= user_num[a, j] / den
        for a in range(n_items):
            for j in range(f):
                den = item_den[a, j] + item_counts[a] * reg_qi * Q[a, j]
                if den > 0.0:
                    Q[a, j] *= item_num[a, j] / den
