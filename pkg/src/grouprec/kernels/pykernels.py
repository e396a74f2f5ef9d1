"""Numpy fallback for the compiled SGD kernels.

Update rules and iteration order are identical to the compiled versions;
floating-point results may differ at rounding level because numpy dot
products sum in a different order than the C loops.
"""

import numpy as np


def svd_sgd(u, i, r, mu, bu, bi, P, Q, epochs, lr, reg):
    """Biased matrix-factorization SGD, one rating at a time, in place."""
    for _ in range(epochs):
        for k in range(len(r)):
            uu = u[k]
            ii = i[k]
            pu = P[uu]
            qi = Q[ii]
            err = r[k] - (mu + bu[uu] + bi[ii] + pu @ qi)
            bu[uu] += lr * (err - reg * bu[uu])
            bi[ii] += lr * (err - reg * bi[ii])
            pu_old = pu.copy()
            pu += lr * (err * qi - reg * pu)
            qi += lr * (err * pu_old - reg * qi)


def svdpp_sgd(u, i, r, mu, bu, bi, P, Q, Y, iu_flat, iu_off, epochs, lr, reg):
    """SVD++ SGD: adds the implicit-feedback sum over each user's rated items."""
    for _ in range(epochs):
        for k in range(len(r)):
            uu = u[k]
            ii = i[k]
            items = iu_flat[iu_off[uu] : iu_off[uu + 1]]
            sq = 1.0 / np.sqrt(len(items))
            impl = Y[items].sum(axis=0) * sq
            pu_old = P[uu].copy()
            qi_old = Q[ii].copy()
            err = r[k] - (mu + bu[uu] + bi[ii] + qi_old @ (pu_old + impl))
            bu[uu] += lr * (err - reg * bu[uu])
            bi[ii] += lr * (err - reg * bi[ii])
            P[uu] += lr * (err * qi_old - reg * pu_old)
            Q[ii] += lr * (err * (pu_old + impl) - reg * qi_old)
            Y[items] += lr * (err * sq * qi_old - reg * Y[items])


def nmf_epochs(u, i, r, P, Q, user_counts, item_counts, epochs, reg_pu, reg_qi):
    """Regularized multiplicative updates; factors stay non-negative."""
    for _ in range(epochs):
        pu = P[u]
        qi = Q[i]
        est = np.einsum("kf,kf->k", pu, qi)
        user_num = np.zeros_like(P)
        user_den = np.zeros_like(P)
        item_num = np.zeros_like(Q)
        item_den = np.zeros_like(Q)
        np.add.at(user_num, u, qi * r[:, None])
        np.add.at(user_den, u, qi * est[:, None])
        np.add.at(item_num, i, pu * r[:, None])
        np.add.at(item_den, i, pu * est[:, None])
        den = user_den + user_counts[:, None] * reg_pu * P
        np.multiply(P, np.divide(user_num, den, out=np.ones_like(P), where=den > 0), out=P)
        den = item_den + item_counts[:, None] * reg_qi * Q
        np.multiply(Q, np.divide(item_num, den, out=np.ones_like(Q), where=den > 0), out=Q)
