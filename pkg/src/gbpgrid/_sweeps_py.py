"""Pure NumPy message-passing kernels (fallback backend).

Same arithmetic as the compiled extension, line-vectorized: each sweep
line is one batch of independent edges, and belief refreshes accumulate
incoming messages in the fixed per-pixel edge order so both backends
produce bit-identical results.
"""

import numpy as np

BACKEND_NAME = "python"


def _fresh_messages(c_eta, c_lam, w, r, eps):
    with np.errstate(divide="ignore", invalid="ignore"):
        f_lam = 1.0 / (1.0 / c_lam + 1.0 / w)
        f_eta = (c_eta / c_lam + r) * f_lam
    ok = c_lam > eps
    return np.where(ok, f_eta, 0.0), np.where(ok, f_lam, 0.0)


def serial_sweep(eta_msg, lam_msg, eta_bel, lam_bel,
                 src, dst, rev, w_pair, r_pair, beta,
                 eta_u, lam_u, in_edge, in_ptr, dp, eps):
    lep = dp.line_edge_ptr
    lpp = dp.line_pix_ptr
    glp = dp.gather_line_ptr
    for l in range(lep.shape[0] - 1):
        e0, e1 = lep[l], lep[l + 1]
        if e1 > e0:
            sl = slice(e0, e1)
            j = src[sl]
            rv = rev[sl]
            c_eta = eta_bel[j] - eta_msg[rv]
            c_lam = lam_bel[j] - lam_msg[rv]
            f_eta, f_lam = _fresh_messages(c_eta, c_lam, w_pair[sl], r_pair[sl], eps)
            b = beta[dst[sl]]
            eta_msg[sl] = b * eta_msg[sl] + (1.0 - b) * f_eta
            lam_msg[sl] = b * lam_msg[sl] + (1.0 - b) * f_lam
        pixs = dp.line_pix[lpp[l]:lpp[l + 1]]
        if pixs.size == 0:
            continue
        g = dp.gather[glp[l]:glp[l + 1]]
        o = dp.owner[glp[l]:glp[l + 1]]
        eta_bel[pixs] = eta_u[pixs] + np.bincount(
            o, weights=eta_msg[g], minlength=pixs.size
        )
        lam_bel[pixs] = lam_u[pixs] + np.bincount(
            o, weights=lam_msg[g], minlength=pixs.size
        )


def nonlocal_step(eta_msg, lam_msg, eta_bel, lam_bel,
                  src, dst, rev, w_pair, r_pair, beta,
                  eta_u, lam_u, in_edge, in_ptr, all_owner, lo, hi, eps):
    sl = slice(lo, hi)
    old_eta = eta_msg[sl].copy()
    old_lam = lam_msg[sl].copy()
    j = src[sl]
    rv = rev[sl] - lo
    c_eta = eta_bel[j] - old_eta[rv]
    c_lam = lam_bel[j] - old_lam[rv]
    f_eta, f_lam = _fresh_messages(c_eta, c_lam, w_pair[sl], r_pair[sl], eps)
    b = beta[dst[sl]]
    eta_msg[sl] = b * old_eta + (1.0 - b) * f_eta
    lam_msg[sl] = b * old_lam + (1.0 - b) * f_lam
    n = eta_bel.shape[0]
    eta_bel[:] = eta_u + np.bincount(all_owner, weights=eta_msg[in_edge], minlength=n)
    lam_bel[:] = lam_u + np.bincount(all_owner, weights=lam_msg[in_edge], minlength=n)
