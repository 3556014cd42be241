"""Pure-numpy evaluation kernel.

Fallback twin of the compiled kernel in ``_kernel_cy``; both expose the
same three functions and must stay numerically interchangeable (see
tests/test_kernel_parity.py).  Arrays are packed by ``ObjectiveContext``:

    phi          (N_c*P,)   float64, chirp-major flattening
    y            (N,)       complex128
    t_phase      (N, P)     float64, column p-1 holds (n/f_s)^p
    t_amp        (N, A+1)   float64, column a holds (n/f_s)^a
    amp_orders   (N_c,)     intp
    col_offsets  (N_c+1,)   intp, column block boundaries of H
"""

import numpy as np

KERNEL_NAME = "python"


def build_basis(phi, t_phase, t_amp, amp_orders, col_offsets):
    """Assemble the complex basis matrix H of shape (N, M)."""
    n, p_order = t_phase.shape
    n_c = len(amp_orders)
    m = int(col_offsets[-1])
    phases = t_phase @ phi.reshape(n_c, p_order).T  # (N, N_c), cycles
    carriers = np.exp(2j * np.pi * phases)
    h = np.empty((n, m), dtype=np.complex128)
    for c in range(n_c):
        lo, hi = int(col_offsets[c]), int(col_offsets[c + 1])
        h[:, lo:hi] = t_amp[:, : hi - lo] * carriers[:, c : c + 1]
    return h


def _solve_normal(h, y, gamma):
    """Solve (H*H + gamma I) b = H*y via Cholesky; return (b, L)."""
    m = h.shape[1]
    g = h.conj().T @ h
    if gamma != 0.0:
        g.flat[:: m + 1] += gamma
    try:
        low = np.linalg.cholesky(g)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            "normal matrix H*H + gamma*I is not positive definite "
            "(rank-deficient basis with gamma=0?)"
        ) from exc
    z = np.linalg.solve(low, h.conj().T @ y)
    b = np.linalg.solve(low.conj().T, z)
    return b, low


def eval_objective(phi, y, t_phase, t_amp, amp_orders, col_offsets, gamma,
                   want_grad=True):
    """Projection objective J(phi) and optionally its gradient.

    Returns (J, grad, b_hat, residual); ``grad`` is None unless requested.
    J = Re(y* r) with r = y - H b_hat, which equals y* P_H^perp y.
    Gradient entry (c, p) is -2 Re[r* dH/dphi_{c,p} b_hat], computed
    without forming the N x N projector.
    """
    h = build_basis(phi, t_phase, t_amp, amp_orders, col_offsets)
    b, _ = _solve_normal(h, y, gamma)
    r = y - h @ b
    j = float(np.real(np.vdot(y, r)))
    if not want_grad:
        return j, None, b, r
    n_c = len(amp_orders)
    p_order = t_phase.shape[1]
    grad = np.empty(n_c * p_order)
    r_conj = np.conj(r)
    for c in range(n_c):
        lo, hi = int(col_offsets[c]), int(col_offsets[c + 1])
        fitted_c = h[:, lo:hi] @ b[lo:hi]
        # -2 Re[j 2 pi sum_n t^p conj(r) u_c] = 4 pi sum_n t^p Im(conj(r) u_c)
        s_imag = (r_conj * fitted_c).imag
        grad[c * p_order : (c + 1) * p_order] = (4.0 * np.pi) * (t_phase.T @ s_imag)
    return j, grad, b, r
