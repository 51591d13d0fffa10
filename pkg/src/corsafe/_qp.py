"""Dense convex QP solver with an explicit infeasibility certificate.

Solves ``min 0.5 x'Hx + c'x  s.t.  E x = f,  A x <= b`` for strictly convex H
by a dual active-set method: start at the unconstrained minimum, repeatedly
add the most violated constraint, and take primal/dual steps that keep the
iterate dual-feasible.  Adding a constraint whose normal already lies in the
span of the active normals with no droppable blocker yields a Farkas-style
certificate that the constraint system is inconsistent, which is how the
caller observes "solver failure" as a first-class outcome.

The working sets here are tiny (tens of variables), so the per-iteration
linear algebra just refactors dense systems instead of updating factors.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

FEAS_TOL = 1e-9
Z_TOL = 1e-10


@dataclass
class Certificate:
    """Farkas evidence that the constraint system is inconsistent.

    With ``sign`` applied to the violated row (always +1 for inequalities)
    and ``coeffs`` paired with ``active`` rows in their original orientation:

        sign * a_p + sum_j coeffs[j] * a_j  = 0
        sign * b_p + sum_j coeffs[j] * b_j  < 0
        coeffs[j] >= 0 for inequality rows

    so no point can satisfy the violated row together with the active rows.
    """
    index: int
    is_eq: bool
    sign: float
    active: list
    coeffs: np.ndarray
    violation: float


@dataclass
class QPResult:
    status: str                     # optimal | infeasible | iteration_limit
    x: np.ndarray | None = None
    obj: float = np.nan
    lam_eq: np.ndarray | None = None
    lam_in: np.ndarray | None = None
    iterations: int = 0
    certificate: Certificate | None = None
    kkt: dict = field(default_factory=dict)


def solve_qp(H, c, A_eq=None, b_eq=None, A_in=None, b_in=None,
             max_iter: int = 200) -> QPResult:
    H = np.asarray(H, dtype=float)
    c = np.asarray(c, dtype=float)
    n = c.shape[0]
    A_eq = np.zeros((0, n)) if A_eq is None else np.asarray(A_eq, dtype=float)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float)
    A_in = np.zeros((0, n)) if A_in is None else np.asarray(A_in, dtype=float)
    b_in = np.zeros(0) if b_in is None else np.asarray(b_in, dtype=float)

    chol = cho_factor(H, lower=True)
    x = cho_solve(chol, -c)

    active: list[tuple[int, bool]] = []      # (row index, is_eq)
    signs: dict[tuple[int, bool], float] = {}
    lam: list[float] = []
    n_iter = 0

    def row(key):
        i, is_eq = key
        a = A_eq[i] if is_eq else A_in[i]
        b = b_eq[i] if is_eq else b_in[i]
        s = signs.get(key, 1.0)
        return s * a, s * b

    def directions(a_p):
        """Primal direction z (keeps active rows tight) and dual rates r.

        Dependence of the candidate normal on the active normals is decided
        by a least-squares fit first; the projected direction is only formed
        for independent candidates, which keeps the Schur solve conditioned.
        """
        u = cho_solve(chol, a_p)
        if not active:
            return u, np.zeros(0), float(a_p @ u), False
        N = np.vstack([row(k)[0] for k in active])
        w, *_ = np.linalg.lstsq(N.T, a_p, rcond=None)
        scale = max(1.0, float(np.abs(a_p).max()))
        if np.abs(N.T @ w - a_p).max() <= 1e-9 * scale:
            return np.zeros_like(u), w, 0.0, True
        HinvNT = cho_solve(chol, N.T)
        S = N @ HinvNT
        rhs = N @ u
        try:
            r = np.linalg.solve(S, rhs)
        except np.linalg.LinAlgError:
            r = np.linalg.lstsq(S, rhs, rcond=None)[0]
        z = u - HinvNT @ r
        apz = float(a_p @ z)
        z_zero = apz <= Z_TOL * max(1.0, float(a_p @ u))
        return z, r, apz, z_zero

    def make_certificate(key, r, s):
        coeffs = np.array([-r[j] * signs.get(k, 1.0) for j, k in enumerate(active)])
        return Certificate(index=key[0], is_eq=key[1], sign=signs.get(key, 1.0),
                           active=list(active), coeffs=coeffs, violation=s)

    def add_constraint(key):
        """Drive constraint ``key`` to equality; None on success, else a
        Certificate or the string 'iteration_limit'."""
        nonlocal x, n_iter
        a_p, b_p = row(key)
        lam_p = 0.0
        s = float(a_p @ x) - b_p
        if s <= FEAS_TOL:
            if key[1]:
                # equality already tight: track it only if independent
                z, r, apz, z_zero = directions(a_p)
                if not z_zero:
                    active.append(key)
                    lam.append(0.0)
            return None
        while True:
            n_iter += 1
            if n_iter > max_iter:
                return "iteration_limit"
            z, r, apz, z_zero = directions(a_p)
            # dual blocking step over droppable (inequality) members
            t1 = np.inf
            drop = -1
            for j, k in enumerate(active):
                if not k[1] and r[j] > Z_TOL:
                    tj = lam[j] / r[j]
                    if tj < t1:
                        t1 = tj
                        drop = j
            if z_zero:
                if drop < 0:
                    return make_certificate(key, r, s)
                for j in range(len(active)):
                    lam[j] -= t1 * r[j]
                lam_p += t1
                active.pop(drop)
                lam.pop(drop)
                continue
            t2 = s / apz
            t = min(t1, t2)
            x = x - t * z
            for j in range(len(active)):
                lam[j] -= t * r[j]
            lam_p += t
            s = float(a_p @ x) - b_p
            if t2 <= t1:
                active.append(key)
                lam.append(lam_p)
                return None
            active.pop(drop)
            lam.pop(drop)

    # equalities first (forced members, sign-normalized so violation is +)
    for i in range(A_eq.shape[0]):
        key = (i, True)
        if float(A_eq[i] @ x) - b_eq[i] < 0:
            signs[key] = -1.0
        res = add_constraint(key)
        if isinstance(res, Certificate):
            return QPResult(status="infeasible", certificate=res, iterations=n_iter)
        if res == "iteration_limit":
            return QPResult(status="iteration_limit", iterations=n_iter)

    while True:
        viol = A_in @ x - b_in if A_in.shape[0] else np.zeros(0)
        active_in = {k[0] for k in active if not k[1]}
        p = -1
        worst = FEAS_TOL
        for i in range(viol.shape[0]):
            if i not in active_in and viol[i] > worst:
                worst = viol[i]
                p = i
        if p < 0:
            break
        res = add_constraint((p, False))
        if isinstance(res, Certificate):
            return QPResult(status="infeasible", certificate=res, iterations=n_iter)
        if res == "iteration_limit":
            return QPResult(status="iteration_limit", iterations=n_iter)

    x, lam_eq, lam_in = _polish(H, c, A_eq, b_eq, A_in, b_in, x, active, lam, signs)
    obj = 0.5 * float(x @ H @ x) + float(c @ x)
    kkt = kkt_residuals(H, c, A_eq, b_eq, A_in, b_in, x, lam_eq, lam_in)
    # never report an optimum that drifted off the constraints
    scale = max(1.0, float(np.abs(x).max()))
    if kkt["primal_eq"] > 1e-6 * scale or kkt["primal_in"] > 1e-6 * scale:
        return QPResult(status="numerical", x=x, iterations=n_iter, kkt=kkt)
    return QPResult(status="optimal", x=x, obj=obj, lam_eq=lam_eq, lam_in=lam_in,
                    iterations=n_iter, kkt=kkt)


def _polish(H, c, A_eq, b_eq, A_in, b_in, x0, active, lam, signs):
    """Re-solve the equality-constrained problem on the final active set with
    one round of iterative refinement; tightens KKT residuals to ~1e-12."""
    n = x0.shape[0]
    rows = []
    rhs = []
    for k in active:
        i, is_eq = k
        if is_eq:
            rows.append(A_eq[i])
            rhs.append(b_eq[i])
        else:
            rows.append(A_in[i])
            rhs.append(b_in[i])
    m = len(rows)
    lam_eq = np.zeros(A_eq.shape[0])
    lam_in = np.zeros(A_in.shape[0])
    if m == 0:
        x = np.linalg.solve(H, -c)
        return x, lam_eq, lam_in
    N = np.vstack(rows)
    rhs = np.asarray(rhs)
    K = np.zeros((n + m, n + m))
    K[:n, :n] = H
    K[:n, n:] = N.T
    K[n:, :n] = N
    r = np.concatenate([-c, rhs])
    try:
        sol = np.linalg.solve(K, r)
        sol = sol + np.linalg.solve(K, r - K @ sol)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(K, r, rcond=None)[0]
    x = sol[:n]
    mult = sol[n:]
    # a degenerate active set can make K near-singular without raising;
    # keep the active-set iterate when the polish drifted off the constraints
    scale = max(1.0, float(np.abs(x0).max()))
    if (not np.all(np.isfinite(sol))
            or np.abs(N @ x - rhs).max() > 1e-7 * scale
            or np.abs(x - x0).max() > 1e-3 * scale):
        x = x0
        mult = np.linalg.lstsq(N.T, -(H @ x0 + c), rcond=None)[0]
    for j, k in enumerate(active):
        i, is_eq = k
        if is_eq:
            lam_eq[i] = mult[j]  # multipliers of original-orientation rows
        else:
            lam_in[i] = max(mult[j], 0.0)
    return x, lam_eq, lam_in


def kkt_residuals(H, c, A_eq, b_eq, A_in, b_in, x, lam_eq, lam_in) -> dict:
    grad = H @ x + c
    if A_eq.shape[0]:
        grad = grad + A_eq.T @ lam_eq
    if A_in.shape[0]:
        grad = grad + A_in.T @ lam_in
        slack = A_in @ x - b_in
        primal_in = float(max(0.0, slack.max()))
        comp = float(np.abs(lam_in * slack).max())
        dual = float(max(0.0, -(lam_in.min()))) if lam_in.size else 0.0
    else:
        primal_in = comp = dual = 0.0
    primal_eq = float(np.abs(A_eq @ x - b_eq).max()) if A_eq.shape[0] else 0.0
    return {
        "stationarity": float(np.abs(grad).max()),
        "primal_eq": primal_eq,
        "primal_in": primal_in,
        "dual": dual,
        "complementarity": comp,
    }


def verify_certificate(cert: Certificate, A_eq, b_eq, A_in, b_in,
                       tol: float = 1e-7) -> bool:
    """Check the Farkas conditions recorded in an infeasibility certificate."""
    A_eq = np.asarray(A_eq, dtype=float)
    A_in = np.asarray(A_in, dtype=float)
    a_p = (A_eq[cert.index] if cert.is_eq else A_in[cert.index])
    b_p = float(b_eq[cert.index] if cert.is_eq else b_in[cert.index])
    if not cert.is_eq and cert.sign != 1.0:
        return False
    combo = cert.sign * a_p.astype(float)
    offset = cert.sign * b_p
    for k, w in zip(cert.active, cert.coeffs):
        i, is_eq = k
        if not is_eq and w < -tol:
            return False  # Farkas multipliers on inequalities are nonnegative
        a = A_eq[i] if is_eq else A_in[i]
        b = b_eq[i] if is_eq else b_in[i]
        combo = combo + w * a
        offset = offset + w * b
    scale = max(1.0, float(np.abs(a_p).max()))
    expected = -cert.violation  # offset reproduces the negated violation
    return bool(np.abs(combo).max() <= tol * scale
                and abs(offset - expected) <= tol * max(1.0, abs(expected))
                and expected < 0)
