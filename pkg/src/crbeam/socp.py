"""Dense second-order cone solver: phase-1 feasibility plus a primal log barrier.

Handles programs of the form

    minimize    c^T z
    subject to  ||A_k z + b_k|| <= d_k^T z + e_k      (cone blocks)
                f_j^T z <= g_j                        (linear inequalities)
                R z = q                               (equalities)

Equalities are removed by null-space elimination, each cone block contributes
the barrier term -ln((d^T z + e)^2 - ||A z + b||^2), and the inner problems
are solved with damped Newton steps (Armijo backtracking; failed Hessian
factorizations are rescued by an escalating diagonal shift, with plain
gradient descent as the last resort).  Everything is dense; the problems
this package generates stay below a few hundred variables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SocBlock",
    "ConeProgram",
    "ConeSolution",
    "Phase1Result",
    "UnboundedError",
    "phase1",
    "solve",
    "minimize_newton",
]

# Barrier schedule and Newton tolerances.
S0 = 1.0
MU = 10.0
GAP_TOL = 1e-8
ARMIJO = 0.25
SHRINK = 0.5
DECREMENT_TOL = 1e-10
GRAD_TOL = 1e-9
MAX_INNER = 120
MAX_OUTER = 40
SLACK_MARGIN = 1e-9
ITERATE_CAP = 1e8
STEP_CAP = 1e6
SLACK_CEILING = 1e6


class UnboundedError(RuntimeError):
    """Iterates ran away: no constraint bounds the descent direction."""

    def __init__(self, msg, iterate=None):
        super().__init__(msg)
        self.iterate = iterate


@dataclass
class SocBlock:
    """One cone constraint ||A z + b|| <= d^T z + e."""

    A: np.ndarray
    b: np.ndarray
    d: np.ndarray
    e: float


@dataclass
class ConeProgram:
    n: int
    c: np.ndarray
    soc: list = field(default_factory=list)
    lin: list = field(default_factory=list)   # (f, g) rows, f^T z <= g
    eq: list = field(default_factory=list)    # (row, rhs)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).reshape(self.n)
        for blk in self.soc:
            blk.A = np.atleast_2d(np.asarray(blk.A, dtype=float))
            blk.b = np.asarray(blk.b, dtype=float).reshape(blk.A.shape[0])
            blk.d = np.asarray(blk.d, dtype=float).reshape(self.n)
            if blk.A.shape[1] != self.n:
                raise ValueError("cone block width != n")


@dataclass
class ConeSolution:
    z: np.ndarray
    objective: float
    status: str                # optimal | infeasible | max_iter
    newton_iters: int
    duality_gap_bound: float
    outer_objectives: list = field(default_factory=list)


@dataclass
class Phase1Result:
    status: str                # feasible | infeasible | unbounded
    z: np.ndarray | None
    slack: float


def minimize_newton(value, grad, hess, v0, *, gtol=GRAD_TOL,
                    dec_tol=DECREMENT_TOL, max_iter=MAX_INNER,
                    iterate_cap=ITERATE_CAP, callback=None, trace=None):
    """Damped Newton descent on a smooth (mostly convex) function.

    ``value(v)`` must return +inf outside the domain; the backtracking line
    search then keeps iterates strictly inside.  A failed Hessian
    factorization is retried with an escalating diagonal shift and plain
    gradient descent is the last resort.  ``callback(v)`` may stop the
    descent early by returning True.  Returns (v, iters, grad_norm).
    """
    v = np.array(v0, dtype=float)
    fv = value(v)
    if not np.isfinite(fv):
        raise ValueError("Newton start point outside the domain")
    if callback is not None and callback(v):
        return v, 0, float(np.linalg.norm(grad(v)))
    for it in range(max_iter):
        g = grad(v)
        gnorm = float(np.linalg.norm(g))
        if gnorm <= gtol:
            return v, it, gnorm
        H = hess(v)
        step = None
        shift = 0.0
        scale = 1.0 + float(np.max(np.abs(np.diag(H))))
        for _ in range(14):
            try:
                L = np.linalg.cholesky(H if shift == 0.0 else H + shift * np.eye(H.shape[0]))
                step = -np.linalg.solve(L.T, np.linalg.solve(L, g))
                decrement2 = float(-g @ step)
                break
            except np.linalg.LinAlgError:
                # Indefinite or rank-deficient curvature: shift the diagonal
                # until the factorization goes through (still a descent
                # direction); plain gradient descent is the last resort.
                shift = 1e-15 * scale if shift == 0.0 else shift * 100.0
        if step is None:
            step = -g
            decrement2 = gnorm * gnorm
        # The decrement certifies closeness only when the shift is a pure
        # roundoff repair; a genuinely non-convex rescue step keeps iterating.
        trusted = shift <= 1e-10 * scale
        if trusted and 0.5 * decrement2 <= dec_tol:
            return v, it, gnorm
        if trusted and decrement2 <= 1e-8:
            # Quadratic-convergence region: objective differences are below
            # float noise, so skip the Armijo test and take damped-to-domain
            # full Newton steps.
            t = 1.0
            while t >= 1e-12:
                cand = v + t * step
                if np.isfinite(value(cand)):
                    v = cand
                    fv = value(v)
                    break
                t *= SHRINK
            else:
                return v, it + 1, gnorm
            continue
        slope = float(g @ step)
        # Cap the raw step so a nearly flat barrier direction cannot fling
        # the iterate orders of magnitude away in one leap.
        step_norm = float(np.linalg.norm(step))
        t = min(1.0, STEP_CAP / step_norm) if step_norm > 0 else 1.0
        while True:
            cand = v + t * step
            fc = value(cand)
            if np.isfinite(fc) and fc <= fv + ARMIJO * t * slope:
                break
            t *= SHRINK
            if t < 1e-18:
                # Line search stalled; accept the current point.
                return v, it + 1, gnorm
        v = cand
        fv = fc
        if trace is not None:
            trace.write(f"newton it={it} f={fv:.12e} |g|={gnorm:.3e} t={t:.2e}\n")
        if callback is not None and callback(v):
            return v, it + 1, float(np.linalg.norm(grad(v)))
        if np.linalg.norm(v) > iterate_cap:
            raise UnboundedError("iterate norm exceeded the bounded-iterates guard",
                                 iterate=v)
    g = grad(v)
    return v, max_iter, float(np.linalg.norm(g))


class _Compiled:
    """Program data after null-space elimination of the equalities.

    The original variable is z = z0 + F y; cone and linear data are rewritten
    in terms of y and the per-block Gram pieces are cached so Hessian
    assembly is a handful of rank updates.
    """

    def __init__(self, prog: ConeProgram):
        n = prog.n
        if prog.eq:
            R = np.array([np.asarray(r, dtype=float).reshape(n) for r, _ in prog.eq])
            rhs = np.array([float(q) for _, q in prog.eq])
            z0, *_ = np.linalg.lstsq(R, rhs, rcond=None)
            if np.linalg.norm(R @ z0 - rhs) > 1e-9 * max(1.0, np.linalg.norm(rhs)):
                raise ValueError("inconsistent equality constraints")
            _, s, Vt = np.linalg.svd(R)
            rank = int(np.sum(s > max(R.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)))
            F = Vt[rank:].T
        else:
            z0 = np.zeros(n)
            F = np.eye(n)
        self.z0 = z0
        self.F = F
        self.m = F.shape[1]

        self.c = F.T @ prog.c
        self.c_offset = float(prog.c @ z0)

        self.blocks = []
        for blk in prog.soc:
            A = blk.A @ F
            b = blk.A @ z0 + blk.b
            d = F.T @ blk.d
            e = float(blk.d @ z0 + blk.e)
            self.blocks.append((A, b, d, e, A.T @ A, np.outer(d, d)))
        # Constant curvature piece of each cone barrier: hess(-ln q) carries
        # a -(2dd^T - 2A^T A)/q term; stack them for one weighted tensordot.
        if self.blocks:
            self.cone_curv = np.stack(
                [2.0 * (ddT - AtA) for (_, _, _, _, AtA, ddT) in self.blocks])
        else:
            self.cone_curv = np.zeros((0, self.m, self.m))

        self.lin_f = np.zeros((0, self.m))
        self.lin_g = np.zeros(0)
        if prog.lin:
            f = np.array([np.asarray(fi, dtype=float).reshape(n) for fi, _ in prog.lin])
            g = np.array([float(gi) for _, gi in prog.lin])
            self.lin_f = f @ F
            self.lin_g = g - f @ z0

        self.has_constraints = bool(self.blocks) or self.lin_f.size > 0
        # Barrier parameter: the squared-slack cone log counts 2 toward the
        # duality gap, a halfspace log counts 1.
        self.nu = 2 * len(self.blocks) + self.lin_f.shape[0]

    def lift(self, y):
        return self.z0 + self.F @ y

    def slacks(self, y):
        """Margins (d^T z + e) - ||A z + b|| and g - f^T z, stacked."""
        out = []
        for A, b, d, e, _, _ in self.blocks:
            out.append(float(d @ y) + e - float(np.linalg.norm(A @ y + b)))
        if self.lin_f.size:
            out.extend(self.lin_g - self.lin_f @ y)
        return np.array(out)

    def barrier_value(self, y):
        total = 0.0
        for A, b, d, e, _, _ in self.blocks:
            w = float(d @ y) + e
            r = A @ y + b
            q = w * w - float(r @ r)
            if w <= 0.0 or q <= 0.0:
                return math.inf
            total -= math.log(q)
        if self.lin_f.size:
            u = self.lin_g - self.lin_f @ y
            if np.any(u <= 0.0):
                return math.inf
            total -= float(np.sum(np.log(u)))
        return total

    def barrier_grad_hess(self, y):
        g = np.zeros(self.m)
        H = np.zeros((self.m, self.m))
        nb = len(self.blocks)
        if nb:
            G = np.empty((nb, self.m))
            q = np.empty(nb)
            for k, (A, b, d, e, _, _) in enumerate(self.blocks):
                w = float(d @ y) + e
                r = A @ y + b
                q[k] = w * w - float(r @ r)
                G[k] = 2.0 * (w * d - A.T @ r)
            g -= G.T @ (1.0 / q)
            H += (G.T / (q * q)) @ G
            H -= np.tensordot(1.0 / q, self.cone_curv, axes=1)
        if self.lin_f.size:
            u = self.lin_g - self.lin_f @ y
            g += self.lin_f.T @ (1.0 / u)
            H += (self.lin_f.T / (u * u)) @ self.lin_f
        return g, H


def _run_barrier(comp: _Compiled, c, y0, *, early_exit=None, trace=None):
    """Outer barrier loop on minimize c^T y + barrier(y)/s.

    ``early_exit(v, gap, centered)`` may short-circuit the schedule once the
    caller has what it needs (used by phase 1); it runs after every Newton
    step with centered=False and after each completed centering with
    centered=True, where the m/s suboptimality bound is trustworthy.  The
    last outer weight is clamped to exactly the gap target so the final
    centering problem is no worse conditioned than it has to be.  Returns
    (y, gap, newton_iters, objectives).
    """
    m_total = max(comp.nu, 1)
    y = np.array(y0, dtype=float)
    s = S0
    newton_total = 0
    objectives = []
    while True:
        def val(v, s=s):
            bv = comp.barrier_value(v)
            return math.inf if not np.isfinite(bv) else float(c @ v) + bv / s

        cache = {"key": None, "gh": None}

        def gh(v, cache=cache):
            key = v.tobytes()
            if cache["key"] != key:
                cache["key"] = key
                cache["gh"] = comp.barrier_grad_hess(v)
            return cache["gh"]

        def grd(v, s=s):
            return c + gh(v)[0] / s

        def hes(v, s=s):
            return gh(v)[1] / s

        gap = m_total / s
        cb = None if early_exit is None else (lambda v, g=gap: early_exit(v, g, False))
        y, iters, _ = minimize_newton(val, grd, hes, y, callback=cb, trace=trace)
        newton_total += iters
        objectives.append(float(c @ y))
        if trace is not None:
            trace.write(f"barrier s={s:.3e} obj={objectives[-1]:.12e} inner={iters}\n")
        if early_exit is not None and early_exit(y, gap, True):
            return y, gap, newton_total, objectives
        if gap <= GAP_TOL:
            return y, gap, newton_total, objectives
        if len(objectives) >= MAX_OUTER:
            return y, gap, newton_total, objectives
        s = min(s * MU, m_total / GAP_TOL)


def phase1(prog: ConeProgram, *, early_exit_slack=None, trace=None) -> Phase1Result:
    """Find a strictly feasible point by maximizing the minimum margin.

    Solves max_s { s : every cone/linear margin >= s } over (z, s) with the
    same barrier machinery, starting from an arbitrary equality-consistent
    point pushed one unit below its worst margin.  Outcomes:

    - feasible: a point with every margin >= SLACK_MARGIN, equalities exact;
    - infeasible: the maximized margin is (certifiably, up to the duality
      gap) not positive;
    - unbounded: the auxiliary margin grows without limit (detected by a
      synthetic ceiling at SLACK_CEILING; genuine margins that large are
      reported the same way, and the returned point is still usable).
    """
    comp = _Compiled(prog)
    if not comp.has_constraints:
        return Phase1Result(status="feasible", z=comp.lift(np.zeros(comp.m)), slack=math.inf)

    # Auxiliary program in v = (y, s): maximize s with margins shifted by s.
    maux = comp.m + 1

    def split(v):
        return v[:-1], v[-1]

    def val(v):
        y, s = split(v)
        ceil = SLACK_CEILING - s
        if ceil <= 0.0:
            return math.inf
        total = -math.log(ceil)
        for A, b, d, e, _, _ in comp.blocks:
            w = float(d @ y) + e - s
            r = A @ y + b
            q = w * w - float(r @ r)
            if w <= 0.0 or q <= 0.0:
                return math.inf
            total -= math.log(q)
        if comp.lin_f.size:
            u = comp.lin_g - comp.lin_f @ y - s
            if np.any(u <= 0.0):
                return math.inf
            total -= float(np.sum(np.log(u)))
        return total

    nb = len(comp.blocks)
    if nb:
        dv_all = np.zeros((nb, maux))
        curv_aux = np.zeros((nb, maux, maux))
        for k, (A, b, d, e, AtA, _) in enumerate(comp.blocks):
            dv_all[k, :-1] = d
            dv_all[k, -1] = -1.0
            curv_aux[k] = 2.0 * np.outer(dv_all[k], dv_all[k])
            curv_aux[k][:-1, :-1] -= 2.0 * AtA
    fa = np.hstack([comp.lin_f, np.ones((comp.lin_f.shape[0], 1))]) if comp.lin_f.size else None

    def grad_hess(v):
        y, s = split(v)
        g = np.zeros(maux)
        H = np.zeros((maux, maux))
        ceil = SLACK_CEILING - s
        g[-1] += 1.0 / ceil
        H[-1, -1] += 1.0 / (ceil * ceil)
        if nb:
            G = np.empty((nb, maux))
            q = np.empty(nb)
            for k, (A, b, d, e, _, _) in enumerate(comp.blocks):
                w = float(d @ y) + e - s
                r = A @ y + b
                q[k] = w * w - float(r @ r)
                G[k] = 2.0 * w * dv_all[k]
                G[k, :-1] -= 2.0 * (A.T @ r)
            g -= G.T @ (1.0 / q)
            H += (G.T / (q * q)) @ G
            H -= np.tensordot(1.0 / q, curv_aux, axes=1)
        if fa is not None:
            u = comp.lin_g - comp.lin_f @ y - s
            g += fa.T @ (1.0 / u)
            H += (fa.T / (u * u)) @ fa
        return g, H

    class _Aux:
        nu = comp.nu + 1
        has_constraints = True
        barrier_value = staticmethod(val)
        barrier_grad_hess = staticmethod(grad_hess)
        m = maux

    y0 = np.zeros(comp.m)
    s_start = float(np.min(comp.slacks(y0))) - 1.0
    v0 = np.concatenate([y0, [s_start]])
    c_aux = np.zeros(maux)
    c_aux[-1] = -1.0

    def exit_fn(v, gap, centered):
        # At a centered point the margin optimum is at most v[-1] + gap,
        # which certifies infeasibility early; a positive margin certifies
        # feasibility at any interior point.
        if centered and v[-1] + gap < SLACK_MARGIN:
            return True
        return early_exit_slack is not None and v[-1] >= early_exit_slack

    try:
        v, gap, _, _ = _run_barrier(_Aux, c_aux, v0, early_exit=exit_fn, trace=trace)
    except UnboundedError as exc:
        # Margin grows without limit; any iterate past the cap is deep in
        # the interior and still a usable strictly feasible point.
        if exc.iterate is not None and exc.iterate[-1] >= SLACK_MARGIN:
            y, s = split(exc.iterate)
            return Phase1Result(status="unbounded", z=comp.lift(y), slack=float(s))
        return Phase1Result(status="unbounded", z=None, slack=math.inf)
    y, s = split(v)
    if s >= 0.5 * SLACK_CEILING:
        return Phase1Result(status="unbounded", z=comp.lift(y), slack=float(s))
    if s >= SLACK_MARGIN:
        return Phase1Result(status="feasible", z=comp.lift(y), slack=float(s))
    return Phase1Result(status="infeasible", z=comp.lift(y), slack=float(s))


def solve(prog: ConeProgram, start=None, trace=None) -> ConeSolution:
    """Solve a cone program to a duality-gap bound of GAP_TOL.

    ``start`` may supply a strictly feasible z; otherwise phase 1 runs first.
    The returned gap bound is (number of barrier terms)/s at exit, which for
    a log barrier bounds the objective suboptimality.
    """
    comp = _Compiled(prog)
    if start is not None:
        z = np.asarray(start, dtype=float).reshape(prog.n)
        y0, *_ = np.linalg.lstsq(comp.F, z - comp.z0, rcond=None)
        if np.linalg.norm(comp.lift(y0) - z) > 1e-8 * max(1.0, np.linalg.norm(z)):
            raise ValueError("provided start point violates the equality constraints")
        if np.min(comp.slacks(y0)) <= 0:
            raise ValueError("provided start point is not strictly feasible")
    else:
        # A shallow early-exit slack is enough: the main barrier re-centers.
        p1 = phase1(prog, early_exit_slack=1e-3, trace=trace)
        if p1.status == "infeasible":
            return ConeSolution(z=p1.z, objective=math.nan, status="infeasible",
                                newton_iters=0, duality_gap_bound=math.inf)
        if p1.status == "unbounded" and p1.z is None:
            raise UnboundedError("phase 1 reported an unbounded auxiliary problem")
        y0, *_ = np.linalg.lstsq(comp.F, p1.z - comp.z0, rcond=None)

    y, gap, newton_total, objectives = _run_barrier(comp, comp.c, y0, trace=trace)
    z = comp.lift(y)
    status = "optimal" if gap <= GAP_TOL else "max_iter"
    if status == "optimal" and comp.has_constraints and float(np.min(comp.slacks(y))) < -1e-8:
        status = "max_iter"  # should not happen: interior iterates stay feasible
    return ConeSolution(
        z=z,
        objective=float(prog.c @ z),
        status=status,
        newton_iters=newton_total,
        duality_gap_bound=gap,
        outer_objectives=[o + comp.c_offset for o in objectives],
    )
