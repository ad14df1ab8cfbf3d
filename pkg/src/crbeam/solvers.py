"""The three downlink beamformer designs.

- conventional_maxmin: max-min-fair SINR balancing under average interference
  constraints, solved by bisection over SINR feasibility SOCPs.
- wsusep_barrier: exact minimization of the worst user's symbol error
  probability, a bivariate-CDF-constrained convex program solved with a
  logarithmic barrier and damped Newton steps.
- approx_wsusep: the fast restriction that bounds each user's SEP by its two
  tail probabilities, which collapses to a single SOCP (equivalently: placing
  the largest possible noise ball around every noiseless receive point inside
  its decision region).

All solvers work on the real embedding of one symbol frame and return
feasible transmit vectors: power and interference constraints hold on every
output, instantaneously.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from crbeam import socp
from crbeam.model import BeamSolution, RealEmbedding, Scenario, beamformers_from_x, unembed
from crbeam.specfun import _bvn_cdf_many, _cdf_arr, _phi_arr, alpha_star, erf

__all__ = [
    "BarrierParams",
    "ConventionalSolution",
    "IllPosedError",
    "InfeasibleError",
    "SolverError",
    "conventional_maxmin",
    "feasibility_start",
    "wsusep_barrier",
    "approx_wsusep",
    "analytic_wsusep",
    "analytic_sep_per_user",
]


class SolverError(RuntimeError):
    """A cone solve that should have succeeded did not."""


class InfeasibleError(SolverError):
    """The constraint set has no strictly feasible point."""


class IllPosedError(SolverError):
    """Best achievable margin is below the convexity threshold.

    The exact design is only convex while every normalized margin can reach
    alpha_star(rbar); below that the target error probabilities are too large
    to be of practical interest anyway.
    """

    def __init__(self, z_star: float, threshold: float):
        super().__init__(
            f"ill-posed: feasibility margin {z_star:.6g} is below the "
            f"convexity threshold {threshold:.6g}"
        )
        self.z_star = z_star
        self.threshold = threshold


@dataclass
class BarrierParams:
    """Schedule of the outer barrier loop."""

    s0: float = 1.0
    mu: float = 10.0
    delta_t: float = 1e-8
    max_outer: int = 30
    max_inner: int = 80
    gap_tol: float = 1e-8

    def __post_init__(self):
        if self.mu <= 1.0 or self.delta_t <= 0.0:
            raise ValueError("need mu > 1 and delta_t > 0")


@dataclass
class ConventionalSolution:
    W: np.ndarray          # (K, N) beamformers
    gamma: float           # achieved min-SINR
    bisection_iters: int
    bracket: tuple = (0.0, 0.0)   # final (feasible, infeasible) SINR bracket


# ---------------------------------------------------------------------------
# Margin maximization SOCP (shared by feasibility_start and approx_wsusep):
#     maximize z   s.t.  t_j^T xbar >= z,  ||xbar|| <= sqrt(P),
#                        ||B_l xbar|| <= sqrt(eps_l).
# ---------------------------------------------------------------------------

def _margin_program(emb: RealEmbedding, scenario: Scenario):
    n2 = emb.t.shape[1]
    n = n2 + 1
    c = np.zeros(n)
    c[-1] = -1.0
    lin = []
    for tj in emb.t:
        f = np.concatenate([-tj, [1.0]])
        lin.append((f, 0.0))
    soc = [socp.SocBlock(A=np.hstack([np.eye(n2), np.zeros((n2, 1))]),
                         b=np.zeros(n2), d=np.zeros(n), e=math.sqrt(scenario.P))]
    for l in range(scenario.L):
        soc.append(socp.SocBlock(A=np.hstack([emb.B[l], np.zeros((2, 1))]),
                                 b=np.zeros(2), d=np.zeros(n),
                                 e=math.sqrt(scenario.eps[l])))
    prog = socp.ConeProgram(n=n, c=c, soc=soc, lin=lin)
    start = np.zeros(n)
    start[-1] = -1.0   # z = -1 at xbar = 0 is strictly feasible for any data
    return prog, start


def _solve_margin(emb, scenario):
    prog, start = _margin_program(emb, scenario)
    sol = socp.solve(prog, start=start)
    if sol.status != "optimal":
        raise SolverError(f"margin SOCP ended with status {sol.status}")
    xbar = sol.z[:-1]
    z_star = float(np.min(emb.t @ xbar))
    return z_star, xbar, sol


def feasibility_start(emb: RealEmbedding, scenario: Scenario):
    """Largest common margin z* = max min_j t_j^T xbar under the power and
    interference budgets, plus the maximizing xbar.

    The solution both certifies well-posedness of the exact design (compare
    z* against sigma_tilde * alpha_star(rbar)) and provides its strictly
    feasible starting point.
    """
    z_star, xbar, _ = _solve_margin(emb, scenario)
    return z_star, xbar


def approx_wsusep(emb: RealEmbedding, scenario: Scenario) -> BeamSolution:
    """Noise-margin maximization: the SOCP restriction of the exact design.

    Maximizes Upsilon, the radius (in noise standard deviations) of the
    largest ball around each noiseless receive point that fits inside its
    decision region; the implied worst-user SEP bound is 1 - erf(Upsilon).
    """
    t0 = time.perf_counter()
    z_star, xbar, sol = _solve_margin(emb, scenario)
    cos_t = math.cos(emb.theta)
    upsilon = z_star * cos_t / scenario.sigma
    rho = min(max(1.0 - erf(upsilon), 0.0), 1.0)
    x = unembed(xbar)
    return BeamSolution(
        x=x,
        w=beamformers_from_x(x, emb.frame),
        rho=rho,
        upsilon=upsilon,
        method="approx",
        stats={
            "seconds": time.perf_counter() - t0,
            "newton_iters": sol.newton_iters,
            "status": sol.status,
            "gap_bound": sol.duality_gap_bound,
        },
    )


def analytic_sep_per_user(emb: RealEmbedding, xbar: np.ndarray) -> np.ndarray:
    """Exact per-user SEP vector (1 - Phi_i) of a transmit vector."""
    xbar = np.asarray(xbar, dtype=float)
    a = (emb.t @ xbar) / emb.sigma_tilde
    phi_i = _bvn_cdf_many(a[0::2], a[1::2], emb.rbar)
    return np.clip(1.0 - phi_i, 0.0, 1.0)


def analytic_wsusep(emb: RealEmbedding, xbar: np.ndarray) -> float:
    """Exact worst-user SEP of a transmit vector, max_i (1 - Phi_i)."""
    return float(np.max(analytic_sep_per_user(emb, xbar)))


# ---------------------------------------------------------------------------
# Exact WSUSEP minimization.
# ---------------------------------------------------------------------------

class _WsusepObjective:
    """Barrier objective rho + Psi(xbar, rho)/s and its derivatives.

    Psi collects -ln(rho - (1 - Phi_i)) over users plus logs of the power
    and interference slacks (in squared-norm form, which is smooth at the
    origin and defines the same feasible set).  A floor on every detection
    margin t_j^T xbar keeps the path inside the region where the bivariate
    CDF is jointly concave: the floor sits at the concavity threshold
    (or at half the best achievable margin when that is smaller), which
    contains the optimum for every practically posed instance and turns the
    inner problems into genuinely convex ones.
    """

    def __init__(self, emb: RealEmbedding, scenario: Scenario, margin_floor: float = 0.0):
        self.T = emb.t
        self.margin_floor = margin_floor
        self.T1 = emb.t[0::2]
        self.T2 = emb.t[1::2]
        self.B = emb.B
        self.BtB = np.array([bl.T @ bl for bl in emb.B])
        self.sig = emb.sigma_tilde
        self.rbar = emb.rbar
        self.s_corr = math.sqrt((1.0 - emb.rbar) * (1.0 + emb.rbar))
        self.P = scenario.P
        self.eps = scenario.eps
        self.n2 = emb.t.shape[1]
        self.n_terms = self.T1.shape[0] + self.T.shape[0] + 1 + len(scenario.eps)
        self._cache = (None, None)

    def _point(self, xbar):
        """CDF values at one xbar, cached: the line search and the
        subsequent gradient hit the same point."""
        key = xbar.tobytes()
        if self._cache[0] != key:
            a1 = (self.T1 @ xbar) / self.sig
            a2 = (self.T2 @ xbar) / self.sig
            if self.rbar == 0.0:
                both = _cdf_arr(np.concatenate([a1, a2]))
                K = a1.size
                c1, c2 = both[:K], both[K:]
                phi_i = c1 * c2
            else:
                phi_i = _bvn_cdf_many(a1, a2, self.rbar)
                c1 = c2 = None
            self._cache = (key, (phi_i, a1, a2, c1, c2))
        return self._cache[1]

    def value(self, v, s):
        xbar, rho = v[:-1], v[-1]
        phi_i, _, _, _, _ = self._point(xbar)
        g = rho - (1.0 - phi_i)
        sp = self.P - float(xbar @ xbar)
        um = self.T @ xbar - self.margin_floor
        if np.any(g <= 0.0) or sp <= 0.0 or np.any(um <= 0.0):
            return math.inf
        total = -float(np.sum(np.log(g))) - math.log(sp) - float(np.sum(np.log(um)))
        for l in range(len(self.eps)):
            u = self.B[l] @ xbar
            se = self.eps[l] - float(u @ u)
            if se <= 0.0:
                return math.inf
            total -= math.log(se)
        return rho + total / s

    def grad_hess(self, v, s):
        xbar, rho = v[:-1], v[-1]
        n = v.size
        phi_i, a1, a2, c1, c2 = self._point(xbar)
        g = rho - (1.0 - phi_i)

        # Bivariate CDF derivatives at the normalized margins, vectorized
        # over users: d1, d2 are the partials, mx the mixed second
        # derivative, h11/h22 the diagonal second derivatives.  At zero
        # correlation the conditional CDFs are the marginals already
        # computed for the value.
        p1 = _phi_arr(a1)
        p2 = _phi_arr(a2)
        if self.rbar == 0.0:
            cz1, cz2 = c2, c1
            mx = p2 * p1
        else:
            z1 = (a2 - self.rbar * a1) / self.s_corr
            z2 = (a1 - self.rbar * a2) / self.s_corr
            K = a1.size
            cdf_z = _cdf_arr(np.concatenate([z1, z2]))
            cz1, cz2 = cdf_z[:K], cdf_z[K:]
            mx = _phi_arr(z1) * p1 / self.s_corr
        d1 = cz1 * p1
        d2 = cz2 * p2
        h11 = -self.rbar * mx - a1 * d1
        h22 = -self.rbar * mx - a2 * d2

        grad = np.zeros(n)
        hess = np.zeros((n, n))
        grad[-1] = 1.0  # objective rho

        inv_gs = 1.0 / (g * s)
        # d Phi_i / d xbar as rows of Dphi.
        Dphi = (d1[:, None] * self.T1 + d2[:, None] * self.T2) / self.sig
        grad[:-1] -= Dphi.T @ inv_gs
        grad[-1] -= float(np.sum(inv_gs))
        # Rank-one parts sum_i gv gv^T / (g_i^2 s) with gv = [Dphi_i; 1].
        w2 = inv_gs / g
        hess[:-1, :-1] += (Dphi.T * w2) @ Dphi
        hess[:-1, -1] += Dphi.T @ w2
        hess[-1, :-1] += Dphi.T @ w2
        hess[-1, -1] += float(np.sum(w2))
        # Curvature of Phi_i itself (negative semidefinite in the convex
        # region), assembled as weighted Gram products of the t-rows.
        sig2 = self.sig * self.sig
        wa = h11 * inv_gs / sig2
        wm = mx * inv_gs / sig2
        wb = h22 * inv_gs / sig2
        hess[:-1, :-1] -= (self.T1.T * wa) @ self.T1
        hess[:-1, :-1] -= (self.T1.T * wm) @ self.T2
        hess[:-1, :-1] -= (self.T2.T * wm) @ self.T1
        hess[:-1, :-1] -= (self.T2.T * wb) @ self.T2

        um = self.T @ xbar - self.margin_floor
        grad[:-1] -= self.T.T @ (1.0 / (um * s))
        hess[:-1, :-1] += (self.T.T / (um * um * s)) @ self.T

        sp = self.P - float(xbar @ xbar)
        grad[:-1] += 2.0 * xbar / (sp * s)
        hess[:-1, :-1] += (4.0 * np.outer(xbar, xbar) / (sp * sp)
                           + 2.0 * np.eye(self.n2) / sp) / s
        for l in range(len(self.eps)):
            u = self.B[l] @ xbar
            se = self.eps[l] - float(u @ u)
            bu = self.B[l].T @ u
            grad[:-1] += 2.0 * bu / (se * s)
            hess[:-1, :-1] += (4.0 * np.outer(bu, bu) / (se * se)
                               + 2.0 * self.BtB[l] / se) / s
        return grad, hess


def wsusep_barrier(emb: RealEmbedding, scenario: Scenario,
                   params: BarrierParams | None = None) -> BeamSolution:
    """Minimize the worst user's exact SEP with a logarithmic barrier.

    Runs the margin SOCP first: its optimum seeds the barrier and certifies
    convexity (raises IllPosedError when the achievable margin falls below
    sigma_tilde * alpha_star(rbar)).  The outer loop scales the barrier
    weight by mu until either consecutive solutions move less than delta_t
    or the duality-gap bound drops below gap_tol.
    """
    if params is None:
        params = BarrierParams()
    t_begin = time.perf_counter()

    z_star, xbar0 = feasibility_start(emb, scenario)
    threshold = emb.sigma_tilde * alpha_star(emb.rbar).alpha_star
    if z_star < threshold:
        raise IllPosedError(z_star, threshold)

    obj = _WsusepObjective(emb, scenario, margin_floor=min(threshold, 0.5 * z_star))
    # Pull the SOCP point slightly inward so every barrier log has room, and
    # give rho an absolute head start: a tiny relative margin would make the
    # active CDF barrier term catastrophically ill-conditioned when the
    # starting error probability is already small.
    xbar = xbar0 * (1.0 - 1e-6)
    phi0, *_ = obj._point(xbar)
    rho0 = float(np.max(1.0 - phi0))   # max_i (1 - Phi_i) at the start point
    rho = rho0 + max(0.01 * rho0, 1e-6)
    v = np.concatenate([xbar, [rho]])

    s = params.s0
    newton_total = 0
    status = "max_iter"
    outer_used = 0
    gnorm = math.nan
    prev = None
    for outer in range(params.max_outer):
        outer_used = outer + 1
        cache = {"key": None, "gh": None}

        def grad_hess_cached(u, s=s, cache=cache):
            key = u.tobytes()
            if cache["key"] != key:
                cache["key"] = key
                cache["gh"] = obj.grad_hess(u, s)
            return cache["gh"]

        v, iters, gnorm = socp.minimize_newton(
            lambda u, s=s: obj.value(u, s),
            lambda u: grad_hess_cached(u)[0],
            lambda u: grad_hess_cached(u)[1],
            v, gtol=1e-9, max_iter=params.max_inner,
        )
        newton_total += iters
        if prev is not None and float(np.sum((v - prev) ** 2)) < params.delta_t ** 2:
            status = "optimal"
            break
        if obj.n_terms / s <= params.gap_tol:
            status = "optimal"
            break
        prev = v.copy()
        s = min(s * params.mu, obj.n_terms / params.gap_tol)

    # Polish until the inner gradient is small enough to certify stationarity.
    cache = {"key": None, "gh": None}

    def gh_final(u, s=s, cache=cache):
        key = u.tobytes()
        if cache["key"] != key:
            cache["key"] = key
            cache["gh"] = obj.grad_hess(u, s)
        return cache["gh"]

    v, iters, gnorm = socp.minimize_newton(
        lambda u, s=s: obj.value(u, s),
        lambda u: gh_final(u)[0],
        lambda u: gh_final(u)[1],
        v, gtol=1e-7, dec_tol=1e-18, max_iter=60,
    )
    newton_total += iters

    xbar_out = v[:-1]
    rho_out = analytic_wsusep(emb, xbar_out)
    zmin = float(np.min(emb.t @ xbar_out))
    upsilon = zmin * math.cos(emb.theta) / scenario.sigma
    x = unembed(xbar_out)
    return BeamSolution(
        x=x,
        w=beamformers_from_x(x, emb.frame),
        rho=rho_out,
        upsilon=upsilon,
        method="wsusep",
        stats={
            "seconds": time.perf_counter() - t_begin,
            "outer_iters": outer_used,
            "newton_iters": newton_total,
            "status": status,
            "grad_norm": gnorm,
            "margin": z_star,
            "threshold": threshold,
        },
    )


# ---------------------------------------------------------------------------
# Conventional max-min-fair SINR balancing.
# ---------------------------------------------------------------------------

def _stack_rows(c: np.ndarray, j: int, K: int, N: int):
    """Real/imag rows of the form c^T w_j acting on [Re w; Im w] stacked."""
    re = np.zeros(2 * N * K)
    im = np.zeros(2 * N * K)
    re[j * N:(j + 1) * N] = c.real
    re[K * N + j * N:K * N + (j + 1) * N] = -c.imag
    im[j * N:(j + 1) * N] = c.imag
    im[K * N + j * N:K * N + (j + 1) * N] = c.real
    return re, im


def _sinr_program(scenario: Scenario, gamma: float) -> socp.ConeProgram:
    """Feasibility SOCP for a common SINR target gamma.

    Per user: Im(h_i^T w_i) = 0 and
    ||[(I_K (x) h_i^T) w; sigma]|| <= sqrt(1 + 1/gamma) Re(h_i^T w_i);
    plus the total power and per-PU average interference cones.
    """
    K, N, L = scenario.K, scenario.N, scenario.L
    n = 2 * N * K
    soc = []
    eq = []
    scale = math.sqrt(1.0 + 1.0 / gamma)
    for i in range(K):
        rows = []
        for j in range(K):
            re, im = _stack_rows(scenario.H[i], j, K, N)
            rows.extend([re, im])
        A = np.vstack(rows + [np.zeros(n)])
        b = np.zeros(2 * K + 1)
        b[-1] = scenario.sigma
        d_re, d_im = _stack_rows(scenario.H[i], i, K, N)
        soc.append(socp.SocBlock(A=A, b=b, d=scale * d_re, e=0.0))
        eq.append((d_im, 0.0))
    soc.append(socp.SocBlock(A=np.eye(n), b=np.zeros(n), d=np.zeros(n),
                             e=math.sqrt(scenario.P)))
    for l in range(L):
        rows = []
        for j in range(K):
            re, im = _stack_rows(scenario.G[l], j, K, N)
            rows.extend([re, im])
        soc.append(socp.SocBlock(A=np.vstack(rows), b=np.zeros(2 * K),
                                 d=np.zeros(n), e=math.sqrt(scenario.eps[l])))
    return socp.ConeProgram(n=n, c=np.zeros(n), soc=soc, eq=eq)


def _unstack_w(z: np.ndarray, K: int, N: int) -> np.ndarray:
    re = z[:K * N].reshape(K, N)
    im = z[K * N:].reshape(K, N)
    return re + 1j * im


def conventional_maxmin(scenario: Scenario, rel_tol: float = 1e-4) -> ConventionalSolution:
    """Max-min-fair SINR balancing by bisection over feasibility SOCPs.

    Brackets the optimum between gamma_lo = 1e-6 and the single-user
    matched-filter bound P * max_i ||h_i||^2 / sigma^2, then bisects until
    the bracket is narrower than rel_tol * gamma_feasible.  The returned
    beamformers come from a fully centered phase-1 solve at the final
    feasible target.
    """
    K, N = scenario.K, scenario.N
    gamma_lo = 1e-6
    gamma_hi = scenario.P * float(np.max(np.sum(np.abs(scenario.H) ** 2, axis=1))) / scenario.sigma2
    early = 1e-3 * math.sqrt(scenario.P)

    def try_gamma(gamma, early_exit=early):
        return socp.phase1(_sinr_program(scenario, gamma), early_exit_slack=early_exit)

    if try_gamma(gamma_lo).status != "feasible":
        raise InfeasibleError(
            "power/interference constraints admit no strictly positive beamformer "
            "even at a vanishing SINR target"
        )
    for _ in range(4):
        # The matched-filter bound is not feasible in exact arithmetic, but
        # guard the bracket anyway.
        if try_gamma(gamma_hi).status != "feasible":
            break
        gamma_hi *= 2.0

    iters = 0
    while gamma_hi - gamma_lo > rel_tol * gamma_lo and iters < 200:
        mid = 0.5 * (gamma_lo + gamma_hi)
        if try_gamma(mid).status == "feasible":
            gamma_lo = mid
        else:
            gamma_hi = mid
        iters += 1

    final = try_gamma(gamma_lo, early_exit=None)
    if final.status != "feasible":
        raise SolverError("final SINR target lost feasibility on re-solve")
    return ConventionalSolution(
        W=_unstack_w(final.z, K, N),
        gamma=gamma_lo,
        bisection_iters=iters,
        bracket=(gamma_lo, gamma_hi),
    )
