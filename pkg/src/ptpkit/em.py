"""EM-based identification of attacked links.

The binary per-link attack indicators are relaxed to probabilities
``pi_i``; the relaxed log-likelihood is maximized by alternating an
E-step (posterior responsibilities over attack state and mixture
components, jointly normalized per observation) with two M-step stages:
closed-form updates for ``pi``/mixture weights, and a damped
Newton-Raphson ascent with backtracking line search for the continuous
block Psi = [delta, d, tau, shapes, scales]. Shapes and scales are
optimized through their logarithms so positivity never needs explicit
constraints. A link is classified as attacked when its converged
``pi_i`` reaches one half.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp, polygamma, psi as digamma

from .baselines import l_estimate, l_weights, lower_median_index
from .errors import ConfigError, DegenerateSupportError
from .exchange import ObservationSet
from .gammamix import GammaMixture, component_logpdf_grid, moment_match_init

# tau entries of confidently-clean links are frozen during the Psi update;
# their gradient vanishes as pi -> 0 and would degenerate the Hessian.
_PI_FREEZE = 1e-3
_TINY_W = 1e-300


@dataclass
class Psi:
    """Continuous parameter block: offset, per-link delays and attack
    magnitudes, and Gamma shape/scale vectors (ragged per link)."""

    delta: float
    d: np.ndarray
    tau: np.ndarray
    a1: list[np.ndarray]
    b1: list[np.ndarray]
    a2: list[np.ndarray]
    b2: list[np.ndarray]

    def __post_init__(self):
        self.d = np.asarray(self.d, dtype=float)
        self.tau = np.asarray(self.tau, dtype=float)
        self.a1 = [np.asarray(x, dtype=float) for x in self.a1]
        self.b1 = [np.asarray(x, dtype=float) for x in self.b1]
        self.a2 = [np.asarray(x, dtype=float) for x in self.a2]
        self.b2 = [np.asarray(x, dtype=float) for x in self.b2]
        n = self.d.shape[0]
        if self.tau.shape != (n,):
            raise ConfigError("d and tau must share length N")
        if not (len(self.a1) == len(self.b1) == len(self.a2) == len(self.b2) == n):
            raise ConfigError("per-link parameter lists must have length N")
        for pa, pb in ((self.a1, self.b1), (self.a2, self.b2)):
            for ai, bi in zip(pa, pb):
                if ai.shape != bi.shape:
                    raise ConfigError("shape/scale vectors must align")
                if np.any(ai <= 0) or np.any(bi <= 0):
                    raise ConfigError("shapes and scales must be positive")

    @property
    def n_links(self) -> int:
        return self.d.shape[0]

    @property
    def M(self) -> list[int]:
        return [x.size for x in self.a1]

    @property
    def L(self) -> list[int]:
        return [x.size for x in self.a2]


@dataclass
class ThetaPi:
    """Full relaxed parameter vector: Psi plus mixture weights and the
    per-link attack probabilities."""

    psi: Psi
    alpha: list[np.ndarray]
    beta: list[np.ndarray]
    pi: np.ndarray

    def __post_init__(self):
        self.alpha = [np.asarray(x, dtype=float) for x in self.alpha]
        self.beta = [np.asarray(x, dtype=float) for x in self.beta]
        self.pi = np.asarray(self.pi, dtype=float)
        n = self.psi.n_links
        if len(self.alpha) != n or len(self.beta) != n or self.pi.shape != (n,):
            raise ConfigError("alpha, beta, pi must cover all N links")
        for w, m in zip(self.alpha, self.psi.M):
            if w.shape != (m,) or np.any(w < 0) or abs(w.sum() - 1) > 1e-9:
                raise ConfigError("each alpha row must be a length-M simplex")
        for w, m in zip(self.beta, self.psi.L):
            if w.shape != (m,) or np.any(w < 0) or abs(w.sum() - 1) > 1e-9:
                raise ConfigError("each beta row must be a length-L simplex")
        if np.any(self.pi < 0) or np.any(self.pi > 1):
            raise ConfigError("pi entries must lie in [0, 1]")

    def fwd_mixture(self, i: int) -> GammaMixture:
        return GammaMixture.from_dict(
            {
                "weights": self.alpha[i],
                "shapes": self.psi.a1[i],
                "scales": self.psi.b1[i],
            }
        )

    def rev_mixture(self, i: int) -> GammaMixture:
        return GammaMixture.from_dict(
            {
                "weights": self.beta[i],
                "shapes": self.psi.a2[i],
                "scales": self.psi.b2[i],
            }
        )


@dataclass
class Responsibilities:
    """E-step posteriors, indexed (link, round, fwd comp, rev comp)."""

    a1_resp: list[np.ndarray]  # attacked branch, per link (P, M_i, L_i)
    a0_resp: list[np.ndarray]  # unattacked branch


@dataclass(frozen=True)
class NewtonOptions:
    grad_tol: float = 1e-8
    max_iters: int = 50
    backtrack: float = 0.5
    armijo: float = 1e-4
    kappa0: float = 1.0
    max_backtracks: int = 40
    # stop early once an accepted step gains less than this much Q; the
    # EM outer loop sets it from its own tolerance (partial M-steps keep
    # the generalized-EM ascent property and avoid pointless polishing)
    min_q_gain: float = 0.0


@dataclass
class MStepInfo:
    iterations: int = 0
    grad_norm: float = np.nan
    hessian_fallbacks: int = 0
    line_search_failed: bool = False


def _safe_log(x) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(x, dtype=float))


def _link_log_joint(theta: ThetaPi, obs: ObservationSet, i: int):
    """Log joint densities for link i: attacked branch (P, M, L) and
    unattacked branch (P, M, L), including pi and mixture weights."""
    psi = theta.psi
    u, v = obs.u[i], obs.v[i]
    base = u - psi.delta - psi.d[i]
    logh1a = component_logpdf_grid(base - psi.tau[i], psi.a1[i], psi.b1[i])
    logh1c = component_logpdf_grid(base, psi.a1[i], psi.b1[i])
    logh2 = component_logpdf_grid(v + psi.delta - psi.d[i], psi.a2[i], psi.b2[i])
    la = _safe_log(theta.alpha[i])
    lb = _safe_log(theta.beta[i])
    fwd_a = (la + logh1a)[:, :, None]
    fwd_c = (la + logh1c)[:, :, None]
    rev = (lb + logh2)[:, None, :]
    log_a = _safe_log(theta.pi[i]) + fwd_a + rev
    log_c = _safe_log(1.0 - theta.pi[i]) + fwd_c + rev
    return log_a, log_c


def log_likelihood(theta: ThetaPi, obs: ObservationSet) -> float:
    """Relaxed log-likelihood of the full observation set.

    Each (link, round) term is the log of a pi-weighted pair of double
    mixture sums, accumulated with log-sum-exp.
    """
    total = 0.0
    for i in range(obs.N):
        log_a, log_c = _link_log_joint(theta, obs, i)
        per_round = np.logaddexp(
            logsumexp(log_a, axis=(1, 2)), logsumexp(log_c, axis=(1, 2))
        )
        if not np.all(np.isfinite(per_round)):
            j = int(np.flatnonzero(~np.isfinite(per_round))[0])
            raise DegenerateSupportError(
                f"joint density vanished at link {i}, round {j}"
            )
        total += float(per_round.sum())
    return total


def e_step(theta_g: ThetaPi, obs: ObservationSet) -> Responsibilities:
    """Posterior responsibilities at the current parameter estimate.

    Normalization is joint over (attack state, fwd component, rev
    component) for every (link, round), so a1 + a0 sums to one there.
    """
    a1_list, a0_list = [], []
    for i in range(obs.N):
        log_a, log_c = _link_log_joint(theta_g, obs, i)
        log_z = np.logaddexp(
            logsumexp(log_a, axis=(1, 2)), logsumexp(log_c, axis=(1, 2))
        )
        if not np.all(np.isfinite(log_z)):
            j = int(np.flatnonzero(~np.isfinite(log_z))[0])
            raise DegenerateSupportError(
                f"joint density vanished at link {i}, round {j}"
            )
        z = log_z[:, None, None]
        a1_list.append(np.exp(log_a - z))
        a0_list.append(np.exp(log_c - z))
    return Responsibilities(a1_list, a0_list)


def m_step_closed(resp: Responsibilities):
    """Closed-form M-step updates: attack probabilities and mixture weights.

    pi_i averages the attacked-branch mass over rounds; alpha/beta
    average the combined per-component mass (the Lagrange multiplier for
    the simplex constraint works out to P, so rows sum to one exactly).
    """
    pi, alpha, beta = [], [], []
    for a1, a0 in zip(resp.a1_resp, resp.a0_resp):
        P = a1.shape[0]
        pi.append(a1.sum() / P)
        both = a1 + a0
        alpha.append(both.sum(axis=(0, 2)) / P)
        beta.append(both.sum(axis=(0, 1)) / P)
    return np.clip(np.array(pi), 0.0, 1.0), alpha, beta


class PsiLayout:
    """Flattened coordinate layout for the Psi block.

    Order: [delta, d (N), tau (N), log a1 (link-major), log b1,
    log a2, log b2]. Shapes and scales live in log space.
    """

    def __init__(self, M: list[int], L: list[int]):
        self.M, self.L = list(M), list(L)
        n = len(M)
        self.n_links = n
        self.idx_delta = 0
        self.idx_d = 1 + np.arange(n)
        self.idx_tau = 1 + n + np.arange(n)
        pos = 1 + 2 * n
        self.idx_a1, self.idx_b1, self.idx_a2, self.idx_b2 = [], [], [], []
        for counts, slot in ((M, self.idx_a1), (M, self.idx_b1),
                             (L, self.idx_a2), (L, self.idx_b2)):
            for m in counts:
                slot.append(pos + np.arange(m))
                pos += m
        self.dim = pos

    def pack(self, psi: Psi) -> np.ndarray:
        x = np.empty(self.dim)
        x[self.idx_delta] = psi.delta
        x[self.idx_d] = psi.d
        x[self.idx_tau] = psi.tau
        for i in range(self.n_links):
            x[self.idx_a1[i]] = np.log(psi.a1[i])
            x[self.idx_b1[i]] = np.log(psi.b1[i])
            x[self.idx_a2[i]] = np.log(psi.a2[i])
            x[self.idx_b2[i]] = np.log(psi.b2[i])
        return x

    def unpack(self, x: np.ndarray) -> Psi:
        with np.errstate(over="ignore"):
            return Psi(
                delta=float(x[self.idx_delta]),
                d=x[self.idx_d].copy(),
                tau=x[self.idx_tau].copy(),
                a1=[np.exp(x[ix]) for ix in self.idx_a1],
                b1=[np.exp(x[ix]) for ix in self.idx_b1],
                a2=[np.exp(x[ix]) for ix in self.idx_a2],
                b2=[np.exp(x[ix]) for ix in self.idx_b2],
            )


class QProblem:
    """Expected complete-data log-likelihood as a function of Psi only.

    Responsibilities are held fixed (computed at the current estimate);
    terms independent of Psi are dropped, which shifts Q by a constant
    and leaves the ascent structure untouched. Provides the objective,
    its analytic gradient, and its analytic Hessian in the flattened
    log-reparameterized coordinates.
    """

    def __init__(self, resp: Responsibilities, obs: ObservationSet,
                 layout: PsiLayout):
        self.layout = layout
        self.obs = obs
        # branch weight marginals per link
        self.r1f = [a1.sum(axis=2) for a1 in resp.a1_resp]       # (P, M)
        self.r0f = [a0.sum(axis=2) for a0 in resp.a0_resp]       # (P, M)
        self.rrev = [
            (a1 + a0).sum(axis=1)
            for a1, a0 in zip(resp.a1_resp, resp.a0_resp)
        ]                                                        # (P, L)

    def _branches(self, x: np.ndarray, i: int):
        lay = self.layout
        delta = x[lay.idx_delta]
        d = x[lay.idx_d[i]]
        tau = x[lay.idx_tau[i]]
        u, v = self.obs.u[i], self.obs.v[i]
        with np.errstate(over="ignore"):
            a1, b1 = np.exp(x[lay.idx_a1[i]]), np.exp(x[lay.idx_b1[i]])
            a2, b2 = np.exp(x[lay.idx_a2[i]]), np.exp(x[lay.idx_b2[i]])
        # (weights, residuals, shapes, scales, param indices, location signs)
        yield (self.r1f[i], u - delta - d - tau, a1, b1,
               lay.idx_a1[i], lay.idx_b1[i],
               ((lay.idx_delta, -1.0), (lay.idx_d[i], -1.0),
                (lay.idx_tau[i], -1.0)))
        yield (self.r0f[i], u - delta - d, a1, b1,
               lay.idx_a1[i], lay.idx_b1[i],
               ((lay.idx_delta, -1.0), (lay.idx_d[i], -1.0)))
        yield (self.rrev[i], v + delta - d, a2, b2,
               lay.idx_a2[i], lay.idx_b2[i],
               ((lay.idx_delta, +1.0), (lay.idx_d[i], -1.0)))

    def value(self, x: np.ndarray) -> float:
        total = 0.0
        for i in range(self.layout.n_links):
            for W, w, a, b, _, _, _ in self._branches(x, i):
                if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
                    return -np.inf
                logh = component_logpdf_grid(w, a, b)
                active = W > 0
                if np.any(active & ~np.isfinite(logh)):
                    return -np.inf
                total += float(np.sum(np.where(active, W * logh, 0.0)))
        return total

    def gradient(self, x: np.ndarray) -> np.ndarray:
        g = np.zeros(self.layout.dim)
        self._derivs(x, g, None)
        return g

    def hessian(self, x: np.ndarray) -> np.ndarray:
        g = np.zeros(self.layout.dim)
        H = np.zeros((self.layout.dim, self.layout.dim))
        self._derivs(x, g, H)
        return H

    def _derivs(self, x, g, H):
        for i in range(self.layout.n_links):
            for W, w, a, b, ia, ib, locs in self._branches(x, i):
                ok = w > 0
                Wm = np.where(ok[:, None], W, 0.0)
                if not np.any(Wm > 0):
                    continue
                wc = np.where(ok, w, 1.0)[:, None]
                wc = np.maximum(wc, _TINY_W)
                sumW = Wm.sum(axis=0)
                gw = (a - 1.0) / wc - 1.0 / b                 # (P, M)
                ga_mat = np.log(wc) - digamma(a) - np.log(b)
                gb_mat = wc / b**2 - a / b
                s_gw = float(np.sum(Wm * gw))
                ga = (Wm * ga_mat).sum(axis=0)
                gb = (Wm * gb_mat).sum(axis=0)
                g[ia] += a * ga
                g[ib] += b * gb
                for li, ci in locs:
                    g[li] += ci * s_gw
                if H is None:
                    continue
                s_gww = float(np.sum(Wm * (-(a - 1.0) / wc**2)))
                haa = -polygamma(1, a) * sumW
                hbb = (Wm * (-2.0 * wc / b**3 + a / b**2)).sum(axis=0)
                hab = sumW * (-1.0 / b)
                haw = (Wm / wc).sum(axis=0)
                hbw = sumW / b**2
                # log-reparameterized diagonal and shape/scale coupling
                H[ia, ia] += a * ga + a**2 * haa
                H[ib, ib] += b * gb + b**2 * hbb
                H[ia, ib] += a * b * hab
                H[ib, ia] += a * b * hab
                for li, ci in locs:
                    for lj, cj in locs:
                        H[li, lj] += ci * cj * s_gww
                    H[ia, li] += ci * a * haw
                    H[li, ia] += ci * a * haw
                    H[ib, li] += ci * b * hbw
                    H[li, ib] += ci * b * hbw


def m_step_psi(
    theta_g: ThetaPi,
    resp: Responsibilities,
    obs: ObservationSet,
    opts: NewtonOptions | None = None,
    freeze_mixtures: bool = False,
    freeze_tau=None,
) -> tuple[Psi, MStepInfo]:
    """Maximize Q over Psi by damped Newton with a backtracking line search.

    Ascent is guaranteed: steps must satisfy an Armijo condition on Q,
    an indefinite or singular Hessian falls back to a gradient step for
    that iteration, and a line search that cannot improve returns the
    current point with a warning flag. Frozen coordinates (tau on
    confidently-clean links, the mixture block when the delay pdfs are
    known a priori) are simply excluded from the update.
    """
    opts = opts or NewtonOptions()
    layout = PsiLayout(theta_g.psi.M, theta_g.psi.L)
    prob = QProblem(resp, obs, layout)
    x = layout.pack(theta_g.psi)
    free = np.ones(layout.dim, dtype=bool)
    if freeze_tau is not None:
        free[layout.idx_tau[np.asarray(freeze_tau, dtype=bool)]] = False
    if freeze_mixtures:
        for blocks in (layout.idx_a1, layout.idx_b1,
                       layout.idx_a2, layout.idx_b2):
            for ix in blocks:
                free[ix] = False
    info = MStepInfo()
    q = prob.value(x)
    if not np.isfinite(q):
        raise DegenerateSupportError("Q is not finite at the starting point")
    for it in range(opts.max_iters):
        info.iterations = it
        grad = prob.gradient(x)[free]
        info.grad_norm = float(np.abs(grad).max(initial=0.0))
        if info.grad_norm <= opts.grad_tol * (1.0 + abs(q)):
            break
        step = None
        hess = prob.hessian(x)[np.ix_(free, free)]
        if np.all(np.isfinite(hess)):
            # plain Newton when -H is positive definite, otherwise damp
            # toward a (scaled) gradient step by inflating the diagonal
            scale = float(np.abs(np.diag(hess)).max(initial=0.0)) or 1.0
            eye = np.eye(hess.shape[0])
            for trial, lam in enumerate((0.0, 1e-8, 1e-4, 1.0, 1e4)):
                try:
                    c = np.linalg.cholesky(-hess + lam * scale * eye)
                except np.linalg.LinAlgError:
                    continue
                cand = np.linalg.solve(c.T, np.linalg.solve(c, grad))
                if np.all(np.isfinite(cand)) and grad @ cand > 0:
                    step = cand
                    if trial > 0:
                        info.hessian_fallbacks += 1
                    break
        if step is None:
            info.hessian_fallbacks += 1
            step = grad / max(1.0, np.linalg.norm(grad))
        slope = float(grad @ step)
        kappa = opts.kappa0
        accepted = False
        for _ in range(opts.max_backtracks):
            x_try = x.copy()
            x_try[free] += kappa * step
            q_try = prob.value(x_try)
            if q_try >= q + opts.armijo * kappa * slope and np.isfinite(q_try):
                gain = q_try - q
                x, q = x_try, q_try
                accepted = True
                break
            kappa *= opts.backtrack
        if not accepted:
            # cannot improve along this direction; the flag tells callers
            # the gradient tolerance was not reached
            info.line_search_failed = True
            break
        if gain < opts.min_q_gain:
            break
    return layout.unpack(x), info


def classify_links(pi) -> np.ndarray:
    """Attacked iff pi_i >= 1 - pi_i, i.e. pi_i >= 0.5 (ties attack)."""
    return np.asarray(pi, dtype=float) >= 0.5


@dataclass
class EMResult:
    theta: ThetaPi
    attacked: np.ndarray
    trace: list
    converged: bool
    n_iterations: int


def initialize(
    obs: ObservationSet,
    priors,
    osm,
    M,
    L,
    jitter: float = 0.1,
    pi_clean: float = 0.1,
    pi_attacked: float = 0.9,
    mixtures=None,
) -> ThetaPi:
    """Ad-hoc starting point for the EM iteration.

    Mixture weights start uniform; shapes/scales come from moment
    matching against the prior delay mean/variance per path (or from
    ``mixtures`` when the pdfs are known). Attack screening runs the
    order-statistic estimator per link, takes the lower median as the
    offset reference, and flags links whose estimate sits at least two
    predicted root-MSEs of the median link away. Screened links start at
    a soft pi (0.9/0.1 rather than 1/0) so a wrong screen can still be
    overturned: pi in {0, 1} is absorbing under the closed-form update.

    Parameters
    ----------
    priors : sequence of (DelayEmpirics, DelayEmpirics)
        Forward/reverse prior delay statistics per link.
    osm : sequence of OrderStatMoments
        Sorted-round moments per link, for the screening estimator.
    M, L : sequence of int
        Mixture orders per link (forward, reverse).
    mixtures : sequence of (GammaMixture, GammaMixture), optional
        Known forward/reverse delay pdfs; overrides moment matching.
    """
    n = obs.N
    if len(priors) != n or len(osm) != n or len(M) != n or len(L) != n:
        raise ConfigError("priors, osm, M, L must all have length N")
    deltas = np.empty(n)
    weights = []
    for i in range(n):
        w = l_weights(osm[i])
        weights.append(w)
        deltas[i] = l_estimate(obs.u[i], obs.v[i], w)
    med_idx = lower_median_index(deltas)
    delta0 = float(deltas[med_idx])
    sigma_med = float(np.sqrt(max(weights[med_idx].predicted_mse, 0.0)))
    # absolute floor keeps the zero-noise degenerate case from flagging
    # every link (|0| >= 0 would be true)
    threshold = 2.0 * sigma_med + 1e-18
    flagged = np.abs(delta0 - deltas) >= threshold
    if n % 2 == 0 and int(flagged.sum()) == n // 2:
        warnings.warn(
            f"exactly N/2 = {n // 2} links screened as attacked; the "
            "fewer-than-half assumption is violated",
            stacklevel=2,
        )
    alpha, beta, a1, b1, a2, b2 = [], [], [], [], [], []
    d0 = np.empty(n)
    tau0 = np.zeros(n)
    for i in range(n):
        fwd_emp, rev_emp = priors[i]
        if mixtures is not None:
            fwd_mix, rev_mix = mixtures[i]
        else:
            fwd_mix = moment_match_init(
                fwd_emp.mean, fwd_emp.variance, M[i], jitter
            )
            rev_mix = moment_match_init(
                rev_emp.mean, rev_emp.variance, L[i], jitter
            )
        alpha.append(np.asarray(fwd_mix.weights).copy())
        beta.append(np.asarray(rev_mix.weights).copy())
        a1.append(fwd_mix.shapes)
        b1.append(fwd_mix.scales)
        a2.append(rev_mix.shapes)
        b2.append(rev_mix.scales)
        mu1, mu2 = fwd_emp.mean, rev_emp.mean
        if flagged[i]:
            d0[i] = obs.v[i].mean() + delta0 - mu2
            tau0[i] = obs.u[i].mean() - delta0 - d0[i] - mu1
        else:
            d0[i] = (obs.u[i] + obs.v[i]).mean() / 2 - (mu1 + mu2) / 2
        # the moment formulas can land above the support edge (some
        # residual <= 0, zero density); clamp so every residual starts
        # strictly inside the Gamma support
        margin = 1e-3 * (mu1 + mu2) / 2
        edge = min(obs.u[i].min() - delta0, obs.v[i].min() + delta0)
        d0[i] = min(d0[i], edge - margin)
        if flagged[i]:
            tau0[i] = min(
                tau0[i], obs.u[i].min() - delta0 - d0[i] - margin
            )
    psi = Psi(delta0, d0, tau0, a1, b1, a2, b2)
    pi0 = np.where(flagged, pi_attacked, pi_clean)
    return ThetaPi(psi, alpha, beta, pi0)


def run_em(
    obs: ObservationSet,
    init: ThetaPi,
    eps: float | None = None,
    opts: NewtonOptions | None = None,
    freeze_mixtures: bool = False,
    max_outer: int = 500,
) -> EMResult:
    """Iterate E-step and M-steps until the log-likelihood stabilizes.

    Stops when consecutive log-likelihoods differ by less than ``eps``
    (default: 1e-6 times the magnitude of the starting value). Returns
    the best-so-far estimate with ``converged=False`` if the outer
    iteration cap is reached first. The trace records
    (iteration, llf, grad_norm, pi) per outer step.
    """
    llf = log_likelihood(init, obs)
    if eps is None:
        eps = 1e-6 * max(abs(llf), 1e-6)
    if not eps > 0:
        raise ConfigError("eps must be positive")
    if opts is None:
        opts = NewtonOptions(min_q_gain=0.05 * eps)
    theta = init
    trace = [(0, llf, np.nan, theta.pi.copy())]
    llf_prev = -np.inf
    converged = False
    it = 0
    while abs(llf - llf_prev) >= eps:
        if it >= max_outer:
            warnings.warn(
                f"EM did not converge within {max_outer} outer iterations",
                stacklevel=2,
            )
            break
        it += 1
        resp = e_step(theta, obs)
        pi_new, alpha_new, beta_new = m_step_closed(resp)
        theta = ThetaPi(
            theta.psi,
            theta.alpha if freeze_mixtures else alpha_new,
            theta.beta if freeze_mixtures else beta_new,
            pi_new,
        )
        psi_new, info = m_step_psi(
            theta,
            resp,
            obs,
            opts,
            freeze_mixtures=freeze_mixtures,
            freeze_tau=pi_new < _PI_FREEZE,
        )
        theta = ThetaPi(psi_new, theta.alpha, theta.beta, theta.pi)
        llf_prev = llf
        llf = log_likelihood(theta, obs)
        trace.append((it, llf, info.grad_norm, theta.pi.copy()))
    else:
        converged = True
    return EMResult(theta, classify_links(theta.pi), trace, converged, it)


def write_em_trace_csv(trace, path) -> None:
    """Iteration trace as CSV: iter,llf,grad_norm,pi_1..pi_N."""
    if not trace:
        raise ConfigError("empty trace")
    n = len(trace[0][3])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "llf", "grad_norm"] + [f"pi_{i + 1}" for i in range(n)])
        for it, llf, gn, pi in trace:
            w.writerow([it, repr(float(llf)), repr(float(gn))]
                       + [repr(float(p)) for p in pi])
