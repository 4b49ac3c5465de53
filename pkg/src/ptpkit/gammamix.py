"""Gamma-mixture densities for queuing-delay modeling.

Shape-scale parameterization throughout: a component with shape ``a`` and
scale ``b`` has mean ``a*b`` and variance ``a*b**2``. Likelihood work is
done in log space; products of many small densities underflow otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import ConfigError, SingularityError

_WEIGHT_TOL = 1e-9


@dataclass(frozen=True)
class GammaComponent:
    """One Gamma density, shape ``a`` > 0 and scale ``b`` > 0."""

    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0 and np.isfinite(self.a)):
            raise ConfigError(f"gamma shape must be positive, got {self.a}")
        if not (self.b > 0 and np.isfinite(self.b)):
            raise ConfigError(f"gamma scale must be positive, got {self.b}")


@dataclass(frozen=True)
class GammaMixture:
    """Finite Gamma mixture: ``f(w) = sum_k weights[k] * h(w; a_k, b_k)``."""

    weights: np.ndarray
    components: tuple[GammaComponent, ...]

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", w)
        if len(self.components) < 1:
            raise ConfigError("mixture needs at least one component")
        if w.shape != (len(self.components),):
            raise ConfigError("weights and components disagree in length")
        if np.any(w < 0):
            raise ConfigError("mixture weights must be nonnegative")
        if abs(float(w.sum()) - 1.0) > _WEIGHT_TOL:
            raise ConfigError(f"mixture weights sum to {w.sum()}, expected 1")

    @property
    def n_components(self) -> int:
        return len(self.components)

    @property
    def shapes(self) -> np.ndarray:
        return np.array([c.a for c in self.components])

    @property
    def scales(self) -> np.ndarray:
        return np.array([c.b for c in self.components])

    def mean(self) -> float:
        return float(np.sum(self.weights * self.shapes * self.scales))

    def variance(self) -> float:
        a, b, w = self.shapes, self.scales, self.weights
        second = np.sum(w * (a * b**2 + (a * b) ** 2))
        return float(second - self.mean() ** 2)

    def std(self) -> float:
        return float(np.sqrt(max(self.variance(), 0.0)))

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "shapes": self.shapes.tolist(),
            "scales": self.scales.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GammaMixture":
        comps = tuple(
            GammaComponent(a, b) for a, b in zip(d["shapes"], d["scales"])
        )
        return cls(np.asarray(d["weights"], dtype=float), comps)


def gamma_logpdf(w: float, c: GammaComponent) -> float:
    """Log-density of one Gamma component at a scalar point.

    Support is ``w >= 0``. At ``w == 0`` the right-limit is used: ``-inf``
    for shape > 1 (density 0), ``-log(b)`` for shape == 1; shape < 1 has no
    finite limit and raises :class:`SingularityError`.
    """
    if w < 0:
        return -np.inf
    if w == 0:
        if c.a > 1:
            return -np.inf
        if c.a == 1:
            return -np.log(c.b)
        raise SingularityError(
            f"gamma density with shape {c.a} < 1 diverges at w=0"
        )
    return (c.a - 1) * np.log(w) - w / c.b - gammaln(c.a) - c.a * np.log(c.b)


def gamma_pdf(w: float, c: GammaComponent) -> float:
    """Density of one Gamma component at a scalar point (0 for w < 0)."""
    lp = gamma_logpdf(w, c)
    return float(np.exp(lp))


def component_logpdf_grid(w, shapes, scales) -> np.ndarray:
    """Log Gamma densities for an array of points against several components.

    Parameters
    ----------
    w : array_like, shape (...,)
        Evaluation points.
    shapes, scales : array_like, shape (M,)
        Component parameters.

    Returns
    -------
    ndarray, shape (..., M)
        ``log h(w; a_k, b_k)``; ``-inf`` where ``w < 0``. Boundary points
        ``w == 0`` map to the right-limit for shape >= 1 and to ``-inf``
        for shape < 1 (zero-mass convention; the singularity is integrable
        so this never inflates a likelihood).
    """
    w = np.asarray(w, dtype=float)[..., None]
    a = np.asarray(shapes, dtype=float)
    b = np.asarray(scales, dtype=float)
    pos = w > 0
    safe_w = np.where(pos, w, 1.0)
    out = (a - 1.0) * np.log(safe_w) - safe_w / b - gammaln(a) - a * np.log(b)
    out = np.where(pos, out, -np.inf)
    at_zero = w == 0
    if np.any(at_zero):
        out = np.where(at_zero & (a == 1.0), -np.log(b), out)
    return out


def mixture_logpdf(x, mix: GammaMixture, shift: float = 0.0) -> np.ndarray:
    """Log-density of a shifted mixture, ``log f(x - shift)``.

    Accumulated with log-sum-exp over components; safe for vector input.
    """
    x = np.asarray(x, dtype=float)
    comp = component_logpdf_grid(x - shift, mix.shapes, mix.scales)
    with np.errstate(divide="ignore"):
        out = logsumexp(comp, axis=-1, b=mix.weights)
    return out


def shifted_mixture_pdf(x, mix: GammaMixture, shift: float = 0.0):
    """Density of the mixture translated by ``shift``: ``f(x - shift)``."""
    return np.exp(mixture_logpdf(x, mix, shift))


def moment_match_init(
    mean: float, variance: float, M: int, jitter: float = 0.1
) -> GammaMixture:
    """Build an M-component mixture whose mean matches a target exactly.

    M == 1 solves ``a*b = mean``, ``a*b**2 = variance`` (exact moment
    match). For M > 1 every component starts from that solution and the
    scales are spread by symmetric factors ``1 + jitter*s_k`` with
    ``s_k`` evenly spaced in [-1, 1]; the symmetric spread keeps the
    equally-weighted mixture mean at ``mean`` exactly while breaking the
    permutation symmetry that would otherwise lock identical components
    together under EM.
    """
    if not (mean > 0 and np.isfinite(mean)):
        raise ConfigError(f"prior mean must be positive, got {mean}")
    if not (variance > 0 and np.isfinite(variance)):
        raise ConfigError(f"prior variance must be positive, got {variance}")
    if M < 1:
        raise ConfigError(f"component count must be >= 1, got {M}")
    a = mean**2 / variance
    b = variance / mean
    if M == 1:
        spread = np.zeros(1)
    else:
        spread = np.linspace(-1.0, 1.0, M)
    comps = tuple(GammaComponent(a, b * (1.0 + jitter * s)) for s in spread)
    return GammaMixture(np.full(M, 1.0 / M), comps)
