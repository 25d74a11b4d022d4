"""Priors, measurement channels, fidelity (mutual information) and Bayes updates.

Phase is the only parameter modelled: everything lives on the circle
``(-pi, pi]``.  A prior is either the analytic uniform density or a density
sampled on a strictly increasing grid; gridded densities are treated as
discrete measures with periodic trapezoid weights, so expectations under
them are finite sums with no quadrature error of their own.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable, Mapping, Sequence

import numpy as np

from .numerics import (
    DEFAULT_TOL,
    IntegrationError,
    IntegrationResult,
    Tolerance,
    integrate_periodic,
)

log = logging.getLogger(__name__)

LN2 = math.log(2.0)
TWO_PI = 2.0 * math.pi
DEFAULT_GRID = 1024


class ChannelError(ValueError):
    """Raised when a channel cannot be used as requested."""


class ImpossibleObservation(ChannelError):
    """The observed outcome has zero likelihood everywhere on the prior's support."""


class FidelityError(ArithmeticError):
    """A fidelity evaluation could not meet its error budget."""

    def __init__(self, message, best=None, diagnostics=None):
        super().__init__(message)
        self.best = best
        self.diagnostics = diagnostics or {}


def phase_grid(n: int = DEFAULT_GRID) -> np.ndarray:
    """Uniform grid of ``n`` phases covering ``(-pi, pi]``, ending exactly at pi."""
    if n < 2:
        raise ValueError("phase grid needs at least 2 points")
    return -math.pi + TWO_PI * np.arange(1, n + 1) / n


def periodic_trapezoid_weights(grid: np.ndarray) -> np.ndarray:
    gaps = np.diff(np.concatenate([grid, [grid[0] + TWO_PI]]))
    return 0.5 * (gaps + np.roll(gaps, 1))


# ---------------------------------------------------------------------------
# priors


@dataclass(frozen=True, eq=False)
class PhasePrior:
    """Probability density over phase.

    ``density`` is None for the analytic uniform prior, in which case
    ``grid`` is only the default lattice used when a posterior is formed.
    """

    grid: np.ndarray
    density: np.ndarray | None = None

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        object.__setattr__(self, "grid", grid)
        if grid.ndim != 1 or grid.size < 2:
            raise ValueError("grid must be 1-d with at least 2 points")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if grid[0] <= -math.pi - 1e-12 or grid[-1] > math.pi + 1e-12:
            raise ValueError("grid must lie in (-pi, pi]")
        if self.density is not None:
            dens = np.asarray(self.density, dtype=float)
            object.__setattr__(self, "density", dens)
            if dens.shape != grid.shape:
                raise ValueError("density and grid shapes differ")
            if np.any(dens < 0) or not np.all(np.isfinite(dens)):
                raise ValueError("density must be finite and nonnegative")
            mass = float(np.dot(self.weights, dens))
            if abs(mass - 1.0) > 1e-9:
                raise ValueError(f"density integrates to {mass!r}, not 1")

    @classmethod
    def uniform(cls, n_grid: int = DEFAULT_GRID) -> "PhasePrior":
        return cls(phase_grid(n_grid))

    @classmethod
    def from_unnormalized(cls, grid, values) -> "PhasePrior":
        grid = np.asarray(grid, dtype=float)
        values = np.asarray(values, dtype=float)
        mass = float(np.dot(periodic_trapezoid_weights(grid), values))
        if not mass > 0:
            raise ValueError("density has no mass")
        return cls(grid, values / mass)

    @classmethod
    def concentrated(cls, phi0: float, n_grid: int = DEFAULT_GRID) -> "PhasePrior":
        """All prior mass on the grid point nearest ``phi0``."""
        grid = phase_grid(n_grid)
        idx = int(np.argmin(np.abs(np.angle(np.exp(1j * (grid - phi0))))))
        values = np.zeros_like(grid)
        values[idx] = 1.0
        return cls.from_unnormalized(grid, values)

    @property
    def is_uniform(self) -> bool:
        return self.density is None

    @property
    def weights(self) -> np.ndarray:
        return periodic_trapezoid_weights(self.grid)

    def grid_density(self) -> np.ndarray:
        if self.density is None:
            return np.full(self.grid.shape, 1.0 / TWO_PI)
        return self.density

    def mass(self) -> np.ndarray:
        """Probability carried by each grid point."""
        return self.weights * self.grid_density()

    def expect(self, f, tol: Tolerance = DEFAULT_TOL, norm=None) -> IntegrationResult:
        """Integral of ``f(phi) * p(phi)`` over the circle.

        Adaptive quadrature for the uniform prior, an exact weighted sum
        over the grid otherwise.
        """
        if self.density is None:
            return integrate_periodic(lambda x: np.asarray(f(x)) / TWO_PI, tol, norm=norm)
        m = self.mass()
        keep = m > 0
        vals = np.asarray(f(self.grid[keep]), dtype=float)
        value = np.tensordot(m[keep], vals, axes=([0], [0]))
        value = float(value) if np.ndim(value) == 0 else value
        return IntegrationResult(value, 0.0, int(keep.sum()))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.density is None:
            # uniform on [-pi, pi); the endpoints differ by a null set
            return rng.uniform(-math.pi, math.pi, n)
        m = self.mass()
        return self.grid[rng.choice(self.grid.size, size=n, p=m / m.sum())]


class PosteriorDensity(PhasePrior):
    """Gridded posterior over phase; usable directly as the next prior."""


# ---------------------------------------------------------------------------
# channels


@dataclass(frozen=True, eq=False)
class DiscreteChannel:
    """Outcome pmf ``P(y | phi, xi)`` over an enumerated (possibly truncated) set.

    ``pmf(phi)`` maps an array of phases to an ``(len(phi), len(outcomes))``
    array.  ``tail_mass`` bounds the probability dropped by truncation.
    """

    outcomes: Sequence[Hashable]
    pmf: Callable[[np.ndarray], np.ndarray]
    tail_mass: float = 0.0
    params: Mapping[str, Any] = field(default_factory=dict)
    truncation_order: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "outcomes", tuple(self.outcomes))
        object.__setattr__(self, "_index", {y: i for i, y in enumerate(self.outcomes)})

    def probabilities(self, phi) -> np.ndarray:
        phi = np.atleast_1d(np.asarray(phi, dtype=float))
        return np.asarray(self.pmf(phi), dtype=float).reshape(phi.size, len(self.outcomes))

    def index(self, outcome) -> int:
        try:
            return self._index[outcome]
        except KeyError:
            raise ChannelError(f"outcome {outcome!r} is not in this channel's support") from None

    def log_likelihood(self, outcome, phi) -> np.ndarray:
        p = self.probabilities(phi)[:, self.index(outcome)]
        with np.errstate(divide="ignore"):
            return np.log(p)


@dataclass(frozen=True, eq=False)
class OutcomeRule:
    """Quadrature over outcome space: nodes plus a primary and an embedded coarse rule."""

    nodes: np.ndarray
    weights: np.ndarray
    coarse_weights: np.ndarray


@dataclass(frozen=True, eq=False)
class ContinuousChannel:
    """Outcome density ``p(y | phi, xi)`` over real outcome vectors.

    ``logpdf(y, phi)`` takes outcomes of shape ``(m, d)`` and phases of shape
    ``(k,)`` and returns ``(k, m)``.  ``outcome_rule`` supplies the nodes
    used for the outer outcome integrals.  ``sampler(phi, rng)`` draws one
    outcome per phase and is optional.
    """

    logpdf: Callable[[np.ndarray, np.ndarray], np.ndarray]
    outcome_rule: Callable[[], OutcomeRule]
    params: Mapping[str, Any] = field(default_factory=dict)
    sampler: Callable[[np.ndarray, np.random.Generator], np.ndarray] | None = None

    def pdf(self, y, phi) -> np.ndarray:
        return np.exp(self.logpdf(np.atleast_2d(y), np.atleast_1d(phi)))

    def log_likelihood(self, outcome, phi) -> np.ndarray:
        y = np.atleast_2d(np.asarray(outcome, dtype=float))
        return self.logpdf(y, np.atleast_1d(phi))[:, 0]


# ---------------------------------------------------------------------------
# fidelity


@dataclass(frozen=True)
class FidelityEstimate:
    bits: float
    numeric_error: float
    truncation_order: int | None = None
    evaluations: int = 0
    diagnostics: Mapping[str, Any] = field(default_factory=dict)

    def __float__(self):
        return self.bits


def _xlog2y_ratio(p, q):
    # p * log2(p / q) with 0 log 0 = 0
    with np.errstate(divide="ignore", invalid="ignore"):
        out = p * (np.log(p) - np.log(q)) / LN2
    return np.where(p > 0, out, 0.0)


def mutual_information_finite(joint) -> float:
    """Mutual information in bits of a finite joint pmf ``joint[x, y]``."""
    joint = np.asarray(joint, dtype=float)
    if joint.ndim != 2:
        raise ValueError("joint pmf must be a 2-d array")
    if np.any(joint < 0):
        raise ValueError("joint pmf has negative entries")
    total = math.fsum(joint.ravel())
    if abs(total - 1.0) > 1e-12:
        raise ValueError(f"joint pmf is not normalised: deficit {1.0 - total:.3e}")
    # correctly rounded marginals and lj - (lx + ly) make the result exactly
    # transpose-symmetric; separate logs avoid underflow in px * py
    px = np.array([math.fsum(r) for r in joint])
    py = np.array([math.fsum(c) for c in joint.T])
    with np.errstate(divide="ignore", invalid="ignore"):
        lj = np.log(joint)
        terms = joint * (lj - (np.log(px)[:, None] + np.log(py)[None, :])) / LN2
    terms = np.where(joint > 0, terms, 0.0)
    return max(0.0, math.fsum(terms.ravel()))


def _tail_penalty(tail: float) -> float:
    # heuristic bound on the information carried by discarded outcomes
    if tail <= 0:
        return 0.0
    return tail * (1.0 + math.log2(1.0 / tail))


def fidelity_discrete_outcomes(
    channel: DiscreteChannel, prior: PhasePrior, tol: Tolerance = DEFAULT_TOL
) -> FidelityEstimate:
    """Mutual information between phase and a discrete outcome.

    Two passes over phase: the outcome marginals ``P(y)`` first, then the
    prior-averaged relative entropy of ``P(y | phi)`` against them.
    """
    budget = max(tol.abs, tol.rel)
    if channel.tail_mass > budget:
        raise FidelityError(
            f"channel truncation tail {channel.tail_mass:.3g} exceeds tolerance {budget:.3g}",
            diagnostics={"tail_mass": channel.tail_mass},
        )
    l1 = lambda v: float(np.sum(np.abs(v)))  # noqa: E731
    try:
        marg = prior.expect(channel.probabilities, tol, norm=l1)
        py = np.asarray(marg.value, dtype=float)

        def integrand(phi):
            return _xlog2y_ratio(channel.probabilities(phi), py[None, :]).sum(axis=1)

        info = prior.expect(integrand, tol)
    except IntegrationError as exc:
        raise FidelityError(str(exc), best=exc.value) from exc
    # dH/dP(y) = -1/ln 2 per outcome
    err = info.error_estimate + marg.error_estimate / LN2 + _tail_penalty(channel.tail_mass)
    return FidelityEstimate(
        bits=float(info.value),
        numeric_error=err,
        truncation_order=channel.truncation_order,
        evaluations=marg.evaluations + info.evaluations,
        diagnostics={"outcomes": len(channel.outcomes), "tail_mass": channel.tail_mass},
    )


def fidelity_continuous_outcomes(
    channel: ContinuousChannel, prior: PhasePrior, tol: Tolerance = DEFAULT_TOL
) -> FidelityEstimate:
    """Mutual information between phase and a continuous outcome vector.

    The outcome integrals run over ``channel.outcome_rule()``.  At every
    outcome node the marginal density is an integral over phase; a second
    phase integral then averages ``log2 p(y|phi)/p(y)``.  Both the primary
    and the embedded coarse outcome rule are carried through so their
    difference measures the outcome-grid error.
    """
    rule = channel.outcome_rule()
    y, w, wc = rule.nodes, rule.weights, rule.coarse_weights
    wnorm = lambda v: float(np.dot(w, np.abs(v))) / LN2  # noqa: E731
    try:
        marg = prior.expect(lambda phi: channel.pdf(y, phi), tol, norm=wnorm)
        logm = np.log(np.maximum(np.asarray(marg.value, dtype=float), np.finfo(float).tiny))

        def integrand(phi):
            lp = channel.logpdf(y, phi)
            with np.errstate(invalid="ignore"):
                terms = np.exp(lp) * (lp - logm[None, :]) / LN2
            terms = np.where(np.isfinite(lp), terms, 0.0)
            return np.stack([terms @ w, terms @ wc], axis=1)

        info = prior.expect(integrand, tol, norm=lambda v: float(abs(v[0])))
    except IntegrationError as exc:
        raise FidelityError(str(exc), best=exc.value) from exc
    fine, coarse = np.asarray(info.value, dtype=float)
    grid_err = abs(fine - coarse)
    err = info.error_estimate + marg.error_estimate + grid_err
    return FidelityEstimate(
        bits=float(fine),
        numeric_error=err,
        evaluations=(marg.evaluations + info.evaluations) * len(w),
        diagnostics={"outcome_nodes": len(w), "outcome_grid_error": grid_err},
    )


# ---------------------------------------------------------------------------
# Bayes


def posterior(channel, prior: PhasePrior, observed) -> PosteriorDensity:
    """Bayes update of ``prior`` on the prior's grid after observing ``observed``."""
    grid = prior.grid
    loglik = np.asarray(channel.log_likelihood(observed, grid), dtype=float)
    dens = prior.grid_density()
    with np.errstate(divide="ignore"):
        logpost = loglik + np.log(dens)
    peak = np.max(logpost)
    if not np.isfinite(peak):
        raise ImpossibleObservation(f"observation {observed!r} impossible under model")
    unnorm = np.exp(logpost - peak)
    return PosteriorDensity.from_unnormalized(grid, unnorm)


def recursive_update(prior: PhasePrior, channel, observations) -> PhasePrior:
    """Fold Bayes' rule over ``observations``; each posterior becomes the next prior."""
    current = prior
    for obs in observations:
        current = posterior(channel, current, obs)
    return current


@dataclass(frozen=True)
class PhaseEstimate:
    circular_mean: float | None
    circular_dispersion: float
    modes: list[float]

    @property
    def mean_defined(self) -> bool:
        return self.circular_mean is not None


def estimate_phase(post: PhasePrior, resultant_floor: float = 1e-9) -> PhaseEstimate:
    """Circular mean, circular dispersion and prominent modes of a gridded density.

    Modes are local maxima (with periodic neighbours) whose density is at
    least half the global maximum.  When the mean resultant length is
    below ``resultant_floor`` the mean is reported as None.
    """
    grid = post.grid
    dens = post.grid_density()
    resultant = complex(np.dot(post.weights * dens, np.exp(1j * grid)))
    length = abs(resultant)
    mean = math.atan2(resultant.imag, resultant.real) if length >= resultant_floor else None
    left, right = np.roll(dens, 1), np.roll(dens, -1)
    # ">=" on one side so flat-topped peaks yield exactly one mode
    peaks = (dens >= left) & (dens > right) & (dens >= 0.5 * dens.max())
    return PhaseEstimate(mean, 1.0 - length, [float(p) for p in grid[peaks]])


# ---------------------------------------------------------------------------
# apparatus optimisation


@dataclass(frozen=True)
class OptimizationResult:
    best_xi: float
    best_bits: float
    table: list[tuple[float, float | None, str | None]]


def channel_fidelity(channel, prior: PhasePrior, tol: Tolerance = DEFAULT_TOL) -> FidelityEstimate:
    if isinstance(channel, DiscreteChannel):
        return fidelity_discrete_outcomes(channel, prior, tol)
    if isinstance(channel, ContinuousChannel):
        return fidelity_continuous_outcomes(channel, prior, tol)
    raise TypeError(f"not a channel: {type(channel).__name__}")


def optimize_fidelity(
    family: Callable[[float], Any],
    candidates: Sequence[float],
    prior: PhasePrior,
    tol: Tolerance = DEFAULT_TOL,
    evaluate: Callable[[Any, PhasePrior, Tolerance], FidelityEstimate] = channel_fidelity,
) -> OptimizationResult:
    """Exhaustive search for the apparatus parameter with the highest fidelity.

    ``family(xi)`` builds the channel for candidate ``xi``.  Failing
    candidates stay in the table with their error message and are excluded
    from the argmax.  Ties go to the smallest ``xi``.
    """
    candidates = list(candidates)
    if not candidates:
        raise ValueError("empty candidate grid")
    table = []
    for xi in candidates:
        try:
            bits = float(evaluate(family(xi), prior, tol).bits)
            table.append((xi, bits, None))
        except (ArithmeticError, ValueError) as exc:
            log.warning("candidate %r failed: %s", xi, exc)
            table.append((xi, None, str(exc)))
    ok = [(bits, xi) for xi, bits, _ in table if bits is not None]
    if not ok:
        raise FidelityError("every candidate failed", diagnostics={"table": table})
    best_bits = max(b for b, _ in ok)
    best_xi = min(xi for b, xi in ok if b == best_bits)
    return OptimizationResult(best_xi, best_bits, table)
