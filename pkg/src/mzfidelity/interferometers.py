"""Mach-Zehnder measurement models: coherent-state photon counting, the noiseless
discretised classical interferometer, and the classical interferometer with
Gaussian energy-measurement noise.

Energies are dimensionless, in units of the photon energy.
"""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy import special

from .info import (
    LN2,
    TWO_PI,
    ContinuousChannel,
    DiscreteChannel,
    FidelityEstimate,
    FidelityError,
    OutcomeRule,
    PhasePrior,
    fidelity_continuous_outcomes,
    fidelity_discrete_outcomes,
    mutual_information_finite,
)
from .numerics import (
    DEFAULT_TOL,
    IntegrationError,
    Tolerance,
    TruncationBudget,
    integrate_periodic,
    panel_rule,
    poisson_truncation,
)

log = logging.getLogger(__name__)

WORKERS_ENV = "MZFIDELITY_WORKERS"
DEFAULT_TAIL = 1e-12


class PhotonPair(NamedTuple):
    n_c: int
    n_d: int


class EnergyPair(NamedTuple):
    e_c: float
    e_d: float


# ---------------------------------------------------------------------------
# coherent-state input, photon counting


@dataclass(frozen=True)
class CoherentMzModel:
    eta: float

    def __post_init__(self):
        if not (math.isfinite(self.eta) and self.eta >= 0):
            raise ValueError(f"eta must be finite and >= 0, got {self.eta}")


def photon_pairs(n_max: int) -> list[PhotonPair]:
    """All (n_c, n_d) with n_c + n_d <= n_max, ordered by total then n_c."""
    return [PhotonPair(a, n - a) for n in range(n_max + 1) for a in range(n + 1)]


def _pair_arrays(n_max):
    pairs = photon_pairs(n_max)
    a = np.array([p.n_c for p in pairs], dtype=float)
    b = np.array([p.n_d for p in pairs], dtype=float)
    return pairs, a, b


def _log_shape(a, b, phi):
    # log[sin^{2a}(phi/2) cos^{2b}(phi/2)] as a (len(phi), len(a)) table; 0 log 0 = 0
    half = 0.5 * np.asarray(phi, dtype=float)[:, None]
    return special.xlogy(a[None, :], np.sin(half) ** 2) + special.xlogy(b[None, :], np.cos(half) ** 2)


def _log_poisson_pair_prefactor(eta, a, b):
    return -eta + special.xlogy(a + b, eta) - special.gammaln(a + 1) - special.gammaln(b + 1)


def quantum_mz_table(eta: float, phi, n_max: int) -> np.ndarray:
    """P(n_c, n_d | phi) on ``photon_pairs(n_max)``, one row per phase."""
    _, a, b = _pair_arrays(n_max)
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    logp = _log_poisson_pair_prefactor(eta, a, b)[None, :] + _log_shape(a, b, phi)
    return np.exp(logp)


def quantum_mz_pmf(model: CoherentMzModel, phi: float, budget: TruncationBudget | None = None):
    """Photon-count distribution at the two output ports for phase ``phi``.

    Returns a dict ``PhotonPair -> probability`` over n_c + n_d <= n_max.
    The total count is Poisson(eta) and independent of phase, so the mass
    outside the table is at most ``budget.tail_mass``.
    """
    if budget is None:
        budget = poisson_truncation(model.eta, DEFAULT_TAIL)
    pairs = photon_pairs(budget.n_max)
    row = quantum_mz_table(model.eta, phi, budget.n_max)[0]
    return dict(zip(pairs, row.tolist()))


def quantum_mz_channel(eta: float, tail_mass: float = DEFAULT_TAIL) -> DiscreteChannel:
    model = CoherentMzModel(eta)
    budget = poisson_truncation(model.eta, tail_mass)
    return DiscreteChannel(
        outcomes=photon_pairs(budget.n_max),
        pmf=lambda phi: quantum_mz_table(model.eta, phi, budget.n_max),
        tail_mass=tail_mass,
        params={"eta": eta},
        truncation_order=budget.n_max,
    )


def quantum_mz_fidelity(
    eta: float,
    prior: PhasePrior | None = None,
    tol: Tolerance = DEFAULT_TOL,
    tail_mass: float = DEFAULT_TAIL,
) -> FidelityEstimate:
    """Fidelity of the coherent-state interferometer with photon-counting readout.

    For the uniform prior the outcome marginal is known in closed form,
    P(n_c, n_d) = P_N(n) Gamma(n_c+1/2) Gamma(n_d+1/2) / (pi n!), so each
    (n_c, n_d) term reduces to a single phase integral of
    ``w log2(C w)`` with ``w = sin^{2n_c} cos^{2n_d}`` and
    ``C = pi n! / (Gamma(n_c+1/2) Gamma(n_d+1/2))``.  All terms share one
    adaptive quadrature.  Other priors go through the generic discrete path.
    """
    model = CoherentMzModel(eta)
    if prior is not None and not prior.is_uniform:
        return fidelity_discrete_outcomes(quantum_mz_channel(eta, tail_mass), prior, tol)
    budget = poisson_truncation(model.eta, tail_mass)
    _, a, b = _pair_arrays(budget.n_max)
    n = a + b
    log_c = math.log(math.pi) + special.gammaln(n + 1) - special.gammaln(a + 0.5) - special.gammaln(b + 0.5)
    log_pref = _log_poisson_pair_prefactor(model.eta, a, b) - math.log(TWO_PI)
    live = np.isfinite(log_pref)
    a, b, log_c, pref = a[live], b[live], log_c[live], np.exp(log_pref[live])

    def integrand(phi):
        logw = _log_shape(a, b, phi)
        w = np.exp(logw)
        with np.errstate(invalid="ignore"):
            terms = pref[None, :] * w * (log_c[None, :] + logw) / LN2
        return np.where(w > 0, terms, 0.0)

    try:
        res = integrate_periodic(integrand, tol, norm=lambda v: float(np.sum(np.abs(v))))
    except IntegrationError as exc:
        raise FidelityError(str(exc), best=float(np.sum(exc.value))) from exc
    tail_bits = tail_mass * (1.0 + math.log2(1.0 / tail_mass)) if budget.n_max else 0.0
    return FidelityEstimate(
        bits=math.fsum(np.atleast_1d(res.value)),
        numeric_error=res.error_estimate + tail_bits,
        truncation_order=budget.n_max,
        evaluations=res.evaluations,
        diagnostics={"terms": int(live.sum()), "tail_mass": tail_mass},
    )


# ---------------------------------------------------------------------------
# classical interferometer, noiseless and discretised


def classical_mz_output(e_in: float, phi: float) -> EnergyPair:
    if e_in < 0:
        raise ValueError(f"input energy must be >= 0, got {e_in}")
    s = math.sin(0.5 * phi) ** 2
    # the larger share is >= e_in/2, so e_in - big is exact (Sterbenz) and
    # the two shares add back to e_in exactly
    big = e_in * max(s, 1.0 - s)
    small = e_in - big
    return EnergyPair(big, small) if s >= 0.5 else EnergyPair(small, big)


@dataclass(frozen=True, eq=False)
class IdealClassicalMz:
    """Noiseless classical interferometer on a discrete phase and energy lattice.

    Phases are ``pi k / n_phi`` for ``k = -(n_phi-1), ..., n_phi``; input
    energies are ``n * delta_e`` for ``n = 0..n_e`` with probabilities
    ``input_pmf[n]``.
    """

    n_phi: int
    n_e: int
    delta_e: float
    input_pmf: np.ndarray

    def __post_init__(self):
        pmf = np.asarray(self.input_pmf, dtype=float)
        object.__setattr__(self, "input_pmf", pmf)
        if self.n_phi < 1 or self.n_e < 0:
            raise ValueError("need n_phi >= 1 and n_e >= 0")
        if not self.delta_e > 0:
            raise ValueError("delta_e must be positive")
        if pmf.shape != (self.n_e + 1,) or np.any(pmf < 0):
            raise ValueError("input_pmf must be a nonnegative vector of length n_e + 1")
        if abs(math.fsum(pmf) - 1.0) > 1e-12:
            raise ValueError("input_pmf must sum to 1")

    @classmethod
    def monochromatic(cls, n_phi: int, m: int, delta_e: float = 1.0, n_e: int | None = None):
        n_e = m if n_e is None else n_e
        pmf = np.zeros(n_e + 1)
        pmf[m] = 1.0
        return cls(n_phi, n_e, delta_e, pmf)

    @property
    def phase_indices(self) -> np.ndarray:
        return np.arange(-(self.n_phi - 1), self.n_phi + 1)

    @property
    def phases(self) -> np.ndarray:
        return math.pi * self.phase_indices / self.n_phi

    def outcome_energies(self, key) -> EnergyPair:
        n, k = key
        return classical_mz_output(n * self.delta_e, math.pi * k / self.n_phi)


def ideal_classical_joint(model: IdealClassicalMz):
    """Joint pmf of (phase index, output energy pair).

    Returns ``(joint, keys)`` where ``joint[i, j]`` is the probability of the
    i-th phase in ``model.phases`` together with outcome ``keys[j]``.  An
    outcome key is ``(n, |k|)``: for n > 0 the pair of output energies fixes
    n through their sum and |k| through sin^2, which is injective on
    ``0 <= |k| <= n_phi``; every n = 0 outcome is the single key ``(0, 0)``.
    Keys are exact integers, so colliding outcomes merge without any
    floating-point comparison.
    """
    ks = model.phase_indices
    p_phase = 1.0 / ks.size
    cells: dict[tuple[int, int], np.ndarray] = {}
    for n, pa in enumerate(model.input_pmf):
        if pa == 0:
            continue
        for i, k in enumerate(ks):
            key = (n, abs(int(k))) if n > 0 else (0, 0)
            col = cells.setdefault(key, np.zeros(ks.size))
            col[i] += pa * p_phase
    keys = sorted(cells)
    joint = np.stack([cells[k] for k in keys], axis=1)
    return joint, keys


def ideal_classical_fidelity(model: IdealClassicalMz) -> float:
    joint, _ = ideal_classical_joint(model)
    return mutual_information_finite(joint)


# ---------------------------------------------------------------------------
# classical interferometer with Gaussian energy noise


@dataclass(frozen=True)
class NoisyClassicalMz:
    e_in: float
    delta: float

    def __post_init__(self):
        if not (math.isfinite(self.e_in) and self.e_in >= 0):
            raise ValueError(f"e_in must be finite and >= 0, got {self.e_in}")
        if not (math.isfinite(self.delta) and self.delta > 0):
            raise ValueError(f"delta must be finite and > 0, got {self.delta}")

    def means(self, phi):
        s = np.sin(0.5 * np.asarray(phi, dtype=float)) ** 2
        return self.e_in * s, self.e_in * (1.0 - s)


def _noisy_logpdf(model: NoisyClassicalMz, y, phi):
    mc, md = model.means(np.atleast_1d(phi))
    y = np.atleast_2d(y)
    with np.errstate(over="ignore"):  # far outliers: d2 = inf, density 0
        d2 = (y[None, :, 0] - mc[:, None]) ** 2 + (y[None, :, 1] - md[:, None]) ** 2
    return -d2 / (2.0 * model.delta**2) - math.log(TWO_PI * model.delta**2)


def noisy_classical_pdf(model: NoisyClassicalMz, phi, e_c, e_d):
    """p(E_c, E_d | phi, E, Delta): independent normals about the noiseless outputs."""
    mc, md = model.means(phi)
    d2 = (np.asarray(e_c) - mc) ** 2 + (np.asarray(e_d) - md) ** 2
    return np.exp(-d2 / (2.0 * model.delta**2)) / (TWO_PI * model.delta**2)


def noisy_outcome_rule(model: NoisyClassicalMz, padding: float = 8.0, panel_width: float = 1.5):
    """Product K15/G7 panel rule over both output energies.

    The reachable means are found by sweeping phase; the box extends
    ``padding`` noise widths beyond them on every side.  Panels are
    ``panel_width`` noise widths wide.
    """
    mc, md = model.means(np.linspace(-math.pi, math.pi, 257))
    lo = min(mc.min(), md.min()) - padding * model.delta
    hi = max(mc.max(), md.max()) + padding * model.delta
    x, wk, wg = panel_rule(lo, hi, panel_width * model.delta)
    xc, xd = np.meshgrid(x, x, indexing="ij")
    nodes = np.stack([xc.ravel(), xd.ravel()], axis=1)
    return OutcomeRule(nodes, np.outer(wk, wk).ravel(), np.outer(wg, wg).ravel())


def noisy_classical_channel(model: NoisyClassicalMz, **rule_kwargs) -> ContinuousChannel:
    def sampler(phi, rng):
        mc, md = model.means(phi)
        noise = rng.standard_normal((np.size(phi), 2)) * model.delta
        return np.stack([mc, md], axis=1) + noise

    return ContinuousChannel(
        logpdf=lambda y, phi: _noisy_logpdf(model, y, phi),
        outcome_rule=lambda: noisy_outcome_rule(model, **rule_kwargs),
        params={"e_in": model.e_in, "delta": model.delta},
        sampler=sampler,
    )


def noisy_classical_fidelity(
    e_in: float,
    delta: float,
    prior: PhasePrior | None = None,
    tol: Tolerance = DEFAULT_TOL,
    **rule_kwargs,
) -> FidelityEstimate:
    model = NoisyClassicalMz(e_in, delta)
    prior = prior if prior is not None else PhasePrior.uniform()
    return fidelity_continuous_outcomes(noisy_classical_channel(model, **rule_kwargs), prior, tol)


# ---------------------------------------------------------------------------
# quantum vs classical sweep


DEFAULT_ETA_GRID = tuple(0.25 * j for j in range(21))


@dataclass(frozen=True)
class SweepRow:
    eta: float
    h_coh: float
    h_class: float
    h_coh_err: float
    h_class_err: float
    error: str | None = None


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw:
        n = int(raw)
        if n < 1:
            raise ValueError(f"{WORKERS_ENV} must be >= 1, got {raw!r}")
        return n
    return os.cpu_count() or 1


def sweep_row(eta: float, tol: Tolerance = DEFAULT_TOL) -> SweepRow:
    """One row of the comparison: classical input energy eta, noise width sqrt(eta)."""
    try:
        q = quantum_mz_fidelity(eta, tol=tol)
        if eta == 0:
            # no input energy: the classical outputs carry no phase dependence
            c_bits, c_err = 0.0, 0.0
        else:
            c = noisy_classical_fidelity(eta, math.sqrt(eta), tol=tol)
            c_bits, c_err = c.bits, c.numeric_error
        return SweepRow(eta, q.bits, c_bits, q.numeric_error, c_err)
    except (ArithmeticError, ValueError) as exc:
        log.warning("sweep row eta=%r failed: %s", eta, exc)
        nan = float("nan")
        return SweepRow(eta, nan, nan, nan, nan, str(exc))


def fig1_sweep(
    eta_grid: Sequence[float] = DEFAULT_ETA_GRID,
    tol: Tolerance = DEFAULT_TOL,
    workers: int | None = None,
) -> list[SweepRow]:
    """Quantum and classical fidelity for every eta, rows in input order."""
    etas = [float(e) for e in eta_grid]
    for e in etas:
        if not (math.isfinite(e) and e >= 0):
            raise ValueError(f"eta values must be finite and >= 0, got {e}")
    workers = default_workers() if workers is None else workers
    if workers <= 1 or len(etas) <= 1:
        return [sweep_row(e, tol) for e in etas]
    with ProcessPoolExecutor(max_workers=min(workers, len(etas))) as pool:
        return list(pool.map(sweep_row, etas, [tol] * len(etas)))
