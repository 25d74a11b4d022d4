import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from mzfidelity.info import (
    ChannelError,
    ContinuousChannel,
    DiscreteChannel,
    FidelityError,
    ImpossibleObservation,
    OutcomeRule,
    PhasePrior,
    estimate_phase,
    fidelity_continuous_outcomes,
    fidelity_discrete_outcomes,
    mutual_information_finite,
    optimize_fidelity,
    phase_grid,
    posterior,
    recursive_update,
)
from mzfidelity.interferometers import (
    NoisyClassicalMz,
    noisy_classical_channel,
    quantum_mz_channel,
    quantum_mz_fidelity,
)
from mzfidelity.numerics import Tolerance, panel_rule


def binary_entropy(p):
    return -p * math.log2(p) - (1 - p) * math.log2(1 - p)


def sin2_channel():
    def pmf(phi):
        s = np.sin(phi / 2) ** 2
        return np.stack([1 - s, s], axis=1)

    return DiscreteChannel((0, 1), pmf)


def constant_channel(p=(0.2, 0.5, 0.3)):
    p = np.asarray(p)
    return DiscreteChannel(tuple(range(p.size)), lambda phi: np.tile(p, (phi.size, 1)))


def sign_channel():
    # perfect two-outcome channel: outcome tells which half-circle phi lies in
    return DiscreteChannel((0, 1), lambda phi: np.stack([phi <= 0, phi > 0], axis=1).astype(float))


# --- finite mutual information -----------------------------------------------

def test_mi_identity_channel_one_bit():
    assert mutual_information_finite(np.eye(2) / 2) == 1.0


def test_mi_independent_zero():
    assert mutual_information_finite(np.outer([0.3, 0.7], [0.1, 0.6, 0.3])) == pytest.approx(0.0, abs=1e-15)


def test_mi_binary_symmetric_channel():
    e = 0.11
    joint = 0.5 * np.array([[1 - e, e], [e, 1 - e]])
    assert abs(mutual_information_finite(joint) - (1 - binary_entropy(e))) < 1e-10
    assert mutual_information_finite(joint) == pytest.approx(0.5001, abs=1e-4)


def test_mi_rejects_unnormalised_with_deficit():
    with pytest.raises(ValueError, match="deficit"):
        mutual_information_finite(np.full((2, 2), 0.2))


def test_mi_rejects_negative():
    with pytest.raises(ValueError):
        mutual_information_finite(np.array([[0.6, -0.1], [0.25, 0.25]]))


joints = hnp.arrays(float, hnp.array_shapes(min_dims=2, max_dims=2, min_side=1, max_side=7), elements=st.floats(0, 1))


@settings(max_examples=200, deadline=None)
@given(joints)
def test_mi_symmetric_and_bounded(raw):
    if raw.sum() == 0:
        raw = np.ones_like(raw)
    joint = raw / math.fsum(raw.ravel())
    if abs(math.fsum(joint.ravel()) - 1) > 1e-12:
        return
    mi = mutual_information_finite(joint)
    assert mi == mutual_information_finite(joint.T)
    assert 0.0 <= mi <= math.log2(min(joint.shape)) + 1e-12


# --- priors ------------------------------------------------------------------

def test_phase_grid_spans_half_open_circle():
    g = phase_grid(8)
    assert g[-1] == math.pi and g[0] > -math.pi and g.size == 8


def test_prior_validation():
    with pytest.raises(ValueError):
        PhasePrior(np.array([0.0, 0.0, 1.0]))
    with pytest.raises(ValueError):
        PhasePrior(phase_grid(16), np.ones(16))
    with pytest.raises(ValueError):
        PhasePrior(np.array([-4.0, 0.0, 1.0]))


def test_prior_from_unnormalised_integrates_to_one():
    g = phase_grid(256)
    p = PhasePrior.from_unnormalized(g, np.exp(np.cos(g)))
    assert float(np.dot(p.weights, p.density)) == pytest.approx(1.0, abs=1e-12)


# --- fidelity, discrete outcomes ----------------------------------------------

def test_phase_independent_discrete_channel_is_zero():
    r = fidelity_discrete_outcomes(constant_channel(), PhasePrior.uniform())
    assert abs(r.bits) <= 1e-12 + r.numeric_error


def _grid_mi(channel, n):
    g = phase_grid(n)
    return mutual_information_finite(channel.probabilities(g) / n)


def test_sin2_channel_against_dense_grid_oracle():
    r = fidelity_discrete_outcomes(sin2_channel(), PhasePrior.uniform())
    oracle = _grid_mi(sin2_channel(), 4096)
    assert abs(r.bits - oracle) < 1e-4
    # the grid rule is spectrally accurate here, so a finer grid pins the value tightly
    assert abs(r.bits - _grid_mi(sin2_channel(), 65536)) < 1e-8


def test_discretisation_consistency_smooth_channel():
    def pmf(phi):
        a = np.exp(np.cos(phi - 0.4))
        b = 1 + np.sin(2 * phi) ** 2
        c = np.full_like(phi, 1.5)
        t = np.stack([a, b, c], axis=1)
        return t / t.sum(axis=1, keepdims=True)

    ch = DiscreteChannel(("a", "b", "c"), pmf)
    r = fidelity_discrete_outcomes(ch, PhasePrior.uniform())
    assert abs(r.bits - _grid_mi(ch, 2048)) < 1e-3


def test_route_equivalence_quantum_eta_one():
    generic = fidelity_discrete_outcomes(quantum_mz_channel(1.0), PhasePrior.uniform())
    direct = quantum_mz_fidelity(1.0)
    assert abs(generic.bits - direct.bits) <= generic.numeric_error + direct.numeric_error


def test_truncation_tail_above_tolerance_fails():
    ch = quantum_mz_channel(1.0, tail_mass=1e-3)
    with pytest.raises(FidelityError):
        fidelity_discrete_outcomes(ch, PhasePrior.uniform(), Tolerance(rel=1e-8, abs=1e-12))


def test_concentrated_prior_removes_all_information():
    r = fidelity_discrete_outcomes(sign_channel(), PhasePrior.concentrated(0.7))
    assert abs(r.bits) < 1e-6


def test_perfect_sign_channel_on_uniform_grid_prior_is_one_bit():
    prior = PhasePrior.from_unnormalized(phase_grid(512), np.ones(512))
    assert fidelity_discrete_outcomes(sign_channel(), prior).bits == pytest.approx(1.0, abs=1e-12)


# --- fidelity, continuous outcomes --------------------------------------------

def _phase_free_gaussian_channel():
    def logpdf(y, phi):
        lp = -0.5 * y[:, 0] ** 2 - 0.5 * math.log(2 * math.pi)
        return np.broadcast_to(lp, (np.size(phi), y.shape[0]))

    def rule():
        x, wk, wg = panel_rule(-9.0, 9.0, 1.5)
        return OutcomeRule(x[:, None], wk, wg)

    return ContinuousChannel(logpdf, rule)


def test_phase_independent_continuous_channel_is_zero():
    r = fidelity_continuous_outcomes(_phase_free_gaussian_channel(), PhasePrior.uniform())
    assert abs(r.bits) <= 1e-12 + r.numeric_error


def test_continuous_matches_noisy_classical_route():
    from mzfidelity.interferometers import noisy_classical_fidelity

    ch = noisy_classical_channel(NoisyClassicalMz(1.0, 1.0))
    a = fidelity_continuous_outcomes(ch, PhasePrior.uniform())
    b = noisy_classical_fidelity(1.0, 1.0)
    assert abs(a.bits - b.bits) <= a.numeric_error + b.numeric_error


def test_continuous_fidelity_nonincreasing_in_noise():
    vals = [fidelity_continuous_outcomes(noisy_classical_channel(NoisyClassicalMz(1.0, d)), PhasePrior.uniform()).bits
            for d in (0.5, 1.0, 2.0, 4.0)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


# --- Bayes -------------------------------------------------------------------

def test_flat_likelihood_gives_uniform_posterior():
    prior = PhasePrior.uniform(512)
    post = posterior(constant_channel(), prior, 1)
    assert np.allclose(post.density, 1 / (2 * math.pi), atol=1e-12)


def test_posterior_two_modes_for_balanced_energies():
    ch = noisy_classical_channel(NoisyClassicalMz(1.0, 0.01))
    prior = PhasePrior.uniform(2048)
    est = estimate_phase(posterior(ch, prior, (0.5, 0.5)))
    step = 2 * math.pi / 2048
    assert len(est.modes) == 2
    assert abs(est.modes[0] + math.pi / 2) <= step and abs(est.modes[1] - math.pi / 2) <= step


def test_impossible_observation():
    with pytest.raises(ImpossibleObservation):
        posterior(sign_channel(), PhasePrior.concentrated(1.0), 0)


def test_unknown_outcome_rejected():
    with pytest.raises(ChannelError):
        posterior(sin2_channel(), PhasePrior.uniform(64), 7)


@settings(max_examples=40, deadline=None)
@given(st.floats(-2.0, 3.0), st.floats(-2.0, 3.0), st.floats(0.05, 2.0), st.sampled_from([64, 257, 1024]))
def test_posterior_normalised(ec, ed, delta, n):
    ch = noisy_classical_channel(NoisyClassicalMz(1.0, delta))
    post = posterior(ch, PhasePrior.uniform(n), (ec, ed))
    assert abs(float(np.dot(post.weights, post.density)) - 1.0) < 1e-9
    assert np.all(post.density >= 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 1), st.integers(0, 3), st.integers(0, 3))
def test_posterior_normalised_discrete(y, nc, nd):
    for ch, obs in ((sin2_channel(), y), (quantum_mz_channel(2.0), (nc, nd))):
        post = posterior(ch, PhasePrior.uniform(300), obs)
        assert abs(float(np.dot(post.weights, post.density)) - 1) < 1e-9


def test_recursive_update_empty_returns_prior():
    prior = PhasePrior.uniform(128)
    assert recursive_update(prior, sin2_channel(), []) is prior


def _batch_posterior(channel, prior, observations):
    loglik = sum(channel.log_likelihood(o, prior.grid) for o in observations)
    return PhasePrior.from_unnormalized(prior.grid, np.exp(loglik - loglik.max()) * prior.grid_density())


def test_recursion_equals_product_likelihood(rng):
    ch = noisy_classical_channel(NoisyClassicalMz(2.0, 0.7))
    prior = PhasePrior.uniform(1024)
    obs = [tuple(v) for v in rng.normal(1.0, 0.8, size=(5, 2))]
    seq = recursive_update(prior, ch, obs)
    batch = _batch_posterior(ch, prior, obs)
    assert np.max(np.abs(seq.density - batch.density)) < 1e-10
    perm = recursive_update(prior, ch, [obs[i] for i in (3, 0, 4, 2, 1)])
    assert np.max(np.abs(perm.density - seq.density)) < 1e-10


# --- phase estimation --------------------------------------------------------

def test_estimate_narrow_peak():
    g = phase_grid(2048)
    post = PhasePrior.from_unnormalized(g, np.exp(-((g - 0.7) ** 2) / (2 * 0.02**2)))
    est = estimate_phase(post)
    assert est.circular_mean == pytest.approx(0.7, abs=1e-6)
    assert len(est.modes) == 1 and abs(est.modes[0] - 0.7) < 2 * math.pi / 2048


def test_estimate_uniform_undefined_mean():
    est = estimate_phase(PhasePrior.from_unnormalized(phase_grid(512), np.ones(512)))
    assert not est.mean_defined
    assert est.circular_dispersion == pytest.approx(1.0, abs=1e-9)


def test_estimate_two_peak_mixture():
    g = phase_grid(2048)
    psi = 1.1
    bump = lambda c: np.exp(-np.angle(np.exp(1j * (g - c))) ** 2 / (2 * 0.05**2))  # noqa: E731
    est = estimate_phase(PhasePrior.from_unnormalized(g, bump(psi) + bump(-psi)))
    step = 2 * math.pi / 2048
    assert len(est.modes) == 2
    assert abs(est.modes[0] + psi) <= step and abs(est.modes[1] - psi) <= step
    assert est.circular_mean == pytest.approx(0.0, abs=1e-9)
    assert est.circular_dispersion > 0.5


def test_estimate_wraps_across_pi():
    g = phase_grid(1024)
    post = PhasePrior.from_unnormalized(g, np.exp(-np.angle(np.exp(1j * (g - math.pi))) ** 2 / 0.01))
    est = estimate_phase(post)
    assert abs(abs(est.circular_mean) - math.pi) < 1e-6
    assert len(est.modes) == 1


# --- optimisation ------------------------------------------------------------

def test_optimize_quantum_family():
    res = optimize_fidelity(lambda eta: quantum_mz_channel(eta), [0.5, 1, 2, 4], PhasePrior.uniform())
    assert res.best_xi == 4
    assert [row[0] for row in res.table] == [0.5, 1, 2, 4]


def test_optimize_tie_breaks_to_smallest():
    res = optimize_fidelity(lambda xi: constant_channel(), [3.0, 1.0, 2.0], PhasePrior.uniform())
    assert res.best_xi == 1.0


def test_optimize_noisy_classical_family():
    res = optimize_fidelity(lambda d: noisy_classical_channel(NoisyClassicalMz(1.0, d)), [0.5, 1, 2], PhasePrior.uniform())
    assert res.best_xi == 0.5


def test_optimize_records_failures():
    def family(xi):
        if xi == 2:
            raise ValueError("bad candidate")
        return quantum_mz_channel(xi)

    res = optimize_fidelity(family, [1, 2, 3], PhasePrior.uniform())
    assert res.best_xi == 3
    assert res.table[1][1] is None and "bad candidate" in res.table[1][2]


def test_optimize_all_failed_and_empty():
    with pytest.raises(FidelityError):
        optimize_fidelity(lambda xi: quantum_mz_channel(-1.0), [1, 2], PhasePrior.uniform())
    with pytest.raises(ValueError):
        optimize_fidelity(lambda xi: None, [], PhasePrior.uniform())
