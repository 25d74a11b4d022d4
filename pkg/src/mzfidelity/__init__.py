"""Information-theoretic fidelity of measurement apparatuses, with Mach-Zehnder models."""

from .numerics import Tolerance, IntegrationResult, TruncationBudget, IntegrationError
from .info import (
    PhasePrior,
    PosteriorDensity,
    DiscreteChannel,
    ContinuousChannel,
    FidelityEstimate,
    mutual_information_finite,
    fidelity_discrete_outcomes,
    fidelity_continuous_outcomes,
    posterior,
    recursive_update,
    estimate_phase,
    optimize_fidelity,
)
from .interferometers import (
    quantum_mz_fidelity,
    noisy_classical_fidelity,
    ideal_classical_fidelity,
    fig1_sweep,
)

__version__ = "0.1.0"

__all__ = [
    "Tolerance",
    "IntegrationResult",
    "TruncationBudget",
    "IntegrationError",
    "PhasePrior",
    "PosteriorDensity",
    "DiscreteChannel",
    "ContinuousChannel",
    "FidelityEstimate",
    "mutual_information_finite",
    "fidelity_discrete_outcomes",
    "fidelity_continuous_outcomes",
    "posterior",
    "recursive_update",
    "estimate_phase",
    "optimize_fidelity",
    "quantum_mz_fidelity",
    "noisy_classical_fidelity",
    "ideal_classical_fidelity",
    "fig1_sweep",
]
