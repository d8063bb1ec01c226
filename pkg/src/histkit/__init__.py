"""histkit: consistent histories and reduced dynamics at desk scale."""
from .linalg import (
    CompositeSpace,
    DimensionError,
    HistkitError,
    Spectrum,
    embed,
    hermitian_spectrum,
    kron,
    partial_trace,
    random_density,
    random_unitary,
    unitary_exp,
    von_neumann_entropy,
)
from .states import (
    DensityOperator,
    ProjectorFamily,
    ReferenceEnvState,
    coarse_grain_family,
    family_from_basis,
    pure_density,
    reference_env_state,
    validate_family,
)
from .models import (
    HamiltonianModel,
    PrescribedModel,
    PropagatorSet,
    Schedule,
    central_spin_dephasing,
    heisenberg_projector,
    perfect_recorder,
    propagators,
    third_party_two_slit,
    truncated_oscillator_bath,
)
from .histories import (
    ClassOperator,
    DecoherenceMatrix,
    HistorySetSpec,
    check_decoherence,
    class_operator,
    coarse_grain_histories,
    decoherence_matrix,
    history_probability,
    interference_term,
    kolmogorov_report,
)
from .open_systems import (
    ReducedMap,
    Superoperator,
    jss_K,
    jss_L,
    jss_apply,
    paz_zurek_test,
    pointer_ranking,
    redundancy_profile,
    reduced_evolve,
    reduced_map,
    semigroup_deviation,
    subsystem_D_exact,
    subsystem_D_factored,
)

__version__ = "0.1.0"

__all__ = [
    "CompositeSpace",
    "DimensionError",
    "HistkitError",
    "Spectrum",
    "embed",
    "hermitian_spectrum",
    "kron",
    "partial_trace",
    "random_density",
    "random_unitary",
    "unitary_exp",
    "von_neumann_entropy",
    "DensityOperator",
    "ProjectorFamily",
    "ReferenceEnvState",
    "coarse_grain_family",
    "family_from_basis",
    "pure_density",
    "reference_env_state",
    "validate_family",
    "HamiltonianModel",
    "PrescribedModel",
    "PropagatorSet",
    "Schedule",
    "central_spin_dephasing",
    "heisenberg_projector",
    "perfect_recorder",
    "propagators",
    "third_party_two_slit",
    "truncated_oscillator_bath",
    "ClassOperator",
    "DecoherenceMatrix",
    "HistorySetSpec",
    "check_decoherence",
    "class_operator",
    "coarse_grain_histories",
    "decoherence_matrix",
    "history_probability",
    "interference_term",
    "kolmogorov_report",
    "ReducedMap",
    "Superoperator",
    "jss_K",
    "jss_L",
    "jss_apply",
    "paz_zurek_test",
    "pointer_ranking",
    "redundancy_profile",
    "reduced_evolve",
    "reduced_map",
    "semigroup_deviation",
    "subsystem_D_exact",
    "subsystem_D_factored",
]
