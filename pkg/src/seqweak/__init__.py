"""Sequential weak measurements: closed-form correlations, Monte Carlo
trajectories and phase-space tomography."""

__version__ = "0.1.0"

from .analytic import (
    QuasiDistribution,
    SequentialWeakValue,
    discard_statistics,
    finite_a_product_moment,
    interchangeability_check,
    nested_anticommutator,
    partition_sum_moment,
    product_moment,
    product_moment_postselected,
    quasi_distribution,
    sequential_weak_value,
    spin_closed_form,
    subset_product_moment,
)
from .errors import (
    ContractViolation,
    DegeneratePostselection,
    EstimatorUnavailable,
    OutcomeUnderflow,
    TruncationError,
    UndefinedWeakValue,
)
from .montecarlo import (
    MomentEstimate,
    TrajectoryRecord,
    estimate_product,
    run_postselected,
    run_sequence,
    sample_measurement,
    simulate,
)
from .qcore import (
    MeasurementSpec,
    Observable,
    PostSelection,
    QuantumState,
    kraus_update,
    pauli_along,
)
from .wigner import (
    canonical_pair,
    tomography_second_moments,
    weyl_moment,
    wigner_moment,
    wigner_table,
)
