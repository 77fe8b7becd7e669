"""Desk-scale simulator for state-independent alignment of
entanglement-based QKD.

Models the two-qubit source, unknown unitary channels, photon detection
statistics and the visibility-feedback alignment procedure, together
with the analytic model that predicts it.
"""

from .su2 import (
    SU2Params,
    NotUnitary,
    su2_from_params,
    params_from_unitary,
    haar_random_unitary,
    bloch_vector_of,
    sphere_angle,
    phase_equal,
)
from .model import (
    SINGLET,
    BasisPair,
    BASIS_PAIRS,
    SourceModel,
    ChannelStack,
    NotMaximallyEntangled,
    make_source,
    effective_state,
    expectation_zz,
    concurrence,
    singlet_decompose,
    u_delta,
    gamma_of,
    mub_overlap_matrix,
    predicted_visibility,
    solve_aligned_channels,
    cross_corr_residual,
)
from .photons import (
    PairEvent,
    CountsQuad,
    VisibilityEstimate,
    DriftModel,
    sample_pair_events,
    sample_counts,
    accumulate_counts,
    estimate_visibility,
    qber_from_visibility,
    visibility_sigma,
    apply_drift,
    error_curve,
)
from .align import (
    ControllerHandle,
    AlignmentTargets,
    OptimizerConfig,
    AlignmentTrace,
    BudgetExhausted,
    evaluate_objective,
    optimize_controller,
    run_alignment,
    stabilize,
    witness_check,
)
from .sifting import (
    SiftedKey,
    QberReport,
    sift_events,
    disclose_fraction,
    qber_report_merge,
)

__version__ = "0.1.0"
