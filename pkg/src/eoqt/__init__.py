"""Entanglement-optimised quantum trajectories for open many-body systems."""

from .dense import (
    DenseDensityMatrix,
    DenseState,
    entanglement_of_formation_2q,
    integrate_me,
    lindblad_rhs,
    toy_example_decompositions,
)
from .ensemble import (
    EnsembleStats,
    Eoqt,
    FixedHomodyne,
    FixedNumber,
    Observable,
    RecordSpec,
    TrajectoryRecord,
    run_ensemble,
    run_trajectory,
    variance_report,
)
from .models import (
    ModelSpec,
    bell_eaee_homodyne,
    bell_eaee_number,
    bell_entanglement_of_formation,
    bell_model,
    build_model,
    eit_model,
    ising_model,
    rbc_model,
    sigma_entropy,
)
from .mps import (
    Cut,
    MpsState,
    apply_single_site,
    apply_two_site_gate,
    canonicalize,
    entanglement_entropy,
    from_state_vector,
    load_mps,
    product_state,
    save_mps,
    schmidt_operator_block,
    to_dense,
)
from .propagators import (
    Homodyne,
    JumpChannel,
    Number,
    StochasticDraw,
    dense_trajectory_step,
    homodyne_step,
    number_step,
    rbc_exponential_form_step,
)
from .rates import (
    GeneralMeasurementParams,
    RateInputs,
    choose_propagator,
    optimal_phase,
    rate_general,
    rate_homodyne,
    rate_number,
)

__version__ = "0.1.0"
