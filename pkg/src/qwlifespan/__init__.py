"""Lifespan toolkit for two-dimensional quasilinear wave systems with multiple speeds."""

from .data import BumpField, DiskIndicator, InitialDataSet, ScaledField, SumField, ZeroField, field_from_spec
from .lifespan import (
    BoundExpired,
    CharCurveState,
    LifespanEstimate,
    RiccatiProblem,
    RiccatiResult,
    characteristic_curve,
    compute_H,
    model_riccati,
    predict_lifespan,
    riccati_blowup_time,
    riccati_bound,
    riccati_integrate,
)
from .nullform import (
    CoefficientSet,
    DomainError,
    NullReport,
    SpeedVector,
    check_null,
    check_smallness,
    check_structure,
    check_symmetry,
    eval_form,
    load_coefficients,
    q0_coefficients,
    save_coefficients,
)
from .radiation import (
    NumericalError,
    RadiationTable,
    build_radiation_table,
    radiation_derivatives,
    radiation_field,
    radon_transform,
)
from .simulator import (
    RunResult,
    SimConfig,
    SingularSystem,
    WaveState,
    estimate_lifespan,
    run,
    scaling_study,
    step,
)
from .waveops import (
    GridField,
    apply_gamma,
    apply_Z,
    duhamel,
    linear_solution,
    region_classify,
    weight_z,
    weighted_norm,
)

__version__ = "0.1.0"
