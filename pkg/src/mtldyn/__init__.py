"""Teacher-student softmax classification dynamics at desk scale.

Empirical full-batch SGD training, training-aligned singular-value ODEs, and
multitask-benefit measurement with analytic bounds, plus a batch CLI for
sweeps over relatedness / SNR / dataset-size grids.
"""

from .core import (
    DivergenceError,
    InvalidInputError,
    NumericalError,
    SvdTriple,
    argmax_labels,
    derive_seed,
    gaussian_matrix,
    rng_from_seed,
    softmax_columns,
    svd,
)
from .teachers import (
    Dataset,
    NoisyTeacher,
    Teacher,
    TeacherSpec,
    make_related_pair,
    make_teacher,
    perturb_teacher,
    relatedness,
    sample_dataset,
)
from .students import (
    LossEstimate,
    MultitaskStudent,
    Student,
    StudentArch,
    TrainConfig,
    Trajectory,
    composite_weight,
    forward,
    generalization_loss,
    init_multitask_student,
    init_student,
    layer_gradients,
    sgd_step,
    train,
    train_loss,
    train_multitask,
)
from .gmatrix import (
    GEstimate,
    GLookup,
    LookupRangeError,
    build_g_lookup,
    empirical_cross_cov,
    estimate_g,
    gauss_hermite_g,
    isotropic_approx,
    label_cross_cov,
    trace_g,
)
from .tadynamics import (
    TaTrajectory,
    attach_generalization,
    integrate_multitask,
    integrate_rank1,
    integrate_ta,
    rank1_rhs,
)
from .benefit import (
    BenefitReport,
    BoundInputs,
    Bounds,
    benefit_bounds_general,
    benefit_bounds_rank1,
    estimate_bound_inputs,
    multitask_benefit,
)

__version__ = "0.1.0"
