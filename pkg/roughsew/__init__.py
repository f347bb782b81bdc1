"""
roughsew
========
Rough integration in one and two parameters: signature lifts, controlled
and jointly controlled paths, the sewing integrator, grid-sum double
integrals with their maximal inequality, rough Fubini checks and the
signature kernel.
"""

__version__ = "0.3.0"
__author__ = "The roughsew developers"

from .controlled_path import (
    ControlledPath,
    constant,
    defect_identity_check,
    delta_defect,
    from_function,
    local_approx,
    remainder,
    tautological,
)
from .controls import Control, mixed_variation, omega_norm, p_variation, pvar_control
from .errors import (
    ConvergenceError,
    GridError,
    IncompatibleAlphabetError,
    InvariantViolation,
    LevelCapError,
    PathFileError,
    RoughSewError,
    TruncationError,
    UnboundedNormError,
)
from .joint import (
    GridPartition,
    JointPath,
    check_maximal_inequality,
    fubini_check,
    gamma_defect,
    iterated_integrals,
    joint_integral,
    maximal_quantities,
    omega_local,
    remove_point,
    stability_distance,
    tabulated_joint,
    theta_defect,
)
from .roughpath import RoughPath, eval_level, lift, read_path_csv, signature
from .sewing import rough_integral, sew, young_remove_point, zeta
from .sigkernel import (
    as_joint_path,
    goursat_oracle,
    kernel_derivative,
    kernel_instance,
    kernel_value,
)
from .tensor_algebra import TensorSequence, level_inner, level_norm, segment_exp, tensor_mul
