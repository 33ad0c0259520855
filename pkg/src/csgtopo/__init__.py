"""Topology optimization over polygonal primitives combined through a
differentiable Boolean operation tree: geometry projection, tree evaluation,
plane-stress FEA with SIMP, analytic sensitivities, and an MMA driver."""

from .csg import (BooleanWeights, CsgTree, OPERATOR_NAMES, PrunedTree, combine,
                  combine_grad_operand, combine_grad_weights, evaluate_tree,
                  prune, snap_to_onehot, softmax_encode)
from .fea import (BoundaryConditions, Material, Mesh, SingularSystemError,
                  SolveResult, analyze, assemble, element_stiffness_template,
                  simp_modulus, solve, volume_constraint)
from .geometry import (DensityField, PolygonParams, ProjectionConfig, SampleGrid,
                       base_angles, halfspace_sdf, polygon_sdf, project_density,
                       rasterize_primitive, threshold)
from .mma import MmaConfig, MmaState, kkt_residual, mma_update
from .problem import (BENCHMARKS, ConfigError, Model, OptimizeResult, ProblemSpec,
                      RunHistory, SolverAbort, builtin_problem, denormalize,
                      initialize, normalize_params, optimize)
from .sensitivity import ForwardState, fd_check, grad_compliance, grad_volume

__version__ = "0.1.0"
