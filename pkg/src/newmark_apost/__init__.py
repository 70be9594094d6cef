"""P1 finite elements, Newmark time stepping and a posteriori error estimators
for the linear wave equation."""
from .mesh import (DanglingNodeError, InvertedTriangleError, Mesh, MeshError, MeshFormatError,
                   MeshValidationError, NonConformingMeshError, TimeGrid,
                   alternating_timegrid_with_steps, generate_alternating_timegrid,
                   generate_structured, perturb_mesh, read_mesh, write_mesh)
from .fem import (DofMap, NotSPDError, P1Space, SparseOperator, apply_Ah, assemble_mass,
                  assemble_stiffness, h1_project, l2_project, nodal_interpolate, solve_spd)
from .newmark import NewmarkStepError, Trajectory, initial_step, newmark_step, run, velocity_update
from .estimators import (Diagnostics, EstimatorConfig, EstimatorReport, compute_zh, diagnostics,
                         divided_diff1, divided_diff2, estimate, eta_S1, eta_S2, eta_S3,
                         eta_T_sequence, eta_T_step, eta_T_total, eval_reconstruction,
                         jump_l2_sq)
from .ode import OdeProblem, OdeTrajectory, ode_error, ode_eta_T, ode_run
from .experiments import (AnalyticField, CaseSpec, ExperimentError, MeshSpec, TauLaw,
                          energy_error, evaluate, make_case, prepare, run_experiment, simulate)

__version__ = "0.1.0"
