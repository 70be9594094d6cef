"""Cached wave runs shared by the invariant and acceptance tests.

Only the reports are cached; trajectories on the finest meshes take gigabytes
and are dropped as soon as each run is evaluated.
"""
from functools import lru_cache

from newmark_apost.estimators import EstimatorConfig
from newmark_apost.experiments import CaseSpec, MeshSpec, TauLaw, run_experiment

# time residual form the reference wave values were computed with
TABLE_NORM = "sum"


@lru_cache(maxsize=None)
def wave(case, mesh, tau, mode="nodal", time_norm=TABLE_NORM):
    spec = CaseSpec(case, MeshSpec.parse(mesh), TauLaw.parse(tau), mode,
                    EstimatorConfig(time_norm=time_norm))
    return run_experiment(spec)
