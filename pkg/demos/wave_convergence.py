"""
Wave equation on the unit square, smooth solution
=================================================

u = cos(pi t) sin(pi x) sin(pi y) on structured meshes with tau = sqrt(h).
The error should halve with h (it is O(tau^2 + h) and tau^2 = h here), and
the estimators follow it so the effectivity index stays roughly constant.

The time estimator can combine its two residual norms as a root of squares
(the default) or as a plain sum. Both are shown; the sum is the larger and
looser of the two.

    python demos/wave_convergence.py [finest n, default 160]
"""
import sys

from newmark_apost import CaseSpec, EstimatorConfig, MeshSpec, TauLaw, prepare, run_experiment

finest = int(sys.argv[1]) if len(sys.argv) > 1 else 160
levels = [n for n in (20, 40, 80, 160, 320, 640) if n <= finest]

print(f"{'n':>5} {'N':>4} {'e':>9} {'eta_S':>9} {'eta_T':>9} {'eta_T sum':>10} {'ei':>7} {'N0':>8}")
previous = None
for n in levels:
    spec = CaseSpec("a", MeshSpec("structured", n=n), TauLaw("sqrt-h"))
    prepared = prepare(spec)
    r = run_experiment(spec, prepared)
    # the sum form needs only a second estimate on the same mesh
    summed = run_experiment(
        CaseSpec("a", spec.mesh, spec.tau_law, config=EstimatorConfig(time_norm="sum")),
        prepared)
    print(f"{n:5d} {prepared.grid.N:4d} {r.true_error:9.4g} {r.eta_S:9.4g} {r.eta_T_total:9.4g} "
          f"{summed.eta_T_total:10.4g} {r.effectivity:7.2f} {r.N0:8.2f}", end="")
    if previous is not None:
        print(f"   e ratio {previous / r.true_error:.2f}", end="")
    print()
    previous = r.true_error

# N0 stays near 98 on every level: with structured meshes even nodal
# interpolation of the data keeps the high discrete time derivatives bounded.
