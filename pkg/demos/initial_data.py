"""
Why the discrete initial data matter
====================================

Same smooth solution, perturbed (non-structured) meshes, two ways of
discretizing u0, v0 and f:

* nodal   - interpolate at the vertices
* projection - H1 projection for u0 and v0, L2 projection for f

The numerical solution is equally good in both cases. The estimators are
not: the time estimator differentiates the data twice in time, and with
nodal data the discrete Laplacian of u0 is not controlled, so N0 (and with
it eta_T) blows up under refinement.

    python demos/initial_data.py
"""
from newmark_apost import CaseSpec, MeshSpec, TauLaw, prepare, run_experiment

print(f"{'n':>4} {'mode':>10} {'e':>9} {'eta_T':>9} {'eta_S':>9} {'N0':>10}")
for n in (20, 40, 80):
    mesh = MeshSpec("perturbed", n=n, amplitude=0.2, seed=7)
    prepared = None
    for mode in ("nodal", "projection"):
        spec = CaseSpec("a", mesh, TauLaw("uniform", tau=0.025), mode)
        prepared = prepared or prepare(spec)
        r = run_experiment(spec, prepared)
        print(f"{n:4d} {mode:>10} {r.true_error:9.4g} {r.eta_T_total:9.4g} {r.eta_S:9.4g} "
              f"{r.N0:10.4g}")

# Expect e to agree between the two modes to a few percent, N0 to grow by
# about 4x per refinement with nodal data, and N0 to stay near 100 with
# projections.
