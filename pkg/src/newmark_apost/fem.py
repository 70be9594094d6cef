"""P1 finite elements on a :class:`~newmark_apost.mesh.Mesh`.

Dirichlet conditions are imposed by eliminating boundary nodes, so every
operator and coefficient vector here lives on the interior degrees of
freedom only. Discrete fields are plain 1-D arrays over those dofs (or 2-D
arrays with one field per column where noted).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Mesh

# symmetric 6-point rule, exact for polynomials of degree 4 (Dunavant)
_A1, _W1 = 0.445948490915964886318, 0.223381589678011465944
_A2, _W2 = 0.091576213509770743460, 0.109951743655321867389
QUAD_BARY = np.array([
    [_A1, _A1, 1 - 2 * _A1], [_A1, 1 - 2 * _A1, _A1], [1 - 2 * _A1, _A1, _A1],
    [_A2, _A2, 1 - 2 * _A2], [_A2, 1 - 2 * _A2, _A2], [1 - 2 * _A2, _A2, _A2],
])
QUAD_WEIGHTS = np.array([_W1, _W1, _W1, _W2, _W2, _W2])

SOLVE_RTOL = 1e-12


class NotSPDError(np.linalg.LinAlgError):
    """Symmetric factorization broke down: the operator is not positive definite."""


class DegenerateTriangleError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DofMap:
    n_nodes: int
    interior: np.ndarray
    node_to_dof: np.ndarray

    @classmethod
    def from_mesh(cls, mesh: Mesh) -> "DofMap":
        interior = np.flatnonzero(~mesh.boundary)
        node_to_dof = np.full(mesh.n_nodes, -1, dtype=np.int64)
        node_to_dof[interior] = np.arange(len(interior))
        interior.setflags(write=False)
        node_to_dof.setflags(write=False)
        return cls(mesh.n_nodes, interior, node_to_dof)

    @property
    def n_dofs(self) -> int:
        return len(self.interior)

    def extend(self, w):
        """Nodal values over all nodes, zero on the boundary."""
        w = np.asarray(w)
        full = np.zeros((self.n_nodes,) + w.shape[1:], dtype=w.dtype)
        full[self.interior] = w
        return full

    def restrict(self, full):
        return np.asarray(full)[self.interior]


class SPDFactor:
    """Sparse symmetric factorization with residual-checked solves.

    SuperLU runs with a symmetric fill-reducing ordering and no pivoting,
    so U's diagonal holds the pivots of an LDL^T factorization; a
    non-positive pivot means the matrix is not SPD. Solves are refined
    until the relative residual drops below ``SOLVE_RTOL``, falling back to
    preconditioned CG if refinement stalls.
    """

    def __init__(self, A):
        A = sp.csc_matrix(A)
        self.A = A
        self.n = A.shape[0]
        if self.n == 0:
            self._lu = None
            return
        try:
            lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                           options=dict(SymmetricMode=True))
        except RuntimeError as exc:
            raise NotSPDError(f"factorization failed: {exc}") from None
        pivots = lu.U.diagonal()
        if not (np.array_equal(lu.perm_r, lu.perm_c) and np.all(pivots > 0.0)):
            raise NotSPDError("symmetric factorization produced a non-positive pivot")
        self._lu = lu

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if self.n == 0:
            return np.zeros_like(b)
        bnorm = np.linalg.norm(b, axis=0)
        scale = np.where(bnorm > 0.0, bnorm, 1.0)
        x = self._lu.solve(b)
        for _ in range(4):
            r = b - self.A @ x
            if np.all(np.linalg.norm(r, axis=0) <= SOLVE_RTOL * scale):
                return x
            x = x + self._lu.solve(r)
        r = b - self.A @ x
        if np.all(np.linalg.norm(r, axis=0) <= SOLVE_RTOL * scale):
            return x
        return self._cg_fallback(b, x, scale)

    def _cg_fallback(self, b, x0, scale):
        cols = [b] if b.ndim == 1 else [b[:, j] for j in range(b.shape[1])]
        starts = [x0] if b.ndim == 1 else [x0[:, j] for j in range(b.shape[1])]
        prec = spla.LinearOperator(self.A.shape, matvec=self._lu.solve, dtype=float)
        out = []
        for bj, xj in zip(cols, starts):
            sol, info = spla.cg(self.A, bj, x0=xj, rtol=SOLVE_RTOL * 0.5, atol=0.0,
                                M=prec, maxiter=200)
            if info != 0:
                raise np.linalg.LinAlgError("CG fallback did not reach the solve tolerance")
            out.append(sol)
        return out[0] if b.ndim == 1 else np.column_stack(out)


@dataclass(frozen=True, eq=False)
class SparseOperator:
    """Exactly symmetric sparse matrix over the interior dofs."""

    matrix: sp.csr_matrix
    tag: str = "other"

    def __post_init__(self):
        if self.tag not in ("mass", "stiffness", "other"):
            raise ValueError(f"unknown operator tag {self.tag!r}")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def shape(self):
        return self.matrix.shape

    def __matmul__(self, w):
        return self.matrix @ w

    @cached_property
    def factor(self) -> SPDFactor:
        return SPDFactor(self.matrix)

    def solve(self, b):
        return self.factor.solve(b)

    def is_symmetric(self) -> bool:
        d = (self.matrix - self.matrix.T).tocoo()
        return d.nnz == 0 or not np.any(d.data)


def _symmetrized(rows, cols, vals, n):
    A = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    # (a + b) / 2 and (b + a) / 2 are the same float, so this is bit-exact
    A = ((A + A.T) * 0.5).tocsr()
    A.sort_indices()
    return A


def p1_gradients(mesh: Mesh):
    """Constant gradients of the three local hat functions, shape (M, 3, 2)."""
    p = mesh.nodes[mesh.triangles]
    two_area = ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))
    if np.any(two_area <= 0.0):
        raise DegenerateTriangleError("triangle with zero or negative area")
    g = np.empty((mesh.n_triangles, 3, 2))
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        g[:, i, 0] = (p[:, j, 1] - p[:, k, 1]) / two_area
        g[:, i, 1] = (p[:, k, 0] - p[:, j, 0]) / two_area
    return g


def _element_operator(mesh, dofs, local, full):
    """Scatter local (M, 3, 3) element matrices into the global system."""
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    vals = local.reshape(-1)
    if full:
        return _symmetrized(rows, cols, vals, mesh.n_nodes)
    r, c = dofs.node_to_dof[rows], dofs.node_to_dof[cols]
    keep = (r >= 0) & (c >= 0)
    return _symmetrized(r[keep], c[keep], vals[keep], dofs.n_dofs)


def assemble_stiffness(mesh: Mesh, dofs: DofMap, full: bool = False) -> SparseOperator:
    """K_ij = int grad phi_i . grad phi_j.

    With ``full=True`` the matrix is returned over all nodes (no boundary
    elimination), mainly for checks.
    """
    g = p1_gradients(mesh)
    local = np.einsum("mid,mjd->mij", g, g) * mesh.areas[:, None, None]
    return SparseOperator(_element_operator(mesh, dofs, local, full), "stiffness")


_REF_MASS = (np.ones((3, 3)) + np.eye(3)) / 12.0


def assemble_mass(mesh: Mesh, dofs: DofMap, full: bool = False, weights=None) -> SparseOperator:
    """M_ij = int phi_i phi_j (exact P1 mass, area/12 * [[2,1,1],[1,2,1],[1,1,2]]).

    ``weights`` optionally scales each element's contribution (a piecewise
    constant coefficient, e.g. h_K**2).
    """
    if np.any(mesh.areas <= 0.0):
        raise DegenerateTriangleError("triangle with zero or negative area")
    w = mesh.areas if weights is None else mesh.areas * np.asarray(weights)
    local = w[:, None, None] * _REF_MASS[None]
    tag = "mass" if weights is None else "other"
    return SparseOperator(_element_operator(mesh, dofs, local, full), tag)


def quadrature_points(mesh: Mesh):
    """Physical quadrature points (M, 6, 2) and weights (M, 6) including areas."""
    pts = np.einsum("qk,mkd->mqd", QUAD_BARY, mesh.nodes[mesh.triangles])
    return pts, mesh.areas[:, None] * QUAD_WEIGHTS[None, :]


def _scatter(mesh, dofs, local):
    full = np.bincount(mesh.triangles.ravel(), weights=local.ravel(), minlength=mesh.n_nodes)
    return full[dofs.interior]


def load_vector(mesh: Mesh, dofs: DofMap, g) -> np.ndarray:
    """b_i = int g phi_i with the 6-point rule; ``g(x, y)`` is vectorized."""
    pts, wts = quadrature_points(mesh)
    vals = np.asarray(g(pts[..., 0], pts[..., 1]), dtype=float) * wts
    return _scatter(mesh, dofs, vals @ QUAD_BARY)


def gradient_load_vector(mesh: Mesh, dofs: DofMap, grad) -> np.ndarray:
    """b_i = int grad g . grad phi_i; ``grad(x, y)`` returns (g_x, g_y)."""
    pts, wts = quadrature_points(mesh)
    gx, gy = grad(pts[..., 0], pts[..., 1])
    # gradients of the hats are constant per element: integrate grad g first
    ix = np.sum(np.asarray(gx) * wts, axis=1)
    iy = np.sum(np.asarray(gy) * wts, axis=1)
    gphi = p1_gradients(mesh)
    local = gphi[:, :, 0] * ix[:, None] + gphi[:, :, 1] * iy[:, None]
    return _scatter(mesh, dofs, local)


def solve_spd(A: SparseOperator, b) -> np.ndarray:
    """Solve A x = b to relative residual 1e-12; raises NotSPDError on breakdown."""
    b = np.asarray(b, dtype=float)
    if b.shape[0] != A.dim:
        raise ValueError(f"right-hand side has {b.shape[0]} rows, operator has {A.dim}")
    return A.solve(b)


def l2_project(mesh: Mesh, dofs: DofMap, M: SparseOperator, g) -> np.ndarray:
    """L2-orthogonal projection P_h g onto V_h."""
    return solve_spd(M, load_vector(mesh, dofs, g))


def h1_project(mesh: Mesh, dofs: DofMap, K: SparseOperator, grad) -> np.ndarray:
    """H1_0-orthogonal (elliptic) projection Pi_h g, from the gradient of g."""
    return solve_spd(K, gradient_load_vector(mesh, dofs, grad))


def nodal_interpolate(mesh: Mesh, dofs: DofMap, g) -> np.ndarray:
    x = mesh.nodes[dofs.interior]
    return np.asarray(g(x[:, 0], x[:, 1]), dtype=float) * np.ones(dofs.n_dofs)


def apply_Ah(M: SparseOperator, K: SparseOperator, w) -> np.ndarray:
    """Discrete Laplacian A_h w = M^{-1} K w, never formed explicitly."""
    return solve_spd(M, K @ np.asarray(w, dtype=float))


def seminorm_h1(K: SparseOperator, w) -> float:
    w = np.asarray(w, dtype=float)
    return float(np.sqrt(max(w @ (K @ w), 0.0)))


def norm_l2(M: SparseOperator, w) -> float:
    w = np.asarray(w, dtype=float)
    return float(np.sqrt(max(w @ (M @ w), 0.0)))


def column_norms(A: SparseOperator, W) -> np.ndarray:
    """sqrt(w^T A w) for each column w of W."""
    W = np.asarray(W, dtype=float)
    return np.sqrt(np.maximum(np.einsum("ij,ij->j", W, A @ W), 0.0))


class P1Space:
    """Mesh, dof map, operators and quadrature data bundled for one discretization."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        self.dofs = DofMap.from_mesh(mesh)

    @cached_property
    def M(self) -> SparseOperator:
        return assemble_mass(self.mesh, self.dofs)

    @cached_property
    def K(self) -> SparseOperator:
        return assemble_stiffness(self.mesh, self.dofs)

    @cached_property
    def gradients(self):
        return p1_gradients(self.mesh)

    @cached_property
    def quadrature(self):
        return quadrature_points(self.mesh)

    @property
    def n_dofs(self) -> int:
        return self.dofs.n_dofs

    def interpolate(self, g):
        return nodal_interpolate(self.mesh, self.dofs, g)

    def l2_project(self, g):
        return l2_project(self.mesh, self.dofs, self.M, g)

    def h1_project(self, grad):
        return h1_project(self.mesh, self.dofs, self.K, grad)

    def Ah(self, w):
        return apply_Ah(self.M, self.K, w)

    def values_at_quadrature(self, w):
        """P1 field (interior dofs) evaluated at the quadrature points, shape (M, 6)."""
        full = self.dofs.extend(w)
        return full[self.mesh.triangles] @ QUAD_BARY.T

    def element_gradients(self, w):
        """Constant gradient of the P1 field on each triangle, shape (M, 2)."""
        full = self.dofs.extend(w)
        return np.einsum("mk,mkd->md", full[self.mesh.triangles], self.gradients)
