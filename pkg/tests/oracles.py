"""Reference implementations used only by the tests.

They share no code with the package: dense loops, tensor Gauss rules
mapped onto triangles, and a plain first-order Crank-Nicolson integrator.
"""
import math

import numpy as np


def brute_edges(triangles):
    """(interior, boundary) edge sets by counting how often each edge appears."""
    count = {}
    for tri in triangles:
        for i in range(3):
            e = tuple(sorted((int(tri[i]), int(tri[(i + 1) % 3]))))
            count[e] = count.get(e, 0) + 1
    interior = {e for e, c in count.items() if c == 2}
    boundary = {e for e, c in count.items() if c == 1}
    return interior, boundary


def duffy_rule(order):
    """Points (k, 2) and weights (k,) on the reference triangle (0,0), (1,0), (0,1).

    Collapsed tensor Gauss-Legendre; exact for polynomials of degree 2*order - 2.
    """
    g, w = np.polynomial.legendre.leggauss(order)
    g, w = 0.5 * (g + 1.0), 0.5 * w
    s, t = np.meshgrid(g, g, indexing="ij")
    ws, wt = np.meshgrid(w, w, indexing="ij")
    x = s * (1.0 - t)
    y = t
    return np.column_stack([x.ravel(), y.ravel()]), (ws * wt * (1.0 - t)).ravel()


def integrate_on_triangle(func, p0, p1, p2, order=8):
    """Integral of func(x, y) over the triangle p0 p1 p2."""
    pts, wts = duffy_rule(order)
    J = np.column_stack([np.subtract(p1, p0), np.subtract(p2, p0)])
    phys = pts @ J.T + np.asarray(p0)
    return abs(np.linalg.det(J)) * np.sum(wts * func(phys[:, 0], phys[:, 1]))


def hat_coefficients(p):
    """Rows (a, b, c) with phi_i = a + b x + c y for the three vertices p."""
    V = np.column_stack([np.ones(3), p[:, 0], p[:, 1]])
    return np.linalg.inv(V).T


def dense_p1(nodes, triangles, boundary, order=4):
    """Dense mass and stiffness over interior nodes, element loop with exact integrals."""
    interior = [i for i in range(len(nodes)) if not boundary[i]]
    index = {n: k for k, n in enumerate(interior)}
    n = len(interior)
    M = np.zeros((n, n))
    K = np.zeros((n, n))
    for tri in triangles:
        p = nodes[tri]
        C = hat_coefficients(p)
        area = 0.5 * abs(np.linalg.det(np.column_stack([p[1] - p[0], p[2] - p[0]])))
        for a in range(3):
            for b in range(3):
                if tri[a] not in index or tri[b] not in index:
                    continue
                ia, ib = index[tri[a]], index[tri[b]]
                K[ia, ib] += area * (C[a, 1] * C[b, 1] + C[a, 2] * C[b, 2])
                fa = lambda x, y, c=C[a]: c[0] + c[1] * x + c[2] * y
                fb = lambda x, y, c=C[b]: c[0] + c[1] * x + c[2] * y
                M[ia, ib] += integrate_on_triangle(lambda x, y: fa(x, y) * fb(x, y),
                                                   p[0], p[1], p[2], order)
    return M, K, interior


def dense_load(nodes, triangles, boundary, g, order=10):
    interior = [i for i in range(len(nodes)) if not boundary[i]]
    index = {n: k for k, n in enumerate(interior)}
    b = np.zeros(len(interior))
    for tri in triangles:
        p = nodes[tri]
        C = hat_coefficients(p)
        for a in range(3):
            if tri[a] in index:
                c = C[a]
                b[index[tri[a]]] += integrate_on_triangle(
                    lambda x, y: g(x, y) * (c[0] + c[1] * x + c[2] * y), p[0], p[1], p[2], order)
    return b


def p1_energy_error(nodes, triangles, u_full, v_full, u, u_t, grad_u, order=10):
    """(||v_h - u_t||^2 + |u_h - u|_H1^2)^(1/2) with high-order quadrature per triangle."""
    total = 0.0
    for tri in triangles:
        p = nodes[tri]
        C = hat_coefficients(p)
        cu = C.T @ u_full[tri]
        cv = C.T @ v_full[tri]

        def integrand(x, y):
            dv = cv[0] + cv[1] * x + cv[2] * y - u_t(x, y)
            gx, gy = grad_u(x, y)
            return dv * dv + (cu[1] - gx) ** 2 + (cu[2] - gy) ** 2

        total += integrate_on_triangle(integrand, p[0], p[1], p[2], order)
    return math.sqrt(total)


def crank_nicolson(M, K, u0, v0, F, instants):
    """Crank-Nicolson for u' = v, M v' = -K u + M f on the given instants (dense).

    F holds f at every instant as rows. Returns (U, V) with one row per instant.
    """
    n = len(u0)
    I = np.eye(n)
    U, V = [np.asarray(u0, float)], [np.asarray(v0, float)]
    for k in range(len(instants) - 1):
        tau = instants[k + 1] - instants[k]
        A = np.block([[I, -0.5 * tau * I], [0.5 * tau * K, M]])
        rhs = np.concatenate([
            U[-1] + 0.5 * tau * V[-1],
            M @ V[-1] - 0.5 * tau * K @ U[-1] + 0.5 * tau * M @ (F[k + 1] + F[k]),
        ])
        x = np.linalg.solve(A, rhs)
        U.append(x[:n])
        V.append(x[n:])
    return np.array(U), np.array(V)


def scalar_newmark(A, u0, v0, instants, f=lambda t: 0.0):
    """Scalar Crank-Nicolson on (u, v), written out by hand."""
    u, v = [u0], [v0]
    for k in range(len(instants) - 1):
        t0, t1 = instants[k], instants[k + 1]
        tau = t1 - t0
        # [1, -tau/2; A tau/2, 1] [u1; v1] = [u + tau/2 v; v - A tau/2 u + tau/2 (f0 + f1)]
        r1 = u[-1] + 0.5 * tau * v[-1]
        r2 = v[-1] - 0.5 * A * tau * u[-1] + 0.5 * tau * (f(t0) + f(t1))
        det = 1.0 + 0.25 * A * tau * tau
        u.append((r1 + 0.5 * tau * r2) / det)
        v.append((r2 - 0.5 * A * tau * r1) / det)
    return np.array(u), np.array(v)
