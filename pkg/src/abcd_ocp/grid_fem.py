"""
P1 finite elements on uniform triangulations of the unit square.

The mesh splits every grid cell along its south-west/north-east diagonal, so
each interior node is shared by exactly six triangles.  Homogeneous Dirichlet
conditions are imposed by elimination: all operators act on the coefficient
vectors of interior nodes only.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Union

import numpy as np
from scipy import sparse as sp

ScalarField = Callable[[np.ndarray, np.ndarray], np.ndarray]

# Degree-5, 7-point rule on the reference triangle (barycentric coords, weights
# normalized to sum to one).
_A1, _B1 = 0.059715871789770, 0.470142064105115
_A2, _B2 = 0.797426985353087, 0.101286507323456
QUAD_BARY = np.array([
    [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
    [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1],
    [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2],
])
QUAD_WEIGHTS = np.array([0.225] + [0.132394152788506] * 3
                        + [0.125939180544827] * 3)


class MeshError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TriMesh:
    """
    Uniform right-triangle mesh of the unit square.

    Attributes
    ----------
    n_side : int
        Number of subdivisions per axis.
    nodes : ndarray, shape (N, 2)
        Node coordinates; node ``j*(n_side+1) + i`` sits at ``(i*h, j*h)``.
    elements : ndarray, shape (E, 3)
        Counterclockwise vertex indices of every triangle.
    interior_index : ndarray, shape (N,)
        Interior DOF index of each node, ``-1`` on the boundary.
    h : float
        Mesh size ``1/n_side`` (the length of the triangle legs).
    """

    n_side: int
    nodes: np.ndarray
    elements: np.ndarray
    interior_index: np.ndarray
    h: float

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @cached_property
    def interior_nodes(self) -> np.ndarray:
        """Global node index of every interior DOF, in DOF order."""
        return np.flatnonzero(self.interior_index >= 0)

    @property
    def n_dof(self) -> int:
        return int(self.interior_nodes.size)

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.elements]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @cached_property
    def element_dofs(self) -> np.ndarray:
        """Interior DOF index of each element vertex (``-1`` on the boundary)."""
        return self.interior_index[self.elements]

    def diameters(self) -> np.ndarray:
        p = self.nodes[self.elements]
        edges = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1],
                          p[:, 0] - p[:, 2]], axis=1)
        return np.linalg.norm(edges, axis=2).max(axis=1)

    def inscribed_diameters(self) -> np.ndarray:
        p = self.nodes[self.elements]
        perim = (np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
                 + np.linalg.norm(p[:, 2] - p[:, 1], axis=1)
                 + np.linalg.norm(p[:, 0] - p[:, 2], axis=1))
        return 4.0 * np.abs(self.signed_areas) / perim

    def quadrature_points(self) -> tuple[np.ndarray, np.ndarray]:
        """Physical quadrature points ``(E, Q, 2)`` and weights ``(E, Q)``."""
        p = self.nodes[self.elements]
        pts = np.einsum("qk,ekd->eqd", QUAD_BARY, p)
        wts = np.abs(self.signed_areas)[:, None] * QUAD_WEIGHTS[None, :]
        return pts, wts

    def to_dict(self) -> dict:
        return {
            "n_side": self.n_side,
            "h": self.h,
            "nodes": self.nodes.tolist(),
            "elements": self.elements.tolist(),
            "interior_index": self.interior_index.tolist(),
        }


def build_unit_square_mesh(n_side: int) -> TriMesh:
    """
    Build the uniform right-triangle mesh of ``[0, 1]^2``.

    Raises
    ------
    MeshError
        If ``n_side < 2``: such a mesh has no interior node.
    """
    if int(n_side) != n_side or n_side < 2:
        raise MeshError(f"n_side must be an integer >= 2, got {n_side!r}")
    n = int(n_side)
    h = 1.0 / n
    ticks = np.arange(n + 1) * h
    xx, yy = np.meshgrid(ticks, ticks)
    nodes = np.column_stack([xx.ravel(), yy.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n))
    i, j = i.ravel(), j.ravel()
    n0 = j * (n + 1) + i
    n1 = n0 + 1
    n2 = n0 + n + 2
    n3 = n0 + n + 1
    elements = np.concatenate([np.column_stack([n0, n1, n2]),
                               np.column_stack([n0, n2, n3])])

    ii = np.tile(np.arange(n + 1), n + 1)
    jj = np.repeat(np.arange(n + 1), n + 1)
    on_boundary = (ii == 0) | (ii == n) | (jj == 0) | (jj == n)
    interior_index = np.full(nodes.shape[0], -1, dtype=np.int64)
    interior_index[~on_boundary] = np.arange(np.count_nonzero(~on_boundary))

    return TriMesh(n_side=n, nodes=nodes, elements=elements.astype(np.int64),
                   interior_index=interior_index, h=h)


@dataclass(frozen=True, eq=False)
class FemOperators:
    """
    Assembled interior-DOF operators.

    ``K`` is the stiffness matrix, ``M`` the consistent mass matrix and ``w``
    the diagonal of the lumped mass matrix ``W`` (``w_i = integral of phi_i``).
    ``gamma`` is the constant with ``||z||_W^2 <= gamma ||z||_M^2``.
    """

    K: sp.csr_matrix
    M: sp.csr_matrix
    w: np.ndarray
    gamma: float = 4.0

    @property
    def n_dof(self) -> int:
        return int(self.w.size)

    @cached_property
    def W(self) -> sp.csr_matrix:
        return sp.diags(self.w, format="csr")

    @cached_property
    def w_inv(self) -> np.ndarray:
        return 1.0 / self.w

    @classmethod
    def from_dense(cls, K, M, w, gamma: float = 4.0) -> "FemOperators":
        """Wrap arbitrary (small) matrices, e.g. for scalar test problems."""
        K = sp.csr_matrix(np.atleast_2d(np.asarray(K, dtype=float)))
        M = sp.csr_matrix(np.atleast_2d(np.asarray(M, dtype=float)))
        w = np.atleast_1d(np.asarray(w, dtype=float))
        return cls(K=K, M=M, w=w, gamma=gamma)

    def to_dict(self) -> dict:
        def triplets(A):
            A = A.tocoo()
            return {"row": A.row.tolist(), "col": A.col.tolist(),
                    "val": A.data.tolist(), "shape": list(A.shape)}
        return {"K": triplets(self.K), "M": triplets(self.M),
                "w": self.w.tolist(), "gamma": self.gamma}


def gamma_for_dimension(dim: int) -> float:
    """Mass/lumped-mass equivalence constant: 4 in 2D, 5 in 3D."""
    if dim == 2:
        return 4.0
    if dim == 3:
        return 5.0
    raise ValueError(f"unsupported dimension {dim}")


def _p1_gradients(mesh: TriMesh) -> np.ndarray:
    # Gradients of the three barycentric coordinates, shape (E, 3, 2).
    p = mesh.nodes[mesh.elements]
    area2 = 2.0 * mesh.signed_areas
    x, y = p[..., 0], p[..., 1]
    gx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    gy = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    return np.stack([gx, gy], axis=2) / area2[:, None, None]


def _assemble(mesh: TriMesh, local: np.ndarray) -> sp.csr_matrix:
    dofs = mesh.element_dofs
    rows = np.repeat(dofs, 3, axis=1)
    cols = np.tile(dofs, (1, 3))
    vals = local.reshape(local.shape[0], 9)
    keep = (rows >= 0) & (cols >= 0)
    n = mesh.n_dof
    A = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n, n)).tocsr()
    # (a + b) == (b + a) bitwise, so this makes the stored matrix exactly symmetric.
    A = ((A + A.T) * 0.5).tocsr()
    A.eliminate_zeros()
    A.sort_indices()
    return A


def assemble_operators(mesh: TriMesh, c0: Union[float, ScalarField] = 0.0) -> FemOperators:
    """
    Assemble stiffness, mass and lumped mass matrices of the P1 space.

    The bilinear form is ``a(y, v) = int grad y . grad v + c0 y v``.  A
    callable ``c0`` is evaluated at element centroids (piecewise constant
    coefficient).
    """
    area = np.abs(mesh.signed_areas)
    if callable(c0):
        centroids = mesh.nodes[mesh.elements].mean(axis=1)
        c0_el = np.asarray(c0(centroids[:, 0], centroids[:, 1]), dtype=float)
        c0_el = np.broadcast_to(c0_el, area.shape)
    else:
        c0_el = np.full(area.shape, float(c0))
    if np.any(~np.isfinite(c0_el)) or np.any(c0_el < 0):
        raise ValueError("reaction coefficient c0 must be finite and nonnegative")

    grads = _p1_gradients(mesh)
    k_loc = area[:, None, None] * np.einsum("eid,ejd->eij", grads, grads)
    m_ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    m_loc = area[:, None, None] * m_ref[None, :, :]
    K = _assemble(mesh, k_loc + c0_el[:, None, None] * m_loc)
    M = _assemble(mesh, m_loc)

    w_full = np.zeros(mesh.n_nodes)
    np.add.at(w_full, mesh.elements, np.repeat(area[:, None] / 3.0, 3, axis=1))
    w = w_full[mesh.interior_nodes]
    return FemOperators(K=K, M=M, w=w, gamma=gamma_for_dimension(2))


def nodal_sample(mesh: TriMesh, f: Union[float, ScalarField]) -> np.ndarray:
    """Values of ``f`` at the interior nodes, in DOF order."""
    xy = mesh.nodes[mesh.interior_nodes]
    if callable(f):
        vals = np.asarray(f(xy[:, 0], xy[:, 1]), dtype=float)
    else:
        vals = np.asarray(f, dtype=float)
    vals = np.array(np.broadcast_to(vals, (xy.shape[0],)), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise ValueError("field is not finite at every interior node")
    return vals


def _full_vector(mesh: TriMesh, z: np.ndarray) -> np.ndarray:
    full = np.zeros(mesh.n_nodes)
    full[mesh.interior_nodes] = z
    return full


def evaluate_p1(mesh: TriMesh, z: np.ndarray, bary: np.ndarray = QUAD_BARY) -> np.ndarray:
    """Values of the P1 function with interior coefficients ``z`` at barycentric points, ``(E, Q)``."""
    full = _full_vector(mesh, np.asarray(z, dtype=float))
    return full[mesh.elements] @ bary.T


def evaluate_at_points(mesh: TriMesh, z: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """
    Values of the P1 function with interior coefficients ``z`` at arbitrary points.

    Uses the structured layout of :func:`build_unit_square_mesh` for point
    location; points outside ``[0, 1]^2`` raise.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any((x < 0) | (x > 1) | (y < 0) | (y > 1)):
        raise ValueError("evaluation points must lie in the unit square")
    n = mesh.n_side
    full = _full_vector(mesh, np.asarray(z, dtype=float))
    i = np.clip(np.floor(x * n).astype(np.int64), 0, n - 1)
    j = np.clip(np.floor(y * n).astype(np.int64), 0, n - 1)
    xi, eta = x * n - i, y * n - j
    v0 = full[j * (n + 1) + i]
    v1 = full[j * (n + 1) + i + 1]
    v2 = full[(j + 1) * (n + 1) + i + 1]
    v3 = full[(j + 1) * (n + 1) + i]
    lower = v0 + xi * (v1 - v0) + eta * (v2 - v1)   # triangle (SW, SE, NE)
    upper = v0 + eta * (v3 - v0) + xi * (v2 - v3)   # triangle (SW, NE, NW)
    return np.where(xi >= eta, lower, upper)


def p1_function(mesh: TriMesh, z: np.ndarray) -> ScalarField:
    """Callable ``(x, y) -> values`` for the P1 function with coefficients ``z``."""
    z = np.array(z, dtype=float)
    return lambda x, y: evaluate_at_points(mesh, z, x, y)


def quasi_interpolate(mesh: TriMesh, ops: FemOperators, w: ScalarField) -> np.ndarray:
    """
    Quasi-interpolant coefficients ``pi_i(w) = int w phi_i / int phi_i``.

    Integrals use the degree-5 element rule; the denominator is the lumped
    mass diagonal.
    """
    pts, wts = mesh.quadrature_points()
    vals = np.asarray(w(pts[..., 0], pts[..., 1]), dtype=float)
    vals = np.broadcast_to(vals, wts.shape)
    if not np.all(np.isfinite(vals)):
        raise ValueError("quadrature failure: non-finite integrand")
    # phi of local vertex k at quadrature point q is QUAD_BARY[q, k]
    contrib = np.einsum("eq,qk->ek", vals * wts, QUAD_BARY)
    num = np.zeros(mesh.n_nodes)
    np.add.at(num, mesh.elements, contrib)
    return num[mesh.interior_nodes] / ops.w


def l2_error(mesh: TriMesh, z: np.ndarray, f: ScalarField) -> float:
    """``||f - z_h||_{L2}`` by element quadrature."""
    pts, wts = mesh.quadrature_points()
    diff = f(pts[..., 0], pts[..., 1]) - evaluate_p1(mesh, z)
    return float(np.sqrt(np.sum(wts * diff**2)))


def _positive_part_integral(v: np.ndarray, area: np.ndarray) -> np.ndarray:
    # Exact integral of max(f, 0) for linear f with vertex values v, shape (E, 3).
    npos = np.count_nonzero(v > 0, axis=1)
    total = area * v.sum(axis=1) / 3.0
    out = np.zeros_like(area)

    def one_positive(vals, a):
        # vals rows hold exactly one strictly positive entry
        order = np.argsort(-vals, axis=1)
        s = np.take_along_axis(vals, order, axis=1)
        top, b, c = s[:, 0], s[:, 1], s[:, 2]
        return a * top**3 / (3.0 * (top - b) * (top - c))

    m = npos == 3
    out[m] = total[m]
    m = npos == 1
    if np.any(m):
        out[m] = one_positive(v[m], area[m])
    m = npos == 2
    if np.any(m):
        neg = -v[m]
        nneg = np.count_nonzero(neg > 0, axis=1)
        neg_int = np.zeros(np.count_nonzero(m))
        mm = nneg == 1
        if np.any(mm):
            neg_int[mm] = one_positive(neg[mm], area[m][mm])
        out[m] = total[m] + neg_int
    return out


def discrete_l1_norms(ops: FemOperators, mesh: TriMesh, z: np.ndarray) -> tuple[float, float, float]:
    """
    Three discrete L1 norms of the P1 function with coefficients ``z``.

    Returns
    -------
    true_l1 : float
        Exact ``int |sum z_i phi_i|``, each triangle split along the zero line.
    m_l1 : float
        ``||M z||_1``.
    w_l1 : float
        ``||W z||_1``.

    The ordering ``m_l1 <= true_l1 <= w_l1`` always holds.
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (ops.n_dof,):
        raise ValueError(f"expected vector of length {ops.n_dof}, got shape {z.shape}")
    full = _full_vector(mesh, z)
    area = np.abs(mesh.signed_areas)
    v = full[mesh.elements]
    pos = _positive_part_integral(v, area)
    neg = _positive_part_integral(-v, area)
    true_l1 = float(np.sum(pos + neg))
    m_l1 = float(np.abs(ops.M @ z).sum())
    w_l1 = float(np.abs(ops.w * z).sum())
    return true_l1, m_l1, w_l1
