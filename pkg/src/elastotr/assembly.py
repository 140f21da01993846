"""Finite element operators of the coupled pressure/velocity formulation.

All element loops are vectorised over triangles: element matrices are built
with ``einsum`` and scattered through a COO buffer.  Coefficients are
constant per triangle.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .linalg import csr_from_coo
from .mesh import GAMMA_F, GAMMA_I, GAMMA_S_H, GAMMA_S_V, DofMap, Mesh, barycentric
from .scene import FLUID, INCLUSION, TISSUE, SceneSpec

# 6-point degree-4 rule on the reference triangle (weights sum to 1)
_A1, _W1 = 0.445948490915965, 0.223381589678011
_A2, _W2 = 0.091576213509771, 0.109951743655322
TRI_POINTS = np.array([
    [_A1, _A1], [1 - 2 * _A1, _A1], [_A1, 1 - 2 * _A1],
    [_A2, _A2], [1 - 2 * _A2, _A2], [_A2, 1 - 2 * _A2],
])
TRI_WEIGHTS = np.array([_W1] * 3 + [_W2] * 3)

# 3-point Gauss-Legendre on [0, 1]
EDGE_POINTS = 0.5 + 0.5 * np.array([-np.sqrt(0.6), 0.0, np.sqrt(0.6)])
EDGE_WEIGHTS = np.array([5.0, 8.0, 5.0]) / 18.0


def tri_basis(degree: int, pts: np.ndarray):
    """Lagrange basis values (nq, nb) and reference gradients (nq, nb, 2).

    Local order: vertices, then midpoints of edges (0,1), (1,2), (2,0).
    """
    xi, eta = pts[:, 0], pts[:, 1]
    l = np.stack([1 - xi - eta, xi, eta], axis=1)
    dl = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    if degree == 1:
        return l, np.broadcast_to(dl, (len(pts), 3, 2)).copy()
    nq = len(pts)
    phi = np.empty((nq, 6))
    grad = np.empty((nq, 6, 2))
    for i in range(3):
        phi[:, i] = l[:, i] * (2 * l[:, i] - 1)
        grad[:, i] = (4 * l[:, i] - 1)[:, None] * dl[i]
    for k, (a, b) in enumerate([(0, 1), (1, 2), (2, 0)]):
        phi[:, 3 + k] = 4 * l[:, a] * l[:, b]
        grad[:, 3 + k] = 4 * (l[:, b][:, None] * dl[a] + l[:, a][:, None] * dl[b])
    return phi, grad


def edge_basis(degree: int, s: np.ndarray) -> np.ndarray:
    """Edge basis values (nq, nb) for nodes ``(a, b)`` or ``(a, b, mid)``."""
    if degree == 1:
        return np.stack([1 - s, s], axis=1)
    return np.stack([(1 - s) * (1 - 2 * s), s * (2 * s - 1), 4 * s * (1 - s)], axis=1)


def _geometry(nodes_xy):
    """Jacobians of affine maps for triangles given by vertex coordinates."""
    p0, p1, p2 = nodes_xy[:, 0], nodes_xy[:, 1], nodes_xy[:, 2]
    J = np.stack([p1 - p0, p2 - p0], axis=2)  # J[e] = [[x1-x0, x2-x0], [y1-y0, y2-y0]]
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    inv = np.empty_like(J)
    inv[:, 0, 0] = J[:, 1, 1] / det
    inv[:, 1, 1] = J[:, 0, 0] / det
    inv[:, 0, 1] = -J[:, 0, 1] / det
    inv[:, 1, 0] = -J[:, 1, 0] / det
    return det, inv


def element_arrays(mesh: Mesh, dofmap: DofMap, tri_ids: np.ndarray):
    """Quadrature weights ``(ne, nq)``, basis values and physical gradients."""
    verts = mesh.vertices[mesh.triangles[tri_ids]]
    det, inv = _geometry(verts)
    phi, gref = tri_basis(dofmap.degree, TRI_POINTS)
    # grad_x phi = J^{-T} grad_xi phi
    grad = np.einsum("qbk,ekj->eqbj", gref, inv)
    wq = 0.5 * np.abs(det)[:, None] * TRI_WEIGHTS[None, :]
    return wq, phi, grad


def _mass_local(wq, phi, coef):
    return np.einsum("e,eq,qa,qb->eab", coef, wq, phi, phi)


def _stiff_local(wq, grad, coef):
    return np.einsum("e,eq,eqaj,eqbj->eab", coef, wq, grad, grad)


def _scatter(dofs, local, n):
    nb = dofs.shape[1]
    rows = np.repeat(dofs, nb, axis=1)
    cols = np.tile(dofs, (1, nb))
    return csr_from_coo(rows, cols, local.reshape(len(dofs), -1), (n, n))


def _edge_data(mesh: Mesh, dofmap: DofMap, tags):
    sel = np.isin(mesh.edge_tags, tags)
    edges = mesh.boundary_edges[sel]
    tris = mesh.boundary_tri[sel]
    nodes = dofmap.edge_nodes(edges)
    va = mesh.vertices[edges[:, 0]]
    vb = mesh.vertices[edges[:, 1]]
    length = np.linalg.norm(vb - va, axis=1)
    t = (vb - va) / length[:, None]
    n = np.column_stack([t[:, 1], -t[:, 0]])
    cent = mesh.vertices[mesh.triangles[tris]].mean(axis=1)
    flip = np.einsum("ij,ij->i", n, 0.5 * (va + vb) - cent) < 0
    n[flip] *= -1
    return nodes, length, n, tris


def edge_mass_ref(degree: int) -> np.ndarray:
    """Unit-length edge mass matrix for the edge node ordering."""
    psi = edge_basis(degree, EDGE_POINTS)
    return np.einsum("q,qa,qb->ab", EDGE_WEIGHTS, psi, psi)


def triangle_materials(scene: SceneSpec, mesh: Mesh, with_inclusions: bool):
    """Per-triangle (rho, lambda, mu) and the region codes actually used."""
    codes = mesh.regions.copy()
    if not with_inclusions:
        codes[codes >= INCLUSION] = TISSUE
    rho = np.empty(len(codes))
    lam = np.empty(len(codes))
    mu = np.empty(len(codes))
    for c in np.unique(codes):
        m = scene.material_of(int(c))
        sel = codes == c
        rho[sel], lam[sel], mu[sel] = m.rho, m.lam, m.mu
    return rho, lam, mu, codes


@dataclass
class OperatorSet:
    """Assembled operators of the coupled problem.

    Fluid blocks act on pressures, solid blocks on interleaved velocities;
    ``C`` couples solid velocities into fluid rows and ``-C.T`` appears in
    the solid rows.  ``coupling_sign`` is -1 for the time-reversed system.
    """

    dofmap: DofMap
    M_f: sp.csr_matrix
    K_f: sp.csr_matrix
    B_f: sp.csr_matrix
    E_f: sp.csr_matrix
    M_s: sp.csr_matrix
    K_s: sp.csr_matrix
    B_s: sp.csr_matrix
    C: sp.csr_matrix
    with_inclusions: bool = True
    regions_used: frozenset = frozenset()
    coupling_sign: float = 1.0

    @property
    def n_fluid(self) -> int:
        return self.M_f.shape[0]

    @property
    def n_solid(self) -> int:
        return self.M_s.shape[0]

    @property
    def n_dofs(self) -> int:
        return self.n_fluid + self.n_solid

    def mass(self) -> sp.csr_matrix:
        return sp.block_diag([self.M_f, self.M_s], format="csr")

    def stiffness(self) -> sp.csr_matrix:
        return sp.block_diag([self.K_f + self.E_f, self.K_s], format="csr")

    def coupling_blocks(self) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        """(fluid-row block, solid-row block) of the interface coupling."""
        C = self.coupling_sign * self.C
        return C.tocsr(), (-C.T).tocsr()

    def first_order(self) -> sp.csr_matrix:
        """Matrix of all terms acting on the time derivative (ABC + coupling)."""
        cf, cs = self.coupling_blocks()
        return sp.bmat([[self.B_f, cf], [cs, self.B_s]], format="csr")

    def closed(self) -> "OperatorSet":
        """Same operators with every absorbing boundary term removed."""
        zf = sp.csr_matrix(self.B_f.shape)
        zs = sp.csr_matrix(self.B_s.shape)
        return replace(self, B_f=zf, E_f=zf.copy(), B_s=zs)

    def time_reversed(self) -> "OperatorSet":
        """Operators of the time-reversed system (interface coupling negated)."""
        return replace(self, coupling_sign=-self.coupling_sign)


def assemble_fluid(mesh: Mesh, dofmap: DofMap, scene: SceneSpec, with_inclusions: bool = True):
    """Fluid mass (1/lambda), stiffness (1/rho), ABC and BT1 curvature forms."""
    fl = np.nonzero(mesh.is_fluid())[0]
    n = dofmap.n_fluid
    rho, lam, _, _ = triangle_materials(scene, mesh, with_inclusions)
    wq, phi, grad = element_arrays(mesh, dofmap, fl)
    dofs = dofmap.fluid_index[dofmap.elem_nodes[fl]]
    M = _scatter(dofs, _mass_local(wq, phi, 1.0 / lam[fl]), n)
    K = _scatter(dofs, _stiff_local(wq, grad, 1.0 / rho[fl]), n)

    nodes, length, _, tris = _edge_data(mesh, dofmap, [GAMMA_F])
    eref = edge_mass_ref(dofmap.degree)
    edofs = dofmap.fluid_index[nodes]
    w_abc = length / np.sqrt(rho[tris] * lam[tris])
    B = _scatter(edofs, w_abc[:, None, None] * eref[None], n)
    if scene.fluid_abc == "bayliss_turkel":
        w_bt = length / (2.0 * scene.bt_radius * rho[tris])
        E = _scatter(edofs, w_bt[:, None, None] * eref[None], n)
    else:
        E = sp.csr_matrix((n, n))
    return {"M_f": M, "K_f": K, "B_f": B, "E_f": E}


def _elastic_bmat(grad):
    """Strain-velocity matrices (ne, nq, 3, 2 nb): rows eps11, eps22, gamma12."""
    ne, nq, nb, _ = grad.shape
    Bm = np.zeros((ne, nq, 3, 2 * nb))
    gx = grad[..., 0]
    gy = grad[..., 1]
    Bm[:, :, 0, 0::2] = gx
    Bm[:, :, 1, 1::2] = gy
    Bm[:, :, 2, 0::2] = gy
    Bm[:, :, 2, 1::2] = gx
    return Bm


def abc_matrix(normal, rho, vp, vs) -> np.ndarray:
    """Elastic absorbing matrix ``R^T diag(rho vp, rho vs) R`` for unit normals.

    ``R = [[n1, n2], [n2, -n1]]``; broadcasts over leading dimensions.
    """
    normal = np.asarray(normal, dtype=float)
    n1, n2 = normal[..., 0], normal[..., 1]
    R = np.stack([np.stack([n1, n2], -1), np.stack([n2, -n1], -1)], -2)
    D = np.zeros(R.shape)
    D[..., 0, 0] = np.asarray(rho) * vp
    D[..., 1, 1] = np.asarray(rho) * vs
    return np.einsum("...ki,...kl,...lj->...ij", R, D, R)


def assemble_solid(mesh: Mesh, dofmap: DofMap, scene: SceneSpec, with_inclusions: bool = True):
    """Solid mass (rho), isotropic stiffness and elastic absorbing form.

    The stiffness integrand is ``lambda div u div v + 2 mu eps(u):eps(v)``.
    """
    so = np.nonzero(~mesh.is_fluid())[0]
    n = dofmap.n_solid
    rho, lam, mu, codes = triangle_materials(scene, mesh, with_inclusions)
    wq, phi, grad = element_arrays(mesh, dofmap, so)
    nb = phi.shape[1]
    dofs = dofmap.solid_dofs(dofmap.elem_nodes[so]).reshape(len(so), 2 * nb) - dofmap.n_fluid

    ms = _mass_local(wq, phi, rho[so])
    Mloc = np.zeros((len(so), 2 * nb, 2 * nb))
    Mloc[:, 0::2, 0::2] = ms
    Mloc[:, 1::2, 1::2] = ms
    M = _scatter(dofs, Mloc, n)

    Bm = _elastic_bmat(grad)
    D = np.zeros((len(so), 3, 3))
    D[:, 0, 0] = D[:, 1, 1] = lam[so] + 2 * mu[so]
    D[:, 0, 1] = D[:, 1, 0] = lam[so]
    D[:, 2, 2] = mu[so]
    Kloc = np.einsum("eq,eqia,eij,eqjb->eab", wq, Bm, D, Bm)
    K = _scatter(dofs, Kloc, n)

    nodes, length, normal, tris = _edge_data(mesh, dofmap, [GAMMA_S_H, GAMMA_S_V])
    if len(nodes):
        vp = np.sqrt((lam[tris] + 2 * mu[tris]) / rho[tris])
        vs = np.sqrt(mu[tris] / rho[tris])
        Mabc = abc_matrix(normal, rho[tris], vp, vs)
        eref = edge_mass_ref(dofmap.degree)
        loc = np.einsum("e,ab,eij->eaibj", length, eref, Mabc)
        loc = loc.reshape(len(nodes), 2 * nodes.shape[1], -1)
        edofs = dofmap.solid_dofs(nodes).reshape(len(nodes), -1) - dofmap.n_fluid
        B = _scatter(edofs, loc, n)
    else:
        B = sp.csr_matrix((n, n))
    used = frozenset(int(c) for c in np.unique(codes))
    return {"M_s": M, "K_s": K, "B_s": B, "regions_used": used}


def assemble_coupling(mesh: Mesh, dofmap: DofMap) -> sp.csr_matrix:
    """Interface form ``C[q_i, u_j] = int_GammaI (psi_j . n) phi_i``.

    ``n`` points from the solid into the fluid.
    """
    nodes, length, normal, _ = _edge_data(mesh, dofmap, [GAMMA_I])
    if len(nodes) == 0:
        raise ValueError("mesh has no fluid/solid interface edges")
    eref = edge_mass_ref(dofmap.degree)
    fdofs = dofmap.fluid_index[nodes]
    sdofs = dofmap.solid_dofs(nodes) - dofmap.n_fluid  # (ne, nb, 2)
    nb = nodes.shape[1]
    vals = np.einsum("e,ab,ec->eabc", length, eref, normal)
    rows = np.broadcast_to(fdofs[:, :, None, None], vals.shape)
    cols = np.broadcast_to(sdofs[:, None, :, :], vals.shape)
    return csr_from_coo(rows, cols, vals, (dofmap.n_fluid, dofmap.n_solid))


def assemble_operators(mesh: Mesh, dofmap: DofMap, scene: SceneSpec,
                       with_inclusions: bool = True) -> OperatorSet:
    f = assemble_fluid(mesh, dofmap, scene, with_inclusions)
    s = assemble_solid(mesh, dofmap, scene, with_inclusions)
    used = s.pop("regions_used") | {FLUID}
    C = assemble_coupling(mesh, dofmap)
    return OperatorSet(dofmap=dofmap, C=C, with_inclusions=with_inclusions,
                       regions_used=frozenset(used), **f, **s)


def assemble_sources(mesh: Mesh, dofmap: DofMap, source_point) -> np.ndarray:
    """Nodal load of a unit point source (basis functions evaluated there).

    Returned over the full unknown vector; solid entries are zero.
    """
    p = np.asarray(source_point, dtype=float)[None, :]
    tri = int(mesh.locate(p)[0])
    if mesh.regions[tri] != FLUID:
        # a point on the interface may be located in the solid triangle below
        alt = mesh.locate(p + np.array([[0.0, 1e-12 * max(1.0, abs(p[0, 1]))]]))[0]
        if mesh.regions[alt] != FLUID:
            raise ValueError(f"source {tuple(p[0])} is not in the fluid")
        tri = int(alt)
    lam = barycentric(mesh.vertices[mesh.triangles[[tri]]], p)
    # reference coordinates (xi, eta) = (lambda_1, lambda_2)
    phi, _ = tri_basis(dofmap.degree, lam[:, 1:])
    L = np.zeros(dofmap.n_dofs)
    np.add.at(L, dofmap.fluid_index[dofmap.elem_nodes[tri]], phi[0])
    L[np.abs(L) < 1e-15] = 0.0
    return L
