"""Assembly of the twisted P1/P0 Dolbeault complexes.

One code path serves every twisted complex in the package.  A complex is
specified by, per (face, corner):

* a unit scalar ``spin`` factor carrying the chart-tensor indices of the
  0-cochain type (1 for functions, the chart-rotation transport for
  vector fields);
* a unitary ``transport`` matrix carrying the bundle conjugation
  (identity blocks for untwisted types).

A 0-cochain value X at vertex v enters face f as
``spin[f,k] * T[f,k] X T[f,k]^H``; the face operators are the P1 hat
gradients of those transported values, split into dz and dzbar parts.
Adjoints are true matrix adjoints under diagonal weights, never an
independent stencil, so adjointness identities hold to roundoff.

P1 hat gradients on a chart triangle (z0,z1,z2) with signed area S:
grad phi_k = i (z_{k+2} - z_{k+1}) / (2S) as gx + i gy, hence
dbar phi_k = grad/2 and d phi_k = conj(grad)/2.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import conventions
from .surface import ConformalSurface


class SolverError(Exception):
    """Iterative solve failed to reach the requested residual."""


# ---------------------------------------------------------------------------
# per-surface geometry


@dataclass(frozen=True, eq=False)
class SurfaceGeometry:
    corner_vertex: np.ndarray  # (F,3) int
    grad_bar: np.ndarray  # (F,3) complex, dbar of hat functions
    grad_hol: np.ndarray  # (F,3) complex
    area: np.ndarray  # (F,)
    rho: np.ndarray  # (F,)
    face_spin: np.ndarray  # (F,) unit complex, chart transport from face 0 via a BFS tree
    vertex_ref_face: np.ndarray  # (V,) int
    corner_spin: np.ndarray  # (F,3) complex, vector-type transport vertex -> face
    mass_rho: np.ndarray  # (V,) sum of rho*A/3 over incident corners
    mass_rho2: np.ndarray  # (V,) sum of rho^2*A/3
    mass_area: np.ndarray  # (V,) sum of A/3


@functools.lru_cache(maxsize=None)
def geometry(surface: ConformalSurface) -> SurfaceGeometry:
    mesh = surface.mesh
    F, V, H = mesh.n_faces, mesh.n_vertices, mesh.n_half_edges
    corner_vertex = mesh.origin.reshape(F, 3).copy()
    z = surface.chart
    S = surface.area
    grad = np.zeros((F, 3), dtype=complex)
    for k in range(3):
        grad[:, k] = 1j * (z[:, (k + 2) % 3] - z[:, (k + 1) % 3]) / (2.0 * S)
    grad_bar = grad / 2.0
    grad_hol = np.conj(grad) / 2.0
    # BFS tree over face adjacency accumulating chart rotations; tangent
    # coefficients in chart(f) equal face_spin[f]/face_spin[f'] times their
    # expression in chart(f') along tree paths.
    face_spin = np.zeros(F, dtype=complex)
    face_spin[0] = 1.0
    visited = np.zeros(F, dtype=bool)
    visited[0] = True
    queue = [0]
    while queue:
        f = queue.pop(0)
        for k in range(3):
            h = 3 * f + k
            t = int(mesh.twin[h])
            ft = t // 3
            if not visited[ft]:
                visited[ft] = True
                face_spin[ft] = surface.edge_rotation[h] * face_spin[f]
                queue.append(ft)
    if not visited.all():
        raise ValueError("face adjacency graph is not connected")
    vertex_ref_face = np.full(V, F, dtype=np.int64)
    for f in range(F):
        for k in range(3):
            v = corner_vertex[f, k]
            if f < vertex_ref_face[v]:
                vertex_ref_face[v] = f
    corner_spin = np.zeros((F, 3), dtype=complex)
    for f in range(F):
        for k in range(3):
            corner_spin[f, k] = face_spin[f] / face_spin[vertex_ref_face[corner_vertex[f, k]]]
    rho = surface.density
    mass_rho = np.zeros(V)
    mass_rho2 = np.zeros(V)
    mass_area = np.zeros(V)
    for f in range(F):
        for k in range(3):
            v = corner_vertex[f, k]
            mass_rho[v] += rho[f] * S[f] / 3.0
            mass_rho2[v] += rho[f] ** 2 * S[f] / 3.0
            mass_area[v] += S[f] / 3.0
    return SurfaceGeometry(
        corner_vertex=corner_vertex,
        grad_bar=grad_bar,
        grad_hol=grad_hol,
        area=S.copy(),
        rho=rho.copy(),
        face_spin=face_spin,
        vertex_ref_face=vertex_ref_face,
        corner_spin=corner_spin,
        mass_rho=mass_rho,
        mass_rho2=mass_rho2,
        mass_area=mass_area,
    )


# ---------------------------------------------------------------------------
# assembled complex


def _assemble(grad, spin, transports, n_vertices, m) -> sp.csr_matrix:
    """Sparse (F*m^2) x (V*m^2) operator sum_k grad[f,k] spin[f,k] T X T^H."""
    F = grad.shape[0]
    blocks_per_face = 3
    m2 = m * m
    rows = np.zeros(F * blocks_per_face * m2 * m2, dtype=np.int64)
    cols = np.zeros_like(rows)
    data = np.zeros(rows.shape[0], dtype=complex)
    pos = 0
    corner_vertex = transports["corner_vertex"]
    T = transports["T"]
    blk_idx = np.arange(m2)
    for f in range(F):
        for k in range(3):
            v = corner_vertex[f, k]
            if m == 1:
                block = np.array([[grad[f, k] * spin[f, k]]])
            else:
                Tm = T[f, k]
                block = grad[f, k] * spin[f, k] * np.kron(Tm, np.conj(Tm))
            r0, c0 = f * m2, v * m2
            rr = np.repeat(blk_idx, m2) + r0
            cc = np.tile(blk_idx, m2) + c0
            n = m2 * m2
            rows[pos : pos + n] = rr
            cols[pos : pos + n] = cc
            data[pos : pos + n] = block.ravel()
            pos += n
    return sp.csr_matrix(
        (data, (rows, cols)), shape=(F * m2, n_vertices * m2), dtype=complex
    )


@dataclass(eq=False)
class DolbeaultComplex:
    """Assembled dbar/d pair with weighted adjoints and restricted solves.

    ``w0``/``w1`` are the diagonal L2 weights on 0-cochains and on face
    forms (per flattened entry).  ``dbar``/``dhol`` map 0-cochains to
    (0,1)/(1,0) coefficients.  ``laplacian`` is dbar_adj @ dbar;
    ``laplacian_sym`` the conjugation-equivariant symmetrization used by
    the variation formulas.
    """

    m: int
    n_vertices: int
    n_faces: int
    w0: np.ndarray
    w1: np.ndarray
    dbar: sp.csr_matrix
    dhol: sp.csr_matrix
    dense_cap: int = 4000

    def __post_init__(self):
        self._cache: dict = {}

    def set_kernel_hint(self, columns: np.ndarray) -> None:
        """Known kernel of the Laplacian (e.g. covariant-constant sections),
        used above the dense cap where no spectral factorization exists.
        Columns are w0-orthonormalized here."""
        K = np.array(columns, dtype=complex)
        for j in range(K.shape[1]):
            for i in range(j):
                K[:, j] -= K[:, i] * np.sum(self.w0 * np.conj(K[:, i]) * K[:, j])
            K[:, j] /= np.sqrt(np.real(np.sum(self.w0 * np.abs(K[:, j]) ** 2)))
        self._cache["kernel_hint"] = K

    # -- adjoints -----------------------------------------------------------
    def adjoint(self, M: sp.csr_matrix) -> sp.csr_matrix:
        key = ("adj", id(M))
        if key not in self._cache:
            A = sp.diags(1.0 / self.w0) @ M.conj().T.tocsr() @ sp.diags(self.w1)
            self._cache[key] = A.tocsr()
        return self._cache[key]

    @property
    def dbar_star(self) -> sp.csr_matrix:
        return self.adjoint(self.dbar)

    @property
    def dhol_star(self) -> sp.csr_matrix:
        return self.adjoint(self.dhol)

    @property
    def laplacian(self) -> sp.csr_matrix:
        if "lap" not in self._cache:
            self._cache["lap"] = (self.dbar_star @ self.dbar).tocsr()
        return self._cache["lap"]

    @property
    def laplacian_sym(self) -> sp.csr_matrix:
        if "lap_sym" not in self._cache:
            self._cache["lap_sym"] = (
                0.5 * (self.dbar_star @ self.dbar + self.dhol_star @ self.dhol)
            ).tocsr()
        return self._cache["lap_sym"]

    # -- symmetrized spectral data -------------------------------------------
    def _eig(self, which: str):
        key = ("eig", which)
        if key not in self._cache:
            lap = self.laplacian if which == "dbar" else self.laplacian_sym
            n = lap.shape[0]
            if n > self.dense_cap:
                raise SolverError(
                    f"dense spectral factorization requested above cap ({n} > {self.dense_cap})"
                )
            s = np.sqrt(self.w0)
            Ssym = (lap.toarray() * (1.0 / s)[None, :]) * s[:, None]
            Ssym = 0.5 * (Ssym + Ssym.conj().T)
            evals, evecs = np.linalg.eigh(Ssym)
            self._cache[key] = (evals, evecs)
        return self._cache[key]

    def _use_hint(self) -> bool:
        return self.laplacian.shape[0] > self.dense_cap and "kernel_hint" in self._cache

    def kernel_dim(self, which: str = "dbar", rel_tol: float = 1e-10) -> int:
        if self._use_hint():
            return self._cache["kernel_hint"].shape[1]
        evals, _ = self._eig(which)
        lam_max = float(evals[-1]) if evals.size else 0.0
        return int(np.sum(evals <= rel_tol * max(lam_max, 1.0)))

    def kernel_basis(self, which: str = "dbar", rel_tol: float = 1e-10) -> np.ndarray:
        """Columns form a w0-orthonormal basis of ker(Laplacian)."""
        if self._use_hint():
            return self._cache["kernel_hint"]
        evals, evecs = self._eig(which)
        k = self.kernel_dim(which, rel_tol)
        s = np.sqrt(self.w0)
        return evecs[:, :k] / s[:, None]

    def project_off_kernel(self, x: np.ndarray, which: str = "dbar") -> tuple[np.ndarray, float]:
        """Remove the w0-orthogonal projection onto ker(Laplacian).

        Returns the projected vector and the norm of the removed part.
        """
        K = self.kernel_basis(which)
        if K.shape[1] == 0:
            return x, 0.0
        coef = K.conj().T @ (self.w0 * x)
        removed = K @ coef
        return x - removed, float(np.sqrt(np.real(np.vdot(coef, coef))))

    def delta0_solve(
        self,
        h: np.ndarray,
        which: str = "dbar",
        method: str = "auto",
        rtol: float = 1e-10,
    ) -> tuple[np.ndarray, dict]:
        """Solve Laplacian x = (h projected off the kernel), x in ker^perp.

        Dense spectral solve below ``dense_cap`` unknowns, conjugate
        gradients on the Hermitian-symmetrized system above it.
        """
        n = h.shape[0]
        rhs, removed = self.project_off_kernel(h, which)
        stats = {"kernel_removed": removed, "method": None, "residual": 0.0, "iterations": 0}
        if method == "auto":
            method = "dense" if n <= self.dense_cap else "cg"
        lap = self.laplacian if which == "dbar" else self.laplacian_sym
        s = np.sqrt(self.w0)
        b = s * rhs
        if method == "dense":
            evals, evecs = self._eig(which)
            k = self.kernel_dim(which)
            coef = evecs.conj().T @ b
            coef[:k] = 0.0
            coef[k:] = coef[k:] / evals[k:]
            x = (evecs @ coef) / s
            stats["method"] = "dense"
        elif method == "cg":
            K = self.kernel_basis(which) * s[:, None]  # orthonormal in plain l2

            def apply(vec):
                vec = vec - K @ (K.conj().T @ vec)
                out = s * (lap @ (vec / s))
                return out - K @ (K.conj().T @ out)

            op = spla.LinearOperator((n, n), matvec=apply, dtype=complex)
            b_proj = b - K @ (K.conj().T @ b)
            maxiter = 10 * n
            y, info = spla.cg(op, b_proj, rtol=rtol, atol=0.0, maxiter=maxiter)
            res = float(np.linalg.norm(apply(y) - b_proj) / max(np.linalg.norm(b_proj), 1e-300))
            if info != 0 or res > 10 * rtol:
                raise SolverError(
                    f"cg failed after {maxiter} iterations, relative residual {res:.3e}"
                )
            x = y / s
            stats.update(method="cg", residual=res)
        else:
            raise ValueError(f"unknown solve method {method!r}")
        resid = lap @ x - rhs
        stats["residual"] = float(
            np.linalg.norm(resid) / max(np.linalg.norm(rhs), 1e-300)
        )
        return x, stats

    def harmonic_project(self, alpha: np.ndarray, which: str = "dbar") -> np.ndarray:
        """alpha - dbar Delta0^{-1} dbar* alpha (orthogonal onto ker dbar*)."""
        h = self.dbar_star @ alpha
        x, _ = self.delta0_solve(h, which=which)
        return alpha - self.dbar @ x


# ---------------------------------------------------------------------------
# complex builders


def _weights(geom: SurfaceGeometry, m: int, kind: str) -> tuple[np.ndarray, np.ndarray]:
    gf = conventions.L2_GLOBAL_FACTOR
    m2 = m * m
    if kind == "function":
        w0 = np.repeat(gf * geom.mass_rho, m2)
        w1 = np.repeat(gf * geom.area, m2)
    elif kind == "vector":
        w0 = np.repeat(geom.mass_rho2, m2)
        w1 = np.repeat(geom.rho * geom.area, m2)  # Beltrami pairing
    else:
        raise ValueError(kind)
    return w0, w1


@functools.lru_cache(maxsize=None)
def scalar_complex(surface: ConformalSurface) -> DolbeaultComplex:
    geom = geometry(surface)
    spin = np.ones_like(geom.grad_bar)
    transports = {"corner_vertex": geom.corner_vertex, "T": None}
    w0, w1 = _weights(geom, 1, "function")
    return DolbeaultComplex(
        m=1,
        n_vertices=geom.mass_rho.shape[0],
        n_faces=geom.area.shape[0],
        w0=w0,
        w1=w1,
        dbar=_assemble(geom.grad_bar, spin, transports, geom.mass_rho.shape[0], 1),
        dhol=_assemble(geom.grad_hol, spin, transports, geom.mass_rho.shape[0], 1),
    )


@functools.lru_cache(maxsize=None)
def tangent_complex(surface: ConformalSurface) -> DolbeaultComplex:
    """Vector fields -> Beltrami coefficients (chart-rotation twisted)."""
    geom = geometry(surface)
    spin = geom.corner_spin
    transports = {"corner_vertex": geom.corner_vertex, "T": None}
    w0, w1 = _weights(geom, 1, "vector")
    return DolbeaultComplex(
        m=1,
        n_vertices=geom.mass_rho.shape[0],
        n_faces=geom.area.shape[0],
        w0=w0,
        w1=w1,
        dbar=_assemble(geom.grad_bar, spin, transports, geom.mass_rho.shape[0], 1),
        dhol=_assemble(geom.grad_hol, spin, transports, geom.mass_rho.shape[0], 1),
    )


def corner_transports(surface: ConformalSurface, transport_per_he: np.ndarray) -> np.ndarray:
    """Unitary transport from each corner vertex frame into the face frame.

    The face frame is the frame of the corner with the lowest vertex
    index; other corners transport forward along the face boundary.
    """
    mesh = surface.mesh
    F = mesh.n_faces
    n = transport_per_he.shape[1]
    T = np.zeros((F, 3, n, n), dtype=complex)
    for f in range(F):
        verts = [int(mesh.origin[3 * f + k]) for k in range(3)]
        a = int(np.argmin(verts))
        for k in range(3):
            step = (a - k) % 3
            if step == 0:
                T[f, k] = np.eye(n)
            elif step == 1:
                T[f, k] = transport_per_he[3 * f + k]
            else:
                T[f, k] = transport_per_he[3 * f + (k + 1) % 3] @ transport_per_he[3 * f + k]
    return T


def endo_complex(surface: ConformalSurface, transport_per_he: np.ndarray) -> DolbeaultComplex:
    """End(E)-valued complex for a unitary edge-transport field.

    ``transport_per_he[h]`` maps the frame at origin(h) to the frame at
    head(h); values conjugate as T X T^H, so central phases drop out.
    """
    geom = geometry(surface)
    n = transport_per_he.shape[1]
    T = corner_transports(surface, transport_per_he)
    spin = np.ones((geom.area.shape[0], 3), dtype=complex)
    transports = {"corner_vertex": geom.corner_vertex, "T": T}
    w0, w1 = _weights(geom, n, "function")
    V = geom.mass_rho.shape[0]
    cx = DolbeaultComplex(
        m=n,
        n_vertices=V,
        n_faces=geom.area.shape[0],
        w0=w0,
        w1=w1,
        dbar=_assemble(geom.grad_bar, spin, transports, V, n),
        dhol=_assemble(geom.grad_hol, spin, transports, V, n),
    )
    cx._cache["corner_T"] = T
    return cx


# ---------------------------------------------------------------------------
# pointwise machinery shared by bundle and variation code


def vertex_to_face(cx: DolbeaultComplex, geom: SurfaceGeometry, x: np.ndarray) -> np.ndarray:
    """P1 barycenter value of a 0-cochain on each face, in the face frame.

    x has shape (V, m, m); returns (F, m, m).
    """
    T = cx._cache.get("corner_T")
    F, m = cx.n_faces, cx.m
    out = np.zeros((F, m, m), dtype=complex)
    cv = geom.corner_vertex
    for k in range(3):
        vals = x[cv[:, k]]
        if T is not None:
            vals = np.einsum("fab,fbc,fdc->fad", T[:, k], vals, np.conj(T[:, k]))
        out += vals
    return out / 3.0


def lift_to_vertices(
    cx: DolbeaultComplex, geom: SurfaceGeometry, x_face: np.ndarray
) -> np.ndarray:
    """Area-weighted average of a face field onto vertices, transported
    into vertex frames (inverse of the corner transports)."""
    T = cx._cache.get("corner_T")
    V, m = cx.n_vertices, cx.m
    out = np.zeros((V, m, m), dtype=complex)
    cv = geom.corner_vertex
    w = geom.area / 3.0
    for f in range(geom.area.shape[0]):
        for k in range(3):
            v = cv[f, k]
            val = x_face[f]
            if T is not None:
                Tm = T[f, k]
                val = Tm.conj().T @ val @ Tm
            out[v] += w[f] * val
    out /= geom.mass_area[:, None, None]
    return out
