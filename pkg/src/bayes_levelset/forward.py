"""P1 finite elements for the diffusion/absorption problem with element data.

The unknown is the pair ``(u, U)``: nodal values of ``u`` on the mesh plus one
constant ``U_l`` per boundary element. The discrete operator represents

    B((u,U),(w,W)) = int a grad u . grad w + int b u w
                     + sum_l 1/2 int_{O_l} (u - U_l)(w - W_l) dS

and a flux pattern ``F`` loads the element slots with ``-F_l``.

Coefficients are piecewise constant on triangles, so every integral is
computed exactly. The system is factored once per coefficient pair with a
banded Cholesky factorization after a reverse Cuthill-McKee reordering and
reused for all flux patterns.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee

from .mesh import Mesh, check_admissible

__all__ = [
    "ForwardModel",
    "SystemOperator",
    "SolutionPair",
    "MeasurementSet",
    "SingularSystemError",
    "adjacent_patterns",
    "unit_patterns",
    "pattern_set",
    "assemble",
    "solve",
    "measure",
]

RESIDUAL_TOL = 1e-10


class SingularSystemError(RuntimeError):
    """The system matrix could not be factored as positive definite."""


def adjacent_patterns(num_elements: int) -> np.ndarray:
    """The ``L - 1`` flux patterns ``e_j - e_{j+1}`` as a ``(L-1, L)`` array."""
    L = int(num_elements)
    F = np.zeros((L - 1, L))
    idx = np.arange(L - 1)
    F[idx, idx] = 1.0
    F[idx, idx + 1] = -1.0
    return F


def unit_patterns(num_elements: int) -> np.ndarray:
    """One pattern per element: unit flux through element ``l`` only.

    These carry net flux, which the absorption term removes from the
    domain, so unlike zero-sum patterns they probe ``b`` directly.
    """
    return np.eye(int(num_elements))


PATTERN_SETS = {"adjacent": adjacent_patterns, "unit": unit_patterns}


def pattern_set(name: str, num_elements: int) -> np.ndarray:
    """Named flux-pattern family: ``"adjacent"`` or ``"unit"``."""
    if name not in PATTERN_SETS:
        raise ValueError(f"unknown pattern set {name!r}; choose from {sorted(PATTERN_SETS)}")
    if num_elements < 2:
        raise ValueError("need at least two boundary elements")
    return PATTERN_SETS[name](num_elements)


def _as_patterns(patterns, L):
    F = np.atleast_2d(np.asarray(patterns, dtype=float))
    if F.ndim != 2 or F.shape[1] != L:
        raise ValueError(f"flux patterns must have {L} entries each, got shape {F.shape}")
    if F.shape[0] < 1:
        raise ValueError("need at least one flux pattern")
    if not np.all(np.isfinite(F)):
        raise ValueError("flux patterns must be finite")
    if np.any(np.all(F == 0, axis=1)):
        raise ValueError("a flux pattern is identically zero")
    return F


@dataclass(frozen=True)
class SolutionPair:
    """Nodal interior values ``u`` and element values ``U`` of one solve."""

    interior: np.ndarray
    electrode: np.ndarray


@dataclass(frozen=True)
class MeasurementSet:
    """Concatenated element data ``y`` for ``J`` flux patterns.

    ``data`` stacks the per-pattern vectors: entries ``j*L:(j+1)*L`` belong
    to ``patterns[j]``. The noise covariance is ``noise_sigma**2 * I``.
    """

    patterns: np.ndarray
    data: np.ndarray
    noise_sigma: float = 0.0
    clean: np.ndarray | None = None

    def __post_init__(self):
        J, L = self.patterns.shape
        if self.data.shape != (J * L,):
            raise ValueError(f"data must have length L*J = {J * L}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")

    @property
    def num_elements(self) -> int:
        return self.patterns.shape[1]

    @property
    def noise_cov(self) -> np.ndarray:
        """Diagonal of the (block-diagonal, scalar) noise covariance."""
        return np.full(self.data.size, self.noise_sigma**2)

    def blocks(self) -> np.ndarray:
        """Data reshaped to ``(J, L)``."""
        return self.data.reshape(self.patterns.shape)

    def save(self, path, **extra) -> None:
        """Store as ``.npz``; ``extra`` arrays ride along under their own keys."""
        arrays = dict(patterns=self.patterns, data=self.data, noise_sigma=self.noise_sigma)
        if self.clean is not None:
            arrays["clean"] = self.clean
        np.savez_compressed(path, **arrays, **extra)

    @classmethod
    def load(cls, path) -> "MeasurementSet":
        with np.load(path) as z:
            clean = z["clean"] if "clean" in z.files else None
            return cls(z["patterns"], z["data"], float(z["noise_sigma"]), clean)


class ForwardModel:
    """Assembly data for one mesh, reusable across many coefficient pairs.

    All geometry-dependent work (local element matrices, sparsity pattern,
    bandwidth-reducing permutation) is done here once; :meth:`assemble` then
    costs two sparse mat-vecs plus a banded factorization.
    """

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        nv, nt, L = mesh.num_vertices, mesh.num_triangles, mesh.num_elements
        self.num_vertices = nv
        self.num_elements = L
        self.size = N = nv + L

        tri = mesh.triangles
        p = mesh.vertices[tri]
        area = mesh.areas
        # gradients of the barycentric coordinates: solve [1 x y] system per triangle
        H = np.concatenate([np.ones((nt, 3, 1)), p], axis=2)
        grads = np.linalg.solve(H, np.broadcast_to(np.eye(3), (nt, 3, 3)))[:, 1:, :]
        stiff = area[:, None, None] * np.einsum("kdi,kdj->kij", grads, grads)
        mass = area[:, None, None] / 12.0 * (np.ones((3, 3)) + np.eye(3))

        rows = np.repeat(tri, 3, axis=1).ravel()
        cols = np.tile(tri, (1, 3)).ravel()
        tri_id = np.repeat(np.arange(nt), 9)

        be = mesh.boundary_edges
        elem = mesh.edge_element
        on = elem > 0
        e0, e1, h = be[on, 0], be[on, 1], mesh.edge_lengths[on]
        slot = nv + elem[on] - 1
        # 1/2 int (u - U)(w - W) over each element edge, exact for linear u, w
        b_rows = np.concatenate([e0, e1, e0, e1, e0, e1, slot, slot, slot])
        b_cols = np.concatenate([e0, e1, e1, e0, slot, slot, e0, e1, slot])
        b_vals = np.concatenate(
            [h / 6, h / 6, h / 12, h / 12, -h / 4, -h / 4, -h / 4, -h / 4, h / 2]
        )

        all_rows = np.concatenate([rows, rows, b_rows])
        all_cols = np.concatenate([cols, cols, b_cols])
        keys = all_rows * N + all_cols
        uniq, inv = np.unique(keys, return_inverse=True)
        self._csr_rows = uniq // N
        self._csr_cols = uniq % N
        nnz = uniq.size
        n9 = 9 * nt
        # entry-to-coefficient maps: data = Qa @ a + Qb @ b + qc
        self._Qa = sp.csr_matrix((stiff.ravel(), (inv[:n9], tri_id)), shape=(nnz, nt))
        self._Qb = sp.csr_matrix(
            (np.broadcast_to(mass, stiff.shape).ravel(), (inv[n9:2 * n9], tri_id)),
            shape=(nnz, nt),
        )
        self._qc = np.bincount(inv[2 * n9:], weights=b_vals, minlength=nnz)
        pattern = sp.csr_matrix(
            (np.ones(nnz), (self._csr_rows, self._csr_cols)), shape=(N, N)
        )
        self._csr_shape_template = pattern

        perm = reverse_cuthill_mckee(pattern, symmetric_mode=True).astype(np.int64)
        iperm = np.empty_like(perm)
        iperm[perm] = np.arange(N)
        self.perm, self.iperm = perm, iperm
        pr, pc = iperm[self._csr_rows], iperm[self._csr_cols]
        upper = pr <= pc
        self.bandwidth = u = int((pc - pr)[upper].max())
        band_pos = (u + pr[upper] - pc[upper]) * N + pc[upper]
        sel = sp.csr_matrix(
            (np.ones(upper.sum()), (band_pos, np.flatnonzero(upper))),
            shape=((u + 1) * N, nnz),
        )
        self._Ba = (sel @ self._Qa).tocsr()
        self._Bb = (sel @ self._Qb).tocsr()
        self._bc = sel @ self._qc

    # -- assembly ---------------------------------------------------------

    def _check_coefficients(self, a, b):
        nt = self.mesh.num_triangles
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if a.shape != (nt,) or b.shape != (nt,):
            raise ValueError(
                f"coefficient fields must have one value per triangle ({nt}), "
                f"got {a.shape} and {b.shape}"
            )
        return check_admissible(a, name="a"), check_admissible(b, name="b")

    def matrix_data(self, a, b) -> np.ndarray:
        """CSR data of the system matrix (entries aligned with the sparsity pattern)."""
        return self._Qa @ a + self._Qb @ b + self._qc

    def matrix(self, a, b) -> sp.csr_matrix:
        a, b = self._check_coefficients(a, b)
        return self._matrix_unchecked(a, b)

    def _matrix_unchecked(self, a, b):
        return sp.csr_matrix(
            (self.matrix_data(a, b), (self._csr_rows, self._csr_cols)),
            shape=(self.size, self.size),
        )

    def assemble(self, a, b, check=True) -> "SystemOperator":
        """Assemble and factor the system for coefficient fields ``a`` and ``b``."""
        if check:
            a, b = self._check_coefficients(a, b)
        ab = (self._Ba @ a + self._Bb @ b + self._bc).reshape(self.bandwidth + 1, self.size)
        try:
            factor = sla.cholesky_banded(ab, lower=False, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise SingularSystemError(
                f"system matrix is not positive definite ({exc})"
            ) from None
        return SystemOperator(self, a, b, factor)

    def rhs(self, patterns) -> np.ndarray:
        """Load vectors, one column per pattern: zero interior, ``-F_l`` on slots."""
        F = _as_patterns(patterns, self.num_elements)
        R = np.zeros((self.size, F.shape[0]))
        R[self.num_vertices:] = -F.T
        return R

    def evaluate(self, a, b, patterns) -> np.ndarray:
        """Concatenated element data for all patterns (the measurement map)."""
        op = self.assemble(a, b, check=False)
        return op.solve_many(patterns)[self.num_vertices:].T.ravel()


class SystemOperator:
    """A factored system for one coefficient pair on one mesh."""

    def __init__(self, model: ForwardModel, a, b, factor):
        self.model = model
        self.mesh = model.mesh
        self.a = a
        self.b = b
        self.factor = factor

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        return self.model._matrix_unchecked(self.a, self.b)

    @property
    def pivots(self) -> np.ndarray:
        """Diagonal of the Cholesky factor (all positive)."""
        return self.factor[-1]

    def _raw_solve(self, R):
        m = self.model
        y = sla.cho_solve_banded((self.factor, False), R[m.perm], check_finite=False)
        x = np.empty_like(y)
        x[m.perm] = y
        return x

    def solve_many(self, patterns, refine=False) -> np.ndarray:
        """Solutions for several patterns as columns of an ``(N, J)`` array."""
        R = self.model.rhs(patterns)
        X = self._raw_solve(R)
        if refine:
            rnorm = np.linalg.norm(R, axis=0)
            for _ in range(3):
                res = R - self.matrix @ X
                if np.all(np.linalg.norm(res, axis=0) <= RESIDUAL_TOL * rnorm):
                    break
                X += self._raw_solve(res)
            else:
                raise SingularSystemError("residual above tolerance after refinement")
        return X

    def solve(self, pattern) -> SolutionPair:
        """Solve for one pattern, refining until the relative residual is <= 1e-10."""
        F = np.asarray(pattern, dtype=float)
        if F.shape != (self.model.num_elements,):
            raise ValueError(f"pattern must have {self.model.num_elements} entries")
        if not np.any(F):
            return SolutionPair(np.zeros(self.model.num_vertices), np.zeros(F.size))
        x = self.solve_many(F[None], refine=True)[:, 0]
        nv = self.model.num_vertices
        return SolutionPair(x[:nv], x[nv:])


# -- functional interface -------------------------------------------------

_MODEL_CACHE: dict[int, ForwardModel] = {}


def _model_for(mesh: Mesh) -> ForwardModel:
    model = _MODEL_CACHE.get(id(mesh))
    if model is None or model.mesh is not mesh:
        model = ForwardModel(mesh)
        _MODEL_CACHE.clear()
        _MODEL_CACHE[id(mesh)] = model
    return model


def assemble(mesh: Mesh, a, b) -> SystemOperator:
    """Assemble and factor the system for ``(a, b)`` on ``mesh``."""
    return _model_for(mesh).assemble(a, b)


def solve(op: SystemOperator, pattern) -> SolutionPair:
    return op.solve(pattern)


def measure(mesh: Mesh, a, b, patterns) -> MeasurementSet:
    """Noise-free element data for every flux pattern, from one factorization."""
    model = _model_for(mesh)
    F = _as_patterns(patterns, model.num_elements)
    op = model.assemble(a, b)
    X = op.solve_many(F, refine=True)
    data = X[model.num_vertices:].T.ravel()
    return MeasurementSet(F, data, 0.0, data.copy())
