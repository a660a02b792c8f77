"""Canonical conic programs and the primitives the relaxation builders use.

A :class:`ConicProgram` is ``minimize c @ z + offset`` subject to
``E z + f = 0`` and a list of cone memberships ``M z + h in K``.  Affine
expressions are batched: an :class:`Affine` is a stack of rows, and cone
blocks hold ``count`` consecutive cones of the same kind and size.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

NONNEGATIVE = "nonnegative"
SECOND_ORDER = "second_order"
ROTATED_SECOND_ORDER = "rotated_second_order"
PSD = "psd"
CONE_KINDS = (NONNEGATIVE, SECOND_ORDER, ROTATED_SECOND_ORDER, PSD)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL_FAILURE = "numerical_failure"
ITERATION_LIMIT = "iteration_limit"


class CapabilityError(RuntimeError):
    """The backend cannot represent a cone used by the program."""


def _widen(mat, width):
    if mat.shape[1] == width:
        return mat
    mat = mat.tocsr(copy=True)
    mat.resize((mat.shape[0], width))
    return mat


class Affine:
    """A stack of affine rows ``coef @ z + const``."""

    def __init__(self, coef, const):
        self.coef = sp.csr_matrix(coef)
        self.const = np.asarray(const, dtype=float).reshape(-1)
        if self.coef.shape[0] != self.const.shape[0]:
            raise ValueError("coefficient rows and constant length differ")

    @classmethod
    def var(cls, indices, coeffs=1.0):
        idx = np.atleast_1d(np.asarray(indices, dtype=np.int64)).reshape(-1)
        vals = np.broadcast_to(np.asarray(coeffs, dtype=float), idx.shape)
        width = int(idx.max()) + 1 if idx.size else 0
        coef = sp.csr_matrix((vals, (np.arange(idx.size), idx)), shape=(idx.size, width))
        return cls(coef, np.zeros(idx.size))

    @classmethod
    def constant(cls, values):
        values = np.atleast_1d(np.asarray(values, dtype=float)).reshape(-1)
        return cls(sp.csr_matrix((values.size, 0)), values)

    @classmethod
    def stack(cls, parts):
        parts = [p for p in parts if p.size]
        if not parts:
            return cls.constant([])
        width = max(p.width for p in parts)
        coef = sp.vstack([_widen(p.coef, width) for p in parts], format="csr")
        return cls(coef, np.concatenate([p.const for p in parts]))

    @property
    def size(self):
        return self.const.shape[0]

    @property
    def width(self):
        return self.coef.shape[1]

    def take(self, rows):
        rows = np.asarray(rows, dtype=np.int64)
        return Affine(self.coef[rows], self.const[rows])

    def _aligned(self, other):
        if not isinstance(other, Affine):
            other = Affine.constant(np.broadcast_to(np.asarray(other, dtype=float), (self.size,)))
        width = max(self.width, other.width)
        return _widen(self.coef, width), _widen(other.coef, width), other

    def __add__(self, other):
        a, b, other = self._aligned(other)
        return Affine(a + b, self.const + other.const)

    __radd__ = __add__

    def __sub__(self, other):
        a, b, other = self._aligned(other)
        return Affine(a - b, self.const - other.const)

    def __rsub__(self, other):
        return (-self) + other

    def __neg__(self):
        return Affine(-self.coef, -self.const)

    def __mul__(self, scale):
        scale = np.asarray(scale, dtype=float)
        if scale.ndim == 0:
            return Affine(self.coef * float(scale), self.const * float(scale))
        scale = np.broadcast_to(scale, (self.size,))
        return Affine(sp.diags(scale) @ self.coef, self.const * scale)

    __rmul__ = __mul__

    def value(self, z):
        z = np.asarray(z, dtype=float)
        return _widen(self.coef, z.shape[0]) @ z + self.const


@dataclass
class ConeBlock:
    kind: str
    dim: int
    expr: Affine

    @property
    def count(self):
        return self.expr.size // self.dim if self.dim else 0


@dataclass
class ConicProgram:
    num_vars: int = 0
    objective: np.ndarray = field(default_factory=lambda: np.zeros(0))
    offset: float = 0.0
    equalities: list = field(default_factory=list)
    cones: list = field(default_factory=list)
    names: list = field(default_factory=list)

    def add_variables(self, count, name="z"):
        start = self.num_vars
        self.num_vars += int(count)
        self.objective = np.concatenate([self.objective, np.zeros(int(count))])
        self.names.append((name, start, int(count)))
        return np.arange(start, self.num_vars)

    def add_objective(self, expr, weight=1.0):
        """Add ``sum(weight * expr)`` to the objective."""
        weight = np.broadcast_to(np.asarray(weight, dtype=float), (expr.size,))
        row = _widen(expr.coef, self.num_vars).T @ weight
        self.objective = self.objective + np.asarray(row).reshape(-1)
        self.offset += float(weight @ expr.const)

    def add_equality(self, expr):
        """Constrain every row of ``expr`` to zero."""
        if expr.size:
            self._check(expr)
            self.equalities.append(expr)

    def add_cone(self, kind, expr, dim=1):
        if kind not in CONE_KINDS:
            raise ValueError(f"unknown cone kind {kind!r}")
        if kind == NONNEGATIVE:
            dim = 1
        elif kind == SECOND_ORDER and dim < 2:
            raise ValueError("second-order cones need at least 2 expressions")
        elif kind == ROTATED_SECOND_ORDER and dim < 3:
            raise ValueError("rotated second-order cones need at least 3 expressions")
        elif kind == PSD and int(round(np.sqrt(dim))) ** 2 != dim:
            raise ValueError("psd cones need a square number of expressions")
        if expr.size % dim:
            raise ValueError(f"{expr.size} rows do not split into cones of size {dim}")
        if expr.size:
            self._check(expr)
            self.cones.append(ConeBlock(kind, dim, expr))

    def _check(self, expr):
        if expr.width > self.num_vars:
            raise ValueError(f"expression references variable {expr.width - 1} beyond {self.num_vars}")

    @property
    def cone_kinds(self):
        return {block.kind for block in self.cones}

    def equality_system(self):
        if not self.equalities:
            return sp.csr_matrix((0, self.num_vars)), np.zeros(0)
        stacked = Affine.stack(self.equalities)
        return _widen(stacked.coef, self.num_vars), stacked.const

    def objective_value(self, z):
        return float(self.objective @ z + self.offset)


# --- reformulation helpers ----------------------------------------------------


def add_abs_epigraph(prog, expr):
    """New variables ``s >= |expr|`` (one per row); returns their indices."""
    s = prog.add_variables(expr.size, "abs")
    sv = Affine.var(s)
    prog.add_cone(NONNEGATIVE, Affine.stack([sv - expr, sv + expr]))
    return s


def add_norm2_epigraph(prog, exprs, dim=None):
    """New variables ``t >= ||w||_2`` for consecutive groups of ``dim`` rows."""
    dim = exprs.size if dim is None else dim
    if dim < 1 or exprs.size % dim:
        raise ValueError("expressions do not split into groups of the given size")
    count = exprs.size // dim
    t = prog.add_variables(count, "norm2")
    prog.add_cone(SECOND_ORDER, _interleave([Affine.var(t)], [exprs], dim), dim + 1)
    return t


def add_quadratic_upper_bound(prog, lin, vec):
    """Enforce ``||vec_k||^2 <= lin_k`` for each row ``k`` of ``lin``.

    ``vec`` holds ``lin.size`` consecutive groups.  Each bound becomes the
    rotated cone ``2 * (lin_k / 2) * 1 >= ||vec_k||^2``.
    """
    if lin.size == 0:
        return
    if vec.size % lin.size:
        raise ValueError("vector rows do not split evenly across bounds")
    dim = vec.size // lin.size
    head = [lin * 0.5, Affine.constant(np.ones(lin.size))]
    prog.add_cone(ROTATED_SECOND_ORDER, _interleave(head, [vec], dim), dim + 2)


def _interleave(heads, tails, tail_dim):
    """Rows ordered cone by cone: each head's k-th row, then the k-th tail group."""
    count = heads[0].size
    width = len(heads) + tail_dim * len(tails)
    stacked = Affine.stack(heads + tails)
    order = np.empty((count, width), dtype=np.int64)
    base = 0
    for j, h in enumerate(heads):
        order[:, j] = base + np.arange(count)
        base += h.size
    col = len(heads)
    for tail in tails:
        order[:, col : col + tail_dim] = base + np.arange(count * tail_dim).reshape(count, tail_dim)
        base += tail.size
        col += tail_dim
    return stacked.take(order.reshape(-1))


def psd_vectorize(matrix_rows):
    """Column-wise rows of a symmetric matrix given as a nested list of Affines."""
    d = len(matrix_rows)
    return Affine.stack([matrix_rows[i][j] for j in range(d) for i in range(d)])


# --- certification --------------------------------------------------------------


def _cone_violation(kind, dim, values):
    vals = values.reshape(-1, dim)
    if kind == NONNEGATIVE:
        return float(np.max(-vals, initial=0.0))
    if kind == SECOND_ORDER:
        return float(np.max(np.linalg.norm(vals[:, 1:], axis=1) - vals[:, 0], initial=0.0))
    if kind == ROTATED_SECOND_ORDER:
        u, v, w = vals[:, 0], vals[:, 1], vals[:, 2:]
        lhs = np.sqrt((u - v) ** 2 + 2 * np.sum(w**2, axis=1))
        return float(np.max(np.concatenate([lhs - (u + v), -u, -v]), initial=0.0))
    if kind == PSD:
        d = int(round(np.sqrt(dim)))
        worst = 0.0
        for row in vals:
            mat = row.reshape(d, d, order="F")
            worst = max(worst, float(-np.linalg.eigvalsh(0.5 * (mat + mat.T)).min()))
            worst = max(worst, float(np.abs(mat - mat.T).max()))
        return worst
    raise ValueError(kind)


def residuals(prog, primal):
    """Max-norm equality and cone violations of ``primal``."""
    z = np.asarray(primal, dtype=float)
    if z.shape != (prog.num_vars,):
        raise ValueError(f"primal has shape {z.shape}, expected ({prog.num_vars},)")
    E, f = prog.equality_system()
    eq = float(np.abs(E @ z + f).max()) if f.size else 0.0
    cone = 0.0
    for block in prog.cones:
        cone = max(cone, _cone_violation(block.kind, block.dim, block.expr.value(z)))
    return {"equality_residual": eq, "cone_residual": cone}


def dump(prog):
    """Stable line-oriented text rendering of ``prog`` for diffing."""

    def terms(mat, row):
        start, stop = mat.indptr[row], mat.indptr[row + 1]
        order = np.argsort(mat.indices[start:stop], kind="stable")
        cols, vals = mat.indices[start:stop][order], mat.data[start:stop][order]
        return " ".join(f"{c}:{v:.17g}" for c, v in zip(cols, vals) if v != 0)

    lines = [f"vars {prog.num_vars}"]
    for name, start, count in prog.names:
        lines.append(f"block {name} {start} {count}")
    for j in np.nonzero(prog.objective)[0]:
        lines.append(f"obj {j} {prog.objective[j]:.17g}")
    lines.append(f"offset {prog.offset:.17g}")
    E, f = prog.equality_system()
    E = E.tocsr()
    E.sum_duplicates()
    for r in range(E.shape[0]):
        lines.append(f"eq {r} {terms(E, r)} | {f[r]:.17g}")
    for b, block in enumerate(prog.cones):
        mat = _widen(block.expr.coef, prog.num_vars).tocsr()
        mat.sum_duplicates()
        lines.append(f"cone {b} {block.kind} dim={block.dim} count={block.count}")
        for r in range(mat.shape[0]):
            lines.append(f"  row {r} {terms(mat, r)} | {block.expr.const[r]:.17g}")
    return "\n".join(lines) + "\n"


# --- backends -------------------------------------------------------------------


@dataclass
class BackendResult:
    status: str
    primal: np.ndarray | None
    objective_value: float
    solve_time: float
    message: str = ""


class Backend:
    """A convex solver able to handle some subset of :data:`CONE_KINDS`."""

    name = "abstract"
    supported_cones = frozenset()

    def solve(self, prog):
        raise NotImplementedError


class ClarabelBackend(Backend):
    """Interior-point reference backend built on Clarabel.

    Rotated cones are mapped to standard second-order cones via
    ``(u + v, u - v, sqrt(2) w)``; psd blocks become scaled upper triangles.
    Passing ``psd=False`` yields an SOC-only backend.
    """

    def __init__(self, psd=True, tol=1e-9, max_iter=200, certify_tol=1e-6):
        self.psd = psd
        self.tol = tol
        self.max_iter = max_iter
        self.certify_tol = certify_tol
        self.name = "clarabel" if psd else "clarabel-socp"
        kinds = {NONNEGATIVE, SECOND_ORDER, ROTATED_SECOND_ORDER}
        if psd:
            kinds.add(PSD)
        self.supported_cones = frozenset(kinds)

    def _settings(self):
        import clarabel

        settings = clarabel.DefaultSettings()
        settings.verbose = False
        settings.max_iter = self.max_iter
        settings.tol_gap_abs = self.tol
        settings.tol_gap_rel = self.tol
        settings.tol_feas = self.tol
        settings.tol_ktratio = 1e-7
        return settings

    def solve(self, prog):
        import clarabel

        n = prog.num_vars
        rows_A, rows_b, cones = [], [], []
        E, f = prog.equality_system()
        if f.size:
            rows_A.append(E)
            rows_b.append(-f)
            cones.append(clarabel.ZeroConeT(f.size))
        for block in prog.cones:
            coef, const = _widen(block.expr.coef, n), block.expr.const
            if block.kind == NONNEGATIVE:
                rows_A.append(-coef)
                rows_b.append(const)
                cones.append(clarabel.NonnegativeConeT(block.count))
            elif block.kind in (SECOND_ORDER, ROTATED_SECOND_ORDER):
                if block.kind == ROTATED_SECOND_ORDER:
                    mix = _rsoc_to_soc(block.dim, block.count)
                    coef, const = mix @ coef, mix @ const
                rows_A.append(-coef)
                rows_b.append(const)
                cones.extend(clarabel.SecondOrderConeT(block.dim) for _ in range(block.count))
            elif block.kind == PSD:
                d = int(round(np.sqrt(block.dim)))
                mix = _svec_upper(d, block.count)
                rows_A.append(-(mix @ coef))
                rows_b.append(mix @ const)
                cones.extend(clarabel.PSDTriangleConeT(d) for _ in range(block.count))
        A = sp.vstack(rows_A, format="csc") if rows_A else sp.csc_matrix((0, n))
        b = np.concatenate(rows_b) if rows_b else np.zeros(0)
        P = sp.csc_matrix((n, n))
        start = time.perf_counter()
        solver = clarabel.DefaultSolver(P, prog.objective.copy(), A, b, cones, self._settings())
        sol = solver.solve()
        elapsed = time.perf_counter() - start
        status = str(sol.status).split(".")[-1]
        x = np.asarray(sol.x, dtype=float)
        if status in ("Solved", "AlmostSolved"):
            res = residuals(prog, x)
            if max(res.values()) <= self.certify_tol:
                return BackendResult(OPTIMAL, x, prog.objective_value(x), elapsed, status)
            return BackendResult(NUMERICAL_FAILURE, None, float("nan"), elapsed,
                                 f"{status} but residuals {res}")
        if "PrimalInfeasible" in status:
            return BackendResult(INFEASIBLE, None, float("inf"), elapsed, status)
        if "DualInfeasible" in status:
            return BackendResult(UNBOUNDED, None, float("-inf"), elapsed, status)
        if status in ("MaxIterations", "MaxTime"):
            return BackendResult(ITERATION_LIMIT, None, float("nan"), elapsed, status)
        return BackendResult(NUMERICAL_FAILURE, None, float("nan"), elapsed, status)


def _rsoc_to_soc(dim, count):
    block = sp.lil_matrix((dim, dim))
    block[0, 0] = block[0, 1] = 1.0
    block[1, 0], block[1, 1] = 1.0, -1.0
    for k in range(2, dim):
        block[k, k] = np.sqrt(2.0)
    return sp.block_diag([block.tocsr()] * count, format="csr")


def _svec_upper(d, count):
    """Maps column-wise d*d rows to Clarabel's scaled upper-triangle ordering."""
    rows, cols, vals = [], [], []
    r = 0
    for j in range(d):
        for i in range(j + 1):
            if i == j:
                rows.append(r), cols.append(j * d + i), vals.append(1.0)
            else:
                h = np.sqrt(2.0) / 2.0
                rows += [r, r]
                cols += [j * d + i, i * d + j]
                vals += [h, h]
            r += 1
    block = sp.csr_matrix((vals, (rows, cols)), shape=(r, d * d))
    return sp.block_diag([block] * count, format="csr")


BACKENDS = {
    "clarabel": lambda: ClarabelBackend(psd=True),
    "clarabel-socp": lambda: ClarabelBackend(psd=False),
}


def get_backend(name_or_backend=None):
    if name_or_backend is None:
        return ClarabelBackend()
    if isinstance(name_or_backend, Backend):
        return name_or_backend
    try:
        return BACKENDS[name_or_backend]()
    except KeyError:
        raise ValueError(f"unknown backend {name_or_backend!r}; choose from {sorted(BACKENDS)}") from None


def solve(prog, backend=None):
    backend = get_backend(backend)
    missing = prog.cone_kinds - backend.supported_cones
    if missing:
        raise CapabilityError(f"backend {backend.name!r} does not support cones {sorted(missing)}")
    return backend.solve(prog)
