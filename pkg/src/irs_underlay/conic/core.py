"""Cone programs in the form  min c'x  s.t.  b - A x in K,  solved with Clarabel.

Cone list entries are ``(kind, dim)`` with kind one of ``zero``, ``nonneg``,
``soc`` (dim = vector length, first entry is the norm bound) and ``psd``
(dim = matrix order n; the slice holds the upper triangle of a symmetric
matrix column by column, off-diagonal entries multiplied by sqrt(2), so that
the Euclidean inner product of two slices equals the trace inner product).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import clarabel
import numpy as np
import scipy.sparse as sp

OPTIMAL = "Optimal"
INACCURATE = "Inaccurate"
INFEASIBLE = "Infeasible"
UNBOUNDED = "Unbounded"
MAXITER = "MaxIter"
NUMERICAL = "NumericalFailure"

# residual level at which a stalled solve is still reported as usable
RESCUE_TOL = 1e-6

_STATUS = {
    "Solved": OPTIMAL,
    "AlmostSolved": INACCURATE,
    "PrimalInfeasible": INFEASIBLE,
    "AlmostPrimalInfeasible": INFEASIBLE,
    "DualInfeasible": UNBOUNDED,
    "AlmostDualInfeasible": UNBOUNDED,
    "MaxIterations": MAXITER,
    "MaxTime": MAXITER,
}


def cone_size(kind: str, dim: int) -> int:
    return dim * (dim + 1) // 2 if kind == "psd" else dim


@dataclass
class ConicProblem:
    c: np.ndarray
    A: sp.csc_matrix
    b: np.ndarray
    cones: list = field(default_factory=list)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.A = sp.csc_matrix(self.A, dtype=float)
        m = sum(cone_size(k, d) for k, d in self.cones)
        if self.A.shape != (m, self.c.size) or self.b.size != m:
            raise ValueError(f"inconsistent dimensions: A{self.A.shape}, b{self.b.size}, cones {m}, n {self.c.size}")
        for kind, dim in self.cones:
            if kind not in ("zero", "nonneg", "soc", "psd") or dim < 1:
                raise ValueError(f"bad cone ({kind}, {dim})")

    @property
    def shape(self):
        return self.A.shape


@dataclass
class ConicSolution:
    status: str
    x: np.ndarray
    z: np.ndarray
    s: np.ndarray
    objective: float
    dual_objective: float
    residuals: dict
    iterations: int

    @property
    def ok(self) -> bool:
        return self.status in (OPTIMAL, INACCURATE)


def _clarabel_cones(cones):
    out = []
    for kind, dim in cones:
        if kind == "zero":
            out.append(clarabel.ZeroConeT(dim))
        elif kind == "nonneg":
            out.append(clarabel.NonnegativeConeT(dim))
        elif kind == "soc":
            out.append(clarabel.SecondOrderConeT(dim))
        else:
            out.append(clarabel.PSDTriangleConeT(dim))
    return out


def residuals(p: ConicProblem, x, s, z) -> dict:
    """Scaled residuals matching the solver's own termination tests."""
    Ax = p.A @ x
    pobj = float(p.c @ x)
    dobj = float(-p.b @ z)
    prim = np.linalg.norm(Ax + s - p.b, np.inf) / max(1.0, np.linalg.norm(p.b, np.inf) + np.linalg.norm(x, np.inf) + np.linalg.norm(s, np.inf))
    dual = np.linalg.norm(p.A.T @ z + p.c, np.inf) / max(1.0, np.linalg.norm(p.c, np.inf) + np.linalg.norm(z, np.inf))
    gap = abs(pobj - dobj) / max(1.0, min(abs(pobj), abs(dobj)))
    return {"primal": prim, "dual": dual, "gap": gap}


def solve(p: ConicProblem, tol: float = 1e-8, max_iter: int = 200) -> ConicSolution:
    """Solve with Clarabel; on a numerical failure retry at looser tolerances up to RESCUE_TOL."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    sol = _solve_once(p, tol, max_iter)
    while sol.status == NUMERICAL and tol < RESCUE_TOL:
        tol = min(10 * tol, RESCUE_TOL)
        sol = _solve_once(p, tol, max_iter)
    return sol


def _solve_once(p: ConicProblem, tol: float, max_iter: int) -> ConicSolution:
    n = p.c.size
    st = clarabel.DefaultSettings()
    st.verbose = False
    st.max_iter = int(max_iter)
    st.tol_feas = st.tol_gap_abs = st.tol_gap_rel = tol
    st.tol_infeas_abs = st.tol_infeas_rel = tol
    st.presolve_enable = False
    try:
        raw = clarabel.DefaultSolver(sp.csc_matrix((n, n)), p.c, p.A, p.b, _clarabel_cones(p.cones), st).solve()
    except BaseException as exc:  # the Rust side can panic on malformed input
        if isinstance(exc, KeyboardInterrupt):
            raise
        nan = np.full(n, np.nan)
        return ConicSolution(NUMERICAL, nan, np.full(p.b.size, np.nan), np.full(p.b.size, np.nan),
                             np.nan, np.nan, {}, 0)
    x, z, s = np.asarray(raw.x), np.asarray(raw.z), np.asarray(raw.s)
    status = _STATUS.get(str(raw.status), NUMERICAL)
    res = {}
    if status in (OPTIMAL, INACCURATE) or (status == NUMERICAL and np.all(np.isfinite(x))):
        res = residuals(p, x, s, z)
    if status == NUMERICAL and res and max(res.values()) <= RESCUE_TOL:
        # stalled close to the optimum: the iterate is still usable
        status = INACCURATE
    elif status not in (OPTIMAL, INACCURATE):
        res = {}
    return ConicSolution(status, x, z, s, float(p.c @ x), float(-p.b @ z), res, int(raw.iterations))


def dump(p: ConicProblem, path: str | Path) -> None:
    """Text dump: header ``m n nnz``, cone lines ``cone kind dim``, then
    ``c`` (n values), ``b`` (m values) and ``A`` as ``row col value`` triplets."""
    A = p.A.tocoo()
    lines = [f"{p.A.shape[0]} {p.A.shape[1]} {A.nnz}"]
    lines += [f"cone {k} {d}" for k, d in p.cones]
    lines.append("c " + " ".join(f"{v:.17g}" for v in p.c))
    lines.append("b " + " ".join(f"{v:.17g}" for v in p.b))
    lines += [f"{i} {j} {v:.17g}" for i, j, v in zip(A.row, A.col, A.data)]
    Path(path).write_text("\n".join(lines) + "\n")


def load(path: str | Path) -> ConicProblem:
    rows = Path(path).read_text().splitlines()
    m, n, nnz = map(int, rows[0].split())
    cones, i = [], 1
    while rows[i].startswith("cone"):
        _, kind, dim = rows[i].split()
        cones.append((kind, int(dim)))
        i += 1
    c = np.array(rows[i].split()[1:], dtype=float)
    b = np.array(rows[i + 1].split()[1:], dtype=float)
    trip = np.array([r.split() for r in rows[i + 2:i + 2 + nnz]], dtype=float).reshape(-1, 3)
    A = sp.csc_matrix((trip[:, 2], (trip[:, 0].astype(int), trip[:, 1].astype(int))), shape=(m, n))
    return ConicProblem(c, A, b, cones)
