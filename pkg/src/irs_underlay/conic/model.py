"""A minimal modeling layer: complex affine expressions over real variables.

An :class:`Affine` of shape ``s`` stores ``coef`` with shape ``s + (nv,)`` and
``const`` with shape ``s``; its value is ``coef @ x + const`` for the real
decision vector ``x``.  Complex and Hermitian variables are built from real
ones, and Hermitian PSD constraints are posed through the real embedding
``[[Re X, -Im X], [Im X, Re X]]``.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .core import ConicProblem, ConicSolution, solve

SQRT2 = np.sqrt(2.0)


class Affine:
    __slots__ = ("coef", "const")
    __array_ufunc__ = None  # make ndarray (op) Affine defer to the reflected method

    def __init__(self, coef, const=None):
        self.coef = np.asarray(coef)
        self.const = np.zeros(self.coef.shape[:-1], dtype=self.coef.dtype) if const is None else np.asarray(const)

    # -- shape helpers
    @property
    def shape(self):
        return self.const.shape

    @property
    def nv(self):
        return self.coef.shape[-1]

    def _padded(self, nv):
        if nv == self.nv:
            return self.coef
        pad = np.zeros(self.coef.shape[:-1] + (nv - self.nv,), dtype=self.coef.dtype)
        return np.concatenate([self.coef, pad], axis=-1)

    @staticmethod
    def lift(val, nv=0):
        if isinstance(val, Affine):
            return val
        val = np.asarray(val)
        return Affine(np.zeros(val.shape + (nv,), dtype=val.dtype), val)

    # -- arithmetic
    def __add__(self, other):
        other = Affine.lift(other)
        nv = max(self.nv, other.nv)
        a, b = self._padded(nv), other._padded(nv)
        shape = np.broadcast_shapes(self.shape, other.shape)
        a = np.broadcast_to(a, shape + (nv,))
        b = np.broadcast_to(b, shape + (nv,))
        return Affine(a + b, self.const + other.const)

    __radd__ = __add__

    def __neg__(self):
        return Affine(-self.coef, -self.const)

    def __sub__(self, other):
        return self + (-Affine.lift(other))

    def __rsub__(self, other):
        return Affine.lift(other) + (-self)

    def __mul__(self, k):
        if isinstance(k, Affine):
            raise TypeError("product of two affine expressions is not affine")
        k = np.asarray(k)
        return Affine(self.coef * k[..., None], self.const * k)

    __rmul__ = __mul__

    def __truediv__(self, k):
        return self * (1.0 / np.asarray(k))

    def __matmul__(self, A):
        A = np.asarray(A)
        if self.coef.ndim == 2:  # vector @ matrix
            return Affine(np.einsum("iv,ij->jv", self.coef, A), self.const @ A)
        if A.ndim == 1:  # matrix @ vector
            return Affine(np.einsum("ijv,j->iv", self.coef, A), self.const @ A)
        coef = np.moveaxis(np.tensordot(self.coef, A, axes=([1], [0])), 1, 2)
        return Affine(coef, self.const @ A)

    def __rmatmul__(self, A):
        A = np.asarray(A)
        return Affine(np.tensordot(A, self.coef, axes=([A.ndim - 1], [0])), A @ self.const)

    def __getitem__(self, idx):
        if not isinstance(idx, tuple):
            idx = (idx,)
        return Affine(self.coef[idx], self.const[idx])

    # -- structure
    @property
    def T(self):
        return Affine(np.swapaxes(self.coef, 0, 1), self.const.T)

    def conj(self):
        return Affine(np.conj(self.coef), np.conj(self.const))

    @property
    def H(self):
        return self.T.conj()

    @property
    def real(self):
        return Affine(np.real(self.coef), np.real(self.const))

    @property
    def imag(self):
        return Affine(np.imag(self.coef), np.imag(self.const))

    def reshape(self, *shape):
        const = self.const.reshape(*shape)
        return Affine(self.coef.reshape(const.shape + (self.nv,)), const)

    def ravel(self):
        return self.reshape(-1)

    def sum(self, axis=None):
        if axis is None:
            return Affine(self.coef.reshape(-1, self.nv).sum(axis=0), self.const.sum())
        return Affine(self.coef.sum(axis=axis), self.const.sum(axis=axis))

    def trace(self):
        return Affine(np.einsum("iiv->v", self.coef), np.trace(self.const))

    def inner(self, A):
        """Tr(A @ X) for a constant square A."""
        A = np.asarray(A)
        return Affine(np.einsum("ij,jiv->v", A, self.coef), np.einsum("ij,ji->", A, self.const))

    def is_real(self):
        return not (np.iscomplexobj(self.coef) and np.any(self.coef.imag)) and not (
            np.iscomplexobj(self.const) and np.any(self.const.imag))

    def as_real_vector(self):
        """Flatten; a complex expression is split into stacked real and imaginary parts."""
        flat = self.ravel()
        if flat.is_real():
            return flat.real
        return vstack([flat.real, flat.imag])

    def value(self, x):
        x = np.asarray(x)
        return self._padded(x.size) @ x + self.const


def vstack(items):
    items = [Affine.lift(i) for i in items]
    items = [i.reshape(1) if i.shape == () else i.ravel() for i in items]
    nv = max(i.nv for i in items)
    dtype = np.result_type(*[i.coef.dtype for i in items])
    return Affine(np.concatenate([i._padded(nv).astype(dtype) for i in items], axis=0),
                  np.concatenate([i.const.astype(dtype) for i in items]))


class Model:
    def __init__(self):
        self.nv = 0
        self.rows = []  # (kind, dim, F, g):  g + F x in cone
        self.c = None
        self.offset = 0.0
        self.sense = 1.0
        self.x = None
        self.solution: ConicSolution | None = None

    # -- variables
    def real(self, *shape):
        count = int(np.prod(shape)) if shape else 1
        start = self.nv
        self.nv += count
        coef = np.zeros((count, self.nv))
        coef[np.arange(count), start + np.arange(count)] = 1.0
        return Affine(coef.reshape(*shape, self.nv) if shape else coef[0], np.zeros(shape))

    def nonneg(self, *shape):
        v = self.real(*shape)
        self.add_ge(v)
        return v

    def complex(self, *shape):
        re = self.real(*shape)
        im = self.real(*shape)
        return re + 1j * im

    def hermitian(self, n):
        iu = np.triu_indices(n)
        iu1 = np.triu_indices(n, 1)
        re = self.real(len(iu[0]))
        im = self.real(len(iu1[0]))
        coef = np.zeros((n, n, self.nv), dtype=complex)
        r0 = re.coef.argmax(axis=-1)
        i0 = im.coef.argmax(axis=-1) if len(iu1[0]) else np.zeros(0, int)
        coef[iu[0], iu[1], r0] = 1.0
        coef[iu[1], iu[0], r0] = 1.0
        coef[iu1[0], iu1[1], i0] += 1j
        coef[iu1[1], iu1[0], i0] -= 1j
        return Affine(coef, np.zeros((n, n), dtype=complex))

    # -- constraints
    def _add(self, kind, dim, expr):
        expr = Affine.lift(expr)
        if not expr.is_real():
            raise ValueError("cone slices must be real")
        flat = expr.real.ravel()
        self.rows.append((kind, dim, flat.coef, flat.const))

    def add_eq(self, lhs, rhs=0.0):
        diff = Affine.lift(lhs) - rhs
        flat = diff.as_real_vector()
        self._add("zero", flat.shape[0], flat)

    def add_ge(self, lhs, rhs=0.0):
        diff = (Affine.lift(lhs) - rhs).ravel()
        if diff.shape[0]:
            self._add("nonneg", diff.shape[0], diff.real if diff.is_real() else diff)

    def add_le(self, lhs, rhs=0.0):
        self.add_ge(Affine.lift(rhs) - lhs)

    def add_soc(self, t, x):
        """||x|| <= t with t a real scalar and x any (complex) vector expression."""
        body = vstack([Affine.lift(t).reshape(1), Affine.lift(x).as_real_vector()])
        self._add("soc", body.shape[0], body)

    def add_rsoc(self, x, y, z):
        """||z||^2 <= x * y with x, y >= 0."""
        x, y = Affine.lift(x), Affine.lift(y)
        self.add_soc(x + y, vstack([(x - y).reshape(1), 2 * Affine.lift(z).as_real_vector()]))

    def add_quad_le(self, z, q):
        """||z||^2 <= q."""
        self.add_rsoc(q, 1.0, z)

    def add_psd(self, X):
        """Hermitian (or real symmetric) affine matrix is PSD."""
        X = Affine.lift(X)
        n = X.shape[0]
        if X.is_real():
            Y = X.real
        else:
            re, im = X.real, X.imag
            nv = X.nv
            top = np.concatenate([re._padded(nv), -im._padded(nv)], axis=1)
            bot = np.concatenate([im._padded(nv), re._padded(nv)], axis=1)
            ctop = np.concatenate([re.const, -im.const], axis=1)
            cbot = np.concatenate([im.const, re.const], axis=1)
            Y = Affine(np.concatenate([top, bot], axis=0), np.concatenate([ctop, cbot], axis=0))
            n *= 2
        j, i = np.tril_indices(n)
        scale = np.where(i == j, 1.0, SQRT2)
        body = Affine(Y.coef[i, j] * scale[:, None], Y.const[i, j] * scale)
        self._add("psd", n, body)

    # -- objective and solve
    def minimize(self, expr):
        self._objective(expr, 1.0)

    def maximize(self, expr):
        self._objective(expr, -1.0)

    def _objective(self, expr, sense):
        expr = Affine.lift(expr).real
        if expr.shape != ():
            expr = expr.sum()
        self.sense = sense
        self.c = sense * expr.coef
        self.offset = float(expr.const)

    def problem(self) -> ConicProblem:
        nv = self.nv
        order = {"zero": 0, "nonneg": 1, "soc": 2, "psd": 3}
        rows = sorted(self.rows, key=lambda r: order[r[0]])
        blocks, gs, cones = [], [], []
        for kind, dim, F, g in rows:
            Fp = F if F.shape[1] == nv else np.pad(F, ((0, 0), (0, nv - F.shape[1])))
            blocks.append(-Fp)
            gs.append(g)
            cones.append((kind, dim))
        # merge adjacent zero / nonneg blocks into single cones
        merged = []
        for kind, dim in cones:
            if merged and kind in ("zero", "nonneg") and merged[-1][0] == kind:
                merged[-1] = (kind, merged[-1][1] + dim)
            else:
                merged.append((kind, dim))
        if not blocks:
            A = sp.csc_matrix((0, nv))
        elif sum(b.size for b in blocks) <= 2_000_000:
            A = sp.csc_matrix(np.vstack(blocks))
        else:  # large lifted problems: avoid one big dense intermediate
            A = sp.vstack([sp.csr_matrix(b) for b in blocks], format="csc")
        b = np.concatenate(gs) if gs else np.zeros(0)
        c = np.zeros(nv) if self.c is None else np.pad(self.c, (0, nv - self.c.size))
        return ConicProblem(c, A, b, merged)

    def solve(self, tol=1e-8, max_iter=200) -> ConicSolution:
        sol = solve(self.problem(), tol=tol, max_iter=max_iter)
        self.solution = sol
        self.x = sol.x
        return sol

    @property
    def status(self):
        return None if self.solution is None else self.solution.status

    @property
    def objective(self):
        return self.sense * self.solution.objective + self.offset

    def value(self, expr):
        return Affine.lift(expr).value(self.x)
