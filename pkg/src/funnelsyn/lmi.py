"""Affine matrix expressions and the LMI families of the funnel SDP.

Every constraint is an :class:`AffineMatrixExpr`

    M(x) = M_0 + sum_i x_i M_i  >= 0

over scalar decision variables registered in a :class:`VariableRegistry`.
Symmetric matrix variables are parameterised by their upper triangle.

The DLMI on segment ``k`` is covered by the four blocks ``H^k_{ij}``,
``i, j in {k, k+1}``; a copositivity condition (:func:`copositivity_lemma4`
or :func:`copositivity_lemma5`) turns them into finitely many LMIs.

Balanced form
-------------
The ``r``-rows of the DLMI carry ``lambda_beta / beta^2`` and
``lambda_gamma / gamma^2``, which blow up for tiny bounds.  With
``balanced=True`` (the default used by the synthesis) the registered
multiplier variables are normalized, ``lambda_beta = beta * mu_beta`` on each
segment, and the constant congruence that scales the ``p``-rows of a channel
by ``1 / sqrt(bound)`` and its ``r``-rows by ``sqrt(bound)`` is applied.  Both
multiplier blocks become ``-mu I`` and the couplings carry ``sqrt(bound)``.
Definiteness is unchanged.  Uncertainty channels whose bound is at most
:data:`ZERO_BOUND` are removed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import NumericError

__all__ = [
    "ZERO_BOUND",
    "AffineMatrixExpr",
    "LinExpr",
    "VariableRegistry",
    "LmiConstraint",
    "HBlockSpec",
    "assemble_H",
    "segment_H_blocks",
    "copositivity_lemma4",
    "copositivity_lemma5",
    "state_containment_lmi",
    "input_containment_lmi",
    "bound_lmis",
    "dlmi_eval",
    "stacked_selectors",
    "is_psd",
    "psd_margin",
    "format_constraints",
]

ZERO_BOUND = 1e-12
PSD_TOL = 1e-9


def psd_margin(M):
    """Scale-aware PSD margin ``lambda_min(M) / (1 + ||M||_2)``."""
    M = 0.5 * (np.asarray(M, float) + np.asarray(M, float).T)
    ev = np.linalg.eigvalsh(M)
    return float(ev[0] / (1.0 + max(abs(ev[0]), abs(ev[-1]))))


def is_psd(M, tol=PSD_TOL):
    """``lambda_min(M) >= -tol (1 + ||M||_2)``."""
    return psd_margin(M) >= -tol


class LinExpr:
    """Dense affine matrix expression used while assembling blocks.

    ``value(x) = const + sum_t x[ids[t]] * coef[t]``.
    """

    __slots__ = ("const", "ids", "coef")
    __array_ufunc__ = None

    def __init__(self, const, ids=None, coef=None):
        self.const = np.atleast_2d(np.asarray(const, dtype=float))
        if ids is None:
            ids = np.zeros(0, dtype=np.int64)
            coef = np.zeros((0,) + self.const.shape)
        self.ids = np.asarray(ids, dtype=np.int64)
        self.coef = np.asarray(coef, dtype=float)

    @property
    def shape(self):
        return self.const.shape

    @classmethod
    def variable(cls, id_matrix):
        """Matrix whose entry ``(a, b)`` is the variable ``id_matrix[a, b]`` (``-1``: zero)."""
        id_matrix = np.atleast_2d(np.asarray(id_matrix, dtype=np.int64))
        ids = np.unique(id_matrix[id_matrix >= 0])
        coef = (id_matrix[None, :, :] == ids[:, None, None]).astype(float)
        return cls(np.zeros(id_matrix.shape), ids, coef)

    @classmethod
    def scalar_identity(cls, var_id, n, scale=1.0):
        return cls(np.zeros((n, n)), [var_id], scale * np.eye(n)[None])

    @classmethod
    def zeros(cls, p, q):
        return cls(np.zeros((p, q)))

    def _aligned(self, other):
        ids = np.union1d(self.ids, other.ids)

        def expand(e):
            c = np.zeros((len(ids),) + e.shape)
            if len(e.ids):
                c[np.searchsorted(ids, e.ids)] = e.coef
            return c

        return ids, expand(self), expand(other)

    def __add__(self, other):
        if not isinstance(other, LinExpr):
            other = LinExpr(other)
        if self.shape != other.shape:
            raise ValueError(f"shape mismatch {self.shape} vs {other.shape}")
        ids, a, b = self._aligned(other)
        return LinExpr(self.const + other.const, ids, a + b)

    __radd__ = __add__

    def __neg__(self):
        return LinExpr(-self.const, self.ids, -self.coef)

    def __sub__(self, other):
        return self + (-other if isinstance(other, LinExpr) else LinExpr(-np.asarray(other, float)))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, s):
        return LinExpr(self.const * s, self.ids, self.coef * s)

    __rmul__ = __mul__

    def __truediv__(self, s):
        return self * (1.0 / s)

    def __matmul__(self, M):
        M = np.asarray(M, float)
        return LinExpr(self.const @ M, self.ids, self.coef @ M)

    def __rmatmul__(self, M):
        M = np.asarray(M, float)
        return LinExpr(M @ self.const, self.ids, np.einsum("ab,tbc->tac", M, self.coef))

    @property
    def T(self):
        return LinExpr(self.const.T, self.ids, self.coef.transpose(0, 2, 1))

    def value(self, x):
        x = np.asarray(x, float)
        return self.const + np.tensordot(x[self.ids], self.coef, axes=1) if len(self.ids) else self.const.copy()

    @staticmethod
    def block(rows):
        """Assemble a block matrix; entries are LinExpr, arrays, or ``None`` (zero)."""
        heights = []
        widths = None
        for row in rows:
            h = None
            ws = []
            for e in row:
                shp = None if e is None else (e.shape if isinstance(e, LinExpr) else np.atleast_2d(e).shape)
                ws.append(None if shp is None else shp[1])
                if shp is not None:
                    h = shp[0] if h is None else h
                    if h != shp[0]:
                        raise ValueError("inconsistent block heights")
            heights.append(h)
            if widths is None:
                widths = ws
            else:
                widths = [a if a is not None else b for a, b in zip(widths, ws)]
        if any(h is None for h in heights) or any(w is None for w in widths):
            raise ValueError("every block row/column needs at least one sized entry")
        ids = np.unique(np.concatenate([e.ids for row in rows for e in row if isinstance(e, LinExpr)] or [[]]))
        ids = ids.astype(np.int64)
        H, Wd = sum(heights), sum(widths)
        const = np.zeros((H, Wd))
        coef = np.zeros((len(ids), H, Wd))
        r0 = 0
        for row, h in zip(rows, heights):
            c0 = 0
            for e, w in zip(row, widths):
                if isinstance(e, LinExpr):
                    if e.shape != (h, w):
                        raise ValueError(f"block shape {e.shape} != {(h, w)}")
                    const[r0 : r0 + h, c0 : c0 + w] = e.const
                    if len(e.ids):
                        coef[np.searchsorted(ids, e.ids), r0 : r0 + h, c0 : c0 + w] = e.coef
                elif e is not None:
                    e = np.atleast_2d(np.asarray(e, float))
                    if e.shape != (h, w):
                        raise ValueError(f"block shape {e.shape} != {(h, w)}")
                    const[r0 : r0 + h, c0 : c0 + w] = e
                c0 += w
            r0 += h
        return LinExpr(const, ids, coef)


class AffineMatrixExpr:
    """Symmetric ``m x m`` matrix affine in scalar decision variables.

    Parameters
    ----------
    constant : ndarray, shape (m, m)
    var_ids : ndarray of int, shape (nt,)
        Unique, sorted variable ids.
    coeffs : scipy.sparse matrix, shape (nt, m*m)
        Row ``t`` is the row-major flattened coefficient of ``var_ids[t]``.
    """

    def __init__(self, constant, var_ids, coeffs, check=True):
        self.constant = np.asarray(constant, float)
        self.var_ids = np.asarray(var_ids, dtype=np.int64)
        self.coeffs = sp.csr_matrix(coeffs)
        m = self.constant.shape[0]
        if check:
            if self.constant.shape != (m, m) or self.coeffs.shape != (len(self.var_ids), m * m):
                raise ValueError("inconsistent AffineMatrixExpr shapes")
            if len(np.unique(self.var_ids)) != len(self.var_ids):
                raise ValueError("duplicate variable ids")
            if not np.allclose(self.constant, self.constant.T, atol=1e-12, rtol=0):
                raise ValueError("constant term is not symmetric")
            if self.coeffs.nnz:
                T = self.coeffs.tocoo()
                r, c = np.divmod(T.col, m)
                transposed = sp.csr_matrix((T.data, (T.row, c * m + r)), shape=self.coeffs.shape)
                if abs(transposed - self.coeffs).max() > 1e-12:
                    raise ValueError("coefficient matrices are not symmetric")

    @classmethod
    def from_linexpr(cls, e: LinExpr):
        if e.shape[0] != e.shape[1]:
            raise ValueError("PSD expression must be square")
        m = e.shape[0]
        keep = np.any(e.coef.reshape(len(e.ids), -1) != 0.0, axis=1) if len(e.ids) else np.zeros(0, bool)
        ids = e.ids[keep]
        coef = e.coef[keep].reshape(len(ids), m * m)
        return cls(e.const, ids, sp.csr_matrix(coef))

    @property
    def dim(self):
        return self.constant.shape[0]

    def evaluate(self, x):
        x = np.asarray(x, float)
        m = self.dim
        if not len(self.var_ids):
            return self.constant.copy()
        return self.constant + (self.coeffs.T @ x[self.var_ids]).reshape(m, m)

    def coefficient(self, var_id):
        hit = np.nonzero(self.var_ids == var_id)[0]
        if not len(hit):
            return np.zeros((self.dim, self.dim))
        return self.coeffs[hit[0]].toarray().reshape(self.dim, self.dim)

    @property
    def terms(self):
        """List of ``(var_id, dense coefficient)``."""
        return [(int(v), self.coeffs[t].toarray().reshape(self.dim, self.dim)) for t, v in enumerate(self.var_ids)]


class VariableRegistry:
    """Ordered table of scalar decision variables."""

    def __init__(self):
        self.names = []
        self.nonneg = []
        self.Q = []
        self.Y = []
        self.lam_beta = []
        self.lam_gamma = []
        self.slacks = {}

    def __len__(self):
        return len(self.names)

    def scalar(self, name, nonneg=False):
        self.names.append(name)
        self.nonneg.append(bool(nonneg))
        return len(self.names) - 1

    def symmetric(self, name, n):
        ids = np.empty((n, n), dtype=np.int64)
        for j in range(n):
            for i in range(j + 1):
                ids[i, j] = ids[j, i] = self.scalar(f"{name}[{i},{j}]")
        return ids

    def matrix(self, name, p, q):
        ids = np.empty((p, q), dtype=np.int64)
        for i in range(p):
            for j in range(q):
                ids[i, j] = self.scalar(f"{name}[{i},{j}]")
        return ids

    @classmethod
    def for_funnel(cls, n_x, n_u, N, mode="lemma4", slack_dim=None):
        """Register ``Q_k, Y_k, lambda_beta_k, lambda_gamma_k`` (and slacks for lemma5)."""
        reg = cls()
        for k in range(N + 1):
            reg.Q.append(reg.symmetric(f"Q{k}", n_x))
            reg.Y.append(reg.matrix(f"Y{k}", n_u, n_x))
            reg.lam_beta.append(reg.scalar(f"lam_beta{k}", nonneg=True))
            reg.lam_gamma.append(reg.scalar(f"lam_gamma{k}", nonneg=True))
        if mode == "lemma5":
            if slack_dim is None:
                raise ValueError("lemma5 needs the H block dimension for its slacks")
            dims = slack_dim if np.iterable(slack_dim) else [slack_dim] * N
            for k in range(N):
                reg.slacks[k] = tuple(reg.symmetric(f"X{k}_{nm}", dims[k]) for nm in ("11", "21", "22"))
        elif mode != "lemma4":
            raise ValueError(f"unknown copositivity mode {mode!r}")
        return reg

    def values(self, x, ids):
        return np.asarray(x, float)[np.asarray(ids)]


@dataclass(frozen=True)
class LmiConstraint:
    """``expr >= 0`` tagged with its origin for census and dumps."""

    expr: AffineMatrixExpr
    kind: str
    k: int
    index: int = 0


def stacked_selectors(n_x, n_u, n_w, E_o, C_o, D_o, G_o, keep_e=True, keep_phi=True):
    """Lumped-uncertainty maps ``E = [I, E_o]`` and ``r = C eta + D xi + G w``.

    Returns ``E, C, D, G`` with the removed channels dropped.
    """
    n_q = C_o.shape[0]
    E_blocks, C_blocks, D_blocks, G_blocks = [], [], [], []
    if keep_e:
        E_blocks.append(np.eye(n_x))
        n_r1 = n_x + n_u + n_w
        C_blocks.append(np.eye(n_r1, n_x))
        D_blocks.append(np.vstack([np.zeros((n_x, n_u)), np.eye(n_u), np.zeros((n_w, n_u))]))
        G_blocks.append(np.vstack([np.zeros((n_x + n_u, n_w)), np.eye(n_w)]))
    if keep_phi:
        E_blocks.append(np.asarray(E_o, float))
        C_blocks.append(np.asarray(C_o, float))
        D_blocks.append(np.asarray(D_o, float))
        G_blocks.append(np.asarray(G_o, float))
    E = np.hstack(E_blocks) if E_blocks else np.zeros((n_x, 0))
    C = np.vstack(C_blocks) if C_blocks else np.zeros((0, n_x))
    D = np.vstack(D_blocks) if D_blocks else np.zeros((0, n_u))
    G = np.vstack(G_blocks) if G_blocks else np.zeros((0, n_w))
    del n_q
    return E, C, D, G


def _channels(beta, gamma, n_phi):
    if beta < 0 or gamma < 0:
        raise ValueError("uncertainty bounds must be non-negative")
    if not (np.isfinite(beta) and np.isfinite(gamma)):
        raise NumericError("non-finite uncertainty bound")
    return beta > ZERO_BOUND, (n_phi > 0 and gamma > ZERO_BOUND)


def _channel_scaling(bound, balanced):
    """``(c2, c1, tp, tr)`` of one uncertainty channel.

    The multiplier blocks are ``N2 = c2 lam I`` and ``N1 = c1 lam I``; the
    ``p`` and ``r`` rows are scaled by ``tp`` and ``tr`` (a congruence).
    Plain form: ``lam`` is the multiplier itself, ``N1 = lam / bound^2``.
    Balanced form: ``lam`` is the normalized multiplier ``mu`` with true
    multiplier ``bound * mu``; after scaling by ``1/sqrt(bound)`` and
    ``sqrt(bound)`` both diagonal blocks become ``-mu I`` and the channel
    fades out continuously as ``bound -> 0``.
    """
    if balanced:
        rb = np.sqrt(bound)
        return bound, 1.0 / bound, 1.0 / rb, rb
    return 1.0, 1.0 / bound**2, 1.0, 1.0


@dataclass(frozen=True)
class HBlockSpec:
    """Data for one block ``H^k_{ij}`` (``i`` indexes the system matrices, ``j`` the variables)."""

    k: int
    i: int
    j: int
    A_i: np.ndarray
    B_i: np.ndarray
    F_j: np.ndarray
    beta: float
    gamma: float
    dt: float
    lambda_w: float
    E_o: np.ndarray
    C_o: np.ndarray
    D_o: np.ndarray
    G_o: np.ndarray

    @property
    def dims(self):
        n_x, n_u = np.shape(self.B_i)
        return n_x, n_u, np.shape(self.F_j)[1], np.shape(self.C_o)[0], np.shape(self.E_o)[1]

    @property
    def side(self):
        n_x, n_u, n_w, n_q, n_phi = self.dims
        keep_e, keep_phi = _channels(self.beta, self.gamma, n_phi)
        n_p = n_x * keep_e + n_phi * keep_phi
        n_r = (n_x + n_u + n_w) * keep_e + n_q * keep_phi
        return n_x + n_p + n_w + n_r


def segment_H_blocks_specs(ltv, bounds, k, lambda_w):
    m = ltv.model
    dt = ltv.grid.dt
    specs = {}
    for i in (k, k + 1):
        for j in (k, k + 1):
            specs[(i, j)] = HBlockSpec(
                k=k, i=i, j=j, A_i=ltv.A[i], B_i=ltv.B[i], F_j=ltv.F[j],
                beta=float(bounds.beta[k]), gamma=float(bounds.gamma[k]), dt=dt, lambda_w=lambda_w,
                E_o=m.E_o, C_o=m.C_o, D_o=m.D_o, G_o=m.G_o,
            )
    return specs


def assemble_H(spec: HBlockSpec, vars: VariableRegistry, balanced=True) -> AffineMatrixExpr:
    """Symbolic ``H^k_{ij}`` (negated DLMI block with ``Qdot = (Q_{k+1} - Q_k) / dt``).

    With ``balanced=False`` this is the plain block with ``N1 = lam / bound^2``.
    With ``balanced=True`` the multiplier variables are normalized and the
    uncertainty rows rescaled as described in :func:`_channel_scaling`; the
    PSD cone condition is unchanged by the congruence, only the conditioning
    improves.  Channels whose bound is at most ``ZERO_BOUND`` are dropped.
    """
    if spec.lambda_w <= 0:
        raise ValueError("lambda_w must be positive")
    n_x, n_u, n_w, n_q, n_phi = spec.dims
    keep_e, keep_phi = _channels(spec.beta, spec.gamma, n_phi)
    k, j = spec.k, spec.j
    Qj = LinExpr.variable(vars.Q[j])
    Yj = LinExpr.variable(vars.Y[j])
    Qdot = (LinExpr.variable(vars.Q[k + 1]) - LinExpr.variable(vars.Q[k])) / spec.dt
    AQBY = spec.A_i @ Qj + spec.B_i @ Yj
    W = AQBY + AQBY.T + spec.lambda_w * Qj
    E, C, D, G = stacked_selectors(n_x, n_u, n_w, spec.E_o, spec.C_o, spec.D_o, spec.G_o, keep_e, keep_phi)
    lb, lg = vars.lam_beta[j], vars.lam_gamma[j]
    n2_blocks, pe_blocks, n1_blocks, r_scale = [], [], [], []
    for keep, vid, bound, n_p_ch, n_r_ch in (
        (keep_e, lb, spec.beta, n_x, n_x + n_u + n_w),
        (keep_phi, lg, spec.gamma, n_phi, n_q),
    ):
        if not keep:
            continue
        c2, c1, tp, tr = _channel_scaling(bound, balanced)
        n2_blocks.append((vid, n_p_ch, c2 * tp * tp))
        pe_blocks.append((vid, n_p_ch, c2 * tp))
        n1_blocks.append((vid, n_r_ch, c1 * tr * tr))
        r_scale += [tr] * n_r_ch
    T = np.diag(r_scale) if r_scale else np.zeros((0, 0))

    def diag_of(blocks):
        n = sum(b[1] for b in blocks)
        out = LinExpr.zeros(n, n)
        r0 = 0
        for vid, size, scale in blocks:
            emb = np.zeros((n, n))
            emb[r0 : r0 + size, r0 : r0 + size] = np.eye(size)
            out = out + LinExpr(np.zeros((n, n)), [vid], scale * emb[None])
            r0 += size
        return out

    N2 = diag_of(n2_blocks)
    N1 = diag_of(n1_blocks)
    n_p, n_r = N2.shape[0], N1.shape[0]
    L = T @ (C @ Qj + D @ Yj)
    Gs = T @ G
    N2Et = diag_of(pe_blocks) @ E.T
    rows = [
        [W - Qdot, N2Et.T, np.asarray(spec.F_j, float), L.T],
        [N2Et, -N2, np.zeros((n_p, n_w)), np.zeros((n_p, n_r))],
        [np.asarray(spec.F_j, float).T, np.zeros((n_w, n_p)), -spec.lambda_w * np.eye(n_w), Gs.T],
        [L, np.zeros((n_r, n_p)), Gs, -N1],
    ]
    rows = [[e for e in row if np.shape(e)[1] > 0] for row in rows if (np.shape(row[0])[0] > 0)]
    D_lmi = LinExpr.block(rows)
    return AffineMatrixExpr.from_linexpr(-D_lmi)


def segment_H_blocks(ltv, bounds, k, vars, lambda_w, balanced=True):
    """All four ``H^k_{ij}`` of segment ``k`` keyed by ``(i, j)``."""
    specs = segment_H_blocks_specs(ltv, bounds, k, lambda_w)
    return {ij: assemble_H(s, vars, balanced) for ij, s in specs.items()}


def _shift(expr: AffineMatrixExpr, margin):
    if margin == 0:
        return expr
    return AffineMatrixExpr(expr.constant - margin * np.eye(expr.dim), expr.var_ids, expr.coeffs, check=False)


def _lin(expr: AffineMatrixExpr):
    m = expr.dim
    return LinExpr(expr.constant, expr.var_ids, expr.coeffs.toarray().reshape(len(expr.var_ids), m, m))


def copositivity_lemma4(H, k, margin=0.0):
    """Blockwise-PSD copositivity certificate on segment ``k``.

    ``H_{kk} >= 0``, ``H_{k+1,k+1} >= 0`` and ``H_{k,k+1} + H_{k+1,k} >= 0``.
    """
    kk, k1 = (k, k), (k + 1, k + 1)
    mix = _lin(H[(k, k + 1)]) + _lin(H[(k + 1, k)])
    return [
        LmiConstraint(_shift(H[kk], margin), "copos4-kk", k, 0),
        LmiConstraint(_shift(H[k1], margin), "copos4-k1k1", k, 1),
        LmiConstraint(_shift(AffineMatrixExpr.from_linexpr(mix), margin), "copos4-mix", k, 2),
    ]


def copositivity_lemma5(H, k, vars: VariableRegistry, margin=0.0):
    """Slack-variable copositivity certificate on segment ``k``.

    Emits ``[[H_kk - X11, *], [(H_{k+1,k} + H_{k,k+1})/2 - X21, H_{k+1,k+1} - X22]] >= 0``
    together with ``X11, X21, X22 >= 0``.  ``X21`` is symmetric, so
    ``X12 = X21^T = X21``.
    """
    X11, X21, X22 = (LinExpr.variable(ids) for ids in vars.slacks[k])
    Hkk = _lin(H[(k, k)])
    Hk1 = _lin(H[(k + 1, k + 1)])
    half_mix = 0.5 * (_lin(H[(k + 1, k)]) + _lin(H[(k, k + 1)]))
    off = half_mix - X21
    big = LinExpr.block([[Hkk - X11, off.T], [off, Hk1 - X22]])
    out = [LmiConstraint(_shift(AffineMatrixExpr.from_linexpr(big), margin), "copos5-big", k, 0)]
    for idx, (nm, X) in enumerate((("11", X11), ("21", X21), ("22", X22))):
        out.append(LmiConstraint(AffineMatrixExpr.from_linexpr(X), f"slack-{nm}", k, idx + 1))
    return out


def state_containment_lmi(k, a, b, xbar, vars: VariableRegistry, index=0):
    """``[[c |c|, a'Q_k], [Q_k a, Q_k]] >= 0`` with ``c = b - a'xbar``.

    Equivalent to ``a'xbar + sqrt(a'Q_k a) <= b``.  The signed square keeps
    the equivalence when the nominal itself violates the halfspace
    (``c < 0`` makes the block infeasible).
    """
    a = np.asarray(a, float).reshape(-1, 1)
    c = float(b - a[:, 0] @ np.asarray(xbar, float))
    Q = LinExpr.variable(vars.Q[k])
    expr = LinExpr.block([[np.array([[c * abs(c)]]), a.T @ Q], [Q @ a, Q]])
    return LmiConstraint(AffineMatrixExpr.from_linexpr(expr), "state", k, index)


def input_containment_lmi(k, a, b, ubar, vars: VariableRegistry, index=0):
    """``[[c |c|, a'Y_k], [Y_k' a, Q_k]] >= 0`` with ``c = b - a'ubar``; see :func:`state_containment_lmi`."""
    a = np.asarray(a, float).reshape(-1, 1)
    c = float(b - a[:, 0] @ np.asarray(ubar, float))
    Q = LinExpr.variable(vars.Q[k])
    Y = LinExpr.variable(vars.Y[k])
    expr = LinExpr.block([[np.array([[c * abs(c)]]), a.T @ Y], [Y.T @ a, Q]])
    return LmiConstraint(AffineMatrixExpr.from_linexpr(expr), "input", k, index)


def bound_lmis(k, Q_max, eps_pd, vars: VariableRegistry):
    """``Q_k - eps_pd I >= 0`` and ``Q_max - Q_k >= 0``."""
    Q_max = np.asarray(Q_max, float)
    if eps_pd <= 0:
        raise ValueError("eps_pd must be positive")
    if not np.allclose(Q_max, Q_max.T) or np.linalg.eigvalsh(Q_max)[0] <= 0:
        raise ValueError("Q_max must be symmetric positive definite")
    Q = LinExpr.variable(vars.Q[k])
    n = Q.shape[0]
    return [
        LmiConstraint(AffineMatrixExpr.from_linexpr(Q - eps_pd * np.eye(n)), "q-lower", k, 0),
        LmiConstraint(AffineMatrixExpr.from_linexpr(Q_max - Q), "q-upper", k, 1),
    ]


def dlmi_eval(Q, Qdot, Y, lam_beta, lam_gamma, lam_w, A, B, F, beta, gamma, E_o, C_o, D_o, G_o, balanced=False):
    """Dense DLMI matrix; the funnel condition requires ``lambda_max <= 0``.

    Rows are ordered ``(eta-dual, p, w, r)``; removed channels follow the same
    rule as :func:`assemble_H`.  With ``balanced=True`` the multipliers are the
    normalized ones (true multiplier ``beta * lam_beta``) and the result is the
    congruence-scaled matrix; its sign pattern is the same.
    """
    arrs = [np.asarray(v, float) for v in (Q, Qdot, Y, A, B, F)]
    scal = np.array([lam_beta, lam_gamma, lam_w, beta, gamma], dtype=float)
    if not (all(np.all(np.isfinite(a)) for a in arrs) and np.all(np.isfinite(scal))):
        raise NumericError("non-finite input to dlmi_eval")
    Q, Qdot, Y, A, B, F = arrs
    n_x, n_u = B.shape
    n_w = F.shape[1]
    n_phi = np.shape(E_o)[1]
    keep_e, keep_phi = _channels(beta, gamma, n_phi)
    E, C, D, G = stacked_selectors(n_x, n_u, n_w, E_o, C_o, D_o, G_o, keep_e, keep_phi)
    n2, pe, n1, t = [], [], [], []
    for keep, lam, bound, n_p_ch, n_r_ch in (
        (keep_e, lam_beta, beta, n_x, n_x + n_u + n_w),
        (keep_phi, lam_gamma, gamma, n_phi, np.shape(C_o)[0]),
    ):
        if keep:
            c2, c1, tp, tr = _channel_scaling(bound, balanced)
            n2 += [c2 * tp * tp * lam] * n_p_ch
            pe += [c2 * tp * lam] * n_p_ch
            n1 += [c1 * tr * tr * lam] * n_r_ch
            t += [tr] * n_r_ch
    N2 = np.diag(n2) if n2 else np.zeros((0, 0))
    PE = np.diag(pe) if pe else np.zeros((0, 0))
    N1 = np.diag(n1) if n1 else np.zeros((0, 0))
    T = np.diag(t) if t else np.zeros((0, 0))
    W = A @ Q + B @ Y + Q @ A.T + Y.T @ B.T + lam_w * Q
    L = T @ (C @ Q + D @ Y)
    Gs = T @ G
    n_p, n_r = N2.shape[0], N1.shape[0]
    Z = np.zeros
    M = np.block([
        [W - Qdot, E @ PE, F, L.T],
        [PE @ E.T, -N2, Z((n_p, n_w)), Z((n_p, n_r))],
        [F.T, Z((n_w, n_p)), -lam_w * np.eye(n_w), Gs.T],
        [L, Z((n_r, n_p)), Gs, -N1],
    ])
    return 0.5 * (M + M.T)


def format_constraints(constraints):
    """Human-readable ``(k, kind, dimension, variable-ids)`` listing."""
    lines = []
    for c in sorted(constraints, key=lambda c: (c.k, c.kind, c.index)):
        ids = ",".join(str(int(v)) for v in c.expr.var_ids)
        lines.append(f"({c.k}, {c.kind}, {c.expr.dim}, [{ids}])")
    return "\n".join(lines)
