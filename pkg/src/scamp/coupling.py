"""Spatially coupled base matrices and block-Gaussian sensing matrices.

Index conventions (0-based array positions vs. the spatial labels):

* columns: position ``k`` <-> column label ``i = k - 2/rho`` in
  ``{-2/rho, ..., L-1}``; ``C_0`` is ``i >= 0``.
* rows: the ``2/rho * L0`` seed rows come first (``L0`` rows attached to each
  negative column), followed by ``R_0`` whose position ``k`` maps to the
  label ``a = k - 2/rho*L0 - 1/rho`` in ``{-1/rho, ..., L-1+1/rho}``.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, sparse


class CouplingError(ValueError):
    pass


# -- shape functions ---------------------------------------------------------

@dataclass(frozen=True)
class ShapeFunction:
    name: str
    evaluator: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray], np.ndarray]
    # integral of the shape over (-inf, u]
    cdf: Callable[[np.ndarray], np.ndarray]

    def __call__(self, u):
        return self.evaluator(np.asarray(u, dtype=float))

    def tail(self, u):
        """Integral of the shape over [u, inf)."""
        return 1.0 - self.cdf(np.asarray(u, dtype=float))


def _raised_cosine(u):
    return np.where(np.abs(u) <= 1.0, 0.5 * (1.0 + np.cos(np.pi * u)), 0.0)


def _raised_cosine_d(u):
    return np.where(np.abs(u) <= 1.0, -0.5 * np.pi * np.sin(np.pi * u), 0.0)


def _raised_cosine_cdf(u):
    uc = np.clip(u, -1.0, 1.0)
    return 0.5 * (uc + 1.0) + np.sin(np.pi * uc) / (2.0 * np.pi)


def _quartic(u):
    return np.where(np.abs(u) <= 1.0, (15.0 / 16.0) * (1.0 - u * u) ** 2, 0.0)


def _quartic_d(u):
    return np.where(np.abs(u) <= 1.0, -(15.0 / 4.0) * u * (1.0 - u * u), 0.0)


def _quartic_cdf(u):
    uc = np.clip(u, -1.0, 1.0)
    return (15.0 / 16.0) * (uc - 2.0 * uc ** 3 / 3.0 + uc ** 5 / 5.0) + 0.5


_SHAPES = {
    "raised_cosine": (_raised_cosine, _raised_cosine_d, _raised_cosine_cdf),
    "quartic_bump": (_quartic, _quartic_d, _quartic_cdf),
}


def validate_shape(shape: ShapeFunction) -> None:
    """Check support, symmetry, unit mass and C^1 continuity at the edges."""
    u = np.linspace(-1.5, 1.5, 3001)
    w = shape(u)
    if np.any(w < 0):
        raise CouplingError(f"{shape.name}: negative values")
    if np.any(w[np.abs(u) > 1.0] != 0.0):
        raise CouplingError(f"{shape.name}: support exceeds [-1, 1]")
    if np.max(np.abs(w - shape(-u))) > 1e-14:
        raise CouplingError(f"{shape.name}: not symmetric")
    mass, _ = integrate.quad(lambda x: float(shape(x)), -1.0, 1.0, epsabs=1e-14, epsrel=1e-13)
    if abs(mass - 1.0) > 1e-10:
        raise CouplingError(f"{shape.name}: integrates to {mass}")
    h = 1e-7
    for edge in (-1.0, 1.0):
        inner = edge - math.copysign(h, edge)
        outer = edge + math.copysign(h, edge)
        if abs(float(shape.derivative(inner)) - float(shape.derivative(outer))) > 1e-6:
            raise CouplingError(f"{shape.name}: derivative jumps at {edge}")


def build_shape(name: str = "raised_cosine") -> ShapeFunction:
    try:
        f, df, cdf = _SHAPES[name]
    except KeyError:
        raise CouplingError(f"unknown shape {name!r}; choose from {sorted(_SHAPES)}") from None
    shape = ShapeFunction(name, f, df, cdf)
    validate_shape(shape)
    return shape


# -- base matrix -------------------------------------------------------------

@dataclass
class BaseMatrix:
    W: np.ndarray
    L: int | None = None
    L0: int | None = None
    rho_inv: int | None = None
    shape: ShapeFunction | None = None

    @property
    def L_r(self) -> int:
        return self.W.shape[0]

    @property
    def L_c(self) -> int:
        return self.W.shape[1]

    @property
    def is_coupled(self) -> bool:
        return self.L is not None

    @property
    def n_seed_rows(self) -> int:
        return 2 * self.rho_inv * self.L0 if self.is_coupled else 0

    @property
    def col_labels(self) -> np.ndarray:
        """Spatial labels i of the columns (``-2/rho .. L-1``)."""
        if not self.is_coupled:
            return np.arange(self.L_c)
        return np.arange(self.L_c) - 2 * self.rho_inv

    @property
    def row_labels(self) -> np.ndarray:
        """Group label of every row: the negative column index for seed rows,
        the spatial index ``a`` for rows of ``R_0``."""
        if not self.is_coupled:
            return np.arange(self.L_r)
        seed = np.repeat(np.arange(-2 * self.rho_inv, 0), self.L0)
        r0 = np.arange(self.L + 2 * self.rho_inv) - self.rho_inv
        return np.concatenate([seed, r0])

    @property
    def seed_mask(self) -> np.ndarray:
        m = np.zeros(self.L_r, dtype=bool)
        m[: self.n_seed_rows] = True
        return m

    @property
    def r0_slice(self) -> slice:
        return slice(self.n_seed_rows, self.L_r)

    @property
    def c0_slice(self) -> slice:
        return slice(2 * self.rho_inv if self.is_coupled else 0, self.L_c)

    def row_sums(self) -> np.ndarray:
        return self.W.sum(axis=1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        header = "row_label," + ",".join(str(i) for i in self.col_labels)
        buf.write(header + "\n")
        for lab, row in zip(self.row_labels, self.W):
            buf.write(str(lab) + "," + ",".join(repr(float(x)) for x in row) + "\n")
        return buf.getvalue()

    @classmethod
    def from_array(cls, W) -> "BaseMatrix":
        W = np.array(W, dtype=float, ndmin=2)
        if np.any(W < 0):
            raise CouplingError("W must be nonnegative")
        return cls(W)


def coupling_weight(shape: ShapeFunction, rho_inv: int, d):
    """W_{a-i} = rho * shape(rho * (a - i))."""
    rho = 1.0 / rho_inv
    return rho * shape(rho * np.asarray(d, dtype=float))


def build_base_matrix(L: int, L0: int, rho_inv: int, shape: ShapeFunction | None = None,
                      max_entries: int = 50_000_000) -> BaseMatrix:
    if shape is None:
        shape = build_shape()
    if L < 1 or L0 < 1 or rho_inv < 1:
        raise CouplingError("L, L0 and rho_inv must be positive integers")
    L_c = L + 2 * rho_inv
    L_r = L_c + 2 * rho_inv * L0
    if L_r * L_c > max_entries:
        raise CouplingError(f"base matrix {L_r}x{L_c} exceeds {max_entries} entries")
    W = np.zeros((L_r, L_c))
    cols = np.arange(L_c) - 2 * rho_inv
    # seed rows: L0 rows per negative column, single unit entry
    for k, i in enumerate(range(-2 * rho_inv, 0)):
        W[k * L0:(k + 1) * L0, i + 2 * rho_inv] = 1.0
    a = np.arange(L + 2 * rho_inv) - rho_inv
    W[2 * rho_inv * L0:, :] = coupling_weight(shape, rho_inv, a[:, None] - cols[None, :])
    return BaseMatrix(W, L, L0, rho_inv, shape)


def restricted_column_stochasticity(base: BaseMatrix) -> float:
    """max over columns of C_0 of |sum_{a in R_0} W_{a,i} - 1|."""
    sub = base.W[base.r0_slice, base.c0_slice]
    if sub.size == 0:
        return 0.0
    return float(np.max(np.abs(sub.sum(axis=0) - 1.0)))


# -- sensing matrix ----------------------------------------------------------

@dataclass
class SensingMatrix:
    """A ~ M(W, M, N), stored block-sparse in group-contiguous order.

    ``blocks`` holds only blocks with ``W[r, c] > 0``; ``row_perm[k]`` is the
    actual row index of grouped position ``k`` (likewise ``col_perm``), so
    ``entries[row_perm][:, col_perm] == grouped dense matrix``.
    """

    base: BaseMatrix
    M: int
    N: int
    blocks: sparse.bsr_matrix
    row_perm: np.ndarray
    col_perm: np.ndarray
    seed: int
    augmented: bool = False
    identity_groups: int = 0
    _inv_row: np.ndarray | None = field(default=None, repr=False)
    _inv_col: np.ndarray | None = field(default=None, repr=False)

    @property
    def delta(self) -> float:
        """Realized M/N."""
        return self.M / self.N

    @property
    def m_base(self) -> int:
        return self.M * self.base.L_r

    @property
    def m(self) -> int:
        return self.m_base + self.identity_groups * self.N

    @property
    def n(self) -> int:
        return self.N * self.base.L_c

    @property
    def undersampling(self) -> float:
        return self.m / self.n

    @property
    def row_of(self) -> np.ndarray:
        """Row group of every actual row index (identity rows get -1)."""
        g = np.empty(self.m, dtype=int)
        g[self.row_perm] = np.repeat(np.arange(self.base.L_r), self.M)
        if self.augmented:
            g[self.m_base:] = -1
        return g

    @property
    def col_of(self) -> np.ndarray:
        g = np.empty(self.n, dtype=int)
        g[self.col_perm] = np.repeat(np.arange(self.base.L_c), self.N)
        return g

    def _inverse_perms(self):
        if self._inv_row is None:
            self._inv_row = np.argsort(self.row_perm)
            self._inv_col = np.argsort(self.col_perm)
        return self._inv_row, self._inv_col

    # grouped <-> actual index order
    def x_to_grouped(self, x):
        return np.asarray(x)[self.col_perm]

    def x_from_grouped(self, xg):
        out = np.empty_like(xg)
        out[self.col_perm] = xg
        return out

    def y_to_grouped(self, y):
        y = np.asarray(y)
        return y[: self.m_base][self.row_perm]

    def y_from_grouped(self, yg):
        out = np.empty_like(yg)
        out[self.row_perm] = yg
        return out

    @property
    def entries(self) -> np.ndarray:
        """Dense m x n matrix in actual index order (materializes A)."""
        dense = self.blocks.toarray()
        out = np.zeros((self.m, self.n))
        out[np.ix_(self.row_perm, self.col_perm)] = dense
        if self.augmented:
            ident_cols = self.col_perm[self.n - self.identity_groups * self.N:]
            out[np.arange(self.m_base, self.m), ident_cols] = 1.0
        return out

    def matvec(self, x):
        """A x (including identity rows when augmented), actual order."""
        xg = self.x_to_grouped(x)
        top = self.y_from_grouped(self.blocks @ xg)
        if not self.augmented:
            return top
        return np.concatenate([top, xg[self.n - self.identity_groups * self.N:]])

    def rmatvec(self, r):
        r = np.asarray(r)
        rg = r[: self.m_base][self.row_perm]
        xg = self.blocks.T @ rg
        if self.augmented:
            xg[self.n - self.identity_groups * self.N:] += r[self.m_base:]
        return self.x_from_grouped(xg)

    # binary container --------------------------------------------------

    MAGIC = b"SCAMPMAT"

    def to_bytes(self) -> bytes:
        """Header (JSON: dims, seed, base parameters, permutations) + row-major float64 payload."""
        header = {
            "m": self.m, "n": self.n, "M": self.M, "N": self.N, "seed": self.seed,
            "augmented": self.augmented, "identity_groups": self.identity_groups,
            "L": self.base.L, "L0": self.base.L0, "rho_inv": self.base.rho_inv,
            "shape": self.base.shape.name if self.base.shape else None,
            "W": self.base.W.tolist(),
            "row_perm": self.row_perm.tolist(), "col_perm": self.col_perm.tolist(),
        }
        hb = json.dumps(header).encode()
        payload = np.ascontiguousarray(self.entries, dtype="<f8").tobytes()
        return self.MAGIC + struct.pack("<Q", len(hb)) + hb + payload

    @classmethod
    def from_bytes(cls, data: bytes) -> "SensingMatrix":
        if data[:8] != cls.MAGIC:
            raise CouplingError("not a sensing-matrix container")
        (hlen,) = struct.unpack("<Q", data[8:16])
        header = json.loads(data[16:16 + hlen])
        dense = np.frombuffer(data[16 + hlen:], dtype="<f8").reshape(header["m"], header["n"])
        shape = build_shape(header["shape"]) if header["shape"] else None
        base = BaseMatrix(np.array(header["W"]), header["L"], header["L0"], header["rho_inv"], shape)
        row_perm = np.array(header["row_perm"], dtype=int)
        col_perm = np.array(header["col_perm"], dtype=int)
        M, N = header["M"], header["N"]
        grouped = dense[np.ix_(row_perm, col_perm)]
        blocks = _to_bsr(grouped, base.W, M, N)
        return cls(base, M, N, blocks, row_perm, col_perm, header["seed"],
                   header["augmented"], header["identity_groups"])


def _to_bsr(grouped: np.ndarray, W: np.ndarray, M: int, N: int) -> sparse.bsr_matrix:
    rows, cols = np.nonzero(W > 0)
    data = np.stack([grouped[r * M:(r + 1) * M, c * N:(c + 1) * N] for r, c in zip(rows, cols)]) \
        if len(rows) else np.zeros((0, M, N))
    indptr = np.searchsorted(rows, np.arange(W.shape[0] + 1))
    return sparse.bsr_matrix((data, cols, indptr), shape=(W.shape[0] * M, W.shape[1] * N))


def group_size_for(N: int, delta: float) -> int:
    M = int(round(N * delta))
    if M < 1:
        raise CouplingError(f"M = round(N*delta) = {M}; need at least one row per group")
    return M


def sample_sensing_matrix(base: BaseMatrix, N: int, delta: float, seed: int,
                          contiguous_partition: bool = False) -> SensingMatrix:
    """Draw A with A_ij ~ N(0, W[g(i), g(j)] / M), M = round(N * delta)."""
    M = group_size_for(N, delta)
    rng = np.random.default_rng(seed)
    m, n = M * base.L_r, N * base.L_c
    if contiguous_partition:
        row_perm, col_perm = np.arange(m), np.arange(n)
    else:
        row_perm, col_perm = rng.permutation(m), rng.permutation(n)
    rows, cols = np.nonzero(base.W > 0)
    scale = np.sqrt(base.W[rows, cols] / M)
    data = rng.standard_normal((len(rows), M, N)) * scale[:, None, None]
    indptr = np.searchsorted(rows, np.arange(base.L_r + 1))
    blocks = sparse.bsr_matrix((data, cols, indptr), shape=(m, n))
    return SensingMatrix(base, M, N, blocks, row_perm, col_perm, seed)


def augment_identity(A: SensingMatrix, n_groups: int | None = None) -> SensingMatrix:
    """Append rows [0 | I] measuring the last ``n_groups`` column groups directly.

    ``n_groups`` defaults to ``2/rho`` (the trailing block x_2 of the robust
    scheme); pass ``2/rho * L0`` for the wider variant.
    """
    if A.augmented:
        raise CouplingError("matrix is already augmented")
    if n_groups is None:
        if not A.base.is_coupled:
            raise CouplingError("n_groups required for an uncoupled base")
        n_groups = 2 * A.base.rho_inv
    if not 1 <= n_groups <= A.base.L_c:
        raise CouplingError(f"cannot augment {n_groups} of {A.base.L_c} column groups")
    return SensingMatrix(A.base, A.M, A.N, A.blocks, A.row_perm, A.col_perm, A.seed,
                         augmented=True, identity_groups=n_groups)
