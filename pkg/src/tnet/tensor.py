"""Dense complex tensors: contraction, permutation, index fusion and SVD.

Tensors are plain :class:`numpy.ndarray` objects of dtype ``complex128``.
Entries are linearized in C order (last index fastest); every fuse/split
round trip in the package relies on that.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO, Sequence

import numpy as np

MAGIC = b"TNET1"

#: Relative threshold below which singular values count as exact zeros.
DEFAULT_CUTOFF = 1e-12


def as_tensor(a) -> np.ndarray:
    """Promote ``a`` to a C-contiguous complex128 array with rank >= 1."""
    t = np.asarray(a, dtype=np.complex128)
    if t.ndim == 0:
        raise ValueError("tensors need at least one index")
    t = np.ascontiguousarray(t)
    if any(n < 1 for n in t.shape):
        raise ValueError(f"every dimension must be >= 1, got {t.shape}")
    return t


def contract(a, b, pairs: Sequence[tuple[int, int]]) -> np.ndarray:
    """Sum over paired indices of ``a`` and ``b``.

    The result carries the unpaired indices of ``a`` (in order) followed by
    the unpaired indices of ``b``.
    """
    a = np.asarray(a, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    ia, ib = [], []
    for p, q in pairs:
        if not (0 <= p < a.ndim) or not (0 <= q < b.ndim):
            raise IndexError(f"pair ({p}, {q}) out of range for ranks {a.ndim}, {b.ndim}")
        if a.shape[p] != b.shape[q]:
            raise ValueError(
                f"dimension mismatch on pair ({p}, {q}): {a.shape[p]} != {b.shape[q]}"
            )
        ia.append(p)
        ib.append(q)
    if len(set(ia)) != len(ia) or len(set(ib)) != len(ib):
        raise ValueError("an index appears in more than one pair")
    return np.tensordot(a, b, axes=(ia, ib))


def permute(t, order: Sequence[int]) -> np.ndarray:
    t = np.asarray(t, dtype=np.complex128)
    order = list(order)
    if sorted(order) != list(range(t.ndim)):
        raise ValueError(f"{order} is not a permutation of 0..{t.ndim - 1}")
    return np.ascontiguousarray(np.transpose(t, order))


def inverse_permutation(order: Sequence[int]) -> list[int]:
    inv = [0] * len(order)
    for i, p in enumerate(order):
        inv[p] = i
    return inv


def fuse(t, groups: Sequence[Sequence[int]]) -> np.ndarray:
    """Permute ``t`` so that each group is contiguous, then merge each group.

    ``groups`` must partition ``range(t.ndim)``. Within a group the listed
    order decides which index runs fastest (the last one).
    """
    t = np.asarray(t, dtype=np.complex128)
    flat = [i for g in groups for i in g]
    if sorted(flat) != list(range(t.ndim)) or any(len(g) == 0 for g in groups):
        raise ValueError(f"groups {groups} do not partition the {t.ndim} indices")
    p = permute(t, flat)
    shape = [int(np.prod([t.shape[i] for i in g])) for g in groups]
    return p.reshape(shape)


def split(t, groups: Sequence[Sequence[int]], dims: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`fuse`: ``dims`` are the original index dimensions."""
    t = np.asarray(t, dtype=np.complex128)
    flat = [i for g in groups for i in g]
    shape = [dims[i] for i in flat]
    return permute(t.reshape(shape), inverse_permutation(flat))


@dataclass(frozen=True)
class SvdResult:
    """Truncated singular value decomposition ``t ~ left @ diag(s) @ right``.

    ``left`` keeps the row indices of the input plus one trailing bond index;
    ``right`` has a leading bond index followed by the column indices.
    """

    left_isometry: np.ndarray
    singular_values: np.ndarray
    right_isometry: np.ndarray
    discarded_weight: float

    @property
    def rank(self) -> int:
        return len(self.singular_values)


def truncation_rank(s: np.ndarray, max_keep: int | None, cutoff: float) -> int:
    """Number of leading singular values surviving ``cutoff * s[0]`` and ``max_keep``."""
    if len(s) == 0 or s[0] == 0.0:
        return 1 if len(s) else 0
    keep = int(np.count_nonzero(s >= cutoff * s[0]))
    keep = max(keep, 1)
    if max_keep is not None:
        keep = min(keep, max_keep)
    return keep


def svd_matrix(m: np.ndarray, max_keep: int | None = None, cutoff: float = DEFAULT_CUTOFF):
    """SVD of a matrix with truncation. Returns ``(u, s, vh, discarded_weight)``."""
    if not np.all(np.isfinite(m)):
        raise np.linalg.LinAlgError("matrix has non-finite entries")
    try:
        u, s, vh = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError:
        # gesdd occasionally fails to converge; gesvd is slower but sturdier
        import scipy.linalg

        u, s, vh = scipy.linalg.svd(m, full_matrices=False, lapack_driver="gesvd")
    keep = truncation_rank(s, max_keep, cutoff)
    discarded = float(np.sum(s[keep:] ** 2))
    return u[:, :keep], s[:keep], vh[:keep], discarded


def factorize_svd(
    t, row_indices: Sequence[int], max_keep: int | None = None, cutoff: float = DEFAULT_CUTOFF
) -> SvdResult:
    t = np.asarray(t, dtype=np.complex128)
    rows = list(row_indices)
    cols = [i for i in range(t.ndim) if i not in rows]
    if not rows or not cols:
        raise ValueError("row_indices must be a nonempty proper subset of the indices")
    if max_keep is not None and max_keep < 1:
        raise ValueError("max_keep must be positive")
    m = fuse(t, [rows, cols])
    u, s, vh, discarded = svd_matrix(m, max_keep, cutoff)
    left = u.reshape([t.shape[i] for i in rows] + [len(s)])
    right = vh.reshape([len(s)] + [t.shape[i] for i in cols])
    return SvdResult(left, s, right, discarded)


def fix_column_phases(u: np.ndarray, vh: np.ndarray | None = None):
    """Make the largest-modulus entry of each column of ``u`` real positive.

    The compensating phase goes into the matching row of ``vh`` so that the
    product is unchanged.
    """
    idx = np.argmax(np.abs(u), axis=0)
    ph = u[idx, np.arange(u.shape[1])]
    ph = np.where(np.abs(ph) > 0, ph / np.abs(ph), 1.0)
    u = u / ph
    if vh is not None:
        vh = vh * ph[:, None]
    return u, vh


def frobenius_norm(t) -> float:
    return float(np.linalg.norm(np.ravel(t)))


# -- binary dump -------------------------------------------------------------


def write_tensor(fh: BinaryIO, t) -> None:
    t = as_tensor(t)
    fh.write(MAGIC)
    fh.write(struct.pack("<q", t.ndim))
    fh.write(struct.pack(f"<{t.ndim}q", *t.shape))
    inter = np.empty(2 * t.size, dtype="<f8")
    flat = t.ravel()
    inter[0::2] = flat.real
    inter[1::2] = flat.imag
    fh.write(inter.tobytes())


def read_tensor(fh: BinaryIO) -> np.ndarray:
    magic = fh.read(len(MAGIC))
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    (rank,) = struct.unpack("<q", fh.read(8))
    if rank < 1:
        raise ValueError(f"bad rank {rank}")
    dims = struct.unpack(f"<{rank}q", fh.read(8 * rank))
    n = int(np.prod(dims))
    raw = np.frombuffer(fh.read(16 * n), dtype="<f8")
    if raw.size != 2 * n:
        raise ValueError("truncated tensor dump")
    return (raw[0::2] + 1j * raw[1::2]).reshape(dims)


def save_tensor(path, t) -> None:
    with open(path, "wb") as fh:
        write_tensor(fh, t)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_tensor(fh)
