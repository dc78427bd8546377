"""Completely positive trace-preserving maps held as Kraus sets.

Superoperators act on row-major vectorized matrices, so that
``vec(V rho V^dag) = (V kron conj(V)) vec(rho)``.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

#: Largest n**2 for which the superoperator is eigendecomposed densely.
DENSE_SUPEROP_LIMIT = 4096

KRAUS_TOL = 1e-10


class NotMixingError(RuntimeError):
    """Raised when a fixed-point computation needs a mixing map and gets none."""


class ConvergenceError(RuntimeError):
    pass


def _as_kraus(ops) -> list[np.ndarray]:
    out = []
    for v in ops:
        v = np.asarray(v, dtype=np.complex128)
        if v.ndim != 2:
            raise ValueError("Kraus operators must be matrices")
        out.append(v)
    if not out:
        raise ValueError("empty Kraus set")
    shape = out[0].shape
    if any(v.shape != shape for v in out):
        raise ValueError("Kraus operators must share one shape")
    return out


class CpMap:
    """Completely positive map ``rho -> sum_s V_s rho V_s^dag`` without trace checks.

    Used for adjoints (which are unital rather than trace preserving) and as
    the base of :class:`CptMap`.
    """

    def __init__(self, kraus: Sequence):
        self.kraus = tuple(_as_kraus(kraus))
        self._cache: dict = {}
        self._lock = threading.Lock()

    @property
    def dim_out(self) -> int:
        return self.kraus[0].shape[0]

    @property
    def dim_in(self) -> int:
        return self.kraus[0].shape[1]

    def apply(self, rho) -> np.ndarray:
        rho = np.asarray(rho, dtype=np.complex128)
        n = self.dim_in
        if rho.shape != (n, n):
            raise ValueError(f"expected a {n}x{n} matrix, got {rho.shape}")
        if len(self.kraus) > 4 * n:
            # many Kraus operators: the cached superoperator is cheaper
            return (self.superop @ rho.ravel()).reshape(self.dim_out, self.dim_out)
        out = np.zeros((self.dim_out, self.dim_out), dtype=np.complex128)
        for v in self.kraus:
            out += v @ rho @ v.conj().T
        return out

    __call__ = apply

    @property
    def superop(self) -> np.ndarray:
        with self._lock:
            if "superop" not in self._cache:
                m, n = self.dim_out, self.dim_in
                s = np.zeros((m * m, n * n), dtype=np.complex128)
                for v in self.kraus:
                    s += np.kron(v, v.conj())
                s.setflags(write=False)
                self._cache["superop"] = s
            return self._cache["superop"]

    def adjoint(self) -> "CpMap":
        return CpMap([v.conj().T for v in self.kraus])


class CptMap(CpMap):
    """Quantum channel. The constructor rejects sets violating ``sum V^dag V = I``."""

    def __init__(self, kraus: Sequence, tol: float = KRAUS_TOL):
        super().__init__(kraus)
        acc = sum(v.conj().T @ v for v in self.kraus)
        err = float(np.max(np.abs(acc - np.eye(self.dim_in))))
        if err > tol:
            raise ValueError(f"Kraus set is not trace preserving (residual {err:.3e})")

    @classmethod
    def from_isometry(cls, iso, out_dims: Sequence[int], keep: Sequence[int]) -> "CptMap":
        """Channel ``rho -> tr_{not keep}(W rho W^dag)``.

        ``iso`` is an isometry whose output space factorizes as ``out_dims``;
        the factors listed in ``keep`` survive (in their original order).
        """
        iso = np.asarray(iso, dtype=np.complex128)
        n = iso.shape[1]
        t = iso.reshape(list(out_dims) + [n])
        traced = [i for i in range(len(out_dims)) if i not in keep]
        order = list(keep) + traced + [len(out_dims)]
        t = np.transpose(t, order)
        dk = int(np.prod([out_dims[i] for i in keep]))
        dt = int(np.prod([out_dims[i] for i in traced])) if traced else 1
        t = t.reshape(dk, dt, n)
        return cls([t[:, j, :] for j in range(dt)])


def adjoint(m: CpMap) -> CpMap:
    """Heisenberg-picture map, completely positive and unital when ``m`` is a channel."""
    return m.adjoint()


def compose(second: CpMap, first: CpMap) -> CptMap:
    """The channel ``second o first``."""
    ks = [a @ b for a in second.kraus for b in first.kraus]
    return CptMap(ks)


def tensor_product(a: CpMap, b: CpMap) -> CptMap:
    return CptMap([np.kron(x, y) for x in a.kraus for y in b.kraus])


def mixture(maps: Sequence[CpMap], weights: Sequence[float]) -> CptMap:
    """Convex combination of channels."""
    if any(w < 0 for w in weights) or abs(sum(weights) - 1) > 1e-12:
        raise ValueError("weights must be a probability vector")
    ks = [np.sqrt(w) * v for m, w in zip(maps, weights) if w > 0 for v in m.kraus]
    return CptMap(ks)


# -- standard channels -------------------------------------------------------

PAULI_X = np.array([[0, 1], [1, 0]], dtype=np.complex128)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=np.complex128)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=np.complex128)


def identity_channel(n: int) -> CptMap:
    return CptMap([np.eye(n)])


def depolarizing(p: float) -> CptMap:
    """Single-qubit depolarizing channel ``rho -> (1 - p) rho + p I/2``."""
    if not 0 <= p <= 4 / 3:
        raise ValueError("p must lie in [0, 4/3]")
    return CptMap(
        [np.sqrt(1 - 3 * p / 4) * np.eye(2)]
        + [np.sqrt(p / 4) * s for s in (PAULI_X, PAULI_Y, PAULI_Z)]
    )


def dephasing(n: int) -> CptMap:
    """Complete dephasing in the computational basis."""
    ks = []
    for j in range(n):
        p = np.zeros((n, n))
        p[j, j] = 1.0
        ks.append(p)
    return CptMap(ks)


# -- spectra -----------------------------------------------------------------


@dataclass(frozen=True)
class SpectralSummary:
    eigenvalues: np.ndarray
    fixed_point: np.ndarray | None
    gap: float
    mixing: bool
    #: right eigenmatrices, columns aligned with ``eigenvalues`` (dense path only)
    eigenmatrices: np.ndarray | None = None


def _normalize_density(v: np.ndarray, n: int) -> np.ndarray:
    rho = v.reshape(n, n)
    tr = np.trace(rho)
    if abs(tr) < 1e-14:
        raise NotMixingError("fixed-point eigenmatrix is traceless")
    rho = rho / tr
    return (rho + rho.conj().T) / 2


def _sorted_eig(s: np.ndarray):
    w, v = np.linalg.eig(s)
    order = np.lexsort((-w.real, -np.round(np.abs(w), 12)))
    return w[order], v[:, order]


def spectral_summary(m: CpMap, mixing_gap_tol: float = 1e-8) -> SpectralSummary:
    """Eigenvalues of the superoperator sorted by nonincreasing modulus.

    ``mixing`` holds when the eigenvalue 1 is simple and every other eigenvalue
    has modulus below ``1 - mixing_gap_tol``.
    """
    n = m.dim_in
    if m.dim_out != n:
        raise ValueError("spectral queries need dim_in == dim_out")
    if n * n <= DENSE_SUPEROP_LIMIT:
        w, v = _sorted_eig(m.superop)
    else:
        w, v = _leading_pair_power(m)
    lam2 = float(np.abs(w[1])) if len(w) > 1 else 0.0
    gap = 1.0 - lam2
    mixing = abs(w[0] - 1) < 1e-9 and lam2 < 1 - mixing_gap_tol
    fp = _normalize_density(v[:, 0], n) if mixing else None
    return SpectralSummary(w, fp, gap, bool(mixing), v if n * n <= DENSE_SUPEROP_LIMIT else None)


def _leading_pair_power(m: CpMap, iters: int = 5000, tol: float = 1e-13):
    """Leading fixed point and subleading eigenvalue estimate for large maps."""
    import scipy.sparse.linalg as sla

    n = m.dim_in

    def mv(x):
        return m.apply(x.reshape(n, n)).ravel()

    op = sla.LinearOperator((n * n, n * n), matvec=mv, dtype=np.complex128)
    rng = np.random.default_rng(7)
    v0 = rng.standard_normal(n * n) + 0j
    w, v = sla.eigs(op, k=min(6, n * n - 2), which="LM", v0=v0, tol=1e-12, maxiter=iters)
    order = np.lexsort((-w.real, -np.round(np.abs(w), 12)))
    return w[order], v[:, order]


def iterate_to_fixed_point(
    m: CpMap, seed, max_iters: int = 10_000, tol: float = 1e-12
) -> np.ndarray:
    """Power-iterate ``m`` from ``seed`` until ``||m(rho) - rho||_1 < tol``.

    Raises :class:`ConvergenceError` after ``max_iters`` steps. For a degenerate
    map such as the identity channel the seed is returned at iteration 0.
    """
    rho = np.asarray(seed, dtype=np.complex128)
    for _ in range(max_iters + 1):
        nxt = m.apply(rho)
        if trace_norm(nxt - rho) < tol:
            return nxt
        rho = nxt
    raise ConvergenceError(f"no fixed point within {max_iters} iterations")


def trace_norm(a: np.ndarray) -> float:
    return float(np.sum(np.linalg.svd(a, compute_uv=False)))


def dense_fixed_point(superop: np.ndarray) -> np.ndarray:
    """Trace-one fixed point from the null space of ``S - I`` (oracle helper)."""
    n = int(round(np.sqrt(superop.shape[0])))
    ns = scipy.linalg.null_space(superop - np.eye(n * n), rcond=1e-10)
    if ns.shape[1] != 1:
        raise NotMixingError(f"fixed space has dimension {ns.shape[1]}")
    return _normalize_density(ns[:, 0], n)


def left_eigenmatrices(superop: np.ndarray):
    """Eigenvalues and left eigenvectors ``y`` with ``y^dag S = lambda y^dag``.

    Returned as ``(w, Y)`` sorted like :func:`spectral_summary`; column ``a``
    of ``Y`` read as a matrix is an eigenoperator of the adjoint map with
    eigenvalue ``conj(w[a])``.
    """
    w, vl = scipy.linalg.eig(superop, left=True, right=False)
    order = np.lexsort((-w.real, -np.round(np.abs(w), 12)))
    return w[order], vl[:, order]


def random_channel(n: int, n_kraus: int, rng: np.random.Generator, n_out: int | None = None) -> CptMap:
    """Channel from a Haar-like random isometry ``C^n -> C^{n_out} x C^{n_kraus}``."""
    n_out = n if n_out is None else n_out
    g = rng.standard_normal((n_out * n_kraus, n)) + 1j * rng.standard_normal((n_out * n_kraus, n))
    q, _ = np.linalg.qr(g)
    t = q.reshape(n_out, n_kraus, n)
    return CptMap([t[:, j, :] for j in range(n_kraus)])
