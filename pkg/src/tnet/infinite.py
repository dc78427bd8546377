"""Translation-invariant MPS in the thermodynamic limit.

A :class:`UniformMps` holds one tensor ``A[a, s, b]`` repeated on every
site. Its transfer matrix is ``E[(a, a'), (b, b')] = sum_s A[a, s, b]
conj(A[a', s, b'])``; right eigenvectors read as matrices ``R`` satisfy
``sum_s A_s R A_s^dag = lambda R``.
"""

from __future__ import annotations

import csv
import math
import threading
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse.linalg as spla

from .cpt import NotMixingError
from .mps import Mps, check_dense_size, overlap

#: largest bond dimension for which E is eigendecomposed densely
DENSE_BOND_LIMIT = 64
#: gaps below this are reported as numerically marginal
MARGINAL_GAP = 1e-6
LEFT_GAUGE_TOL = 1e-10

MIXING = "mixing"
NOT_MIXING = "not-mixing"
MARGINAL = "marginal"


@dataclass(frozen=True)
class DominantData:
    """Leading eigendata of a transfer matrix.

    ``right`` and ``left`` are ``D x D`` matrices normalized so that
    ``tr(left @ right) = 1``; in left gauge ``left`` is the identity.
    ``lam2`` is the largest subleading modulus (0 when ``D = 1``).
    """

    lam0: complex
    right: np.ndarray
    left: np.ndarray
    lam2: float
    status: str

    @property
    def mixing(self) -> bool:
        return self.status == MIXING


class UniformMps:
    """One tensor ``A`` of shape ``(D, d, D)`` repeated along an infinite chain."""

    def __init__(self, a, gauge: str = "none"):
        a = np.array(a, dtype=np.complex128)
        if a.ndim != 3 or a.shape[0] != a.shape[2]:
            raise ValueError("uniform tensors need shape (D, d, D)")
        if gauge not in ("left", "right", "none"):
            raise ValueError(f"unknown gauge {gauge!r}")
        if gauge == "left":
            res = left_gauge_residual(a)
            if res > LEFT_GAUGE_TOL:
                raise ValueError(f"tensor is not left-isometric (residual {res:.2e})")
        self.a = a
        self.gauge = gauge
        self._cache: dict = {}
        self._lock = threading.RLock()

    @property
    def D(self) -> int:
        return self.a.shape[0]

    @property
    def d(self) -> int:
        return self.a.shape[1]

    def transfer(self, op=None) -> np.ndarray:
        """Dense ``D^2 x D^2`` transfer matrix, with ``op[t, s]`` inserted if given."""
        if op is None:
            with self._lock:
                if "E" not in self._cache:
                    e = _transfer(self.a, None)
                    e.setflags(write=False)
                    self._cache["E"] = e
                return self._cache["E"]
        return _transfer(self.a, op)

    def dominant(self) -> DominantData:
        with self._lock:
            if "dominant" not in self._cache:
                self._cache["dominant"] = _dominant(self)
            return self._cache["dominant"]

    def to_periodic(self, L: int) -> Mps:
        """``L``-site ring with the trace closure."""
        return Mps([self.a] * L, boundary="periodic")


def _transfer(a: np.ndarray, op) -> np.ndarray:
    D = a.shape[0]
    if op is None:
        e = np.einsum("asb,csd->acbd", a, a.conj())
    else:
        e = np.einsum("asb,ts,ctd->acbd", a, np.asarray(op), a.conj())
    return e.reshape(D * D, D * D)


def left_gauge_residual(a: np.ndarray) -> float:
    D = a.shape[0]
    acc = np.einsum("asb,asc->bc", a.conj(), a)
    return float(np.max(np.abs(acc - np.eye(D))))


def _fixed_matrix(v: np.ndarray, D: int) -> np.ndarray:
    """Eigenvector reshaped to a hermitian matrix with positive trace."""
    m = v.reshape(D, D)
    tr = np.trace(m)
    if abs(tr) > 1e-14:
        m = m * (abs(tr) / tr)
    else:
        k = np.argmax(np.abs(m))
        m = m * (abs(m.flat[k]) / m.flat[k])
    return (m + m.conj().T) / 2


def _dominant(u: UniformMps) -> DominantData:
    D = u.D
    if D == 1:
        e = complex(u.transfer()[0, 0])
        one = np.ones((1, 1), dtype=np.complex128)
        return DominantData(e, one, one, 0.0, MIXING)
    e = u.transfer()
    if D <= DENSE_BOND_LIMIT:
        w, vr = np.linalg.eig(e)
        wl, vl = np.linalg.eig(e.conj().T)
    else:
        op = spla.LinearOperator(e.shape, matvec=lambda x: e @ x, dtype=np.complex128)
        opt = spla.LinearOperator(e.shape, matvec=lambda x: e.conj().T @ x, dtype=np.complex128)
        w, vr = spla.eigs(op, k=2, which="LM", tol=1e-12)
        wl, vl = spla.eigs(opt, k=1, which="LM", tol=1e-12)
    order = np.argsort(-np.abs(w), kind="stable")
    w, vr = w[order], vr[:, order]
    lam0 = w[0]
    lam2 = float(np.abs(w[1]))
    k = int(np.argmin(np.abs(wl - np.conj(lam0))))
    right = _fixed_matrix(vr[:, 0], D)
    # a left eigenvector y of E gives the matrix conj(y) acting as sum A^dag X A
    left = _fixed_matrix(vl[:, k].conj(), D).conj()
    if u.gauge == "left":
        left = np.eye(D, dtype=np.complex128)
    norm = np.trace(left @ right)
    right = right / norm
    ratio = lam2 / abs(lam0) if abs(lam0) > 0 else 1.0
    gap = 1.0 - ratio
    if gap <= 1e-9:
        status = NOT_MIXING
    elif gap < MARGINAL_GAP:
        status = MARGINAL
    else:
        status = MIXING
    return DominantData(complex(lam0), right, left, lam2, status)


def dominant_boundaries(u: UniformMps):
    """``(lam0, right, left, mixing)`` for the transfer matrix of ``u``.

    ``left`` is returned in the vector layout that multiplies ``E`` from the
    left, so ``left @ E = lam0 * left``.
    """
    dom = u.dominant()
    return dom.lam0, dom.right.ravel(), dom.left.conj().ravel(), dom.mixing


def left_canonical(u: UniformMps) -> UniformMps:
    """Gauge ``u`` to ``sum_s A_s^dag A_s = I`` and ``lam0 = 1``.

    With the left fixed point ``X = G^dag G`` the new tensor is
    ``G A_s G^{-1} / sqrt(lam0)``.
    """
    dom = u.dominant()
    if not dom.mixing:
        raise NotMixingError(f"transfer matrix is {dom.status}")
    x = dom.left
    w, v = np.linalg.eigh(x)
    if w[0] < -1e-8 * w[-1]:
        raise ValueError(f"left fixed point is not positive (eigenvalue {w[0]:.2e})")
    if w[0] <= 1e-14 * w[-1]:
        raise ValueError("left fixed point is singular; the tensor has a reducible bond")
    g = (v * np.sqrt(w)) @ v.conj().T
    gi = (v / np.sqrt(w)) @ v.conj().T
    a = np.einsum("xa,asb,by->xsy", g, u.a, gi) / np.sqrt(dom.lam0.real)
    return UniformMps(a, gauge="left")


def _require_mixing(u: UniformMps) -> DominantData:
    dom = u.dominant()
    if not dom.mixing:
        raise NotMixingError(f"transfer matrix is {dom.status}")
    return dom


def normalization_prefactor(u: UniformMps) -> complex:
    """``(Phi+| Lambda)`` for a left-gauged tensor, equal to 1 by construction."""
    dom = _require_mixing(u)
    return complex(np.trace(dom.right))


def td_rdm(u: UniformMps, ell: int) -> np.ndarray:
    """Reduced density matrix of ``ell`` consecutive sites of the infinite chain.

    Rows are ket configurations ``(s_1 .. s_ell)`` and columns bra
    configurations, first site most significant.
    """
    if u.gauge != "left":
        raise ValueError("td_rdm expects a left-gauged tensor")
    if ell < 1:
        raise ValueError("ell must be positive")
    check_dense_size([u.d] * ell, limit=20)
    dom = _require_mixing(u)
    D, d = u.D, u.d
    k = np.eye(D, dtype=np.complex128).reshape(D, 1, D)
    for _ in range(ell):
        k = np.tensordot(k, u.a, axes=(2, 0)).reshape(D, -1, D)
    return np.einsum("asb,bc,atc->st", k, dom.right, k.conj())


def td_correlator(u: UniformMps, op1, op2, ell: int) -> complex:
    """Connected correlator ``<op1_0 op2_ell> - <op1><op2>``.

    Evaluated as ``(v_L| (E^(ell-1) - |Lambda)(Phi+|) |v_R)`` by iterating the
    deflated transfer matrix, which avoids cancellation at large ``ell``.
    """
    if u.gauge != "left":
        raise ValueError("td_correlator expects a left-gauged tensor")
    if ell < 1:
        raise ValueError("ell must be at least 1")
    dom = _require_mixing(u)
    D = u.D
    phi = np.eye(D, dtype=np.complex128).ravel()
    lam = dom.right.ravel()
    e = u.transfer()
    v_left = phi @ u.transfer(op1)
    v_right = u.transfer(op2) @ lam
    w = v_left - (v_left @ lam) * phi
    for _ in range(ell - 1):
        w = w @ e
        w = w - (w @ lam) * phi
    return complex(w @ v_right)


def local_expectation(u: UniformMps, op) -> complex:
    """Single-site expectation value in a left-gauged mixing state."""
    dom = _require_mixing(u)
    phi = np.eye(u.D, dtype=np.complex128).ravel()
    return complex(phi @ u.transfer(op) @ dom.right.ravel())


def correlation_length(u: UniformMps) -> float:
    """``xi = -1 / ln |lam2 / lam0|``.

    ``D = 1`` gives 0; a subleading modulus within 1e-9 of the leading one
    gives ``inf``.
    """
    if u.D == 1:
        return 0.0
    dom = u.dominant()
    ratio = dom.lam2 / abs(dom.lam0)
    if ratio >= 1 - 1e-9:
        return math.inf
    if ratio == 0:
        return 0.0
    return -1.0 / math.log(ratio)


def homogenize(mps: Mps, tol: float = 1e-8) -> UniformMps:
    """Rewrite a translation-invariant periodic MPS with one repeated tensor.

    The tensor is block-cyclic: block ``(k, k + 1 mod L)`` holds ``A[k]_s``,
    scaled by ``L^(-1/L)`` so that the ring of ``L`` copies averages the
    ``L`` cyclic shifts of the input, which all equal the input state.
    """
    if mps.boundary != "periodic":
        raise ValueError("homogenize expects a periodic MPS")
    L = mps.L
    shifted = Mps(mps.tensors[1:] + mps.tensors[:1], boundary="periodic")
    nn = overlap(mps, mps).real
    if nn <= 0:
        raise ValueError("state has zero norm")
    ov = overlap(mps, shifted) / nn
    if abs(ov - 1) > tol:
        raise ValueError(f"state is not translation invariant (shift overlap {ov:.6g})")
    dims = [a.shape[0] for a in mps.tensors]
    d = mps.tensors[0].shape[1]
    if any(a.shape[1] != d for a in mps.tensors):
        raise ValueError("homogenize needs equal physical dimensions")
    offs = np.concatenate([[0], np.cumsum(dims)])
    n = int(offs[-1])
    b = np.zeros((n, d, n), dtype=np.complex128)
    for k, a in enumerate(mps.tensors):
        nxt = (k + 1) % L
        b[offs[k] : offs[k + 1], :, offs[nxt] : offs[nxt + 1]] = a
    return UniformMps(b * L ** (-1.0 / L))


# -- standard tensors --------------------------------------------------------

SPIN1_SZ = np.diag([1.0, 0.0, -1.0]).astype(np.complex128)


def aklt_tensor() -> np.ndarray:
    """Left-isometric AKLT tensor, physical basis ``(+1, 0, -1)``."""
    sp = np.array([[0, 1], [0, 0]], dtype=np.complex128)
    sz = np.diag([1.0, -1.0]).astype(np.complex128)
    mats = [np.sqrt(2 / 3) * sp, -np.sqrt(1 / 3) * sz, -np.sqrt(2 / 3) * sp.T]
    return np.stack(mats, axis=1)


def aklt() -> UniformMps:
    return UniformMps(aklt_tensor(), gauge="left")


def random_uniform(D: int, d: int, rng: np.random.Generator) -> UniformMps:
    """Left-gauged random tensor (Gaussian entries, then :func:`left_canonical`)."""
    a = rng.standard_normal((D, d, D)) + 1j * rng.standard_normal((D, d, D))
    return left_canonical(UniformMps(a))


def write_correlator_csv(path, ells: Sequence[int], values: Sequence[complex]) -> None:
    """CSV with columns ``ell, re, im``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["ell", "re", "im"])
        for ell, c in zip(ells, values):
            w.writerow([int(ell), repr(float(np.real(c))), repr(float(np.imag(c)))])
