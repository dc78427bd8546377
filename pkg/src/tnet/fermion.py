"""Creation operators on delocalized orbitals, Slater determinants and a CI example.

Spinless fermions on ``L`` levels map to qubits through the Jordan-Wigner
string ``c_l^dag = sz (x) ... (x) sz (x) s+_l (x) 1 ...`` with
``|0>`` empty, ``|1>`` filled and ``sz = diag(1, -1)``. MPO tensors follow
the package layout ``W[a, out, in, b]``; ``B[out][in]`` below denotes the
``2 x 2`` bond matrix ``W[:, out, in, :]``.
"""

from __future__ import annotations

import csv
import itertools
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .mpo import Mpo, apply_exact, compose
from .mps import Mps, check_dense_size, product_state, schmidt

ORTHONORMAL_TOL = 1e-10
#: largest 2^N accepted by :func:`slater_mps`
SLATER_BOND_LIMIT = 256

SZ = np.diag([1.0, -1.0]).astype(np.complex128)
#: bond lowering ``|1) -> |0)`` read as a matrix with rows on the left bond
LOWER = np.array([[0, 0], [1, 0]], dtype=np.complex128)
# physical raising |0> -> |1>
S_PLUS = np.array([[0, 0], [1, 0]], dtype=np.complex128)


@dataclass(frozen=True)
class OrbitalSet:
    """Rows of ``orbitals`` are one-body wavefunctions ``phi_alpha(l)``."""

    orbitals: np.ndarray

    def __post_init__(self):
        phi = np.atleast_2d(np.asarray(self.orbitals, dtype=np.complex128))
        if phi.ndim != 2:
            raise ValueError("orbitals must form an N x L array")
        object.__setattr__(self, "orbitals", phi)
        res = self.residual
        if res > ORTHONORMAL_TOL:
            raise ValueError(f"orbitals are not orthonormal (residual {res:.2e})")

    @property
    def N(self) -> int:
        return self.orbitals.shape[0]

    @property
    def L(self) -> int:
        return self.orbitals.shape[1]

    @property
    def residual(self) -> float:
        """``max |sum_l phi_a(l) conj(phi_b(l)) - delta_ab|``."""
        if self.orbitals.shape[0] == 0:
            return 0.0
        g = self.orbitals @ self.orbitals.conj().T
        return float(np.max(np.abs(g - np.eye(g.shape[0]))))

    @classmethod
    def vacuum(cls, L: int) -> "OrbitalSet":
        return cls(np.zeros((0, L), dtype=np.complex128))

    @classmethod
    def plane_waves(cls, L: int, N: int) -> "OrbitalSet":
        """``exp(4 pi i alpha l / L) / sqrt(L)`` for ``alpha = 1 .. N``."""
        ell = np.arange(1, L + 1)
        return cls(np.array([np.exp(4j * np.pi * a * ell / L) / np.sqrt(L) for a in range(1, N + 1)]))

    @classmethod
    def random(cls, L: int, N: int, rng: np.random.Generator) -> "OrbitalSet":
        g = rng.standard_normal((L, N)) + 1j * rng.standard_normal((L, N))
        q, _ = np.linalg.qr(g)
        return cls(q.T)


STATISTICS = ("fermion", "boson", "anyon")


def _pass_matrix(statistics: str, phase: float) -> np.ndarray:
    if statistics == "fermion":
        return SZ.copy()
    if statistics == "boson":
        return np.eye(2, dtype=np.complex128)
    if statistics == "anyon":
        return np.diag([np.exp(1j * phase), np.exp(-1j * phase)])
    raise ValueError(f"unknown statistics {statistics!r}")


def creation_mpo(phi, statistics: str = "fermion", phase: float = 0.0, active: bool = True) -> Mpo:
    """Bond-2 MPO of ``sum_l phi(l) c_l^dag``.

    Each block ``B[r][r']`` is a physical ``2 x 2`` operator:
    ``B[0][0] = 1``, ``B[0][1] = 0``, ``B[1][0] = phi(l) c^dag`` and
    ``B[1][1]`` equal to ``sz`` (fermions), the identity (hard-core bosons)
    or ``exp(i phase sz)`` (abelian anyons). Boundaries are ``(b_0| = (1|``
    and ``|b_L) = |0)``; ``active=False`` sets ``(b_0| = (0|``, which turns
    the MPO into the identity.
    """
    phi = np.asarray(phi, dtype=np.complex128).ravel()
    nrm = np.linalg.norm(phi)
    if abs(nrm - 1) > 1e-8:
        warnings.warn(f"orbital norm is {nrm:.6g}, not 1", RuntimeWarning, stacklevel=2)
    pas = _pass_matrix(statistics, phase)
    ws = []
    for amp in phi:
        # blocks are physical operators indexed by (left bond, right bond)
        w = np.zeros((2, 2, 2, 2), dtype=np.complex128)
        w[0, :, :, 0] = np.eye(2)
        w[1, :, :, 0] = amp * S_PLUS
        w[1, :, :, 1] = pas
        ws.append(w)
    left = np.array([0, 1] if active else [1, 0], dtype=np.complex128)
    right = np.array([1, 0], dtype=np.complex128)
    return Mpo(ws, left, right)


def vacuum(L: int) -> Mps:
    return product_state([0] * L, d=2)


def _close(ts: list, left: np.ndarray, right: np.ndarray) -> Mps:
    ts = [t.copy() for t in ts]
    ts[0] = np.tensordot(left, ts[0], axes=(0, 0))[None]
    ts[-1] = np.tensordot(ts[-1], right, axes=(2, 0))[..., None]
    return Mps(ts)


def _check_slater(orbs: OrbitalSet) -> None:
    if orbs.N > orbs.L:
        raise ValueError("more orbitals than levels")
    if 2**orbs.N > SLATER_BOND_LIMIT:
        raise ValueError(f"bond dimension 2^{orbs.N} exceeds {SLATER_BOND_LIMIT}")


def slater_mps(orbs: OrbitalSet, method: str = "kron") -> Mps:
    """Exact MPS of ``c_1^dag ... c_N^dag |vacuum>`` with bond dimension ``2^N``.

    ``method="kron"`` stacks the creation MPOs onto the vacuum (applying
    ``c_N^dag`` first); terms whose internal indices break
    ``q_1 >= ... >= q_N`` vanish because ``B[0][1] = 0``. ``method="direct"``
    writes each site matrix as the sum of the ``N + 1`` surviving terms. The bond
    index is the Kronecker index ``(q_1, ..., q_N)`` with ``q_1`` most
    significant in both cases.
    """
    _check_slater(orbs)
    L, N = orbs.L, orbs.N
    if N == 0:
        return vacuum(L)
    if method == "kron":
        stack = creation_mpo(orbs.orbitals[0])
        for a in range(1, N):
            stack = compose(stack, creation_mpo(orbs.orbitals[a]))
        return apply_exact(stack, vacuum(L))
    if method != "direct":
        raise ValueError(f"unknown method {method!r}")
    eye = np.eye(2, dtype=np.complex128)
    ts = []
    for l in range(L):
        a1 = np.zeros((2**N, 2**N), dtype=np.complex128)
        for k in range(N):
            factors = [SZ] * k + [orbs.orbitals[k, l] * LOWER] + [eye] * (N - k - 1)
            m = factors[0]
            for f in factors[1:]:
                m = np.kron(m, f)
            a1 += m
        ts.append(np.stack([np.eye(2**N, dtype=np.complex128), a1], axis=1))
    left = _kron_power(np.array([0, 1.0]), N)
    right = _kron_power(np.array([1, 0.0]), N)
    return _close(ts, left, right)


def _kron_power(v: np.ndarray, n: int) -> np.ndarray:
    out = np.ones(1, dtype=np.complex128)
    for _ in range(n):
        out = np.kron(out, v)
    return out


def slater_half_chain_entropy(orbs: OrbitalSet) -> float:
    """Entanglement entropy (bits) between the first ``L // 2`` levels and the rest."""
    return schmidt(slater_mps(orbs), orbs.L // 2).entropy


# -- configuration interaction ----------------------------------------------


def ci_two_plus_two(phis, alpha: complex, beta: complex, variant: str = "standard") -> Mpo:
    """MPO of ``alpha c_1^dag c_2^dag + beta c_3^dag c_4^dag``.

    ``standard`` is the bond-8 direct sum of the two bond-4 products;
    ``cheap`` is the bond-6 construction whose bond state 5 means "nothing
    created yet", states 1-4 carry one of the four orbitals and state 0
    means "done".
    """
    phis = np.asarray(phis, dtype=np.complex128)
    if phis.ndim != 2 or phis.shape[0] != 4:
        raise ValueError("expected four orbitals")
    L = phis.shape[1]
    if variant == "standard":
        first = compose(creation_mpo(phis[0]), creation_mpo(phis[1]))
        second = compose(creation_mpo(phis[2]), creation_mpo(phis[3]))
        ws = []
        for w1, w2 in zip(first.tensors, second.tensors):
            w = np.zeros((8, 2, 2, 8), dtype=np.complex128)
            w[:4, :, :, :4] = w1
            w[4:, :, :, 4:] = w2
            ws.append(w)
        left = np.kron([1, 1], first.left)
        right = np.kron([alpha, beta], first.right)
        return Mpo(ws, left, right)
    if variant != "cheap":
        raise ValueError(f"unknown variant {variant!r}")
    sa, sb = np.sqrt(complex(alpha)), np.sqrt(complex(beta))
    ws = []
    for l in range(L):
        p1, p2, p3, p4 = phis[:, l]
        w = np.zeros((6, 2, 2, 6), dtype=np.complex128)
        w[:, 0, 0, :] = np.eye(6)
        low = np.zeros((6, 6), dtype=np.complex128)
        low[1:5, 0] = [sa * p1, sb * p3, sb * p4, sa * p2]
        low[5, 1:5] = [-sa * p2, -sb * p4, sb * p3, sa * p1]
        w[:, 1, 0, :] = low
        w[:, 1, 1, :] = np.diag([1, -1, -1, -1, -1, 1])
        ws.append(w)
    left = np.zeros(6, dtype=np.complex128)
    left[5] = 1
    right = np.zeros(6, dtype=np.complex128)
    right[0] = 1
    return Mpo(ws, left, right)


# -- dense oracles -----------------------------------------------------------


def dense_creation(L: int, l: int) -> np.ndarray:
    """``c_l^dag`` on ``2^L`` amplitudes, first level most significant."""
    check_dense_size([2] * L, 14)
    m = np.ones((1, 1), dtype=np.complex128)
    for j in range(L):
        m = np.kron(m, SZ if j < l else S_PLUS if j == l else np.eye(2))
    return m


def dense_orbital_creation(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=np.complex128)
    return sum(phi[l] * dense_creation(len(phi), l) for l in range(len(phi)))


def dense_slater(orbs: OrbitalSet) -> np.ndarray:
    """Amplitudes from ``N x N`` determinants over ordered occupied levels."""
    L, N = orbs.L, orbs.N
    check_dense_size([2] * L)
    psi = np.zeros(2**L, dtype=np.complex128)
    for occ in itertools.combinations(range(L), N):
        idx = sum(1 << (L - 1 - l) for l in occ)
        psi[idx] = np.linalg.det(orbs.orbitals[:, list(occ)]) if N else 1.0
    return psi


def dense_two_plus_two(phis, alpha, beta) -> np.ndarray:
    """Explicit double sum over ``l1 < l2`` of the 2+2 amplitudes on the vacuum."""
    phis = np.asarray(phis, dtype=np.complex128)
    L = phis.shape[1]
    psi = np.zeros(2**L, dtype=np.complex128)
    p1, p2, p3, p4 = phis
    for l1 in range(L):
        for l2 in range(l1 + 1, L):
            amp = alpha * (p1[l1] * p2[l2] - p1[l2] * p2[l1]) + beta * (p3[l1] * p4[l2] - p3[l2] * p4[l1])
            psi[(1 << (L - 1 - l1)) | (1 << (L - 1 - l2))] = amp
    return psi


# -- orbital files -----------------------------------------------------------


def _fmt(z: complex) -> str:
    z = complex(z)
    sign = "-" if np.signbit(z.imag) else "+"
    return f"{z.real!r}{sign}{abs(z.imag)!r}j"


def write_orbitals(path, orbitals: np.ndarray | OrbitalSet) -> None:
    """One CSV row per orbital, entries written as ``re+imj``."""
    phi = orbitals.orbitals if isinstance(orbitals, OrbitalSet) else np.atleast_2d(orbitals)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in phi:
            w.writerow([_fmt(z) for z in row])


def read_orbitals(path, check: bool = True) -> np.ndarray | OrbitalSet:
    """Read an orbital CSV; ``check=True`` returns a validated :class:`OrbitalSet`."""
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            rows.append([complex(x.strip().replace(" ", "")) for x in row])
    if len({len(r) for r in rows}) > 1:
        raise ValueError("orbital rows have different lengths")
    phi = np.array(rows, dtype=np.complex128)
    return OrbitalSet(phi) if check else phi


def number_moments(mps: Mps) -> tuple[float, float]:
    """Mean and variance of the total occupation of an open MPS."""
    n_op = np.diag([0.0, 1.0]).astype(np.complex128)
    ws = []
    L = mps.L
    for l in range(L):
        w = np.zeros((2, 2, 2, 2), dtype=np.complex128)
        w[0, :, :, 0] = np.eye(2)
        w[1, :, :, 1] = np.eye(2)
        w[0, :, :, 1] = n_op
        ws.append(w)
    ws[0] = ws[0][:1]
    ws[-1] = ws[-1][..., 1:]
    number = Mpo(ws)
    from .mps import expval_mpo, overlap

    nrm = overlap(mps, mps).real
    mean = expval_mpo(mps, number).real / nrm
    nn = apply_exact(number, mps)
    second = overlap(nn, nn).real / nrm
    return float(mean), float(second - mean**2)
