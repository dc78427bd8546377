"""Matrix product operators and their application to MPS.

Site tensors have index order ``(left bond, out, in, right bond)``. An MPO
may carry boundary vectors ``(b_0|`` and ``|b_L)`` closing its outer bonds.
"""

from __future__ import annotations

import itertools
import json
import os
from typing import Mapping, Sequence

import numpy as np

from .mps import RIGHT, Mps, check_dense_size, entanglement_profile
from .tensor import DEFAULT_CUTOFF, fix_column_phases, load_tensor, save_tensor, svd_matrix


class Mpo:
    """Chain of four-index tensors with optional boundary vectors.

    Without boundary vectors the outer bonds must have dimension 1.
    """

    def __init__(self, tensors: Sequence, left=None, right=None):
        self.tensors = [np.array(w, dtype=np.complex128) for w in tensors]
        if not self.tensors:
            raise ValueError("an MPO needs at least one site")
        for w in self.tensors:
            if w.ndim != 4:
                raise ValueError("MPO tensors must have four indices")
        for l in range(len(self.tensors) - 1):
            if self.tensors[l].shape[3] != self.tensors[l + 1].shape[0]:
                raise ValueError(f"bond mismatch between sites {l} and {l + 1}")
        d0, dl = self.tensors[0].shape[0], self.tensors[-1].shape[3]
        self.left = np.ones(1, dtype=np.complex128) if left is None else np.asarray(left, dtype=np.complex128)
        self.right = np.ones(1, dtype=np.complex128) if right is None else np.asarray(right, dtype=np.complex128)
        if self.left.shape != (d0,) or self.right.shape != (dl,):
            raise ValueError("boundary vectors do not match the outer bonds")

    @property
    def L(self) -> int:
        return len(self.tensors)

    @property
    def bond_dims(self) -> list[int]:
        return [self.tensors[0].shape[0]] + [w.shape[3] for w in self.tensors]

    @property
    def max_bond(self) -> int:
        """Largest interior bond (outer bonds closed by boundary vectors count too)."""
        return max(self.bond_dims)

    def with_boundaries(self, left=None, right=None) -> "Mpo":
        return Mpo(self.tensors, self.left if left is None else left, self.right if right is None else right)

    def closed_tensors(self) -> list[np.ndarray]:
        """Site tensors with the boundary vectors absorbed, outer bonds of dimension 1."""
        ws = [w.copy() for w in self.tensors]
        ws[0] = np.tensordot(self.left, ws[0], axes=(0, 0))[None]
        ws[-1] = np.tensordot(ws[-1], self.right, axes=(3, 0))[..., None]
        return ws

    def to_dense(self) -> np.ndarray:
        check_dense_size([w.shape[1] for w in self.tensors], 14)
        ws = self.closed_tensors()
        op = ws[0][0]  # (out, in, b)
        for w in ws[1:]:
            op = np.tensordot(op, w, axes=(-1, 0))  # (o1, i1, ..., o, i, b)
        op = op[..., 0]
        L = self.L
        order = list(range(0, 2 * L, 2)) + list(range(1, 2 * L, 2))
        op = np.transpose(op, order)
        n = int(np.prod([w.shape[1] for w in ws]))
        m = int(np.prod([w.shape[2] for w in ws]))
        return op.reshape(n, m)

    def save(self, directory) -> None:
        os.makedirs(directory, exist_ok=True)
        manifest = {
            "L": self.L,
            "d_out": [w.shape[1] for w in self.tensors],
            "d_in": [w.shape[2] for w in self.tensors],
            "bond_dims": self.bond_dims,
            "sites": [f"site{l:04d}.tnet" for l in range(self.L)],
            "left": "left.tnet",
            "right": "right.tnet",
        }
        for name, w in zip(manifest["sites"], self.tensors):
            save_tensor(os.path.join(directory, name), w)
        save_tensor(os.path.join(directory, "left.tnet"), self.left)
        save_tensor(os.path.join(directory, "right.tnet"), self.right)
        with open(os.path.join(directory, "mpo.json"), "w") as fh:
            json.dump(manifest, fh, indent=2)

    @classmethod
    def load(cls, directory) -> "Mpo":
        with open(os.path.join(directory, "mpo.json")) as fh:
            manifest = json.load(fh)
        ws = [load_tensor(os.path.join(directory, n)) for n in manifest["sites"]]
        left = load_tensor(os.path.join(directory, manifest["left"]))
        right = load_tensor(os.path.join(directory, manifest["right"]))
        return cls(ws, left, right)


def product_mpo(ops: Sequence) -> Mpo:
    return Mpo([np.asarray(o, dtype=np.complex128)[None, :, :, None] for o in ops])


def identity_mpo(L: int, d: int) -> Mpo:
    return product_mpo([np.eye(d)] * L)


def random_mpo(L: int, d: int, D: int, rng: np.random.Generator) -> Mpo:
    ws = []
    for l in range(L):
        dl = 1 if l == 0 else D
        dr = 1 if l == L - 1 else D
        ws.append(rng.standard_normal((dl, d, d, dr)) + 1j * rng.standard_normal((dl, d, d, dr)))
    return Mpo(ws)


def compose(second: Mpo, first: Mpo) -> Mpo:
    """The operator product ``second @ first`` as one MPO (bonds multiply)."""
    if second.L != first.L:
        raise ValueError("length mismatch")
    ws = []
    for w2, w1 in zip(second.tensors, first.tensors):
        t = np.tensordot(w2, w1, axes=(2, 1))  # (a2, o, b2, a1, i, b1)
        t = t.transpose(0, 3, 1, 4, 2, 5)
        a2, a1, o, i, b2, b1 = t.shape
        ws.append(t.reshape(a2 * a1, o, i, b2 * b1))
    return Mpo(ws, np.kron(second.left, first.left), np.kron(second.right, first.right))


def apply_exact(mpo: Mpo, mps: Mps) -> Mps:
    """MPO-MPS product with bond dimension ``D_O * D_A`` and no compression."""
    if mpo.L != mps.L:
        raise ValueError("length mismatch")
    ws = mpo.closed_tensors()
    out = []
    for w, a in zip(ws, mps.tensors):
        if w.shape[2] != a.shape[1]:
            raise ValueError("physical dimension mismatch")
        t = np.tensordot(w, a, axes=(2, 1))  # (wa, t, wb, aa, ab)
        t = t.transpose(0, 3, 1, 2, 4)
        wa, aa, o, wb, ab = t.shape
        out.append(t.reshape(wa * aa, o, wb * ab))
    return Mps(out)


def compress(mps: Mps, max_bond: int | None = None, cutoff: float = 0.0) -> tuple[Mps, float]:
    """Two-pass SVD recompression; returns the MPS and total discarded weight.

    The state is first right-orthonormalized without truncation, then
    truncated bond by bond left to right and once more right to left. The
    discarded weight is measured on the normalized state; the output keeps
    the input norm.
    """
    ts = [a.copy() for a in mps.tensors]
    L = len(ts)
    cut = max(cutoff, DEFAULT_CUTOFF)
    for l in range(L - 1, 0, -1):
        ts[l], ts[l - 1] = _rstep(ts[l], ts[l - 1], None, DEFAULT_CUTOFF)[:2]
    nrm = float(np.linalg.norm(ts[0]))
    if nrm < 1e-300:
        zero = [np.zeros((1, a.shape[1], 1), dtype=np.complex128) for a in ts]
        return Mps(zero), 0.0
    ts[0] = ts[0] / nrm
    disc = 0.0
    for l in range(L - 1):
        dl, d, dr = ts[l].shape
        u, s, vh, w = svd_matrix(ts[l].reshape(dl * d, dr), max_bond, cut)
        u, vh = fix_column_phases(u, vh)
        disc += w
        s = s / np.linalg.norm(s)
        ts[l] = u.reshape(dl, d, -1)
        ts[l + 1] = np.tensordot(s[:, None] * vh, ts[l + 1], axes=(1, 0))
    for l in range(L - 1, 0, -1):
        ts[l], ts[l - 1], w = _rstep(ts[l], ts[l - 1], max_bond, cut)
        disc += w
    ts[0] = ts[0] * nrm
    return Mps(ts, ["center"] + [RIGHT] * (L - 1)), disc


def _rstep(a, prv, max_keep, cutoff):
    """Right-orthonormalize ``a``; the kept weight is rescaled to the full norm."""
    dl, d, dr = a.shape
    u, s, vh, w = svd_matrix(a.reshape(dl, d * dr).T, max_keep, cutoff)
    u, vh = fix_column_phases(u, vh)
    tot = float(np.sum(s**2) + w)
    kept = float(np.sum(s**2))
    if kept > 0:
        s = s * np.sqrt(tot / kept)
    new_a = u.T.reshape(-1, d, dr)
    rem = (s[:, None] * vh).T
    return new_a, np.tensordot(prv, rem, axes=(2, 0)), (w / tot if tot > 0 else 0.0)


def apply(mpo: Mpo, mps: Mps, max_bond: int | None = None, cutoff: float = 0.0) -> tuple[Mps, float]:
    """Apply ``mpo`` to ``mps`` and recompress to ``max_bond``.

    Returns ``(result, discarded_weight)``.
    """
    return compress(apply_exact(mpo, mps), max_bond, cutoff)


# -- correlator-product (Jastrow) operators ---------------------------------


def _factor_table(c, L: int, r: int, d: int) -> np.ndarray:
    c = np.asarray(c, dtype=np.complex128)
    if c.shape == (d, d):
        return np.broadcast_to(c, (L - r, d, d))
    if c.shape != (L - r, d, d):
        raise ValueError(f"range-{r} factors need shape ({d}, {d}) or ({L - r}, {d}, {d})")
    return c


def from_jastrow(factors: Mapping[int, object], L: int, d: int) -> Mpo:
    """Diagonal MPO multiplying each amplitude by ``prod C[r][j][s_j, s_{j+r}]``.

    ``factors[r]`` holds the range-``r`` correlators either as one ``d x d``
    table (homogeneous) or as ``L - r`` tables indexed by the left site ``j``.
    The bond after site ``j`` is a shift register of the last
    ``min(l, j + 1)`` local values, so interior bonds have dimension ``d**l``
    with ``l`` the largest range.
    """
    if not factors:
        return identity_mpo(L, d)
    ell = max(factors)
    if min(factors) < 1:
        raise ValueError("ranges start at 1")
    if ell >= L:
        raise ValueError(f"range {ell} does not fit an open chain of {L} sites")
    tables = {r: _factor_table(c, L, r, d) for r, c in factors.items()}
    ws = []
    for j in range(L):
        m_in = min(ell, j)
        m_out = min(ell, j + 1) if j < L - 1 else 0
        w = np.zeros((d**m_in, d, d, d**m_out), dtype=np.complex128)
        for hist in itertools.product(range(d), repeat=m_in):
            # hist[0] = s_{j-1}, hist[1] = s_{j-2}, ...
            a = _register_index(hist, d)
            for s in range(d):
                weight = 1.0 + 0j
                for r, tab in tables.items():
                    if r <= m_in:
                        weight *= tab[j - r][hist[r - 1], s]
                new = ((s,) + hist)[:m_out]
                w[a, s, s, _register_index(new, d)] = weight
        ws.append(w)
    return Mpo(ws)


def _register_index(hist: Sequence[int], d: int) -> int:
    idx = 0
    for v in hist:
        idx = idx * d + v
    return idx


def jastrow_weights_dense(factors: Mapping[int, object], L: int, d: int) -> np.ndarray:
    """Per-configuration products of all factors (oracle helper)."""
    check_dense_size([d] * L)
    tables = {r: _factor_table(c, L, r, d) for r, c in factors.items()}
    out = np.ones(d**L, dtype=np.complex128)
    for k, conf in enumerate(itertools.product(range(d), repeat=L)):
        for r, tab in tables.items():
            for j in range(L - r):
                out[k] *= tab[j][conf[j], conf[j + r]]
    return out


def entanglement_bound_jastrow(ell: int, d: int) -> float:
    """Bipartite entropy bound ``l * log2(d)`` for a range-``l`` correlator product."""
    if ell < 0:
        raise ValueError("range must be nonnegative")
    return float(ell * np.log2(d))


def max_entropy_after(mpo: Mpo, mps: Mps) -> float:
    """Largest bond entropy of the normalized ``mpo |mps>`` (diagnostic)."""
    out, _ = apply(mpo, mps)
    return max(entanglement_profile(out), default=0.0)
