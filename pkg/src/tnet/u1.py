"""U(1)-symmetric matrix product states with charge-blocked tensors.

Every virtual link carries integer charge sectors ``c`` with a degeneracy
space of dimension ``deg(c)``. A site tensor is stored as one dense matrix
per allowed triple ``(c_left, s, c_right)``; the selection rule
``c_right = c_left + charge(s)`` is structural, so entries violating it are
never stored. The leftmost link has the single sector ``0`` and the
rightmost link the single sector ``q``; the latter acts as the charge
selector that fixes the total charge of the state to ``q``.

Charge convention: ``charge(s)`` is an integer per local basis state, the
occupation number for bosons and fermions. Spin-1/2 chains use the number
of down spins (``(0, 1)``), so ``S_z = L/2 - q``.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .dmrg import SweepReport, _apply_two, _converged, _left_env, _lowest, _right_env
from .models import SPIN_CHARGES, NnHamiltonian
from .mpo import Mpo, apply_exact
from .mps import Mps, overlap
from .tensor import fix_column_phases, load_tensor, save_tensor

#: commutator norm above which a Hamiltonian term counts as charge-violating
CONSERVATION_TOL = 1e-10
#: relative gap below which singular values of different sectors count as degenerate
DEGENERACY_TOL = 1e-12


class ChargeError(ValueError):
    """Unreachable target charge or a tensor violating the selection rule."""


class NotConservingError(ValueError):
    """A Hamiltonian term does not commute with the total charge."""


# -- links -------------------------------------------------------------------


@dataclass(frozen=True)
class ChargedLink:
    """Charge sectors ``(c, deg)`` of a virtual link, ordered by charge.

    The dense index of a link runs over sectors in this order, each sector
    occupying ``deg`` consecutive positions.
    """

    sectors: tuple
    direction: str = "out"

    def __post_init__(self):
        secs = tuple(sorted((int(c), int(g)) for c, g in self.sectors))
        charges = [c for c, _ in secs]
        if len(set(charges)) != len(charges):
            raise ValueError("link charges must be distinct")
        if any(g <= 0 for _, g in secs):
            raise ValueError("sector degeneracies must be positive")
        if self.direction not in ("in", "out"):
            raise ValueError(f"unknown direction {self.direction!r}")
        object.__setattr__(self, "sectors", secs)

    @classmethod
    def from_dict(cls, degs: Mapping[int, int], direction: str = "out") -> "ChargedLink":
        return cls(tuple((c, g) for c, g in degs.items() if g > 0), direction)

    @property
    def charges(self) -> list[int]:
        return [c for c, _ in self.sectors]

    @property
    def dim(self) -> int:
        return sum(g for _, g in self.sectors)

    def degeneracy(self, c: int) -> int:
        return dict(self.sectors).get(c, 0)

    def __contains__(self, c) -> bool:
        return self.degeneracy(c) > 0

    def offsets(self) -> dict[int, slice]:
        out, pos = {}, 0
        for c, g in self.sectors:
            out[c] = slice(pos, pos + g)
            pos += g
        return out

    def charge_vector(self) -> np.ndarray:
        """Charge of every dense index."""
        return np.repeat([c for c, _ in self.sectors], [g for _, g in self.sectors]).astype(int)

    def dual(self) -> "ChargedLink":
        return ChargedLink(self.sectors, "in" if self.direction == "out" else "out")

    def to_json(self) -> dict:
        return {"sectors": [list(s) for s in self.sectors], "direction": self.direction}

    @classmethod
    def from_json(cls, obj) -> "ChargedLink":
        return cls(tuple(tuple(s) for s in obj["sectors"]), obj["direction"])


def _frozen(m) -> np.ndarray:
    a = np.array(m, dtype=np.complex128)
    a.setflags(write=False)
    return a


# -- blocked tensors -----------------------------------------------------------


class BlockedMpsTensor:
    """Site tensor stored as degeneracy-space matrices per allowed charge triple.

    Parameters
    ----------
    left, right:
        Incoming and outgoing virtual links.
    charges:
        Integer charge of each physical basis state.
    blocks:
        Mapping ``(c_left, s, c_right) -> (deg_left, deg_right)`` matrix.
        Allowed triples that are missing are stored as zero blocks; a key
        violating ``c_right = c_left + charges[s]`` raises :class:`ChargeError`.
    """

    def __init__(self, left: ChargedLink, charges: Sequence[int], right: ChargedLink, blocks: Mapping | None = None):
        self.left = ChargedLink(left.sectors, "in")
        self.right = ChargedLink(right.sectors, "out")
        self.charges = tuple(int(c) for c in charges)
        blocks = dict(blocks or {})
        allowed = set(self.allowed_keys())
        for key in blocks:
            if tuple(key) not in allowed:
                raise ChargeError(f"block {tuple(key)} violates c_right = c_left + charge(s) or the link sectors")
        self.blocks = {}
        for cl, s, cr in allowed:
            shape = (self.left.degeneracy(cl), self.right.degeneracy(cr))
            b = blocks.get((cl, s, cr))
            b = np.zeros(shape) if b is None else np.asarray(b)
            if b.shape != shape:
                raise ValueError(f"block {(cl, s, cr)} has shape {b.shape}, expected {shape}")
            self.blocks[(cl, s, cr)] = _frozen(b)

    @property
    def d(self) -> int:
        return len(self.charges)

    def allowed_keys(self) -> list[tuple[int, int, int]]:
        keys = []
        for cl in self.left.charges:
            for s, q in enumerate(self.charges):
                if cl + q in self.right:
                    keys.append((cl, s, cl + q))
        return keys

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.left.dim, self.d, self.right.dim

    @property
    def n_stored(self) -> int:
        return sum(b.size for b in self.blocks.values())

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=np.complex128)
        lo, ro = self.left.offsets(), self.right.offsets()
        for (cl, s, cr), b in self.blocks.items():
            out[lo[cl], s, ro[cr]] = b
        return out

    @classmethod
    def from_dense(
        cls, t, left: ChargedLink, charges: Sequence[int], right: ChargedLink, tol: float = 1e-12
    ) -> "BlockedMpsTensor":
        """Blocked form of a dense tensor; entries off the selection rule must vanish."""
        t = np.asarray(t, dtype=np.complex128)
        if t.shape != (left.dim, len(charges), right.dim):
            raise ValueError("dense shape does not match the links")
        lc, rc = left.charge_vector(), right.charge_vector()
        rule = lc[:, None, None] + np.asarray(charges)[None, :, None] == rc[None, None, :]
        stray = np.max(np.abs(t[~rule]), initial=0.0)
        if stray > tol * max(1.0, np.max(np.abs(t), initial=0.0)):
            raise ChargeError(f"dense tensor has weight {stray:.2e} outside the selection rule")
        lo, ro = left.offsets(), right.offsets()
        blocks = {}
        for cl in left.charges:
            for s, q in enumerate(charges):
                if cl + q in right:
                    blocks[(cl, s, cl + q)] = t[lo[cl], s, ro[cl + q]]
        return cls(left, charges, right, blocks)

    def right_sector_matrix(self, cr: int) -> tuple[np.ndarray, list]:
        """``R_{c_right}``: rows ``(c_left, s, deg_left)`` stacked, columns ``deg_right``."""
        keys = [k for k in self.blocks if k[2] == cr]
        if not keys:
            return np.zeros((0, self.right.degeneracy(cr))), keys
        return np.vstack([self.blocks[k] for k in keys]), keys

    def left_sector_matrix(self, cl: int) -> tuple[np.ndarray, list]:
        """Rows ``deg_left``, columns ``(s, c_right, deg_right)`` concatenated."""
        keys = [k for k in self.blocks if k[0] == cl]
        if not keys:
            return np.zeros((self.left.degeneracy(cl), 0)), keys
        return np.hstack([self.blocks[k] for k in keys]), keys


@dataclass(frozen=True)
class ChargeDiagonal:
    """Charge-preserving bond matrix: one block per charge of a shared link."""

    blocks: dict

    def to_dense(self, rows: ChargedLink, cols: ChargedLink) -> np.ndarray:
        out = np.zeros((rows.dim, cols.dim), dtype=np.complex128)
        ro, co = rows.offsets(), cols.offsets()
        for c, b in self.blocks.items():
            out[ro[c], co[c]] = b
        return out


@dataclass(frozen=True)
class BlockedSvdResult:
    """Sector-wise SVD of a blocked site tensor.

    For ``split="left"`` ``left`` is a :class:`BlockedMpsTensor` with
    orthonormal columns per sector and ``right`` a :class:`ChargeDiagonal`;
    for ``split="right"`` the roles are swapped.
    """

    left: object
    singular_values: dict
    right: object
    bond: ChargedLink
    discarded_weight: float

    def all_singular_values(self) -> np.ndarray:
        vals = [v for v in self.singular_values.values()]
        return np.sort(np.concatenate(vals))[::-1] if vals else np.zeros(0)


def select_kept(svals: Mapping[int, np.ndarray], max_keep: int | None, cutoff: float) -> dict[int, int]:
    """Number of singular values kept per sector under a global budget.

    Values are ranked across all sectors, largest first. Values that agree
    within :data:`DEGENERACY_TOL` (relative) are ordered by lower ``|c|`` and
    then lower charge, so the choice among degenerate sectors is deterministic.
    """
    entries = [(float(v), c, i) for c, vs in svals.items() for i, v in enumerate(vs)]
    if not entries:
        return {}
    top = max(e[0] for e in entries)
    if top == 0.0:
        c0 = min(svals, key=lambda c: (abs(c), c))
        return {c0: 1}
    quantum = DEGENERACY_TOL * top
    entries.sort(key=lambda e: (-round(e[0] / quantum), abs(e[1]), e[1], e[2]))
    budget = len(entries) if max_keep is None else max_keep
    kept: dict[int, int] = {}
    n = 0
    for v, c, i in entries:
        if n >= budget or v < cutoff * top or v == 0.0:
            break
        kept[c] = kept.get(c, 0) + 1
        n += 1
    return kept


def _sector_svds(mats: Mapping[int, np.ndarray]):
    out = {}
    for c, m in mats.items():
        u, s, vh = np.linalg.svd(m, full_matrices=False)
        u, vh = fix_column_phases(u, vh)
        out[c] = (u, s, vh)
    return out


def blocked_svd(
    t: BlockedMpsTensor, split: str = "left", max_keep: int | None = None, cutoff: float = 0.0
) -> BlockedSvdResult:
    """Factorize ``t`` sector by sector.

    ``split="left"`` groups ``(c_left, s)`` against ``c_right``: the matrix is
    block diagonal in ``c_right`` and each block ``R_{c_right}`` is
    decomposed separately. ``split="right"`` groups ``c_left`` against
    ``(s, c_right)``. Singular values are truncated globally across sectors
    (see :func:`select_kept`); sectors left with no values disappear from
    the new bond.
    """
    if split not in ("left", "right"):
        raise ValueError(f"unknown split {split!r}")
    if split == "left":
        mats = {c: t.right_sector_matrix(c) for c in t.right.charges}
    else:
        mats = {c: t.left_sector_matrix(c) for c in t.left.charges}
    mats = {c: mk for c, mk in mats.items() if mk[0].size}
    svds = _sector_svds({c: mk[0] for c, mk in mats.items()})
    kept = select_kept({c: s for c, (_, s, _) in svds.items()}, max_keep, cutoff)
    total = sum(float(np.sum(s**2)) for _, s, _ in svds.values())
    bond = ChargedLink.from_dict(kept)
    svals = {c: svds[c][1][:k] for c, k in kept.items()}
    discarded = total - sum(float(np.sum(s**2)) for s in svals.values())
    discarded = max(discarded, 0.0)
    if split == "left":
        blocks = {}
        for c, k in kept.items():
            u = svds[c][0][:, :k]
            pos = 0
            for cl, s, cr in mats[c][1]:
                g = t.left.degeneracy(cl)
                blocks[(cl, s, cr)] = u[pos : pos + g]
                pos += g
        left = BlockedMpsTensor(t.left, t.charges, bond, blocks)
        right = ChargeDiagonal({c: svds[c][2][:k] for c, k in kept.items()})
        return BlockedSvdResult(left, svals, right, bond, discarded)
    blocks = {}
    for c, k in kept.items():
        vh = svds[c][2][:k]
        pos = 0
        for cl, s, cr in mats[c][1]:
            g = t.right.degeneracy(cr)
            blocks[(cl, s, cr)] = vh[:, pos : pos + g]
            pos += g
    right = BlockedMpsTensor(bond, t.charges, t.right, blocks)
    left = ChargeDiagonal({c: svds[c][0][:, :k] for c, k in kept.items()})
    return BlockedSvdResult(left, svals, right, bond, discarded)


def _absorb_left(m: ChargeDiagonal, t: BlockedMpsTensor, rows: ChargedLink) -> BlockedMpsTensor:
    """``m @ t`` on the left link of ``t``."""
    blocks = {(cl, s, cr): m.blocks[cl] @ b for (cl, s, cr), b in t.blocks.items()}
    return BlockedMpsTensor(rows, t.charges, t.right, blocks)


def _absorb_right(t: BlockedMpsTensor, m: ChargeDiagonal, cols: ChargedLink) -> BlockedMpsTensor:
    blocks = {(cl, s, cr): b @ m.blocks[cr] for (cl, s, cr), b in t.blocks.items()}
    return BlockedMpsTensor(t.left, t.charges, cols, blocks)


# -- blocked MPS ---------------------------------------------------------------


class BlockedMps:
    """Open-boundary MPS of fixed total charge ``q`` built from blocked tensors."""

    def __init__(self, tensors: Sequence[BlockedMpsTensor]):
        self.tensors = list(tensors)
        if not self.tensors:
            raise ValueError("a blocked MPS needs at least one site")
        if self.tensors[0].left.sectors != ((0, 1),):
            raise ChargeError("the leftmost link must carry the single sector (0, 1)")
        last = self.tensors[-1].right.sectors
        if len(last) != 1 or last[0][1] != 1:
            raise ChargeError("the rightmost link must be a one-dimensional charge selector")
        for l in range(self.L - 1):
            if self.tensors[l].right.sectors != self.tensors[l + 1].left.sectors:
                raise ValueError(f"link mismatch between sites {l} and {l + 1}")
            if self.tensors[l].charges != self.tensors[l + 1].charges:
                raise ValueError("all sites must share one charge map")

    @property
    def L(self) -> int:
        return len(self.tensors)

    @property
    def q(self) -> int:
        return self.tensors[-1].right.sectors[0][0]

    @property
    def charges(self) -> tuple:
        return self.tensors[0].charges

    @property
    def links(self) -> list[ChargedLink]:
        return [self.tensors[0].left] + [t.right for t in self.tensors]

    @property
    def bond_dims(self) -> list[int]:
        return [lk.dim for lk in self.links]

    @property
    def n_stored(self) -> int:
        return sum(t.n_stored for t in self.tensors)

    @property
    def n_dense(self) -> int:
        return sum(int(np.prod(t.shape)) for t in self.tensors)

    def to_mps(self) -> Mps:
        return Mps([t.to_dense() for t in self.tensors])

    def save(self, directory) -> None:
        """JSON sector manifest plus one binary dump per stored block."""
        os.makedirs(directory, exist_ok=True)
        sites = []
        for l, t in enumerate(self.tensors):
            entries = []
            for i, (key, b) in enumerate(sorted(t.blocks.items())):
                name = f"site{l:04d}_block{i:04d}.tnet"
                save_tensor(os.path.join(directory, name), b)
                entries.append({"key": list(key), "file": name})
            sites.append({"left": t.left.to_json(), "right": t.right.to_json(), "blocks": entries})
        manifest = {"L": self.L, "q": self.q, "charges": list(self.charges), "sites": sites}
        with open(os.path.join(directory, "blocked_mps.json"), "w") as fh:
            json.dump(manifest, fh, indent=2)

    @classmethod
    def load(cls, directory) -> "BlockedMps":
        with open(os.path.join(directory, "blocked_mps.json")) as fh:
            manifest = json.load(fh)
        ts = []
        for site in manifest["sites"]:
            blocks = {tuple(e["key"]): load_tensor(os.path.join(directory, e["file"])) for e in site["blocks"]}
            left, right = ChargedLink.from_json(site["left"]), ChargedLink.from_json(site["right"])
            ts.append(BlockedMpsTensor(left, manifest["charges"], right, blocks))
        return cls(ts)


def blocked_overlap(bra: BlockedMps, ket: BlockedMps) -> complex:
    """``<bra|ket>`` contracted sector by sector (environments stay charge diagonal)."""
    if bra.L != ket.L:
        raise ValueError("length mismatch")
    if bra.q != ket.q:
        return 0j
    env = {0: np.ones((1, 1), dtype=np.complex128)}
    for a, b in zip(ket.tensors, bra.tensors):
        new: dict[int, np.ndarray] = {}
        for (cl, s, cr), ab in a.blocks.items():
            bb = b.blocks.get((cl, s, cr))
            if bb is None or cl not in env:
                continue
            term = ab.T @ env[cl] @ bb.conj()
            new[cr] = new[cr] + term if cr in new else term
        env = new
    return complex(sum(np.trace(m) for m in env.values()))


def reachable_charges(n: int, charges: Sequence[int]) -> dict[int, int]:
    """Number of ``n``-site configurations per total charge."""
    counts = {0: 1}
    for _ in range(n):
        new: dict[int, int] = {}
        for c, k in counts.items():
            for q in charges:
                new[c + q] = new.get(c + q, 0) + k
        counts = new
    return counts


def default_link_sectors(L: int, charges: Sequence[int], q: int, max_degeneracy: int) -> list[dict[int, int]]:
    """Sectors of the ``L - 1`` inner links compatible with total charge ``q``.

    The degeneracy of charge ``c`` after ``l`` sites is the smaller of the
    numbers of left and right configurations that fuse to it, capped at
    ``max_degeneracy``.
    """
    out = []
    for l in range(1, L):
        left = reachable_charges(l, charges)
        right = reachable_charges(L - l, charges)
        out.append({c: min(k, right[q - c], max_degeneracy) for c, k in left.items() if q - c in right})
    return out


def canonicalize(mps: BlockedMps, direction: str = "left", normalize: bool = True) -> BlockedMps:
    """Bring ``mps`` into left (or right) gauge with sector-wise SVDs.

    Sectors whose singular values all vanish are removed from the links.
    """
    ts = list(mps.tensors)
    L = len(ts)
    if direction == "left":
        for l in range(L - 1):
            res = blocked_svd(ts[l], "left", cutoff=1e-15)
            ts[l] = res.left
            sv = ChargeDiagonal({c: s[:, None] * res.right.blocks[c] for c, s in res.singular_values.items()})
            ts[l + 1] = _absorb_left(_restrict(sv, ts[l + 1].left), _restrict_tensor(ts[l + 1], res.bond), res.bond)
        if normalize:
            ts[-1] = _scale(ts[-1], 1.0 / _tensor_norm(ts[-1]))
    elif direction == "right":
        for l in range(L - 1, 0, -1):
            res = blocked_svd(ts[l], "right", cutoff=1e-15)
            ts[l] = res.right
            us = ChargeDiagonal({c: res.left.blocks[c] * s[None, :] for c, s in res.singular_values.items()})
            ts[l - 1] = _absorb_right(_restrict_tensor(ts[l - 1], None, res.bond), us, res.bond)
        if normalize:
            ts[0] = _scale(ts[0], 1.0 / _tensor_norm(ts[0]))
    else:
        raise ValueError(f"unknown direction {direction!r}")
    return BlockedMps(ts)


def _restrict(m: ChargeDiagonal, link: ChargedLink) -> ChargeDiagonal:
    return ChargeDiagonal({c: b for c, b in m.blocks.items() if c in link})


def _restrict_tensor(t: BlockedMpsTensor, left: ChargedLink | None = None, right: ChargedLink | None = None):
    """Drop blocks whose charges are absent from a shrunken link (kept links unchanged)."""
    left = t.left if left is None else ChargedLink(tuple((c, t.left.degeneracy(c)) for c in left.charges))
    right = t.right if right is None else ChargedLink(tuple((c, t.right.degeneracy(c)) for c in right.charges))
    blocks = {k: b for k, b in t.blocks.items() if k[0] in left and k[2] in right}
    return BlockedMpsTensor(left, t.charges, right, blocks)


def _scale(t: BlockedMpsTensor, c: complex) -> BlockedMpsTensor:
    return BlockedMpsTensor(t.left, t.charges, t.right, {k: c * b for k, b in t.blocks.items()})


def _tensor_norm(t: BlockedMpsTensor) -> float:
    return float(np.sqrt(sum(np.sum(np.abs(b) ** 2) for b in t.blocks.values())))


def build_fixed_charge_mps(
    L: int,
    d: int,
    charge_map: Sequence[int],
    q: int,
    link_sectors: Sequence[Mapping[int, int]] | None = None,
    rng: np.random.Generator | int | None = None,
    max_degeneracy: int = 2,
) -> BlockedMps:
    """Random normalized MPS confined to the total-charge-``q`` sector.

    Parameters
    ----------
    L, d:
        Chain length and local dimension.
    charge_map:
        Integer charge of each local basis state.
    q:
        Target total charge; enforced by the last link ``{q: 1}``.
    link_sectors:
        Optional ``{charge: degeneracy}`` for each of the ``L - 1`` inner
        links. Defaults to :func:`default_link_sectors`.
    max_degeneracy:
        Cap on the default degeneracies.

    Raises
    ------
    ChargeError
        If no configuration of ``L`` sites has total charge ``q``, or the
        given link sectors admit no state of that charge.
    """
    charge_map = [int(c) for c in charge_map]
    if len(charge_map) != d:
        raise ValueError("charge_map needs one charge per local state")
    if L < 1:
        raise ValueError("L must be positive")
    if q not in reachable_charges(L, charge_map):
        raise ChargeError(f"total charge {q} is not reachable with {L} sites of charges {sorted(set(charge_map))}")
    if link_sectors is None:
        link_sectors = default_link_sectors(L, charge_map, q, max_degeneracy)
    if len(link_sectors) != L - 1:
        raise ValueError("need sectors for every inner link")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    links = [ChargedLink(((0, 1),))] + [ChargedLink.from_dict(s) for s in link_sectors] + [ChargedLink(((q, 1),))]
    ts = []
    for l in range(L):
        t = BlockedMpsTensor(links[l], charge_map, links[l + 1])
        blocks = {k: rng.standard_normal(b.shape) + 1j * rng.standard_normal(b.shape) for k, b in t.blocks.items()}
        ts.append(BlockedMpsTensor(links[l], charge_map, links[l + 1], blocks))
    mps = BlockedMps(ts)
    if abs(blocked_overlap(mps, mps)) == 0.0:
        raise ChargeError("the link sectors admit no state of the requested charge")
    return canonicalize(mps, "right")


# -- charge diagnostics ----------------------------------------------------------


def charge_mpo(L: int, charge_map: Sequence[int], shift: float = 0.0) -> Mpo:
    """Bond-2 MPO of ``N - shift`` with ``N`` the total charge."""
    n = np.diag(np.asarray(charge_map, dtype=np.complex128))
    eye = np.eye(len(charge_map), dtype=np.complex128)
    w = np.zeros((2, len(charge_map), len(charge_map), 2), dtype=np.complex128)
    w[0, :, :, 0] = eye
    w[0, :, :, 1] = n
    w[1, :, :, 1] = eye
    ws = [w.copy() for _ in range(L)]
    ws[0][0, :, :, 1] = n - shift * eye
    return Mpo(ws, np.array([1, 0]), np.array([0, 1]))


def charge_moments(mps: Mps, charge_map: Sequence[int]) -> tuple[float, float]:
    """Mean and variance of the total charge, the variance as ``||(N - <N>) psi||^2``."""
    norm2 = overlap(mps, mps).real
    mean = overlap(mps, apply_exact(charge_mpo(mps.L, charge_map), mps)).real / norm2
    dev = apply_exact(charge_mpo(mps.L, charge_map, mean), mps)
    return float(mean), float(overlap(dev, dev).real / norm2)


def check_charge_conserving(h: NnHamiltonian, charge_map: Sequence[int], tol: float = CONSERVATION_TOL) -> None:
    """Raise :class:`NotConservingError` if a term fails to commute with the local charge."""
    n = np.diag(np.asarray(charge_map, dtype=float))
    if n.shape[0] != h.d:
        raise ValueError("charge_map does not match the local dimension")
    eye = np.eye(h.d)
    n2 = np.kron(n, eye) + np.kron(eye, n)
    for l in range(h.L):
        m = h.site_matrix(l)
        r = np.linalg.norm(m @ n - n @ m)
        if r > tol:
            raise NotConservingError(f"site term {l} changes the charge (commutator norm {r:.2e})")
    for b in range(h.n_bonds):
        m = h.bond_matrix(b)
        r = np.linalg.norm(m @ n2 - n2 @ m)
        if r > tol:
            raise NotConservingError(f"bond term {b} changes the charge (commutator norm {r:.2e})")


# -- fixed-charge ground-state search ----------------------------------------------


def _split_two_site(theta, left: ChargedLink, charges, right: ChargedLink, D: int, cutoff: float, direction: str):
    """Split a dense two-site tensor by middle charge into two blocked site tensors."""
    dl, d, _, dr = theta.shape
    ch = np.asarray(charges)
    lc, rc = left.charge_vector(), right.charge_vector()
    row_charge = (lc[:, None] + ch[None, :]).ravel()
    col_charge = (rc[None, :] - ch[:, None]).ravel()
    m = theta.reshape(dl * d, d * dr)
    mids = sorted(set(row_charge) & set(col_charge))
    svds, rows_of, cols_of = {}, {}, {}
    for c in mids:
        rows_of[c] = np.flatnonzero(row_charge == c)
        cols_of[c] = np.flatnonzero(col_charge == c)
    svds = _sector_svds({c: m[np.ix_(rows_of[c], cols_of[c])] for c in mids})
    kept = select_kept({c: s for c, (_, s, _) in svds.items()}, D, cutoff)
    total = sum(float(np.sum(s**2)) for _, s, _ in svds.values())
    bond = ChargedLink.from_dict(kept)
    a = np.zeros((dl * d, bond.dim), dtype=np.complex128)
    b = np.zeros((bond.dim, d * dr), dtype=np.complex128)
    off = bond.offsets()
    kept_w = 0.0
    for c, k in kept.items():
        u, s, vh = svds[c]
        s = s[:k]
        kept_w += float(np.sum(s**2))
        if direction == "right":
            a[rows_of[c], off[c]] = u[:, :k]
            b[off[c]][:, cols_of[c]] = s[:, None] * vh[:k]
        else:
            a[rows_of[c], off[c]] = u[:, :k] * s[None, :]
            b[off[c]][:, cols_of[c]] = vh[:k]
    nrm = np.sqrt(kept_w)
    if direction == "right":
        b /= nrm
    else:
        a /= nrm
    ta = BlockedMpsTensor.from_dense(a.reshape(dl, d, -1), left, charges, bond)
    tb = BlockedMpsTensor.from_dense(b.reshape(-1, d, dr), bond, charges, right)
    return ta, tb, max(total - kept_w, 0.0) / max(total, 1e-300)


def dmrg_fixed_charge(
    h: NnHamiltonian,
    q: int,
    D: int,
    tol: float = 1e-10,
    max_sweeps: int = 20,
    charge_map: Sequence[int] = SPIN_CHARGES,
    seed: int = 0,
    cutoff: float = 1e-14,
    mps0: BlockedMps | None = None,
) -> tuple[BlockedMps, SweepReport]:
    """Two-site ground-state search restricted to total charge ``q``.

    Each local eigenproblem is solved on the entries of the two-site tensor
    allowed by the selection rule, so the state never leaves the sector.
    Link sectors grow from the fused spectrum of every update and are then
    truncated to ``D`` states by global singular-value rank across sectors.

    Raises
    ------
    NotConservingError
        If a Hamiltonian term does not commute with the total charge.
    ChargeError
        If ``q`` is unreachable.
    """
    t0 = time.perf_counter()
    if h.boundary != "open":
        raise ValueError("fixed-charge sweeps need an open Hamiltonian")
    check_charge_conserving(h, charge_map)
    if mps0 is None:
        mps0 = build_fixed_charge_mps(h.L, h.d, charge_map, q, rng=seed, max_degeneracy=min(D, 2))
    elif mps0.q != q:
        raise ChargeError(f"start state has charge {mps0.q}, expected {q}")
    psi = canonicalize(mps0, "left")
    ts = list(psi.tensors)
    L = h.L
    mpo = h.to_mpo()
    ws = mpo.tensors
    lefts = [None] * (L + 1)
    rights = [None] * (L + 1)
    lefts[0] = mpo.left.reshape(1, -1, 1).astype(np.complex128)
    rights[L] = mpo.right.reshape(1, -1, 1).astype(np.complex128)
    for l in range(L - 1):
        lefts[l + 1] = _left_env(lefts[l], ts[l].to_dense(), ws[l])
    ch = np.asarray(charge_map)
    report = SweepReport(seed=seed)
    per_sweep = []
    e = np.nan
    for sweep in range(max_sweeps):
        for direction in ("left", "right"):
            bonds = range(L - 2, -1, -1) if direction == "left" else range(L - 1)
            for l in bonds:
                left, right = ts[l].left, ts[l + 1].right
                theta = np.tensordot(ts[l].to_dense(), ts[l + 1].to_dense(), axes=(2, 0))
                shp = theta.shape
                allowed = (
                    left.charge_vector()[:, None, None, None]
                    + ch[None, :, None, None]
                    + ch[None, None, :, None]
                    == right.charge_vector()[None, None, None, :]
                )
                idx = np.flatnonzero(allowed)
                le, re, w1, w2 = lefts[l], rights[l + 2], ws[l], ws[l + 1]

                def mv(x, le=le, re=re, w1=w1, w2=w2, shp=shp, idx=idx):
                    full = np.zeros(int(np.prod(shp)), dtype=np.complex128)
                    full[idx] = x
                    return _apply_two(full.reshape(shp), le, w1, w2, re).ravel()[idx]

                def dense(mv=mv, n=idx.size):
                    return np.stack([mv(col) for col in np.eye(n, dtype=np.complex128)], axis=1)

                e, vec = _lowest(mv, idx.size, theta.ravel()[idx], dense)
                full = np.zeros(int(np.prod(shp)), dtype=np.complex128)
                full[idx] = vec
                ta, tb, disc = _split_two_site(full.reshape(shp), left, charge_map, right, D, cutoff, direction)
                report.total_discarded_weight += disc
                ts[l], ts[l + 1] = ta, tb
                if direction == "left":
                    rights[l + 1] = _right_env(rights[l + 2], tb.to_dense(), ws[l + 1])
                else:
                    lefts[l + 1] = _left_env(lefts[l], ta.to_dense(), ws[l])
            report.energies.append(e)
        per_sweep.append(e)
        report.sweeps_used = sweep + 1
        if _converged(per_sweep, tol):
            report.converged = True
            break
    report.wall_time = time.perf_counter() - t0
    return BlockedMps(ts), report
