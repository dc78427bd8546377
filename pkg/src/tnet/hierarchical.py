"""Binary tree tensor networks (TTN) and binary MERA on periodic chains.

A network is stored bottom-up. Layer ``h`` holds one isometry ``iso`` of
shape ``(d**2, D)`` mapping an upper site onto the two lower sites
``(2j, 2j + 1)``; the row index is ``left_child * d + right_child``. A MERA
layer also holds a unitary ``dis`` of shape ``(d**2, d**2)`` applied after
the isometries on every lower pair ``(2i + 1, 2i + 2)`` (the last pair wraps
around the ring). The hat is a normalized tensor on 2 (TTN) or 4 (MERA)
sites, so ``L = 2 * 2**n`` or ``L = 4 * 2**n`` for ``n`` layers.

Sites and layers are counted from 0. Descending channels follow the
conventions of :mod:`tnet.cpt`.
"""

from __future__ import annotations

import csv
import json
import math
import os
import threading
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cpt import (
    DENSE_SUPEROP_LIMIT,
    ConvergenceError,
    CpMap,
    CptMap,
    NotMixingError,
    compose,
    mixture,
    spectral_summary,
    tensor_product,
)
from .network import TensorNetwork
from .tensor import load_tensor, save_tensor

TTN = "ttn2"
MERA = "mera2"
KINDS = (TTN, MERA)
HAT_SITES = {TTN: 2, MERA: 4}
#: smallest window mapped onto itself by the averaged descending maps
STABLE_WIDTH = {TTN: 1, MERA: 3}

ISOMETRY_TOL = 1e-10
#: channel kits refuse layers worse than this
KIT_TOL = 1e-8
DEFAULT_THETA = math.pi / 4
SERIES_TOL = 1e-14
SERIES_CAP = 200
KERNEL_TOL = 1e-10
FLUCTUATION_TOL = 1e-10
TRIVIALITY_TOL = 1e-8
MIXING_GAP_TOL = 1e-8
#: superoperators up to this size are diagonalized densely for exponents
DENSE_EXPONENT_LIMIT = 1024


class HierarchyError(ValueError):
    """Malformed network: bad shapes, non-isometric tensors or bad windows."""


class KernelError(RuntimeError):
    """The averaged density matrix has full rank, so no parent term exists."""


class TrivialityError(RuntimeError):
    """Vanishing translational fluctuations without a product two-site state."""


# -- tensors -----------------------------------------------------------------


def random_isometry(n_out: int, n_in: int, rng: np.random.Generator) -> np.ndarray:
    """QR-orthonormalized complex Gaussian block of shape ``(n_out, n_in)``."""
    if n_in > n_out:
        raise ValueError("an isometry cannot enlarge the space")
    g = rng.standard_normal((n_out, n_in)) + 1j * rng.standard_normal((n_out, n_in))
    q, r = np.linalg.qr(g)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_unitary(n: int, rng: np.random.Generator) -> np.ndarray:
    return random_isometry(n, n, rng)


def copy_isometry(d: int) -> np.ndarray:
    """``|j> -> |j>|0>``: the left child copies the parent, the right one is reset."""
    iso = np.zeros((d * d, d), dtype=np.complex128)
    for j in range(d):
        iso[j * d, j] = 1.0
    return iso


def sample_isometry() -> np.ndarray:
    """Qubit isometry ``|0> -> |01>``, ``|1> -> (|00> + |11>)/sqrt 2``."""
    iso = np.zeros((4, 2), dtype=np.complex128)
    iso[1, 0] = 1.0
    iso[0, 1] = iso[3, 1] = 1 / math.sqrt(2)
    return iso


def isometry_residual(w: np.ndarray) -> float:
    w = np.asarray(w)
    return float(np.max(np.abs(w.conj().T @ w - np.eye(w.shape[1]))))


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.complex128)
    a.setflags(write=False)
    return a


def _isqrt(n: int) -> int:
    r = math.isqrt(n)
    if r * r != n:
        raise HierarchyError(f"{n} is not a square")
    return r


def _apply_on_legs(t: np.ndarray, op: np.ndarray, legs: Sequence[int]) -> np.ndarray:
    """Act with the matrix ``op`` on the listed legs of ``t`` (in that order)."""
    legs = list(legs)
    w = len(legs)
    dims = [t.shape[i] for i in legs]
    o = op.reshape(dims + dims)
    out = np.tensordot(o, t, axes=(list(range(w, 2 * w)), legs))
    return np.moveaxis(out, list(range(w)), legs)


def _reduce(rho: np.ndarray, dims: Sequence[int], keep: Sequence[int]) -> np.ndarray:
    """Partial trace of ``rho`` keeping the legs ``keep`` in the given order."""
    n = len(dims)
    keep = list(keep)
    t = rho.reshape(list(dims) * 2)
    sub = list(range(2 * n))
    for i in range(n):
        if i not in keep:
            sub[n + i] = i
    out = keep + [n + k for k in keep]
    dk = int(np.prod([dims[k] for k in keep]))
    return np.einsum(t, sub, out).reshape(dk, dk)


@dataclass(frozen=True)
class Layer:
    """One renormalization step: an isometry and, for MERA, a disentangler."""

    iso: np.ndarray
    dis: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "iso", _frozen(self.iso))
        if self.dis is not None:
            object.__setattr__(self, "dis", _frozen(self.dis))

    @property
    def d_low(self) -> int:
        return _isqrt(self.iso.shape[0])

    @property
    def d_up(self) -> int:
        return self.iso.shape[1]

    def block_isometry(self, m: int, ring: bool = False) -> np.ndarray:
        """Map from ``m`` upper sites onto the ``2m`` lower sites below them.

        Disentanglers act on the pairs strictly inside the block; with
        ``ring`` the block closes into a circle and the pair ``(2m - 1, 0)``
        is included too.
        """
        w = self.iso
        for _ in range(m - 1):
            w = np.kron(w, self.iso)
        if self.dis is None:
            return w
        d = self.d_low
        t = w.reshape((d,) * (2 * m) + (w.shape[1],))
        pairs = [(2 * k + 1, 2 * k + 2) for k in range(m - 1)]
        if ring:
            pairs.append((2 * m - 1, 0))
        for a, b in pairs:
            t = _apply_on_legs(t, self.dis, [a, b])
        return t.reshape(w.shape)


@dataclass(frozen=True)
class HierarchicalNet:
    """A binary TTN or MERA state, layers listed from the physical sites up."""

    kind: str
    layers: tuple
    hat: np.ndarray
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)
    _lock: threading.RLock = field(default_factory=threading.RLock, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise HierarchyError(f"unknown kind {self.kind!r}")
        layers = tuple(self.layers)
        if not layers:
            raise HierarchyError("at least one layer is required")
        object.__setattr__(self, "layers", layers)
        for h, lay in enumerate(layers):
            if (lay.dis is None) != (self.kind == TTN):
                raise HierarchyError(f"layer {h}: disentangler presence does not match {self.kind}")
            res = isometry_residual(lay.iso)
            if res > ISOMETRY_TOL:
                raise HierarchyError(f"layer {h}: isometry residual {res:.2e}")
            if lay.dis is not None:
                if lay.dis.shape != (lay.d_low**2,) * 2:
                    raise HierarchyError(f"layer {h}: disentangler shape {lay.dis.shape}")
                res = isometry_residual(lay.dis)
                if res > ISOMETRY_TOL:
                    raise HierarchyError(f"layer {h}: disentangler not unitary ({res:.2e})")
            if h and layers[h - 1].d_up != lay.d_low:
                raise HierarchyError(f"layer {h}: bond mismatch with layer {h - 1}")
        hat = _frozen(self.hat)
        n_hat = HAT_SITES[self.kind]
        if hat.shape != (layers[-1].d_up,) * n_hat:
            raise HierarchyError(f"hat must have shape {(layers[-1].d_up,) * n_hat}, got {hat.shape}")
        if abs(np.vdot(hat, hat) - 1) > ISOMETRY_TOL:
            raise HierarchyError("hat is not normalized")
        object.__setattr__(self, "hat", hat)

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def n_hat(self) -> int:
        return HAT_SITES[self.kind]

    @property
    def L(self) -> int:
        return self.n_hat * 2**self.n_layers

    @property
    def d(self) -> int:
        return self.layers[0].d_low

    def level_size(self, h: int) -> int:
        """Number of sites below layer ``h`` (``h = n_layers`` is the hat)."""
        return self.L >> h

    @property
    def horizontal(self) -> bool:
        # one tensor per layer by construction
        return True

    @property
    def full(self) -> bool:
        """All layers share the same tensors (scale invariance)."""
        a = self.layers[0]
        for b in self.layers[1:]:
            if b.iso.shape != a.iso.shape or not np.array_equal(b.iso, a.iso):
                return False
            if a.dis is not None and not np.array_equal(b.dis, a.dis):
                return False
        return True

    def cached(self, key, build):
        with self._lock:
            if key not in self._cache:
                self._cache[key] = build()
            return self._cache[key]

    def save(self, directory) -> None:
        """Write ``net.json`` and one tensor dump per stored tensor."""
        os.makedirs(directory, exist_ok=True)
        files = []
        for h, lay in enumerate(self.layers):
            entry = {"iso": f"iso{h:03d}.tnet"}
            save_tensor(os.path.join(directory, entry["iso"]), lay.iso)
            if lay.dis is not None:
                entry["dis"] = f"dis{h:03d}.tnet"
                save_tensor(os.path.join(directory, entry["dis"]), lay.dis)
            files.append(entry)
        save_tensor(os.path.join(directory, "hat.tnet"), self.hat)
        manifest = {"kind": self.kind, "L": self.L, "layers": files, "hat": "hat.tnet"}
        with open(os.path.join(directory, "net.json"), "w") as fh:
            json.dump(manifest, fh, indent=2)

    @classmethod
    def load(cls, directory) -> "HierarchicalNet":
        with open(os.path.join(directory, "net.json")) as fh:
            m = json.load(fh)
        layers = []
        for e in m["layers"]:
            dis = load_tensor(os.path.join(directory, e["dis"])) if "dis" in e else None
            layers.append(Layer(load_tensor(os.path.join(directory, e["iso"])), dis))
        return cls(m["kind"], tuple(layers), load_tensor(os.path.join(directory, m["hat"])))


def _default_hat(n_sites: int, dim: int, rng) -> np.ndarray:
    if rng is None:
        rng = np.random.default_rng(0)
    c = rng.standard_normal((dim,) * n_sites) + 1j * rng.standard_normal((dim,) * n_sites)
    return c / np.linalg.norm(c)


def homogeneous_ttn(iso, n_layers: int, hat=None, rng=None) -> HierarchicalNet:
    """TTN repeating ``iso`` on every layer; ``L = 2**(n_layers + 1)``."""
    iso = np.asarray(iso, dtype=np.complex128)
    if hat is None:
        hat = _default_hat(2, iso.shape[1], rng)
    return HierarchicalNet(TTN, tuple(Layer(iso) for _ in range(n_layers)), hat)


def homogeneous_mera(iso, dis, n_layers: int, hat=None, rng=None) -> HierarchicalNet:
    """MERA repeating ``(iso, dis)`` on every layer; ``L = 4 * 2**n_layers``."""
    iso = np.asarray(iso, dtype=np.complex128)
    if hat is None:
        hat = _default_hat(4, iso.shape[1], rng)
    return HierarchicalNet(MERA, tuple(Layer(iso, dis) for _ in range(n_layers)), hat)


def random_net(kind: str, d: int, n_layers: int, rng: np.random.Generator, homogeneous: bool = True) -> HierarchicalNet:
    """Random network with bond dimension ``d`` everywhere."""
    def layer():
        dis = random_unitary(d * d, rng) if kind == MERA else None
        return Layer(random_isometry(d * d, d, rng), dis)

    if homogeneous:
        lay = layer()
        layers = (lay,) * n_layers
    else:
        layers = tuple(layer() for _ in range(n_layers))
    return HierarchicalNet(kind, layers, _default_hat(HAT_SITES[kind], d, rng))


# -- geometry ----------------------------------------------------------------


def _upper_window(kind: str, n_low: int | None, start: int, width: int):
    """Upper window ``(u0, m, ring)`` whose block covers the lower window.

    ``n_low = None`` stands for an infinite chain.
    """
    s, e = start, start + width
    if kind == MERA:
        if s % 2 == 0:
            s -= 1
        if (e - 1) % 2 == 1:
            e += 1
    u0 = s // 2
    m = (e - 1) // 2 - u0 + 1
    if n_low is not None:
        n_up = n_low // 2
        if m >= n_up:
            return 0, n_up, True
        u0 %= n_up
    return u0, m, False


def _check_window(n: int, start: int, width: int) -> None:
    if width < 1:
        raise HierarchyError("empty window")
    if width > n:
        raise HierarchyError(f"window of {width} sites on a ring of {n}")


def _window_from_sites(sites: Iterable[int], n: int) -> tuple[int, int]:
    sites = [int(s) % n for s in sites]
    if not sites:
        raise HierarchyError("empty interval")
    if len(set(sites)) != len(sites) or any((b - a) % n != 1 for a, b in zip(sites, sites[1:])):
        raise HierarchyError("sites must form a contiguous interval (in increasing order, mod L)")
    return sites[0], len(sites)


def _plan(net: HierarchicalNet, start: int, width: int):
    """Per-layer windows ``(start, width, u0, m, ring, positions)`` bottom-up."""
    _check_window(net.L, start, width)
    steps = []
    for h in range(net.n_layers):
        n = net.level_size(h)
        start %= n
        u0, m, ring = _upper_window(net.kind, n, start, width)
        pos = [(start + k - 2 * u0) % n for k in range(width)]
        steps.append((start, width, u0, m, ring, pos))
        start, width = u0, m
    return steps, start % net.n_hat, width


def causal_cone(net: HierarchicalNet, sites: Iterable[int]):
    """Nodes reachable from ``sites`` by moving up only, and the window width per level.

    Node ids are ``("dis", h, i)`` for the disentangler on lower pair
    ``(2i + 1, 2i + 2)``, ``("iso", h, j)`` and ``("hat",)``. ``widths[h]`` is
    the number of sites touched at level ``h`` (``widths[0]`` the input).
    """
    start, width = _window_from_sites(sites, net.L)
    cur = {(start + k) % net.L for k in range(width)}
    nodes, widths = set(), [len(cur)]
    for h in range(net.n_layers):
        n = net.level_size(h)
        if net.kind == MERA:
            touched = {((s - 1) % n) // 2 for s in cur}
            nodes |= {("dis", h, i) for i in touched}
            for i in touched:
                cur = cur | {(2 * i + 1) % n, (2 * i + 2) % n}
        parents = {s // 2 for s in cur}
        nodes |= {("iso", h, j) for j in parents}
        cur = parents
        widths.append(len(cur))
    nodes.add(("hat",))
    return nodes, widths


# -- finite-network evaluation -------------------------------------------------


def ascend(net: HierarchicalNet, h: int, op: np.ndarray, start: int):
    """Ascending map of layer ``h`` applied to ``op`` on sites ``start, start+1, ...``.

    Returns ``(op', start')`` on the upper level.
    """
    lay = net.layers[h]
    d = lay.d_low
    n = net.level_size(h)
    width = int(round(math.log(op.shape[0], d)))
    _check_window(n, start, width)
    start %= n
    u0, m, ring = _upper_window(net.kind, n, start, width)
    pos = [(start + k - 2 * u0) % n for k in range(width)]
    w = lay.block_isometry(m, ring)
    wo = _apply_on_legs(w.reshape((d,) * (2 * m) + (w.shape[1],)), op, pos).reshape(w.shape)
    return w.conj().T @ wo, u0


def expectation(net: HierarchicalNet, op, start: int = 0) -> complex:
    """``<psi| op |psi>`` for ``op`` on consecutive sites, layer by layer through the causal cone."""
    op = np.asarray(op, dtype=np.complex128)
    for h in range(net.n_layers):
        op, start = ascend(net, h, op, start)
    dt = net.layers[-1].d_up
    width = int(round(math.log(op.shape[0], dt)))
    pos = [(start + k) % net.n_hat for k in range(width)]
    return complex(np.vdot(net.hat, _apply_on_legs(net.hat, op, pos)))


def reduced_density(net: HierarchicalNet, start: int, width: int) -> np.ndarray:
    """Density matrix of sites ``start .. start+width-1`` (mod L) via descending maps."""
    steps, top_start, top_width = _plan(net, start, width)
    dt = net.layers[-1].d_up
    c = net.hat.reshape(-1)
    rho = _reduce(np.outer(c, c.conj()), [dt] * net.n_hat, [(top_start + k) % net.n_hat for k in range(top_width)])
    for h in reversed(range(net.n_layers)):
        _, w, _, m, ring, pos = steps[h]
        lay = net.layers[h]
        big = lay.block_isometry(m, ring)
        rho = _reduce(big @ rho @ big.conj().T, [lay.d_low] * (2 * m), pos)
    return rho


def to_dense(net: HierarchicalNet) -> np.ndarray:
    """Full state vector, first site most significant (small ``L`` only)."""
    if net.d**net.L > 2**24:
        raise HierarchyError("state too large for a dense vector")
    t = np.asarray(net.hat)
    for lay in reversed(net.layers):
        d = lay.d_low
        iso3 = lay.iso.reshape(d, d, lay.d_up)
        n = t.ndim
        for j in reversed(range(n)):
            t = np.tensordot(t, iso3, axes=([j], [2]))
            t = np.moveaxis(t, [-2, -1], [j, j + 1])
        if lay.dis is not None:
            for i in range(n):
                t = _apply_on_legs(t, lay.dis, [2 * i + 1, (2 * i + 2) % (2 * n)])
    return t.reshape(-1)


def to_network(net: HierarchicalNet) -> TensorNetwork:
    """The same state as a :class:`TensorNetwork`; open links are labelled ``s0, s1, ...``.

    Isometry nodes carry legs ``(left child, right child, parent)``,
    disentanglers ``(out_a, out_b, in_a, in_b)``.
    """
    nodes = {("hat",): np.asarray(net.hat)}
    edges = []
    frontier = [(("hat",), k) for k in range(net.n_hat)]
    for h in reversed(range(net.n_layers)):
        lay = net.layers[h]
        d = lay.d_low
        nxt = []
        for j, up in enumerate(frontier):
            nid = ("iso", h, j)
            nodes[nid] = lay.iso.reshape(d, d, lay.d_up)
            edges.append((up[0], up[1], nid, 2))
            nxt += [(nid, 0), (nid, 1)]
        if lay.dis is not None:
            n = len(nxt)
            new = list(nxt)
            for i in range(n // 2):
                a, b = 2 * i + 1, (2 * i + 2) % n
                nid = ("dis", h, i)
                nodes[nid] = lay.dis.reshape(d, d, d, d)
                edges.append((nxt[a][0], nxt[a][1], nid, 2))
                edges.append((nxt[b][0], nxt[b][1], nid, 3))
                new[a], new[b] = (nid, 0), (nid, 1)
            nxt = new
        frontier = nxt
    opens = [(nid, leg, f"s{k}") for k, (nid, leg) in enumerate(frontier)]
    return TensorNetwork(nodes, edges, opens)


# -- channel kit ----------------------------------------------------------------


def _partial_trace_channel(d: int, which: str) -> CptMap:
    """``tr_left`` or ``tr_right`` on two sites of dimension ``d``."""
    ks = []
    eye = np.eye(d)
    for i in range(d):
        bra = eye[i : i + 1]
        ks.append(np.kron(bra, eye) if which == "left" else np.kron(eye, bra))
    return CptMap(ks)


def _superop_kron(sa: np.ndarray, sb: np.ndarray, a_out: int, a_in: int, b_out: int, b_in: int) -> np.ndarray:
    """Superoperator of ``A (x) B`` from those of ``A`` and ``B``."""
    ta = sa.reshape(a_out, a_out, a_in, a_in)
    tb = sb.reshape(b_out, b_out, b_in, b_in)
    t = np.einsum("prjl,qskm->pqrsjklm", ta, tb)
    return t.reshape((a_out * b_out) ** 2, (a_in * b_in) ** 2)


@dataclass(frozen=True)
class ChannelKit:
    """Descending channels of one layer.

    ``d_left``/``d_right`` keep the left/right child, ``s`` keeps both,
    ``d_avg`` is their average and ``d_sla`` the two-point map
    ``(D_L x D_L + D_R x D_R)/2``. For MERA, ``d3_left`` and ``d3_right``
    map three upper sites ``j, j+1, j+2`` onto the lower windows starting at
    ``2j + 1`` and ``2j + 2``.
    """

    d_left: CptMap
    d_right: CptMap
    s: CptMap
    d_avg: CptMap
    d_sla: CptMap
    theta: float
    d_2to2: CptMap
    d3_left: CptMap | None = None
    d3_right: CptMap | None = None
    d_sla_mera: CptMap | None = None

    def d_2to2_at(self, theta: float) -> CptMap:
        c2 = math.cos(theta) ** 2
        d = self.d_left.dim_out
        return mixture(
            [
                tensor_product(self.d_right, self.d_left),
                compose(self.s, _partial_trace_channel(d, "left")),
                compose(self.s, _partial_trace_channel(d, "right")),
            ],
            [0.5, c2 / 2, (1 - c2) / 2],
        )

    def sla_superop(self, mera: bool = False) -> np.ndarray:
        """Dense superoperator of the two-point map, assembled from one-party pieces."""
        if mera:
            a, b = self.d3_left, self.d3_right
        else:
            a, b = self.d_left, self.d_right
        no, ni = a.dim_out, a.dim_in
        return 0.5 * (
            _superop_kron(a.superop, a.superop, no, ni, no, ni) + _superop_kron(b.superop, b.superop, no, ni, no, ni)
        )


def channel_kit(net: HierarchicalNet, layer: int = 0, theta: float = DEFAULT_THETA) -> ChannelKit:
    """Channels of ``net.layers[layer]``; cached per layer for the default ``theta``."""
    if theta == DEFAULT_THETA:
        return net.cached(("kit", layer), lambda: _build_kit(net.layers[layer], net.kind, theta))
    return _build_kit(net.layers[layer], net.kind, theta)


def _build_kit(lay: Layer, kind: str, theta: float) -> ChannelKit:
    res = isometry_residual(lay.iso)
    if res > KIT_TOL:
        raise HierarchyError(f"isometry residual {res:.2e}")
    if lay.dis is not None and isometry_residual(lay.dis) > KIT_TOL:
        raise HierarchyError("disentangler is not unitary")
    d = lay.d_low
    dl = CptMap.from_isometry(lay.iso, (d, d), keep=[0])
    dr = CptMap.from_isometry(lay.iso, (d, d), keep=[1])
    s = CptMap([lay.iso])
    sla = mixture([tensor_product(dl, dl), tensor_product(dr, dr)], [0.5, 0.5])
    kit = ChannelKit(dl, dr, s, mixture([dl, dr], [0.5, 0.5]), sla, theta, None)
    object.__setattr__(kit, "d_2to2", kit.d_2to2_at(theta))
    if kind == MERA:
        w = lay.block_isometry(3)
        d3l = CptMap.from_isometry(w, (d,) * 6, keep=[1, 2, 3])
        d3r = CptMap.from_isometry(w, (d,) * 6, keep=[2, 3, 4])
        object.__setattr__(kit, "d3_left", d3l)
        object.__setattr__(kit, "d3_right", d3r)
        object.__setattr__(kit, "d_sla_mera", mixture([tensor_product(d3l, d3l), tensor_product(d3r, d3r)], [0.5, 0.5]))
    return kit


# -- thermodynamic limit ---------------------------------------------------------


def _require_full(net: HierarchicalNet) -> None:
    if not net.full:
        raise HierarchyError("thermodynamic quantities need a fully homogeneous network")


def _hermitian_trace_norm(a: np.ndarray) -> float:
    return float(np.sum(np.abs(np.linalg.eigvalsh((a + a.conj().T) / 2))))


def geometric_series(step: CpMap, x0: np.ndarray, tol: float = SERIES_TOL, cap: int = SERIES_CAP):
    """``sum_t (step/2)**t x0 / 2``-type series: returns ``sum_t y_t`` with ``y_0 = x0``, ``y_{t+1} = step(y_t)/2``.

    Stops once a term has trace norm below ``tol``. Every term must at most
    halve the previous one (true for a channel ``step``); a violation or
    ``cap`` terms without convergence raises :class:`ConvergenceError`.
    Returns ``(sum, n_terms)``.
    """
    y = np.asarray(x0, dtype=np.complex128)
    acc = np.zeros_like(y)
    prev = _hermitian_trace_norm(y)
    for t in range(cap):
        acc = acc + y
        if prev < tol:
            return acc, t + 1
        y = 0.5 * step.apply(y)
        cur = _hermitian_trace_norm(y)
        if cur > 0.5 * prev * (1 + 1e-9) + 1e-16:
            raise ConvergenceError(f"series term {t + 1} grew: {cur:.3e} > {prev:.3e}/2")
        prev = cur
    raise ConvergenceError(f"series not converged within {cap} terms")


@dataclass(frozen=True)
class MixingReport:
    d_avg_gap: float
    d_2to2_gap: float
    mixing: bool
    #: ``||D_2to2(rho2) - rho2||_1`` for the series solution
    residual: float
    n_terms: int


@dataclass(frozen=True)
class TdState:
    rho1: np.ndarray
    rho2: np.ndarray
    report: MixingReport


def td_state(net: HierarchicalNet, theta: float = DEFAULT_THETA) -> TdState:
    """One- and two-site density matrices of the infinite homogeneous TTN.

    ``rho1`` is the fixed point of ``D_avg``; ``rho2`` is the series
    ``sum_t 2**-(t+1) (D_R x D_L)**t S(rho1)``.
    """
    if net.kind != TTN:
        raise HierarchyError("td_state is defined for ttn2; use td_density for MERA")
    _require_full(net)
    kit = channel_kit(net)
    sa = spectral_summary(kit.d_avg, MIXING_GAP_TOL)
    d22 = kit.d_2to2 if theta == kit.theta else kit.d_2to2_at(theta)
    sb = spectral_summary(d22, MIXING_GAP_TOL)
    if not (sa.mixing and sb.mixing):
        raise NotMixingError(f"D_avg gap {sa.gap:.3e}, D_2to2 gap {sb.gap:.3e}")
    rho1 = sa.fixed_point
    rho2, n_terms = geometric_series(tensor_product(kit.d_right, kit.d_left), 0.5 * kit.s.apply(rho1))
    rho2 = (rho2 + rho2.conj().T) / 2
    d = kit.d_left.dim_out
    for which in ([1], [0]):
        err = np.max(np.abs(_reduce(rho2, [d, d], which) - rho1))
        if err > 1e-10:
            raise ConvergenceError(f"partial trace of rho2 differs from rho1 by {err:.2e}")
    resid = _hermitian_trace_norm(d22.apply(rho2) - rho2)
    return TdState(rho1, rho2, MixingReport(sa.gap, sb.gap, True, resid, n_terms))


def _td_window_channel(lay: Layer, kind: str, parity: int, width: int):
    u0, m, _ = _upper_window(kind, None, parity, width)
    w = lay.block_isometry(m)
    pos = [parity + k - 2 * u0 for k in range(width)]
    return CptMap.from_isometry(w, (lay.d_low,) * (2 * m), keep=pos), m


def td_density(net: HierarchicalNet, nu: int) -> np.ndarray:
    """Translation-averaged ``nu``-site density matrix of the infinite homogeneous network.

    Works for both kinds: each window is half the time aligned with the
    layer below and half the time shifted by one site, so
    ``rho_nu = (D_nu,0(rho_m0) + D_nu,1(rho_m1)) / 2``. Self-referencing
    sizes are solved by a geometric series, the stable size by a fixed point.
    """
    _require_full(net)
    if nu < 1:
        raise HierarchyError("nu must be positive")
    return net.cached(("td", nu), lambda: _td_density(net, nu))


def _td_density(net: HierarchicalNet, nu: int) -> np.ndarray:
    lay, kind = net.layers[0], net.kind
    d = lay.d_low
    stable = STABLE_WIDTH[kind]
    if nu < stable:
        return _reduce(td_density(net, stable), [d] * stable, list(range(nu)))
    (c0, m0), (c1, m1) = (_td_window_channel(lay, kind, p, nu) for p in (0, 1))
    if m0 == nu and m1 == nu:
        summ = spectral_summary(mixture([c0, c1], [0.5, 0.5]), MIXING_GAP_TOL)
        if not summ.mixing:
            raise NotMixingError(f"averaged {nu}-site map is not mixing (gap {summ.gap:.3e})")
        return summ.fixed_point
    if m0 == nu or m1 == nu:
        self_map, other, m = (c0, c1, m1) if m0 == nu else (c1, c0, m0)
        rho, _ = geometric_series(self_map, 0.5 * other.apply(td_density(net, m)))
    elif max(m0, m1) < nu:
        rho = 0.5 * (c0.apply(td_density(net, m0)) + c1.apply(td_density(net, m1)))
    else:
        raise HierarchyError(f"window {nu} grows under ascent")
    return (rho + rho.conj().T) / 2


def _sla_fixed_point(net: HierarchicalNet) -> np.ndarray:
    def build():
        kit = channel_kit(net)
        summ = spectral_summary(kit.d_sla, MIXING_GAP_TOL)
        if not summ.mixing:
            raise NotMixingError(f"two-point map not mixing (gap {summ.gap:.3e})")
        return summ.fixed_point

    return net.cached("sla_fp", build)


def delta_sigma(net: HierarchicalNet) -> np.ndarray:
    """Traceless ``rho2 - eta1`` of the infinite TTN (connected part at distance 1)."""

    def build():
        kit = channel_kit(net)
        st = td_state(net)
        src = kit.s.apply(st.rho1) - tensor_product(kit.d_left, kit.d_right).apply(_sla_fixed_point(net))
        out, _ = geometric_series(tensor_product(kit.d_right, kit.d_left), 0.5 * src)
        return out

    _require_full(net)
    if net.kind != TTN:
        raise HierarchyError("two-point correlators are implemented for ttn2")
    return net.cached("delta_sigma", build)


def ttn_correlator(net: HierarchicalNet, gamma, distance: int) -> complex:
    """Translation-averaged connected two-point function ``tr[gamma D_sla**q (delta_sigma)]``, ``distance = 2**q``."""
    if distance < 1 or distance & (distance - 1):
        raise HierarchyError("distance must be a power of two")
    x = delta_sigma(net)
    sla = channel_kit(net).d_sla
    for _ in range(distance.bit_length() - 1):
        x = sla.apply(x)
    return complex(np.trace(np.asarray(gamma) @ x))


@dataclass(frozen=True)
class Exponent:
    """Scaling exponent ``xi = log2(lam)`` and its ascending eigenoperator."""

    xi: complex
    lam: complex
    operator: np.ndarray


def _sla_ascending_apply(kit: ChannelKit, mera: bool, n: int):
    a = (kit.d3_left if mera else kit.d_left).adjoint()
    b = (kit.d3_right if mera else kit.d_right).adjoint()

    def one(m: CpMap, t, axes):
        out = 0
        for v in m.kraus:
            # act on (row_axis, col_axis) of the 4-leg operator
            x = np.tensordot(v, t, axes=([1], [axes[0]]))
            x = np.moveaxis(x, 0, axes[0])
            x = np.tensordot(x, v.conj(), axes=([axes[1]], [1]))
            out = out + np.moveaxis(x, -1, axes[1])
        return out

    def mv(vec):
        t = vec.reshape(n, n, n, n)  # (row1, row2, col1, col2)
        ya = one(a, one(a, t, (0, 2)), (1, 3))
        yb = one(b, one(b, t, (0, 2)), (1, 3))
        return (0.5 * (ya + yb)).reshape(-1)

    return mv


def critical_exponents(net: HierarchicalNet, max_count: int | None = None) -> list[Exponent]:
    """Exponents ``log2(lam)`` of the ascending two-point map, sorted by ``Re xi`` descending.

    The eigenoperators ``G`` satisfy ``A(G) = lam G`` for the ascending map
    ``A`` adjoint to the two-point descending map (the 3+3-site one for
    MERA), so that connected correlators of ``G`` scale exactly as
    ``lam**q`` at distance ``2**q``.
    """
    _require_full(net)
    mera = net.kind == MERA
    kit = channel_kit(net)
    m = kit.d_sla_mera if mera else kit.d_sla
    n = m.dim_in
    if n * n <= DENSE_EXPONENT_LIMIT:
        sup = kit.sla_superop(mera).conj().T
        w, v = np.linalg.eig(sup)
    else:
        k = min(max_count or 8, n * n - 2)
        op = spla.LinearOperator((n * n, n * n), matvec=_sla_ascending_apply(kit, mera, _isqrt(n)), dtype=np.complex128)
        w, v = spla.eigs(op, k=k, which="LM", tol=1e-13, v0=np.eye(n).reshape(-1) + 0.1)
    order = np.lexsort((-w.real, -np.round(np.abs(w), 12)))
    w, v = w[order], v[:, order]
    if abs(w[0] - 1) > 1e-9 or (len(w) > 1 and abs(w[1]) > 1 - MIXING_GAP_TOL):
        raise NotMixingError(f"two-point map not mixing: leading eigenvalues {w[:2]}")
    if max_count is not None:
        w, v = w[:max_count], v[:, :max_count]
    out = []
    for lam, vec in zip(w, v.T):
        # rounding-level imaginary parts would put negative eigenvalues on either branch
        if abs(lam.imag) <= 1e-12 * abs(lam):
            lam = complex(lam.real)
        g = vec.reshape(n, n)
        g = g / np.linalg.norm(g)
        big = g.reshape(-1)[np.argmax(np.abs(g))]
        g = g * (abs(big) / big)
        xi = complex(np.log(lam) / math.log(2)) if abs(lam) > 0 else complex(-math.inf)
        out.append(Exponent(xi, complex(lam), g))
    return out


def write_exponents_csv(path, exponents: Sequence[Exponent]) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["alpha", "re_xi", "im_xi", "abs_lambda"])
        for a, e in enumerate(exponents):
            wr.writerow([a, repr(e.xi.real), repr(e.xi.imag), repr(abs(e.lam))])


def hermitian_basis(d: int) -> list[np.ndarray]:
    """Orthogonal basis of ``d x d`` Hermitian matrices (unnormalized)."""
    out = []
    for i in range(d):
        for j in range(i, d):
            e = np.zeros((d, d), dtype=np.complex128)
            if i == j:
                e[i, i] = 1
                out.append(e)
            else:
                e[i, j] = e[j, i] = 1
                out.append(e)
                f = np.zeros((d, d), dtype=np.complex128)
                f[i, j], f[j, i] = -1j, 1j
                out.append(f)
    return out


def translational_fluctuation(net: HierarchicalNet, theta_op) -> float:
    """Limit of the variance of ``<Theta_j>`` over sites, ``tr[Theta x Theta (sigma_sla - rho1 x rho1)]``.

    Also runs :func:`check_triviality` once per network.
    """
    check_triviality(net)
    return _fluctuation(net, np.asarray(theta_op, dtype=np.complex128))


def _fluctuation(net: HierarchicalNet, theta: np.ndarray) -> float:
    if net.kind != TTN:
        raise HierarchyError("translational fluctuations are implemented for ttn2")
    rho1 = td_state(net).rho1
    diff = _sla_fixed_point(net) - np.kron(rho1, rho1)
    return float(np.trace(np.kron(theta, theta) @ diff).real)


def check_triviality(net: HierarchicalNet) -> bool:
    """If every one-site fluctuation vanishes, insist that ``rho2 = S(rho1)``.

    Returns whether the fluctuations vanish; raises :class:`TrivialityError`
    if they do but the two-site state is not the product one.
    """

    def build():
        d = net.layers[0].d_low
        flat = all(abs(_fluctuation(net, b)) < FLUCTUATION_TOL for b in hermitian_basis(d))
        if flat:
            st = td_state(net)
            err = float(np.max(np.abs(st.rho2 - channel_kit(net).s.apply(st.rho1))))
            if err > TRIVIALITY_TOL:
                raise TrivialityError(f"no fluctuations but rho2 - S(rho1) = {err:.2e}")
        return flat

    return net.cached("trivial", build)


# -- parent Hamiltonians -----------------------------------------------------


def default_parent_size(kind: str, d: int) -> int:
    if kind == TTN:
        return 4 if d == 2 else 3
    return 6 if d == 2 else 5


@dataclass(frozen=True)
class ParentTerm:
    """Positive ``nu``-site term supported on the kernel of the averaged density matrix."""

    h: np.ndarray
    nu: int
    d: int
    kernel: np.ndarray
    rdm_spectrum: np.ndarray

    def assemble(self, L: int) -> sp.csr_matrix:
        """``sum_l H_{l..l+nu-1}`` on a periodic chain of ``L`` sites."""
        d, nu = self.d, self.nu
        if L < nu:
            raise ValueError("chain shorter than the interaction range")
        base = sp.kron(sp.csr_matrix(self.h), sp.identity(d ** (L - nu), format="csr"), format="csr")
        idx = np.arange(d**L).reshape((d,) * L)
        total = sp.csr_matrix((d**L, d**L), dtype=np.complex128)
        for shift in range(L):
            # basis relabelling that moves site 0 to site `shift`
            perm = np.moveaxis(idx, list(range(L)), [(k + shift) % L for k in range(L)]).reshape(-1)
            p = sp.csr_matrix((np.ones(d**L), (perm, np.arange(d**L))), shape=(d**L, d**L))
            total = total + p @ base @ p.T
        return total.tocsr()


def parent_hamiltonian(net: HierarchicalNet, nu: int | None = None, weights=None) -> ParentTerm:
    """``H = sum_w omega_w |k_w><k_w|`` over the kernel of the infinite ``nu``-site density matrix."""
    _require_full(net)
    d = net.d
    nu = default_parent_size(net.kind, d) if nu is None else nu
    rho = td_density(net, nu)
    ev, vecs = np.linalg.eigh(rho)
    ker = vecs[:, ev < KERNEL_TOL * ev.max()]
    if ker.shape[1] == 0:
        raise KernelError(f"rho_{nu} has full rank; spectrum {np.array2string(ev, precision=3)}")
    if weights is None:
        weights = np.ones(ker.shape[1])
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (ker.shape[1],):
        raise ValueError(f"need {ker.shape[1]} weights, got {weights.shape}")
    if np.any(weights < 0) or not np.any(weights > 0):
        raise ValueError("weights must be nonnegative with at least one positive")
    h = (ker * weights) @ ker.conj().T
    return ParentTerm((h + h.conj().T) / 2, nu, d, ker, ev)


def parent_energies(net: HierarchicalNet, term: ParentTerm) -> np.ndarray:
    """``<H_l>`` on the finite network for every window start ``l``."""
    return np.array([expectation(net, term.h, l).real for l in range(net.L)])
