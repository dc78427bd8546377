"""Comparisons against independent oracles, grouped into named suites.

Each check pairs a value computed by the library with one obtained another
way (exact diagonalization, a closed formula, a dense superoperator or a
determinant expansion). ``tnet oracle-check --suite NAME`` runs a suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources

import numpy as np


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    reference: float
    tol: float
    relative: bool = False

    @property
    def error(self) -> float:
        err = abs(self.value - self.reference)
        return err / max(abs(self.reference), 1e-300) if self.relative else err

    @property
    def passed(self) -> bool:
        return math.isfinite(self.error) and self.error <= self.tol

    def line(self) -> str:
        kind = "rel" if self.relative else "abs"
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name} value={float(self.value)!r} reference={float(self.reference)!r} {kind}_err={self.error:.3e} tol={self.tol:.0e}"


def data_path(name: str) -> str:
    """Filesystem path of a bundled fixture."""
    return str(resources.files("tnet") / "data" / name)


def suite_ed(cfg: dict | None) -> list[Check]:
    """DMRG run of ``cfg`` (open chain) against exact diagonalization."""
    from .cli import ConfigError, _hamiltonian, run_dmrg
    from .models import ed_ground

    if cfg is None:
        raise ConfigError("the ed suite needs --config")
    result, _ = run_dmrg(cfg, "open")
    e_ed = ed_ground(_hamiltonian(cfg, "open"), cfg["charge"])[0]
    return [Check("ed.dmrg_energy", result.energy, e_ed, 1e-7, relative=True)]


def suite_models(cfg=None) -> list[Check]:
    from .models import ed_ground, heisenberg, tfim, tfim_pbc_free_fermion_energy, xxz

    out = [
        Check("models.tfim_L2_h0", ed_ground(tfim(2, h=0.0))[0], -1.0, 1e-12),
        Check("models.heisenberg_L2", ed_ground(heisenberg(2))[0], -3.0, 1e-12),
        Check(
            "models.tfim_L10_pbc_free_fermions",
            ed_ground(tfim(10, boundary="periodic"))[0],
            tfim_pbc_free_fermion_energy(10),
            1e-9,
        ),
    ]
    h = xxz(8, 0.5)
    w, v = np.linalg.eigh(h.to_dense())
    n_down = np.array([bin(i).count("1") for i in range(2**8)])
    weight = np.abs(v[n_down != 4]) ** 2
    in_sector = np.sum(weight, axis=0) < 1e-12
    out.append(Check("models.xxz_L8_sector", ed_ground(h, 4)[0], float(w[in_sector][0]), 1e-10))
    return out


def suite_cpt(cfg=None) -> list[Check]:
    from .cpt import depolarizing, random_channel, spectral_summary

    p = 0.3
    w = np.sort(spectral_summary(depolarizing(p)).eigenvalues.real)
    out = [Check("cpt.depolarizing_spectrum", float(np.max(np.abs(w - np.array([1 - p] * 3 + [1])))), 0.0, 1e-10)]
    rng = np.random.default_rng(0)
    worst_tp = worst_rad = 0.0
    for n in (2, 3, 4):
        ch = random_channel(n, 3, rng)
        rho = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        rho = rho @ rho.conj().T
        rho /= np.trace(rho)
        worst_tp = max(worst_tp, abs(np.trace(ch.apply(rho)) - 1))
        worst_rad = max(worst_rad, float(np.max(np.abs(np.linalg.eigvals(ch.superop)))))
    out.append(Check("cpt.trace_preservation", worst_tp, 0.0, 1e-12))
    out.append(Check("cpt.spectral_radius", max(worst_rad - 1, 0.0), 0.0, 1e-9))
    return out


def suite_slater(cfg=None) -> list[Check]:
    from .fermion import OrbitalSet, dense_slater, read_orbitals, slater_half_chain_entropy, slater_mps

    orbs = OrbitalSet.random(8, 3, np.random.default_rng(0))
    amp = slater_mps(orbs).to_dense().ravel()
    pw = read_orbitals(data_path("planewave_n3_l8.csv"))
    return [
        Check("slater.determinants", float(np.max(np.abs(amp - dense_slater(orbs)))), 0.0, 1e-11),
        Check("slater.plane_wave_entropy", slater_half_chain_entropy(pw), float(pw.N), 1e-9),
    ]


def suite_infinite(cfg=None) -> list[Check]:
    from .infinite import UniformMps, correlation_length, left_canonical
    from .tensor import load_tensor

    u = left_canonical(UniformMps(load_tensor(data_path("aklt.tnet"))))
    w = np.linalg.eigvals(u.transfer())
    w = w[np.argsort(-w.real)]
    return [
        Check("infinite.aklt_spectrum", float(np.max(np.abs(w - np.array([1, -1 / 3, -1 / 3, -1 / 3])))), 0.0, 1e-9),
        Check("infinite.aklt_correlation_length", correlation_length(u), 1 / math.log(3), 1e-9),
    ]


def suite_hierarchical(cfg=None) -> list[Check]:
    from .hierarchical import HierarchicalNet, critical_exponents, parent_hamiltonian

    copy = HierarchicalNet.load(data_path("copy_ttn"))
    exps = [e for e in critical_exponents(copy, 4) if abs(e.lam - 1) > 1e-9]
    histo = HierarchicalNet.load(data_path("histo_ttn"))
    spec = np.linalg.eigvalsh(parent_hamiltonian(histo, 4).assemble(8).toarray())
    kernel = int(np.count_nonzero(np.abs(spec) < 1e-9))
    return [
        Check("hierarchical.copy_leading_exponent", exps[0].xi.real, -1.0, 1e-9),
        Check("hierarchical.parent_kernel_dimension", float(kernel), 32.0, 0.0),
    ]


def suite_u1(cfg=None) -> list[Check]:
    from .models import ed_ground, xxz
    from .u1 import dmrg_fixed_charge

    h = xxz(8, 1.0)
    _, rep = dmrg_fixed_charge(h, 4, 16)
    return [Check("u1.xxz_L8_sz0", rep.energies[-1], ed_ground(h, 4)[0], 1e-8)]


SUITES = {
    "ed": suite_ed,
    "models": suite_models,
    "cpt": suite_cpt,
    "slater": suite_slater,
    "infinite": suite_infinite,
    "hierarchical": suite_hierarchical,
    "u1": suite_u1,
}


def run_suite(name: str, cfg: dict | None = None) -> list[Check]:
    if name == "all":
        out = []
        for key, fn in SUITES.items():
            if key == "ed" and cfg is None:
                continue
            out.extend(fn(cfg))
        return out
    return SUITES[name](cfg)
