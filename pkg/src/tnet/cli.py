"""Command-line harness.

Every subcommand writes its outputs into ``--out`` (created if needed) and
always produces ``result.json``, a self-describing :class:`RunResult`.
Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.

The environment variable ``TNET_THREADS`` caps the BLAS/OpenMP thread
pools. It is applied before numpy is first imported, so it only takes
effect when ``tnet.cli`` is the entry point.

CSV files
---------
``energies.csv``     step, energy (one row per half-sweep)
``correlators.csv``  ell, re, im
``exponents.csv``    alpha, re_xi, im_xi, abs_lambda
``spectrum.csv``     index, energy
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

CONFIG_VERSION = 1

THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")

#: name -> (type, default); ``None`` default means optional
DMRG_SCHEMA = {
    "version": (int, CONFIG_VERSION),
    "model": (str, "tfim"),
    "L": (int, 12),
    "J": (float, 1.0),
    "h": (float, 1.0),
    "delta": (float, 1.0),
    "D": (int, 16),
    "max_sweeps": (int, 20),
    "tol": (float, 1e-10),
    "seed": (int, 0),
    "algorithm": (str, "two-site"),
    "p": (int, None),
    "charge": (int, None),
}

ALGORITHMS = ("two-site", "single-site")


class ConfigError(ValueError):
    pass


class NumericalFailure(RuntimeError):
    pass


@dataclass
class RunResult:
    """Numbers produced by one run plus enough context to reproduce it."""

    command: str
    config: dict
    seed: int | None = None
    energy: float | None = None
    energies: list = field(default_factory=list)
    entanglement: list = field(default_factory=list)
    correlators: list = field(default_factory=list)
    exponents: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = asdict(self)
        _check_finite(payload, "result")
        return json.dumps(payload, indent=2)


def _check_finite(obj, path: str) -> None:
    if isinstance(obj, float) and not math.isfinite(obj):
        raise NumericalFailure(f"non-finite value at {path}")
    if isinstance(obj, dict):
        for k, v in obj.items():
            _check_finite(v, f"{path}.{k}")
    elif isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            _check_finite(v, f"{path}[{i}]")


# -- config ----------------------------------------------------------------------


def parse_config(raw: dict, schema: dict = DMRG_SCHEMA) -> dict:
    """Validate a flat JSON config against ``schema`` and fill in defaults."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    if "version" not in raw:
        raise ConfigError("config needs a version field")
    out = {}
    for key, (typ, default) in schema.items():
        val = raw.get(key, default)
        if val is None:
            out[key] = None
            continue
        if typ is float and isinstance(val, int) and not isinstance(val, bool):
            val = float(val)
        if not isinstance(val, typ) or isinstance(val, bool):
            raise ConfigError(f"{key} must be {typ.__name__}, got {val!r}")
        if typ is float and not math.isfinite(val):
            raise ConfigError(f"{key} must be finite")
        out[key] = val
    if out["version"] != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {out['version']}")
    if out["algorithm"] not in ALGORITHMS:
        raise ConfigError(f"algorithm must be one of {ALGORITHMS}")
    for key in ("L", "D", "max_sweeps"):
        if out[key] < 1:
            raise ConfigError(f"{key} must be positive")
    if out["L"] < 2:
        raise ConfigError("L must be at least 2")
    if out["p"] is not None and out["p"] < 1:
        raise ConfigError("p must be positive")
    if out["tol"] <= 0:
        raise ConfigError("tol must be positive")
    return out


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    return parse_config(raw)


def _require_path(path) -> str:
    if not os.path.exists(path):
        raise ConfigError(f"{path} not found")
    return path


def apply_thread_cap(env=os.environ) -> int | None:
    """Copy ``TNET_THREADS`` into the usual BLAS/OpenMP variables."""
    raw = env.get("TNET_THREADS")
    if raw is None:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"TNET_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"TNET_THREADS must be a positive integer, got {raw!r}")
    for var in THREAD_VARS:
        env[var] = str(n)
    return n


# -- subcommands -------------------------------------------------------------------


def _write_result(out_dir: str, result: RunResult) -> None:
    text = result.to_json()
    with open(os.path.join(out_dir, "result.json"), "w") as fh:
        fh.write(text)


def _write_rows(path, header, rows) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(x) if isinstance(x, float) else x for x in row])


def _hamiltonian(cfg: dict, boundary: str):
    from .models import MODELS, ModelSpec, build_hamiltonian

    if cfg["model"] not in MODELS:
        raise ConfigError(f"unknown model {cfg['model']!r}; choose from {MODELS}")
    spec = ModelSpec(cfg["model"], cfg["L"], J=cfg["J"], h=cfg["h"], delta=cfg["delta"], boundary=boundary)
    return build_hamiltonian(spec)


def run_dmrg(cfg: dict, boundary: str) -> tuple[RunResult, object]:
    """Run the sweeps described by ``cfg``; returns the result and the final MPS."""
    from . import dmrg, u1
    from .mps import entanglement_profile

    h = _hamiltonian(cfg, boundary)
    t0 = time.perf_counter()
    if boundary == "periodic":
        if cfg["charge"] is not None:
            raise ConfigError("fixed-charge runs need open boundaries")
        mps, rep = dmrg.dmrg_pbc(None, h, cfg["D"], p=cfg["p"], tol=cfg["tol"], max_sweeps=cfg["max_sweeps"], seed=cfg["seed"])
    elif cfg["charge"] is not None:
        bm, rep = u1.dmrg_fixed_charge(h, cfg["charge"], cfg["D"], cfg["tol"], cfg["max_sweeps"], seed=cfg["seed"])
        mps = bm.to_mps()
    elif cfg["algorithm"] == "two-site":
        mps, rep = dmrg.dmrg_obc_double(None, h, cfg["D"], cfg["tol"], cfg["max_sweeps"], cfg["seed"])
    else:
        mps, rep = dmrg.dmrg_obc_single(None, h, cfg["D"], cfg["tol"], cfg["max_sweeps"], cfg["seed"])
    wall = time.perf_counter() - t0
    profile = entanglement_profile(mps) if boundary == "open" else []
    result = RunResult(
        command="dmrg-pbc" if boundary == "periodic" else "dmrg-obc",
        config=dict(cfg),
        seed=cfg["seed"],
        energy=float(rep.energies[-1]),
        energies=[float(e) for e in rep.energies],
        entanglement=[float(s) for s in profile],
        extra={
            "converged": rep.converged,
            "sweeps_used": rep.sweeps_used,
            "discarded_weight": float(rep.total_discarded_weight),
            "bond_dims": [int(b) for b in mps.bond_dims],
        },
        timing={"wall_time": wall},
    )
    return result, mps


def cmd_dmrg(args, boundary: str) -> int:
    cfg = load_config(args.config)
    result, _ = run_dmrg(cfg, boundary)
    os.makedirs(args.out, exist_ok=True)
    _write_result(args.out, result)
    _write_rows(os.path.join(args.out, "energies.csv"), ["step", "energy"], list(enumerate(result.energies)))
    if not result.extra["converged"]:
        print(f"warning: not converged after {result.extra['sweeps_used']} sweeps", file=sys.stderr)
    print(f"energy {result.energy!r}")
    return EXIT_OK


def _named_operator(name: str, d: int):
    import numpy as np

    from .tensor import load_tensor

    if os.path.exists(name):
        op = load_tensor(name)
        if op.shape != (d, d):
            raise ConfigError(f"operator {name} has shape {op.shape}, expected {(d, d)}")
        return op
    if d == 2:
        table = {
            "sx": [[0, 1], [1, 0]],
            "sy": [[0, -1j], [1j, 0]],
            "sz": [[1, 0], [0, -1]],
            "n": [[0, 0], [0, 1]],
        }
    elif d == 3:
        r = 1 / np.sqrt(2)
        table = {
            "sx": [[0, r, 0], [r, 0, r], [0, r, 0]],
            "sy": [[0, -1j * r, 0], [1j * r, 0, -1j * r], [0, 1j * r, 0]],
            "sz": [[1, 0, 0], [0, 0, 0], [0, 0, -1]],
        }
    else:
        table = {}
    if name not in table:
        raise ConfigError(f"unknown operator {name!r} for d={d}; pass a tensor file instead")
    return np.array(table[name], dtype=np.complex128)


def cmd_infinite(args) -> int:
    from .infinite import UniformMps, correlation_length, left_canonical, td_correlator
    from .tensor import load_tensor

    a = load_tensor(_require_path(args.tensor))
    if a.ndim != 3 or a.shape[0] != a.shape[2]:
        raise ConfigError(f"tensor must have shape (D, d, D), got {a.shape}")
    if args.max_dist < 1:
        raise ConfigError("--max-dist must be positive")
    u = left_canonical(UniformMps(a))
    op1, op2 = (_named_operator(n, u.d) for n in args.ops)
    ells = list(range(1, args.max_dist + 1))
    vals = [td_correlator(u, op1, op2, ell) for ell in ells]
    xi = correlation_length(u)
    rows = [(ell, float(c.real), float(c.imag)) for ell, c in zip(ells, vals)]
    result = RunResult(
        command="infinite",
        config={"tensor": args.tensor, "ops": list(args.ops), "max_dist": args.max_dist},
        correlators=[list(r) for r in rows],
        extra={"correlation_length": xi if math.isfinite(xi) else None, "D": u.D, "d": u.d},
    )
    os.makedirs(args.out, exist_ok=True)
    _write_rows(os.path.join(args.out, "correlators.csv"), ["ell", "re", "im"], rows)
    _write_result(args.out, result)
    print(f"correlation_length {xi!r}")
    return EXIT_OK


def _load_net(path):
    from .hierarchical import HierarchicalNet

    _require_path(os.path.join(path, "net.json"))
    return HierarchicalNet.load(path)


def cmd_mera_exponents(args) -> int:
    from .hierarchical import critical_exponents, write_exponents_csv

    net = _load_net(args.net)
    if args.count < 1:
        raise ConfigError("--count must be positive")
    exps = critical_exponents(net, args.count)
    os.makedirs(args.out, exist_ok=True)
    write_exponents_csv(os.path.join(args.out, "exponents.csv"), exps)
    table = [[a, e.xi.real, e.xi.imag, abs(e.lam)] for a, e in enumerate(exps) if math.isfinite(e.xi.real)]
    result = RunResult(command="mera-exponents", config={"net": args.net, "count": args.count}, exponents=table)
    _write_result(args.out, result)
    for a, re_xi, im_xi, lam in table:
        print(f"{a} {re_xi!r} {im_xi!r} {lam!r}")
    return EXIT_OK


#: eigenvalues of the assembled parent Hamiltonian below this count as kernel
KERNEL_ENERGY_TOL = 1e-9


def cmd_parent_ham(args) -> int:
    import numpy as np

    from .hierarchical import parent_hamiltonian
    from .tensor import save_tensor

    net = _load_net(args.net)
    if args.L < args.nu:
        raise ConfigError("--L must be at least --nu")
    if net.d**args.L > 2**14:
        raise ConfigError(f"d^L = {net.d}^{args.L} is too large for dense diagonalization")
    term = parent_hamiltonian(net, args.nu)
    spec = np.linalg.eigvalsh(term.assemble(args.L).toarray())
    kernel = int(np.count_nonzero(np.abs(spec) < KERNEL_ENERGY_TOL))
    rank = int(np.count_nonzero(term.rdm_spectrum > 1e-10 * term.rdm_spectrum.max()))
    os.makedirs(args.out, exist_ok=True)
    save_tensor(os.path.join(args.out, "term.tnet"), term.h)
    _write_rows(os.path.join(args.out, "spectrum.csv"), ["index", "energy"], [(i, float(e)) for i, e in enumerate(spec)])
    result = RunResult(
        command="parent-ham",
        config={"net": args.net, "nu": args.nu, "L": args.L},
        energy=float(spec[0]),
        extra={"kernel_dimension": kernel, "rdm_rank": rank, "term_kernel": int(term.kernel.shape[1])},
    )
    _write_result(args.out, result)
    print(f"kernel_dimension {kernel}")
    return EXIT_OK


def cmd_slater(args) -> int:
    from .fermion import read_orbitals, slater_mps
    from .mps import entanglement_profile, schmidt

    orbs = read_orbitals(_require_path(args.orbitals))
    mps = slater_mps(orbs)
    s_half = schmidt(mps, orbs.L // 2).entropy
    os.makedirs(args.out, exist_ok=True)
    mps.save(os.path.join(args.out, "mps"))
    result = RunResult(
        command="slater",
        config={"orbitals": args.orbitals},
        entanglement=[float(s) for s in entanglement_profile(mps)],
        extra={"half_chain_entropy": float(s_half), "N": orbs.N, "L": orbs.L},
    )
    _write_result(args.out, result)
    print(f"half_chain_entropy {s_half!r}")
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    from .oracles import SUITES, run_suite

    if args.suite not in SUITES and args.suite != "all":
        raise ConfigError(f"unknown suite {args.suite!r}; choose from {sorted(SUITES)}")
    cfg = load_config(args.config) if args.config else None
    checks = run_suite(args.suite, cfg)
    for c in checks:
        print(c.line())
    return EXIT_OK if all(c.passed for c in checks) else EXIT_NUMERICAL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tnet", description="Tensor-network ground states, channels and checks.")
    sub = p.add_subparsers(dest="command", required=True)

    for name in ("dmrg-obc", "dmrg-pbc"):
        s = sub.add_parser(name, help=f"{'open' if name == 'dmrg-obc' else 'periodic'}-chain ground-state sweeps")
        s.add_argument("--config", required=True)
        s.add_argument("--out", default="tnet_out")

    s = sub.add_parser("infinite", help="correlators and correlation length of a uniform MPS")
    s.add_argument("--tensor", required=True, help="(D, d, D) tensor dump")
    s.add_argument("--ops", nargs=2, required=True, metavar=("OP1", "OP2"))
    s.add_argument("--max-dist", type=int, required=True)
    s.add_argument("--out", default="tnet_out")

    s = sub.add_parser("mera-exponents", help="scaling exponents of a scale-invariant TTN or MERA")
    s.add_argument("--net", required=True)
    s.add_argument("--count", type=int, default=8)
    s.add_argument("--out", default="tnet_out")

    s = sub.add_parser("parent-ham", help="parent Hamiltonian term and spectrum on a ring")
    s.add_argument("--net", required=True)
    s.add_argument("--nu", type=int, required=True)
    s.add_argument("--L", type=int, required=True)
    s.add_argument("--out", default="tnet_out")

    s = sub.add_parser("slater", help="exact MPS of a Slater determinant")
    s.add_argument("--orbitals", required=True)
    s.add_argument("--out", default="tnet_out")

    s = sub.add_parser("oracle-check", help="compare against independent oracles")
    s.add_argument("--suite", required=True)
    s.add_argument("--config", help="model config for the ed suite")
    return p


def _numerical_errors() -> tuple:
    import numpy as np

    from .cpt import ConvergenceError, NotMixingError
    from .dmrg import NonHermitianError, NormNotPositiveError
    from .hierarchical import KernelError, TrivialityError

    return (
        NumericalFailure,
        ConvergenceError,
        NotMixingError,
        NonHermitianError,
        NormNotPositiveError,
        KernelError,
        TrivialityError,
        np.linalg.LinAlgError,
        FloatingPointError,
    )


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        apply_thread_cap()
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    numerical = _numerical_errors()
    handlers = {
        "dmrg-obc": lambda a: cmd_dmrg(a, "open"),
        "dmrg-pbc": lambda a: cmd_dmrg(a, "periodic"),
        "infinite": cmd_infinite,
        "mera-exponents": cmd_mera_exponents,
        "parent-ham": cmd_parent_ham,
        "slater": cmd_slater,
        "oracle-check": cmd_oracle_check,
    }
    try:
        return handlers[args.command](args)
    except numerical as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
