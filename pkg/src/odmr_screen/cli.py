"""``odmr-screen`` command-line front end.

Precedence: command-line flags override the JSON config, which overrides
built-in defaults; every resolved value is echoed in ``manifest.json``.
Exit codes: 0 success, 1 validation failure, 2 input error, 3 algorithmic
failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import platform
import sys
import warnings
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Any, Callable

import jsonschema
import numpy as np
import scipy
from threadpoolctl import threadpool_limits

from . import __version__
from .algorithms import (
    ProxyConfig,
    SpectroConfig,
    evolution_proxy,
    imbalance_verdict,
    kappa_bound,
    optical_response,
    prepare_proxy_states,
    spectroscopy_isc,
)
from .cdf import CdfOptions, factorize, frame_from_model, sweep
from .constants import HARTREE_TO_EV
from .errors import AlgorithmicFailure, CapacityError, ContractError, OdmrScreenError
from .evolve import TrotterPlan
from .fock import sector_basis
from .model import (
    ActiveSpaceModel,
    DipoleOperator,
    SpinResolvedOperator,
    dipole_from_json,
    load_fcidump,
    operator_from_json,
    random_dipole,
    random_model,
    random_soc,
    spin_tensor_decompose,
)
from .reference import exact_diagonalize, reference_spectrum, s2_classify, sparse_hamiltonian
from .resources import CostModelConfig, TABLE_COLUMNS, table_csv, table_rows

log = logging.getLogger("odmr_screen")

EXIT_OK, EXIT_VALIDATION, EXIT_INPUT, EXIT_ALGORITHM = 0, 1, 2, 3
ORACLE_DIM_CAP = 20_000

_RANDOM_MODEL = {
    "type": "object",
    "properties": {
        "n_orbitals": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "n_electrons": {"type": "integer", "minimum": 0},
        "scale_t": {"type": "number"},
        "scale_v": {"type": "number"},
    },
    "required": ["n_orbitals"],
    "additionalProperties": False,
}

CONFIG_SCHEMA: dict = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "model": {
            "type": "object",
            "properties": {"fcidump": {"type": "string"}, "random": _RANDOM_MODEL},
            "additionalProperties": False,
        },
        "dipole": {
            "type": "object",
            "properties": {
                "path": {"type": "string"},
                "random_seed": {"type": "integer", "minimum": 0},
                "zero": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "soc": {
            "type": "object",
            "properties": {
                "path": {"type": "string"},
                "random": {
                    "type": "object",
                    "properties": {
                        "seed": {"type": "integer", "minimum": 0},
                        "scale": {"type": "number", "exclusiveMinimum": 0},
                        "nonaxial_only": {"type": "boolean"},
                        "axial_only": {"type": "boolean"},
                    },
                    "additionalProperties": False,
                },
                "zero": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "sector": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 2, "maxItems": 2},
        "cdf": {
            "type": "object",
            "properties": {
                "n_fragments": {"type": ["integer", "null"], "minimum": 1},
                "sweep": {"type": "boolean"},
                "n_starts": {"type": "integer", "minimum": 1},
                "max_iters": {"type": "integer", "minimum": 1},
                "cache": {"type": "string"},
            },
            "additionalProperties": False,
        },
        "spectro": {
            "type": "object",
            "properties": {
                "eta": {"type": "number", "exclusiveMinimum": 0},
                "tau": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "j_max": {"type": "integer", "minimum": 1},
                "window_norm": {"type": "number", "exclusiveMinimum": 0},
                "shots_total": {"type": "integer", "minimum": 1},
                "exact": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "trotter": {
            "type": ["object", "null"],
            "properties": {
                "order": {"enum": [1, 2]},
                "delta": {"type": "number", "exclusiveMinimum": 0},
                "n_fragments": {"type": ["integer", "null"], "minimum": 1},
            },
            "additionalProperties": False,
        },
        "omega": {
            "type": "object",
            "properties": {
                "min": {"type": "number"},
                "max": {"type": "number"},
                "points": {"type": "integer", "minimum": 2},
            },
            "additionalProperties": False,
        },
        "isc": {
            "type": "object",
            "properties": {
                "mode": {"enum": ["proxy", "spectroscopy"]},
                "kappa": {"type": ["number", "null"], "minimum": 0},
                "times": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 2},
                "shots": {"type": ["integer", "null"], "minimum": 1},
                "threshold": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "resources": {
            "type": "object",
            "properties": {
                "ns": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                "eps_rot": {"type": "number"},
                "d": {"type": "integer", "minimum": 1},
                "gamma2": {"type": "number"},
                "eps": {"type": "number"},
                "p_t": {"type": "number"},
                "t_minus_n": {"type": "integer", "minimum": 1},
                "trotter_order": {"enum": [1, 2]},
                "eta": {"type": "number"},
                "tau": {"type": "number"},
                "j_max": {"type": "integer", "minimum": 1},
                "shots_spec": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "validate": {
            "type": "object",
            "properties": {
                "seeds": {"type": ["array", "null"], "items": {"type": "integer", "minimum": 0}},
                "soc_path": {"type": "string"},
            },
            "additionalProperties": False,
        },
    },
}

DEFAULTS: dict = {
    "seed": 0,
    "model": {"random": {"n_orbitals": 2, "seed": 0, "n_electrons": 2}},
    "dipole": {"random_seed": 0},
    "soc": {"random": {"seed": 0, "scale": 1e-3}},
    "cdf": {"n_fragments": None, "sweep": False, "n_starts": 4, "max_iters": 10_000},
    "spectro": {"eta": 2e-3, "tau": None, "j_max": 500, "window_norm": 1.0, "shots_total": 3000, "exact": True},
    "trotter": None,
    "omega": {"min": 0.0, "max": None, "points": 4001},
    "isc": {"mode": "spectroscopy", "kappa": None, "times": [0.01, 0.02, 0.04, 0.08], "shots": None,
            "threshold": 3.0},
    "resources": {"ns": [14, 16, 18, 36]},
    "validate": {"seeds": None},
}


class InputError(OdmrScreenError):
    pass


# --- configuration ------------------------------------------------------------


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        # model/dipole/soc are one-of choices: a user value replaces the default wholesale
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("model", "dipole", "soc"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path: str | None, seed: int | None = None) -> dict:
    raw: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise InputError(f"config file not found: {path}")
        try:
            raw = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise InputError(f"config is not valid JSON: {exc}") from None
        base = p.parent
        for section, key in (("model", "fcidump"), ("dipole", "path"), ("soc", "path"), ("cdf", "cache"),
                             ("validate", "soc_path")):
            sec = raw.get(section)
            if isinstance(sec, dict) and isinstance(sec.get(key), str):
                sec[key] = str((base / sec[key]).resolve()) if not Path(sec[key]).is_absolute() else sec[key]
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(x) for x in exc.absolute_path) or "<root>"
        raise InputError(f"config invalid at {where}: {exc.message}") from None
    cfg = _merge(DEFAULTS, raw)
    if seed is not None:
        cfg["seed"] = seed
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()


def _pkg_version(name: str) -> str:
    try:
        return version(name)
    except PackageNotFoundError:
        return "unknown"


def manifest(cfg: dict, command: str, outputs: dict[str, Path]) -> dict:
    return {
        "command": command,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "seed": cfg["seed"],
        "versions": {
            "odmr_screen": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "jsonschema": _pkg_version("jsonschema"),
            "python": platform.python_version(),
        },
        "outputs": {k: hashlib.sha256(p.read_bytes()).hexdigest() for k, p in sorted(outputs.items())},
    }


def _write_json(path: Path, data: Any) -> Path:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(x: Any) -> Any:
    if isinstance(x, complex):
        return [x.real, x.imag]
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(f"not serializable: {type(x)}")


# --- inputs -------------------------------------------------------------------------


def build_model(cfg: dict) -> ActiveSpaceModel:
    mc = cfg["model"]
    if "fcidump" in mc:
        if not Path(mc["fcidump"]).is_file():
            raise InputError(f"FCIDUMP not found: {mc['fcidump']}")
        return load_fcidump(mc["fcidump"])
    if "random" in mc:
        r = dict(mc["random"])
        return random_model(r.pop("n_orbitals"), r.pop("seed", cfg["seed"]), **r)
    raise InputError("model needs 'fcidump' or 'random'")


def _read_json(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"file not found: {path}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from None


def build_dipole(cfg: dict, n: int) -> DipoleOperator:
    dc = cfg["dipole"]
    if dc.get("zero"):
        return DipoleOperator(tuple(np.zeros((n, n)) for _ in range(3)))
    if "path" in dc:
        d = dipole_from_json(_read_json(dc["path"]))
    else:
        d = random_dipole(n, dc.get("random_seed", cfg["seed"]))
    if d.n_orbitals != n:
        raise InputError(f"dipole has {d.n_orbitals} orbitals, model has {n}")
    return d


def build_soc(cfg: dict, n: int) -> SpinResolvedOperator:
    sc = cfg["soc"]
    if sc.get("zero"):
        return SpinResolvedOperator(np.zeros((2 * n, 2 * n), complex), "soc_full")
    if "path" in sc:
        op = operator_from_json(_read_json(sc["path"]))
    else:
        r = dict(sc.get("random", {}))
        op = random_soc(n, r.pop("seed", cfg["seed"]), **r)
    if op.n_orbitals != n:
        raise InputError(f"SOC has {op.n_orbitals} orbitals, model has {n}")
    return op if op.label == "soc_full" else op.relabel("soc_full")


def spectro_config(cfg: dict) -> SpectroConfig:
    s = cfg["spectro"]
    return SpectroConfig(s["eta"], s["j_max"], s["tau"], s["window_norm"], s["shots_total"], cfg["seed"], s["exact"])


def omega_grid(cfg: dict, sc: SpectroConfig) -> np.ndarray:
    o = cfg["omega"]
    hi = 2.0 * sc.window_norm if o["max"] is None else o["max"]
    return np.linspace(o["min"], hi, o["points"])


def _sector(cfg: dict, model: ActiveSpaceModel) -> tuple[int, int]:
    if "sector" in cfg:
        return tuple(cfg["sector"])  # type: ignore[return-value]
    try:
        return model.default_sector()
    except ContractError as exc:
        raise InputError(str(exc)) from None


def _trotter(cfg: dict, model: ActiveSpaceModel):
    tc = cfg.get("trotter")
    if not tc:
        return None, None
    frame = frame_from_model(model, tc.get("n_fragments"), CdfOptions(seed=cfg["seed"]))
    return frame, TrotterPlan(tc.get("order", 2), tc.get("delta", 0.1))


def _write_trace(path: Path, trace) -> Path:
    trace.write_csv(path)
    return path


# --- commands -------------------------------------------------------------------------


def cmd_fit_cdf(cfg: dict, out: Path) -> dict[str, Path]:
    model = build_model(cfg)
    c = cfg["cdf"]
    opts = CdfOptions(n_starts=c["n_starts"], seed=cfg["seed"], max_iters=c["max_iters"])
    n_frag = model.n_orbitals if c["n_fragments"] is None else c["n_fragments"]
    cfg["cdf"]["n_fragments_resolved"] = n_frag
    fac = factorize(model, n_frag, opts)
    outputs = {"cdf_cache": out / "cdf_cache.json"}
    fac.save(outputs["cdf_cache"])
    report = {"n_fragments": fac.n_fragments, "residual": fac.residual, "converged": fac.converged}
    if c["sweep"]:
        facs = sweep(model, list(range(1, 2 * model.n_orbitals + 1)), opts)
        path = out / "cdf_sweep.csv"
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["L", "residual", "converged"])
            for f in facs:
                wr.writerow([f.n_fragments, repr(f.residual), int(f.converged)])
        outputs["cdf_sweep"] = path
        report["sweep"] = [[f.n_fragments, f.residual] for f in facs]
    outputs["report"] = _write_json(out / "cdf_report.json", report)
    return outputs


def cmd_spectrum(cfg: dict, out: Path) -> dict[str, Path]:
    model = build_model(cfg)
    d = build_dipole(cfg, model.n_orbitals)
    sec = _sector(cfg, model)
    basis = sector_basis(model.n_orbitals, *sec)
    sc = spectro_config(cfg)
    om = omega_grid(cfg, sc)
    frame, plan = _trotter(cfg, model)
    resp = optical_response(model, d, sec, sc, om, frame=frame, plan=plan)
    outputs = {"spectrum": _write_trace(out / "spectrum.csv", resp.trace)}
    info: dict = {"sector": sec, "norms2": resp.norms2, "degenerate_dipole": resp.degenerate,
                  "imag_residual": resp.trace.imag_residual, "trace_metadata": resp.trace.metadata}
    if basis.dim <= ORACLE_DIM_CAP:
        sol = exact_diagonalize(sparse_hamiltonian(model, basis), basis=basis)
        ref = reference_spectrum(sol, d, float(sol.energies[0]), sc.eta, om, basis)
        outputs["reference"] = _write_trace(out / "reference.csv", ref)
        info["max_deviation_from_reference"] = float(np.max(np.abs(ref.intensities - resp.trace.intensities)))
        info["gaps_Ha"] = (sol.energies[1:] - sol.energies[0]).tolist()
        info["gaps_eV"] = ((sol.energies[1:] - sol.energies[0]) * HARTREE_TO_EV).tolist()
    outputs["report"] = _write_json(out / "spectrum_report.json", info)
    return outputs


def _singlet_energies(model: ActiveSpaceModel) -> np.ndarray:
    ne = model.n_electrons
    if ne is None or ne % 2:
        raise InputError("ISC screening needs an even electron count (singlet start)")
    b = sector_basis(model.n_orbitals, ne // 2, ne // 2)
    sol = s2_classify(exact_diagonalize(sparse_hamiltonian(model, b), basis=b), b)
    return sol.energies[[i for i, (s, _) in enumerate(sol.labels) if s == 0.0]]


def cmd_isc(cfg: dict, out: Path) -> dict[str, Path]:
    model = build_model(cfg)
    n = model.n_orbitals
    d = build_dipole(cfg, n)
    soc = build_soc(cfg, n)
    comps = spin_tensor_decompose(soc)
    ic = cfg["isc"]
    outputs: dict[str, Path] = {}
    if ic["mode"] == "proxy":
        try:
            states = prepare_proxy_states(model, d, seed=cfg["seed"])
        except AlgorithmicFailure as exc:
            _write_json(out / "filter_report.json", json.loads(str(exc)))
            raise
        res = evolution_proxy(comps, states, ic["times"], ProxyConfig(ic["shots"], cfg["seed"]))
        # rates scale with the squared matrix elements
        ax, na = abs(res.slope_z) ** 2, abs(res.slope_perp) ** 2
        # exact-mode floor: the residual k(0) overlap of the orthogonal sector states
        s = states.singlet.amplitudes
        err = max(abs(np.vdot(states.triplet_m0.amplitudes, s)), abs(np.vdot(states.triplet_m1.amplitudes, s)))
        if ic["shots"] is not None:
            err += max(math.hypot(*e.std_error) for e in res.k_z + res.k_perp)
        err /= min(ic["times"])
        unc = 2 * err * max(abs(res.slope_z), abs(res.slope_perp)) + err**2
        report = res.to_json() | {
            "axial_rate_proxy": ax,
            "nonaxial_rate_proxy": na,
            "uncertainty": unc,
            "verdict": imbalance_verdict(ax, na, unc, ic["threshold"]),
            "filter": states.reports,
            "alphas": [states.alpha_singlet, states.beta_m0, states.beta_m1],
        }
    else:
        kb = kappa_bound(_singlet_energies(model), soc)
        kappa = ic["kappa"]
        if kappa is None:
            if kb.degenerate:
                raise AlgorithmicFailure("degenerate singlet levels: kappa bound is zero")
            kappa = 0.0 if math.isinf(kb.kappa_max) else kb.kappa_max / 10
        cfg["isc"]["kappa_resolved"] = kappa
        sc = spectro_config(cfg)
        om = omega_grid(cfg, sc)
        frame, plan = _trotter(cfg, model)
        res = spectroscopy_isc(model, d, comps, kappa, sc, om, frame, plan, kb.kappa_max, threshold=ic["threshold"])
        outputs["reference"] = _write_trace(out / "isc_reference.csv", res.reference)
        outputs["axial"] = _write_trace(out / "isc_axial.csv", res.axial)
        outputs["nonaxial"] = _write_trace(out / "isc_nonaxial.csv", res.nonaxial)
        report = res.to_json() | {"kappa_max": kb.kappa_max, "kappa_degenerate": kb.degenerate}
    report["mode"] = ic["mode"]
    outputs["report"] = _write_json(out / "isc_report.json", report)
    return outputs


def cmd_resources(cfg: dict, out: Path) -> dict[str, Path]:
    rc = dict(cfg["resources"])
    ns = tuple(rc.pop("ns"))
    base = CostModelConfig(**rc)
    rows = table_rows(ns, base)
    path = out / "resources.csv"
    path.write_text(table_csv(rows) if rows else ",".join(TABLE_COLUMNS) + "\n")
    reports = {"rows": rows, "columns": list(TABLE_COLUMNS),
               "notes": ["SOS Toffoli and ancilla counts are calibrated models, not ground truth"]}
    return {"table": path, "report": _write_json(out / "resources.json", reports)}


def cmd_validate(cfg: dict, out: Path) -> dict[str, Path]:
    from .validation import run_suite

    seeds = cfg["validate"].get("seeds") or [cfg["seed"]]
    results = run_suite(seeds, cfg["validate"].get("soc_path"))
    path = _write_json(out / "validation.json", results)
    failed = [name for name, r in results.items() if not r["passed"]]
    for name in results:
        print(f"{'FAIL' if name in failed else 'PASS'} {name}")
    if failed:
        raise ValidationFailure(failed, {"validation": path})
    return {"validation": path}


class ValidationFailure(OdmrScreenError):
    def __init__(self, failed: list[str], outputs: dict[str, Path]) -> None:
        super().__init__("failed invariants: " + ", ".join(failed))
        self.outputs = outputs


COMMANDS: dict[str, Callable[[dict, Path], dict[str, Path]]] = {
    "fit-cdf": cmd_fit_cdf,
    "spectrum": cmd_spectrum,
    "isc": cmd_isc,
    "resources": cmd_resources,
    "validate": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="odmr-screen", description="Quantum-algorithm screening of ODMR candidates.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--threads", type=int, default=None, help="BLAS thread limit")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--mode", choices=["proxy", "spectroscopy"], help="isc only; overrides the config")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    out = Path(args.out)
    try:
        if args.seed is not None and not 0 <= args.seed < 2**63:
            raise InputError("seed must be a nonnegative 63-bit integer")
        cfg = load_config(args.config, args.seed)
        if args.mode:
            cfg["isc"]["mode"] = args.mode
        out.mkdir(parents=True, exist_ok=True)
        with threadpool_limits(args.threads), warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            outputs = COMMANDS[args.command](cfg, out)
        for w in caught:
            log.warning("%s", w.message)
        code = EXIT_OK
    except ValidationFailure as exc:
        outputs, code = exc.outputs, EXIT_VALIDATION
        log.error("%s", exc)
    except AlgorithmicFailure as exc:
        log.error("algorithmic failure: %s", exc)
        return EXIT_ALGORITHM
    except (InputError, ContractError, CapacityError, FileNotFoundError, OdmrScreenError) as exc:
        log.error("input error: %s", exc)
        return EXIT_INPUT
    man = manifest(cfg, args.command, outputs)
    man["warnings"] = [str(w.message) for w in caught] if code == EXIT_OK else []
    _write_json(out / "manifest.json", man)
    return code


if __name__ == "__main__":
    sys.exit(main())
