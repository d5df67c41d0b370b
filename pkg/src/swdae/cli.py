"""Command-line interface: ``swdae {analyze,simulate,detect,observe} SCENARIO``.

Exit codes: 0 success, 2 certificate (or strict budget) failure, 3 invalid
scenario.  Output files go to ``--out-dir``, else the scenario's
``output.directory``, else ``$SWDAE_OUT_DIR``, else ``./swdae-out``.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import os
import sys as _sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import plotting
from .modeobs import GainDesignError, MultiplicativeNoise, build
from .observer import ConfigError, ObserverConfig, periodic_windows, run
from .simulator import Mode, SwitchedSystem, solve_homogeneous, solve_with_input
from .trajectory import PwsTrajectory, constant
from .windowing import (
    BudgetError,
    CertificateError,
    ModeDataCache,
    build_window,
    detect_certificate,
    make_window,
)

log = logging.getLogger("swdae")

ENV_OUT_DIR = "SWDAE_OUT_DIR"
DEFAULT_OUT_DIR = "swdae-out"
EXIT_OK, EXIT_CERT, EXIT_SCHEMA = 0, 2, 3
FLOAT_FMT = "{:.17g}"

_matrix = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}
_vector = {"type": "array", "items": {"type": "number"}}

SCHEMA = {
    "type": "object",
    "required": ["name", "n", "ny", "modes", "switching", "x0"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "description": {"type": "string"},
        "n": {"type": "integer", "minimum": 1},
        "nu": {"type": "integer", "minimum": 0},
        "ny": {"type": "integer", "minimum": 0},
        "modes": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["E", "A"],
                "additionalProperties": False,
                "properties": {
                    "name": {"type": "string"},
                    "E": _matrix, "A": _matrix, "B": _matrix, "C": _matrix, "D": _matrix,
                },
            },
        },
        "switching": {
            "oneOf": [
                {
                    "type": "object",
                    "required": ["periodic"],
                    "additionalProperties": False,
                    "properties": {
                        "periodic": {
                            "type": "object",
                            "required": ["cycle", "repeats"],
                            "additionalProperties": False,
                            "properties": {
                                "cycle": {
                                    "type": "array", "minItems": 1,
                                    "items": {
                                        "type": "array",
                                        "prefixItems": [{"type": "integer", "minimum": 0},
                                                        {"type": "number", "exclusiveMinimum": 0}],
                                        "minItems": 2, "maxItems": 2,
                                    },
                                },
                                "repeats": {"type": "integer", "minimum": 1},
                                "t0": {"type": "number"},
                            },
                        }
                    },
                },
                {
                    "type": "object",
                    "required": ["times", "sequence"],
                    "additionalProperties": False,
                    "properties": {
                        "times": {"type": "array", "minItems": 2, "items": {"type": "number"}},
                        "sequence": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 0}},
                    },
                },
            ]
        },
        "windows": {
            "oneOf": [
                {"const": "periodic"},
                {"type": "array", "minItems": 1,
                 "items": {"type": "array", "items": {"type": "integer", "minimum": 0},
                           "minItems": 2, "maxItems": 2}},
            ]
        },
        "x0": _vector,
        "xhat0": _vector,
        "input": {
            "type": "object",
            "required": ["constant"],
            "additionalProperties": False,
            "properties": {"constant": _vector},
        },
        "observer": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "alpha_hat": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "poles": {"type": "object", "patternProperties": {"^[0-9]+$": _vector},
                          "additionalProperties": False},
                "target_eps": {"oneOf": [{"const": "auto"}, {"type": "number", "exclusiveMinimum": 0}]},
                "noise": {
                    "oneOf": [
                        {"type": "object", "required": ["type"], "additionalProperties": False,
                         "properties": {"type": {"const": "off"}}},
                        {"type": "object", "required": ["type", "eps"], "additionalProperties": False,
                         "properties": {"type": {"const": "multiplicative"},
                                        "eps": {"type": "number", "minimum": 0},
                                        "seed": {"type": "integer"}}},
                    ]
                },
                "delay": {"type": "number", "minimum": 0},
                "strict_budget": {"type": "boolean"},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "grid_step": {"type": "number", "exclusiveMinimum": 0},
                "directory": {"type": "string"},
            },
        },
    },
}


class ScenarioError(ValueError):
    """Invalid scenario; ``violations`` holds ``(path, message)`` pairs."""

    def __init__(self, violations: list[tuple[str, str]]):
        self.violations = violations
        super().__init__("; ".join(f"{p}: {m}" for p, m in violations))


def _path(parts) -> str:
    out = "$"
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


@dataclass
class Scenario:
    """Validated scenario; ``data`` is the normalized JSON document."""

    data: dict = field(repr=False)

    @property
    def name(self) -> str:
        return self.data["name"]

    @property
    def n(self) -> int:
        return self.data["n"]

    @property
    def nu(self) -> int:
        return self.data.get("nu", 0)

    @property
    def ny(self) -> int:
        return self.data["ny"]

    @property
    def observer(self) -> dict:
        return self.data.get("observer", {})

    @property
    def output(self) -> dict:
        return self.data.get("output", {})

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True)

    def with_repeats(self, repeats: int) -> Scenario:
        sw = self.data["switching"]
        if "periodic" not in sw:
            raise ConfigError("--horizon needs a periodic switching signal")
        d = copy.deepcopy(self.data)
        d["switching"]["periodic"]["repeats"] = int(repeats)
        return Scenario(d)

    def with_seed(self, seed: int) -> Scenario:
        d = copy.deepcopy(self.data)
        noise = d.setdefault("observer", {}).get("noise")
        if noise and noise.get("type") == "multiplicative":
            noise["seed"] = int(seed)
        return Scenario(d)

    # -- builders -----------------------------------------------------------
    def system(self) -> SwitchedSystem:
        modes = [Mode(m["E"], m["A"], m.get("B"), m.get("C"), m.get("D"), name=m.get("name"))
                 for m in self.data["modes"]]
        sw = self.data["switching"]
        if "periodic" in sw:
            per = sw["periodic"]
            return SwitchedSystem.periodic(modes, [tuple(c) for c in per["cycle"]], per["repeats"],
                                           per.get("t0", 0.0))
        return SwitchedSystem(modes, sw["sequence"], sw["times"])

    def windows(self, sys: SwitchedSystem) -> list[tuple[int, int]]:
        w = self.data.get("windows", "periodic")
        if w == "periodic":
            return periodic_windows(sys)
        return [tuple(x) for x in w]

    def input(self, sys: SwitchedSystem) -> PwsTrajectory | None:
        inp = self.data.get("input")
        if inp is None or self.nu == 0:
            return None
        return constant(inp["constant"], float(sys.times[0]), float(sys.times[-1]))

    def noise(self) -> MultiplicativeNoise | None:
        nz = self.observer.get("noise", {"type": "off"})
        if nz["type"] == "off":
            return None
        return MultiplicativeNoise(nz["eps"], nz.get("seed"))

    def observer_config(self, sys: SwitchedSystem) -> ObserverConfig:
        o = self.observer
        poles = o.get("poles")
        return ObserverConfig(
            windows=self.windows(sys),
            xhat0=np.asarray(self.data.get("xhat0", [0.0] * self.n), dtype=float),
            alpha_hat=o.get("alpha_hat", 0.7),
            poles={int(k): v for k, v in poles.items()} if poles else None,
            target_eps=o.get("target_eps", "auto"),
            noise=self.noise(),
            delay=o.get("delay", 0.0),
            strict_budget=o.get("strict_budget", True),
        )


def _shape(M) -> tuple[int, ...]:
    rows = len(M)
    cols = {len(r) for r in M}
    if len(cols) > 1:
        return (rows, -1)
    return (rows, cols.pop() if cols else 0)


def _semantic_checks(d: dict) -> list[tuple[str, str]]:
    out = []
    n, ny, nu = d["n"], d["ny"], d.get("nu", 0)
    expect = {"E": (n, n), "A": (n, n), "B": (n, nu), "C": (ny, n), "D": (ny, nu)}
    for i, m in enumerate(d["modes"]):
        for key, shp in expect.items():
            if key not in m:
                if key == "C" and ny > 0:
                    out.append((_path(["modes", i, key]), f"required when ny = {ny}"))
                if key == "B" and nu > 0:
                    out.append((_path(["modes", i, key]), f"required when nu = {nu}"))
                continue
            got = _shape(m[key])
            if shp[1] == 0 and got[0] == shp[0]:
                continue
            if got != shp:
                out.append((_path(["modes", i, key]), f"shape {got} but expected {shp}"))
    nm = len(d["modes"])
    sw = d["switching"]
    if "periodic" in sw:
        for j, (mi, _) in enumerate(sw["periodic"]["cycle"]):
            if mi >= nm:
                out.append((_path(["switching", "periodic", "cycle", j, 0]), f"mode index {mi} out of range"))
        intervals = len(sw["periodic"]["cycle"]) * sw["periodic"]["repeats"]
    else:
        times, seq = sw["times"], sw["sequence"]
        if len(times) != len(seq) + 1:
            out.append((_path(["switching", "times"]), "needs exactly one more entry than sequence"))
        if any(b <= a for a, b in zip(times, times[1:])):
            out.append((_path(["switching", "times"]), "switch times must be strictly increasing"))
        for j, mi in enumerate(seq):
            if mi >= nm:
                out.append((_path(["switching", "sequence", j]), f"mode index {mi} out of range"))
        intervals = len(seq)
    w = d.get("windows", "periodic")
    if w == "periodic" and "periodic" not in sw:
        out.append((_path(["windows"]), "'periodic' windows need a periodic switching signal"))
    elif w != "periodic":
        for j, (p, q) in enumerate(w):
            if not p < q <= intervals:
                out.append((_path(["windows", j]), f"window ({p}, {q}) invalid for {intervals} intervals"))
        for j in range(1, len(w)):
            if w[j][0] != w[j - 1][1]:
                out.append((_path(["windows", j]), "windows must be consecutive"))
    for key in ("x0", "xhat0"):
        if key in d and len(d[key]) != n:
            out.append((_path([key]), f"length {len(d[key])} but n = {n}"))
    if "input" in d and len(d["input"]["constant"]) != nu:
        out.append((_path(["input", "constant"]), f"length {len(d['input']['constant'])} but nu = {nu}"))
    return out


def validate(doc) -> Scenario:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        raise ScenarioError([(_path(e.absolute_path), e.message) for e in errors])
    problems = _semantic_checks(doc)
    if problems:
        raise ScenarioError(problems)
    return Scenario(copy.deepcopy(doc))


def parse_scenario(text: str) -> Scenario:
    """Parse and validate a JSON scenario document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError([("$", f"invalid JSON: {exc}")]) from exc
    return validate(doc)


def bundled_scenarios() -> list[str]:
    return sorted(p.name for p in resources.files("swdae.scenarios").iterdir() if p.name.endswith(".json"))


def load_scenario(ref: str) -> Scenario:
    """Load from a path, or by name from the bundled scenarios."""
    path = Path(ref)
    if path.is_file():
        return parse_scenario(path.read_text())
    name = ref if ref.endswith(".json") else ref + ".json"
    if name in bundled_scenarios():
        return parse_scenario(resources.files("swdae.scenarios").joinpath(name).read_text())
    raise ScenarioError([("$", f"no scenario file '{ref}' (bundled: {', '.join(bundled_scenarios())})")])


# -- CSV output ---------------------------------------------------------------

def _fmt(v: float) -> str:
    return FLOAT_FMT.format(float(v))


def write_trajectory_csv(path, traj: PwsTrajectory, name: str, step: float) -> Path:
    ts = traj.grid(step)
    X = traj.sample(ts)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"{name}_{i + 1}" for i in range(traj.dim)])
        for t, row in zip(ts, X):
            w.writerow([_fmt(t)] + [_fmt(v) for v in row])
    return Path(path)


def write_impulse_csv(path, traj: PwsTrajectory) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "order", "component", "coeff"])
        for rec in traj.impulses:
            for j, c in enumerate(rec.coeffs):
                for i, v in enumerate(c):
                    w.writerow([_fmt(rec.time), j, i + 1, _fmt(v)])
    return Path(path)


def write_rows(path, header: list[str], rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])
    return Path(path)


def read_trajectory_csv(path) -> tuple[np.ndarray, np.ndarray, list[str]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    return body[:, 0], body[:, 1:], header


# -- subcommands --------------------------------------------------------------

def _matrix_text(M: np.ndarray) -> str:
    if M.size == 0:
        return f"    (empty {M.shape[0]}x{M.shape[1]})"
    return "\n".join("    " + " ".join(f"{v:10.6g}" for v in row) for row in np.where(np.abs(M) < 1e-13, 0.0, M))


def cmd_analyze(sc: Scenario, out: Path, args) -> int:
    sys_ = sc.system()
    lines = [f"scenario {sc.name}: n = {sc.n}, ny = {sc.ny}, nu = {sc.nu}"]
    for i, mode in enumerate(sys_.modes):
        d = build(mode)
        dec = d.dec
        lines.append(f"\nmode {i} ({mode.name or '-'}): n1 = {dec.qwf.n1}, index = {dec.index}, "
                     f"dim W = {d.W.dim}, r = {d.r} (diff {d.r_diff}, imp {d.r_imp})")
        for label, M in (("Pi", dec.Pi), ("Adiff", dec.Adiff), ("Eimp", dec.Eimp),
                         ("Odiff", d.Odiff), ("Oimp", d.Oimp)):
            lines.append(f"  {label}:")
            lines.append(_matrix_text(M))
    text = "\n".join(lines) + "\n"
    (out / "analyze.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


def _simulate(sc: Scenario, sys_: SwitchedSystem, step: float):
    u = sc.input(sys_)
    x0 = np.asarray(sc.data["x0"], dtype=float)
    if u is None:
        return solve_homogeneous(sys_, x0), u
    return solve_with_input(sys_, x0, u, grid_step=step), u


def cmd_simulate(sc: Scenario, out: Path, args) -> int:
    step = args.grid_step or sc.output.get("grid_step", 0.01)
    sys_ = sc.system()
    res, _ = _simulate(sc, sys_, step)
    write_trajectory_csv(out / "x.csv", res.x, "x", step)
    write_trajectory_csv(out / "y.csv", res.y, "y", step)
    write_impulse_csv(out / "x_impulses.csv", res.x)
    write_impulse_csv(out / "y_impulses.csv", res.y)
    plotting.plot_states(out / "x.png", res.x, step=step, title=f"{sc.name}: state")
    print(f"simulated [{sys_.times[0]}, {sys_.times[-1]}); files in {out}")
    return EXIT_OK


def cmd_detect(sc: Scenario, out: Path, args) -> int:
    sys_ = sc.system()
    cache = ModeDataCache()
    alpha_hat = sc.observer.get("alpha_hat", 0.7)
    rows, ok = [], True
    print(f"{'window':>8} {'t_p':>8} {'t_q':>8} {'alpha':>12} {'Mconst':>12} {'c':>12} {'eps_max':>12}")
    for i, (p, q) in enumerate(sc.windows(sys_)):
        wd = build_window(make_window(sys_, p, q, cache))
        cert = detect_certificate(wd)
        eps_max = (alpha_hat - cert.alpha) / wd.c if wd.c > 0 else float("inf")
        if cert.alpha >= alpha_hat:
            eps_max = float("nan")
        ok = ok and cert.detectable
        rows.append([i, p, q, float(sys_.times[p]), float(sys_.times[q]), cert.alpha, cert.Mconst,
                     wd.c, eps_max, int(cert.detectable)])
        print(f"{i:>8} {sys_.times[p]:>8.4g} {sys_.times[q]:>8.4g} {cert.alpha:>12.4f} "
              f"{cert.Mconst:>12.4f} {wd.c:>12.4f} {eps_max:>12.4g}")
    write_rows(out / "detect.csv",
               ["window", "p", "q", "t_p", "t_q", "alpha", "Mconst", "c", "eps_max", "detectable"], rows)
    if not ok:
        print("certificate failure: some window has alpha >= 1", file=_sys.stderr)
        return EXIT_CERT
    return EXIT_OK


def cmd_observe(sc: Scenario, out: Path, args) -> int:
    step = args.grid_step or sc.output.get("grid_step", 0.01)
    sys_ = sc.system()
    res, u = _simulate(sc, sys_, step)
    cfg = sc.observer_config(sys_)
    x0 = np.asarray(sc.data["x0"], dtype=float)
    try:
        r = run(sys_, u, res.y, cfg, truth=res.x, x0=x0, grid_step=step)
    except (CertificateError, BudgetError, GainDesignError) as exc:
        print(f"certificate failure: {exc}", file=_sys.stderr)
        return EXIT_CERT
    t_end = r.xhat.end
    truth = res.x.restrict(r.xhat.start, t_end)
    write_trajectory_csv(out / "x.csv", truth, "x", step)
    write_trajectory_csv(out / "xhat.csv", r.xhat, "xhat", step)
    write_impulse_csv(out / "xhat_impulses.csv", r.xhat)
    write_rows(out / "corrections.csv", ["t", "xi_norm", "xi_left_norm"],
               [[c.t, float(np.linalg.norm(c.xi)), float(np.linalg.norm(c.xi_left))] for c in r.corrections])
    write_rows(out / "errors.csv", ["t", "error"], [[t, e] for t, e in r.error_log])
    plotting.plot_states(out / "observe.png", truth, r.xhat, step=step, title=f"{sc.name}: x and estimate")
    plotting.plot_errors(out / "errors.png", [t for t, _ in r.error_log], r.errors(), cfg.alpha_hat,
                         title=f"{sc.name}: error at window ends")
    e = r.errors()
    print(f"{len(r.corrections)} corrections; error {e[0]:.4g} -> {e[-1]:.4g}; files in {out}")
    return EXIT_OK


COMMANDS = {"analyze": cmd_analyze, "simulate": cmd_simulate, "detect": cmd_detect, "observe": cmd_observe}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="swdae", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("scenario", help="scenario JSON file or bundled name (example1, example2)")
    ap.add_argument("--out-dir", help="directory for CSV/PNG output")
    ap.add_argument("--grid-step", type=float, help="time step of the CSV grid")
    ap.add_argument("--seed", type=int, help="noise seed (overrides the scenario)")
    ap.add_argument("--horizon", type=int, help="number of periods for periodic scenarios")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def out_dir(args, sc: Scenario) -> Path:
    d = args.out_dir or sc.output.get("directory") or os.environ.get(ENV_OUT_DIR) or DEFAULT_OUT_DIR
    p = Path(d)
    p.mkdir(parents=True, exist_ok=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        sc = load_scenario(args.scenario)
        if args.horizon is not None:
            sc = sc.with_repeats(args.horizon)
        if args.seed is not None:
            sc = sc.with_seed(args.seed)
    except (ScenarioError, ConfigError) as exc:
        violations = getattr(exc, "violations", [("$", str(exc))])
        for path, msg in violations:
            print(f"scenario error at {path}: {msg}", file=_sys.stderr)
        return EXIT_SCHEMA
    return COMMANDS[args.command](sc, out_dir(args, sc), args)


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
