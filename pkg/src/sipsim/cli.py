"""Command-line front end.

Four subcommands:

  simulate   particle system trajectories -> events.jsonl + summary.json
  cbm        coalescing circle diffusions -> paths.jsonl + summary.json
  bd-exact   absorbed chain closed forms  -> JSON on stdout
  verify     named check suite            -> report.json + checks.csv

Configuration is a single JSON document (--config); a few flags override
individual fields, and SIPSIM_OUT overrides the output directory. Every
emitted file is deterministic for a fixed configuration: reports carry no
timestamps and all keys are sorted, so re-running a config reproduces the
bytes. Report paths also render PNG figures next to the delimited output
unless --no-figures is given; figure rendering is best effort.

Exit codes: 0 pass, 1 verification check failed, 2 bad configuration or
insufficient data, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import bdchain, cbm, verify as verify_mod
from .condensate import (
    AtypicalJump,
    LabeledState,
    TraceAccumulator,
    classify,
    label_update,
)
from .engine import replica_rng, run as engine_run
from .model import Configuration, ModelParams

SCHEMA_DIR = Path(__file__).parent / "schemas"

_D_RULE = re.compile(
    r"^\s*(?P<c>[0-9.eE+-]+)\s*\*\s*N\^\{?(?P<alpha>-?[0-9.]+)\}?\s*$"
)


class ConfigError(ValueError):
    pass


def _load_schema(name: str) -> dict:
    with open(SCHEMA_DIR / f"{name}.json") as fh:
        return json.load(fh)


def validate_against(name: str, obj: dict) -> None:
    """Validate obj against a shipped schema; raises jsonschema errors."""
    import jsonschema

    jsonschema.validate(obj, _load_schema(name))


def resolve_d_N(raw, N: int) -> tuple[float, Optional[str]]:
    """Accept a positive number or a rule string like '0.5*N^-3'."""
    if isinstance(raw, (int, float)) and not isinstance(raw, bool):
        val = float(raw)
        if not val > 0:
            raise ConfigError(f"d_N must be positive, got {val}")
        return val, None
    if isinstance(raw, str):
        m = _D_RULE.match(raw)
        if not m:
            raise ConfigError(
                f"d_N rule {raw!r} not understood; expected 'c*N^alpha', "
                f"e.g. '0.5*N^-3'"
            )
        c = float(m.group("c"))
        alpha = float(m.group("alpha"))
        val = c * float(N) ** alpha
        if not val > 0:
            raise ConfigError(f"d_N rule {raw!r} gives non-positive {val}")
        return val, raw
    raise ConfigError(f"d_N must be a number or rule string, got {type(raw).__name__}")


@dataclass
class RunConfig:
    N: int
    L: int
    d_N: float
    k: int
    condensates: list
    t_end: float
    master_seed: int
    replicas: int
    out_dir: str
    record_events: bool = False
    figures: bool = True
    d_N_rule: Optional[str] = None
    probe_times: list = field(default_factory=list)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        try:
            N = int(raw["N"])
            L = int(raw["L"])
            k = int(raw.get("k", 1))
            condensates = [
                (int(site), int(mass)) for site, mass in raw["condensates"]
            ]
        except KeyError as exc:
            raise ConfigError(f"missing config field: {exc.args[0]}")
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"malformed config field: {exc}")
        if N < 1 or L < 2:
            raise ConfigError(f"need N >= 1 and L >= 2, got N={N}, L={L}")
        if k < 1:
            raise ConfigError(f"k must be >= 1, got {k}")
        d_N, rule = resolve_d_N(raw.get("d_N", 1e-6), N)
        cfg = cls(
            N=N,
            L=L,
            d_N=d_N,
            k=k,
            condensates=condensates,
            t_end=float(raw.get("t_end", 1.0)),
            master_seed=int(raw.get("master_seed", verify_mod.DEFAULT_SEED)),
            replicas=int(raw.get("replicas", 1)),
            out_dir=str(raw.get("out_dir", "sipsim_out")),
            record_events=bool(raw.get("record_events", False)),
            figures=bool(raw.get("figures", True)),
            d_N_rule=rule,
            probe_times=[float(t) for t in raw.get("probe_times", [])],
        )
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.t_end < 0:
            raise ConfigError(f"t_end must be >= 0, got {self.t_end}")
        if self.replicas < 1:
            raise ConfigError(f"replicas must be >= 1, got {self.replicas}")
        sites = [s for s, _ in self.condensates]
        masses = [m for _, m in self.condensates]
        if len(self.condensates) != self.k:
            raise ConfigError(
                f"need exactly k={self.k} condensates to label the piles, "
                f"got {len(self.condensates)}"
            )
        if len(set(sites)) != len(sites):
            raise ConfigError(f"condensate sites must be distinct, got {sites}")
        for s in sites:
            if not 0 <= s < self.L:
                raise ConfigError(f"site {s} outside the torus [0, {self.L})")
        for m in masses:
            if m < 1:
                raise ConfigError(f"condensate masses must be >= 1, got {m}")
        if sum(masses) != self.N:
            raise ConfigError(
                f"condensate masses sum to {sum(masses)}, expected N={self.N}"
            )
        ordered = sorted(sites)
        for i, x in enumerate(ordered):
            y = ordered[(i + 1) % len(ordered)]
            gap = (y - x) % self.L if len(ordered) > 1 else self.L
            if len(ordered) > 1 and gap < 2:
                raise ConfigError(
                    f"condensates at sites {x} and {y} sit at circular "
                    f"distance {gap}; the isolation constraint requires "
                    f"pairwise distance >= 2"
                )

    def resolved(self) -> dict:
        out = {
            "schema": "sipsim/config.v1",
            "N": self.N,
            "L": self.L,
            "d_N": self.d_N,
            "k": self.k,
            "condensates": [[s, m] for s, m in self.condensates],
            "t_end": self.t_end,
            "master_seed": self.master_seed,
            "replicas": self.replicas,
            "out_dir": self.out_dir,
            "record_events": self.record_events,
            "figures": self.figures,
            "probe_times": self.probe_times,
        }
        if self.d_N_rule:
            out["d_N_rule"] = self.d_N_rule
        return out


def _read_config_file(path: str) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    # accept a previous summary.json: its resolved config round-trips
    if "config" in raw and str(raw.get("schema", "")).startswith("sipsim/"):
        inner = raw["config"]
        if not isinstance(inner, dict):
            raise ConfigError("summary 'config' field must be an object")
        return inner
    return raw


def _apply_overrides(raw: dict, args) -> dict:
    out = dict(raw)
    if getattr(args, "seed", None) is not None:
        out["master_seed"] = args.seed
    if getattr(args, "out", None) is not None:
        out["out_dir"] = args.out
    elif os.environ.get("SIPSIM_OUT"):
        out["out_dir"] = os.environ["SIPSIM_OUT"]
    if getattr(args, "record_events", False):
        out["record_events"] = True
    if getattr(args, "no_figures", False):
        out["figures"] = False
    return out


def _dump_json(obj: dict, path: Path) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _jsonl_line(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"


def _render(report: dict, out_dir: Path, enabled: bool) -> dict:
    """Best-effort figure rendering; returns {name: filename} written."""
    if not enabled:
        return {}
    try:
        from . import figures

        written = figures.render_suite_figures(report, out_dir)
        return {p.stem: p.name for p in written}
    except Exception as exc:  # noqa: BLE001
        print(f"warning: figure rendering failed: {exc}", file=sys.stderr)
        return {}


# ---------------------------------------------------------------------------
# simulate


def _simulate_replica(cfg: RunConfig, r: int) -> tuple[list, list, dict]:
    params = ModelParams(N=cfg.N, L=cfg.L, d_N=cfg.d_N, k=cfg.k)
    eta0 = Configuration.from_sites(cfg.L, cfg.condensates)
    view0 = classify(params, eta0)
    if view0 is None:
        raise ConfigError("initial condensates are not a condensed state")
    labeled = LabeledState.from_view(view0, cfg.k)

    raw_events: list = []
    acc = TraceAccumulator(params, eta0)

    def collect(t, event, eta):
        raw_events.append((t, event.src, event.dst))

    observers = (acc, collect) if cfg.record_events else (acc,)
    rng = replica_rng(cfg.master_seed, r)
    result = engine_run(params, eta0, cfg.t_end, rng, observers)
    clock = acc.finish(cfg.t_end)

    trace_lines = []
    state = labeled
    atypical_t = None
    for entry in acc.entries:
        if not entry.changed:
            continue
        if atypical_t is None:
            jump = label_update(params, state, entry.view)
            if isinstance(jump, AtypicalJump):
                atypical_t = entry.t_trace
                kind = "atypical"
            else:
                state = jump.state
                kind = jump.kind
        else:
            kind = "post-atypical"
        trace_lines.append(
            {
                "t_trace": entry.t_trace,
                "positions": list(entry.view.positions),
                "masses": list(entry.view.masses),
                "kind": kind,
                "replica": r,
            }
        )

    final_view = classify(params, result.final)
    rep_summary = {
        "replica": r,
        "t_end": result.t,
        "t_trace_end": clock.t_in_E,
        "n_events": result.n_events,
        "n_trace_events": len(trace_lines),
        "atypical": atypical_t is not None,
        "atypical_t": atypical_t,
        "final_condensed": final_view is not None,
        "final_positions": list(final_view.positions) if final_view else [],
        "final_masses": list(final_view.masses) if final_view else [],
    }
    raw_lines = [
        {"t": t, "from": src, "to": dst, "replica": r}
        for t, src, dst in raw_events
    ]
    return raw_lines, trace_lines, rep_summary


def cmd_simulate(args) -> int:
    cfg = RunConfig.from_dict(_apply_overrides(_read_config_file(args.config), args))
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    all_lines = []
    replica_summaries = []
    first_trace = None
    checked = {"raw": False, "trace": False}
    for r in range(cfg.replicas):
        raw_lines, trace_lines, rep = _simulate_replica(cfg, r)
        if raw_lines and not checked["raw"]:
            validate_against("raw_event.v1", raw_lines[0])
            checked["raw"] = True
        if trace_lines and not checked["trace"]:
            validate_against("trace_event.v1", trace_lines[0])
            checked["trace"] = True
        for line in raw_lines:
            all_lines.append(_jsonl_line(line))
        for line in trace_lines:
            all_lines.append(_jsonl_line(line))
        if first_trace is None and trace_lines:
            first_trace = trace_lines
        replica_summaries.append(rep)

    events_path = out_dir / "events.jsonl"
    events_path.write_text("".join(all_lines))

    summary = {
        "schema": "sipsim/summary.v1",
        "config": cfg.resolved(),
        "replicas": replica_summaries,
        "files": {"events": "events.jsonl"},
    }
    figure_files = {}
    if cfg.figures and first_trace:
        try:
            from . import figures

            fig_path = out_dir / "trace.png"
            figures.plot_trace_trajectory(first_trace, cfg.L, fig_path)
            figure_files["trace"] = fig_path.name
        except Exception as exc:  # noqa: BLE001
            print(f"warning: figure rendering failed: {exc}", file=sys.stderr)
    if figure_files:
        summary["files"].update(figure_files)
    validate_against("summary.v1", summary)
    _dump_json(summary, out_dir / "summary.json")
    print(f"wrote {events_path} and {out_dir / 'summary.json'}")
    return 0


# ---------------------------------------------------------------------------
# cbm


def _cbm_config(raw: dict) -> dict:
    k = int(raw.get("k", 2))
    u0 = raw.get("u0")
    if u0 is None:
        raise ConfigError("missing config field: u0")
    u0 = [float(x) for x in u0]
    if len(u0) != k:
        raise ConfigError(f"u0 must have k={k} entries, got {len(u0)}")
    for x in u0:
        if not 0.0 <= x < 1.0:
            raise ConfigError(f"u0 entries must lie in [0,1), got {x}")
    if k > 1 and len(set(u0)) != len(u0):
        raise ConfigError("u0 entries must be distinct")
    cfg = {
        "schema": "sipsim/config.v1",
        "k": k,
        "u0": u0,
        "rho": float(raw.get("rho", 1.0)),
        "dt": float(raw.get("dt", 1e-4)),
        "t_end": float(raw.get("t_end", 1.0)),
        "n_paths": int(raw.get("n_paths", 100)),
        "record_paths": int(raw.get("record_paths", 20)),
        "record_stride": int(raw.get("record_stride", 100)),
        "master_seed": int(raw.get("master_seed", verify_mod.DEFAULT_SEED)),
        "out_dir": str(raw.get("out_dir", "sipsim_out")),
        "figures": bool(raw.get("figures", True)),
    }
    if cfg["rho"] <= 0 or cfg["dt"] <= 0 or cfg["t_end"] <= 0:
        raise ConfigError("rho, dt and t_end must all be positive")
    if cfg["n_paths"] < 1:
        raise ConfigError(f"n_paths must be >= 1, got {cfg['n_paths']}")
    return cfg


def cmd_cbm(args) -> int:
    cfg = _cbm_config(_apply_overrides(_read_config_file(args.config), args))
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    params = cbm.CBMParams(k=cfg["k"], rho=cfg["rho"], dt=cfg["dt"])
    u0 = tuple(cfg["u0"])

    n_rec = min(cfg["n_paths"], cfg["record_paths"])
    lines = []
    recorded_taus = []
    for p in range(n_rec):
        rng = replica_rng(cfg["master_seed"], p)
        path = cbm.sample_path(
            params, u0, cfg["t_end"], rng, record_stride=cfg["record_stride"]
        )
        recorded_taus.extend(path.coalescence_times)
        line = {
            "path": p,
            "times": [float(t) for t in path.frame_times],
            "positions": [[float(x) for x in fr] for fr in path.frame_positions],
            "coalescence_times": [float(t) for t in path.coalescence_times],
            "final_clusters": len(set(path.final.cluster_of)),
        }
        if p == 0:
            validate_against("cbm_path.v1", line)
        lines.append(_jsonl_line(line))
    paths_path = out_dir / "paths.jsonl"
    paths_path.write_text("".join(lines))

    # coalescence summary across all n_paths
    if cfg["k"] == 1:
        coalescence = {"n_events": 0, "mean_first": None,
                       "stderr_first": None, "censored": 0}
    elif cfg["k"] == 2:
        rng = replica_rng(cfg["master_seed"], verify_mod.CBM_STREAM)
        ens = cbm.sample_pair_ensemble(
            cfg["rho"], (u0[0], u0[1]), cfg["dt"], cfg["n_paths"], rng,
            cfg["t_end"],
        )
        done = ~ens.censored
        n_done = int(done.sum())
        coalescence = {
            "n_events": n_done,
            "mean_first": float(ens.tau[done].mean()) if n_done else None,
            "stderr_first": (
                float(ens.tau[done].std(ddof=1) / math.sqrt(n_done))
                if n_done > 1
                else None
            ),
            "censored": int(ens.censored.sum()),
        }
    else:
        taus = []
        censored = 0
        for p in range(cfg["n_paths"]):
            rng = replica_rng(cfg["master_seed"], p)
            path = cbm.sample_path(params, u0, cfg["t_end"], rng,
                                   record_stride=0)
            if path.coalescence_times:
                taus.append(path.coalescence_times[0])
            else:
                censored += 1
        coalescence = {
            "n_events": len(taus),
            "mean_first": float(np.mean(taus)) if taus else None,
            "stderr_first": (
                float(np.std(taus, ddof=1) / math.sqrt(len(taus)))
                if len(taus) > 1
                else None
            ),
            "censored": censored,
        }

    summary = {
        "schema": "sipsim/cbm_summary.v1",
        "config": cfg,
        "n_paths": cfg["n_paths"],
        "coalescence": coalescence,
        "files": {"paths": "paths.jsonl"},
    }
    if cfg["figures"] and n_rec:
        try:
            from . import figures

            first = json.loads(lines[0])
            fig_path = out_dir / "paths.png"
            figures.plot_cbm_paths(
                np.array(first["times"]), np.array(first["positions"]), fig_path
            )
            summary["files"]["figure"] = fig_path.name
        except Exception as exc:  # noqa: BLE001
            print(f"warning: figure rendering failed: {exc}", file=sys.stderr)
    validate_against("cbm_summary.v1", summary)
    _dump_json(summary, out_dir / "summary.json")
    print(f"wrote {paths_path} and {out_dir / 'summary.json'}")
    return 0


# ---------------------------------------------------------------------------
# bd-exact


def cmd_bd_exact(args) -> int:
    try:
        spec = bdchain.BDSpec(M=args.M, theta=args.theta, d=args.d,
                              variant=args.variant)
        if not 0 <= args.i <= spec.M:
            raise bdchain.OutOfRangeError(
                f"i must lie in [0, {spec.M}], got {args.i}"
            )
        p = bdchain.absorb_prob(spec, args.i)
        eh = bdchain.expected_hitting(spec, args.i)
        bounds = bdchain.bounds_check(spec)
    except (ValueError, bdchain.OutOfRangeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = {
        "M": spec.M,
        "theta": spec.theta,
        "d": spec.d,
        "variant": spec.variant,
        "i": args.i,
        "p": p,
        "EH": eh,
        "bounds": {
            "p1_lower": bounds["p1_lower"],
            "p1_upper": bounds["p1_upper"],
            "eh1_upper": bounds["eh1_bound"],
        },
    }
    print(json.dumps(out, sort_keys=True, indent=2))
    return 0


# ---------------------------------------------------------------------------
# verify


def _write_checks_csv(report: dict, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "value", "threshold", "comparison", "pass", "seed"])
        for ch in report.get("checks", []):
            writer.writerow(
                [
                    ch.get("name"),
                    ch.get("value"),
                    ch.get("threshold"),
                    ch.get("comparison", "<="),
                    ch.get("pass"),
                    ch.get("seed"),
                ]
            )


def cmd_verify(args) -> int:
    raw = _read_config_file(args.config) if args.config else {}
    raw = _apply_overrides(raw, args)
    which = args.which or raw.get("which")
    if not which:
        print("error: no suite selected (use --which)", file=sys.stderr)
        return 2
    if which not in verify_mod.SUITES:
        print(
            f"error: unknown suite {which!r}; choose from "
            f"{sorted(verify_mod.SUITES)}",
            file=sys.stderr,
        )
        return 2
    suite_cfg = dict(raw.get("suite", {}))
    if "master_seed" in raw:
        suite_cfg.setdefault("master_seed", int(raw["master_seed"]))
    out_dir = Path(raw.get("out_dir", "sipsim_out"))
    figures_on = bool(raw.get("figures", True))

    try:
        report = verify_mod.run_suite(which, suite_cfg)
    except verify_mod.InsufficientDataError as exc:
        print(f"error: InsufficientData: {exc}", file=sys.stderr)
        return 2
    except (ValueError, verify_mod.EmptySampleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    report["schema"] = "sipsim/report.v1"
    out_dir.mkdir(parents=True, exist_ok=True)
    validate_against("report.v1", report)
    figure_files = _render(report, out_dir, figures_on)
    if figure_files:
        report["files"] = figure_files
    _dump_json(report, out_dir / "report.json")
    _write_checks_csv(report, out_dir / "checks.csv")

    for ch in report.get("checks", []):
        status = "PASS" if ch["pass"] else "FAIL"
        print(f"[{status}] {ch['name']}: value={ch['value']} "
              f"threshold={ch['threshold']}")
    overall = bool(report.get("pass"))
    print(f"suite {which}: {'PASS' if overall else 'FAIL'} "
          f"(report: {out_dir / 'report.json'})")
    return 0 if overall else 1


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sipsim",
        description="Condensing particle system toolkit: simulate, sample "
        "circle diffusions, evaluate absorbed chains, run check suites.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run particle trajectories")
    p_sim.add_argument("--config", required=True, help="JSON config file")
    p_sim.add_argument("--seed", type=int, help="override master_seed")
    p_sim.add_argument("--out", help="override output directory")
    p_sim.add_argument("--record-events", action="store_true",
                       help="also write raw jump events (large)")
    p_sim.add_argument("--no-figures", action="store_true")
    p_sim.set_defaults(func=cmd_simulate)

    p_cbm = sub.add_parser("cbm", help="sample coalescing circle diffusions")
    p_cbm.add_argument("--config", required=True, help="JSON config file")
    p_cbm.add_argument("--seed", type=int, help="override master_seed")
    p_cbm.add_argument("--out", help="override output directory")
    p_cbm.add_argument("--no-figures", action="store_true")
    p_cbm.set_defaults(func=cmd_cbm)

    p_bd = sub.add_parser("bd-exact", help="absorbed chain closed forms")
    p_bd.add_argument("--M", type=int, required=True)
    p_bd.add_argument("--theta", type=float, default=1.0)
    p_bd.add_argument("--d", type=float, required=True)
    p_bd.add_argument("--variant", choices=["inner", "edge"], required=True)
    p_bd.add_argument("--i", type=int, required=True)
    p_bd.set_defaults(func=cmd_bd_exact)

    p_ver = sub.add_parser("verify", help="run a named check suite")
    p_ver.add_argument("--which", choices=sorted(verify_mod.SUITES),
                       help="suite to run")
    p_ver.add_argument("--config", help="JSON config file with overrides")
    p_ver.add_argument("--seed", type=int, help="override master_seed")
    p_ver.add_argument("--out", help="override output directory")
    p_ver.add_argument("--no-figures", action="store_true")
    p_ver.set_defaults(func=cmd_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
