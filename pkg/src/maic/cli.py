"""Command-line interface: `fit`, `compare`, `negcontrol`, and `simulate`.

Every command writes its artifacts (JSON reports, CSV tables) plus a run
manifest into the directory named by --out, so a run can be audited and
reproduced later.  Exit codes: 0 on success, 1 on input or schema errors,
2 on numerical failure (weight non-convergence or separation).
"""

from __future__ import annotations

import argparse
import csv
import datetime
import hashlib
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from .data_model import MomentSpec, OutcomeKind, load_agd, load_ipd, pooled_target_moments
from .errors import MaicError, NonConvergence, SeparationError
from .estimators import Method, Scale
from .inference import build_comparison_report, negative_control_test
from .simulation import ScenarioConfig, run_study
from .variance import SeStrategy
from .weighting import SolverConfig, balance_check, overlap_diagnostics, solve_weights

_VERSION = "0.1.0"


def _round_trip_floats(obj):
    """Pass floats through 17-significant-digit formatting so serialized
    numbers identify their doubles exactly (bit-stable round trips)."""
    if isinstance(obj, float):
        return float(format(obj, ".17g"))
    if isinstance(obj, dict):
        return {k: _round_trip_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_trip_floats(v) for v in obj]
    return obj


def write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_round_trip_floats(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass(frozen=True)
class RunManifest:
    command: str
    config: dict
    input_digests: dict[str, str]
    version: str
    seed: int | None
    timestamp: str

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "config": self.config,
            "input_digests": self.input_digests,
            "version": self.version,
            "seed": self.seed,
            "timestamp": self.timestamp,
        }


def write_manifest(out_dir: Path, command: str, config: dict, inputs: list, seed=None) -> None:
    manifest = RunManifest(
        command=command,
        config=config,
        input_digests={str(p): _sha256(p) for p in inputs},
        version=_VERSION,
        seed=seed,
        timestamp=datetime.datetime.now(datetime.timezone.utc).isoformat(),
    )
    write_json(out_dir / "manifest.json", manifest.to_dict())


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_pair(args):
    ipd = load_ipd(args.ipd, outcome_kind=OutcomeKind(args.outcome_kind))
    agd = load_agd(args.agd)
    agd.check_alignment(ipd)
    return ipd, agd


def cmd_fit(args) -> int:
    out = _out_dir(args)
    ipd, agd = _load_pair(args)
    spec = MomentSpec(args.moments)
    target = pooled_target_moments(agd, spec)
    model = solve_weights(ipd, target, spec, SolverConfig())

    residual, max_norm = balance_check(model, ipd, target)
    overlap = overlap_diagnostics(model, ipd)
    doc = model.to_dict()
    doc["diagnostics"] = {
        "balance_residual": residual.tolist(),
        "balance_max_norm": max_norm,
        "low_ess_arms": overlap.low_ess_arms,
        "max_weight_share": overlap.max_weight_share,
        "largest_weights": overlap.largest_weights,
    }
    write_json(out / "model.json", doc)
    with open(out / "weights.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "arm", "weight"])
        for i, (z, w) in enumerate(zip(ipd.z, model.weights)):
            writer.writerow([i, int(z), repr(float(w))])
    write_manifest(out, "fit", {"moments": spec.value, "outcome_kind": args.outcome_kind},
                   [args.ipd, args.agd])
    return 0


def _parse_methods(text: str) -> list[Method]:
    return [Method(tok.strip()) for tok in text.split(",") if tok.strip()]


def _parse_strategies(text: str) -> list[SeStrategy]:
    if text.strip() == "all":
        return [SeStrategy.FO, SeStrategy.PO, SeStrategy.CS, SeStrategy.SW]
    return [SeStrategy(tok.strip()) for tok in text.split(",") if tok.strip()]


def cmd_compare(args) -> int:
    out = _out_dir(args)
    ipd, agd = _load_pair(args)
    scale = Scale(args.scale)
    methods = _parse_methods(args.methods)
    strategies = _parse_strategies(args.se)
    spec = MomentSpec(args.moments)

    model = None
    if Method.MAIC_NAB in methods or Method.MAIC_ACB in methods:
        target = pooled_target_moments(agd, spec)
        model = solve_weights(ipd, target, spec, SolverConfig())
    report = build_comparison_report(
        ipd, agd, model, methods, scale, strategies, level=args.level,
        run_negative_control=args.negcontrol,
    )
    write_json(out / "report.json", report.to_dict())
    report.write_csv(out / "report.csv")
    write_manifest(out, "compare", {
        "methods": [m.value for m in methods],
        "se": [s.value for s in strategies],
        "scale": scale.value, "moments": spec.value, "level": args.level,
        "outcome_kind": args.outcome_kind,
    }, [args.ipd, args.agd])
    return 0


def cmd_negcontrol(args) -> int:
    out = _out_dir(args)
    ipd, agd = _load_pair(args)
    scale = Scale(args.scale)
    spec = MomentSpec(args.moments)
    target = pooled_target_moments(agd, spec)
    model = solve_weights(ipd, target, spec, SolverConfig())
    result = negative_control_test(ipd, agd, model, scale, alpha_level=args.alpha)
    write_json(out / "negcontrol.json", result.to_dict())
    write_manifest(out, "negcontrol", {
        "scale": scale.value, "moments": spec.value, "alpha": args.alpha,
        "outcome_kind": args.outcome_kind,
    }, [args.ipd, args.agd])
    return 0


def cmd_simulate(args) -> int:
    out = _out_dir(args)
    cfg = ScenarioConfig.from_json_file(args.config)
    if args.seed is not None:
        cfg = ScenarioConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    report = run_study(cfg, threads=args.threads)
    write_json(out / "report.json", report.to_dict())
    rows = report.tidy_rows()
    with open(out / "report.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    write_manifest(out, "simulate", cfg.to_dict(), [args.config], seed=cfg.seed)
    return 0


def _default_threads() -> int:
    env = os.environ.get("MAIC_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maic",
        description="Population-adjusted indirect comparisons from IPD and "
                    "aggregate trial data.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_io(p, need_pair=True):
        if need_pair:
            p.add_argument("--ipd", required=True, help="IPD trial CSV")
            p.add_argument("--agd", required=True, help="aggregate trial JSON")
            p.add_argument("--moments", choices=[s.value for s in MomentSpec],
                           default=MomentSpec.FIRST.value)
            p.add_argument("--outcome-kind", choices=[k.value for k in OutcomeKind],
                           default=OutcomeKind.BINARY.value)
        p.add_argument("--out", required=True, help="output directory")

    p_fit = sub.add_parser("fit", help="solve moment-matching weights")
    add_io(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_cmp = sub.add_parser("compare", help="run estimators with SEs and CIs")
    add_io(p_cmp)
    p_cmp.add_argument("--methods", default="maic-nab,maic-acb,bucher,stc,naive")
    p_cmp.add_argument("--scale", choices=[s.value for s in Scale],
                       default=Scale.IDENTITY.value)
    p_cmp.add_argument("--se", default="fo,po,cs,sw",
                       help="comma list of fo,po,cs,sw or 'all'")
    p_cmp.add_argument("--level", type=float, default=0.95)
    p_cmp.add_argument("--negcontrol", action="store_true",
                       help="also run the comparator-arm null check")
    p_cmp.set_defaults(func=cmd_compare)

    p_neg = sub.add_parser("negcontrol", help="comparator-arm null check")
    add_io(p_neg)
    p_neg.add_argument("--scale", choices=[s.value for s in Scale],
                       default=Scale.IDENTITY.value)
    p_neg.add_argument("--alpha", type=float, default=0.05)
    p_neg.set_defaults(func=cmd_negcontrol)

    p_sim = sub.add_parser("simulate", help="run a Monte Carlo study")
    p_sim.add_argument("--config", required=True, help="scenario JSON")
    p_sim.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
    p_sim.add_argument("--threads", type=int, default=_default_threads(),
                       help="worker processes (env MAIC_THREADS)")
    add_io(p_sim, need_pair=False)
    p_sim.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NonConvergence as e:
        print(f"error: {e}", file=sys.stderr)
        if e.residual is not None:
            print(f"balance residual: {list(e.residual)}", file=sys.stderr)
        return 2
    except SeparationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (MaicError, OSError, ValueError, KeyError, json.JSONDecodeError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
