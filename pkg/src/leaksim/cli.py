"""Command-line entry point."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

from .analytics import ClosedFormInputs, eq1_data_leak_given_parity, eq2_parity_leak_given_data, eq3_invisible_probability
from .harness import ConfigError, ExperimentConfig, OutputError, RunError, emit_dm_study, load_sweep, run_experiment, run_sweep
from .noise import TransportModel
from .policies import LRC_KINDS, POLICY_NAMES
from .ququart import DmParams


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError("<args>", message)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="leaksim", description="Leakage-aware surface-code memory simulator.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sim = sub.add_parser("simulate", help="run one memory experiment")
    sim.add_argument("--config", help="flat JSON config file; flags override its fields")
    sim.add_argument("--distance", type=int)
    sim.add_argument("--p", type=float, dest="physical_error_rate")
    sim.add_argument("--cycles", type=int)
    sim.add_argument("--shots", type=int)
    sim.add_argument("--policy", choices=POLICY_NAMES)
    sim.add_argument("--lrc", choices=LRC_KINDS, dest="lrc_kind")
    sim.add_argument("--transport", choices=[t.value for t in TransportModel], dest="transport_model")
    sim.add_argument("--readout", choices=["auto", "two-level", "multi-level"], dest="readout_mode")
    sim.add_argument("--seed", type=int)
    sim.add_argument("--out", dest="output_path")
    sim.add_argument("--emit-svg", action="store_true", default=None, dest="emit_svg")
    sim.add_argument("--no-leakage", action="store_false", default=None, dest="leakage_enabled")
    sim.add_argument("--workers", type=int)

    sw = sub.add_parser("sweep", help="run a list of experiments")
    sw.add_argument("--config", required=True)
    sw.add_argument("--out")
    sw.add_argument("--emit-svg", action="store_true", default=None, dest="emit_svg")

    dm = sub.add_parser("dmstab", help="density-matrix study of one Z stabilizer")
    dm.add_argument("--out", required=True)
    dm.add_argument("--p-t", type=float, default=DmParams.p_t)
    dm.add_argument("--rx-angle", type=float, default=DmParams.rx_angle, help="radians")
    dm.add_argument("--p-ell", type=float, default=DmParams.p_ell)
    dm.add_argument("--q0-level", type=int, default=DmParams.q0_level, choices=[0, 1, 2, 3])
    dm.add_argument("--emit-svg", action="store_true")

    an = sub.add_parser("analytic", help="print closed-form leakage probabilities")
    an.add_argument("which", choices=["eq1", "eq2", "eq3"])
    an.add_argument("--r", type=int, default=None, help="round count for eq3 (all of 0..3 if omitted)")
    an.add_argument("--p-ell", type=float, default=1e-4)
    an.add_argument("--p-lt", type=float, default=0.1)
    return ap


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as e:
        raise OutputError(path, e) from e


def _simulate(a) -> dict:
    overrides = {k: getattr(a, k) for k in (
        "distance", "physical_error_rate", "cycles", "shots", "policy", "lrc_kind", "transport_model",
        "readout_mode", "seed", "output_path", "emit_svg", "leakage_enabled", "workers",
    )}
    base = _read(a.config) if a.config else "{}"
    cfg = ExperimentConfig.from_json(base, **overrides)
    stats, manifest = run_experiment(cfg)
    return {"summary": stats.summary(), "outputs": manifest.outputs, "content_hash": manifest.content_hash}


def _sweep(a) -> dict:
    cfgs, out = load_sweep(_read(a.config), a.out)
    rep = run_sweep(cfgs, out, a.emit_svg)
    return {"configs": len(cfgs), "outputs": rep.outputs}


def _dmstab(a) -> dict:
    try:
        params = DmParams(p_t=a.p_t, rx_angle=a.rx_angle, p_ell=a.p_ell, q0_level=a.q0_level)
    except ValueError as e:
        raise ConfigError("dm_params", str(e)) from None
    return {"outputs": emit_dm_study(params, a.out, a.emit_svg)}


def _analytic(a) -> dict:
    if a.which == "eq3":
        if a.r is not None and a.r < 0:
            raise ConfigError("r", "must be >= 0")
        rs = [a.r] if a.r is not None else [0, 1, 2, 3]
        return {"eq3": {str(r): eq3_invisible_probability(r) for r in rs}}
    try:
        inp = ClosedFormInputs(p_ell=a.p_ell, p_lt=a.p_lt)
    except ValueError as e:
        raise ConfigError("inputs", str(e)) from None
    fn = eq1_data_leak_given_parity if a.which == "eq1" else eq2_parity_leak_given_data
    return {a.which: fn(inp), "p_ell": inp.p_ell, "p_lt": inp.p_lt}


def main(argv: Optional[List[str]] = None) -> int:
    try:
        a = build_parser().parse_args(argv)
        handler = {"simulate": _simulate, "sweep": _sweep, "dmstab": _dmstab, "analytic": _analytic}[a.command]
        print(json.dumps(handler(a), sort_keys=True))
        return 0
    except (ConfigError, RunError, OutputError) as e:
        print(json.dumps(e.to_dict(), sort_keys=True), file=sys.stderr)
        return 2 if isinstance(e, ConfigError) else 1
    except Exception as e:  # noqa: BLE001
        print(json.dumps({"error": "internal", "message": f"{type(e).__name__}: {e}"}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
