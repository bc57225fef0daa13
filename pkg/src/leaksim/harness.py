"""Experiment orchestration: config handling, sharded execution, atomic output."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from . import __version__
from .analytics import AggregateStats, ShotStats, aggregate
from .decoder import build_detector_graph, decode_batch
from .frame import run_memory_experiment
from .layout import build_layout
from .noise import NoiseParams, Readout, RngStreams, TransportModel
from .policies import LRC_KINDS, POLICY_NAMES, make_policy
from .ququart import DmParams, rows_to_csv, run_stabilizer_study
from .svg import line_chart

BLOCK = 4096
READOUT_MODES = ("auto", "two-level", "multi-level")


class ConfigError(ValueError):
    """Invalid experiment configuration; raised before any simulation starts."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name
        self.message = message

    def to_dict(self) -> dict:
        return {"error": "config", "field": self.field, "message": self.message}


class RunError(RuntimeError):
    def __init__(self, message: str, config: Optional[dict] = None):
        super().__init__(message)
        self.config = config

    def to_dict(self) -> dict:
        out = {"error": "run", "message": str(self)}
        if self.config is not None:
            out["config"] = self.config
        return out


class OutputError(OSError):
    def __init__(self, path, cause: BaseException):
        super().__init__(f"{path}: {cause}")
        self.path = str(path)

    def to_dict(self) -> dict:
        return {"error": "io", "path": self.path, "message": str(self)}


@dataclass(frozen=True)
class ExperimentConfig:
    distance: int = 3
    physical_error_rate: float = 1e-3
    cycles: int = 1
    shots: int = 1000
    policy: str = "none"
    lrc_kind: str = "swap"
    transport_model: str = "sticky"
    readout_mode: str = "auto"
    seed: int = 0
    output_path: str = "results"
    emit_svg: bool = False
    leakage_enabled: bool = True
    workers: int = 1

    # Fields that do not influence any result byte.
    NON_RESULT_FIELDS = ("output_path", "emit_svg", "workers")

    @property
    def rounds(self) -> int:
        return self.cycles * self.distance

    @property
    def readout(self) -> Readout:
        if self.readout_mode == "auto":
            return Readout.MULTI_LEVEL if self.policy == "eraser-m" else Readout.TWO_LEVEL
        return Readout(self.readout_mode)

    def noise(self) -> NoiseParams:
        return NoiseParams.from_p(self.physical_error_rate, self.transport_model, self.leakage_enabled)

    def validate(self) -> "ExperimentConfig":
        def need(ok, name, msg):
            if not ok:
                raise ConfigError(name, msg)

        ints = ("distance", "cycles", "shots", "seed", "workers")
        for name in ints:
            v = getattr(self, name)
            need(isinstance(v, int) and not isinstance(v, bool), name, f"expected an integer, got {v!r}")
        need(self.distance >= 3 and self.distance % 2 == 1, "distance", "must be an odd integer >= 3")
        need(self.cycles >= 1, "cycles", "must be >= 1")
        need(self.shots >= 1, "shots", "must be >= 1")
        need(self.seed >= 0, "seed", "must be >= 0")
        need(self.workers >= 1, "workers", "must be >= 1")
        p = self.physical_error_rate
        need(isinstance(p, (int, float)) and not isinstance(p, bool), "physical_error_rate", "expected a number")
        need(0.0 <= p <= 0.1, "physical_error_rate", "must lie in [0, 0.1]")
        need(self.policy in POLICY_NAMES, "policy", f"expected one of {list(POLICY_NAMES)}")
        need(self.lrc_kind in LRC_KINDS, "lrc_kind", f"expected one of {list(LRC_KINDS)}")
        kinds = [t.value for t in TransportModel]
        need(self.transport_model in kinds, "transport_model", f"expected one of {kinds}")
        need(self.readout_mode in READOUT_MODES, "readout_mode", f"expected one of {list(READOUT_MODES)}")
        need(isinstance(self.emit_svg, bool), "emit_svg", "expected a boolean")
        need(isinstance(self.leakage_enabled, bool), "leakage_enabled", "expected a boolean")
        need(isinstance(self.output_path, str) and self.output_path != "", "output_path", "expected a non-empty path")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def result_dict(self) -> dict:
        d = self.to_dict()
        for k in self.NON_RESULT_FIELDS:
            d.pop(k)
        return d

    def content_hash(self) -> str:
        """Git-style blob hash of the canonical result-determining inputs."""
        payload = json.dumps({"config": self.result_dict(), "version": __version__}, sort_keys=True).encode()
        h = hashlib.sha256(b"blob %d\0" % len(payload))
        h.update(payload)
        return h.hexdigest()

    @classmethod
    def from_dict(cls, d: dict, **overrides) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        merged = dict(d)
        merged.update({k: v for k, v in overrides.items() if v is not None})
        unknown = sorted(set(merged) - known)
        if unknown:
            raise ConfigError(unknown[0], "unknown config field")
        return cls(**merged).validate()

    @classmethod
    def from_json(cls, text: str, **overrides) -> "ExperimentConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError("<root>", f"invalid JSON: {e}") from None
        return cls.from_dict(d, **overrides)


@dataclass
class RunManifest:
    config: dict
    content_hash: str
    outputs: Dict[str, str]
    wall_clock_s: float
    shots_per_s: float
    decoder_fallbacks: int
    fallback_rate: float
    blocks: int
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n"


# --- execution --------------------------------------------------------------------


@lru_cache(maxsize=8)
def _graph(distance: int, params: NoiseParams, rounds: int):
    return build_detector_graph(build_layout(distance), params, rounds)


def _blocks(shots: int) -> List[Tuple[int, int]]:
    return [(b, min(BLOCK, shots - b * BLOCK)) for b in range((shots + BLOCK - 1) // BLOCK)]


def run_block(cfg: ExperimentConfig, block: int, batch: int) -> ShotStats:
    """Simulate, decode and score one block of shots.  Pure in (cfg, block)."""
    layout = build_layout(cfg.distance)
    params = cfg.noise()
    policy = make_policy(cfg.policy, cfg.lrc_kind)
    res = run_memory_experiment(
        layout, params, policy, cfg.rounds, RngStreams(cfg.seed, block),
        batch=batch, readout=cfg.readout, keep_flags=False,
    )
    flips, _, fb = decode_batch(_graph(cfg.distance, params, cfg.rounds), res.events)
    errors = flips.astype(bool) != res.observed_flip
    return ShotStats.from_run(layout.n_qubits, errors, res.leak_trace.counts, res.audit, fb)


def _run_block_args(args):
    return run_block(*args)


def simulate(cfg: ExperimentConfig) -> AggregateStats:
    """Run all blocks of ``cfg`` and merge them in block order."""
    cfg.validate()
    jobs = [(cfg, b, n) for b, n in _blocks(cfg.shots)]
    try:
        if cfg.workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
                stats = list(pool.map(_run_block_args, jobs))
        else:
            stats = [run_block(*j) for j in jobs]
    except Exception as e:  # noqa: BLE001 - any worker failure aborts the run
        raise RunError(f"simulation failed: {type(e).__name__}: {e}", cfg.to_dict()) from e
    return aggregate(stats)


# --- output -------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _csv(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


LPR_HEADER = ("round", "lpr_mean", "lpr_ci_lo", "lpr_ci_hi")
SUMMARY_HEADER = (
    "distance", "p", "cycles", "rounds", "shots", "policy", "lrc_kind", "transport", "readout", "seed",
    "logical_errors", "ler", "ler_ci_lo", "ler_ci_hi", "accuracy", "fpr", "fnr", "lrcs_per_round",
    "decoder_fallbacks",
)


def lpr_csv(stats: AggregateStats) -> str:
    lo, hi = stats.lpr_ci()
    mean = stats.lpr_by_round
    return _csv(LPR_HEADER, [(r, float(mean[r]), float(lo[r]), float(hi[r])) for r in range(stats.rounds)])


def summary_row(cfg: ExperimentConfig, stats: AggregateStats) -> list:
    s = stats.summary()
    return [
        cfg.distance, float(cfg.physical_error_rate), cfg.cycles, cfg.rounds, s["shots"], cfg.policy,
        cfg.lrc_kind, cfg.transport_model, cfg.readout.value, cfg.seed, s["logical_errors"], s["ler"],
        s["ler_ci_lo"], s["ler_ci_hi"], s["accuracy"], s["fpr"], s["fnr"], s["lrcs_per_round"],
        s["decoder_fallbacks"],
    ]


def summary_csv(cfg: ExperimentConfig, stats: AggregateStats) -> str:
    return _csv(SUMMARY_HEADER, [summary_row(cfg, stats)])


def write_outputs(out_dir, files: Dict[str, str]) -> Dict[str, str]:
    """Write every file to a temp name first, then move all into place.

    If anything fails, temp files are removed and any file already moved in
    this call is deleted, so the final paths never hold a partial result set.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OutputError(out, e) from e
    temps: Dict[str, str] = {}
    placed: List[Path] = []
    try:
        for name, text in files.items():
            fd, tmp = tempfile.mkstemp(prefix=f".{name}.", suffix=".tmp", dir=out)
            temps[name] = tmp
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(text)
        for name, tmp in temps.items():
            dest = out / name
            os.replace(tmp, dest)
            placed.append(dest)
    except OSError as e:
        for tmp in temps.values():
            if os.path.exists(tmp):
                os.unlink(tmp)
        for p in placed:
            p.unlink(missing_ok=True)
        raise OutputError(out, e) from e
    return {name: str(out / name) for name in files}


def run_experiment(cfg: ExperimentConfig) -> Tuple[AggregateStats, RunManifest]:
    cfg.validate()
    t0 = time.perf_counter()
    stats = simulate(cfg)
    files = {"lpr.csv": lpr_csv(stats), "summary.csv": summary_csv(cfg, stats)}
    if cfg.emit_svg:
        rs = list(range(stats.rounds))
        files["lpr.svg"] = line_chart(
            {cfg.policy: (rs, stats.lpr_by_round)},
            title=f"LPR, d={cfg.distance}, p={cfg.physical_error_rate:g}",
            xlabel="round", ylabel="LPR", log_y=True,
        )
    wall = time.perf_counter() - t0
    out = Path(cfg.output_path)
    manifest = RunManifest(
        config=cfg.to_dict(),
        content_hash=cfg.content_hash(),
        outputs={name: str(out / name) for name in list(files) + ["manifest.json"]},
        wall_clock_s=wall,
        shots_per_s=cfg.shots / wall if wall > 0 else float("inf"),
        decoder_fallbacks=stats.decoder_fallbacks,
        fallback_rate=stats.fallback_rate,
        blocks=len(_blocks(cfg.shots)),
    )
    files["manifest.json"] = manifest.to_json()
    write_outputs(out, files)
    return stats, manifest


# --- sweeps ----------------------------------------------------------------------------

SWEEP_HEADER = ("index", "distance", "p", "cycles", "shots", "policy", "lrc_kind", "transport", "readout", "seed", "metric", "value")
SWEEP_METRICS = ("ler", "ler_ci_lo", "ler_ci_hi", "accuracy", "fpr", "fnr", "lrcs_per_round", "decoder_fallbacks")


@dataclass
class SweepReport:
    rows: List[list]
    stats: List[AggregateStats]
    manifests: List[RunManifest]
    outputs: Dict[str, str]

    def csv(self) -> str:
        return _csv(SWEEP_HEADER, self.rows)


def load_sweep(text: str, output_path: Optional[str] = None) -> Tuple[List[ExperimentConfig], str]:
    """Parse a sweep document.

    Accepts a JSON list of configs, or ``{"defaults": {...}, "configs": [...],
    "output_path": DIR}``.  Member output directories are ``DIR/run_NNN``.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError("<root>", f"invalid JSON: {e}") from None
    if isinstance(doc, list):
        defaults, members, out = {}, doc, None
    elif isinstance(doc, dict):
        defaults = doc.get("defaults", {})
        members = doc.get("configs")
        out = doc.get("output_path")
        extra = sorted(set(doc) - {"defaults", "configs", "output_path"})
        if extra:
            raise ConfigError(extra[0], "unknown sweep field")
    else:
        raise ConfigError("<root>", "sweep must be a list or an object")
    if not isinstance(members, list) or not members:
        raise ConfigError("configs", "sweep needs a non-empty list of configs")
    out = output_path or out or "sweep"
    cfgs = []
    for i, m in enumerate(members):
        if not isinstance(m, dict):
            raise ConfigError(f"configs[{i}]", "expected an object")
        d = {**defaults, **m, "output_path": str(Path(out) / f"run_{i:03d}")}
        try:
            cfgs.append(ExperimentConfig.from_dict(d))
        except ConfigError as e:
            raise ConfigError(f"configs[{i}].{e.field}", e.message) from None
    return cfgs, out


def run_sweep(configs: Sequence[ExperimentConfig], output_path: str, emit_svg: Optional[bool] = None) -> SweepReport:
    if not configs:
        raise ConfigError("configs", "sweep needs a non-empty list of configs")
    for c in configs:
        c.validate()
    rows, stats, manifests = [], [], []
    for i, cfg in enumerate(configs):
        try:
            st, man = run_experiment(cfg)
        except Exception as e:  # noqa: BLE001
            raise RunError(f"sweep member {i} failed: {e}", cfg.to_dict()) from e
        stats.append(st)
        manifests.append(man)
        s = st.summary()
        key = [i, cfg.distance, float(cfg.physical_error_rate), cfg.cycles, cfg.shots, cfg.policy,
               cfg.lrc_kind, cfg.transport_model, cfg.readout.value, cfg.seed]
        rows.extend(key + [m, s[m]] for m in SWEEP_METRICS)
    files = {"sweep.csv": _csv(SWEEP_HEADER, rows)}
    if emit_svg if emit_svg is not None else any(c.emit_svg for c in configs):
        by_policy: Dict[str, List[Tuple[int, float]]] = {}
        for cfg, st in zip(configs, stats):
            by_policy.setdefault(f"{cfg.policy}/{cfg.lrc_kind}", []).append((cfg.distance, st.ler))
        ler_series = {k: ([d for d, _ in sorted(v)], [l for _, l in sorted(v)]) for k, v in by_policy.items()}
        files["ler_vs_distance.svg"] = line_chart(ler_series, title="LER vs code distance", xlabel="distance", ylabel="LER", log_y=True)
        lpr_series = {
            f"{i}:{c.policy} d={c.distance}": (list(range(s.rounds)), s.lpr_by_round)
            for i, (c, s) in enumerate(zip(configs, stats))
        }
        files["lpr_vs_round.svg"] = line_chart(lpr_series, title="LPR vs round", xlabel="round", ylabel="LPR", log_y=True)
    outputs = write_outputs(output_path, files)
    return SweepReport(rows=rows, stats=stats, manifests=manifests, outputs=outputs)


# --- density-matrix study ------------------------------------------------------------


def emit_dm_study(params: DmParams, output_path, emit_svg: bool = False) -> Dict[str, str]:
    rows = run_stabilizer_study(params)
    files = {"dm_study.csv": rows_to_csv(rows)}
    if emit_svg:
        steps = [r.step for r in rows]
        series = {f"q{i}": (steps, [r.leak[i] for r in rows]) for i in range(4)}
        series["P"] = (steps, [r.p_leak for r in rows])
        files["dm_leak.svg"] = line_chart(series, title="Leak population per qubit", xlabel="CNOT step", ylabel="population")
        files["dm_correct.svg"] = line_chart(
            {"P correct": (steps, [r.p_correct_outcome for r in rows])},
            title="Parity correct-outcome probability", xlabel="CNOT step", ylabel="probability",
        )
    return write_outputs(output_path, files)
