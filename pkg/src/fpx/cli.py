"""Command-line entry point: ``fpx <subcommand>``.

Every subcommand that writes into ``--out`` also writes ``manifest.json``
with the fully resolved configuration; ``fpx rerun <manifest>`` replays it.
Settings resolve as CLI flag > ``--config`` file > built-in default.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .agents import Agent, AgentSpec, LatencyModel, LatencyQualityAgent, QualityMap, from_plan
from .arena import DuelConfig, run_ladder
from .hft import DayReport, HftConfig, ingest_csv, run_day
from .latency import estimate_fraction, load_cost_table, pareto_points
from .planner import LayerCalibration, assign, bitwidth_avg, calibrate, gamma_grid, sweep
from .scenarios import DEFAULT_MODEL, DEFAULT_P_FLOOR, DEFAULT_P_MAX, data_path, default_model
from .toymodel import LayerId, LayerKind, load_model, read_corpus, save_model

log = logging.getLogger("fpx")


class CliError(Exception):
    pass


# -- helpers ------------------------------------------------------------------

def _read_json(path, what: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise CliError(f"{what} not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise CliError(f"{what} {p} is not valid JSON: {exc}") from None


def _resolve(args: argparse.Namespace, keys: dict) -> dict:
    """Merge defaults < config file < explicit flags for ``keys``."""
    cfg = dict(keys)
    if getattr(args, "config", None):
        file_cfg = _read_json(args.config, "config file")
        cfg.update({k: v for k, v in file_cfg.items() if k in keys})
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    for k in ("model", "corpus", "cost_table", "market", "agents", "hft_config", "duel_config",
              "calibration"):
        if cfg.get(k):
            cfg[k] = str(Path(cfg[k]).resolve())
    return cfg


def _parse_gammas(value) -> list[float]:
    if isinstance(value, list):
        return [float(g) for g in value]
    if value in (None, "", "grid"):
        return gamma_grid()
    return [float(g) for g in str(value).split(",") if g.strip()]


def _load_model(cfg: dict):
    if cfg.get("model"):
        p = Path(cfg["model"])
        if not p.exists():
            raise CliError(f"model checkpoint not found: {p}")
        return load_model(p)
    return default_model(seed=cfg.get("seed", DEFAULT_MODEL["seed"]))


def _load_corpus(cfg: dict):
    path = Path(cfg["corpus"]) if cfg.get("corpus") else data_path("corpus.txt")
    if not path.exists():
        raise CliError(f"corpus not found: {path}")
    try:
        return read_corpus(path)
    except ValueError as exc:
        raise CliError(str(exc)) from None


def _write(out_dir: Path, name: str, text: str) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    p = out_dir / name
    p.write_text(text)
    return p


def _write_manifest(out_dir: Path, command: str, cfg: dict) -> None:
    doc = {"command": command, "fpx_version": __version__, "config": cfg}
    _write(out_dir, "manifest.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _calibration_json(model, cal: list[LayerCalibration]) -> str:
    doc = {
        "model_fingerprint": model.fingerprint(),
        "layers": [{"block": c.layer.block_index, "kind": c.layer.kind.name, "epsilon": c.epsilon}
                   for c in sorted(cal, key=lambda c: c.layer)],
    }
    return json.dumps(doc, indent=2) + "\n"


def _read_calibration(path) -> tuple[list[LayerCalibration], str]:
    doc = _read_json(path, "calibration file")
    cal = [LayerCalibration(LayerId(int(r["block"]), LayerKind[r["kind"]]), float(r["epsilon"]))
           for r in doc["layers"]]
    return cal, doc.get("model_fingerprint", "")


# -- commands -----------------------------------------------------------------

CALIBRATE_KEYS = {"model": None, "corpus": None, "seed": DEFAULT_MODEL["seed"], "out": None}


def cmd_calibrate(cfg: dict) -> int:
    corpus = _load_corpus(cfg)
    model = _load_model(cfg)
    text = _calibration_json(model, calibrate(model, corpus))
    if cfg.get("out"):
        Path(cfg["out"]).parent.mkdir(parents=True, exist_ok=True)
        Path(cfg["out"]).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


PLAN_KEYS = {"calibration": None, "model": None, "corpus": None, "seed": DEFAULT_MODEL["seed"],
             "gamma": 0.0, "out": None}


def cmd_plan(cfg: dict) -> int:
    if cfg.get("calibration"):
        cal, fp = _read_calibration(cfg["calibration"])
    else:
        model = _load_model(cfg)
        cal, fp = calibrate(model, _load_corpus(cfg)), model.fingerprint()
    try:
        plan = assign(cal, float(cfg["gamma"]), fp)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    text = plan.to_json()
    if cfg.get("out"):
        Path(cfg["out"]).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


SWEEP_KEYS = {"model": None, "corpus": None, "seed": DEFAULT_MODEL["seed"], "cost_table": None,
              "size_tag": "3B", "gammas": None, "grid_sizes": None, "out": None}


def _sweep_outputs(cfg: dict) -> dict[str, str]:
    table = load_cost_table(cfg.get("cost_table"))
    model, corpus = _load_model(cfg), _load_corpus(cfg)
    gammas = _parse_gammas(cfg.get("gammas"))
    rows = sweep(model, corpus, gammas, table, cfg["size_tag"])
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["gamma", "bitwidth_avg", "latency_ms", "quality_proxy"])
    for r in rows:
        w.writerow([f"{r.gamma:.2f}", f"{r.plan.bitwidth_avg:.2f}", f"{r.latency_ms:.3f}",
                    f"{r.quality_proxy:.9f}"])
    files = {"pareto.csv": out.getvalue()}
    if cfg.get("grid_sizes"):
        tags = [t for t in str(cfg["grid_sizes"]).split(",") if t]
        pts = pareto_points(table, tags, {t: rows for t in tags})
        g = io.StringIO()
        w = csv.writer(g, lineterminator="\n")
        w.writerow(["size_tag", "gamma", "bitwidth_avg", "latency_ms", "quality_proxy", "dominated"])
        for p in pts:
            w.writerow([p.size_tag, f"{p.gamma:.2f}", f"{p.bitwidth_avg:.2f}", f"{p.latency_ms:.3f}",
                        f"{p.quality_proxy:.9f}", int(p.dominated)])
        files["pareto_grid.csv"] = g.getvalue()
    return files


HFT_KEYS = {"market": None, "agents": None, "hft_config": None, "model": None, "corpus": None,
            "seed": DEFAULT_MODEL["seed"], "cost_table": None, "out": None}


def _build_agents(cfg: dict, parser_kind: str) -> list[Agent]:
    if not cfg.get("agents"):
        raise CliError("--agents is required")
    doc = _read_json(cfg["agents"], "agent file")
    specs = [AgentSpec.from_dict(d) for d in doc.get("agents", [])]
    if not specs:
        raise CliError(f"agent file {cfg['agents']} lists no agents")
    table = load_cost_table(cfg.get("cost_table"))
    qdoc = doc.get("quality_map", {})

    planned = [s for s in specs if s.size_tag is not None]
    rows_by_gamma, qmap = {}, None
    if planned:
        model, corpus = _load_model(cfg), _load_corpus(cfg)
        wanted = sorted({float(s.gamma) for s in planned if s.gamma is not None} | {1.0})
        rows = sweep(model, corpus, wanted)
        rows_by_gamma = {r.gamma: r for r in rows}
        if "alpha" in qdoc:
            qmap = QualityMap(float(qdoc.get("p_max", DEFAULT_P_MAX)), float(qdoc["alpha"]))
        else:
            qmap = QualityMap.calibrated(rows_by_gamma[1.0].quality_proxy,
                                         float(qdoc.get("p_max", DEFAULT_P_MAX)),
                                         float(qdoc.get("p_floor", DEFAULT_P_FLOOR)))

    agents: list[Agent] = []
    for s in specs:
        if s.llm is not None:
            from .llm import EndpointConfig, LlmAgent, parse_duel_action, parse_trade_action
            parser = parse_trade_action if parser_kind == "trade" else parse_duel_action
            agents.append(LlmAgent(s.name, EndpointConfig.from_dict(s.llm), parser, seed=s.seed))
        elif s.size_tag is not None:
            if s.gamma is None or (s.precision or "").lower() == "fp16":
                agents.append(from_plan(s.size_tag, None, table, qmap, name=s.name, seed=s.seed,
                                        jitter_ms=s.jitter_ms))
            else:
                r = rows_by_gamma[float(s.gamma)]
                agents.append(from_plan(s.size_tag, r.plan, table, qmap, r.quality_proxy,
                                        name=s.name, seed=s.seed, jitter_ms=s.jitter_ms))
        else:
            if s.latency_ms is None:
                raise CliError(f"agent {s.name!r} needs latency_ms, a size_tag or an llm block")
            agents.append(LatencyQualityAgent(s.name, LatencyModel(float(s.latency_ms), s.jitter_ms),
                                              float(s.p), s.seed))
    return agents


def _hft_outputs(cfg: dict) -> dict[str, str]:
    if not cfg.get("market"):
        raise CliError("--market is required")
    try:
        ticks = ingest_csv(cfg["market"])
    except FileNotFoundError as exc:
        raise CliError(str(exc)) from None
    hcfg = HftConfig.from_dict(_read_json(cfg["hft_config"], "hft config")) if cfg.get("hft_config") \
        else HftConfig()
    agents = _build_agents(cfg, "trade")
    report: DayReport = run_day(ticks, agents, hcfg)
    fills = io.StringIO()
    w = csv.writer(fills, lineterminator="\n")
    w.writerow(["agent", "side", "fraction", "price", "exit_price", "latency_ms", "margin",
                "captured_margin", "pnl"])
    for r in report.rows:
        for f in r.portfolio.fills:
            w.writerow([f.agent, f.side, f.fraction, repr(f.price),
                        "" if f.exit_price is None else repr(f.exit_price), f"{f.latency_ms:.3f}",
                        repr(f.margin), repr(f.captured_margin), repr(f.pnl)])
    return {"yields.csv": report.to_csv(), "fills.csv": fills.getvalue()}


ARENA_KEYS = {"agents": None, "duel_config": None, "matches_per_pair": 40, "seed": 0,
              "k_factor": 32.0, "model": None, "corpus": None, "cost_table": None, "out": None}


def _arena_outputs(cfg: dict) -> dict[str, str]:
    dcfg = DuelConfig.from_dict(_read_json(cfg["duel_config"], "duel config")) if cfg.get("duel_config") \
        else DuelConfig()
    model_seed_cfg = {**cfg, "seed": DEFAULT_MODEL["seed"]}
    agents = _build_agents(model_seed_cfg, "duel")
    lad = run_ladder(agents, int(cfg["matches_per_pair"]), dcfg, int(cfg["seed"]),
                     k_factor=float(cfg["k_factor"]))
    return {"ratings.csv": lad.ratings_csv(), "winrates.csv": lad.matrix_csv(),
            "matches.jsonl": lad.matches_jsonl()}


PROFILE_KEYS = {"cost_table": None, "size_tag": None, "gammas": None}


def cmd_profile(cfg: dict) -> int:
    table = load_cost_table(cfg.get("cost_table"))
    tags = [cfg["size_tag"]] if cfg.get("size_tag") else list(table.entries)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["size_tag", "fp4_fraction", "bitwidth_avg", "latency_ms"])
    for tag in tags:
        w.writerow([tag, "fp16", "16.00", f"{table[tag].lat_fp16:.3f}"])
        for f in _parse_gammas(cfg.get("gammas")):
            w.writerow([tag, f"{f:.2f}", f"{bitwidth_avg(f):.2f}",
                        f"{estimate_fraction(table, tag, f).total_ms:.3f}"])
    return 0


OUTPUT_COMMANDS = {"sweep": _sweep_outputs, "hft": _hft_outputs, "arena": _arena_outputs}


def _run_output_command(command: str, cfg: dict) -> int:
    if not cfg.get("out"):
        raise CliError("--out directory is required")
    out_dir = Path(cfg["out"])
    files = OUTPUT_COMMANDS[command](cfg)
    for name, text in files.items():
        _write(out_dir, name, text)
    _write_manifest(out_dir, command, {k: v for k, v in cfg.items() if k != "out"})
    log.info("wrote %s to %s", ", ".join(files), out_dir)
    return 0


def cmd_rerun(manifest_path, out) -> int:
    doc = _read_json(manifest_path, "manifest")
    command = doc.get("command")
    if command not in OUTPUT_COMMANDS:
        raise CliError(f"manifest command {command!r} cannot be rerun")
    cfg = dict(doc["config"])
    cfg["out"] = str(Path(out).resolve())
    return _run_output_command(command, cfg)


# -- argument parsing ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fpx", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"fpx {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, *, model=True, out_help="output path"):
        sp.add_argument("--config", help="JSON file with default values for these flags")
        if model:
            sp.add_argument("--model", help="FPXM checkpoint (default: seeded reference model)")
            sp.add_argument("--corpus", help="corpus file (default: bundled corpus)")
            sp.add_argument("--seed", type=int, help="model seed when no checkpoint is given")
        sp.add_argument("--out", help=out_help)

    sp = sub.add_parser("init-model", help="write a seeded checkpoint")
    for name, default in DEFAULT_MODEL.items():
        sp.add_argument("--" + name.replace("_", "-"), type=int, default=default)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("calibrate", help="per-layer FP4 error (JSON)")
    common(sp, out_help="calibration JSON (default: stdout)")

    sp = sub.add_parser("plan", help="assign FP4/FP8 per layer for one gamma")
    common(sp, out_help="plan JSON (default: stdout)")
    sp.add_argument("--calibration", help="calibration JSON from 'fpx calibrate'")
    sp.add_argument("--gamma", type=float)

    sp = sub.add_parser("sweep", help="gamma sweep -> pareto.csv")
    common(sp, out_help="output directory")
    sp.add_argument("--cost-table", dest="cost_table")
    sp.add_argument("--size-tag", dest="size_tag")
    sp.add_argument("--gammas", help="comma list (default: 0,0.1,...,1)")
    sp.add_argument("--grid-sizes", dest="grid_sizes", help="comma list of size tags for pareto_grid.csv")

    sp = sub.add_parser("hft", help="trading day backtest -> yields.csv")
    common(sp, out_help="output directory")
    sp.add_argument("--market", help="market CSV (ts,low,high[,volume])")
    sp.add_argument("--agents", help="agent JSON file")
    sp.add_argument("--hft-config", dest="hft_config")
    sp.add_argument("--cost-table", dest="cost_table")

    sp = sub.add_parser("arena", help="duel ladder -> ratings.csv, winrates.csv")
    sp.add_argument("--config")
    sp.add_argument("--agents")
    sp.add_argument("--duel-config", dest="duel_config")
    sp.add_argument("--matches-per-pair", dest="matches_per_pair", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--k-factor", dest="k_factor", type=float)
    sp.add_argument("--model")
    sp.add_argument("--corpus")
    sp.add_argument("--cost-table", dest="cost_table")
    sp.add_argument("--out")

    sp = sub.add_parser("profile", help="print cost-table interpolations")
    sp.add_argument("--config")
    sp.add_argument("--cost-table", dest="cost_table")
    sp.add_argument("--size-tag", dest="size_tag")
    sp.add_argument("--gammas")

    sp = sub.add_parser("rerun", help="replay a manifest.json")
    sp.add_argument("manifest")
    sp.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "init-model":
            from .toymodel import init_model
            m = init_model(args.seed, args.num_blocks, args.d_model, args.d_ff, args.vocab)
            save_model(m, args.out)
            return 0
        if args.command == "calibrate":
            return cmd_calibrate(_resolve(args, CALIBRATE_KEYS))
        if args.command == "plan":
            return cmd_plan(_resolve(args, PLAN_KEYS))
        if args.command == "profile":
            return cmd_profile(_resolve(args, PROFILE_KEYS))
        if args.command == "rerun":
            return cmd_rerun(args.manifest, args.out)
        keys = {"sweep": SWEEP_KEYS, "hft": HFT_KEYS, "arena": ARENA_KEYS}[args.command]
        return _run_output_command(args.command, _resolve(args, keys))
    except (CliError, FileNotFoundError, ValueError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"fpx {args.command}: error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
