"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import behavior as bh
from . import config as cfgmod
from . import forecast as fc
from . import synth
from .dgg import EigenError, LaplacianState, align_signs, eigendecompose, state_record, update_laplacian
from .seq_model import NumericalError, load_checkpoint, save_checkpoint
from .spectral import phi_estimate, t_fde, t_fde_table
from .traffic_data import (
    DataError,
    Scene,
    extract_windows,
    frame_speeds,
    parse_csv,
    read_windows_jsonl,
    scene_to_csv,
    write_windows_jsonl,
)

log = logging.getLogger("spectral_traffic")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class StageError(Exception):
    """Error tagged with the failing stage, input location and exit code."""

    def __init__(self, stage: str, location: str, message: str, code: int):
        self.stage, self.location, self.code = stage, location, code
        super().__init__(message)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- argument parsing ---------------------------------------------------------

def _common(p: argparse.ArgumentParser, seed_help: str = "RNG seed (integer)"):
    p.add_argument("--config", metavar="PATH", help="TOML or JSON run configuration; flags override it")
    p.add_argument("--seed", type=int, help=seed_help)
    p.add_argument("--jobs", type=int, metavar="N", help="worker threads (count; default: all cores)")
    p.add_argument("--out", metavar="PATH", help="output file (default: stdout)")


def _graph_flags(p):
    p.add_argument("--mu-radius", type=float, metavar="M", help="edge radius mu (meters, > 0; default 10)")
    p.add_argument("--k", type=int, metavar="K", help="eigenpairs kept per frame (count; default 2)")
    p.add_argument("--sample-rate", type=float, metavar="HZ", help="scene sample rate (Hz; default 10)")


def _window_flags(p):
    p.add_argument("--obs-len", type=int, metavar="F", help="observed length (frames; default 30)")
    p.add_argument("--pred-len", type=int, metavar="F", help="predicted length (frames; default 50)")
    p.add_argument("--stride", type=int, metavar="F", help="window stride (frames; default obs+pred)")


def _behavior_flags(p):
    p.add_argument("--lambda1", type=float, metavar="RATE",
                   help="overspeeding threshold on theta' (Laplacian units per frame)")
    p.add_argument("--lambda2", type=float, metavar="RATE",
                   help="underspeeding threshold on theta' (Laplacian units per frame)")
    p.add_argument("--labels", metavar="PATH", help="labels CSV (agent_id, behavior, cluster) for calibration and scoring")


def _model_flags(p):
    p.add_argument("--clusters", type=int, metavar="C", help="spectral clusters for regularization (count; default 2)")
    p.add_argument("--regularized", action=argparse.BooleanOptionalAction, default=None,
                   help="use the cluster-regularized loss for stream 1 (default on)")
    p.add_argument("--stream", choices=("1", "2", "both"), help="which stream(s) to train or run (default both)")
    p.add_argument("--epochs", type=int, metavar="E", help="stream-1 epochs before joint training (count; default 20)")
    p.add_argument("--joint-epochs", type=int, metavar="E", help="joint training epochs (count; default 5)")
    p.add_argument("--hidden", type=int, metavar="H", help="LSTM hidden units (count; default 64)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="spectral-traffic",
        description="Trajectory and behavior prediction from traffic-graph spectra. "
        "Log verbosity via the SPECTRAL_TRAFFIC_LOG environment variable (e.g. INFO, DEBUG).",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("ingest", help="trajectory CSV -> training windows (JSON lines)")
    p.add_argument("input", help="trajectory CSV (frame_id, agent_id, x [m], y [m][, dataset_id])")
    _common(p)
    _window_flags(p)
    p.add_argument("--sample-rate", type=float, metavar="HZ", help="scene sample rate (Hz; default 10)")

    p = sub.add_parser("graphs", help="scene -> accumulated Laplacian and spectrum per frame (JSON)")
    p.add_argument("input", nargs="?", help="trajectory CSV (default: data.scene from the config)")
    _common(p)
    _graph_flags(p)

    p = sub.add_parser("synth", help="generate a synthetic scene (CSV) and its labels sidecar")
    _common(p, "RNG seed for position noise (integer; default 0)")
    p.add_argument("--scenario", choices=("behavior", "clustered"), help="stock layout (default clustered)")
    p.add_argument("--duration", type=int, metavar="F", help="scene length (frames)")
    p.add_argument("--noise-std", type=float, metavar="M", help="position noise standard deviation (meters)")
    p.add_argument("--labels-out", metavar="PATH", help="labels CSV path (default: <out stem>.labels.csv)")

    p = sub.add_parser("train", help="windows or scene -> model checkpoint (JSON)")
    p.add_argument("input", nargs="?", help="windows JSONL (stream 1 only) or trajectory CSV")
    _common(p, "RNG seed (integer; required)")
    _graph_flags(p)
    _window_flags(p)
    _model_flags(p)

    p = sub.add_parser("predict", help="checkpoint + scene -> predicted trajectories and spectra (JSON)")
    p.add_argument("checkpoint", help="checkpoint written by 'train'")
    p.add_argument("input", nargs="?", help="trajectory CSV (default: data.scene from the config)")
    _common(p)
    _graph_flags(p)
    _window_flags(p)
    p.add_argument("--stream", choices=("1", "2", "both"), help="which stream(s) to run (default both)")

    p = sub.add_parser("behavior", help="scene or graphs JSON -> behavior labels (CSV)")
    p.add_argument("input", nargs="?", help="trajectory CSV or JSON from 'graphs'")
    _common(p)
    _graph_flags(p)
    _behavior_flags(p)

    p = sub.add_parser("bound", help="eigenvector perturbation bounds (CSV)")
    p.add_argument("input", nargs="?", help="trajectory CSV: report the bound for every frame transition")
    _common(p)
    _graph_flags(p)
    p.add_argument("--n-agents", type=int, metavar="N", help="agent count for the closed-form estimate (count)")
    p.add_argument("--delta-max", type=float, metavar="W", help="largest perturbation entry (edge-weight units)")
    p.add_argument("--n-per-frame", type=float, metavar="N", help="agents per frame for T-FDE (count; default 10)")
    p.add_argument("--horizon", type=float, metavar="S", help="prediction window for T-FDE (seconds)")
    p.add_argument("--table", action="store_true", help="recompute the published upper-bound table")

    p = sub.add_parser("eval", help="full pipeline -> JSON report and RMSE-per-step CSV")
    p.add_argument("input", nargs="?", help="trajectory CSV (default: data.scene or data.synthetic from the config)")
    _common(p, "RNG seed (integer; required)")
    _graph_flags(p)
    _window_flags(p)
    _behavior_flags(p)
    _model_flags(p)
    p.add_argument("--curve-out", metavar="PATH", help="RMSE-vs-step CSV path (default: <out stem>.rmse.csv)")
    return parser


def _overrides(args) -> dict:
    pairs = {
        "seed": "seed",
        "jobs": "jobs",
        "mu_radius": "graph.mu_radius",
        "k": "graph.k",
        "clusters": "graph.clusters",
        "lambda1": "behavior.lambda1",
        "lambda2": "behavior.lambda2",
        "labels": "data.labels",
        "regularized": "forecast.regularized",
        "stream": "forecast.stream",
        "obs_len": "window.obs_len",
        "pred_len": "window.pred_len",
        "stride": "window.stride",
        "sample_rate": "data.sample_rate_hz",
        "epochs": "train.epochs_stream1",
        "joint_epochs": "train.epochs_joint",
        "hidden": "train.hidden_size",
        "scenario": "synth.scenario",
        "duration": "synth.duration",
        "noise_std": "synth.noise_std",
    }
    return {dotted: getattr(args, name) for name, dotted in pairs.items() if hasattr(args, name)}


def resolve_config(args) -> cfgmod.RunConfig:
    base = cfgmod.load(args.config) if args.config else cfgmod.RunConfig()
    return cfgmod.with_overrides(base, _overrides(args))


# -- I/O helpers --------------------------------------------------------------

def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n"


def _emit(text: str, path: str | None):
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _csv_text(config: dict, header: Sequence[str], rows) -> str:
    out = io.StringIO()
    out.write("# config: " + json.dumps(config, sort_keys=True) + "\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(r)
    return out.getvalue()


def _read_text(path: str, stage: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise StageError(stage, path, f"cannot read input: {exc.strerror}", EXIT_DATA) from exc
    except UnicodeDecodeError as exc:
        raise StageError(stage, path, f"not UTF-8 text: {exc}", EXIT_DATA) from exc


def _scene_from_path(path: str, cfg: cfgmod.RunConfig, stage: str) -> Scene:
    text = _read_text(path, stage)
    try:
        return parse_csv(text, sample_rate_hz=cfg.data.sample_rate_hz)
    except DataError as exc:
        raise StageError(stage, path, str(exc), EXIT_DATA) from exc


def _synthetic(cfg: cfgmod.RunConfig, scenario: str):
    seed = cfg.seed if cfg.seed is not None else 0
    kwargs = {"rng_seed": seed}
    if cfg.synth.duration is not None:
        kwargs["duration"] = cfg.synth.duration
    if cfg.synth.noise_std is not None:
        kwargs["noise_std"] = cfg.synth.noise_std
    maker = synth.behavior_scenario if scenario == "behavior" else synth.clustered_scenario
    try:
        return synth.generate(maker(**kwargs))
    except ValueError as exc:
        raise StageError("synth", scenario, str(exc), EXIT_USAGE) from exc


def _load_scene(args, cfg: cfgmod.RunConfig, stage: str) -> tuple[Scene, dict | None, str]:
    """Scene, labels embedded by a synthetic source, and a location string."""
    path = getattr(args, "input", None) or cfg.data.scene
    if path:
        return _scene_from_path(path, cfg, stage), None, path
    if cfg.data.synthetic:
        res = _synthetic(cfg, cfg.data.synthetic)
        return res.scene, res.labels, f"synthetic:{cfg.data.synthetic}"
    raise UsageError(f"{stage}: no input scene (positional argument, data.scene or data.synthetic)")


def _load_labels(cfg: cfgmod.RunConfig, fallback: dict | None, stage: str):
    if cfg.data.labels:
        text = _read_text(cfg.data.labels, stage)
        try:
            return synth.read_labels_csv(text)[0]
        except DataError as exc:
            raise StageError(stage, cfg.data.labels, str(exc), EXIT_DATA) from exc
    return fallback


def _meta(cfg: cfgmod.RunConfig) -> dict:
    return {"config": cfg.to_dict(), "seed": cfg.seed}


# -- subcommands --------------------------------------------------------------

def cmd_ingest(args, cfg):
    scene = _scene_from_path(args.input, cfg, "ingest")
    try:
        windows = extract_windows(scene, cfg.window_spec(), cfg.window.stride)
    except ValueError as exc:
        raise StageError("ingest", args.input, str(exc), EXIT_DATA) from exc
    out = io.StringIO()
    out.write(json.dumps(_meta(cfg), sort_keys=True) + "\n")
    n = write_windows_jsonl(windows, out)
    _emit(out.getvalue(), args.out)
    log.info("ingest: %d windows from %d agents", n, len(scene.agent_ids))


def _graph_records(scene: Scene, cfg: cfgmod.RunConfig) -> list[dict]:
    fconf = cfg.forecast_config()
    cap = fc.resolve_capacity(scene, fconf)
    state = LaplacianState(capacity=cap, zero_init_diagonal=fconf.zero_init_diagonal)
    speeds = frame_speeds(scene)
    prev = None
    records = []
    for f in scene.frame_ids:
        state = update_laplacian(state, f, scene.frame(f), speeds[f], fconf.edge_params)
        spec = eigendecompose(state.matrix, fconf.k_eigenvectors)
        spec = align_signs(prev, spec) if prev is not None else spec
        prev = spec
        records.append(state_record(state, scene.dataset_id, f, spec))
    return records


def cmd_graphs(args, cfg):
    scene, _, where = _load_scene(args, cfg, "graphs")
    try:
        records = _graph_records(scene, cfg)
    except ValueError as exc:
        raise StageError("graphs", where, str(exc), EXIT_DATA) from exc
    _emit(_dumps({**_meta(cfg), "frames": records}), args.out)


def cmd_synth(args, cfg):
    if cfg.seed is None:
        cfg = dataclasses.replace(cfg, seed=0)
    res = _synthetic(cfg, cfg.synth.scenario)
    meta = json.dumps(_meta(cfg), sort_keys=True)
    scene_text = f"# config: {meta}\n" + scene_to_csv(res.scene)
    labels_text = f"# config: {meta}\n" + res.labels_csv()
    _emit(scene_text, args.out)
    labels_path = args.labels_out
    if labels_path is None and args.out is not None:
        labels_path = str(Path(args.out).with_suffix(".labels.csv"))
    if labels_path is not None:
        Path(labels_path).write_text(labels_text)


def cmd_train(args, cfg):
    cfg.require_seed()
    fconf = cfg.forecast_config()
    stream = cfg.forecast.stream
    path = args.input or cfg.data.scene
    models = {}
    losses = {}
    if path and path.endswith((".jsonl", ".json")):
        if stream != "1":
            raise UsageError("train: a windows file only supports --stream 1; pass a scene CSV for stream 2")
        text = _read_text(path, "train")
        try:
            windows = read_windows_jsonl(io.StringIO(text))
        except DataError as exc:
            raise StageError("train", path, str(exc), EXIT_DATA) from exc
        res = fc.run_stream1(windows, fconf)
        models["stream1"], losses["stream1"] = res.weights, res.losses
    else:
        scene, _, where = _load_scene(args, cfg, "train")
        try:
            windows = extract_windows(scene, fconf.window, fconf.stride)
            seqs = fc.build_spectrum_sequences(scene, fconf)
        except ValueError as exc:
            raise StageError("train", where, str(exc), EXIT_DATA) from exc
        if stream == "1":
            res = fc.run_stream1(windows, fconf)
            models["stream1"], losses["stream1"] = res.weights, res.losses
        elif stream == "2":
            models["stream2"], losses["stream2"] = fc.run_stream2(seqs, fconf)
        else:
            streams = fc.fit_streams(scene, seqs, windows, fconf, scene.frame_ids[-1] + 1)
            models["stream1"], losses["stream1"] = streams.stream1, streams.losses1
            if streams.stream2 is not None:
                models["stream2"], losses["stream2"] = streams.stream2, streams.losses2
    meta = {**_meta(cfg), "losses": losses}
    if args.out is None:
        raise UsageError("train: --out is required for the checkpoint")
    save_checkpoint(args.out, models, meta)
    for name, curve in losses.items():
        rows = [[e + 1, repr(v)] for e, v in enumerate(curve)]
        Path(args.out).with_suffix(f".{name}.losses.csv").write_text(
            _csv_text(_meta(cfg), ["epoch", "mean_loss"], rows)
        )


def cmd_predict(args, cfg):
    try:
        models, ck_meta = load_checkpoint(args.checkpoint)
    except (OSError, ValueError, KeyError) as exc:
        raise StageError("predict", args.checkpoint, f"cannot load checkpoint: {exc}", EXIT_DATA) from exc
    scene, _, where = _load_scene(args, cfg, "predict")
    fconf = cfg.forecast_config()
    spec = fconf.window
    stream = cfg.forecast.stream
    out = {**_meta(cfg), "checkpoint": ck_meta}
    try:
        windows = extract_windows(scene, spec, fconf.stride)
    except ValueError as exc:
        raise StageError("predict", where, str(exc), EXIT_DATA) from exc
    if stream in ("1", "both"):
        if "stream1" not in models:
            raise UsageError("predict: checkpoint has no stream-1 model")
        pred = fc.predict_trajectories(models["stream1"], windows, spec.pred_len)
        out["trajectories"] = [
            {
                "agent_id": w.agent_id,
                "frame_origin": w.frame_origin,
                "prediction": pred[i].tolist(),
                "ade": fc.ade(pred[i], w.future),
                "fde": fc.fde(pred[i], w.future),
            }
            for i, w in enumerate(windows)
        ]
    if stream in ("2", "both") and "stream2" in models:
        seqs = fc.build_spectrum_sequences(scene, fconf)
        starts = sorted({seqs.position(w.frame_origin) for w in windows})
        out["spectra"] = [
            {
                "frame_origin": seqs.frame_ids[s],
                "steps": [sp.to_dict() for sp in fc.predict_spectra(models["stream2"], seqs, spec, s)],
            }
            for s in starts
        ]
    elif stream == "2":
        raise UsageError("predict: checkpoint has no stream-2 model")
    _emit(_dumps(out), args.out)


def _rates_from_graphs_json(text: str, where: str) -> dict[int, float]:
    try:
        frames = json.loads(text)["frames"]
        series: dict[int, tuple[list, list]] = {}
        for rec in frames:
            if "matrix" in rec:
                diag = np.diag(np.asarray(rec["matrix"], dtype=float))
            else:
                u = np.asarray(rec["eigenvectors"], dtype=float)
                diag = (u * np.asarray(rec["eigenvalues"])) @ u.T
                diag = np.diag(diag)
            for a, i in rec["index_map"].items():
                fs, vs = series.setdefault(int(a), ([], []))
                fs.append(rec["frame_id"])
                vs.append(diag[i])
    except (KeyError, TypeError, ValueError) as exc:
        raise StageError("behavior", where, f"bad graphs JSON: {exc}", EXIT_DATA) from exc
    return {a: bh.theta_rate(v, f) for a, (f, v) in sorted(series.items()) if len(v) >= 2}


def cmd_behavior(args, cfg):
    path = args.input or cfg.data.scene
    fallback = None
    if path and path.endswith(".json"):
        rates = _rates_from_graphs_json(_read_text(path, "behavior"), path)
    else:
        scene, fallback, where = _load_scene(args, cfg, "behavior")
        try:
            seqs = fc.build_spectrum_sequences(scene, cfg.forecast_config())
        except ValueError as exc:
            raise StageError("behavior", where, str(exc), EXIT_DATA) from exc
        rates = fc.agent_theta_rates(seqs)
    labels = _load_labels(cfg, fallback, "behavior")
    thresholds = cfg.thresholds()
    ids = sorted(rates)
    scored = [a for a in ids if labels and a in labels]
    if thresholds is None:
        if scored:
            thresholds = bh.calibrate_thresholds(
                [rates[a] for a in scored], [labels[a] for a in scored], symmetric=cfg.behavior.symmetric
            )
        else:
            thresholds = bh.BehaviorThresholds()
    pred = {a: bh.classify(rates[a], thresholds).label for a in ids}
    meta = {**_meta(cfg), "thresholds": {"lambda1": thresholds.lambda1, "lambda2": thresholds.lambda2}}
    if scored:
        meta["weighted_accuracy"] = bh.weighted_accuracy([pred[a] for a in scored], [labels[a] for a in scored])
        log.info("behavior: weighted accuracy %.4f over %d agents", meta["weighted_accuracy"], len(scored))
    rows = [
        [a, repr(rates[a]), pred[a].value, labels[a].value if labels and a in labels else ""] for a in ids
    ]
    _emit(_csv_text(meta, ["agent_id", "theta_rate", "label_pred", "label_true"], rows), args.out)


def cmd_bound(args, cfg):
    meta = _meta(cfg)
    if args.table:
        n = args.n_per_frame if args.n_per_frame is not None else 10.0
        rows = t_fde_table(n)
        header = list(rows[0])
        _emit(_csv_text(meta, header, [[r[h] for h in header] for r in rows]), args.out)
        return
    if args.n_agents is not None or args.delta_max is not None:
        if args.n_agents is None or args.delta_max is None:
            raise UsageError("bound: --n-agents and --delta-max go together")
        try:
            phi = phi_estimate(args.n_agents, args.delta_max)
        except ValueError as exc:
            raise UsageError(f"bound: {exc}") from exc
        header = ["n_agents", "delta_max", "phi"]
        row = [args.n_agents, args.delta_max, round(phi, 6)]
        if args.horizon is not None:
            n = args.n_per_frame if args.n_per_frame is not None else 10.0
            header += ["n_per_frame", "horizon", "t_fde"]
            row += [n, args.horizon, round(t_fde(phi, n, args.horizon), 6)]
        _emit(_csv_text(meta, header, [row]), args.out)
        return
    scene, _, where = _load_scene(args, cfg, "bound")
    fconf = cfg.forecast_config()
    try:
        seqs = fc.build_spectrum_sequences(scene, fconf, with_bounds=True)
    except ValueError as exc:
        raise StageError("bound", where, str(exc), EXIT_DATA) from exc
    header = ["frame_id", "phi", "numerator", "gap", "n_agents", "delta_max", "j", "degenerate"]
    rows = []
    for f, b in zip(seqs.frame_ids[1:], seqs.bounds):
        d = b.to_dict()
        rows.append([f] + [d[h] for h in header[1:]])
    _emit(_csv_text(meta, header, rows), args.out)


def cmd_eval(args, cfg):
    cfg.require_seed()
    scene, fallback, where = _load_scene(args, cfg, "eval")
    labels = _load_labels(cfg, fallback, "eval")
    fconf = cfg.forecast_config()
    try:
        result = fc.evaluate(scene, fconf, labels=labels)
    except fc.PipelineError as exc:
        raise StageError(exc.stage, where, str(exc), EXIT_DATA) from exc
    report = {**_meta(cfg), **{k: v for k, v in result.report().items() if k != "config"}}
    _emit(_dumps(report), args.out)
    curve_path = args.curve_out
    if curve_path is None and args.out is not None:
        curve_path = str(Path(args.out).with_suffix(".rmse.csv"))
    if curve_path is not None:
        dt = 1.0 / scene.sample_rate_hz
        rows = [[t + 1, repr((t + 1) * dt), repr(v)] for t, v in enumerate(result.rmse_curve)]
        Path(curve_path).write_text(_csv_text(_meta(cfg), ["step", "time_s", "rmse_m"], rows))


COMMANDS = {
    "ingest": cmd_ingest,
    "graphs": cmd_graphs,
    "synth": cmd_synth,
    "train": cmd_train,
    "predict": cmd_predict,
    "behavior": cmd_behavior,
    "bound": cmd_bound,
    "eval": cmd_eval,
}


def _setup_logging():
    level = os.environ.get("SPECTRAL_TRAFFIC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def main(argv: Sequence[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    stage = "usage"
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        stage = args.command
        cfg = resolve_config(args)
        COMMANDS[args.command](args, cfg)
        return EXIT_OK
    except (UsageError, cfgmod.ConfigError) as exc:
        print(f"error [{stage}]: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StageError as exc:
        print(f"error [{exc.stage}] {exc.location}: {exc}", file=sys.stderr)
        return exc.code
    except (NumericalError, EigenError, FloatingPointError) as exc:
        print(f"error [{stage}]: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except fc.PipelineError as exc:
        print(f"error [{exc.stage}]: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DataError, ValueError, OSError) as exc:
        print(f"error [{stage}]: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
