"""Command line: ``xtrack <subcommand> [flags]``.

Exit codes: 0 success, 1 invalid input or usage, 2 runtime failure
(including a failed gradient certification).
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from ..kinematics import PropagationError
from ..model import (
    CheckpointError,
    ConfigError,
    FeatureMismatchError,
    TrainingError,
    load_params,
    predict,
    train,
)
from ..numcore import SeededRng
from ..scenario import (
    HIGHD,
    NGSIM,
    ArchiveError,
    ParseError,
    SchemaError,
    SplitSpec,
    SynthSpec,
    load_tracks,
    preprocess,
    read_archive,
    synth_generate,
    synth_recording,
    write_archive,
    write_tracks,
)
from . import certify
from .ablation import TABLE_GRID, ablate, evaluate_model, ground_truth
from .configfile import (
    ConfigFileError,
    build_format_config,
    build_model_config,
    build_train_config,
    data_options,
    read_config,
)
from .metrics import MetricError, metrics_report

VALIDATION_ERRORS = (ConfigError, ConfigFileError, SchemaError, ParseError, ArchiveError, CheckpointError,
                     FeatureMismatchError, MetricError, FileNotFoundError, IsADirectoryError)
RUNTIME_ERRORS = (TrainingError, PropagationError)
FORMATS = {"highd": HIGHD, "ngsim": NGSIM}
PRED_HEADER = ["scenario_id", "t", "x_pred", "y_pred"]
CONTROL_HEADER = ["ax_pred", "psidot_pred"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--seed", type=int, help="seed for every random choice (unsigned 64-bit)")
    p.add_argument("--variant", choices=("xtraj", "xtrack"))
    p.add_argument("--encoder", choices=("lstm", "slstm", "mlstm"))
    p.add_argument("--decoder", choices=("lstm", "slstm", "mlstm"))
    p.add_argument("--data", help="input file (tracks CSV or scenario archive)")
    p.add_argument("--out", help="output path")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--dt", type=float, help="scenario sample period in seconds")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="xtrack", description="Interaction-aware trajectory prediction with a kinematic output layer.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("preprocess", parents=[common], help="tracks CSV -> train/val/test scenario archives")
    p.add_argument("--format", choices=sorted(FORMATS), default="highd")

    p = sub.add_parser("synth", parents=[common], help="synthetic scenarios -> archive (or a raw tracks CSV)")
    p.add_argument("--keep-lane", type=int, default=22)
    p.add_argument("--accelerating", type=int, default=21)
    p.add_argument("--lane-change", type=int, default=21)
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--tracks", action="store_true", help="write a raw highD-style recording instead")
    p.add_argument("--vehicles", type=int, default=60)

    p = sub.add_parser("train", parents=[common], help="train a model, write a checkpoint")
    p.add_argument("--val", help="validation archive")
    p.add_argument("--lr", type=float)

    p = sub.add_parser("evaluate", parents=[common], help="checkpoint (or predictions CSV) + archive -> metrics JSON")
    p.add_argument("--checkpoint")
    p.add_argument("--predictions", help="predictions CSV in the predict output format")

    p = sub.add_parser("predict", parents=[common], help="checkpoint + archive -> per-step trajectory CSV")
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("gradcheck", parents=[common], help="run the gradient certification suite")
    p.add_argument("--seeds", type=int, default=20)

    p = sub.add_parser("ablate", parents=[common], help="train/evaluate every encoder-decoder combination")
    p.add_argument("--eval-data", help="evaluation archive (default: the training archive)")
    p.add_argument("--scenarios", type=int, default=64, help="synthetic set size when --data is omitted")
    p.add_argument("--lr", type=float)
    return parser


# ---------------------------------------------------------------- helpers

def _settings(args) -> dict:
    """Config file values overridden by command-line flags."""
    values = dict(read_config(args.config)) if args.config else {}
    flag_map = {"seed": "seed", "variant": "variant", "encoder": "encoder_cell", "decoder": "decoder_cell",
                "epochs": "epochs", "batch": "batch_size", "dt": "dt", "lr": "learning_rate"}
    for flag, key in flag_map.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = str(v)
    return values


def _require(args, *names):
    for n in names:
        if not getattr(args, n, None):
            raise UsageError(f"xtrack {args.command}: --{n.replace('_', '-')} is required")


def _write_text(path, text):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _say(msg):
    print(msg, flush=True)


# ---------------------------------------------------------------- subcommands

def cmd_preprocess(args, values):
    _require(args, "data", "out")
    fmt = build_format_config(values, FORMATS[args.format])
    opts = data_options(values)
    tracks = load_tracks(args.data, fmt)
    seed = int(values.get("seed", 0))
    split = SplitSpec(opts.get("train_fraction", 0.7), opts.get("val_fraction", 0.1), opts.get("test_fraction", 0.2), seed)
    model_vals = build_model_config({k: v for k, v in values.items() if k in ("t_obs", "t_f", "dt")})
    parts, stats = preprocess(tracks, dt_target=opts.get("dt", model_vals.dt), t_obs=model_vals.t_obs, t_f=model_vals.t_f,
                              stride_s=opts.get("stride", 1.0), recording=opts.get("recording", Path(args.data).stem),
                              seed=seed, split=split, balance=opts.get("balance", True))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, scen in parts.items():
        write_archive(scen, out / f"{name}.jsonl")
    _write_text(out / "stats.json", json.dumps(dataclasses.asdict(stats), indent=2, sort_keys=True) + "\n")
    _say(f"{stats.extracted} windows extracted; " + ", ".join(f"{k} {v}" for k, v in stats.counts.items()))


def cmd_synth(args, values):
    _require(args, "out")
    seed = int(values.get("seed", 0))
    if args.tracks:
        tracks = synth_recording(seed, n_vehicles=args.vehicles)
        write_tracks(tracks, args.out)
        _say(f"wrote {len(tracks)} tracks to {args.out}")
        return
    mc = build_model_config({k: v for k, v in values.items() if k in ("t_obs", "t_f", "dt")})
    spec = SynthSpec(keep_lane=args.keep_lane, accelerating=args.accelerating, lane_change=args.lane_change,
                     noise=args.noise, dt=mc.dt, t_obs=mc.t_obs, t_f=mc.t_f)
    scen = synth_generate(spec, seed)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_archive(scen, args.out)
    _say(f"wrote {len(scen)} scenarios to {args.out}")


def cmd_train(args, values):
    _require(args, "data", "out")
    mc = build_model_config(values)
    tc = dataclasses.replace(build_train_config(values), checkpoint=args.out)
    data = read_archive(args.data)
    val = read_archive(args.val) if args.val else None
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)

    def log(h):
        val_txt = "" if h["val_loss"] is None else f" val {h['val_loss']:.5g}"
        _say(f"epoch {h['epoch']:4d} train {h['train_loss']:.5g}{val_txt}")

    result = train(data, mc, tc, val, log=log)
    _say(f"best epoch {result.best_epoch}; checkpoint {args.out}")


def _read_predictions(path, t_f):
    rows = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or reader.fieldnames[:4] != PRED_HEADER:
            raise SchemaError(f"{path}: header must start with {','.join(PRED_HEADER)}")
        for lineno, r in enumerate(reader, start=2):
            try:
                rows.setdefault(r["scenario_id"], []).append((float(r["t"]), float(r["x_pred"]), float(r["y_pred"])))
            except (TypeError, ValueError) as exc:
                raise ParseError(f"{path}:{lineno}: non-numeric prediction", lineno, None) from exc
    out = {}
    for sid, pts in rows.items():
        pts.sort()
        if len(pts) != t_f:
            raise SchemaError(f"{path}: scenario {sid} has {len(pts)} steps, expected {t_f}")
        out[sid] = np.array([[x, y] for _, x, y in pts])
    return out


def cmd_evaluate(args, values):
    _require(args, "data", "out")
    scen = read_archive(args.data)
    if not scen:
        raise MetricError("archive holds no scenarios")
    if args.checkpoint:
        model = load_params(args.checkpoint)
        report = evaluate_model(model, scen)
    elif args.predictions:
        t_f, dt = scen[0].t_f, scen[0].dt
        preds = _read_predictions(args.predictions, t_f)
        missing = [s.scenario_id for s in scen if s.scenario_id not in preds]
        if missing:
            raise SchemaError(f"{args.predictions}: no predictions for {len(missing)} scenarios (e.g. {missing[0]})")
        P = np.stack([preds[s.scenario_id] for s in scen])
        report = metrics_report(P, ground_truth(scen), dt=dt, variant=values.get("variant", ""))
    else:
        raise UsageError("xtrack evaluate: one of --checkpoint or --predictions is required")
    _write_text(args.out, report.to_json())
    _say(f"ADE {report.ade:.4f} m  FDE {report.fde:.4f} m  over {report.n_scenarios} scenarios")


def prediction_rows(preds, dt):
    for p in preds:
        for k in range(len(p.positions)):
            row = [p.scenario_id, repr(round((k + 1) * dt, 12)), repr(float(p.positions[k, 0])), repr(float(p.positions[k, 1]))]
            if p.controls is not None:
                row += [repr(float(p.controls[k, 0])), repr(float(p.controls[k, 1]))]
            yield row


def cmd_predict(args, values):
    _require(args, "data", "out")
    model = load_params(args.checkpoint)
    scen = read_archive(args.data)
    preds = predict(model, scen)
    header = PRED_HEADER + (CONTROL_HEADER if model.config.variant == "xtrack" else [])
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(prediction_rows(preds, model.config.dt))
    _say(f"wrote {len(preds) * model.config.t_f} rows to {args.out}")


def cmd_gradcheck(args, values):
    report = certify.run_suite(seeds=args.seeds, log=_say)
    if args.out:
        doc = {"passed": report.passed, "seconds": report.seconds, "checks": report.summary()}
        _write_text(args.out, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    _say(f"{'PASS' if report.passed else 'FAIL'} in {report.seconds:.1f}s")
    return 0 if report.passed else 2


def cmd_ablate(args, values):
    _require(args, "out")
    values = dict(values)
    defaults = {"embed_dim": "16", "encoder_hidden": "16", "decoder_hidden": "16", "gat_dim": "16",
                "interaction_dim": "16", "epochs": "100", "learning_rate": "0.005"}
    for k, v in defaults.items():
        values.setdefault(k, v)
    mc = build_model_config(values)
    tc = build_train_config(values)
    if args.data:
        data = read_archive(args.data)
    else:
        n = args.scenarios
        spec = SynthSpec(keep_lane=n - 2 * (n // 3), accelerating=n // 3, lane_change=n // 3, noise=0.3,
                         dt=mc.dt, t_obs=mc.t_obs, t_f=mc.t_f)
        data = synth_generate(spec, tc.seed)
    eval_set = read_archive(args.eval_data) if args.eval_data else None
    table = ablate(data, eval_set, mc, tc, TABLE_GRID, log=_say)
    _write_text(args.out, table.to_json())
    text_path = str(Path(args.out).with_suffix(".txt"))
    _write_text(text_path, table.to_text())
    sys.stdout.write(table.to_text())


COMMANDS = {
    "preprocess": cmd_preprocess,
    "synth": cmd_synth,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "gradcheck": cmd_gradcheck,
    "ablate": cmd_ablate,
}


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        values = _settings(args)
        if "seed" in values:
            SeededRng(int(values["seed"]))  # range check
        rc = COMMANDS[args.command](args, values)
        return int(rc or 0)
    except UsageError as exc:
        sys.stderr.write(str(exc).rstrip() + "\n")
        return 1
    except VALIDATION_ERRORS as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except RUNTIME_ERRORS as exc:
        sys.stderr.write(f"failed: {exc}\n")
        return 2
    except ValueError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except Exception as exc:  # noqa: BLE001
        sys.stderr.write(f"failed: {type(exc).__name__}: {exc}\n")
        return 2


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
