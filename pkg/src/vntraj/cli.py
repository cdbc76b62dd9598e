"""Command-line entry point: ``vntraj {gen,inspect,train,predict,eval}``.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.
Every command writes a JSON manifest with its configuration and the SHA-256
of each input and output file.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path
from typing import Sequence

from vntraj.core.checkpoint import CheckpointError
from vntraj.core.params import LrSchedule
from vntraj.scene import SceneError, ShiftConfig, generate_synthetic, load_scenes, save_scenes
from vntraj.sngp import SngpConfig

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class UsageError(Exception):
    pass


def sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(path: Path, command: str, config: dict, seed: int | None,
                   inputs: Sequence[Path], outputs: Sequence[Path]) -> None:
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {str(p): sha256(p) for p in inputs},
        "outputs": {str(p): sha256(p) for p in outputs},
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _manifest_for(out: Path) -> Path:
    return out.with_name(out.name + ".manifest.json")


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


# ---------------------------------------------------------------- commands


def cmd_gen(args) -> int:
    if args.n < 1:
        raise UsageError(f"--n must be >= 1, got {args.n}")
    if not 0.0 <= args.shift <= 1.0:
        raise UsageError(f"--shift must lie in [0, 1], got {args.shift}")
    scenes = generate_synthetic(ShiftConfig(args.seed, args.n, args.shift))
    out = Path(args.out)
    save_scenes(scenes, out)
    write_manifest(_manifest_for(out), "gen", {"n": args.n, "shift": args.shift}, args.seed, [], [out])
    print(f"wrote {len(scenes)} scenes to {out}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    from vntraj.vectorize import vectorize_scene

    scenes = load_scenes(args.data)
    chosen = [s for s in scenes if args.scene is None or s.scene_id == args.scene]
    if not chosen:
        raise UsageError(f"scene {args.scene} not found in {args.data}")
    for s in chosen[: args.limit]:
        print(vectorize_scene(s).to_json())
    return EXIT_OK


def cmd_train(args) -> int:
    from vntraj.training import PRESETS, PretrainedMissing, Regime, TrainConfig, train

    regime = Regime(args.regime)
    if regime is Regime.SNGP_HEAD and not args.pretrained:
        raise UsageError("--pretrained is required for the sngp regime")
    if args.pretrained and not Path(args.pretrained).is_file():
        raise UsageError(f"pretrained checkpoint {args.pretrained} does not exist")
    epochs, milestones, gamma = PRESETS[regime]
    sngp = SngpConfig(args.rff_dim, args.discount, args.ridge, args.inv_lengthscale)
    cfg = TrainConfig(
        regime=regime,
        epochs=args.epochs or epochs,
        batch_size=args.batch,
        lr=args.lr,
        schedule=LrSchedule(args.lr, milestones if args.milestones is None else args.milestones,
                            gamma if args.gamma is None else args.gamma),
        seed=args.seed,
        data_fraction=args.fraction,
        sngp=sngp,
        finetune_encoder=args.finetune_encoder,
    )
    scenes = load_scenes(args.data)
    out = Path(args.out)
    log = Path(args.log) if args.log else out.with_name(out.name + ".log.jsonl")
    try:
        report, _ = train(scenes, cfg, out_path=out, log_path=log, pretrained=args.pretrained)
    except PretrainedMissing as exc:
        raise UsageError(str(exc)) from None
    for line in report.log_lines():
        print(line)
    config = {"regime": regime.value, "epochs": cfg.epochs, "batch": cfg.batch_size, "lr": cfg.lr,
              "milestones": list(cfg.schedule.milestones), "gamma": cfg.schedule.gamma,
              "fraction": cfg.data_fraction, "rff_dim": sngp.rff_dim, "discount": sngp.discount,
              "ridge": sngp.ridge, "inv_lengthscale": sngp.inv_lengthscale,
              "finetune_encoder": cfg.finetune_encoder}
    inputs = [Path(args.data)] + ([Path(args.pretrained)] if args.pretrained else [])
    write_manifest(_manifest_for(out), "train", config, args.seed, inputs, [out, log])
    return EXIT_OK


def cmd_predict(args) -> int:
    from vntraj.decoder import predict_world
    from vntraj.metrics import dumps_predictions, prediction_row
    from vntraj.training import Regime, load_model

    regime, model = _load(args.model, load_model)
    if regime is Regime.SNGP_HEAD:
        raise UsageError(f"{args.model} is an SNGP checkpoint; pass it with --sngp")
    sngp = None
    if args.sngp:
        sregime, sngp = _load(args.sngp, load_model)
        if sregime is not Regime.SNGP_HEAD:
            raise UsageError(f"{args.sngp} is not an SNGP checkpoint")
    scenes = load_scenes(args.data)
    vs = _vectorize(scenes)
    try:
        preds = model.predict(vs, args.batch)
        u = sngp.uncertainty(vs, args.batch) if sngp is not None else [None] * len(vs)
    except ValueError as exc:
        raise UsageError(f"model does not match the scene schema: {exc}") from None
    rows = [prediction_row(v.scene_id, predict_world(p, v.frame), ui) for v, p, ui in zip(vs, preds, u)]
    out = Path(args.out)
    out.write_text(dumps_predictions(rows))
    inputs = [Path(args.model), Path(args.data)] + ([Path(args.sngp)] if args.sngp else [])
    write_manifest(_manifest_for(out), "predict", {"batch": args.batch}, None, inputs, [out])
    print(f"wrote {len(rows)} predictions to {out}")
    return EXIT_OK


def _vectorize(scenes):
    from vntraj.vectorize import vectorize_scene

    return [vectorize_scene(s) for s in scenes]


def _load(path: str, loader):
    if not Path(path).is_file():
        raise UsageError(f"checkpoint {path} does not exist")
    try:
        return loader(path)
    except (CheckpointError, KeyError, ValueError) as exc:
        raise UsageError(f"cannot load checkpoint {path}: {exc}") from None


def cmd_eval(args) -> int:
    from vntraj.metrics import EvalError, evaluate, loads_predictions, summary_csv, write_reports

    try:
        preds = loads_predictions(Path(args.pred).read_text())
        result = evaluate(preds, load_scenes(args.data))
    except EvalError as exc:
        raise UsageError(str(exc)) from None
    out_dir = Path(args.out_dir)
    files = write_reports(result, out_dir, args.model_name)
    sys.stdout.write(summary_csv(args.model_name, result.summary))
    write_manifest(out_dir / "manifest.json", "eval", {"model": args.model_name}, None,
                   [Path(args.pred), Path(args.data)], list(files.values()))
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vntraj", description="Polyline-graph trajectory forecasting with "
                                "scene-level uncertainty.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate synthetic scenes")
    g.add_argument("--seed", type=int, required=True, help="generator seed")
    g.add_argument("--n", type=int, required=True, help="number of scenes")
    g.add_argument("--shift", type=float, default=0.0, help="distribution shift level in [0, 1]")
    g.add_argument("--out", required=True, help="output scene JSON file")
    g.set_defaults(func=cmd_gen)

    i = sub.add_parser("inspect", help="print vectorized scenes as JSON lines")
    i.add_argument("--data", required=True, help="scene JSON file")
    i.add_argument("--scene", default=None, help="only this scene_id")
    i.add_argument("--limit", type=int, default=1, help="maximum number of scenes to print")
    i.set_defaults(func=cmd_inspect)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--regime", choices=["multimodal", "pretrain", "sngp"], required=True)
    t.add_argument("--data", required=True, help="training scene JSON file")
    t.add_argument("--fraction", type=float, default=1.0, help="fraction of the training data to use")
    t.add_argument("--epochs", type=int, default=None, help="epochs (default: regime preset)")
    t.add_argument("--batch", type=int, default=32, help="batch size")
    t.add_argument("--lr", type=float, default=1e-3, help="initial Adam learning rate")
    t.add_argument("--milestones", type=_int_list, default=None,
                   help="comma-separated epochs where the lr decays (default: regime preset)")
    t.add_argument("--gamma", type=float, default=None, help="lr decay factor (default: 0.3)")
    t.add_argument("--seed", type=int, default=0, help="initialization and shuffling seed")
    t.add_argument("--pretrained", default=None, help="pretrained encoder checkpoint (sngp regime)")
    t.add_argument("--rff-dim", type=int, default=256, help="random Fourier feature count")
    t.add_argument("--discount", type=float, default=0.9999, help="precision recursion discount")
    t.add_argument("--ridge", type=float, default=0.1, help="precision ridge and beta prior")
    t.add_argument("--inv-lengthscale", type=float, default=0.05, help="random feature inverse lengthscale")
    t.add_argument("--finetune-encoder", action="store_true",
                   help="sngp regime: keep training the pretrained encoder instead of freezing it")
    t.add_argument("--out", required=True, help="output checkpoint")
    t.add_argument("--log", default=None, help="JSONL training log (default: <out>.log.jsonl)")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("predict", help="write world-frame predictions as JSON lines")
    r.add_argument("--model", required=True, help="multimodal or pretrain checkpoint")
    r.add_argument("--sngp", default=None, help="SNGP checkpoint for scene uncertainty")
    r.add_argument("--data", required=True, help="scene JSON file")
    r.add_argument("--batch", type=int, default=32, help="inference batch size")
    r.add_argument("--out", required=True, help="output JSONL file")
    r.set_defaults(func=cmd_predict)

    e = sub.add_parser("eval", help="score predictions and write metric reports")
    e.add_argument("--pred", required=True, help="predictions JSONL")
    e.add_argument("--data", required=True, help="scene JSON file with ground truth")
    e.add_argument("--out-dir", required=True, help="directory for CSV and SVG reports")
    e.add_argument("--model-name", default="model", help="label for the summary row")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except FloatingPointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, SceneError, CheckpointError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
