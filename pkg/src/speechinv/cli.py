"""Configuration-driven experiment runner.

Verbs: synth, featurize, train, eval, ablate, gridsearch, compare, plotdata.
Every command writes its artifacts plus a run.json provenance record (config
hash, seed, toolkit version, input and output hashes). Wall-clock timings go
to separate files (epochs.csv, timings.csv) that are excluded from the
provenance hashes, so everything hashed is byte-reproducible under a seed.

Exit codes: 0 success, 1 validation or I/O error, 2 runtime/numerical error.
"""

import argparse
import hashlib
import json
import os
import shutil
import sys
from dataclasses import replace

import numpy as np

from . import __version__, metrics, training
from .corpus import load_manifest, save_corpus, split_speakers
from .errors import (
    BadAlignment,
    BadLabel,
    BadSpec,
    BadTensorFile,
    DimensionMismatch,
    EmptyAudio,
    InsufficientSpeakers,
    ManifestError,
    MissingTensor,
    SpeechInvError,
    TooShort,
)
from .frontend import featurize_segment
from .model import Model, ModelConfig, count_params, init_params, load_checkpoint, save_checkpoint
from .synth import SynthSpec, generate_synthetic
from .tensorio import write_tensor
from .training import TrainConfig, grid_search, prepare_examples, train

VOLATILE_FILES = ("run.json", "epochs.csv", "timings.csv")
DEFAULT_ALPHAS = (0.0, 0.1, 0.3, 0.5, 0.8, 1.0)

PROFILES = {
    "desk": {
        "model": {"hidden": 16, "dense": 32, "n_layers": 3},
        "synth": {"n_speakers": 3, "utterances_per_speaker": 50},
        "train": {"batch_size": 16, "max_epochs": 60},
        "split": {"n_train_speakers": 1},
    },
    "paper": {
        "model": {"hidden": 218, "dense": 400, "n_layers": 3},
        "synth": {"n_speakers": 8, "utterances_per_speaker": 90},
        "train": {"batch_size": 128, "max_epochs": 200},
        "split": {"n_train_speakers": 6},
    },
}

_SYNTH_KEYS = {
    "n_speakers", "utterances_per_speaker", "cutoff_hz", "noise_level",
    "speaker_spread", "map_spread", "sensor_noise", "min_active_frames", "audio_format",
}
_TRAIN_KEYS = {
    "algorithm", "alpha", "patience", "base_lr", "lr_hold_epochs",
    "lr_decay_interval", "lr_decay_factor", "batch_size", "max_epochs",
    "early_stop_rule", "selector",
}
_MODEL_KEYS = {"hidden", "dense", "n_layers"}


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad usage; we reserve 2 for runtime errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _load_config_file(path):
    if path.endswith(".toml"):
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib

        with open(path, "rb") as fh:
            return tomllib.load(fh)
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as e:
            raise BadSpec(f"unparseable config {path}: {e}") from None


def _merge(base, override):
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def resolve_config(args):
    """Profile defaults overlaid with the config file's sections."""
    config = {k: dict(v) for k, v in PROFILES[args.profile].items()}
    config.setdefault("eval", {})
    config.setdefault("ablate", {})
    config.setdefault("gridsearch", {})
    config.setdefault("featurize", {})
    if args.config:
        config = _merge(config, _load_config_file(args.config))
    for section, allowed in (
        ("synth", _SYNTH_KEYS),
        ("train", _TRAIN_KEYS),
        ("model", _MODEL_KEYS),
    ):
        unknown = set(config.get(section, {})) - allowed
        if unknown:
            raise BadSpec(f"unknown {section} config keys: {sorted(unknown)}")
    return config


def _seed_of(args, default=0):
    return default if args.seed is None else args.seed


def _model_config(config, multi_task: bool) -> ModelConfig:
    m = config["model"]
    return ModelConfig(
        hidden=m["hidden"], dense=m["dense"], n_layers=m["n_layers"], multi_task=multi_task
    )


def _train_config(config, seed: int) -> TrainConfig:
    return TrainConfig(seed=seed, **config["train"])


def _synth_spec(config, seed: int) -> SynthSpec:
    kwargs = {k: v for k, v in config["synth"].items() if k != "audio_format"}
    return SynthSpec(seed=seed, **kwargs)


def prepare_out_dir(path, overwrite: bool):
    if os.path.exists(path) and os.listdir(path):
        if not overwrite:
            raise FileExistsError(
                f"output directory {path} is not empty; pass --overwrite to replace it"
            )
        shutil.rmtree(path)
    os.makedirs(path, exist_ok=True)


def _sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _hash_tree(root) -> dict:
    """Relative path -> sha256 for every non-volatile file under root."""
    hashes = {}
    for dirpath, _, filenames in os.walk(root):
        for name in sorted(filenames):
            if name in VOLATILE_FILES:
                continue
            full = os.path.join(dirpath, name)
            rel = os.path.relpath(full, root)
            hashes[rel.replace(os.sep, "/")] = _sha256_file(full)
    return hashes


def write_run_record(out_dir, command, seed, config, inputs):
    """Provenance record; inputs maps a label to a file or directory path.

    Input and output hashes are keyed by paths relative to their roots, so the
    record is byte-identical across reruns in different locations.
    """
    input_hashes = {}
    for label, path in inputs.items():
        if path is None:
            continue
        if os.path.isdir(path):
            input_hashes[label] = _hash_tree(path)
        else:
            input_hashes[label] = {os.path.basename(path): _sha256_file(path)}
    config_blob = json.dumps(config, sort_keys=True).encode()
    record = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config": config,
        "config_hash": hashlib.sha256(config_blob).hexdigest(),
        "input_hashes": input_hashes,
        "output_hashes": _hash_tree(out_dir),
    }
    with open(os.path.join(out_dir, "run.json"), "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _require(args, *fields):
    for f in fields:
        if getattr(args, f, None) is None:
            raise BadSpec(f"--{f.replace('_', '-')} is required for this command")


def _load_examples(corpus_dir):
    utterances, inventory, sample_rate = load_manifest(corpus_dir)
    return utterances


def _split_examples(utterances, config, seed):
    split = split_speakers(utterances, config["split"]["n_train_speakers"], seed)
    by_id = {u.id: u for u in utterances}
    return split, {
        part: prepare_examples([by_id[i] for i in getattr(split, part)])
        for part in ("train", "dev", "test")
    }


def _write_split_json(split, out_dir):
    payload = {
        "train": split.train,
        "dev": split.dev,
        "test": split.test,
        "speaker_assignment": split.speaker_assignment,
    }
    with open(os.path.join(out_dir, "split.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_synth(args) -> int:
    _require(args, "out")
    config = resolve_config(args)
    seed = _seed_of(args)
    spec = _synth_spec(config, seed)
    utterances = generate_synthetic(spec)
    prepare_out_dir(args.out, args.overwrite)
    save_corpus(utterances, args.out, audio_format=config["synth"].get("audio_format", "f32"))
    write_run_record(args.out, "synth", seed, config, {"config": args.config})
    print(f"wrote {len(utterances)} utterances to {args.out}")
    return 0


def cmd_featurize(args) -> int:
    _require(args, "corpus", "out")
    config = resolve_config(args)
    seed = _seed_of(args)
    pre_emphasis = config["featurize"].get("pre_emphasis", 0.0)
    utterances = _load_examples(args.corpus)
    prepare_out_dir(args.out, args.overwrite)
    feature_dir = os.path.join(args.out, "features")
    os.makedirs(feature_dir)
    for u in utterances:
        feats = featurize_segment(u.audio, pre_emphasis=pre_emphasis)
        write_tensor(os.path.join(feature_dir, f"{u.id}.atv"), feats.astype(np.float32))
    write_run_record(
        args.out, "featurize", seed, config, {"config": args.config, "corpus": args.corpus}
    )
    print(f"wrote features for {len(utterances)} utterances to {feature_dir}")
    return 0


def cmd_train(args) -> int:
    _require(args, "corpus", "out")
    config = resolve_config(args)
    seed = _seed_of(args)
    cfg = _train_config(config, seed)
    cfg.validate()
    utterances = _load_examples(args.corpus)
    split, examples = _split_examples(utterances, config, seed)
    mcfg = _model_config(config, multi_task=cfg.algorithm != "single_task")
    model = Model(init_params(mcfg, seed))
    result = train(model, examples["train"], examples["dev"], cfg)
    prepare_out_dir(args.out, args.overwrite)
    _write_split_json(split, args.out)
    save_checkpoint(
        result.params,
        os.path.join(args.out, "checkpoint"),
        seed=seed,
        epoch=result.best_epoch,
        algorithm=cfg.algorithm,
    )
    training.write_epochs_csv(result.logs, os.path.join(args.out, "epochs.csv"))
    summary = {
        "algorithm": cfg.algorithm,
        "best_epoch": result.best_epoch,
        "epochs_run": len(result.logs),
        "total_steps": result.total_steps,
        "diverged": result.diverged,
        "final_val_loss": result.logs[-1].val_loss if result.logs else None,
        "param_count": count_params(result.params),
    }
    with open(os.path.join(args.out, "train_summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_run_record(
        args.out, "train", seed, config, {"config": args.config, "corpus": args.corpus}
    )
    if result.diverged:
        print("training diverged; wrote the last retained checkpoint", file=sys.stderr)
        return 2
    print(
        f"trained {cfg.algorithm} for {len(result.logs)} epochs "
        f"(best epoch {result.best_epoch}); checkpoint in {args.out}/checkpoint"
    )
    return 0


def cmd_eval(args) -> int:
    _require(args, "corpus", "out", "checkpoint")
    config = resolve_config(args)
    params, header = load_checkpoint(args.checkpoint)
    split_seed = args.seed if args.seed is not None else (header.get("seed") or 0)
    utterances = _load_examples(args.corpus)
    _, examples = _split_examples(utterances, config, split_seed)
    model = Model(params)
    per_utterance = bool(config["eval"].get("per_utterance", False))
    report = metrics.evaluate_model(model, examples["test"], per_utterance=per_utterance)
    prepare_out_dir(args.out, args.overwrite)
    with open(os.path.join(args.out, "eval.json"), "w") as fh:
        fh.write(report.to_json())
    with open(os.path.join(args.out, "eval.txt"), "w") as fh:
        fh.write(report.to_text())
    write_run_record(
        args.out,
        "eval",
        split_seed,
        config,
        {"config": args.config, "corpus": args.corpus, "checkpoint": args.checkpoint},
    )
    print(report.to_text(), end="")
    return 0


def _graft_phoneme_head(single_params, mcfg: ModelConfig, seed: int):
    """Multi-task parameters whose trunk and TV head come from a single-task run.

    The phoneme head keeps its fresh initialization, exactly as if joint
    training had run with a zero phoneme-loss weight.
    """
    multi = init_params(replace(mcfg, multi_task=True), seed)
    arrays = multi.as_dict()
    for name, value in single_params.named():
        arrays[name][...] = value
    return multi


def cmd_ablate(args) -> int:
    _require(args, "corpus", "out")
    config = resolve_config(args)
    seed = _seed_of(args)
    alphas = config["ablate"].get("alphas", list(DEFAULT_ALPHAS))
    utterances = _load_examples(args.corpus)
    _, examples = _split_examples(utterances, config, seed)
    mcfg = _model_config(config, multi_task=True)
    base = _train_config(config, seed)
    rows = []
    for alpha in alphas:
        try:
            if alpha == 0.0:
                cfg = replace(base, algorithm="single_task", alpha=0.0)
                model = Model(init_params(replace(mcfg, multi_task=False), seed))
                result = train(model, examples["train"], examples["dev"], cfg)
                eval_params = _graft_phoneme_head(result.params, mcfg, seed)
            else:
                cfg = replace(base, algorithm="mtl_algo2", alpha=alpha)
                model = Model(init_params(mcfg, seed))
                result = train(model, examples["train"], examples["dev"], cfg)
                eval_params = result.params
            report = metrics.evaluate_model(Model(eval_params), examples["test"])
            avg = report.average_ppmc
            acc = report.phoneme_accuracy_excl_pad
            rows.append(
                (alpha, f"{avg:.4f}" if avg is not None else "undef",
                 f"{100 * acc:.2f}" if acc is not None else "undef", "ok")
            )
        except SpeechInvError as e:
            rows.append((alpha, "failed", "failed", f"failed: {e}"))
    rows.sort(key=lambda r: r[0])
    prepare_out_dir(args.out, args.overwrite)
    headers = ["alpha", "average_ppmc", "phoneme_accuracy_pct", "status"]
    metrics.write_csv(os.path.join(args.out, "ablation.csv"), headers, rows)
    table = metrics.render_table(headers, rows)
    with open(os.path.join(args.out, "ablation.txt"), "w") as fh:
        fh.write(table + "\n")
    write_run_record(
        args.out, "ablate", seed, config, {"config": args.config, "corpus": args.corpus}
    )
    print(table)
    return 0


def cmd_gridsearch(args) -> int:
    _require(args, "corpus", "out")
    config = resolve_config(args)
    seed = _seed_of(args)
    utterances = _load_examples(args.corpus)
    _, examples = _split_examples(utterances, config, seed)
    base = _train_config(config, seed)
    mcfg = _model_config(config, multi_task=base.algorithm != "single_task")
    lr_grid = tuple(config["gridsearch"].get("lr_grid", (1e-3, 3e-4, 1e-4)))
    batch_grid = tuple(config["gridsearch"].get("batch_grid", (16, 32, 64, 128)))
    result = grid_search(
        examples["train"], examples["dev"], base, mcfg, lr_grid=lr_grid, batch_grid=batch_grid
    )
    prepare_out_dir(args.out, args.overwrite)
    headers = ["lr", "batch_size", "seed", "dev_ppmc", "status"]
    rows = [
        (c.lr, c.batch_size, c.seed,
         f"{c.score:.4f}" if c.score is not None else "failed", c.status)
        for c in result.rows
    ]
    metrics.write_csv(os.path.join(args.out, "grid.csv"), headers, rows)
    table = metrics.render_table(headers, rows)
    with open(os.path.join(args.out, "grid.txt"), "w") as fh:
        fh.write(table + "\n")
    with open(os.path.join(args.out, "best.json"), "w") as fh:
        json.dump({"lr": result.best_lr, "batch_size": result.best_batch}, fh, sort_keys=True)
        fh.write("\n")
    write_run_record(
        args.out, "gridsearch", seed, config, {"config": args.config, "corpus": args.corpus}
    )
    print(table)
    print(f"best: lr={result.best_lr}, batch_size={result.best_batch}")
    return 0


def cmd_compare(args) -> int:
    _require(args, "corpus", "out")
    config = resolve_config(args)
    seed = _seed_of(args)
    utterances = _load_examples(args.corpus)
    _, examples = _split_examples(utterances, config, seed)
    base = _train_config(config, seed)
    rows = []
    timing_rows = []
    for algorithm in ("single_task", "mtl_algo1", "mtl_algo2"):
        cfg = replace(base, algorithm=algorithm)
        mcfg = _model_config(config, multi_task=algorithm != "single_task")
        model = Model(init_params(mcfg, seed))
        result = train(model, examples["train"], examples["dev"], cfg)
        report = metrics.evaluate_model(
            Model(result.params), examples["test"], train_seconds=result.train_seconds
        )
        row = [algorithm]
        for name in metrics.TV_NAMES:
            v = report.per_tv_ppmc[name]
            row.append(f"{v:.4f}" if v is not None else "undef")
        row.append(f"{report.average_ppmc:.4f}" if report.average_ppmc is not None else "undef")
        row.append(report.param_count)
        rows.append(row)
        timing_rows.append(
            (algorithm, f"{result.train_seconds:.3f}", len(result.logs),
             f"{result.train_seconds / max(len(result.logs), 1):.3f}")
        )
    prepare_out_dir(args.out, args.overwrite)
    headers = ["model"] + list(metrics.TV_NAMES) + ["average", "params"]
    metrics.write_csv(os.path.join(args.out, "compare.csv"), headers, rows)
    table = metrics.render_table(headers, rows)
    with open(os.path.join(args.out, "compare.txt"), "w") as fh:
        fh.write(table + "\n")
    metrics.write_csv(
        os.path.join(args.out, "timings.csv"),
        ["model", "train_seconds", "epochs", "seconds_per_epoch"],
        timing_rows,
    )
    write_run_record(
        args.out, "compare", seed, config, {"config": args.config, "corpus": args.corpus}
    )
    print(table)
    return 0


def cmd_plotdata(args) -> int:
    _require(args, "corpus", "out", "model_a", "model_b", "utterance")
    config = resolve_config(args)
    utterances = _load_examples(args.corpus)
    by_id = {u.id: u for u in utterances}
    if args.utterance not in by_id:
        raise ManifestError(f"unknown utterance id {args.utterance!r}")
    u = by_id[args.utterance]
    example = prepare_examples([u])[0]
    params_a, _ = load_checkpoint(args.model_a)
    params_b, _ = load_checkpoint(args.model_b)
    pred_a = Model(params_a).forward(example.features).tv
    pred_b = Model(params_b).forward(example.features).tv
    prepare_out_dir(args.out, args.overwrite)
    rows = []
    for j, name in enumerate(metrics.TV_NAMES):
        for frame in range(u.tv_targets.shape[0]):
            rows.append(
                (frame, name, repr(float(u.tv_targets[frame, j])),
                 f"{pred_a[frame, j]:.8g}", f"{pred_b[frame, j]:.8g}")
            )
    metrics.write_csv(
        os.path.join(args.out, "plot.csv"),
        ["frame", "tv_name", "ground_truth", "multi_task", "single_task"],
        rows,
    )
    write_run_record(
        args.out,
        "plotdata",
        _seed_of(args),
        config,
        {
            "config": args.config,
            "corpus": args.corpus,
            "model_a": args.model_a,
            "model_b": args.model_b,
        },
    )
    print(f"wrote {len(rows)} rows to {args.out}/plot.csv")
    return 0


def build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON or TOML config file")
    common.add_argument("--corpus", help="corpus directory (with corpus.json)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, default=None, help="experiment seed (default 0)")
    common.add_argument(
        "--overwrite", action="store_true", help="replace a populated output directory"
    )
    common.add_argument(
        "--profile", choices=("desk", "paper"), default="desk",
        help="scale profile (desk: small and fast; paper: full-size, long-running)",
    )
    parser = _Parser(prog="speechinv", description=__doc__)
    sub = parser.add_subparsers(dest="command")
    sub.add_parser("synth", parents=[common], help="generate a synthetic corpus").set_defaults(
        func=cmd_synth
    )
    sub.add_parser("featurize", parents=[common], help="extract MFCC features").set_defaults(
        func=cmd_featurize
    )
    sub.add_parser("train", parents=[common], help="train one model").set_defaults(
        func=cmd_train
    )
    p_eval = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p_eval.add_argument("--checkpoint", help="checkpoint directory from train")
    p_eval.set_defaults(func=cmd_eval)
    sub.add_parser(
        "ablate", parents=[common], help="sweep the phoneme-loss weight"
    ).set_defaults(func=cmd_ablate)
    sub.add_parser(
        "gridsearch", parents=[common], help="lr x batch-size grid search"
    ).set_defaults(func=cmd_gridsearch)
    sub.add_parser(
        "compare", parents=[common], help="train and compare all three algorithms"
    ).set_defaults(func=cmd_compare)
    p_plot = sub.add_parser("plotdata", parents=[common], help="per-TV trajectory CSV")
    p_plot.add_argument("--model-a", dest="model_a", help="multi-task checkpoint directory")
    p_plot.add_argument("--model-b", dest="model_b", help="single-task checkpoint directory")
    p_plot.add_argument("--utterance", help="utterance id to plot")
    p_plot.set_defaults(func=cmd_plotdata)
    return parser


_VALIDATION_ERRORS = (
    BadAlignment,
    BadLabel,
    BadSpec,
    BadTensorFile,
    DimensionMismatch,
    EmptyAudio,
    InsufficientSpeakers,
    ManifestError,
    MissingTensor,
    TooShort,
    OSError,
    ValueError,
)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help()
        return 1
    try:
        return args.func(args)
    except _VALIDATION_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except SpeechInvError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
