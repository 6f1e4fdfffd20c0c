"""Command-line entry point: extract, train, evaluate, compare, synth.

Exit codes: 0 success, 1 usage error, 2 data or parse error, 3 numeric
failure. The SESN_LOG environment variable (error, info, debug) controls
verbosity. All randomness flows from --seed, which defaults to 0, so every
run is reproducible by default.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .audio import (HpdFeature, dump_feature, extract_hpd, load_feature,
                    read_wav, save_feature)
from .blocks import BlockKind
from .data import LABEL_TO_INDEX, SCENE_LABELS, load_manifest, synth_dataset
from .errors import ConfigError, InputError, NumericError, ParseError, SesnError
from .evaluation import confusion, confusion_csv, grid_csv, grid_text, significance_grid
from .network import (BlockConfig, NetworkConfig, build_model,
                      format_network_config, load_network_config)
from .serialize import load_arrays, save_arrays
from .tensor import Tensor
from .training import SplitData, TrainConfig, save_record, train_multi

log = logging.getLogger("sesn.cli")

KIND_NAMES = tuple(k.value for k in BlockKind)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems via exception, not SystemExit."""

    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{self.prog}: {message}")


# -- shared helpers ----------------------------------------------------------

def _load_feature_dir(path: Path) -> Tuple[np.ndarray, np.ndarray, List[str]]:
    """Stack every .hpdf file in a directory, sorted by file name."""
    files = sorted(path.glob("*.hpdf"))
    if not files:
        raise InputError(f"no .hpdf feature files in {path}")
    feats = [load_feature(f) for f in files]
    shapes = {f.values.shape for f in feats}
    if len(shapes) != 1:
        raise InputError(f"{path} mixes feature shapes: {sorted(shapes)}")
    x = np.stack([f.values for f in feats]).astype(np.float64)
    y = np.array([f.label for f in feats], dtype=np.int64)
    return x, y, [f.clip_id for f in feats]


def _dataset_sha256(ids: List[str], labels: np.ndarray) -> str:
    digest = hashlib.sha256()
    for clip_id, label in zip(ids, labels):
        digest.update(f"{clip_id}\t{int(label)}\n".encode("utf-8"))
    return digest.hexdigest()


def _class_names(num_classes: int) -> List[str]:
    if num_classes == len(SCENE_LABELS):
        return list(SCENE_LABELS)
    return [f"class_{i}" for i in range(num_classes)]


# -- extract -----------------------------------------------------------------

def _clip_id_for(relpath: str) -> str:
    p = Path(relpath)
    return str(p.with_suffix("")).replace(os.sep, "/")


def _extract_one(audio_path: str, relpath: str, label_index: int):
    """Worker: returns (relpath, serialized feature or None, error or None)."""
    try:
        clip = read_wav(audio_path)
        feature = extract_hpd(clip, label_index, clip_id=_clip_id_for(relpath))
        return relpath, dump_feature(feature), None
    except FileNotFoundError:
        return relpath, None, f"{audio_path}: file not found"
    except SesnError as exc:
        return relpath, None, str(exc)


def cmd_extract(args) -> int:
    manifest = load_manifest(args.manifest)
    audio_dir = Path(args.audio_dir)
    out_dir = Path(args.out_dir)
    tasks = [(str(audio_dir / rel), rel, LABEL_TO_INDEX[label])
             for rel, label in manifest.entries]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_extract_one, *zip(*tasks)))
    else:
        results = [_extract_one(*t) for t in tasks]
    ok = 0
    failures = []
    for relpath, payload, error in results:
        if payload is None:
            failures.append((relpath, error))
            continue
        target = (out_dir / relpath).with_suffix(".hpdf")
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(payload)
        ok += 1
    for relpath, error in failures:
        print(f"FAIL {relpath}: {error}", file=sys.stderr)
    print(f"extracted {ok} of {len(tasks)} clips, {len(failures)} failures")
    if failures and not args.skip_bad:
        return 2
    return 0


# -- synth -------------------------------------------------------------------

def _write_split(out_dir: Path, split: str, classes: int, per_class: int,
                 shape, seed: int) -> None:
    features, labels = synth_dataset(classes, per_class, shape, seed)
    split_dir = out_dir / split
    split_dir.mkdir(parents=True, exist_ok=True)
    for i in range(features.shape[0]):
        clip_id = f"{split}_{i:04d}"
        save_feature(split_dir / f"{clip_id}.hpdf",
                     HpdFeature(features[i].astype(np.float32),
                                int(labels[i]), clip_id))


def _reduced_config(shape, classes: int) -> NetworkConfig:
    """A small network whose pooling divides the synthetic feature shape."""
    mels, frames, channels = shape
    pools = [(2, 2), (2, 2), (2, 5)]
    filters = [4, 8, 16]
    blocks = tuple(BlockConfig(f, 2, p, 0.0) for f, p in zip(filters, pools))
    return NetworkConfig(blocks=blocks, dense_units=32, head_dropout=0.0,
                         num_classes=classes,
                         input_shape=(mels, frames, channels))


def cmd_synth(args) -> int:
    out_dir = Path(args.out_dir)
    shape = (args.mels, args.frames, args.channels)
    _write_split(out_dir, "train", args.classes, args.per_class, shape, args.seed)
    _write_split(out_dir, "val", args.classes, args.val_per_class, shape,
                 args.seed + 1)
    if args.config_out:
        cfg = _reduced_config(shape, args.classes)
        Path(args.config_out).write_text(format_network_config(cfg),
                                         encoding="utf-8")
    n_train = args.classes * args.per_class
    n_val = args.classes * args.val_per_class
    print(f"wrote {n_train} train and {n_val} val features to {out_dir}")
    return 0


# -- train -------------------------------------------------------------------

def cmd_train(args) -> int:
    if args.config:
        net_cfg = load_network_config(args.config)
    else:
        net_cfg = NetworkConfig()
    if args.block_kind:
        net_cfg = replace(net_cfg, block_kind=BlockKind.from_name(args.block_kind))
    features_dir = Path(args.features_dir)
    train_x, train_y, _ = _load_feature_dir(features_dir / "train")
    val_x, val_y, _ = _load_feature_dir(features_dir / "val")
    if train_x.shape[1:] != net_cfg.input_shape:
        raise InputError(f"features are {train_x.shape[1:]}, network expects "
                         f"{net_cfg.input_shape}")
    data = SplitData(train_x, train_y, val_x, val_y)
    train_cfg = TrainConfig(max_epochs=args.max_epochs,
                            early_stop_patience=args.early_stop,
                            lr_decay_patience=args.lr_patience,
                            initial_lr=args.lr, batch_size=args.batch_size,
                            seed=args.seed, runs=args.runs)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log.info("training %s for %d run(s)", net_cfg.block_kind.value, args.runs)
    records, summary, models = train_multi(
        lambda seed: build_model(net_cfg, seed), data, train_cfg)
    for record, model in zip(records, models):
        ckpt = out_dir / f"run_{record.run_index}.sesn"
        save_arrays(ckpt, {k: t.data for k, t in model.named_arrays().items()})
        Path(str(ckpt) + ".cfg").write_text(format_network_config(net_cfg),
                                            encoding="utf-8")
        record.checkpoint = ckpt.name
        save_record(out_dir / f"run_{record.run_index}.jsonl", record)
    payload = {
        "block_kind": net_cfg.block_kind.value,
        "runs": len(records),
        "mean_accuracy": summary.mean_accuracy,
        "std_accuracy": summary.std_accuracy,
        "single_run": summary.single_run,
        "accuracies": list(summary.accuracies),
    }
    (out_dir / "summary.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    print(f"mean accuracy {summary.mean_accuracy:.4f} "
          f"+/- {summary.std_accuracy:.4f} over {len(records)} run(s)")
    return 0


# -- evaluate ----------------------------------------------------------------

def cmd_evaluate(args) -> int:
    ckpt_path = Path(args.checkpoint)
    cfg_path = Path(str(ckpt_path) + ".cfg")
    if not cfg_path.exists():
        raise InputError(f"missing network config sidecar {cfg_path}")
    net_cfg = load_network_config(cfg_path)
    model = build_model(net_cfg, seed=0)
    model.load_state(load_arrays(ckpt_path))
    x, y, ids = _load_feature_dir(Path(args.features_dir))
    if x.shape[1:] != net_cfg.input_shape:
        raise InputError(f"features are {x.shape[1:]}, checkpoint expects "
                         f"{net_cfg.input_shape}")
    preds = []
    for start in range(0, x.shape[0], args.batch_size):
        probs = model.forward(Tensor(x[start:start + args.batch_size],
                                     requires_grad=False), training=False)
        preds.append(np.argmax(probs.data, axis=1))
    preds = np.concatenate(preds)
    matrix = confusion(preds, y, net_cfg.num_classes)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = ckpt_path.stem
    (out_dir / f"{stem}.confusion.csv").write_text(
        confusion_csv(matrix, _class_names(net_cfg.num_classes)), encoding="utf-8")
    correct = (preds == y).astype(int)
    lines = [f"# checkpoint: {ckpt_path.name}",
             f"# dataset_sha256: {_dataset_sha256(ids, y)}"]
    lines.extend(str(int(v)) for v in correct)
    (out_dir / f"{stem}.correctness.txt").write_text(
        "\n".join(lines) + "\n", encoding="utf-8")
    print(f"accuracy {matrix.accuracy:.4f} over {x.shape[0]} items")
    return 0


# -- compare -----------------------------------------------------------------

def _read_correctness(path: Path) -> Tuple[str, np.ndarray]:
    """Returns (dataset hash, 0/1 vector) from a correctness file."""
    dataset_hash = None
    values = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(),
                                  start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            if stripped.startswith("# dataset_sha256:"):
                dataset_hash = stripped.split(":", 1)[1].strip()
            continue
        if stripped not in ("0", "1"):
            raise ParseError(f"{path} line {lineno}: expected 0 or 1, "
                             f"got {stripped!r}")
        values.append(int(stripped))
    if dataset_hash is None:
        raise ParseError(f"{path}: missing '# dataset_sha256:' header")
    if not values:
        raise ParseError(f"{path}: no correctness entries")
    return dataset_hash, np.array(values, dtype=np.int64)


def cmd_compare(args) -> int:
    paths = [Path(p) for p in args.correctness_files]
    if len(paths) < 2:
        raise InputError("need at least two correctness files to compare")
    hashes = []
    vectors = []
    names = []
    for path in paths:
        h, v = _read_correctness(path)
        hashes.append(h)
        vectors.append(v)
        names.append(path.stem.replace(".correctness", ""))
    if len(set(hashes)) != 1:
        raise InputError("correctness files were computed on different datasets "
                         "(dataset_sha256 headers differ)")
    cells = significance_grid(names, vectors)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "grid.csv").write_text(grid_csv(cells), encoding="utf-8")
    (out_dir / "grid.txt").write_text(grid_text(names, cells), encoding="utf-8")
    significant = sum(1 for c in cells if c.result.significant_at_0_05)
    print(f"compared {len(names)} systems, {len(cells)} pairs, "
          f"{significant} significant at 0.05")
    return 0


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sesn",
                     description="Acoustic scene classification toolkit: "
                                 "feature extraction, training, evaluation "
                                 "and significance analysis.")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("extract", help="turn WAV clips into feature files")
    p.add_argument("--audio-dir", required=True, help="root of the WAV tree")
    p.add_argument("--manifest", required=True,
                   help="TSV of relative path and scene label")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--jobs", type=int, default=1,
                   help="parallel extraction workers")
    p.add_argument("--skip-bad", action="store_true",
                   help="exit 0 even if some clips fail")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("synth", help="generate a synthetic desk-scale dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--per-class", type=int, default=4,
                   help="training samples per class")
    p.add_argument("--val-per-class", type=int, default=2,
                   help="validation samples per class")
    p.add_argument("--mels", type=int, default=8)
    p.add_argument("--frames", type=int, default=20)
    p.add_argument("--channels", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config-out",
                   help="also write a reduced network config matching the "
                        "synthetic shape")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one block kind, one or more runs")
    p.add_argument("--features-dir", required=True,
                   help="directory with train/ and val/ feature subdirectories")
    p.add_argument("--config", help="network config file (default: reference "
                                    "architecture)")
    p.add_argument("--block-kind", choices=KIND_NAMES,
                   help="override the configured block kind")
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--max-epochs", type=int, default=500)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--early-stop", type=int, default=50,
                   help="early-stopping patience in epochs")
    p.add_argument("--lr-patience", type=int, default=20,
                   help="epochs without improvement before halving the rate")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on a feature set")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features-dir", required=True,
                   help="directory of .hpdf files to score")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--batch-size", type=int, default=32)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="pairwise McNemar significance grid")
    p.add_argument("--correctness-files", nargs="+", required=True)
    p.add_argument("--out", required=True, help="output directory for the grid")
    p.set_defaults(func=cmd_compare)

    return parser


def _configure_logging() -> None:
    level_name = os.environ.get("SESN_LOG", "error").lower()
    level = {"error": logging.ERROR, "info": logging.INFO,
             "debug": logging.DEBUG}.get(level_name, logging.ERROR)
    logging.basicConfig(level=level,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv: Optional[List[str]] = None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except SystemExit as exc:   # --help and --version exit via argparse
        return int(exc.code or 0)
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (ParseError, InputError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
