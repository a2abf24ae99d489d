"""Command-line entry point.

Subcommands cover the whole workflow: ``convert`` external layouts to the
canonical JSONL, ``synth`` a test dataset, ``train`` / ``eval`` / ``predict``
/ ``saliency`` a classifier, and ``serve`` the annotation review service.

Exit codes: 0 success, 1 validation/usage error, 2 runtime failure.
Identical inputs, flags and seeds produce identical output artifacts
(training history timing excepted).
"""

from __future__ import annotations

import argparse
import json
import logging
import socket
import sys
from pathlib import Path

from . import adapters, data, metrics, net, synth, training
from .pose import Subset

log = logging.getLogger("eyecontact")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # exit 1 instead of argparse's default 2
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="eyecontact", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("convert", help="import an external layout and write canonical JSONL")
    p.add_argument("--layout", required=True, choices=[l.value for l in adapters.Layout])
    p.add_argument("--in", dest="src", required=True, help="dataset file or directory")
    p.add_argument("--out", required=True, help="canonical JSONL to write")
    p.add_argument("--strict", action="store_true", help="reject unknown fields")

    p = sub.add_parser("synth", help="generate a synthetic skeleton dataset")
    p.add_argument("--n-images", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--peds-min", type=int, default=1)
    p.add_argument("--peds-max", type=int, default=3)
    p.add_argument("--yaw-threshold", type=float, default=0.35)
    p.add_argument("--noise-sigma", type=float, default=0.0)

    p = sub.add_parser("train", help="train the classifier on a canonical dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint JSON to write")
    p.add_argument("--subset", choices=[s.value for s in Subset], default="full")
    p.add_argument("--lr", type=float, default=training.DEFAULT_LEARNING_RATE)
    p.add_argument("--batch-size", type=int, default=training.DEFAULT_BATCH_SIZE)
    p.add_argument("--epochs", type=int, default=training.DEFAULT_EPOCHS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dropout", type=float, default=net.DEFAULT_DROPOUT)
    p.add_argument("--history", help="optional JSONL of per-epoch loss/AP")

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--report", required=True, help="report JSON to write")
    p.add_argument("--tag", default="", help="dataset tag recorded in the report")
    p.add_argument("--text", action="store_true", help="also print an aligned text row")

    p = sub.add_parser("predict", help="score matched instances and emit pre-labels")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True, help="JSONL of per-instance scores")
    p.add_argument("--threshold", type=float, default=0.5)

    p = sub.add_parser("saliency", help="per-keypoint gradient saliency of a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True, help="CSV to write")
    p.add_argument("--split", choices=["train", "val", "test"], default="train")

    p = sub.add_parser("serve", help="run the annotation review service")
    p.add_argument("--data", required=True, help="canonical JSONL to review")
    p.add_argument("--store", help="store file (default: <data>.store.json)")
    p.add_argument("--ckpt", help="optional checkpoint for pre-labels")
    p.add_argument("--media-dir", help="directory with image files for /media")
    p.add_argument("--frontend-dir", help="static review UI directory")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--prelabel-threshold", type=float, default=0.5)

    return parser


def _require_exists(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"input path does not exist: {path}")
    return p


def _load_samples(records, split: data.Split, subset: Subset) -> list[training.TrainSample]:
    split_records = [r for r in records if r.split is split]
    matched = metrics.match_records(split_records, labeled_only=True)
    indices = list(subset.value_indices)
    return [
        training.TrainSample(x=m.features[indices], y=1 if m.label is data.Vote.LOOKING else 0)
        for m in matched
    ]


def cmd_convert(args) -> int:
    records = adapters.import_dataset(args.layout, _require_exists(args.src), strict=args.strict)
    data.write_jsonl(records, args.out)
    log.info("wrote %d records to %s", len(records), args.out)
    return 0


def cmd_synth(args) -> int:
    cfg = synth.SynthConfig(
        n_images=args.n_images,
        peds_per_image=(args.peds_min, args.peds_max),
        yaw_threshold=args.yaw_threshold,
        noise_sigma=args.noise_sigma,
        seed=args.seed,
    )
    records = synth.synth_generate(cfg)
    data.write_jsonl(records, args.out)
    n_instances = sum(len(r.instances) for r in records)
    log.info("wrote %d images / %d instances to %s", len(records), n_instances, args.out)
    return 0


def cmd_train(args) -> int:
    records = data.read_jsonl(_require_exists(args.data))
    subset = Subset(args.subset)
    train_set = _load_samples(records, data.Split.TRAIN, subset)
    val_set = _load_samples(records, data.Split.VAL, subset)
    cfg = training.TrainConfig(
        learning_rate=args.lr,
        batch_size=args.batch_size,
        epochs=args.epochs,
        seed=args.seed,
        subset=subset,
    )
    arch = net.NetworkArch(input_dim=subset.input_dim, dropout_rate=args.dropout)
    log.info(
        "training on %d samples (%d val), subset=%s, %d trainable parameters",
        len(train_set), len(val_set), subset.value, net.param_count(arch),
    )
    params, history = training.train(train_set, val_set, cfg, arch)
    net.save_checkpoint(params, subset, args.out)
    if args.history:
        training.write_history(history, args.history)
    last = history[-1]
    log.info(
        "done: train_loss=%.4f val_ap=%s -> %s",
        last.train_loss,
        f"{last.val_ap:.4f}" if last.val_ap is not None else "n/a",
        args.out,
    )
    return 0


def cmd_eval(args) -> int:
    records = data.read_jsonl(_require_exists(args.data))
    params, subset = net.load_checkpoint(_require_exists(args.ckpt))
    report = metrics.evaluate(params, subset, records, dataset_tag=args.tag)
    Path(args.report).write_text(json.dumps(report.to_dict()), encoding="utf-8")
    if args.text:
        print(report.to_text())
    log.info(
        "eval: ap_mean=%.4f ap_std=%.4f recall=%.4f (%d/%d matched) -> %s",
        report.ap_mean, report.ap_std, report.recall_iou50,
        report.n_matched, report.n_gt, args.report,
    )
    return 0


def cmd_predict(args) -> int:
    records = data.read_jsonl(_require_exists(args.data))
    params, subset = net.load_checkpoint(_require_exists(args.ckpt))
    matched = metrics.match_records(records, labeled_only=False)
    scores = metrics.score_matched(params, subset, matched)
    with open(args.out, "w", encoding="utf-8") as fh:
        for m, score in zip(matched, scores):
            fh.write(
                json.dumps(
                    {
                        "image_id": m.image_id,
                        "instance_index": m.instance_index,
                        "score": float(score),
                        "pre_label": "looking" if score >= args.threshold else "not_looking",
                    }
                )
            )
            fh.write("\n")
    log.info("scored %d instances -> %s", len(matched), args.out)
    return 0


def cmd_saliency(args) -> int:
    records = data.read_jsonl(_require_exists(args.data))
    params, subset = net.load_checkpoint(_require_exists(args.ckpt))
    samples = _load_samples(records, data.Split(args.split), subset)
    if not samples:
        raise UsageError(f"no labeled matched samples in split {args.split!r}")
    report = training.saliency(params, samples, subset)
    Path(args.out).write_text(report.to_csv(), encoding="utf-8")
    log.info("saliency over %d samples -> %s", len(samples), args.out)
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .server import AnnotationStore, create_app

    records = data.read_jsonl(_require_exists(args.data))
    store_path = args.store or f"{args.data}.store.json"
    store = AnnotationStore.open(records, store_path)
    checkpoint = None
    if args.ckpt:
        checkpoint = net.load_checkpoint(_require_exists(args.ckpt))
    app = create_app(
        store,
        checkpoint=checkpoint,
        media_dir=args.media_dir,
        frontend_dir=args.frontend_dir,
        prelabel_threshold=args.prelabel_threshold,
    )
    # Probe the port up front for a clean diagnostic instead of a traceback.
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as probe:
        try:
            probe.bind((args.host, args.port))
        except OSError as exc:
            raise RuntimeError(f"cannot bind {args.host}:{args.port}: {exc}") from exc
    log.info("serving %d images on http://%s:%d (store: %s)", len(store.records), args.host, args.port, store_path)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


_COMMANDS = {
    "convert": cmd_convert,
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "saliency": cmd_saliency,
    "serve": cmd_serve,
}


def run_cli(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        log.error("%s", exc)
        return 1
    except (data.SchemaError, ValueError) as exc:
        log.error("%s", exc)
        return 1
    except Exception as exc:  # noqa: BLE001 - boundary: report and exit 2
        log.error("%s", exc, exc_info=True)
        return 2


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
