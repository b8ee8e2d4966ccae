"""Single `hod` entry point: narration enrichment, stats, filtering, synthesis, model ops.

Exit codes: 0 success, 1 usage or configuration, 2 data, 3 transport,
4 numerical. Output files are written atomically (temp file + rename),
and a fixed `--seed` makes every command byte-reproducible.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from typing import Iterable

import numpy as np

from . import __version__
from . import autodiff as ad
from .bpe import bpe_train
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import EXIT_USAGE, DataError, HodError
from .geometry import clip_from_json
from .metrics import mcq_accuracy, recall_at_k, retrieval_metrics, zeroshot_classify
from .model import VideoTextModel, count_params, prepare_text_ids
from .narrate import LlmClient, render_prompt, rephrase_offline, word_frequency
from .runconfig import load_run_config
from .style_filter import (
    ClipRecord,
    TrainSettings,
    filter_clips,
    load_classifier,
    save_classifier,
    train_classifier,
)
from .synth import clip_frame_stacks, load_pairs, synth_data
from .train import Dataset, train_model
from .trajectory import build_bundle
from .verify import gradient_suite


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's default 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _read_jsonl(path: str) -> Iterable[tuple[int, dict]]:
    try:
        fh = open(path, encoding="utf-8")
    except FileNotFoundError as exc:
        raise DataError(f"input file not found: {path}") from exc
    with fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield line_no, json.loads(line)
            except ValueError as exc:
                raise DataError(f"{path}:{line_no}: invalid JSON: {exc}") from exc


def _write_atomic(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_jsonl_atomic(path: str, records: list[dict]) -> None:
    _write_atomic(path, "".join(json.dumps(r) + "\n" for r in records))


# ---------------------------------------------------------------------------
# Subcommand implementations
# ---------------------------------------------------------------------------

def _cmd_gen(args) -> int:
    narrations = {}
    for line_no, obj in _read_jsonl(args.narrations):
        clip_id = obj.get("clip_id")
        text = obj.get("narration", obj.get("caption"))
        if clip_id is None or text is None:
            raise DataError(
                f"{args.narrations}:{line_no}: need clip_id plus narration (or caption)"
            )
        if clip_id in narrations:
            raise DataError(f"{args.narrations}:{line_no}: duplicate clip_id {clip_id!r}")
        narrations[clip_id] = text

    bundles = []
    for line_no, obj in _read_jsonl(args.detections):
        clip = clip_from_json(obj, pixels=args.pixels)
        if clip.clip_id not in narrations:
            raise DataError(
                f"{args.detections}:{line_no}: clip {clip.clip_id!r} has no narration"
            )
        bundles.append(
            build_bundle(clip, narrations[clip.clip_id], giou_threshold=args.giou_threshold)
        )

    if args.llm_endpoint:
        client = LlmClient(
            endpoint=args.llm_endpoint,
            model=args.llm_model,
            timeout=args.llm_timeout,
            max_retries=args.llm_retries,
            max_in_flight=args.llm_concurrency,
        )
        items = [(b.clip_id, render_prompt(b)) for b in bundles]
        records = client.rephrase_many(items, seed=args.seed)
    else:
        records = [
            rephrase_offline(b, motion_eps=args.motion_eps, seed=args.seed) for b in bundles
        ]
    _write_jsonl_atomic(
        args.out,
        [
            {
                "clip_id": r.clip_id,
                "original": r.original,
                "enriched": r.enriched,
                "provenance": r.provenance,
                "generator_seed": r.generator_seed,
            }
            for r in records
        ],
    )
    print(f"wrote {len(records)} enriched narrations to {args.out}")
    return 0


def _cmd_stats(args) -> int:
    corpus = []
    for line_no, obj in _read_jsonl(args.narrations):
        text = obj.get("enriched", obj.get("narration", obj.get("original")))
        if text is None:
            raise DataError(
                f"{args.narrations}:{line_no}: no enriched/narration/original field"
            )
        corpus.append(text)
    table = word_frequency(corpus, args.top_k)
    lines = ["token,frequency"] + [f"{tok},{freq!r}" for tok, freq in table.entries]
    _write_atomic(args.out, "\n".join(lines) + "\n")
    print(f"wrote top-{len(table.entries)} of {table.total_tokens} tokens to {args.out}")
    return 0


def _load_feature_records(path: str, need_label: bool):
    records, labels = [], []
    for line_no, obj in _read_jsonl(path):
        clip_id = obj.get("clip_id", f"line-{line_no}")
        feature = obj.get("feature")
        records.append(
            ClipRecord(
                clip_id=clip_id,
                narration=obj.get("narration", ""),
                source=obj.get("source", ""),
                feature=None if feature is None else np.asarray(feature, dtype=np.float64),
            )
        )
        if need_label:
            if "label" not in obj:
                raise DataError(f"{path}:{line_no}: clip {clip_id!r} has no label")
            labels.append(int(obj["label"]))
    return records, labels


def _cmd_filter_train(args) -> int:
    records, labels = _load_feature_records(args.data, need_label=True)
    missing = [r.clip_id for r in records if r.feature is None]
    if missing:
        raise DataError(f"records without features: {', '.join(missing[:5])}")
    features = np.stack([r.feature for r in records])
    clf, val_acc = train_classifier(
        features,
        np.asarray(labels, dtype=np.float64),
        TrainSettings(
            hidden=args.hidden, lr=args.lr, epochs=args.epochs,
            val_fraction=args.val_fraction, seed=args.seed,
        ),
    )
    save_classifier(clf, args.out)
    print(f"trained on {len(records)} clips, held-out accuracy {val_acc:.4f}, saved {args.out}")
    return 0


def _cmd_filter_apply(args) -> int:
    records, _ = _load_feature_records(args.data, need_label=False)
    clf = load_classifier(args.clf)
    kept, dropped = filter_clips(records, clf, threshold=args.threshold)
    kept_scores = clf.scores(np.stack([r.feature for r in kept])) if kept else []
    _write_jsonl_atomic(
        args.out,
        [
            {
                "clip_id": r.clip_id,
                "narration": r.narration,
                "source": r.source,
                "feature": r.feature.tolist(),
                "score": float(score),
            }
            for r, score in zip(kept, kept_scores)
        ],
    )
    print(f"kept {len(kept)} / dropped {len(dropped)} clips at threshold {args.threshold}")
    return 0


def _cmd_synth(args) -> int:
    detections, pairs = synth_data(args.seed, args.n_clips, image_size=args.image_size)
    _write_jsonl_atomic(args.out_detections, detections)
    _write_jsonl_atomic(args.out_pairs, pairs)
    print(f"wrote {args.n_clips} synthetic clips to {args.out_detections} and {args.out_pairs}")
    return 0


def _build_dataset(pairs_path, model_cfg, tokenizer):
    clips = load_pairs(pairs_path)
    stacks = [clip_frame_stacks(c, model_cfg.frames_low, model_cfg.frames_high) for c in clips]
    return clips, Dataset(
        clip_ids=[c.clip_id for c in clips],
        x_low=np.stack([s[0] for s in stacks]),
        x_high=np.stack([s[1] for s in stacks]),
        text_ids=prepare_text_ids(
            [c.caption for c in clips], tokenizer, model_cfg.max_text_len
        ),
    )


def _cmd_model_train(args) -> int:
    run = load_run_config(args.config)
    with ad.precision(run.train.precision):
        clips = load_pairs(args.data)
        tokenizer = bpe_train([c.caption for c in clips], run.n_merges)
        run.model.vocab_size = tokenizer.vocab_size
        run.model.validate()
        model = VideoTextModel(run.model, seed=run.train.seed)
        _, data = _build_dataset(args.data, run.model, tokenizer)
        history = train_model(model, data, run.train, tokenizer.eos_id, log_every=run.log_every)
        save_checkpoint(model, args.out, tokenizer)
    final = history[-1]["loss"] if history else float("nan")
    print(f"trained {len(history)} steps, final loss {final:.4f}, checkpoint at {args.out}")
    return 0


def _embeddings(model, tokenizer, data):
    with ad.no_grad():
        e_v = model.encode_clips_dual(data.x_low, data.x_high, mode="infer").data
        e_t = model.text_forward(data.text_ids, tokenizer.eos_id).data
    e_v = e_v / np.linalg.norm(e_v, axis=1, keepdims=True)
    e_t = e_t / np.linalg.norm(e_t, axis=1, keepdims=True)
    return e_v, e_t


def _cmd_model_eval(args) -> int:
    model, tokenizer = load_checkpoint(args.ckpt)
    if tokenizer is None:
        raise DataError(f"checkpoint {args.ckpt} has no tokenizer file")
    clips, data = _build_dataset(args.data, model.cfg, tokenizer)
    e_v, e_t = _embeddings(model, tokenizer, data)
    n = len(clips)

    if args.task == "retrieval":
        sim = e_v @ e_t.T
        metrics = retrieval_metrics(sim, np.eye(n))
        metrics.update(recall_at_k(sim, k=1))
    elif args.task == "mcq":
        if n < 5:
            raise DataError(f"multiple-choice needs at least 5 clips, got {n}")
        rng = np.random.default_rng(args.seed)
        groups = []
        for i in range(n):
            distractors = [j for j in rng.permutation(n) if j != i][:4]
            answer = int(rng.integers(0, 5))
            order = distractors[:answer] + [i] + distractors[answer:]
            groups.append((e_v[i], e_t[order], answer))
        metrics = {"accuracy": mcq_accuracy(groups)}
    elif args.task == "cls":
        class_texts = sorted(set(c.caption for c in clips))
        class_of = {text: k for k, text in enumerate(class_texts)}
        ids = prepare_text_ids(class_texts, tokenizer, model.cfg.max_text_len)
        with ad.no_grad():
            class_emb = model.text_forward(ids, tokenizer.eos_id).data
        class_emb = class_emb / np.linalg.norm(class_emb, axis=1, keepdims=True)
        correct = sum(
            int(zeroshot_classify(e_v[i], class_emb) == class_of[clips[i].caption])
            for i in range(n)
        )
        metrics = {"accuracy": correct / n, "n_classes": len(class_texts)}
    else:  # pragma: no cover - argparse restricts choices
        raise DataError(f"unknown task {args.task}")

    report = {"task": args.task, "n_items": n, "checkpoint": args.ckpt, "metrics": metrics}
    _write_atomic(args.report, json.dumps(report, indent=1) + "\n")
    print(json.dumps(report["metrics"]))
    return 0


def _cmd_model_gradcheck(args) -> int:
    cfg = load_run_config(args.config).model if args.config else None
    with ad.precision("float64"):
        rows = gradient_suite(cfg)
    failed = [name for name, _, r in rows if not r.passed]
    for name, tol, r in rows:
        status = "pass" if r.passed else "FAIL"
        print(f"{status} {name}: max_rel_err={r.max_rel_err:.3e} (tol {tol:.0e}, {r.n_coords} coords)")
    if failed:
        from .errors import NumericalError

        raise NumericalError(f"gradcheck failed for: {', '.join(failed)}")
    return 0


def _cmd_model_params(args) -> int:
    run = load_run_config(args.config)
    counts = count_params(run.model)
    for component in ("backbone", "adapters", "fusion", "text", "total"):
        print(f"{component:10s} {counts[component]:>14,d}")
    if args.verify:
        model = VideoTextModel(run.model, seed=0)
        actual = model.instantiated_param_count()
        if actual != counts:
            raise DataError(f"formula/buffer mismatch: {counts} vs {actual}")
        print("verified: formula counts equal instantiated buffers")
    return 0


# ---------------------------------------------------------------------------
# Argument wiring
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hod", description=__doc__)
    parser.add_argument("--version", action="version", version=f"hod {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="enrich narrations from detections")
    gen.add_argument("--detections", required=True)
    gen.add_argument("--narrations", required=True)
    gen.add_argument("--out", required=True)
    gen.add_argument("--pixels", action="store_true", help="detection boxes are pixel-space")
    gen.add_argument("--giou-threshold", type=float, default=0.9)
    gen.add_argument("--motion-eps", type=float, default=0.05)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--llm-endpoint", default=None)
    gen.add_argument("--llm-model", default="default")
    gen.add_argument("--llm-timeout", type=float, default=30.0)
    gen.add_argument("--llm-retries", type=int, default=3)
    gen.add_argument("--llm-concurrency", type=int, default=4)
    gen.set_defaults(func=_cmd_gen)

    stats = sub.add_parser("stats", help="word-frequency table over narrations")
    stats.add_argument("--narrations", required=True)
    stats.add_argument("--top-k", type=int, default=30)
    stats.add_argument("--out", required=True)
    stats.set_defaults(func=_cmd_stats)

    filt = sub.add_parser("filter", help="ego-style clip filtering")
    filt_sub = filt.add_subparsers(dest="filter_command", required=True)
    ft = filt_sub.add_parser("train", help="train the style classifier")
    ft.add_argument("--data", required=True)
    ft.add_argument("--out", required=True)
    ft.add_argument("--hidden", type=int, default=64)
    ft.add_argument("--lr", type=float, default=0.5)
    ft.add_argument("--epochs", type=int, default=2000)
    ft.add_argument("--val-fraction", type=float, default=0.1)
    ft.add_argument("--seed", type=int, default=0)
    ft.set_defaults(func=_cmd_filter_train)
    fa = filt_sub.add_parser("apply", help="filter clips with a trained classifier")
    fa.add_argument("--data", required=True)
    fa.add_argument("--clf", required=True)
    fa.add_argument("--threshold", type=float, default=0.5)
    fa.add_argument("--out", required=True)
    fa.set_defaults(func=_cmd_filter_apply)

    synth = sub.add_parser("synth", help="generate synthetic clips")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--n-clips", type=int, default=16)
    synth.add_argument("--out-detections", required=True)
    synth.add_argument("--out-pairs", required=True)
    synth.add_argument("--image-size", type=int, default=16)
    synth.set_defaults(func=_cmd_synth)

    model = sub.add_parser("model", help="train, evaluate, and verify the model")
    model_sub = model.add_subparsers(dest="model_command", required=True)
    mt = model_sub.add_parser("train", help="contrastive co-training")
    mt.add_argument("--config", required=True)
    mt.add_argument("--data", required=True)
    mt.add_argument("--out", required=True)
    mt.set_defaults(func=_cmd_model_train)
    me = model_sub.add_parser("eval", help="zero-shot evaluation")
    me.add_argument("--task", choices=("retrieval", "mcq", "cls"), required=True)
    me.add_argument("--ckpt", required=True)
    me.add_argument("--data", required=True)
    me.add_argument("--report", required=True)
    me.add_argument("--seed", type=int, default=0)
    me.set_defaults(func=_cmd_model_eval)
    mg = model_sub.add_parser("gradcheck", help="gradient verification suite")
    mg.add_argument("--config", default=None)
    mg.set_defaults(func=_cmd_model_gradcheck)
    mp = model_sub.add_parser("params", help="parameter accounting")
    mp.add_argument("--config", required=True)
    mp.add_argument("--verify", action="store_true", help="instantiate and cross-check")
    mp.set_defaults(func=_cmd_model_params)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except HodError as exc:
        print(f"hod: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
