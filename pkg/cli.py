"""
Command-line interface
gen-data, train, caption, eval, score, sweep-lambda and ablate subcommands;
results are printed to stdout as JSON lines, logs go to stderr.
"""

import argparse
import json
import sys
from typing import Dict, List, Optional, Sequence

import numpy as np

from config_env import TrainingConfig, config, load_config_file
from data_io import (
    Checkpoint,
    DatasetRecord,
    build_vocab,
    generate_synthetic_dataset,
    iter_jsonl,
    load_checkpoint,
    load_dataset,
    save_checkpoint,
    save_dataset,
    write_jsonl,
)
from decoder import EOS_ID
from decoding import decode
from error_handling import DataFormatError, ValidationError, handle_cli_errors, require
from logger import logger
from params import ModelConfig, ModelParams
from text_metrics import evaluated_score, score_corpus, tokenize
from training import evaluate_model, normalize_scores, train_step1, train_step2

DEFAULT_LAMBDAS = [round(0.1 * i, 1) for i in range(11)]
METRICS = ("bleu1", "bleu2", "bleu3", "bleu4", "rouge_l", "score")


def _emit(row: Dict):
    print(json.dumps(row, sort_keys=True))


def _training_config(args) -> TrainingConfig:
    return load_config_file(getattr(args, "config", None), getattr(args, "set", None) or [])


def _load_split(path: Optional[str]) -> Optional[List[DatasetRecord]]:
    if not path:
        return None
    records = load_dataset(path)
    require(len(records) > 0, f"{path}: dataset is empty")
    return records


def _feature_dim(records: Sequence[DatasetRecord]) -> int:
    return int(records[0].features.shape[1])


def _fresh_params(records, cfg: TrainingConfig, vocab) -> ModelParams:
    model_config = ModelConfig.from_training(cfg, _feature_dim(records), len(vocab))
    return ModelParams.initialize(model_config, seed=cfg.seed, scale=cfg.init_scale)


# Subcommands


def cmd_gen_data(args) -> int:
    records = generate_synthetic_dataset(
        n_videos=args.n_videos,
        n_classes=args.n_classes,
        frames_per_video=args.frames,
        feature_dim=args.feature_dim,
        refs_per_video=args.refs,
        seed=args.seed,
        noise=args.noise,
    )
    save_dataset(records, args.out)
    _emit({"path": args.out, "videos": len(records), "seed": args.seed})
    return 0


def cmd_train(args) -> int:
    cfg = _training_config(args)
    records = _load_split(args.data)
    require(records is not None, "--data is required")
    validation = _load_split(args.val)

    if args.step == 1:
        if args.init:
            ckpt = load_checkpoint(args.init)
            params, vocab, start = ckpt.params, ckpt.vocab, ckpt.step
        else:
            vocab = build_vocab(records)
            params, start = _fresh_params(records, cfg, vocab), 0
        reports = train_step1(records, params, cfg, vocab, validation)
    else:
        require(bool(args.init), "step 2 needs a step-1 checkpoint (--init)")
        ckpt = load_checkpoint(args.init)
        params, vocab, start = ckpt.params, ckpt.vocab, ckpt.step
        reports = train_step2(records, params, cfg, vocab, validation, start_step=start)

    for report in reports:
        _emit(report.to_dict())
    steps = reports[-1].steps if args.step == 2 else start + reports[-1].steps
    save_checkpoint(Checkpoint(params, cfg, vocab, steps), args.out)
    return 0


def caption_rows(records: Sequence[DatasetRecord], ckpt: Checkpoint, beam: Optional[int],
                 max_len: int, length_normalize: bool = False) -> List[Dict]:
    """One trace row per video; the EOS step is recorded as <eos>"""
    rows = []
    for record in records:
        result = decode(record.features, ckpt.params, max_len, beam, length_normalize)
        tokens = result.tokens(ckpt.vocab)
        step_tokens = tokens + [ckpt.vocab.token(EOS_ID)] if result.finished else tokens
        rows.append({
            "video_id": record.video_id,
            "tokens": tokens,
            "log_prob": result.log_prob,
            "trace": [trace.to_record(tok) for trace, tok in zip(result.traces, step_tokens)],
        })
    return rows


def cmd_caption(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    records = _load_split(args.data)
    rows = caption_rows(records, ckpt, args.beam, args.max_len or ckpt.config.max_len, args.length_normalize)
    if args.out:
        write_jsonl(args.out, rows)
        logger.info(f"wrote {len(rows)} captions to {args.out}")
    else:
        for row in rows:
            _emit(row)
    return 0


def _read_candidates(path: str) -> Dict[str, List[str]]:
    candidates = {}
    for number, obj in iter_jsonl(path):
        if not isinstance(obj, dict) or "video_id" not in obj or "tokens" not in obj:
            raise DataFormatError("candidate rows need video_id and tokens", line=number)
        candidates[str(obj["video_id"])] = [str(tok) for tok in obj["tokens"]]
    return candidates


def cmd_eval(args) -> int:
    records = _load_split(args.data)
    if args.candidates:
        candidates = _read_candidates(args.candidates)
        missing = [r.video_id for r in records if r.video_id not in candidates]
        require(not missing, f"no candidate for {len(missing)} videos, first {missing[:1]}")
        scores = score_corpus([candidates[r.video_id] for r in records], [r.references for r in records])
    else:
        require(bool(args.ckpt), "eval needs --ckpt or --candidates")
        ckpt = load_checkpoint(args.ckpt)
        scores = evaluate_model(records, ckpt.params, ckpt.vocab, args.max_len or ckpt.config.max_len, args.beam)
    _emit(dict(scores, videos=len(records)))
    return 0


def _as_tokens(value) -> List[str]:
    if isinstance(value, str):
        return tokenize(value)
    if isinstance(value, list):
        return [str(tok) for tok in value]
    raise ValidationError(f"expected a string or token list, got {type(value).__name__}")


def cmd_score(args) -> int:
    for number, obj in iter_jsonl(args.input):
        if not isinstance(obj, dict) or "candidate" not in obj or "references" not in obj:
            raise DataFormatError("score rows need candidate and references", line=number)
        report = evaluated_score(_as_tokens(obj["candidate"]), [_as_tokens(r) for r in obj["references"]])
        _emit(report.to_dict())
    return 0


def cmd_sweep_lambda(args) -> int:
    cfg = _training_config(args)
    records = _load_split(args.data)
    validation = _load_split(args.val) or records
    lambdas = [float(x) for x in args.lambdas.split(",")] if args.lambdas else DEFAULT_LAMBDAS
    base = load_checkpoint(args.ckpt)

    raw = []
    for lam in lambdas:
        params = base.params.copy()
        train_step2(records, params, cfg.replace(lambda_=lam), base.vocab, validation, start_step=base.step)
        scores = evaluate_model(validation, params, base.vocab, cfg.max_len)
        raw.append(scores)
        logger.info(f"lambda={lam}: bleu4={scores['bleu4']:.4f} score={scores['score']:.4f}")

    normalized = {}
    for metric in METRICS:
        values = [scores[metric] for scores in raw]
        # a metric that is zero somewhere cannot be normalized by its minimum
        normalized[metric] = normalize_scores(values) if min(values) > 0 else [None] * len(values)

    for i, lam in enumerate(lambdas):
        _emit({"lambda": lam, "raw": raw[i], "normalized": {m: normalized[m][i] for m in METRICS}})
    return 0


def ablation_variants(include_baselines: bool) -> Dict[str, Dict]:
    variants = {
        "linked": {"architecture": "dual_attention", "link_attentions": True},
        "unlinked": {"architecture": "dual_attention", "link_attentions": False},
    }
    if include_baselines:
        variants["deep_lstm_baseline"] = {"architecture": "deep_lstm_baseline"}
        variants["attention_baseline"] = {"architecture": "attention_baseline"}
    return variants


def cmd_ablate(args) -> int:
    cfg = _training_config(args)
    records = _load_split(args.data)
    validation = _load_split(args.val) or records
    vocab = build_vocab(records)

    for name, overrides in ablation_variants(args.baselines).items():
        bleu = []
        for seed in range(cfg.seed, cfg.seed + args.seeds):
            variant = cfg.replace(seed=seed, **overrides)
            params = _fresh_params(records, variant, vocab)
            train_step1(records, params, variant, vocab, validation)
            bleu.append(evaluate_model(validation, params, vocab, variant.max_len)["bleu4"])
        _emit({"variant": name, "seeds": args.seeds, "bleu4": bleu, "mean_bleu4": float(np.mean(bleu))})
    return 0


# Parser


def _add_config_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="flat key=value training config file")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="captioner", description="Dual-attention video captioning")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-videos", type=int, default=200)
    p.add_argument("--n-classes", type=int, default=6)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--feature-dim", type=int, default=16)
    p.add_argument("--refs", type=int, default=3)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="run training step 1 or 2")
    p.add_argument("--data", default=config.DATA_PATH)
    p.add_argument("--val")
    p.add_argument("--step", type=int, choices=(1, 2), default=1)
    p.add_argument("--init", help="checkpoint to start from (required for step 2)")
    p.add_argument("--out", default=config.CHECKPOINT_PATH)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("caption", help="decode captions with traces")
    p.add_argument("--ckpt", default=config.CHECKPOINT_PATH)
    p.add_argument("--data", required=True)
    p.add_argument("--beam", type=int, help="beam width (default: greedy)")
    p.add_argument("--max-len", type=int)
    p.add_argument("--length-normalize", action="store_true")
    p.add_argument("--out", help="trace JSONL path (default: stdout)")
    p.set_defaults(func=cmd_caption)

    p = sub.add_parser("eval", help="corpus BLEU-1..4 and ROUGE-L")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt")
    p.add_argument("--candidates", help="caption JSONL with video_id and tokens")
    p.add_argument("--beam", type=int)
    p.add_argument("--max-len", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("score", help="score candidate/reference JSONL lines")
    p.add_argument("--input", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("sweep-lambda", help="step-2 training across lambda values")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--val")
    p.add_argument("--lambdas", help="comma-separated values (default 0.0..1.0 step 0.1)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_sweep_lambda)

    p = sub.add_parser("ablate", help="linked vs unlinked attention across seeds")
    p.add_argument("--data", required=True)
    p.add_argument("--val")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--baselines", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_ablate)

    return parser


@handle_cli_errors()
def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_:
        return int(exit_.code or 0)
    return args.func(args)


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
