"""``econet`` command line: corpus building, pre-training, fine-tuning and analysis."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import attention, metrics
from .config import ConfigError, RunConfig, from_dict, load_config
from .events import LexiconTagger
from .lexicon import LexiconError, TemporalLexicon, load_default, load_file
from .masking import (EventVocabulary, SampleError, build_corpus, read_documents, read_jsonl,
                      write_jsonl)
from .model import MiniLM, ModelError, NonFiniteGradient, load_checkpoint, save_checkpoint
from .objectives import LabelSpaces, ObjectiveError, encode_samples, pretrain, resume
from .tasks import (LABEL_SETS, PRIMARY_METRIC, EREExample, TaskError, evaluate, finetune,
                    is_correct, read_task_jsonl)
from .vocab import Vocabulary

log = logging.getLogger("econet")

EXIT_CODES = {"config": 2, "input": 3, "data": 4, "model": 5, "training": 6}


class CLIError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


def _lexicon(path: str | None) -> TemporalLexicon:
    return load_file(path) if path else load_default()


def _sidecars(corpus: Path) -> tuple[Path, Path]:
    stem = corpus.with_suffix("")
    return stem.with_name(stem.name + ".events.txt"), stem.with_name(stem.name + ".stats.json")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- build-corpus ----------------------------------------------------------------

def cmd_build_corpus(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, args.profile)
    lex = _lexicon(args.lexicon or cfg.paths.lexicon)
    ev_path = args.event_lexicon or cfg.paths.event_lexicon
    tagger = LexiconTagger.from_file(ev_path, lexicon=lex) if ev_path else LexiconTagger(lexicon=lex)
    excl_path = args.exclusion or cfg.paths.exclusion
    exclude: list[str] = []
    if excl_path:
        exclude = [ln.strip() for ln in Path(excl_path).read_text(encoding="utf-8").splitlines()
                   if ln.strip() and not ln.startswith("#")]
    input_dir = Path(args.input_dir)
    if not input_dir.is_dir():
        raise CLIError("input", f"input directory not found: {input_dir}")
    docs = read_documents(input_dir)
    samples, events, stats = build_corpus(docs, lex, tagger, budget=args.budget, exclude=exclude,
                                          seed=args.seed, max_tokens=args.max_tokens)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_jsonl(samples, out)
    ev_file, stats_file = _sidecars(out)
    events.save(ev_file)
    _write_json(stats_file, stats.to_dict())
    print(f"wrote {len(samples)} samples ({stats.temporal_samples} temporal, "
          f"{stats.event_samples} event) to {out}")
    return 0


# -- pretrain --------------------------------------------------------------------

def _pretrain_data(corpus: Path, events_path: Path | None, lex: TemporalLexicon):
    samples = read_jsonl(corpus)
    if not samples:
        raise CLIError("data", f"corpus {corpus} holds no samples")
    ev_file = events_path or _sidecars(corpus)[0]
    if not ev_file.exists():
        raise CLIError("input", f"event vocabulary not found: {ev_file}")
    events = EventVocabulary.load(ev_file)
    vocab = Vocabulary.build([s.unmasked() for s in samples], lex, extra=events.words)
    return samples, events, vocab


def cmd_pretrain(args: argparse.Namespace) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.resume:
        model, meta, opt, start = resume(args.resume)
        cfg = load_config_from_meta(meta)
        if args.max_steps is not None:
            cfg.pretrain.max_steps = args.max_steps
        vocab = Vocabulary(meta["vocab"])
        lex = _lexicon(cfg.paths.lexicon)
        samples = read_jsonl(args.corpus)
        events = EventVocabulary(meta["events"])
    else:
        cfg = load_config(args.config, args.profile)
        if args.max_steps is not None:
            cfg.pretrain.max_steps = args.max_steps
        lex = _lexicon(cfg.paths.lexicon)
        samples, events, vocab = _pretrain_data(Path(args.corpus),
                                                Path(args.events) if args.events else None, lex)
        model = MiniLM(cfg.model.to_model_config(len(vocab)), seed=cfg.pretrain.seed)
        opt, start = None, 0
        meta = {"kind": "pretrain", "vocab": vocab.tokens, "events": events.words}
    meta["config"] = cfg.to_dict()
    cfg.dump(out_dir / "config.yaml")
    vocab.save(out_dir / "vocab.json")
    data = encode_samples(samples, vocab)
    too_long = [s for s in data if len(s.ids) > model.config.max_seq_len]
    if too_long:
        raise CLIError("data", f"{len(too_long)} samples exceed max_seq_len "
                               f"{model.config.max_seq_len}; rebuild with --max-tokens")
    spaces = LabelSpaces.build(vocab, lex, events)
    history = pretrain(model, data, spaces, cfg.pretrain, out_dir, meta, opt, start,
                       special_ids=vocab.special_ids)
    if history:
        last = history[-1]
        print(f"step {last.step + 1}: l_joint={last.l_joint:.4f} l_temporal={last.l_temporal:.4f}"
              f" l_event={last.l_event:.4f} l_disc={last.l_disc:.4f}")
    print(f"checkpoint: {out_dir / 'final.npz'}")
    return 0


def load_config_from_meta(meta: dict) -> RunConfig:
    if "config" not in meta:
        raise CLIError("model", "checkpoint carries no run config")
    return from_dict(meta["config"])


# -- finetune / evaluate -----------------------------------------------------------

def _encoder_and_vocab(args, cfg: RunConfig, train_tokens) -> tuple[MiniLM, Vocabulary]:
    if args.checkpoint:
        model, meta = load_checkpoint(args.checkpoint)
        if "vocab" not in meta:
            raise CLIError("model", f"{args.checkpoint} carries no vocabulary")
        return model.drop_heads(), Vocabulary(meta["vocab"])
    if args.vocab:
        vocab = Vocabulary.load(args.vocab)
    else:
        vocab = Vocabulary.build(train_tokens, _lexicon(cfg.paths.lexicon))
    return MiniLM(cfg.model.to_model_config(len(vocab)), seed=cfg.pretrain.seed), vocab


def _example_tokens(ex) -> list[str]:
    if isinstance(ex, EREExample):
        return list(ex.tokens)
    toks = list(ex.passage) + list(ex.question)
    return toks + list(getattr(ex, "answer", ()))


def cmd_finetune(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, args.profile)
    sec = cfg.finetune
    if args.epochs is not None:
        sec.epochs = args.epochs
    if args.train_fraction is not None:
        sec.train_fraction = args.train_fraction
    labels = sec.to_finetune_config().labels
    train = read_task_jsonl(args.train, sec.task, labels)
    dev = read_task_jsonl(args.dev, sec.task, labels) if args.dev else []
    test = read_task_jsonl(args.test, sec.task, labels) if args.test else []
    if not args.checkpoint and not args.random_init:
        raise CLIError("config", "pass --checkpoint or --random-init")
    encoder, vocab = _encoder_and_vocab(args, cfg, [_example_tokens(e) for e in train])
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.dump(out_dir / "config.yaml")
    metric = PRIMARY_METRIC[sec.task]

    grid = ([(lr, bs) for lr in sec.lr_grid for bs in sec.batch_grid] if args.grid
            else [(sec.lr, sec.batch_size)])
    best = None
    for lr, bs in grid:
        fcfg = sec.to_finetune_config(lr=lr, batch_size=bs)
        results = [finetune(encoder, train, dev, vocab, fcfg, s) for s in fcfg.seeds]
        dev_mean = float(np.mean([r.best_dev for r in results])) if dev else float("nan")
        if len(grid) > 1:
            print(f"grid lr={lr:g} batch={bs}: dev {metric} {dev_mean:.4f}")
        if best is None or dev_mean > best[0]:
            best = (dev_mean, fcfg, results)
    _, fcfg, results = best

    summary = {"task": sec.task, "metric": metric, "lr": fcfg.lr, "batch_size": fcfg.batch_size,
               "epochs": fcfg.epochs, "seeds": list(fcfg.seeds), "per_seed": []}
    with open(out_dir / "dev_log.jsonl", "w", encoding="utf-8") as fh:
        for r in results:
            for row in r.dev_log:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    for r in results:
        entry = {"seed": r.seed, "best_epoch": r.best_epoch, "dev": r.best_dev}
        if test:
            scores, _ = evaluate(r.model, test, vocab, fcfg.labels)
            entry["test"] = scores
        summary["per_seed"].append(entry)
        meta = {"kind": "task", "task": sec.task, "labels": list(fcfg.labels),
                "vocab": vocab.tokens, "seed": r.seed, "best_epoch": r.best_epoch,
                "config": cfg.to_dict()}
        save_checkpoint(out_dir / f"seed{r.seed}.npz", r.model, meta)
    key = "test" if test else "dev"
    values = [e[key][metric] if key == "test" else e[key] for e in summary["per_seed"]]
    mean, std = metrics.mean_std(values)
    summary.update({"split": key, "mean": mean, "std": std})
    _write_json(out_dir / "summary.json", summary)
    print(f"{sec.task} {key} {metric}: {mean:.4f} ± {std:.4f} over seeds {list(fcfg.seeds)}")
    return 0


def _load_task_model(path: str) -> tuple[MiniLM, dict, Vocabulary]:
    model, meta = load_checkpoint(path)
    if meta.get("kind") != "task":
        raise CLIError("model", f"{path} is not a fine-tuned task checkpoint")
    return model, meta, Vocabulary(meta["vocab"])


def _prediction_value(ex, pred, labels):
    return labels[pred] if isinstance(ex, EREExample) else pred


def _read_dump(path: str) -> dict[str, dict]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out[rec["example_id"]] = rec
            except (json.JSONDecodeError, KeyError) as exc:
                raise CLIError("data", f"{path}:{lineno}: bad prediction record ({exc})")
    return out


def cmd_evaluate(args: argparse.Namespace) -> int:
    model, meta, vocab = _load_task_model(args.checkpoint)
    labels = tuple(meta["labels"])
    examples = read_task_jsonl(args.data, meta["task"], labels)
    scores, preds = evaluate(model, examples, vocab, labels)
    dump = [{"example_id": ex.id, "prediction": _prediction_value(ex, p, labels),
             "correct": is_correct(ex, p)} for ex, p in zip(examples, preds)]
    report = {"task": meta["task"], "n": len(examples), "metrics": scores}
    if args.compare:
        other = _read_dump(args.compare)
        missing = [d["example_id"] for d in dump if d["example_id"] not in other]
        if missing:
            raise CLIError("data", f"comparison dump lacks {len(missing)} example(s)")
        stat, p = metrics.mcnemar([d["correct"] for d in dump],
                                  [other[d["example_id"]]["correct"] for d in dump])
        report["mcnemar"] = {"statistic": stat, "p_value": p, "against": str(args.compare)}
    if args.dump:
        Path(args.dump).parent.mkdir(parents=True, exist_ok=True)
        with open(args.dump, "w", encoding="utf-8") as fh:
            for d in dump:
                fh.write(json.dumps(d, sort_keys=True) + "\n")
    if args.report:
        _write_json(Path(args.report), report)
    print(json.dumps(report, sort_keys=True))
    return 0


# -- analysis ----------------------------------------------------------------------

def cmd_attn_report(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, args.profile)
    lex = _lexicon(args.lexicon or cfg.paths.lexicon)
    models, vocab = [], None
    for path in args.checkpoint:
        model, meta = load_checkpoint(path)
        if "vocab" not in meta:
            raise CLIError("model", f"{path} carries no vocabulary")
        v = Vocabulary(meta["vocab"])
        if vocab is not None and v.tokens != vocab.tokens:
            raise CLIError("model", "checkpoints use different vocabularies")
        vocab = v
        models.append(model)
    examples = read_task_jsonl(args.data, "ere", LABEL_SETS[args.labels])
    report = attention.category_report(examples, lex, models, vocab)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.write_csv(out_dir / "attention.csv")
    _write_json(out_dir / "attention.json", {"counts": report.counts, "rows": report.rows(),
                                             "checkpoints": [str(p) for p in args.checkpoint]})
    for c in report.categories:
        if report.counts[c]:
            print(f"{c:10s} n={report.counts[c]:4d} cumulative={report.cumulative[c][-1]:.3f}")
    return 0


def cmd_heatmap(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, args.profile)
    lex = _lexicon(args.lexicon or cfg.paths.lexicon)
    labels = LABEL_SETS[args.labels]
    examples = read_task_jsonl(args.data, "ere", labels)

    def results(path):
        dump = _read_dump(path)
        out = []
        for ex in examples:
            if ex.id not in dump:
                raise CLIError("data", f"{path} lacks example {ex.id!r}")
            pred = dump[ex.id]["prediction"]
            if pred not in labels:
                raise CLIError("data", f"{path}: unknown label {pred!r}")
            out.append(attention.EvalResult(ex.id, ex.tokens, ex.relation, labels.index(pred)))
        return out

    hm = attention.heatmap_deltas(results(args.pred_a), results(args.pred_b), lex, labels,
                                  args.min_count)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    hm.write_json(args.out)
    print(f"{len(hm.categories)} categories kept: {', '.join(hm.categories) or '-'}")
    return 0


# -- entry point -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="econet", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML overrides on top of the profile")
        sp.add_argument("--profile", default="default", choices=("default", "desk"))

    sp = sub.add_parser("build-corpus", help="masked samples from a directory of text")
    common(sp)
    sp.add_argument("--input-dir", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--budget", type=int)
    sp.add_argument("--lexicon")
    sp.add_argument("--event-lexicon")
    sp.add_argument("--exclusion", help="file of passage hashes to leave out")
    sp.add_argument("--max-tokens", type=int)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_build_corpus)

    sp = sub.add_parser("pretrain", help="continual pre-training on a sample file")
    common(sp)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--events", help="event vocabulary (default: corpus sidecar)")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--resume", help="checkpoint to continue from")
    sp.add_argument("--max-steps", type=int)
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("finetune", help="fine-tune a task head over several seeds")
    common(sp)
    sp.add_argument("--checkpoint")
    sp.add_argument("--random-init", action="store_true")
    sp.add_argument("--vocab", help="vocabulary for --random-init")
    sp.add_argument("--train", required=True)
    sp.add_argument("--dev")
    sp.add_argument("--test")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--train-fraction", type=float)
    sp.add_argument("--grid", action="store_true", help="search the configured lr/batch grid")
    sp.set_defaults(func=cmd_finetune)

    sp = sub.add_parser("evaluate", help="score a task checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--report")
    sp.add_argument("--dump", help="JSONL of {example_id, prediction, correct}")
    sp.add_argument("--compare", help="another dump for McNemar's test")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("attn-report", help="event-to-indicator attention by category")
    common(sp)
    sp.add_argument("--checkpoint", required=True, nargs="+")
    sp.add_argument("--data", required=True)
    sp.add_argument("--labels", default="matres", choices=sorted(LABEL_SETS))
    sp.add_argument("--lexicon")
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(func=cmd_attn_report)

    sp = sub.add_parser("heatmap", help="per-category F1 deltas between two dumps")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--pred-a", required=True)
    sp.add_argument("--pred-b", required=True)
    sp.add_argument("--labels", default="matres", choices=sorted(LABEL_SETS))
    sp.add_argument("--lexicon")
    sp.add_argument("--min-count", type=int, default=attention.MIN_HEATMAP_MATCHES)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_heatmap)
    return p


def _categorize(exc: Exception) -> str:
    if isinstance(exc, CLIError):
        return exc.category
    if isinstance(exc, (ConfigError, ObjectiveError)):
        return "config"
    if isinstance(exc, (LexiconError, FileNotFoundError, IsADirectoryError, PermissionError)):
        return "input"
    if isinstance(exc, NonFiniteGradient):
        return "training"
    if isinstance(exc, ModelError):
        return "model"
    return "data"


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CLIError, ConfigError, ObjectiveError, LexiconError, SampleError, TaskError,
            ModelError, attention.AnalysisError, FileNotFoundError, IsADirectoryError,
            PermissionError, json.JSONDecodeError, KeyError) as exc:
        cat = _categorize(exc)
        print(f"econet: {cat} error: {exc}", file=sys.stderr)
        return EXIT_CODES[cat]


if __name__ == "__main__":
    sys.exit(main())
