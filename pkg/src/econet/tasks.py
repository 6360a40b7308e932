"""Fine-tuning heads for relation extraction and the two QA shapes."""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from . import metrics
from .model import AdamState, MiniLM, ModelError, adam_step, sigmoid, sigmoid_bce, softmax_xent
from .vocab import SEP, Vocabulary

log = logging.getLogger(__name__)

LABEL_SETS = {
    "matres": ("BEFORE", "AFTER", "EQUAL", "VAGUE"),
    "tbdense": ("BEFORE", "AFTER", "INCLUDES", "IS_INCLUDED", "SIMULTANEOUS", "VAGUE"),
}
TASKS = ("ere", "extractive_qa", "binary_qa")


class TaskError(ValueError):
    pass


@dataclass(frozen=True)
class EREExample:
    tokens: tuple[str, ...]
    i: int
    j: int
    relation: int
    id: str = ""

    def __post_init__(self):
        n = len(self.tokens)
        if self.i == self.j:
            raise TaskError("event positions must differ")
        if not (0 <= self.i < n and 0 <= self.j < n):
            raise TaskError("event position out of range")


@dataclass(frozen=True)
class ExtractiveQAExample:
    passage: tuple[str, ...]
    question: tuple[str, ...]
    answer_labels: tuple[int, ...]
    id: str = ""
    group: str = ""

    def __post_init__(self):
        if len(self.answer_labels) != len(self.passage):
            raise TaskError("answer_labels must have one entry per passage token")

    @property
    def gold_set(self) -> frozenset[int]:
        return frozenset(i for i, v in enumerate(self.answer_labels) if v)


@dataclass(frozen=True)
class BinaryQAExample:
    passage: tuple[str, ...]
    question: tuple[str, ...]
    answer: tuple[str, ...]
    label: int
    id: str = ""
    question_id: str = ""

    def __post_init__(self):
        if self.label not in (0, 1):
            raise TaskError("label must be 0 or 1")


TaskExample = Union[EREExample, ExtractiveQAExample, BinaryQAExample]


# -- data files --------------------------------------------------------------

def example_from_record(task: str, rec: dict, labels: Sequence[str] = ()) -> TaskExample:
    if task == "ere":
        rel = rec["relation"]
        if isinstance(rel, str):
            if rel not in labels:
                raise TaskError(f"relation {rel!r} not in label set {list(labels)}")
            rel = list(labels).index(rel)
        return EREExample(tuple(rec["tokens"]), int(rec["i"]), int(rec["j"]), int(rel),
                          str(rec.get("id", "")))
    if task == "extractive_qa":
        return ExtractiveQAExample(tuple(rec["passage"]), tuple(rec["question"]),
                                   tuple(int(v) for v in rec["answer_labels"]),
                                   str(rec.get("id", "")), str(rec.get("group", "")))
    if task == "binary_qa":
        return BinaryQAExample(tuple(rec["passage"]), tuple(rec["question"]),
                               tuple(rec["answer"]), int(rec["label"]), str(rec.get("id", "")),
                               str(rec.get("question_id", rec.get("id", ""))))
    raise TaskError(f"unknown task {task!r}")


def example_to_record(ex: TaskExample, labels: Sequence[str] = ()) -> dict:
    if isinstance(ex, EREExample):
        rel = labels[ex.relation] if labels else ex.relation
        return {"id": ex.id, "tokens": list(ex.tokens), "i": ex.i, "j": ex.j, "relation": rel}
    if isinstance(ex, ExtractiveQAExample):
        return {"id": ex.id, "passage": list(ex.passage), "question": list(ex.question),
                "answer_labels": list(ex.answer_labels), "group": ex.group}
    return {"id": ex.id, "question_id": ex.question_id, "passage": list(ex.passage),
            "question": list(ex.question), "answer": list(ex.answer), "label": ex.label}


def read_task_jsonl(path: str | Path, task: str, labels: Sequence[str] = ()) -> list[TaskExample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(example_from_record(task, json.loads(line), labels))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise TaskError(f"{path}:{lineno}: malformed {task} record ({exc})") from exc
    return out


def write_task_jsonl(path: str | Path, examples: Sequence[TaskExample],
                     labels: Sequence[str] = ()) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ex in examples:
            fh.write(json.dumps(example_to_record(ex, labels), ensure_ascii=False) + "\n")


# -- heads -------------------------------------------------------------------

def add_mlp_head(model: MiniLM, name: str, in_dim: int, out_dim: int, seed: int = 0) -> None:
    rng = np.random.default_rng(seed)
    d = model.config.hidden_dim
    std = model.config.init_std
    model.params[f"head.{name}.w1"] = rng.normal(0.0, std, (in_dim, d))
    model.params[f"head.{name}.b1"] = np.zeros(d)
    model.params[f"head.{name}.w2"] = rng.normal(0.0, std, (d, out_dim))
    model.params[f"head.{name}.b2"] = np.zeros(out_dim)


def _mlp(params, name, x):
    a = np.tanh(x @ params[f"head.{name}.w1"] + params[f"head.{name}.b1"])
    return a @ params[f"head.{name}.w2"] + params[f"head.{name}.b2"], (x, a)


def _mlp_back(params, name, cache, dout, grads):
    x, a = cache
    x2, a2, d2 = np.atleast_2d(x), np.atleast_2d(a), np.atleast_2d(dout)
    grads[f"head.{name}.w2"] += a2.T @ d2
    grads[f"head.{name}.b2"] += d2.sum(0)
    dz = (d2 @ params[f"head.{name}.w2"].T) * (1.0 - a2 * a2)
    grads[f"head.{name}.w1"] += x2.T @ dz
    grads[f"head.{name}.b1"] += dz.sum(0)
    dx = dz @ params[f"head.{name}.w1"].T
    return dx.reshape(np.shape(x))


def attach_task_head(model: MiniLM, task: str, n_labels: int = 2, seed: int = 0) -> MiniLM:
    """A copy of the encoder (pre-training heads dropped) with a fresh task head."""
    out = model.drop_heads()
    d = out.config.hidden_dim
    if task == "ere":
        add_mlp_head(out, "ere", 2 * d, n_labels, seed)
    elif task == "extractive_qa":
        add_mlp_head(out, "tokqa", d, 1, seed)
    elif task == "binary_qa":
        add_mlp_head(out, "binqa", d, 1, seed)
    else:
        raise TaskError(f"unknown task {task!r}")
    return out


def ere_inputs(ex: EREExample, vocab: Vocabulary) -> tuple[list[int], int, int]:
    return vocab.encode(ex.tokens), ex.i + 1, ex.j + 1


def extractive_inputs(ex: ExtractiveQAExample, vocab: Vocabulary) -> list[int]:
    return vocab.encode(list(ex.passage) + [SEP] + list(ex.question))


def binary_inputs(ex: BinaryQAExample, vocab: Vocabulary) -> list[int]:
    return vocab.encode(list(ex.passage) + [SEP] + list(ex.question) + [SEP] + list(ex.answer))


def ere_forward(model: MiniLM, ex: EREExample, vocab: Vocabulary, train: bool = False,
                rng=None, return_trace: bool = False):
    """Relation distribution from the MLP over [v_i ; v_j]."""
    ids, i, j = ere_inputs(ex, vocab)
    trace = model.forward(ids, train=train, rng=rng)
    x = np.concatenate([trace.final_hidden[i], trace.final_hidden[j]])
    logits, cache = _mlp(model.params, "ere", x)
    z = logits - logits.max()
    probs = np.exp(z) / np.exp(z).sum()
    if return_trace:
        return probs, (trace, logits, cache, i, j)
    return probs


def extractive_qa_forward(model: MiniLM, ex: ExtractiveQAExample, vocab: Vocabulary,
                          train: bool = False, rng=None, return_trace: bool = False):
    """One answer probability per passage token."""
    ids = extractive_inputs(ex, vocab)
    trace = model.forward(ids, train=train, rng=rng)
    n = len(ex.passage)
    logits, cache = _mlp(model.params, "tokqa", trace.final_hidden[1:n + 1])
    probs = sigmoid(logits[:, 0])
    if return_trace:
        return probs, (trace, logits[:, 0], cache)
    return probs


def binary_qa_forward(model: MiniLM, ex: BinaryQAExample, vocab: Vocabulary,
                      train: bool = False, rng=None, return_trace: bool = False):
    """Probability that the candidate answer is true, read at the classifier token."""
    ids = binary_inputs(ex, vocab)
    trace = model.forward(ids, train=train, rng=rng)
    logits, cache = _mlp(model.params, "binqa", trace.final_hidden[0])
    prob = float(sigmoid(logits[0]))
    if return_trace:
        return prob, (trace, float(logits[0]), cache)
    return prob


def task_of(ex: TaskExample) -> str:
    if isinstance(ex, EREExample):
        return "ere"
    if isinstance(ex, ExtractiveQAExample):
        return "extractive_qa"
    return "binary_qa"


def example_loss_and_grads(model: MiniLM, ex: TaskExample, vocab: Vocabulary,
                           grads: dict[str, np.ndarray], weight: float = 1.0,
                           train: bool = False, rng=None) -> float:
    """Accumulate ``weight * d(loss)/d(params)`` into ``grads``; return the loss."""
    P = model.params
    if isinstance(ex, EREExample):
        _, (trace, logits, cache, i, j) = ere_forward(model, ex, vocab, train, rng, True)
        loss, _, dlog = softmax_xent(logits, ex.relation)
        dx = _mlp_back(P, "ere", cache, weight * dlog, grads)
        d = model.config.hidden_dim
        d_final = np.zeros_like(trace.final_hidden)
        d_final[i] += dx[:d]
        d_final[j] += dx[d:]
    elif isinstance(ex, ExtractiveQAExample):
        _, (trace, logits, cache) = extractive_qa_forward(model, ex, vocab, train, rng, True)
        n = len(ex.passage)
        loss = 0.0
        dlog = np.empty(n)
        for t in range(n):
            lt, _, dl = sigmoid_bce(float(logits[t]), ex.answer_labels[t])
            loss += lt / n
            dlog[t] = dl / n
        dx = _mlp_back(P, "tokqa", cache, (weight * dlog)[:, None], grads)
        d_final = np.zeros_like(trace.final_hidden)
        d_final[1:n + 1] = dx
    else:
        _, (trace, logit, cache) = binary_qa_forward(model, ex, vocab, train, rng, True)
        loss, _, dl = sigmoid_bce(logit, ex.label)
        dx = _mlp_back(P, "binqa", cache, np.array([weight * dl]), grads)
        d_final = np.zeros_like(trace.final_hidden)
        d_final[0] = dx
    model.backward(trace, d_final, grads)
    return loss


# -- prediction and evaluation -----------------------------------------------

def predict(model: MiniLM, ex: TaskExample, vocab: Vocabulary):
    """ERE: label id. Extractive QA: sorted answer positions. Binary QA: 0/1."""
    if isinstance(ex, EREExample):
        return int(np.argmax(ere_forward(model, ex, vocab)))
    if isinstance(ex, ExtractiveQAExample):
        probs = extractive_qa_forward(model, ex, vocab)
        return [int(t) for t in np.flatnonzero(probs > 0.5)]
    return int(binary_qa_forward(model, ex, vocab) > 0.5)


def is_correct(ex: TaskExample, prediction) -> int:
    if isinstance(ex, EREExample):
        return int(prediction == ex.relation)
    if isinstance(ex, ExtractiveQAExample):
        return metrics.exact_match(prediction, ex.gold_set)
    return int(prediction == ex.label)


def evaluate_predictions(examples: Sequence[TaskExample], predictions: Sequence,
                         labels: Sequence[str] = ()) -> dict[str, float]:
    """Task metrics from predictions aligned with ``examples``."""
    if not examples:
        return {}
    task = task_of(examples[0])
    if task == "ere":
        n = len(labels) or (max(max(e.relation for e in examples), max(predictions)) + 1)
        cm = metrics.confusion_matrix([e.relation for e in examples], predictions, n)
        names = list(labels) if labels else [str(i) for i in range(n)]
        return {"micro_f1": metrics.micro_f1(cm, names),
                "accuracy": float(np.mean([is_correct(e, p)
                                           for e, p in zip(examples, predictions)]))}
    if task == "extractive_qa":
        golds = [e.gold_set for e in examples]
        ems = [metrics.exact_match(p, g) for p, g in zip(predictions, golds)]
        groups: dict[str, list[int]] = {}
        for e, em in zip(examples, ems):
            groups.setdefault(e.group or e.id, []).append(em)
        return {"macro_f1": metrics.macro_f1_questions(predictions, golds),
                "exact_match": float(np.mean(ems)), "consistency": metrics.consistency(groups)}
    # binary QA: a question's answer set is its candidates labelled (or predicted) true
    gold_sets: dict[str, set] = {}
    pred_sets: dict[str, set] = {}
    for e, p in zip(examples, predictions):
        gold_sets.setdefault(e.question_id, set())
        pred_sets.setdefault(e.question_id, set())
        if e.label:
            gold_sets[e.question_id].add(e.id)
        if p:
            pred_sets[e.question_id].add(e.id)
    qids = list(gold_sets)
    return {"macro_f1": metrics.macro_f1_questions([pred_sets[q] for q in qids],
                                                   [gold_sets[q] for q in qids]),
            "exact_match": float(np.mean([metrics.exact_match(pred_sets[q], gold_sets[q])
                                          for q in qids])),
            "accuracy": float(np.mean([is_correct(e, p)
                                       for e, p in zip(examples, predictions)]))}


PRIMARY_METRIC = {"ere": "micro_f1", "extractive_qa": "macro_f1", "binary_qa": "macro_f1"}


def evaluate(model: MiniLM, examples: Sequence[TaskExample], vocab: Vocabulary,
             labels: Sequence[str] = ()) -> tuple[dict[str, float], list]:
    preds = [predict(model, ex, vocab) for ex in examples]
    return evaluate_predictions(examples, preds, labels), preds


# -- fine-tuning -------------------------------------------------------------

@dataclass
class FinetuneConfig:
    task: str = "ere"
    lr: float = 1e-5
    batch_size: int = 4
    epochs: int = 10
    seeds: tuple[int, ...] = (5, 7, 23)
    train_fraction: float = 1.0
    labels: tuple[str, ...] = LABEL_SETS["matres"]
    dropout: bool = True
    patience: int = 0

    def __post_init__(self):
        self.seeds = tuple(self.seeds)
        self.labels = tuple(self.labels)
        if self.task not in TASKS:
            raise TaskError(f"task must be one of {TASKS}")
        if not self.seeds:
            raise TaskError("at least one seed is required")
        if not 0.0 < self.train_fraction <= 1.0:
            raise TaskError("train_fraction must lie in (0, 1]")


def subsample(examples: Sequence[TaskExample], fraction: float, seed: int) -> list[TaskExample]:
    """Seeded low-resource subset; order of the kept examples is preserved."""
    if fraction >= 1.0:
        return list(examples)
    k = max(1, int(round(fraction * len(examples))))
    keep = sorted(random.Random(seed).sample(range(len(examples)), k))
    return [examples[i] for i in keep]


@dataclass
class FinetuneResult:
    model: MiniLM
    seed: int
    best_epoch: int
    best_dev: float
    dev_log: list[dict] = field(default_factory=list)


def finetune(encoder: MiniLM, train: Sequence[TaskExample], dev: Sequence[TaskExample],
             vocab: Vocabulary, cfg: FinetuneConfig, seed: int) -> FinetuneResult:
    """Fine-tune a fresh head plus the encoder; keep the best dev epoch.

    With ``epochs == 0`` the encoder is returned untouched with an untrained
    head.
    """
    n_labels = len(cfg.labels) if cfg.task == "ere" else 1
    model = attach_task_head(encoder, cfg.task, n_labels, seed)
    train = subsample(train, cfg.train_fraction, seed)
    metric = PRIMARY_METRIC[cfg.task]
    if cfg.epochs == 0 or not train:
        return FinetuneResult(model, seed, 0, float("nan"))
    opt = AdamState()
    order_rng = random.Random(seed)
    best = model.copy()
    best_score, best_epoch = -np.inf, 0
    dev_log = []
    stale = 0
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = list(range(len(train)))
        order_rng.shuffle(order)
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            grads = model.zeros_like()
            rng = np.random.default_rng([seed, 3, step])
            for k in idx:
                total += example_loss_and_grads(model, train[k], vocab, grads, 1.0 / len(idx),
                                                train=cfg.dropout, rng=rng)
            adam_step(model.params, grads, opt, cfg.lr)
            step += 1
        scores, _ = evaluate(model, dev, vocab, cfg.labels) if dev else ({metric: -total}, None)
        score = scores[metric]
        dev_log.append({"seed": seed, "epoch": epoch, "train_loss": total / len(train), **scores})
        log.info("seed %d epoch %d loss %.4f dev %s=%.4f", seed, epoch, total / len(train),
                 metric, score)
        if score > best_score:
            best_score, best_epoch, best = score, epoch, model.copy()
            stale = 0
        else:
            stale += 1
            if cfg.patience and stale >= cfg.patience:
                break
    return FinetuneResult(best, seed, best_epoch, float(best_score), dev_log)


def finetune_seeds(encoder: MiniLM, train, dev, vocab, cfg: FinetuneConfig
                   ) -> list[FinetuneResult]:
    return [finetune(encoder, train, dev, vocab, cfg, s) for s in cfg.seeds]
