"""Generator/discriminator pre-training objectives and the joint training loop.

A kind=1 (temporal) sample trains the 40-way temporal head, a kind=0 (event)
sample trains the event head; the generator's argmax fills the masked slot,
optionally replaced by a random draw, and the discriminator judges the filled
sequence in a second pass through the same encoder.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .lexicon import TemporalLexicon
from .masking import EVENT, MASK, TEMPORAL, EventVocabulary, MaskedSample
from .model import (AdamState, MiniLM, ModelError, add_linear_head, adam_step, load_checkpoint,
                    save_checkpoint, sigmoid_bce, softmax_xent)
from .vocab import Vocabulary

log = logging.getLogger(__name__)

MODES = ("econet", "generator_only", "random_mask")
LOG_COLUMNS = ("step", "l_temporal", "l_event", "l_disc", "l_joint", "disc_accuracy")


class ObjectiveError(ValueError):
    pass


@dataclass(frozen=True)
class EncodedSample:
    ids: tuple[int, ...]
    pos: int
    kind: int
    label: int
    original: tuple[int, ...]


@dataclass(frozen=True)
class LabelSpaces:
    """LM token ids for every temporal label and every event label."""

    temporal: tuple[int, ...]
    event: tuple[int, ...]

    @classmethod
    def build(cls, vocab: Vocabulary, lexicon: TemporalLexicon,
              events: EventVocabulary) -> "LabelSpaces":
        return cls(tuple(vocab.id(t) for t in lexicon.indicators),
                   tuple(vocab.id(w) for w in events.words))

    def candidates(self, kind: int) -> tuple[int, ...]:
        return self.temporal if kind == TEMPORAL else self.event


def encode_samples(samples: Sequence[MaskedSample], vocab: Vocabulary) -> list[EncodedSample]:
    out = []
    for s in samples:
        ids = vocab.encode(s.tokens)
        out.append(EncodedSample(tuple(ids), s.mask_pos + 1, s.kind, s.gold_label_id,
                                 tuple(vocab.encode(s.unmasked()))))
    return out


def add_pretraining_heads(model: MiniLM, n_events: int, n_temporal: int = 40,
                          seed: int = 0) -> None:
    rng = np.random.default_rng(seed)
    add_linear_head(model, "temporal", n_temporal, rng)
    add_linear_head(model, "event", max(n_events, 1), rng)
    add_linear_head(model, "disc", 1, rng)


def add_mlm_head(model: MiniLM, seed: int = 0) -> None:
    add_linear_head(model, "mlm", model.config.vocab_size, seed)


@dataclass
class HeadLoss:
    loss: float
    probs: np.ndarray
    d_hidden: np.ndarray
    grads: dict[str, np.ndarray]


def _softmax_head(model: MiniLM, name: str, hidden: np.ndarray, gold: int) -> HeadLoss:
    w, b = model.params[f"head.{name}.w"], model.params[f"head.{name}.b"]
    if not 0 <= gold < w.shape[1]:
        raise ObjectiveError(f"label {gold} outside the {name} label space [0, {w.shape[1]})")
    loss, probs, dlog = softmax_xent(hidden @ w + b, gold)
    return HeadLoss(loss, probs, w @ dlog,
                    {f"head.{name}.w": np.outer(hidden, dlog), f"head.{name}.b": dlog})


def temporal_loss(model: MiniLM, trace, mask_pos: int, gold_label_id: int) -> HeadLoss:
    """Softmax cross-entropy over the temporal indicator label space."""
    return _softmax_head(model, "temporal", trace.final_hidden[mask_pos], gold_label_id)


def event_loss(model: MiniLM, trace, mask_pos: int, gold_label_id: int) -> HeadLoss:
    """Softmax cross-entropy over the event vocabulary."""
    return _softmax_head(model, "event", trace.final_hidden[mask_pos], gold_label_id)


@dataclass(frozen=True)
class Perturbation:
    token: int
    y: int
    replaced: bool


def perturb_prediction(predicted: int, gold: int, candidates: Sequence[int], r_percent: float,
                       rng: np.random.Generator) -> Perturbation:
    """With probability r%, swap the generator output for a uniform draw from
    ``candidates``. ``y`` is 1 iff the emitted token equals the gold one."""
    if not 0.0 <= r_percent <= 100.0:
        raise ObjectiveError("r_percent must lie in [0, 100]")
    if len(candidates) == 0:
        raise ObjectiveError("empty replacement vocabulary")
    replaced = bool(rng.random() < r_percent / 100.0)
    token = int(candidates[int(rng.integers(len(candidates)))]) if replaced else int(predicted)
    return Perturbation(token, int(token == gold), replaced)


@dataclass(frozen=True)
class DiscriminatorInstance:
    filled_ids: tuple[int, ...]
    position: int
    y: int


def discriminator_loss(model: MiniLM, inst: DiscriminatorInstance, train: bool = False,
                       rng=None, weight: float = 1.0,
                       grads: dict[str, np.ndarray] | None = None) -> tuple[float, float, dict]:
    """BCE of the discriminator at the filled position; returns (loss, D(x_t), grads).

    Gradients are scaled by ``weight`` and accumulated into ``grads``.
    """
    if grads is None:
        grads = model.zeros_like()
    trace = model.forward(inst.filled_ids, train=train, rng=rng)
    hvec = trace.final_hidden[inst.position]
    w, b = model.params["head.disc.w"], model.params["head.disc.b"]
    loss, prob, dlogit = sigmoid_bce(float(hvec @ w[:, 0] + b[0]), inst.y)
    dlogit *= weight
    grads["head.disc.w"][:, 0] += hvec * dlogit
    grads["head.disc.b"][0] += dlogit
    d_final = np.zeros_like(trace.final_hidden)
    d_final[inst.position] = w[:, 0] * dlogit
    model.backward(trace, d_final, grads)
    return loss, prob, grads


@dataclass
class LossBreakdown:
    step: int
    l_temporal: float
    l_event: float
    l_disc: float
    l_joint: float
    alpha: float
    beta: float
    disc_accuracy: float = float("nan")
    original_fraction: float = float("nan")
    replaced_fraction: float = float("nan")

    def row(self) -> list:
        return [self.step, repr(self.l_temporal), repr(self.l_event), repr(self.l_disc),
                repr(self.l_joint), repr(self.disc_accuracy)]


@dataclass
class JointResult:
    breakdown: LossBreakdown
    grads: dict[str, np.ndarray]
    generator_grads: dict[str, np.ndarray]
    disc_grads: dict[str, np.ndarray]
    instances: list[DiscriminatorInstance]


def joint_loss_and_grads(model: MiniLM, batch: Sequence[EncodedSample], spaces: LabelSpaces,
                         alpha: float = 1.0, beta: float = 1.0, r_percent: float = 50.0,
                         rng: np.random.Generator | None = None, train: bool = False,
                         with_discriminator: bool = True,
                         instances: Sequence[DiscriminatorInstance] | None = None,
                         step: int = 0) -> JointResult:
    """L = L_T + alpha * L_E + beta * L_D for one batch, with gradients.

    L_T and L_E average over the temporal and event items respectively (an
    empty group contributes 0); L_D averages over every item. Passing
    ``instances`` replays fixed discriminator inputs instead of drawing new
    perturbations, which makes the loss a smooth function of the parameters.
    """
    if not batch:
        raise ObjectiveError("joint step needs a non-empty batch")
    rng = rng if rng is not None else np.random.default_rng(0)
    n_t = sum(1 for s in batch if s.kind == TEMPORAL)
    n_e = len(batch) - n_t
    gen = model.zeros_like()
    l_t = l_e = 0.0
    made: list[DiscriminatorInstance] = []
    n_replaced = 0
    for s in batch:
        trace = model.forward(s.ids, train=train, rng=rng)
        if s.kind == TEMPORAL:
            res = temporal_loss(model, trace, s.pos, s.label)
            weight = 1.0 / n_t
            l_t += res.loss / n_t
        else:
            res = event_loss(model, trace, s.pos, s.label)
            weight = alpha / n_e
            l_e += res.loss / n_e
        for k, g in res.grads.items():
            gen[k] += weight * g
        d_final = np.zeros_like(trace.final_hidden)
        d_final[s.pos] = weight * res.d_hidden
        model.backward(trace, d_final, gen)
        if with_discriminator and instances is None:
            cands = spaces.candidates(s.kind)
            predicted = cands[int(np.argmax(res.probs))]
            pert = perturb_prediction(predicted, cands[s.label], cands, r_percent, rng)
            n_replaced += pert.replaced
            filled = list(s.ids)
            filled[s.pos] = pert.token
            made.append(DiscriminatorInstance(tuple(filled), s.pos, pert.y))

    disc = model.zeros_like()
    l_d = 0.0
    acc = float("nan")
    if with_discriminator:
        insts = list(instances) if instances is not None else made
        if len(insts) != len(batch):
            raise ObjectiveError("one discriminator instance per batch item is required")
        correct = 0
        for inst in insts:
            loss, prob, _ = discriminator_loss(model, inst, train=train, rng=rng,
                                               weight=1.0 / len(insts), grads=disc)
            l_d += loss / len(insts)
            correct += int((prob > 0.5) == bool(inst.y))
        acc = correct / len(insts)
        made = insts
    grads = {k: gen[k] + beta * disc[k] for k in gen}
    bd = LossBreakdown(step, l_t, l_e, l_d, l_t + alpha * l_e + beta * l_d, alpha, beta, acc)
    if made:
        bd.original_fraction = sum(i.y for i in made) / len(made)
        bd.replaced_fraction = n_replaced / len(made)
    return JointResult(bd, grads, gen, disc, made)


def random_mask_loss_and_grads(model: MiniLM, batch: Sequence[EncodedSample],
                               rng: np.random.Generator, special_ids: frozenset[int],
                               train: bool = False, step: int = 0
                               ) -> tuple[LossBreakdown, dict[str, np.ndarray]]:
    """Plain MLM baseline: mask one uniformly drawn non-special token per sample
    and predict it over the whole vocabulary."""
    grads = model.zeros_like()
    total = 0.0
    w, b = model.params["head.mlm.w"], model.params["head.mlm.b"]
    for s in batch:
        ids = list(s.original)
        choices = [i for i, t in enumerate(ids) if t not in special_ids]
        if not choices:
            raise ObjectiveError("sample has no maskable token")
        pos = choices[int(rng.integers(len(choices)))]
        target = ids[pos]
        ids[pos] = s.ids[s.pos]  # the sample's own mask token id
        trace = model.forward(ids, train=train, rng=rng)
        hvec = trace.final_hidden[pos]
        loss, _, dlog = softmax_xent(hvec @ w + b, target)
        dlog = dlog / len(batch)
        total += loss / len(batch)
        grads["head.mlm.w"] += np.outer(hvec, dlog)
        grads["head.mlm.b"] += dlog
        d_final = np.zeros_like(trace.final_hidden)
        d_final[pos] = w @ dlog
        model.backward(trace, d_final, grads)
    return LossBreakdown(step, total, 0.0, 0.0, total, 0.0, 0.0), grads


# -- training loop -------------------------------------------------------------

@dataclass
class PretrainConfig:
    alpha: float = 1.0
    beta: float = 1.0
    r_percent: float = 50.0
    lr: float = 1e-6
    batch_size: int = 8
    max_steps: int = 2000
    seed: int = 0
    mode: str = "econet"
    checkpoint_every: int = 0
    generator_warmup_steps: int = 0
    dropout: bool = True
    warmup_steps: int = 0
    schedule: str = "constant"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ObjectiveError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.batch_size < 1:
            raise ObjectiveError("batch_size must be positive")
        if self.schedule not in ("constant", "linear"):
            raise ObjectiveError("schedule must be 'constant' or 'linear'")

    def lr_at(self, step: int) -> float:
        """Linear warmup, then constant or linear decay to zero at max_steps."""
        if self.warmup_steps and step < self.warmup_steps:
            return self.lr * (step + 1) / self.warmup_steps
        if self.schedule == "linear":
            span = max(1, self.max_steps - self.warmup_steps)
            return self.lr * max(0.0, (self.max_steps - step) / span)
        return self.lr

    @property
    def effective_beta(self) -> float:
        return 0.0 if self.mode != "econet" else self.beta


def batch_indices(n: int, step: int, batch_size: int, seed: int) -> list[int]:
    """Items for ``step`` from an endless stream of per-epoch permutations.

    Depends only on (n, step, batch_size, seed), so a resumed run sees the same
    batches as an uninterrupted one.
    """
    out = []
    perms: dict[int, np.ndarray] = {}
    for t in range(step * batch_size, (step + 1) * batch_size):
        epoch = t // n
        if epoch not in perms:
            perms[epoch] = np.random.default_rng([seed, 1, epoch]).permutation(n)
        out.append(int(perms[epoch][t % n]))
    return out


def train_step(model: MiniLM, batch: Sequence[EncodedSample], spaces: LabelSpaces,
               cfg: PretrainConfig, opt: AdamState, step: int,
               special_ids: frozenset[int] = frozenset()) -> LossBreakdown:
    rng = np.random.default_rng([cfg.seed, 2, step])
    train = cfg.dropout
    if cfg.mode == "random_mask":
        bd, grads = random_mask_loss_and_grads(model, batch, rng, special_ids, train, step)
        adam_step(model.params, grads, opt, cfg.lr_at(step))
        return bd
    use_disc = cfg.mode == "econet" and step >= cfg.generator_warmup_steps
    beta = cfg.beta if use_disc else 0.0
    res = joint_loss_and_grads(model, batch, spaces, cfg.alpha, beta, cfg.r_percent, rng,
                               train=train, with_discriminator=use_disc, step=step)
    frozen = () if use_disc else ("head.disc.w", "head.disc.b")
    adam_step(model.params, res.grads, opt, cfg.lr_at(step), frozen=frozen)
    return res.breakdown


def joint_step(model: MiniLM, batch: Sequence[EncodedSample], spaces: LabelSpaces,
               alpha: float, beta: float, r_percent: float, lr: float, opt: AdamState,
               rng: np.random.Generator, train: bool = True) -> LossBreakdown:
    """One optimizer step on the joint loss."""
    res = joint_loss_and_grads(model, batch, spaces, alpha, beta, r_percent, rng, train=train,
                               step=opt.step)
    adam_step(model.params, res.grads, opt, lr)
    return res.breakdown


def write_loss_log(path: str | Path, rows: Sequence[LossBreakdown], append: bool = False) -> None:
    path = Path(path)
    new = not (append and path.exists())
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(LOG_COLUMNS)
        for r in rows:
            w.writerow(r.row())


def read_loss_log(path: str | Path) -> list[dict[str, float]]:
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "step" else float(v)) for k, v in row.items()}
                for row in csv.DictReader(fh)]


def prepare_model(model: MiniLM, n_events: int, mode: str, seed: int = 0) -> MiniLM:
    """Attach the heads a mode trains, if not already present."""
    if mode == "random_mask":
        if "head.mlm.w" not in model.params:
            add_mlm_head(model, seed)
    elif "head.temporal.w" not in model.params:
        add_pretraining_heads(model, n_events, seed=seed)
    return model


def pretrain(model: MiniLM, data: Sequence[EncodedSample], spaces: LabelSpaces,
             cfg: PretrainConfig, out_dir: str | Path | None = None,
             meta: dict | None = None, opt: AdamState | None = None, start_step: int = 0,
             special_ids: frozenset[int] = frozenset(),
             callback: Callable[[LossBreakdown], None] | None = None) -> list[LossBreakdown]:
    """Run steps ``start_step .. cfg.max_steps - 1``.

    With ``out_dir`` set, a ``loss_log.csv`` is written (appended on resume),
    checkpoints land in ``ckpt_{step}.npz`` every ``checkpoint_every`` steps
    and ``final.npz`` at the end. Checkpoints carry the Adam state so that a
    resumed run continues the same trajectory.
    """
    if not data:
        raise ObjectiveError("pre-training dataset is empty")
    prepare_model(model, len(spaces.event), cfg.mode, cfg.seed)
    opt = opt or AdamState()
    meta = dict(meta or {})
    meta["pretrain"] = asdict(cfg)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    log_path = out / "loss_log.csv" if out is not None else None
    if log_path is not None and start_step == 0:
        write_loss_log(log_path, [])
    history = []
    for step in range(start_step, cfg.max_steps):
        batch = [data[i] for i in batch_indices(len(data), step, cfg.batch_size, cfg.seed)]
        bd = train_step(model, batch, spaces, cfg, opt, step, special_ids)
        history.append(bd)
        if log_path is not None:
            write_loss_log(log_path, [bd], append=True)
        if callback:
            callback(bd)
        done = step + 1
        if out is not None and cfg.checkpoint_every and done % cfg.checkpoint_every == 0:
            save_checkpoint(out / f"ckpt_{done}.npz", model, {**meta, "step": done}, opt)
        if step % 100 == 0:
            log.info("step %d l_joint=%.4f l_t=%.4f l_e=%.4f l_d=%.4f", step, bd.l_joint,
                     bd.l_temporal, bd.l_event, bd.l_disc)
    if out is not None:
        save_checkpoint(out / "final.npz", model, {**meta, "step": cfg.max_steps}, opt)
    return history


def resume(path: str | Path) -> tuple[MiniLM, dict, AdamState, int]:
    model, meta, opt = load_checkpoint(path, with_optimizer=True)
    return model, meta, opt or AdamState(), int(meta.get("step", 0))


def generator_accuracy(model: MiniLM, data: Sequence[EncodedSample], kind: int = TEMPORAL
                       ) -> float:
    """Argmax accuracy of the temporal (or event) head on ``data`` in eval mode."""
    items = [s for s in data if s.kind == kind]
    if not items:
        return math.nan
    name = "temporal" if kind == TEMPORAL else "event"
    w, b = model.params[f"head.{name}.w"], model.params[f"head.{name}.b"]
    hits = 0
    for s in items:
        h = model.forward(s.ids).final_hidden[s.pos]
        hits += int(np.argmax(h @ w + b) == s.label)
    return hits / len(items)


__all__ = [
    "MASK", "EVENT", "TEMPORAL", "EncodedSample", "LabelSpaces", "encode_samples",
    "temporal_loss", "event_loss", "perturb_prediction", "discriminator_loss",
    "joint_loss_and_grads", "joint_step", "pretrain", "PretrainConfig", "LossBreakdown",
    "DiscriminatorInstance", "ModelError",
]
