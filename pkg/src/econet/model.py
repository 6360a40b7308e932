"""Miniature post-LN transformer encoder in NumPy with analytic gradients.

Everything is float64. Parameters live in a flat ``dict[str, ndarray]``;
task and pre-training heads share the dict under a ``head.`` prefix so that a
single optimizer and checkpoint cover encoder and heads together.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from scipy.special import erf

LN_EPS = 1e-12
_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 4
    n_heads: int = 4
    hidden_dim: int = 128
    ffn_dim: int = 512
    vocab_size: int = 1000
    max_seq_len: int = 128
    dropout_rate: float = 0.1
    init_std: float = 0.02

    def __post_init__(self):
        for name in ("n_layers", "n_heads", "hidden_dim", "ffn_dim", "vocab_size", "max_seq_len"):
            if getattr(self, name) < 1:
                raise ModelError(f"{name} must be positive")
        if self.hidden_dim % self.n_heads:
            raise ModelError("hidden_dim must be divisible by n_heads")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ModelError("dropout_rate must lie in [0, 1)")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.n_heads


@dataclass
class ForwardTrace:
    """Per-layer hidden states and attention probabilities for one sequence.

    ``hidden_states[0]`` is the embedding output, ``hidden_states[l]`` the
    output of layer ``l``. ``attention[l, h, q, k]`` is the pre-dropout
    probability that query ``q`` attends to key ``k`` in layer ``l + 1``.
    """

    token_ids: np.ndarray
    hidden_states: list[np.ndarray]
    attention: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def final_hidden(self) -> np.ndarray:
        return self.hidden_states[-1]


def encoder_param_names(cfg: ModelConfig) -> list[str]:
    names = ["tok_emb", "pos_emb", "emb_ln.g", "emb_ln.b"]
    for l in range(cfg.n_layers):
        p = f"layer{l}."
        names += [p + n for n in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
                                  "ln1.g", "ln1.b", "w1", "b1", "w2", "b2", "ln2.g", "ln2.b")]
    return names


def init_encoder(cfg: ModelConfig, seed: int | np.random.Generator = 0) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    d, f = cfg.hidden_dim, cfg.ffn_dim

    def w(*shape):
        return rng.normal(0.0, cfg.init_std, size=shape)

    params = {"tok_emb": w(cfg.vocab_size, d), "pos_emb": w(cfg.max_seq_len, d),
              "emb_ln.g": np.ones(d), "emb_ln.b": np.zeros(d)}
    for l in range(cfg.n_layers):
        p = f"layer{l}."
        for name in ("q", "k", "v", "o"):
            params[p + "w" + name] = w(d, d)
            params[p + "b" + name] = np.zeros(d)
        params[p + "ln1.g"], params[p + "ln1.b"] = np.ones(d), np.zeros(d)
        params[p + "w1"], params[p + "b1"] = w(d, f), np.zeros(f)
        params[p + "w2"], params[p + "b2"] = w(f, d), np.zeros(d)
        params[p + "ln2.g"], params[p + "ln2.b"] = np.ones(d), np.zeros(d)
    return params


def _layernorm(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv, g)


def _layernorm_back(dy, cache):
    xhat, inv, g = cache
    dg = (dy * xhat).sum(0)
    db = dy.sum(0)
    dxhat = dy * g
    dx = inv * (dxhat - dxhat.mean(-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    return dx, dg, db


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x):
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _dropout_mask(rng, shape, rate):
    if rng is None or rate == 0.0:
        return None
    return (rng.random(shape) >= rate) / (1.0 - rate)


class MiniLM:
    """Encoder plus any attached heads, sharing one parameter dict."""

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray] | None = None,
                 seed: int = 0):
        self.config = config
        self.params = params if params is not None else init_encoder(config, seed)

    # -- bookkeeping -------------------------------------------------------

    def copy(self) -> "MiniLM":
        return MiniLM(self.config, {k: v.copy() for k, v in self.params.items()})

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    def head_names(self) -> list[str]:
        return sorted(k for k in self.params if k.startswith("head."))

    def drop_heads(self) -> "MiniLM":
        return MiniLM(self.config, {k: v.copy() for k, v in self.params.items()
                                    if not k.startswith("head.")})

    def n_parameters(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    # -- forward / backward ------------------------------------------------

    def check_input(self, ids) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim != 1 or ids.size == 0:
            raise ModelError("token ids must be a non-empty 1-D sequence")
        if ids.size > self.config.max_seq_len:
            raise ModelError(f"input length {ids.size} exceeds max_seq_len "
                             f"{self.config.max_seq_len}")
        if ids.min() < 0 or ids.max() >= self.config.vocab_size:
            raise ModelError(f"token id out of range [0, {self.config.vocab_size})")
        return ids

    def forward(self, token_ids: Sequence[int], train: bool = False,
                rng: int | np.random.Generator | None = None) -> ForwardTrace:
        """Encode one sequence. Dropout is applied only when ``train`` is set."""
        cfg, P = self.config, self.params
        ids = self.check_input(token_ids)
        n, H, dh = ids.size, cfg.n_heads, cfg.head_dim
        drng = None
        if train and cfg.dropout_rate > 0.0:
            drng = np.random.default_rng(rng)
        rate = cfg.dropout_rate

        x = P["tok_emb"][ids] + P["pos_emb"][:n]
        h, ln_cache = _layernorm(x, P["emb_ln.g"], P["emb_ln.b"])
        m = _dropout_mask(drng, h.shape, rate)
        if m is not None:
            h = h * m
        cache: dict[str, Any] = {"ids": ids, "emb": (ln_cache, m), "layers": []}
        hidden = [h]
        attn = np.empty((cfg.n_layers, H, n, n))
        scale = 1.0 / math.sqrt(dh)
        for l in range(cfg.n_layers):
            p = f"layer{l}."
            q = (h @ P[p + "wq"] + P[p + "bq"]).reshape(n, H, dh).transpose(1, 0, 2)
            k = (h @ P[p + "wk"] + P[p + "bk"]).reshape(n, H, dh).transpose(1, 0, 2)
            v = (h @ P[p + "wv"] + P[p + "bv"]).reshape(n, H, dh).transpose(1, 0, 2)
            a = softmax(q @ k.transpose(0, 2, 1) * scale)
            attn[l] = a
            m_att = _dropout_mask(drng, a.shape, rate)
            a_used = a * m_att if m_att is not None else a
            ctx = (a_used @ v).transpose(1, 0, 2).reshape(n, cfg.hidden_dim)
            o = ctx @ P[p + "wo"] + P[p + "bo"]
            m_o = _dropout_mask(drng, o.shape, rate)
            if m_o is not None:
                o = o * m_o
            h1, ln1 = _layernorm(h + o, P[p + "ln1.g"], P[p + "ln1.b"])
            z = h1 @ P[p + "w1"] + P[p + "b1"]
            gz = gelu(z)
            f = gz @ P[p + "w2"] + P[p + "b2"]
            m_f = _dropout_mask(drng, f.shape, rate)
            if m_f is not None:
                f = f * m_f
            h2, ln2 = _layernorm(h1 + f, P[p + "ln2.g"], P[p + "ln2.b"])
            cache["layers"].append((h, q, k, v, a, m_att, a_used, ctx, m_o, ln1, h1, z, gz,
                                    m_f, ln2))
            h = h2
            hidden.append(h)
        return ForwardTrace(ids, hidden, attn, cache)

    def backward(self, trace: ForwardTrace, d_final: np.ndarray,
                 grads: dict[str, np.ndarray] | None = None) -> dict[str, np.ndarray]:
        """Accumulate encoder gradients for ``d(loss)/d(final_hidden)`` into ``grads``."""
        cfg, P = self.config, self.params
        if grads is None:
            grads = self.zeros_like()
        cache = trace._cache
        if not cache:
            raise ModelError("trace carries no backward cache")
        n, H, dh, d = trace.token_ids.size, cfg.n_heads, cfg.head_dim, cfg.hidden_dim
        scale = 1.0 / math.sqrt(dh)
        dh_out = np.asarray(d_final, dtype=np.float64)
        for l in reversed(range(cfg.n_layers)):
            p = f"layer{l}."
            (h_in, q, k, v, a, m_att, a_used, ctx, m_o, ln1, h1, z, gz, m_f,
             ln2) = cache["layers"][l]
            du2, dg, db = _layernorm_back(dh_out, ln2)
            grads[p + "ln2.g"] += dg
            grads[p + "ln2.b"] += db
            df = du2 if m_f is None else du2 * m_f
            grads[p + "w2"] += gz.T @ df
            grads[p + "b2"] += df.sum(0)
            dz = (df @ P[p + "w2"].T) * gelu_grad(z)
            grads[p + "w1"] += h1.T @ dz
            grads[p + "b1"] += dz.sum(0)
            dh1 = du2 + dz @ P[p + "w1"].T
            du, dg, db = _layernorm_back(dh1, ln1)
            grads[p + "ln1.g"] += dg
            grads[p + "ln1.b"] += db
            do = du if m_o is None else du * m_o
            grads[p + "wo"] += ctx.T @ do
            grads[p + "bo"] += do.sum(0)
            dctx = (do @ P[p + "wo"].T).reshape(n, H, dh).transpose(1, 0, 2)
            da_used = dctx @ v.transpose(0, 2, 1)
            dv = a_used.transpose(0, 2, 1) @ dctx
            da = da_used if m_att is None else da_used * m_att
            ds = a * (da - (da * a).sum(-1, keepdims=True)) * scale
            dq = ds @ k
            dk = ds.transpose(0, 2, 1) @ q
            dq = dq.transpose(1, 0, 2).reshape(n, d)
            dk = dk.transpose(1, 0, 2).reshape(n, d)
            dv = dv.transpose(1, 0, 2).reshape(n, d)
            grads[p + "wq"] += h_in.T @ dq
            grads[p + "bq"] += dq.sum(0)
            grads[p + "wk"] += h_in.T @ dk
            grads[p + "bk"] += dk.sum(0)
            grads[p + "wv"] += h_in.T @ dv
            grads[p + "bv"] += dv.sum(0)
            dh_out = du + dq @ P[p + "wq"].T + dk @ P[p + "wk"].T + dv @ P[p + "wv"].T
        ln_cache, m = cache["emb"]
        if m is not None:
            dh_out = dh_out * m
        dx, dg, db = _layernorm_back(dh_out, ln_cache)
        grads["emb_ln.g"] += dg
        grads["emb_ln.b"] += db
        np.add.at(grads["tok_emb"], cache["ids"], dx)
        grads["pos_emb"][:n] += dx
        return grads

    # -- persistence -------------------------------------------------------

    def save(self, path: str | Path, meta: dict | None = None) -> None:
        save_checkpoint(path, self, meta)

    @classmethod
    def load(cls, path: str | Path) -> tuple["MiniLM", dict]:
        return load_checkpoint(path)


# -- linear heads ------------------------------------------------------------

def add_linear_head(model: MiniLM, name: str, out_dim: int, seed: int | np.random.Generator = 0,
                    in_dim: int | None = None) -> None:
    rng = np.random.default_rng(seed)
    in_dim = in_dim or model.config.hidden_dim
    model.params[f"head.{name}.w"] = rng.normal(0.0, model.config.init_std, (in_dim, out_dim))
    model.params[f"head.{name}.b"] = np.zeros(out_dim)


def softmax_xent(logits: np.ndarray, gold: int) -> tuple[float, np.ndarray, np.ndarray]:
    """Cross-entropy of softmax(logits) against ``gold``: (loss, probs, dlogits)."""
    z = logits - logits.max()
    logz = math.log(np.exp(z).sum())
    probs = np.exp(z - logz)
    loss = float(logz - z[gold])
    dlogits = probs.copy()
    dlogits[gold] -= 1.0
    return loss, probs, dlogits


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid_bce(logit: float, y: int) -> tuple[float, float, float]:
    """Binary cross-entropy of sigmoid(logit) against y: (loss, prob, dlogit)."""
    # log(1 + e^-|x|) formulation stays finite for large |logit|
    loss = max(logit, 0.0) - logit * y + math.log1p(math.exp(-abs(logit)))
    p = float(sigmoid(logit))
    return float(loss), p, p - y


@dataclass(frozen=True)
class LossSpec:
    """Which head a batch trains: ``kind`` is "softmax" or "sigmoid"."""

    head: str
    kind: str = "softmax"


MLM_LOSS = LossSpec("mlm", "softmax")


def loss_and_grads(model: MiniLM, batch: Sequence[tuple[Sequence[int], int, int]],
                   spec: LossSpec, train: bool = False, rng: np.random.Generator | None = None,
                   ) -> tuple[float, dict[str, np.ndarray]]:
    """Mean loss and gradients over ``(token_ids, position, target)`` items.

    The named head reads the top-layer hidden state at ``position``.
    """
    if not batch:
        raise ModelError("empty batch")
    grads = model.zeros_like()
    total = 0.0
    w = model.params[f"head.{spec.head}.w"]
    b = model.params[f"head.{spec.head}.b"]
    inv = 1.0 / len(batch)
    for ids, pos, target in batch:
        trace = model.forward(ids, train=train, rng=rng)
        hvec = trace.final_hidden[pos]
        logits = hvec @ w + b
        if spec.kind == "softmax":
            loss, _, dlog = softmax_xent(logits, int(target))
        elif spec.kind == "sigmoid":
            loss, _, dl = sigmoid_bce(float(logits[0]), int(target))
            dlog = np.array([dl])
        else:
            raise ModelError(f"unknown loss kind {spec.kind!r}")
        total += loss * inv
        dlog = dlog * inv
        grads[f"head.{spec.head}.w"] += np.outer(hvec, dlog)
        grads[f"head.{spec.head}.b"] += dlog
        d_final = np.zeros_like(trace.final_hidden)
        d_final[pos] = w @ dlog
        model.backward(trace, d_final, grads)
    return total, grads


# -- optimizer ---------------------------------------------------------------

class NonFiniteGradient(ModelError):
    pass


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float, frozen: Sequence[str] = ()) -> None:
    """One bias-corrected Adam update, in place. Parameters named in ``frozen``
    (exact names or ``prefix.`` prefixes) are skipped."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient in parameter block {name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, g in grads.items():
        if any(name == f or (f.endswith(".") and name.startswith(f)) for f in frozen):
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        if not np.all(np.isfinite(params[name])):
            raise ModelError(f"parameter block {name!r} became non-finite")


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(path: str | Path, model: MiniLM, meta: dict | None = None,
                    optimizer: AdamState | None = None) -> None:
    """NumPy ``.npz`` holding config, metadata and every tensor, bit-exact."""
    arrays = {"param/" + k: v for k, v in model.params.items()}
    header = {"config": asdict(model.config), "meta": meta or {}}
    if optimizer is not None:
        header["optimizer"] = {"beta1": optimizer.beta1, "beta2": optimizer.beta2,
                               "eps": optimizer.eps, "step": optimizer.step}
        arrays.update({"adam_m/" + k: v for k, v in optimizer.m.items()})
        arrays.update({"adam_v/" + k: v for k, v in optimizer.v.items()})
    arrays["__header__"] = np.frombuffer(json.dumps(header, sort_keys=True).encode("utf-8"),
                                         dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path, with_optimizer: bool = False):
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(bytes(data["__header__"]).decode("utf-8"))
        params, m, v = {}, {}, {}
        for key in data.files:
            if key.startswith("param/"):
                params[key[6:]] = data[key].copy()
            elif key.startswith("adam_m/"):
                m[key[7:]] = data[key].copy()
            elif key.startswith("adam_v/"):
                v[key[7:]] = data[key].copy()
    model = MiniLM(ModelConfig(**header["config"]), params)
    if not with_optimizer:
        return model, header["meta"]
    opt = None
    if "optimizer" in header:
        opt = AdamState(m=m, v=v, **header["optimizer"])
    return model, header["meta"], opt
