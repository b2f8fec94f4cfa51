"""Post-norm transformer encoder classifier over ``[a, b, =]`` sequences."""

from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .tensor import Tensor

SEQ_LEN = 3
INIT_SCHEMES = ("torch", "normal")


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    n_classes: int
    d_model: int = 128
    n_heads: int = 4
    n_layers: int = 1
    ff_mult: int = 4
    init_seed: int = 0
    seq_len: int = SEQ_LEN
    ln_eps: float = 1e-5
    init_scheme: str = "torch"

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.seq_len != SEQ_LEN:
            raise ValueError("sequence length is fixed at 3")
        if self.init_scheme not in INIT_SCHEMES:
            raise ValueError(f"init_scheme must be one of {INIT_SCHEMES}")
        if min(self.d_model, self.n_heads, self.n_layers, self.vocab_size, self.n_classes) < 1:
            raise ValueError("model dimensions must be positive")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


def _trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


def _uniform(rng: np.random.Generator, shape, bound: float) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


def init_params(config: ModelConfig) -> "OrderedDict[str, Tensor]":
    """Fresh parameters in registration order, deterministic in ``init_seed``.

    ``normal``: every matrix from N(0, 0.02^2) truncated at two standard
    deviations, biases zero, layer-norm gains one.
    ``torch``: the defaults of the common deep-learning framework layers:
    embeddings N(0, 1), query/key/value Xavier-uniform over the stacked
    [3d, d] projection, other linear maps U(+-1/sqrt(fan_in)) with biases
    drawn the same way, layer-norm gains one and biases zero.
    """
    rng = np.random.default_rng(config.init_seed)
    d, ff = config.d_model, config.d_model * config.ff_mult
    torch_style = config.init_scheme == "torch"
    xavier_qkv = np.sqrt(6.0 / (d + 3 * d))
    # (name, shape, kind, fan_in)
    shapes: list[tuple[str, tuple, str, int]] = [
        ("tok_emb", (config.vocab_size, d), "emb", 0),
        ("pos_emb", (SEQ_LEN, d), "emb", 0),
    ]
    for i in range(config.n_layers):
        shapes += [
            (f"l{i}.wq", (d, d), "qkv", d),
            (f"l{i}.wk", (d, d), "qkv", d),
            (f"l{i}.wv", (d, d), "qkv", d),
            (f"l{i}.wo", (d, d), "lin", d),
            (f"l{i}.ln1_g", (d,), "one", 0),
            (f"l{i}.ln1_b", (d,), "zero", 0),
            (f"l{i}.ff1_w", (d, ff), "lin", d),
            (f"l{i}.ff1_b", (ff,), "bias", d),
            (f"l{i}.ff2_w", (ff, d), "lin", ff),
            (f"l{i}.ff2_b", (d,), "bias", ff),
            (f"l{i}.ln2_g", (d,), "one", 0),
            (f"l{i}.ln2_b", (d,), "zero", 0),
        ]
    shapes += [("head_w", (d, config.n_classes), "lin", d), ("head_b", (config.n_classes,), "bias", d)]

    params: OrderedDict[str, Tensor] = OrderedDict()
    for name, shape, kind, fan_in in shapes:
        if kind == "one":
            arr = np.ones(shape)
        elif kind == "zero" or (kind == "bias" and not torch_style):
            arr = np.zeros(shape)
        elif not torch_style:
            arr = _trunc_normal(rng, shape)
        elif kind == "emb":
            arr = rng.standard_normal(shape)
        elif kind == "qkv":
            arr = _uniform(rng, shape, xavier_qkv)
        else:
            arr = _uniform(rng, shape, 1.0 / np.sqrt(fan_in))
        params[name] = Tensor(arr, requires_grad=True, name=name)
    return params


class Transformer:
    """Encoder classifier. ``forward`` returns logits and the readout representation.

    The readout vector ``phi`` is the final position of the last encoder layer
    (after its second layer norm); logits are ``phi @ head_w + head_b``.
    """

    def __init__(self, config: ModelConfig, params=None):
        self.config = config
        self.params = params if params is not None else init_params(config)

    def parameters(self):
        return list(self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def _layer(self, x: Tensor, i: int, readout_only: bool, trace):
        cfg = self.config
        P = self.params
        B = x.shape[0]
        h, dh, d = cfg.n_heads, cfg.d_head, cfg.d_model
        flat = T.reshape(x, (B * SEQ_LEN, d))
        k = T.transpose(T.reshape(flat @ P[f"l{i}.wk"], (B, SEQ_LEN, h, dh)), (0, 2, 3, 1))
        v = T.transpose(T.reshape(flat @ P[f"l{i}.wv"], (B, SEQ_LEN, h, dh)), (0, 2, 1, 3))
        # Only the readout position feeds later computation in the last layer,
        # so the other query rows are skipped; their outputs would be discarded.
        if readout_only:
            tq = 1
            resid = T.select(x, SEQ_LEN - 1, axis=1)
        else:
            tq = SEQ_LEN
            resid = flat
        q = T.transpose(T.reshape(resid @ P[f"l{i}.wq"], (B, tq, h, dh)), (0, 2, 1, 3))
        scores = T.scale(T.matmul(q, k), 1.0 / np.sqrt(dh))
        attn = T.softmax(scores, axis=-1)
        if trace is not None:
            trace.setdefault("attention", []).append(attn.data)
        ctx = T.reshape(T.transpose(T.matmul(attn, v), (0, 2, 1, 3)), (B * tq, d))
        y = T.layer_norm(resid + ctx @ P[f"l{i}.wo"], P[f"l{i}.ln1_g"], P[f"l{i}.ln1_b"], cfg.ln_eps)
        hidden = T.relu(y @ P[f"l{i}.ff1_w"] + P[f"l{i}.ff1_b"])
        z = T.layer_norm(y + hidden @ P[f"l{i}.ff2_w"] + P[f"l{i}.ff2_b"],
                         P[f"l{i}.ln2_g"], P[f"l{i}.ln2_b"], cfg.ln_eps)
        return T.reshape(z, (B, tq, d))

    def forward(self, tokens, trace: dict | None = None) -> tuple[Tensor, Tensor]:
        tokens = np.asarray(tokens)
        cfg = self.config
        if tokens.ndim != 2 or tokens.shape[1] != SEQ_LEN:
            raise ValueError(f"tokens must have shape [B, {SEQ_LEN}], got {tokens.shape}")
        if tokens.size and (tokens.min() < 0 or tokens.max() >= cfg.vocab_size):
            raise ValueError(f"token id out of range [0, {cfg.vocab_size})")
        x = T.embedding(self.params["tok_emb"], tokens) + self.params["pos_emb"]
        for i in range(cfg.n_layers):
            x = self._layer(x, i, readout_only=(i == cfg.n_layers - 1), trace=trace)
        phi = T.select(x, x.shape[1] - 1, axis=1)
        logits = phi @ self.params["head_w"] + self.params["head_b"]
        return logits, phi

    __call__ = forward

    def save(self, path) -> None:
        save_checkpoint(self, path)


def evaluate(model, dataset, split: str, batch_size: int = 2048) -> float:
    """Accuracy of ``argmax(logits)`` over every row of ``split``."""
    idx = dataset.split(split)
    if len(idx) == 0:
        raise ValueError(f"split {split!r} is empty")
    correct = 0
    with T.no_grad():
        for start in range(0, len(idx), batch_size):
            rows = idx[start:start + batch_size]
            logits, _ = model.forward(dataset.sequences[rows])
            correct += int((logits.data.argmax(axis=1) == dataset.labels[rows]).sum())
    return correct / len(idx)


def representations(model, tokens, batch_size: int = 2048) -> np.ndarray:
    """Readout vectors ``phi`` for ``tokens`` without recording gradients."""
    out = []
    with T.no_grad():
        for start in range(0, len(tokens), batch_size):
            out.append(model.forward(tokens[start:start + batch_size])[1].data)
    return np.concatenate(out, axis=0) if out else np.zeros((0, model.config.d_model))


# Checkpoints are ``.npz`` archives: one float64 ``.npy`` member per parameter
# (the .npy header carries dtype and shape) plus a ``__config__`` member holding
# the ModelConfig as a JSON string. Member names equal parameter names.


def save_checkpoint(model: Transformer, path) -> None:
    arrays = {name: p.data for name, p in model.params.items()}
    arrays["__config__"] = np.array(json.dumps(asdict(model.config)))
    with open(Path(path), "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> Transformer:
    with np.load(Path(path), allow_pickle=False) as z:
        config = ModelConfig(**json.loads(str(z["__config__"])))
        params = init_params(config)
        for name, p in params.items():
            arr = z[name]
            if arr.shape != p.shape:
                raise ValueError(f"checkpoint shape mismatch for {name}: {arr.shape} vs {p.shape}")
            p.data = np.array(arr, dtype=np.float64)
    return Transformer(config, params)
