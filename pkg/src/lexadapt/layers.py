"""Trainable building blocks: embeddings, BiLSTM, GRU, transformer encoder,
linear/MLP heads and dropout.

Every layer registers its tensors in a shared :class:`ParameterSet` under a
unique dotted name, which is also the checkpoint key. Initialization is
driven by an explicit ``numpy`` Generator so that (seed, config) fully
determines the starting weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError, DimensionError
from .vocab import PAD_INDEX


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def embedding_init(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    return rng.normal(0.0, 0.02, size=(rows, cols))


@dataclass
class ParamMeta:
    shape: tuple
    init: str


class ParameterSet:
    """Ordered, uniquely-named collection of trainable tensors."""

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}
        self._meta: dict[str, ParamMeta] = {}

    def add(self, name: str, values: np.ndarray, init: str) -> Tensor:
        if name in self._tensors:
            raise ConfigError(f"duplicate parameter name {name!r}")
        tensor = Tensor(values, op=f"param:{name}")
        self._tensors[name] = tensor
        self._meta[name] = ParamMeta(shape=tuple(np.shape(values)), init=init)
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return list(self._tensors)

    def tensors(self) -> dict[str, Tensor]:
        return dict(self._tensors)

    def zero_grads(self) -> None:
        ad.zero_grads(self._tensors.values())

    def state(self) -> dict:
        return {
            name: {
                "shape": list(self._meta[name].shape),
                "init": self._meta[name].init,
                "values": t.data.reshape(-1).tolist(),
            }
            for name, t in self._tensors.items()
        }

    def load_state(self, state: dict) -> None:
        from .errors import CheckpointError

        missing = set(self._tensors) - set(state)
        extra = set(state) - set(self._tensors)
        if missing or extra:
            raise CheckpointError(
                f"parameter names do not match checkpoint (missing={sorted(missing)}, extra={sorted(extra)})"
            )
        for name, entry in state.items():
            tensor = self._tensors[name]
            shape = tuple(entry["shape"])
            if shape != tensor.shape:
                raise CheckpointError(
                    f"shape mismatch for {name!r}: checkpoint {shape} vs model {tensor.shape}"
                )
            tensor.data = np.asarray(entry["values"], dtype=np.float64).reshape(shape)
            tensor.grad = np.zeros_like(tensor.data)


def dropout(x: Tensor, rate: float, mode: str, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: train mode zeroes with probability ``rate`` and
    rescales survivors by 1/(1-rate); eval mode is the identity."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if mode not in ("train", "eval"):
        raise ContractError(f"dropout mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or rate == 0.0:
        return x
    if rng is None:
        raise ContractError("train-mode dropout needs an rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * Tensor(mask, op="dropout_mask")


class Linear:
    def __init__(self, params: ParameterSet, name: str, d_in: int, d_out: int, rng):
        self.w = params.add(f"{name}.w", glorot_uniform(rng, d_in, d_out), "glorot_uniform")
        self.b = params.add(f"{name}.b", np.zeros(d_out), "zeros")
        self.d_in = d_in
        self.d_out = d_out

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise DimensionError(f"linear expects width {self.d_in}, got shape {x.shape}")
        return ad.matmul(x, self.w) + self.b


class Embedding:
    def __init__(self, params: ParameterSet, name: str, vocab_size: int, dim: int, rng):
        self.table = params.add(f"{name}.table", embedding_init(rng, vocab_size, dim), "normal(0,0.02)")
        self.vocab_size = vocab_size
        self.dim = dim

    def __call__(self, indices) -> Tensor:
        return ad.gather_rows(self.table, indices)


class LstmCell:
    """Single-direction LSTM cell with fused gate weights (order i, f, g, o)."""

    def __init__(self, params: ParameterSet, name: str, d_in: int, hidden: int, rng):
        self.hidden = hidden
        self.wx = params.add(f"{name}.wx", glorot_uniform(rng, d_in, 4 * hidden), "glorot_uniform")
        self.wh = params.add(f"{name}.wh", glorot_uniform(rng, hidden, 4 * hidden), "glorot_uniform")
        self.b = params.add(f"{name}.b", np.zeros(4 * hidden), "zeros")

    def step(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        h_size = self.hidden
        z = ad.matmul(x, self.wx) + ad.matmul(h, self.wh) + self.b
        i = ad.sigmoid(ad.narrow(z, 0, 0, h_size))
        f = ad.sigmoid(ad.narrow(z, 0, h_size, h_size))
        g = ad.tanh(ad.narrow(z, 0, 2 * h_size, h_size))
        o = ad.sigmoid(ad.narrow(z, 0, 3 * h_size, h_size))
        c_next = f * c + i * g
        h_next = o * ad.tanh(c_next)
        return h_next, c_next


class BiLstmEncoder:
    """Bidirectional LSTM over an embedded sequence.

    ``encode`` returns the concatenation of the final forward and final
    backward hidden states (length exactly 2 * hidden) followed by dropout.
    Only the first ``length`` rows of the sequence are consumed, so padding
    rows can never leak into the representation.
    """

    def __init__(self, params: ParameterSet, name: str, d_in: int, hidden: int, rng,
                 tie_directions: bool = False):
        self.hidden = hidden
        self.fwd = LstmCell(params, f"{name}.fwd", d_in, hidden, rng)
        self.bwd = self.fwd if tie_directions else LstmCell(params, f"{name}.bwd", d_in, hidden, rng)

    def _run(self, cell: LstmCell, rows: list[Tensor]) -> Tensor:
        h = Tensor(np.zeros(self.hidden), op="h0")
        c = Tensor(np.zeros(self.hidden), op="c0")
        for x in rows:
            h, c = cell.step(x, h, c)
        return h

    def encode(self, seq: Tensor, length: int | None, mode: str, rng,
               dropout_rate: float = 0.0) -> Tensor:
        if seq.ndim != 2:
            raise DimensionError(f"BiLSTM expects an embedded matrix, got shape {seq.shape}")
        n = seq.shape[0] if length is None else length
        if n < 1:
            raise ContractError("BiLSTM got an empty sequence; pad or drop the example first")
        if n > seq.shape[0]:
            raise ContractError(f"length {n} exceeds sequence rows {seq.shape[0]}")
        d = seq.shape[1]
        rows = [ad.reshape(ad.narrow(seq, 0, t, 1), (d,)) for t in range(n)]
        h_fwd = self._run(self.fwd, rows)
        h_bwd = self._run(self.bwd, rows[::-1])
        out = ad.concat([h_fwd, h_bwd], axis=0)
        return dropout(out, dropout_rate, mode, rng)


class GruCell:
    """Gated recurrent unit; new hidden = (1-z)*candidate + z*hidden."""

    def __init__(self, params: ParameterSet, name: str, d_in: int, hidden: int, rng):
        self.hidden = hidden
        self.wx = params.add(f"{name}.wx", glorot_uniform(rng, d_in, 3 * hidden), "glorot_uniform")
        self.wh = params.add(f"{name}.wh", glorot_uniform(rng, hidden, 3 * hidden), "glorot_uniform")
        self.b = params.add(f"{name}.b", np.zeros(3 * hidden), "zeros")

    def step(self, x: Tensor, h: Tensor) -> Tensor:
        h_size = self.hidden
        if x.shape[-1] != self.wx.shape[0] or h.shape[-1] != h_size:
            raise DimensionError(
                f"GRU step shapes {x.shape}/{h.shape} do not match parameters "
                f"{self.wx.shape}/{self.wh.shape}"
            )
        gx = ad.matmul(x, self.wx) + self.b
        gh = ad.matmul(h, self.wh)
        r = ad.sigmoid(ad.narrow(gx, 0, 0, h_size) + ad.narrow(gh, 0, 0, h_size))
        z = ad.sigmoid(ad.narrow(gx, 0, h_size, h_size) + ad.narrow(gh, 0, h_size, h_size))
        n = ad.tanh(ad.narrow(gx, 0, 2 * h_size, h_size) + r * ad.narrow(gh, 0, 2 * h_size, h_size))
        one = Tensor(np.ones(h_size), op="one")
        return (one - z) * n + z * h


def sinusoidal_positions(max_len: int, dim: int) -> np.ndarray:
    positions = np.arange(max_len)[:, None]
    div = np.exp(np.arange(0, dim, 2) * (-np.log(10000.0) / dim))
    table = np.zeros((max_len, dim))
    table[:, 0::2] = np.sin(positions * div)
    table[:, 1::2] = np.cos(positions * div[: dim // 2])
    return table


class TransformerBlock:
    def __init__(self, params: ParameterSet, name: str, d_model: int, n_heads: int, d_ff: int, rng):
        if d_model % n_heads != 0:
            raise ConfigError(f"d_model {d_model} not divisible by {n_heads} heads")
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.wq = Linear(params, f"{name}.attn.q", d_model, d_model, rng)
        self.wk = Linear(params, f"{name}.attn.k", d_model, d_model, rng)
        self.wv = Linear(params, f"{name}.attn.v", d_model, d_model, rng)
        self.wo = Linear(params, f"{name}.attn.out", d_model, d_model, rng)
        self.ln1_g = params.add(f"{name}.ln1.gain", np.ones(d_model), "ones")
        self.ln1_b = params.add(f"{name}.ln1.bias", np.zeros(d_model), "zeros")
        self.ff1 = Linear(params, f"{name}.ff.inner", d_model, d_ff, rng)
        self.ff2 = Linear(params, f"{name}.ff.outer", d_ff, d_model, rng)
        self.ln2_g = params.add(f"{name}.ln2.gain", np.ones(d_model), "ones")
        self.ln2_b = params.add(f"{name}.ln2.bias", np.zeros(d_model), "zeros")

    def attention(self, x: Tensor, key_mask: np.ndarray) -> Tensor:
        q, k, v = self.wq(x), self.wk(x), self.wv(x)
        scale = 1.0 / np.sqrt(self.d_head)
        heads = []
        for head in range(self.n_heads):
            start = head * self.d_head
            qh = ad.narrow(q, 1, start, self.d_head)
            kh = ad.narrow(k, 1, start, self.d_head)
            vh = ad.narrow(v, 1, start, self.d_head)
            scores = ad.matmul(qh, ad.transpose(kh)) * scale
            attn = ad.masked_softmax(scores, key_mask[None, :], axis=-1)
            heads.append(ad.matmul(attn, vh))
        return self.wo(ad.concat(heads, axis=1))

    def __call__(self, x: Tensor, key_mask: np.ndarray) -> Tensor:
        attended = ad.layer_norm(x + self.attention(x, key_mask)) * self.ln1_g + self.ln1_b
        ff = self.ff2(ad.relu(self.ff1(attended)))
        return ad.layer_norm(attended + ff) * self.ln2_g + self.ln2_b


class TransformerEncoder:
    """Small trainable context encoder: sinusoidal positions, stacked
    self-attention blocks with exact-zero attention on padding, and a
    tanh-projected pooled output ("first" position or masked "mean")."""

    def __init__(self, params: ParameterSet, name: str, vocab_size: int, d_model: int,
                 n_heads: int, n_blocks: int, d_ff: int, max_len: int, pooling: str, rng):
        if pooling not in ("first", "mean"):
            raise ConfigError(f"pooling must be 'first' or 'mean', got {pooling!r}")
        self.d_model = d_model
        self.max_len = max_len
        self.pooling = pooling
        self.embedding = Embedding(params, f"{name}.embed", vocab_size, d_model, rng)
        self.positions = sinusoidal_positions(max_len, d_model)
        self.blocks = [
            TransformerBlock(params, f"{name}.block{i}", d_model, n_heads, d_ff, rng)
            for i in range(n_blocks)
        ]
        self.pool_proj = Linear(params, f"{name}.pool", d_model, d_model, rng)

    def __call__(self, token_ids) -> tuple[Tensor, Tensor]:
        ids = np.asarray(token_ids, dtype=np.int64)
        if ids.ndim != 1:
            raise ContractError("transformer expects a flat token id sequence")
        n = ids.shape[0]
        if n < 1:
            raise ContractError("transformer got an empty sequence")
        if n > self.max_len:
            raise ContractError(f"sequence length {n} exceeds configured maximum {self.max_len}")
        key_mask = ids != PAD_INDEX
        if not key_mask[0]:
            raise ContractError("first position must be a real token, not padding")
        x = self.embedding(ids) + Tensor(self.positions[:n], op="positions")
        for block in self.blocks:
            x = block(x, key_mask)
        if self.pooling == "first":
            anchor = ad.reshape(ad.narrow(x, 0, 0, 1), (self.d_model,))
        else:
            weights = key_mask.astype(np.float64)
            weights /= weights.sum()
            anchor = ad.matmul(Tensor(weights, op="mean_pool"), x)
        pooled = ad.tanh(self.pool_proj(anchor))
        return x, pooled


class MlpHead:
    """Regression head: three affine maps with dropout between the first and
    second, producing one unclamped scalar."""

    def __init__(self, params: ParameterSet, name: str, d_in: int, hidden: tuple[int, int],
                 rng, activation: str = "none"):
        if activation not in ("none", "relu"):
            raise ConfigError(f"head activation must be 'none' or 'relu', got {activation!r}")
        self.activation = activation
        self.l1 = Linear(params, f"{name}.l1", d_in, hidden[0], rng)
        self.l2 = Linear(params, f"{name}.l2", hidden[0], hidden[1], rng)
        self.l3 = Linear(params, f"{name}.l3", hidden[1], 1, rng)

    def __call__(self, features: Tensor, mode: str, rng, dropout_rate: float) -> Tensor:
        y = self.l1(features)
        y = dropout(y, dropout_rate, mode, rng)
        if self.activation == "relu":
            y = ad.relu(y)
        y = self.l2(y)
        if self.activation == "relu":
            y = ad.relu(y)
        y = self.l3(y)
        return ad.reshape(y, ())
