"""The complexity-prediction architecture and its loss compositions.

A character-level BiLSTM encodes the target span, a small trainable
transformer encodes the context sentence, and the concatenated features feed
a three-layer regression head. Group discriminators (domain, language or
task of origin) sit behind a gradient-reversal layer on the same
concatenation; optional branches add a variational autoencoder over the
context vector and a GRU decoder that reconstructs the input token ids.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import LossWeights, ModelConfig
from .errors importCheckpointError, ConfigError, ContractError, VocabularyError
from .layers import (
    BiLstmEncoder,
    Embedding,
    GruCell,
    Linear,
    MlpHead,
    ParameterSet,
    TransformerEncoder,
    dropout,
)
from .vocab import CharVocabulary, MASK_INDEX, PAD_INDEX, TokenVocabulary


@dataclass
class FeatureBundle:
    """Per-example features in their fixed concatenation order."""

    target: Tensor            # char-BiLSTM representation, length 2h
    context: Tensor           # pooled transformer representation, length d_model
    latent: Tensor | None     # VAE latent, present only for the VAE variant
    concat: Tensor

    @classmethod
    def build(cls, target: Tensor, context: Tensor, latent: Tensor | None) -> "FeatureBundle":
        members = [target, context] + ([latent] if latent is not None else [])
        return cls(target=target, context=context, latent=latent,
                   concat=ad.concat(members, axis=0))


@dataclass
class VaeState:
    mu: Tensor
    log_var: Tensor
    z: Tensor
    reconstruction: Tensor
    noise: np.ndarray


@dataclass
class DecoderOutput:
    logits: Tensor            # one row of vocabulary logits per position
    representation: Tensor    # final GRU hidden state


class Discriminator:
    """Three linear layers with ReLU activations over (reversed) features."""

    def __init__(self, params: ParameterSet, name: str, d_in: int, n_groups: int,
                 hidden: tuple[int, int], rng):
        if n_groups < 2:
            raise ConfigError(f"a discriminator needs >= 2 groups, got {n_groups}")
        self.n_groups = n_groups
        self.l1 = Linear(params, f"{name}.l1", d_in, hidden[0], rng)
        self.l2 = Linear(params, f"{name}.l2", hidden[0], hidden[1], rng)
        self.l3 = Linear(params, f"{name}.l3", hidden[1], n_groups, rng)

    def logits(self, features: Tensor) -> Tensor:
        return self.l3(ad.relu(self.l2(ad.relu(self.l1(features)))))

    def adversarial_logits(self, features: Tensor, scale: float) -> Tensor:
        return self.logits(ad.grad_reverse(features, scale))


class VaeBranch:
    """Gaussian encoder/decoder over the pooled context vector."""

    def __init__(self, params: ParameterSet, name: str, d_in: int, hidden: int, z_dim: int, rng):
        self.z_dim = z_dim
        self.enc1 = Linear(params, f"{name}.enc1", d_in, hidden, rng)
        self.enc2 = Linear(params, f"{name}.enc2", hidden, 2 * z_dim, rng)
        self.dec1 = Linear(params, f"{name}.dec1", z_dim, hidden, rng)
        self.dec2 = Linear(params, f"{name}.dec2", hidden, d_in, rng)

    def forward(self, x: Tensor, rng, mode: str) -> VaeState:
        stats = self.enc2(ad.relu(self.enc1(x)))
        mu = ad.narrow(stats, 0, 0, self.z_dim)
        log_var = ad.narrow(stats, 0, self.z_dim, self.z_dim)
        if mode == "train":
            noise = rng.standard_normal(self.z_dim)
        else:
            noise = np.zeros(self.z_dim)
        sigma = ad.exp(log_var * 0.5)
        z = mu + sigma * Tensor(noise, op="vae_noise")
        reconstruction = self.dec2(ad.relu(self.dec1(z)))
        return VaeState(mu=mu, log_var=log_var, z=z, reconstruction=reconstruction, noise=noise)


class ReconstructionDecoder:
    """GRU over (context hidden state, input embedding) pairs followed by two
    linear layers separated by dropout; emits vocabulary logits per position."""

    def __init__(self, params: ParameterSet, name: str, d_model: int, hidden: int,
                 vocab_size: int, embedding: Embedding, rng):
        self.hidden = hidden
        self.embedding = embedding
        self.gru = GruCell(params, f"{name}.gru", d_model + embedding.dim, hidden, rng)
        self.out1 = Linear(params, f"{name}.out1", hidden, hidden, rng)
        self.out2 = Linear(params, f"{name}.out2", hidden, vocab_size, rng)

    def forward(self, hidden_states: Tensor, token_ids: np.ndarray, mode: str, rng,
                dropout_rate: float) -> DecoderOutput:
        n, d = hidden_states.shape
        emb = self.embedding(token_ids)
        h = Tensor(np.zeros(self.hidden), op="dec_h0")
        rows = []
        for t in range(n):
            step_in = ad.concat(
                [ad.reshape(ad.narrow(hidden_states, 0, t, 1), (d,)),
                 ad.reshape(ad.narrow(emb, 0, t, 1), (self.embedding.dim,))],
                axis=0,
            )
            h = self.gru.step(step_in, h)
            y = dropout(self.out1(h), dropout_rate, mode, rng)
            rows.append(ad.reshape(self.out2(y), (1, -1)))
        return DecoderOutput(logits=ad.concat(rows, axis=0), representation=h)


class CwiModel:
    """Complexity regressor with optional adversarial and auxiliary branches.

    ``variant`` controls which branches exist: every variant except plain
    "base" owns a group discriminator; "vae-da" adds the latent branch,
    "decoder-da" the reconstruction decoder, and "multitask-da" a masked
    token prediction head shared with the auxiliary task.
    """

    def __init__(self, config: ModelConfig, char_vocab: CharVocabulary,
                 token_vocab: TokenVocabulary, variant: str, n_groups: int, seed: int):
        self.config = config
        self.char_vocab = char_vocab
        self.token_vocab = token_vocab
        self.variant = variant
        self.n_groups = n_groups
        self.seed = seed
        self.params = ParameterSet()
        rng = np.random.default_rng(seed)

        self.char_embedding = Embedding(self.params, "char_embed", len(char_vocab),
                                        config.char_emb_dim, rng)
        self.char_encoder = BiLstmEncoder(self.params, "char_bilstm", config.char_emb_dim,
                                          config.char_hidden, rng)
        self.context_encoder = TransformerEncoder(
            self.params, "context", len(token_vocab), config.d_model, config.n_heads,
            config.n_blocks, config.d_ff, config.token_max_len, config.pooling, rng)

        self.with_latent = variant == "vae-da"
        width = config.feature_width(self.with_latent)
        self.head = MlpHead(self.params, "head", width, tuple(config.head_hidden), rng,
                            activation=config.head_activation)

        self.discriminator = None
        if variant != "base":
            self.discriminator = Discriminator(self.params, "discriminator", width,
                                               n_groups, tuple(config.disc_hidden), rng)
        self.vae = None
        if variant == "vae-da":
            self.vae = VaeBranch(self.params, "vae", config.d_model, config.vae_hidden,
                                 config.z_dim, rng)
        self.decoder = None
        if variant == "decoder-da":
            self.decoder = ReconstructionDecoder(self.params, "decoder", config.d_model,
                                                 config.dec_hidden, len(token_vocab),
                                                 self.context_encoder.embedding, rng)
        self.mask_head = None
        if variant == "multitask-da":
            self.mask_head = Linear(self.params, "mask_head", config.d_model,
                                    len(token_vocab), rng)

    # ------------------------------------------------------------------ forward

    def encode_features(self, char_ids, token_ids, mode: str, rng) -> tuple[FeatureBundle, dict]:
        """Run both encoders (plus the VAE when present) for one example."""
        char_ids = np.asarray(char_ids, dtype=np.int64)
        if char_ids.size < 1:
            raise ContractError("example has no target characters")
        if char_ids.max(initial=0) >= len(self.char_vocab):
            raise VocabularyError("character id outside the model's vocabulary")
        emb = self.char_embedding(char_ids)
        target = self.char_encoder.encode(emb, None, mode, rng,
                                          dropout_rate=self.config.dropout)
        hidden, context = self.context_encoder(token_ids)
        extras: dict = {"hidden": hidden}
        latent = None
        if self.vae is not None:
            state = self.vae.forward(context, rng, mode)
            latent = state.z
            extras["vae_state"] = state
        bundle = FeatureBundle.build(target, context, latent)
        return bundle, extras

    def forward_regression(self, char_ids, token_ids, mode: str, rng) -> tuple[Tensor, FeatureBundle, dict]:
        bundle, extras = self.encode_features(char_ids, token_ids, mode, rng)
        prediction = self.head(bundle.concat, mode, rng, self.config.dropout)
        return prediction, bundle, extras

    def discriminate(self, features: FeatureBundle | Tensor, scale: float) -> Tensor:
        """Group logits over the (gradient-reversed) feature concatenation."""
        if self.discriminator is None:
            raise ConfigError(f"variant {self.variant!r} has no discriminator")
        concat = features.concat if isinstance(features, FeatureBundle) else features
        return self.discriminator.adversarial_logits(concat, scale)

    def masked_token_logits(self, token_ids, position: int) -> Tensor:
        """Replace the token at ``position`` with the mask id, encode, and
        return vocabulary logits at that position."""
        if self.mask_head is None:
            raise ConfigError(f"variant {self.variant!r} has no masked-prediction head")
        ids = np.asarray(token_ids, dtype=np.int64).copy()
        if not 0 <= position < ids.shape[0]:
            raise ContractError(f"mask position {position} outside sequence of length {ids.shape[0]}")
        ids[position] = MASK_INDEX
        hidden, _ = self.context_encoder(ids)
        at_mask = ad.reshape(ad.narrow(hidden, 0, position, 1), (self.config.d_model,))
        return self.mask_head(at_mask)

    def predict(self, char_ids, token_ids) -> float:
        pred, _, _ = self.forward_regression(char_ids, token_ids, "eval", None)
        return pred.item()


# ---------------------------------------------------------------------- losses


def regression_loss(predictions: Tensor, gold, kind: str) -> Tensor:
    """Mean absolute ("l1") or mean squared ("mse") error over a batch."""
    if kind not in ("l1", "mse"):
        raise ConfigError(f"regression loss kind must be 'l1' or 'mse', got {kind!r}")
    gold_arr = np.asarray(gold, dtype=np.float64)
    if predictions.size == 0 or gold_arr.size == 0:
        raise ContractError("regression loss over an empty batch")
    if predictions.shape != gold_arr.shape:
        raise ContractError(f"prediction/gold lengths differ: {predictions.shape} vs {gold_arr.shape}")
    diff = predictions - Tensor(gold_arr, op="gold")
    if kind == "l1":
        return ad.absolute(diff).mean()
    return ad.power(diff, 2).mean()


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Negative log-softmax probability of the label, batch-averaged.

    Accepts one logit vector with an integer label, or a matrix of logit
    rows with one label per row.
    """
    if logits.ndim == 1:
        logits = ad.reshape(logits, (1, -1))
        labels = [labels]
    label_arr = np.asarray(labels, dtype=np.int64)
    rows, width = logits.shape
    if label_arr.shape != (rows,):
        raise ContractError(f"expected {rows} labels, got shape {label_arr.shape}")
    if label_arr.min() < 0 or label_arr.max() >= width:
        raise ContractError(f"label outside logit width {width}")
    one_hot = np.zeros((rows, width))
    one_hot[np.arange(rows), label_arr] = 1.0
    picked = (ad.log_softmax(logits, axis=-1) * Tensor(one_hot, op="one_hot")).sum(axis=1)
    return -picked.mean()


def kl_standard_normal(mu: Tensor, log_var: Tensor) -> Tensor:
    """Closed-form KL(N(mu, diag(exp(log_var))) || N(0, I))."""
    one = Tensor(np.ones(mu.shape), op="one")
    terms = ad.power(mu, 2) + ad.exp(log_var) - one - log_var
    return terms.sum() * 0.5


def vae_loss(state: VaeState, x: Tensor) -> Tensor:
    """KL toward the standard-normal prior plus the Gaussian reconstruction
    term 0.5 * ||x - reconstruction||^2."""
    recon = ad.power(state.reconstruction - x, 2).sum() * 0.5
    return kl_standard_normal(state.mu, state.log_var) + recon


def decoder_loss(logits: Tensor, target_ids, ignore_index: int = PAD_INDEX,
                 class_weights: np.ndarray | None = None) -> Tensor:
    """Summed negative log-likelihood of the target ids.

    Positions whose target equals ``ignore_index`` contribute exactly zero;
    per-class weights default to one.
    """
    targets = np.asarray(target_ids, dtype=np.int64)
    rows, width = logits.shape
    if targets.shape != (rows,):
        raise ContractError(f"decoder targets must align with logit rows: {targets.shape} vs {rows}")
    if targets.min() < 0 or targets.max() >= width:
        raise VocabularyError(f"decoder target id outside vocabulary of size {width}")
    weights = np.ones(width) if class_weights is None else np.asarray(class_weights, dtype=np.float64)
    position_w = weights[targets] * (targets != ignore_index)
    one_hot = np.zeros((rows, width))
    one_hot[np.arange(rows), targets] = position_w
    picked = (ad.log_softmax(logits, axis=-1) * Tensor(one_hot, op="nll_weights")).sum()
    return -picked


@dataclass
class ComposedLoss:
    """The optimized graph objective plus the reported composition value.

    ``objective`` is what backward runs on: the discriminator term enters
    with coefficient one downstream of gradient reversal, so discriminator
    parameters receive the plain discriminator gradient while shared
    parameters see it scaled by -(adversarial coefficient). ``reported``
    is the textbook composition value with the explicit minus sign.
    """

    objective: Tensor
    reported: float
    parts: dict


def adversarial_coefficient(weights: LossWeights, lam: float, variant: str) -> float:
    """Gradient-reversal scale for the active variant's discriminator."""
    if variant == "multitask-da":
        return weights.alpha_task * weights.beta * lam
    return weights.beta * lam


def compose_loss(parts: dict, weights: LossWeights, lam: float, variant: str) -> ComposedLoss:
    """Combine loss parts for one variant.

    parts maps names to scalar tensors: "regression" always; "discriminator"
    for adversarial variants (already computed behind gradient reversal);
    "vae" / "decoder" / "masked_lm" per variant.
    """
    if variant not in ("base", "base-da", "vae-da", "decoder-da", "multitask-da"):
        raise ConfigError(f"unknown loss variant {variant!r}")

    def need(name: str) -> Tensor:
        if parts.get(name) is None:
            raise ConfigError(f"variant {variant!r} requires loss part {name!r}")
        return parts[name]

    regression = need("regression")
    objective = regression
    reported = regression.item()
    out_parts = {"regression": regression.item()}

    if variant != "base":
        disc = need("discriminator")
        coeff = adversarial_coefficient(weights, lam, variant)
        objective = objective + disc
        reported -= coeff * disc.item()
        out_parts["discriminator"] = disc.item()
    if variant == "vae-da":
        vae = need("vae")
        objective = objective + vae * weights.alpha_vae
        reported += weights.alpha_vae * vae.item()
        out_parts["vae"] = vae.item()
    if variant == "decoder-da":
        dec = need("decoder")
        objective = objective + dec * weights.alpha_dec
        reported += weights.alpha_dec * dec.item()
        out_parts["decoder"] = dec.item()
    if variant == "multitask-da":
        ml = need("masked_lm")
        objective = objective + ml * weights.ml_weight
        reported += weights.ml_weight * ml.item()
        out_parts["masked_lm"] = ml.item()
    return ComposedLoss(objective=objective, reported=reported, parts=out_parts)


# ------------------------------------------------------------------ checkpoint

CHECKPOINT_FORMAT = "lexadapt-checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, model: CwiModel) -> None:
    import dataclasses as dc
    import json
    from pathlib import Path

    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "variant": model.variant,
        "n_groups": model.n_groups,
        "seed": model.seed,
        "model_config": {f.name: (list(v) if isinstance(v := getattr(model.config, f.name), tuple) else v)
                         for f in dc.fields(model.config)},
        "char_vocab": model.char_vocab.to_state(),
        "token_vocab": model.token_vocab.to_state(),
        "params": model.params.state(),
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")


def load_checkpoint(path) -> CwiModel:
    import json
    from pathlib import Path

    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint {path} is not valid JSON: {exc}") from None
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {payload.get('version')}")
    raw = dict(payload["model_config"])
    for key in ("disc_hidden", "head_hidden"):
        if key in raw:
            raw[key] = tuple(raw[key])
    config = ModelConfig(**raw)
    model = CwiModel(
        config,
        CharVocabulary.from_state(payload["char_vocab"]),
        TokenVocabulary.from_state(payload["token_vocab"]),
        payload["variant"],
        payload["n_groups"],
        payload["seed"],
    )
    model.params.load_state(payload["params"])
    return model
