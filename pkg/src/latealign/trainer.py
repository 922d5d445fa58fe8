"""Deterministic mini-batch training over a planted pair corpus.

One forward pass encodes both branches, optionally aggregates each
side's local tokens, assembles the fine token sets (with or without the
global rows), and scores all pairs; the dual triplet loss trains the
fine path, while the baseline mode trains the global cosine matrix with
a symmetric contrastive loss instead.  Adam runs with two learning-rate
groups: one for the encoders, one for the aggregation parameters.

Checkpoints ("FLCK", little-endian):

    magic "FLCK" | u32 version=1 | u32 n_params
    n_params * (u32 name_len | name utf8)
    per parameter, same order: u32 ndim | ndim * u32 dims | float32 payload

All randomness derives from the config seed, so identical configs give
byte-identical checkpoints and metric logs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from . import autodiff as ad
from .aggregator import AggregatorParams, aggregate, aggregate_graph, init_aggregator, output_count
from .autodiff import Var, backward, grad_check
from .binio import Reader, atomic_write
from .encoders import (EncoderParams, encode_image, encode_image_graph,
                       encode_text, encode_text_graph, init_image_encoder,
                       init_text_encoder)
from .errors import FormatError, NumericError
from .losses import (LossBreakdown, contrastive_directions, global_contrastive_graph,
                     triplet_dual_graph)
from .posembed import PositionalTable
from .scoring import ScoringSet, cosine_rows_graph, fine_scores_graph

CKPT_MAGIC = b"FLCK"
CKPT_VERSION = 1

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    seed: int
    epochs: int
    batch_size: int = 32
    ratio: float = 0.2
    alpha: float = 0.2
    lr_encoder: float = 1e-3
    lr_aggregator: float = 1e-2
    aggregate_image: bool = True
    aggregate_text: bool = True
    include_global: bool = True
    loss: str = "triplet"          # "triplet" | "contrastive"
    combine_weight: float = 0.5
    temperature: float = 0.07
    d_in: int = 32
    d: int = 16
    d_k: int = 8
    p: int = 16
    m_max: int = 12
    base_pos_len: int = 16
    keep: int = 4
    factor: int = 4
    train_pos: bool = True
    holdout: int = 64

    @property
    def max_len(self) -> int:
        return self.m_max + 2

    def validate(self):
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if not 0.0 < self.ratio < 1.0:
            raise ValueError("ratio must lie in (0, 1)")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.lr_encoder <= 0 or self.lr_aggregator <= 0:
            raise ValueError("learning rates must be positive")
        if self.loss not in ("triplet", "contrastive"):
            raise ValueError("loss must be 'triplet' or 'contrastive'")
        if not 0.0 <= self.combine_weight <= 1.0:
            raise ValueError("combine weight must lie in [0, 1]")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if min(self.d_in, self.d, self.d_k, self.p, self.m_max) < 1:
            raise ValueError("dimensions must be at least 1")
        if self.d_k >= self.d:
            raise ValueError("d_k must be strictly smaller than d")
        if self.holdout < 0:
            raise ValueError("holdout must be nonnegative")
        if not 0 <= self.keep < self.base_pos_len or self.factor < 1:
            raise ValueError("invalid positional stretch configuration")
        stretched = self.keep + (self.base_pos_len - self.keep) * self.factor
        if stretched < self.max_len:
            raise ValueError("positional table too short for the context")


@dataclass
class ModelParams:
    image_encoder: EncoderParams
    text_encoder: EncoderParams
    image_aggregator: AggregatorParams
    text_aggregator: AggregatorParams


@dataclass
class AdamState:
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


_ENCODER_PREFIXES = ("img.", "txt.")
_POS_NAMES = ("img.pos", "txt.pos")


def init_model(config: TrainConfig) -> ModelParams:
    config.validate()
    st = np.random.SeedSequence(config.seed).generate_state(5)
    return ModelParams(
        image_encoder=init_image_encoder(int(st[0]), config.d_in, config.d, config.p),
        text_encoder=init_text_encoder(int(st[1]), config.d_in, config.d,
                                       config.base_pos_len, config.keep, config.factor),
        image_aggregator=init_aggregator(int(st[2]), config.d, config.d_k,
                                         output_count(config.p, config.ratio)),
        # Text output count follows the padded context length, the fixed
        # sequence length the branch is configured for.
        text_aggregator=init_aggregator(int(st[3]), config.d, config.d_k,
                                        output_count(config.max_len, config.ratio)),
    )


def _shuffle_rng(config: TrainConfig) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(config.seed).generate_state(5)[4])


def param_arrays(model: ModelParams) -> Dict[str, np.ndarray]:
    """Flat name -> live array view of every trainable parameter."""
    return {
        "img.proj": model.image_encoder.proj,
        "img.cls_head": model.image_encoder.cls_head,
        "img.pos": model.image_encoder.pos.entries,
        "txt.proj": model.text_encoder.proj,
        "txt.cls_head": model.text_encoder.cls_head,
        "txt.pos": model.text_encoder.pos.entries,
        "txt.bos": model.text_encoder.bos,
        "img_agg.w_k": model.image_aggregator.w_k,
        "img_agg.w_q": model.image_aggregator.w_q,
        "img_agg.log_tau": model.image_aggregator.log_tau,
        "txt_agg.w_k": model.text_aggregator.w_k,
        "txt_agg.w_q": model.text_aggregator.w_q,
        "txt_agg.log_tau": model.text_aggregator.log_tau,
    }


def _graph_params(model: ModelParams):
    flat = {name: Var(arr) for name, arr in param_arrays(model).items()}
    flat["txt.bos"] = Var(model.text_encoder.bos.reshape(1, -1))
    img_pv = {"proj": flat["img.proj"], "cls_head": flat["img.cls_head"],
              "pos": flat["img.pos"]}
    txt_pv = {"proj": flat["txt.proj"], "cls_head": flat["txt.cls_head"],
              "pos": flat["txt.pos"], "bos": flat["txt.bos"]}
    agg_i = {"w_k": flat["img_agg.w_k"], "w_q": flat["img_agg.w_q"],
             "log_tau": flat["img_agg.log_tau"]}
    agg_t = {"w_k": flat["txt_agg.w_k"], "w_q": flat["txt_agg.w_q"],
             "log_tau": flat["txt_agg.log_tau"]}
    return flat, img_pv, txt_pv, agg_i, agg_t


def _check_batch(batch, config: TrainConfig):
    images, texts = batch
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 3 or len(texts) != images.shape[0]:
        raise ValueError("ragged batch")
    if images.shape[0] < 2:
        raise ValueError("no negatives available")
    if images.shape[1] != config.p or images.shape[2] != config.d_in:
        raise ValueError("batch shape does not match the configuration")
    return images, texts


def _forward_graph(model: ModelParams, batch, config: TrainConfig):
    """Build the full differentiable pipeline for one batch."""
    images, texts = _check_batch(batch, config)
    b = images.shape[0]
    flat, img_pv, txt_pv, agg_i, agg_t = _graph_params(model)

    if config.loss == "contrastive":
        # Baseline path: global rows only, aggregation is bypassed.
        cls_rows, eos_rows = [], []
        for i in range(b):
            _, cls = encode_image_graph(images[i], img_pv)
            _, _, eos = encode_text_graph(np.asarray(texts[i], dtype=np.float64), txt_pv)
            cls_rows.append(cls)
            eos_rows.append(eos)
        scores = cosine_rows_graph(ad.concat_rows(cls_rows), ad.concat_rows(eos_rows))
        loss_var = global_contrastive_graph(scores, config.temperature)
        row, col = contrastive_directions(scores.value, config.temperature)
        bd = LossBreakdown(i2t=0.5 * row, t2i=0.5 * col, total=0.5 * row + 0.5 * col)
        return scores, loss_var, bd, flat

    v_sets, t_sets = [], []
    for i in range(b):
        local, cls = encode_image_graph(images[i], img_pv)
        words = np.asarray(texts[i], dtype=np.float64)
        _, content, eos = encode_text_graph(words, txt_pv)
        v_loc = local
        if config.aggregate_image:
            v_loc, _ = aggregate_graph(local, np.ones(config.p, dtype=bool), agg_i)
        t_loc = content
        if config.aggregate_text:
            t_loc, _ = aggregate_graph(content, np.ones(words.shape[0], dtype=bool), agg_t)
        v_sets.append(ad.concat_rows([cls, v_loc]) if config.include_global else v_loc)
        t_sets.append(ad.concat_rows([t_loc, eos]) if config.include_global else t_loc)

    scores = fine_scores_graph(v_sets, t_sets)
    loss_var, bd = triplet_dual_graph(scores, config.alpha)
    return scores, loss_var, bd, flat


def _collect_grads(flat: Dict[str, Var], config: TrainConfig) -> Dict[str, np.ndarray]:
    grads = {}
    for name, var in flat.items():
        if not config.train_pos and name in _POS_NAMES:
            continue
        g = var.grad if var.grad is not None else np.zeros_like(var.value)
        if name == "txt.bos":
            g = g.reshape(-1)
        grads[name] = g
    return grads


def forward_batch(model: ModelParams, batch, config: TrainConfig):
    """Score one batch and evaluate the configured loss."""
    scores, _, bd, _ = _forward_graph(model, batch, config)
    return scores.value.copy(), bd


def optimizer_step(model: ModelParams, grads: Dict[str, np.ndarray],
                   state: AdamState, config: TrainConfig):
    """In-place Adam update; encoder and aggregator groups use their own lr."""
    for g in grads.values():
        if not np.isfinite(g).all():
            raise NumericError("diverged")
    state.step += 1
    bc1 = 1.0 - ADAM_BETA1 ** state.step
    bc2 = 1.0 - ADAM_BETA2 ** state.step
    for name, p in param_arrays(model).items():
        if name not in grads:
            continue
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * (g * g)
        lr = config.lr_encoder if name.startswith(_ENCODER_PREFIXES) else config.lr_aggregator
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
    return model, state


def scoring_sets(model: ModelParams, images, texts,
                 config: TrainConfig) -> Tuple[List[ScoringSet], List[ScoringSet]]:
    """Assemble the per-sample scoring views the evaluation stack consumes."""
    out_v, out_t = [], []
    for i in range(len(texts)):
        seq_v = encode_image(images[i], model.image_encoder)
        seq_t = encode_text(texts[i], model.text_encoder, config.max_len)
        m = texts[i].shape[0]

        v_loc = seq_v.tokens[1:]
        if config.aggregate_image:
            v_loc = aggregate(v_loc, np.ones(len(v_loc), dtype=bool),
                              model.image_aggregator).tokens
        v_glob = seq_v.tokens[0]
        v_tokens = np.concatenate([v_glob[None, :], v_loc], axis=0) \
            if config.include_global else v_loc

        t_loc = seq_t.tokens[1:m + 1]
        if config.aggregate_text:
            t_loc = aggregate(t_loc, np.ones(m, dtype=bool),
                              model.text_aggregator).tokens
        t_glob = seq_t.tokens[seq_t.global_index]
        t_tokens = np.concatenate([t_loc, t_glob[None, :]], axis=0) \
            if config.include_global else t_loc

        out_v.append(ScoringSet(tokens=v_tokens, global_vec=v_glob))
        out_t.append(ScoringSet(tokens=t_tokens, global_vec=t_glob))
    return out_v, out_t


def _holdout_recall(model, images, texts, config) -> Tuple[float, float]:
    from .evaluation import recall_at_k
    from .scoring import score_matrix

    mode = "fine" if config.loss == "triplet" else "coarse"
    sets_v, sets_t = scoring_sets(model, images, texts, config)
    s = score_matrix(sets_v, sets_t, mode)
    return recall_at_k(s, 1, "i2t"), recall_at_k(s, 1, "t2i")


def train(config: TrainConfig, corpus, checkpoint_path=None):
    """Run the seeded loop; returns (model, per-epoch metrics list)."""
    config.validate()
    if corpus.n_pairs < 1:
        raise ValueError("empty corpus")
    if corpus.d_in != config.d_in or corpus.p != config.p or corpus.m_max > config.m_max:
        raise ValueError("corpus dimensions do not match the configuration")
    if config.holdout >= corpus.n_pairs:
        raise ValueError("holdout leaves no training pairs")
    n_train = corpus.n_pairs - config.holdout
    if n_train < 2:
        raise ValueError("no negatives available")

    model = init_model(config)
    state = AdamState()
    rng = _shuffle_rng(config)
    train_imgs = corpus.image_tokens[:n_train]
    train_txts = corpus.text_tokens[:n_train]
    hold_imgs = corpus.image_tokens[n_train:]
    hold_txts = corpus.text_tokens[n_train:]

    metrics: List[dict] = []
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(n_train)
        batch_losses = []
        for start in range(0, n_train, config.batch_size):
            idx = perm[start:start + config.batch_size]
            if len(idx) < 2:
                continue
            batch = (train_imgs[idx], [train_txts[k] for k in idx])
            _, loss_var, bd, flat = _forward_graph(model, batch, config)
            backward(loss_var)
            optimizer_step(model, _collect_grads(flat, config), state, config)
            batch_losses.append(bd.total)
        entry = {"epoch": epoch, "loss": float(np.mean(batch_losses))}
        if config.holdout > 0:
            r1_i2t, r1_t2i = _holdout_recall(model, hold_imgs, hold_txts, config)
            entry["r1_i2t"] = r1_i2t
            entry["r1_t2i"] = r1_t2i
        else:
            entry["r1_i2t"] = None
            entry["r1_t2i"] = None
        metrics.append(entry)

    if checkpoint_path is not None:
        save_checkpoint(param_arrays(model), checkpoint_path)
    return model, metrics


def full_gradient_check(config: TrainConfig, seed: int, epsilon: float = 1e-5) -> float:
    """Central-difference check of the whole pipeline on one random batch."""
    config.validate()
    model = init_model(config)
    rng = np.random.default_rng(seed)
    b = config.batch_size
    images = rng.normal(size=(b, config.p, config.d_in))
    texts = [rng.normal(size=(config.m_max, config.d_in)) for _ in range(b)]
    batch = (images, texts)

    def objective(_params):
        _, loss_var, bd, flat = _forward_graph(model, batch, config)
        backward(loss_var)
        return bd.total, _collect_grads(flat, config)

    params = param_arrays(model)
    if not config.train_pos:
        params = {k: v for k, v in params.items() if k not in _POS_NAMES}
    return grad_check(objective, params, epsilon)


# ---------------------------------------------------------------------------
# Checkpoints.


def save_checkpoint(arrays: Dict[str, np.ndarray], path):
    names = list(arrays)
    parts = [CKPT_MAGIC, struct.pack("<2I", CKPT_VERSION, len(names))]
    for name in names:
        enc = name.encode("utf-8")
        parts.append(struct.pack("<I", len(enc)))
        parts.append(enc)
    for name in names:
        a = np.asarray(arrays[name], dtype=np.float64)
        parts.append(struct.pack("<I", a.ndim))
        if a.ndim:
            parts.append(struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(a.astype("<f4").tobytes())
    atomic_write(path, b"".join(parts))


def load_checkpoint(path) -> Dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        data = fh.read()
    r = Reader(data)
    if r.take(4) != CKPT_MAGIC:
        raise FormatError("not a checkpoint file")
    if r.u32() != CKPT_VERSION:
        raise FormatError("unsupported version")
    n = r.u32()
    names = [r.take(r.u32()).decode("utf-8") for _ in range(n)]
    arrays: Dict[str, np.ndarray] = {}
    for name in names:
        ndim = r.u32()
        if ndim > 8:
            raise FormatError("corrupt checkpoint record")
        shape = tuple(r.u32() for _ in range(ndim))
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        flat = r.f32_array(count)
        arrays[name] = flat.reshape(shape) if ndim else flat.reshape(()).copy()
    if not r.done():
        raise FormatError("trailing bytes after final record")
    return arrays


def model_from_arrays(arrays: Dict[str, np.ndarray]) -> ModelParams:
    """Rebuild a model from checkpoint arrays; shapes carry the dimensions."""
    def need(name):
        if name not in arrays:
            raise FormatError(f"checkpoint missing parameter {name}")
        return np.ascontiguousarray(arrays[name], dtype=np.float64)

    image_encoder = EncoderParams(
        proj=need("img.proj"), cls_head=need("img.cls_head"),
        pos=PositionalTable(need("img.pos")))
    text_encoder = EncoderParams(
        proj=need("txt.proj"), cls_head=need("txt.cls_head"),
        pos=PositionalTable(need("txt.pos")), bos=need("txt.bos"))
    image_aggregator = AggregatorParams(
        w_k=need("img_agg.w_k"), w_q=need("img_agg.w_q"),
        log_tau=need("img_agg.log_tau"))
    text_aggregator = AggregatorParams(
        w_k=need("txt_agg.w_k"), w_q=need("txt_agg.w_q"),
        log_tau=need("txt_agg.log_tau"))
    return ModelParams(image_encoder, text_encoder, image_aggregator, text_aggregator)
