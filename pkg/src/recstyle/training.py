"""Weakly supervised training: content and style passes, coverage penalty, Adam.

The trainer never sees a human reference for (record, exemplar) inputs.  The
content pass asks the model to produce the query's own sentence given the
exemplar's sentence as the style source; the style pass is an auto-encoding
pass on the exemplar itself.  The two negative log-likelihoods are mixed by
content_weight and the copy channel is regularized toward covering each
record slot exactly once:

    total = w * content_nll + (1 - w) * style_nll
            + coverage_weight * ||sum_t P_copy(t) - 1||^2

Backpropagation is written by hand; gradient_check validates it against
central finite differences.
"""

from __future__ import annotations

import random
from collections.abc import Sequence
from dataclasses import dataclass, fields as dataclass_fields
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .corpus import (
    BOS_ID,
    EOS,
    MASK_ID,
    PAD_ID,
    CorpusPair,
    Record,
    Vocabulary,
    build_vocabulary,
)
from .model import (
    LstmCache,
    ModelParams,
    Readout,
    attention_readout,
    init_params,
    lstm_backward,
    lstm_step,
    precision_dtype,
    record_entry_states,
)
from .retrieval import RetrievalIndex, TripleIds, field_set_distance


class TrainingError(ValueError):
    """Bad training inputs or non-finite gradients outside the train loop."""


class TrainingDiverged(RuntimeError):
    """Raised by train() on a non-finite loss; carries the last finite state."""

    def __init__(self, message: str, params: ModelParams, log: list[dict]):
        super().__init__(message)
        self.params = params
        self.log = log


@dataclass(frozen=True)
class TrainingTriple:
    """One weakly supervised instance: query pair plus retrieved exemplar pair."""

    x: Record
    y_x: tuple[str, ...]
    x_e: Record
    y_e: tuple[str, ...]
    distance: int
    id: str = ""
    exemplar_id: str = ""

    def __post_init__(self) -> None:
        if not self.y_x or not self.y_e:
            raise TrainingError("triple sentences must be non-empty")
        actual = field_set_distance(self.x, self.x_e)
        if self.distance != actual:
            raise TrainingError(
                f"triple {self.id!r}: stored distance {self.distance} != actual {actual}"
            )


@dataclass
class TrainConfig:
    """Knobs for both training phases, retrieval during training, and decoding."""

    content_weight: float = 0.2
    coverage_weight: float = 1.0
    learning_rate: float = 0.001
    epochs_pretrain: int = 10
    epochs_full: int = 10
    batch_size: int = 16
    beam_width: int = 5
    max_decode_len: int = 50
    max_distance: int = 2
    prefer_equal_size: bool = True
    resample_exemplars: bool = True
    embed_size: int = 32
    hidden_size: int = 64
    min_count: int = 1
    prob_floor: float = 1e-12
    seed: int = 0
    precision: str = "f64"

    def __post_init__(self) -> None:
        if not 0.0 <= self.content_weight <= 1.0:
            raise TrainingError(f"content_weight must be in [0, 1], got {self.content_weight}")
        if self.coverage_weight < 0.0:
            raise TrainingError(f"coverage_weight must be >= 0, got {self.coverage_weight}")
        if self.learning_rate <= 0.0:
            raise TrainingError(f"learning_rate must be > 0, got {self.learning_rate}")
        if min(self.epochs_pretrain, self.epochs_full) < 0:
            raise TrainingError("epoch counts must be >= 0")
        if self.batch_size < 1 or self.beam_width < 1 or self.max_decode_len < 1:
            raise TrainingError("batch_size, beam_width, max_decode_len must be >= 1")
        if self.max_distance < 0 or self.min_count < 1:
            raise TrainingError("max_distance must be >= 0 and min_count >= 1")
        if self.embed_size < 1 or self.hidden_size < 1:
            raise TrainingError("embed_size and hidden_size must be >= 1")
        if self.prob_floor <= 0.0:
            raise TrainingError("prob_floor must be > 0")
        if self.precision not in ("f32", "f64"):
            raise TrainingError(f"precision must be 'f32' or 'f64', got {self.precision!r}")


_CONFIG_ALIASES = {
    "lambda": "content_weight",
    "eta": "coverage_weight",
    "lr": "learning_rate",
    "max_len": "max_decode_len",
}


def save_train_config(config: TrainConfig, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for f in dataclass_fields(TrainConfig):
            fh.write(f"{f.name} = {getattr(config, f.name)}\n")


def load_train_config(path: str | Path) -> TrainConfig:
    """Parse flat 'key = value' lines; lambda/eta/lr/max_len aliases accepted."""
    types = {f.name: f.type for f in dataclass_fields(TrainConfig)}
    kwargs: dict[str, object] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = (part.strip() for part in line.partition("="))
            key = _CONFIG_ALIASES.get(key, key)
            if not sep or key not in types:
                raise TrainingError(f"{path}: line {lineno}: bad config line {line!r}")
            typ = types[key]
            if typ == "bool":
                if value.lower() not in ("true", "false"):
                    raise TrainingError(f"{path}: line {lineno}: bad bool {value!r}")
                kwargs[key] = value.lower() == "true"
            elif typ == "int":
                kwargs[key] = int(value)
            elif typ == "float":
                kwargs[key] = float(value)
            else:
                kwargs[key] = value
    return TrainConfig(**kwargs)


@dataclass(frozen=True)
class LossBreakdown:
    content_nll: float
    style_nll: float
    joint: float
    coverage: float
    total: float

    def __post_init__(self) -> None:
        parts = (self.content_nll, self.style_nll, self.joint, self.coverage, self.total)
        if not all(np.isfinite(parts)):
            raise TrainingError(f"non-finite loss components {parts}")


# ---------------------------------------------------------------------------
# Batched teacher-forced pass.


class _Batch(NamedTuple):
    rec_f: np.ndarray  # (B, R) field token ids
    rec_v: np.ndarray  # (B, R) value token ids
    rec_mask: np.ndarray  # (B, R)
    ex_ids: np.ndarray  # (B, M)
    ex_mask: np.ndarray  # (B, M)
    in_ids: np.ndarray  # (B, T) decoder inputs: bos then target[:-1]
    tgt_vid: np.ndarray  # (B, T) target vocabulary ids (unk slot when OOV)
    tgt_in_vocab: np.ndarray  # (B, T) zero where the target token is OOV
    match: np.ndarray  # (B, T, R) target token equals record value
    step_mask: np.ndarray  # (B, T)


def _assemble(
    params: ModelParams,
    records: Sequence[Record],
    exemplars: Sequence[Sequence[str]],
    targets: Sequence[Sequence[str]],
) -> _Batch:
    vocab = params.vocab
    dt = params.dtype
    B = len(records)
    R = max(len(r) for r in records)
    M = max(len(e) for e in exemplars)
    T = max(len(t) for t in targets)
    if min(len(e) for e in exemplars) == 0 or min(len(t) for t in targets) == 0:
        raise TrainingError("exemplars and targets must be non-empty")
    rec_f = np.full((B, R), PAD_ID, dtype=np.int64)
    rec_v = np.full((B, R), PAD_ID, dtype=np.int64)
    rec_mask = np.zeros((B, R), dtype=dt)
    ex_ids = np.full((B, M), PAD_ID, dtype=np.int64)
    ex_mask = np.zeros((B, M), dtype=dt)
    in_ids = np.full((B, T), PAD_ID, dtype=np.int64)
    tgt_vid = np.full((B, T), PAD_ID, dtype=np.int64)
    tgt_in_vocab = np.zeros((B, T), dtype=dt)
    match = np.zeros((B, T, R), dtype=dt)
    step_mask = np.zeros((B, T), dtype=dt)
    for b, (rec, exem, tgt) in enumerate(zip(records, exemplars, targets)):
        for j, (fld, val) in enumerate(rec.entries):
            rec_f[b, j] = vocab.lookup(fld)
            rec_v[b, j] = vocab.lookup(val)
            rec_mask[b, j] = 1.0
        for j, tok in enumerate(exem):
            ex_ids[b, j] = vocab.lookup(tok)
            ex_mask[b, j] = 1.0
        in_ids[b, 0] = BOS_ID
        for j, tok in enumerate(tgt):
            if j + 1 < T:
                in_ids[b, j + 1] = vocab.lookup(tok)
            vid = vocab.get(tok)
            if vid is not None:
                tgt_vid[b, j] = vid
                tgt_in_vocab[b, j] = 1.0
            step_mask[b, j] = 1.0
            for r, (_, val) in enumerate(rec.entries):
                if val == tok:
                    match[b, j, r] = 1.0
    return _Batch(
        rec_f, rec_v, rec_mask, ex_ids, ex_mask, in_ids, tgt_vid, tgt_in_vocab, match, step_mask
    )


class _StepCache(NamedTuple):
    lstm: LstmCache
    readout: Readout
    h_dec: np.ndarray
    p: np.ndarray
    p_clamped: np.ndarray
    pv: np.ndarray
    pc: np.ndarray


@dataclass
class ForwardResult:
    """Per-example losses plus everything _backward needs when cached."""

    batch: _Batch
    prob_floor: float
    nll: np.ndarray  # (B,)
    coverage: np.ndarray  # (B,)
    copy_agg: np.ndarray  # (B, R)
    copy_dists: np.ndarray  # (B, T, R)
    rec_states: np.ndarray  # (B, R, h)
    rec_u: np.ndarray  # (B, R, 2d)
    exem_states: np.ndarray  # (B, M, h)
    steps: list[_StepCache] | None
    enc_caches: list[LstmCache] | None
    vocab_dists: np.ndarray | None  # (B, T, V) only on request
    gates: np.ndarray | None  # (B, T)


def _forward(
    params: ModelParams,
    batch: _Batch,
    prob_floor: float,
    keep_cache: bool = False,
    keep_dists: bool = False,
) -> ForwardResult:
    t = params.tensors
    dt = params.dtype
    B, M = batch.ex_ids.shape
    T = batch.in_ids.shape[1]
    R = batch.rec_mask.shape[1]
    H = params.hidden_size

    rec_states, rec_u = record_entry_states(params, batch.rec_f, batch.rec_v)

    h = np.zeros((B, H), dtype=dt)
    c = np.zeros((B, H), dtype=dt)
    exem_states = np.empty((B, M, H), dtype=dt)
    enc_caches: list[LstmCache] = []
    for j in range(M):
        x = t["emb_token"][batch.ex_ids[:, j]]
        h_new, c_new, cache = lstm_step(t["enc_Wx"], t["enc_Wh"], t["enc_b"], x, h, c)
        m = batch.ex_mask[:, j : j + 1]
        h = m * h_new + (1.0 - m) * h
        c = m * c_new + (1.0 - m) * c
        exem_states[:, j] = h
        if keep_cache:
            enc_caches.append(cache)

    nll = np.zeros(B, dtype=np.float64)
    copy_agg = np.zeros((B, R), dtype=dt)
    copy_dists = np.zeros((B, T, R), dtype=dt)
    vocab_dists = np.zeros((B, T, len(params.vocab)), dtype=dt) if keep_dists else None
    gates = np.zeros((B, T), dtype=dt) if keep_dists else None
    steps: list[_StepCache] = []
    rows = np.arange(B)
    hd, cd = h, c
    for j in range(T):
        x = t["emb_token"][batch.in_ids[:, j]]
        hd_new, cd_new, lcache = lstm_step(t["dec_Wx"], t["dec_Wh"], t["dec_b"], x, hd, cd)
        ro = attention_readout(
            params, hd_new, exem_states, rec_states, batch.ex_mask, batch.rec_mask
        )
        pv = ro.p_vocab[rows, batch.tgt_vid[:, j]] * batch.tgt_in_vocab[:, j]
        pc = np.einsum("br,br->b", batch.match[:, j], ro.p_copy)
        p = ro.gate * pv + (1.0 - ro.gate) * pc
        p_clamped = np.maximum(p, prob_floor)
        nll += -np.log(p_clamped) * batch.step_mask[:, j]
        copy_agg = copy_agg + ro.p_copy * batch.step_mask[:, j : j + 1]
        copy_dists[:, j] = ro.p_copy
        if keep_dists:
            vocab_dists[:, j] = ro.p_vocab
            gates[:, j] = ro.gate
        if keep_cache:
            steps.append(_StepCache(lcache, ro, hd_new, p, p_clamped, pv, pc))
        hd, cd = hd_new, cd_new

    coverage = np.sum(batch.rec_mask * (copy_agg - 1.0) ** 2, axis=1).astype(np.float64)
    return ForwardResult(
        batch=batch,
        prob_floor=prob_floor,
        nll=nll,
        coverage=coverage,
        copy_agg=copy_agg,
        copy_dists=copy_dists,
        rec_states=rec_states,
        rec_u=rec_u,
        exem_states=exem_states,
        steps=steps if keep_cache else None,
        enc_caches=enc_caches if keep_cache else None,
        vocab_dists=vocab_dists,
        gates=gates,
    )


def _backward(
    params: ModelParams,
    res: ForwardResult,
    nll_weights: np.ndarray,
    coverage_weights: np.ndarray,
    grads: dict[str, np.ndarray],
) -> None:
    """Accumulate d(sum_b nll_w[b]*nll[b] + cov_w[b]*coverage[b]) into grads."""
    if res.steps is None or res.enc_caches is None:
        raise TrainingError("backward needs a forward pass run with keep_cache")
    t = params.tensors
    batch = res.batch
    B, M = batch.ex_ids.shape
    T = batch.in_ids.shape[1]
    H = params.hidden_size
    D = params.embed_size
    rows = np.arange(B)

    dA = (2.0 * coverage_weights[:, None]) * (res.copy_agg - 1.0) * batch.rec_mask
    dSe = np.zeros_like(res.exem_states)
    dSr = np.zeros_like(res.rec_states)
    dhd = np.zeros((B, H), dtype=params.dtype)
    dcd = np.zeros((B, H), dtype=params.dtype)

    for j in reversed(range(T)):
        sc = res.steps[j]
        ro = sc.readout
        mask_j = batch.step_mask[:, j]
        dp = -(nll_weights * mask_j) * (sc.p > res.prob_floor) / sc.p_clamped
        dgate = dp * (sc.pv - sc.pc)
        dpv = dp * ro.gate
        dpc = dp * (1.0 - ro.gate)

        dPV = np.zeros_like(ro.p_vocab)
        dPV[rows, batch.tgt_vid[:, j]] = dpv * batch.tgt_in_vocab[:, j]
        dPx = dpc[:, None] * batch.match[:, j] + dA * mask_j[:, None]

        dlogits = ro.p_vocab * (dPV - np.sum(dPV * ro.p_vocab, axis=-1, keepdims=True))
        ds_r_copy = ro.p_copy * (dPx - np.sum(dPx * ro.p_copy, axis=-1, keepdims=True))

        att = ro.att_state
        grads["out_W"] += att.T @ dlogits
        grads["out_b"] += dlogits.sum(axis=0)
        datt = dlogits @ t["out_W"].T

        dgalg = dgate * ro.gate * (1.0 - ro.gate)
        grads["gate_w"] += att.T @ dgalg
        grads["gate_b"] += dgalg.sum()
        datt += dgalg[:, None] * t["gate_w"][None, :]

        dcat_pre = datt * (1.0 - att**2)
        grads["comb_W"] += ro.cat.T @ dcat_pre
        grads["comb_b"] += dcat_pre.sum(axis=0)
        dcat = dcat_pre @ t["comb_W"].T
        dhd_new = dcat[:, :H] + dhd
        dctx = dcat[:, H:]

        a_e, a_r = ro.alpha[:, :M], ro.alpha[:, M:]
        dalpha = np.concatenate(
            [
                np.einsum("bh,bmh->bm", dctx, res.exem_states),
                np.einsum("bh,brh->br", dctx, res.rec_states),
            ],
            axis=-1,
        )
        dSe += a_e[:, :, None] * dctx[:, None, :]
        dSr += a_r[:, :, None] * dctx[:, None, :]
        djoint = ro.alpha * (dalpha - np.sum(dalpha * ro.alpha, axis=-1, keepdims=True))
        ds_e = djoint[:, :M]
        ds_r = djoint[:, M:] + ds_r_copy

        dq_e = np.einsum("bm,bmh->bh", ds_e, res.exem_states)
        dSe += ds_e[:, :, None] * ro.q_exem[:, None, :]
        grads["att_exem"] += sc.h_dec.T @ dq_e
        dhd_new += dq_e @ t["att_exem"].T

        dq_r = np.einsum("br,brh->bh", ds_r, res.rec_states)
        dSr += ds_r[:, :, None] * ro.q_rec[:, None, :]
        grads["att_rec"] += sc.h_dec.T @ dq_r
        dhd_new += dq_r @ t["att_rec"].T

        dx, dh_prev, dc_prev, dWx, dWh, db = lstm_backward(
            t["dec_Wx"], t["dec_Wh"], sc.lstm, dhd_new, dcd
        )
        grads["dec_Wx"] += dWx
        grads["dec_Wh"] += dWh
        grads["dec_b"] += db
        np.add.at(grads["emb_token"], batch.in_ids[:, j], dx)
        dhd, dcd = dh_prev, dc_prev

    # Initial decoder state is the final (mask-carried) encoder state.
    dh_carry, dc_carry = dhd, dcd
    for j in reversed(range(M)):
        m = batch.ex_mask[:, j : j + 1]
        dh_j = dSe[:, j] + dh_carry
        dc_j = dc_carry
        dx, dh_prev, dc_prev, dWx, dWh, db = lstm_backward(
            t["enc_Wx"], t["enc_Wh"], res.enc_caches[j], m * dh_j, m * dc_j
        )
        grads["enc_Wx"] += dWx
        grads["enc_Wh"] += dWh
        grads["enc_b"] += db
        np.add.at(grads["emb_token"], batch.ex_ids[:, j], dx)
        dh_carry = dh_prev + (1.0 - m) * dh_j
        dc_carry = dc_prev + (1.0 - m) * dc_j

    da = dSr * (1.0 - res.rec_states**2)
    grads["rec_W"] += res.rec_u.reshape(-1, 2 * D).T @ da.reshape(-1, H)
    grads["rec_b"] += da.sum(axis=(0, 1))
    du = da @ t["rec_W"].T
    np.add.at(grads["emb_field"], batch.rec_f, du[..., :D])
    np.add.at(grads["emb_token"], batch.rec_v, du[..., D:])


# ---------------------------------------------------------------------------
# Contract-level loss functions.


def sequence_nll(
    params: ModelParams,
    record: Record,
    exemplar: Sequence[str],
    target: Sequence[str],
    prob_floor: float = 1e-12,
) -> tuple[float, np.ndarray]:
    """Teacher-forced -log p(target | record, exemplar) with probabilities
    clamped at prob_floor; also returns the (T, R) copy distributions."""
    if not target:
        raise TrainingError("target must be non-empty")
    batch = _assemble(params, [record], [exemplar], [target])
    res = _forward(params, batch, prob_floor)
    return float(res.nll[0]), res.copy_dists[0]


def coverage_penalty(copy_dists: np.ndarray | Sequence[np.ndarray], record_size: int) -> float:
    """Squared L2 gap between per-slot attention totals and an all-ones vector."""
    agg = np.zeros(record_size, dtype=np.float64)
    for dist in copy_dists:
        dist = np.asarray(dist, dtype=np.float64)
        if dist.shape != (record_size,):
            raise TrainingError(f"copy distribution shape {dist.shape} != ({record_size},)")
        agg += dist
    return float(np.sum((agg - 1.0) ** 2))


def _triple_passes(
    params: ModelParams, triple: TrainingTriple, prob_floor: float, keep_cache: bool
) -> tuple[ForwardResult, ForwardResult]:
    content = _forward(
        params,
        _assemble(params, [triple.x], [triple.y_e], [tuple(triple.y_x) + (EOS,)]),
        prob_floor,
        keep_cache=keep_cache,
    )
    style = _forward(
        params,
        _assemble(params, [triple.x_e], [triple.y_e], [tuple(triple.y_e) + (EOS,)]),
        prob_floor,
        keep_cache=keep_cache,
    )
    return content, style


def total_loss(params: ModelParams, triple: TrainingTriple, config: TrainConfig) -> LossBreakdown:
    """Mixed objective for one triple; coverage averages the two passes."""
    content, style = _triple_passes(params, triple, config.prob_floor, keep_cache=False)
    c = float(content.nll[0])
    s = float(style.nll[0])
    cov = float(content.coverage[0] + style.coverage[0]) / 2.0
    w = config.content_weight
    joint = w * c + (1.0 - w) * s
    return LossBreakdown(
        content_nll=c,
        style_nll=s,
        joint=joint,
        coverage=cov,
        total=joint + config.coverage_weight * cov,
    )


def gradients(
    params: ModelParams, triple: TrainingTriple, config: TrainConfig
) -> dict[str, np.ndarray]:
    """Analytic d(total_loss)/d(params) for one triple."""
    grads = params.zero_grads()
    w = config.content_weight
    eta = config.coverage_weight
    content, style = _triple_passes(params, triple, config.prob_floor, keep_cache=True)
    one = np.ones(1, dtype=np.float64)
    if w > 0.0 or eta > 0.0:
        _backward(params, content, w * one, (eta / 2.0) * one, grads)
    if w < 1.0 or eta > 0.0:
        _backward(params, style, (1.0 - w) * one, (eta / 2.0) * one, grads)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in {name}")
    return grads


# ---------------------------------------------------------------------------
# Triples, the optimizer, and the two-phase train loop.


def build_triples(
    corpus: Sequence[CorpusPair],
    pool: Sequence[CorpusPair],
    max_distance: int,
    prefer_equal_size: bool = True,
    seed: int | str = 0,
) -> list[TrainingTriple]:
    """Retrieve one exemplar per corpus pair; a pair never exemplifies itself."""
    rng = random.Random(seed)
    index = RetrievalIndex(pool, max_distance, prefer_equal_size)
    triples = []
    for pair in corpus:
        ex = index.retrieve(pair.record, rng, exclude_id=pair.id)
        triples.append(
            TrainingTriple(
                x=pair.record,
                y_x=pair.text,
                x_e=ex.record,
                y_e=ex.text,
                distance=field_set_distance(pair.record, ex.record),
                id=pair.id,
                exemplar_id=ex.id,
            )
        )
    return triples


def resolve_triples(
    corpus: Sequence[CorpusPair],
    pool: Sequence[CorpusPair],
    triple_ids: Sequence[TripleIds],
) -> list[TrainingTriple]:
    """Join wire-form triples back to full pairs, re-checking stored distances."""
    by_id = {p.id: p for p in corpus}
    pool_by_id = {p.id: p for p in pool}
    out = []
    for t in triple_ids:
        if t.id not in by_id:
            raise TrainingError(f"triple id {t.id!r} not in the corpus")
        if t.exemplar_id not in pool_by_id:
            raise TrainingError(f"exemplar id {t.exemplar_id!r} not in the pool")
        pair, ex = by_id[t.id], pool_by_id[t.exemplar_id]
        out.append(
            TrainingTriple(
                x=pair.record,
                y_x=pair.text,
                x_e=ex.record,
                y_e=ex.text,
                distance=t.distance,
                id=pair.id,
                exemplar_id=ex.id,
            )
        )
    return out


class Adam:
    """Standard Adam with bias correction; state tensors match the param dtype."""

    def __init__(
        self,
        params: ModelParams,
        learning_rate: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.tensors.items()}

    def step(self, params: ModelParams, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, tensor in params.tensors.items():
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g**2
            tensor -= self.learning_rate * (self.m[name] / bc1) / (
                np.sqrt(self.v[name] / bc2) + self.epsilon
            )


class _BatchStats(NamedTuple):
    content_nll: np.ndarray
    style_nll: np.ndarray
    coverage: np.ndarray


def _batch_gradients(
    params: ModelParams,
    triples: Sequence[TrainingTriple],
    content_weight: float,
    coverage_weight: float,
    prob_floor: float,
    grads: dict[str, np.ndarray] | None,
    scale: float = 1.0,
) -> _BatchStats:
    """Forward both passes for a batch of triples; accumulate scaled gradients."""
    records = [t.x for t in triples]
    exem_records = [t.x_e for t in triples]
    exemplars = [t.y_e for t in triples]
    content_targets = [tuple(t.y_x) + (EOS,) for t in triples]
    style_targets = [tuple(t.y_e) + (EOS,) for t in triples]
    want_content_grad = grads is not None and (content_weight > 0.0 or coverage_weight > 0.0)
    want_style_grad = grads is not None and (content_weight < 1.0 or coverage_weight > 0.0)
    content = _forward(
        params,
        _assemble(params, records, exemplars, content_targets),
        prob_floor,
        keep_cache=want_content_grad,
    )
    style = _forward(
        params,
        _assemble(params, exem_records, exemplars, style_targets),
        prob_floor,
        keep_cache=want_style_grad,
    )
    B = len(triples)
    ones = np.ones(B, dtype=np.float64)
    if want_content_grad:
        _backward(
            params, content, scale * content_weight * ones,
            scale * (coverage_weight / 2.0) * ones, grads,
        )
    if want_style_grad:
        _backward(
            params, style, scale * (1.0 - content_weight) * ones,
            scale * (coverage_weight / 2.0) * ones, grads,
        )
    return _BatchStats(
        content_nll=content.nll,
        style_nll=style.nll,
        coverage=(content.coverage + style.coverage) / 2.0,
    )


def _dedup_pairs(corpus: Sequence[CorpusPair], pool: Sequence[CorpusPair]) -> list[CorpusPair]:
    seen: set[str] = set()
    out: list[CorpusPair] = []
    for pair in list(corpus) + list(pool):
        if pair.id not in seen:
            seen.add(pair.id)
            out.append(pair)
    return out


def train(
    corpus: Sequence[CorpusPair],
    pool: Sequence[CorpusPair] | None,
    config: TrainConfig,
    start_params: ModelParams | None = None,
) -> tuple[ModelParams, list[dict]]:
    """Two phases: style-only pretraining, then the mixed objective with coverage.

    Exemplars are re-retrieved every epoch (resample_exemplars) from the pool.
    The log holds one dict per epoch with mean loss components.  A non-finite
    batch loss raises TrainingDiverged carrying the last end-of-epoch params.
    """
    if not corpus:
        raise TrainingError("cannot train on an empty corpus")
    if pool is None:
        pool = corpus
    dtype = precision_dtype(config.precision)
    vocab = build_vocabulary(_dedup_pairs(corpus, pool), config.min_count)
    if start_params is not None:
        if start_params.vocab.content_hash() != vocab.content_hash():
            raise TrainingError("start_params vocabulary does not match the corpus")
        params = start_params.astype(dtype)
    else:
        params = init_params(
            vocab, config.embed_size, config.hidden_size, seed=config.seed, dtype=dtype
        )
    if config.epochs_full > 0 and not 0.0 < config.content_weight < 1.0:
        raise TrainingError(
            f"full phase needs 0 < content_weight < 1, got {config.content_weight}"
        )

    optimizer = Adam(params, config.learning_rate)
    log: list[dict] = []
    last_good = params.copy()
    frozen_triples = (
        None
        if config.resample_exemplars
        else build_triples(
            corpus, pool, config.max_distance, config.prefer_equal_size,
            seed=f"{config.seed}:triples:0",
        )
    )
    phases = (
        ("pretrain", 0.0, 0.0, config.epochs_pretrain),
        ("full", config.content_weight, config.coverage_weight, config.epochs_full),
    )
    epoch_index = 0
    for phase, w, eta, n_epochs in phases:
        for _ in range(n_epochs):
            triples = frozen_triples or build_triples(
                corpus, pool, config.max_distance, config.prefer_equal_size,
                seed=f"{config.seed}:triples:{epoch_index}",
            )
            order = list(range(len(triples)))
            random.Random(f"{config.seed}:order:{epoch_index}").shuffle(order)
            sums = {"content_nll": 0.0, "style_nll": 0.0, "coverage": 0.0, "total": 0.0}
            for lo in range(0, len(order), config.batch_size):
                chunk = [triples[i] for i in order[lo : lo + config.batch_size]]
                grads = params.zero_grads()
                stats = _batch_gradients(
                    params, chunk, w, eta, config.prob_floor, grads, scale=1.0 / len(chunk)
                )
                totals = w * stats.content_nll + (1.0 - w) * stats.style_nll + eta * stats.coverage
                if not np.all(np.isfinite(totals)):
                    raise TrainingDiverged(
                        f"non-finite loss in epoch {epoch_index} ({phase})", last_good, log
                    )
                sums["content_nll"] += float(stats.content_nll.sum())
                sums["style_nll"] += float(stats.style_nll.sum())
                sums["coverage"] += float(stats.coverage.sum())
                sums["total"] += float(totals.sum())
                optimizer.step(params, grads)
            n = len(triples)
            log.append(
                {
                    "epoch": epoch_index,
                    "phase": phase,
                    "content_nll": sums["content_nll"] / n,
                    "style_nll": sums["style_nll"] / n,
                    "coverage": sums["coverage"] / n,
                    "total": sums["total"] / n,
                }
            )
            if not all(np.all(np.isfinite(v)) for v in params.tensors.values()):
                raise TrainingDiverged(
                    f"non-finite parameters after epoch {epoch_index} ({phase})", last_good, log
                )
            last_good = params.copy()
            epoch_index += 1
    return params, log


def next_token_accuracy(
    params: ModelParams,
    triples: Sequence[TrainingTriple],
    batch_size: int = 32,
    prob_floor: float = 1e-12,
) -> float:
    """Teacher-forced argmax accuracy of the style pass over all target steps."""
    vocab = params.vocab
    suppressed = np.array([PAD_ID, BOS_ID, MASK_ID])
    correct = 0
    total = 0
    for lo in range(0, len(triples), batch_size):
        chunk = triples[lo : lo + batch_size]
        targets = [tuple(t.y_e) + (EOS,) for t in chunk]
        batch = _assemble(params, [t.x_e for t in chunk], [t.y_e for t in chunk], targets)
        res = _forward(params, batch, prob_floor, keep_dists=True)
        for b, triple in enumerate(chunk):
            values = triple.x_e.values()
            for j, tok in enumerate(targets[b]):
                gate = float(res.gates[b, j])
                scores = gate * res.vocab_dists[b, j].copy()
                oov_best: tuple[float, str] | None = None
                oov_mass: dict[str, float] = {}
                for r, val in enumerate(values):
                    mass = (1.0 - gate) * float(res.copy_dists[b, j, r])
                    vid = vocab.get(val)
                    if vid is None:
                        oov_mass[val] = oov_mass.get(val, 0.0) + mass
                    else:
                        scores[vid] += mass
                scores[suppressed] = 0.0
                best_id = int(np.argmax(scores))
                best_tok, best_p = vocab.token(best_id), float(scores[best_id])
                for val, mass in oov_mass.items():
                    if oov_best is None or mass > oov_best[0]:
                        oov_best = (mass, val)
                if oov_best is not None and oov_best[0] > best_p:
                    best_tok = oov_best[1]
                correct += best_tok == tok
                total += 1
    return correct / total if total else 0.0


# ---------------------------------------------------------------------------
# Finite-difference gradient checking.


def finite_difference_error(
    loss_fn,
    tensors: dict[str, np.ndarray],
    analytic: dict[str, np.ndarray],
    epsilon: float = 1e-5,
    min_samples: int = 200,
    seed: int = 0,
) -> float:
    """Max relative error between analytic grads and central differences.

    Samples at least min_samples scalar coordinates, covering every tensor.
    Tensors are perturbed in place, so loss_fn must read them afresh per call.
    """
    rng = np.random.default_rng(seed)
    names = list(tensors)
    per_tensor = max(1, -(-min_samples // len(names)))
    worst = 0.0
    for name in names:
        tensor = tensors[name]
        if tensor.dtype != np.float64:
            raise TrainingError(f"finite differences need float64, {name} is {tensor.dtype}")
        flat = tensor.reshape(-1)
        n = flat.size
        picks = rng.choice(n, size=min(per_tensor, n), replace=False)
        for idx in picks:
            original = flat[idx]
            flat[idx] = original + epsilon
            hi = loss_fn()
            flat[idx] = original - epsilon
            lo = loss_fn()
            flat[idx] = original
            numeric = (hi - lo) / (2.0 * epsilon)
            a = float(analytic[name].reshape(-1)[idx])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst


def gradient_check(
    params: ModelParams,
    triple: TrainingTriple,
    config: TrainConfig,
    epsilon: float = 1e-5,
    min_samples: int = 200,
    seed: int = 0,
) -> float:
    """Check the hand-written backward pass against central differences."""
    if params.dtype != np.float64:
        raise TrainingError("gradient_check requires float64 parameters")
    analytic = gradients(params, triple, config)
    return finite_difference_error(
        lambda: total_loss(params, triple, config).total,
        params.tensors,
        analytic,
        epsilon=epsilon,
        min_samples=min_samples,
        seed=seed,
    )
