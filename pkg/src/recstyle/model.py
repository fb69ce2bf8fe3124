"""Attention-copy encoder-decoder over (record, exemplar) sources.

A single LSTM encodes the exemplar sentence; record entries are encoded
per-entry by a feed-forward layer over [field embedding; value embedding].
The decoder is an LSTM whose hidden state attends jointly (one softmax) over
exemplar and record states.  Each step mixes a vocabulary softmax with a copy
distribution over record values through a scalar gate:

    p(token) = gate * p_vocab[token] + (1 - gate) * sum of copy mass on
               record slots holding exactly that value.

All kernels are shape-agnostic over leading batch dimensions so single-step
decoding and the batched trainer share one implementation.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .corpus import BOS, BOS_ID, EOS, MASK, MASK_ID, PAD, PAD_ID, Record, Vocabulary


class ModelError(ValueError):
    """Inconsistent parameters, sources, or checkpoint contents."""


def tensor_shapes(vocab_size: int, embed_size: int, hidden_size: int) -> dict[str, tuple[int, ...]]:
    """Canonical parameter inventory; dict order fixes the checkpoint layout."""
    v, d, h = vocab_size, embed_size, hidden_size
    return {
        "emb_token": (v, d),
        "emb_field": (v, d),
        "rec_W": (2 * d, h),
        "rec_b": (h,),
        "enc_Wx": (d, 4 * h),
        "enc_Wh": (h, 4 * h),
        "enc_b": (4 * h,),
        "dec_Wx": (d, 4 * h),
        "dec_Wh": (h, 4 * h),
        "dec_b": (4 * h,),
        "att_exem": (h, h),
        "att_rec": (h, h),
        "comb_W": (2 * h, h),
        "comb_b": (h,),
        "out_W": (h, v),
        "out_b": (v,),
        "gate_w": (h,),
        "gate_b": (),
    }


class ModelParams:
    """Named parameter tensors plus the vocabulary they are tied to."""

    def __init__(
        self,
        vocab: Vocabulary,
        embed_size: int,
        hidden_size: int,
        tensors: dict[str, np.ndarray],
    ):
        expected = tensor_shapes(len(vocab), embed_size, hidden_size)
        if set(tensors) != set(expected):
            raise ModelError(f"tensor names {sorted(tensors)} != expected {sorted(expected)}")
        dtypes = {tensors[name].dtype for name in expected}
        if len(dtypes) != 1 or next(iter(dtypes)) not in (np.dtype(np.float32), np.dtype(np.float64)):
            raise ModelError(f"tensors must share one float32/float64 dtype, got {dtypes}")
        for name, shape in expected.items():
            if tensors[name].shape != shape:
                raise ModelError(f"{name}: shape {tensors[name].shape} != {shape}")
        self.vocab = vocab
        self.embed_size = embed_size
        self.hidden_size = hidden_size
        self.tensors = {name: tensors[name] for name in expected}

    @property
    def dtype(self) -> np.dtype:
        return self.tensors["emb_token"].dtype

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.vocab, self.embed_size, self.hidden_size,
            {k: v.copy() for k, v in self.tensors.items()},
        )

    def astype(self, dtype: np.dtype | type) -> "ModelParams":
        return ModelParams(
            self.vocab, self.embed_size, self.hidden_size,
            {k: v.astype(dtype) for k, v in self.tensors.items()},
        )

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}


def init_params(
    vocab: Vocabulary,
    embed_size: int = 32,
    hidden_size: int = 64,
    seed: int = 0,
    dtype: np.dtype | type = np.float64,
    scale: float = 0.08,
) -> ModelParams:
    """Uniform(-scale, scale) weights, zero biases; one PCG64 stream in fixed order."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in tensor_shapes(len(vocab), embed_size, hidden_size).items():
        if name.endswith("_b"):
            tensors[name] = np.zeros(shape, dtype=np.float64)
        else:
            tensors[name] = rng.uniform(-scale, scale, size=shape)
    return ModelParams(vocab, embed_size, hidden_size, tensors).astype(dtype)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # 1/(1+e^-x) written through tanh: stable at both tails, one vector op
    return 0.5 * (np.tanh(0.5 * np.asarray(x)) + 1.0)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    # -inf entries (masked) become exact zeros; callers guarantee at least one
    # finite entry per row.
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    return e / np.sum(e, axis=axis, keepdims=True)


class LstmCache(NamedTuple):
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    c_new: np.ndarray
    tanh_c: np.ndarray


def lstm_step(
    Wx: np.ndarray, Wh: np.ndarray, b: np.ndarray,
    x: np.ndarray, h: np.ndarray, c: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, LstmCache]:
    z = x @ Wx + h @ Wh + b
    zi, zf, zg, zo = np.split(z, 4, axis=-1)
    i = sigmoid(zi)
    f = sigmoid(zf)
    g = np.tanh(zg)
    o = sigmoid(zo)
    c_new = f * c + i * g
    tanh_c = np.tanh(c_new)
    h_new = o * tanh_c
    return h_new, c_new, LstmCache(x, h, c, i, f, g, o, c_new, tanh_c)


def lstm_backward(
    Wx: np.ndarray, Wh: np.ndarray, cache: LstmCache,
    dh: np.ndarray, dc: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Returns (dx, dh_prev, dc_prev, dWx, dWh, db) for one batched cell step."""
    do = dh * cache.tanh_c
    dc_total = dc + dh * cache.o * (1.0 - cache.tanh_c**2)
    df = dc_total * cache.c_prev
    dc_prev = dc_total * cache.f
    di = dc_total * cache.g
    dg = dc_total * cache.i
    dz = np.concatenate(
        [
            di * cache.i * (1.0 - cache.i),
            df * cache.f * (1.0 - cache.f),
            dg * (1.0 - cache.g**2),
            do * cache.o * (1.0 - cache.o),
        ],
        axis=-1,
    )
    dWx = cache.x.T @ dz
    dWh = cache.h_prev.T @ dz
    db = dz.sum(axis=0) if dz.ndim > 1 else dz
    dx = dz @ Wx.T
    dh_prev = dz @ Wh.T
    return dx, dh_prev, dc_prev, dWx, dWh, db


def record_entry_states(
    params: ModelParams, field_ids: np.ndarray, value_ids: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """tanh([field emb; value emb] @ rec_W + rec_b); returns (states, concat input)."""
    t = params.tensors
    u = np.concatenate([t["emb_field"][field_ids], t["emb_token"][value_ids]], axis=-1)
    return np.tanh(u @ t["rec_W"] + t["rec_b"]), u


def encode_record(params: ModelParams, record: Record) -> np.ndarray:
    if len(record) == 0:
        raise ModelError("cannot encode an empty record")
    vocab = params.vocab
    f_ids = np.array([vocab.lookup(f) for f, _ in record.entries])
    v_ids = np.array([vocab.lookup(v) for _, v in record.entries])
    return record_entry_states(params, f_ids, v_ids)[0]


def _encode_tokens(params: ModelParams, tokens: Sequence[str]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if not tokens:
        raise ModelError("cannot encode an empty token sequence")
    t = params.tensors
    h = np.zeros(params.hidden_size, dtype=params.dtype)
    c = np.zeros_like(h)
    states = []
    for tok in tokens:
        x = t["emb_token"][params.vocab.lookup(tok)]
        h, c, _ = lstm_step(t["enc_Wx"], t["enc_Wh"], t["enc_b"], x, h, c)
        states.append(h)
    return np.stack(states), h, c


def encode_exemplar(params: ModelParams, tokens: Sequence[str]) -> np.ndarray:
    """Per-token LSTM states; the prefix property holds because it runs left to right."""
    return _encode_tokens(params, tokens)[0]


@dataclass
class EncodedSources:
    """Everything the decoder attends to, plus its initial state."""

    exemplar_states: np.ndarray  # (M, h)
    record_states: np.ndarray  # (R, h)
    record_values: tuple[str, ...]
    initial_state: tuple[np.ndarray, np.ndarray]
    vocab: Vocabulary


def encode_sources(params: ModelParams, record: Record, exemplar: Sequence[str]) -> EncodedSources:
    ex_states, h, c = _encode_tokens(params, exemplar)
    return EncodedSources(
        exemplar_states=ex_states,
        record_states=encode_record(params, record),
        record_values=record.values(),
        initial_state=(h, c),
        vocab=params.vocab,
    )


class Readout(NamedTuple):
    """One decoder step's attention and output heads (leading dims pass through)."""

    q_exem: np.ndarray
    q_rec: np.ndarray
    alpha: np.ndarray  # joint attention over M exemplar + R record positions
    cat: np.ndarray  # [decoder hidden; context]
    att_state: np.ndarray
    p_vocab: np.ndarray
    gate: np.ndarray
    p_copy: np.ndarray


def attention_readout(
    params: ModelParams,
    h_dec: np.ndarray,
    exem_states: np.ndarray,
    rec_states: np.ndarray,
    exem_mask: np.ndarray | None = None,
    rec_mask: np.ndarray | None = None,
) -> Readout:
    t = params.tensors
    q_e = h_dec @ t["att_exem"]
    q_r = h_dec @ t["att_rec"]
    s_e = np.einsum("...h,...mh->...m", q_e, exem_states)
    s_r = np.einsum("...h,...rh->...r", q_r, rec_states)
    if exem_mask is not None:
        s_e = np.where(exem_mask > 0, s_e, -np.inf)
    if rec_mask is not None:
        s_r = np.where(rec_mask > 0, s_r, -np.inf)
    m = exem_states.shape[-2]
    alpha = softmax(np.concatenate([s_e, s_r], axis=-1))
    ctx = np.einsum("...m,...mh->...h", alpha[..., :m], exem_states) + np.einsum(
        "...r,...rh->...h", alpha[..., m:], rec_states
    )
    cat = np.concatenate([h_dec, ctx], axis=-1)
    att = np.tanh(cat @ t["comb_W"] + t["comb_b"])
    p_vocab = softmax(att @ t["out_W"] + t["out_b"])
    gate = sigmoid(att @ t["gate_w"] + t["gate_b"])
    p_copy = softmax(s_r)
    return Readout(q_e, q_r, alpha, cat, att, p_vocab, gate, p_copy)


@dataclass
class DecoderStep:
    """Distributions produced at one decode position."""

    hidden: np.ndarray  # attentional hidden state
    gate: float
    vocab_dist: np.ndarray  # (V,)
    copy_dist: np.ndarray  # (R,) over record slots


def decode_step(
    params: ModelParams,
    prev_state: tuple[np.ndarray, np.ndarray],
    prev_token: str,
    sources: EncodedSources,
) -> tuple[DecoderStep, tuple[np.ndarray, np.ndarray]]:
    """Advance the decoder one step; unknown prev_token feeds the UNK embedding."""
    t = params.tensors
    h_prev, c_prev = prev_state
    if h_prev.shape != (params.hidden_size,) or c_prev.shape != (params.hidden_size,):
        raise ModelError(
            f"state shapes {h_prev.shape}/{c_prev.shape} != ({params.hidden_size},)"
        )
    x = t["emb_token"][params.vocab.lookup(prev_token)]
    h, c, _ = lstm_step(t["dec_Wx"], t["dec_Wh"], t["dec_b"], x, h_prev, c_prev)
    ro = attention_readout(params, h, sources.exemplar_states, sources.record_states)
    step = DecoderStep(
        hidden=ro.att_state,
        gate=float(ro.gate),
        vocab_dist=ro.p_vocab,
        copy_dist=ro.p_copy,
    )
    return step, (h, c)


def token_probability(step: DecoderStep, sources: EncodedSources, token: str) -> float:
    """Gate-mixed probability; copy mass sums over every slot holding the token."""
    vid = sources.vocab.get(token)
    p_v = float(step.vocab_dist[vid]) if vid is not None else 0.0
    p_c = 0.0
    for j, val in enumerate(sources.record_values):
        if val == token:
            p_c += float(step.copy_dist[j])
    return step.gate * p_v + (1.0 - step.gate) * p_c


_SUPPRESSED_IDS = (PAD_ID, BOS_ID, MASK_ID)


def output_candidates(step: DecoderStep, sources: EncodedSources) -> list[tuple[str, float]]:
    """Marginalized next-token distribution over vocabulary plus copied values.

    Copy mass on in-vocabulary values folds into their vocabulary entry;
    out-of-vocabulary values appear verbatim as extra candidates.  Pad, bos,
    and mask can never be emitted.
    """
    vocab = sources.vocab
    probs = step.gate * step.vocab_dist.copy()
    extra: dict[str, float] = {}
    for j, val in enumerate(sources.record_values):
        mass = (1.0 - step.gate) * float(step.copy_dist[j])
        vid = vocab.get(val)
        if vid is None:
            extra[val] = extra.get(val, 0.0) + mass
        else:
            probs[vid] += mass
    for idx in _SUPPRESSED_IDS:
        probs[idx] = 0.0
    out = [(vocab.token(i), float(probs[i])) for i in range(len(vocab))]
    out.extend(extra.items())
    return out


StepFn = Callable[[object, str], tuple[list[tuple[str, float]], object]]


def run_beam(
    step_fn: StepFn,
    initial_state: object,
    width: int,
    max_len: int,
    eos: str = EOS,
) -> tuple[tuple[str, ...], float]:
    """Beam search over log-sums of step probabilities; no length normalization.

    Ties break toward earlier insertion (lower beam rank, then candidate
    order), so results are deterministic.  Returns (tokens without eos, score).
    """
    if width < 1:
        raise ModelError(f"beam width must be >= 1, got {width}")
    if max_len < 1:
        raise ModelError(f"max_len must be >= 1, got {max_len}")
    live: list[tuple[float, tuple[str, ...], object, str]] = [(0.0, (), initial_state, BOS)]
    finished: list[tuple[float, tuple[str, ...]]] = []
    for _ in range(max_len):
        scored: list[tuple[float, tuple[str, ...], object, str]] = []
        for score, toks, state, prev in live:
            cands, new_state = step_fn(state, prev)
            for tok, p in cands:
                if p <= 0.0:
                    continue
                scored.append((score + math.log(p), toks, new_state, tok))
        if not scored:
            break
        scored.sort(key=lambda item: -item[0])
        live = []
        for score, toks, state, tok in scored[:width]:
            if tok == eos:
                finished.append((score, toks))
            else:
                live.append((score, toks + (tok,), state, tok))
        if not live:
            break
    if finished:
        best = max(finished, key=lambda item: item[0])
        return best[1], best[0]
    if live:
        score, toks, _, _ = max(live, key=lambda item: item[0])
        return toks, score
    return (), -math.inf


def beam_search(
    params: ModelParams,
    record: Record,
    exemplar: Sequence[str],
    width: int = 5,
    max_len: int = 50,
) -> tuple[str, ...]:
    """Decode one output for (record, exemplar); width 1 is greedy decoding."""
    sources = encode_sources(params, record, exemplar)

    def step_fn(state, prev_token):
        step, new_state = decode_step(params, state, prev_token, sources)
        return output_candidates(step, sources), new_state

    return run_beam(step_fn, sources.initial_state, width, max_len)[0]


# ---------------------------------------------------------------------------
# Checkpoints: magic, version, length-prefixed JSON header, then raw tensor
# bytes as little-endian float64 in header order.

_CKPT_MAGIC = b"RSCP"
_CKPT_VERSION = 1


def save_checkpoint(params: ModelParams, path: str | Path) -> None:
    header = {
        "format_version": _CKPT_VERSION,
        "vocab_size": len(params.vocab),
        "embed_size": params.embed_size,
        "hidden_size": params.hidden_size,
        "vocab_hash": params.vocab.content_hash(),
        "tensors": [
            {"name": name, "shape": list(arr.shape)} for name, arr in params.tensors.items()
        ],
    }
    blob = json.dumps(header, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", _CKPT_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for arr in params.tensors.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(
    path: str | Path, vocab: Vocabulary, dtype: np.dtype | type = np.float64
) -> ModelParams:
    """Reject files whose stored vocabulary hash does not match the one supplied."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:4] != _CKPT_MAGIC:
        raise ModelError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != _CKPT_VERSION:
        raise ModelError(f"{path}: unsupported checkpoint version {version}")
    (hlen,) = struct.unpack_from("<Q", blob, 8)
    if 16 + hlen > len(blob):
        raise ModelError(f"{path}: truncated checkpoint header")
    try:
        header = json.loads(blob[16 : 16 + hlen].decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelError(f"{path}: unreadable checkpoint header ({exc})") from None
    if header["vocab_hash"] != vocab.content_hash():
        raise ModelError(f"{path}: vocabulary hash mismatch")
    if header["vocab_size"] != len(vocab):
        raise ModelError(f"{path}: vocab size {header['vocab_size']} != {len(vocab)}")
    offset = 16 + hlen
    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        if offset + count * 8 > len(blob):
            raise ModelError(f"{path}: truncated tensor {entry['name']!r}")
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape)
        tensors[entry["name"]] = arr.astype(np.float64)
        offset += count * 8
    if offset != len(blob):
        raise ModelError(f"{path}: trailing bytes in checkpoint")
    return ModelParams(vocab, header["embed_size"], header["hidden_size"], tensors).astype(dtype)


def precision_dtype(precision: str) -> type:
    if precision == "f32":
        return np.float32
    if precision == "f64":
        return np.float64
    raise ModelError(f"precision must be 'f32' or 'f64', got {precision!r}")
