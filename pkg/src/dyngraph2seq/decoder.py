"""Attentive LSTM decoder over encoder outputs: teacher forcing and greedy search."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .graphdata import VOCAB, DataError
from .model import Batch, ModelConfig


class VocabularyError(ValueError):
    pass


@dataclass
class DecoderState:
    hidden: Tensor
    cell: Tensor
    prev_tokens: np.ndarray


@dataclass
class DecodeResult:
    tokens: list
    graph_attention: np.ndarray | None = field(default=None, repr=False)  # (M', T)


def graph_to_seq_attend(decoder_hidden, o, store, step_mask=None):
    """Bilinear attention ``s^T W_a o_t`` over encoder steps.

    ``decoder_hidden`` is (B, H) and ``o`` (B, T, H); unbatched (H,) / (T, H)
    inputs are also accepted.  Returns ``(context, beta)``.
    """
    s, o = dc.as_tensor(decoder_hidden), dc.as_tensor(o)
    unbatched = s.ndim == 1
    if unbatched:
        s, o = s.reshape((1,) + s.shape), o.reshape((1,) + o.shape)
        step_mask = None if step_mask is None else np.asarray(step_mask)[None]
    B, T, H = o.shape
    q = s @ store["dec.attn.Wa"]
    scores = dc.matmul(o, q.reshape((B, H, 1))).reshape((B, T))
    beta = dc.softmax(scores, axis=-1, mask=step_mask)
    context = dc.matmul(beta.reshape((B, 1, T)), o).reshape((B, H))
    if unbatched:
        return context.reshape((H,)), beta.reshape((T,))
    return context, beta


def initial_state(final_cell, vocab=VOCAB) -> DecoderState:
    C = dc.as_tensor(final_cell)
    return DecoderState(Tensor(np.zeros(C.shape)), C, np.full(C.shape[0], vocab.bos))


def decode_step(state: DecoderState, o, store, config: ModelConfig, step_mask=None):
    """Embed previous tokens, advance the LSTM, attend, and project to logits.

    Returns ``(logits (B, V), new_state, beta (B, T) or None)``.
    """
    prev = np.asarray(state.prev_tokens)
    if prev.size and (prev.min() < 0 or prev.max() >= config.vocab_size):
        raise VocabularyError(f"token id out of range [0, {config.vocab_size})")
    x = dc.embedding(store["dec.emb"], prev)
    h, c = dc.recurrent_cell(x, state.hidden, state.cell,
                             store["dec.lstm.Wx"], store["dec.lstm.Wh"], store["dec.lstm.b"])
    beta = None
    if config.graph_attention:
        context, beta = graph_to_seq_attend(h, o, store, step_mask)
        combined = dc.tanh(dc.concat([h, context], axis=-1) @ store["dec.comb.W"] + store["dec.comb.b"])
    else:
        combined = dc.tanh(h @ store["dec.comb.W"] + store["dec.comb.b"])
    logits = combined @ store["dec.out.W"] + store["dec.out.b"]
    return logits, DecoderState(h, c, prev), beta


@dataclass
class LossInfo:
    sample_losses: np.ndarray  # per-sample mean token cross-entropy
    correct: int  # teacher-forced argmax hits over real positions
    positions: int


def teacher_forced_loss(batch: Batch, trace, store, config: ModelConfig):
    """Mean over samples of each sample's mean token cross-entropy (EOS included).

    Returns ``(loss, LossInfo)``; PAD positions carry zero weight.
    """
    if batch.dec_in.shape[1] - 1 > config.max_len:
        raise DataError(f"target longer than max_len={config.max_len}")
    B, L = batch.dec_in.shape
    mask = batch.dec_mask.astype(np.float64)
    lengths = mask.sum(axis=1)
    weights = mask / (lengths[:, None] * B)
    state = initial_state(trace.final_cell)
    loss = None
    nll = np.zeros((B, L))
    correct = 0
    for step in range(L):
        state.prev_tokens = batch.dec_in[:, step]
        logits, state, _ = decode_step(state, trace.hiddens, store, config, trace.step_mask)
        target = batch.dec_out[:, step]
        term = dc.cross_entropy(logits, target, weights[:, step])
        loss = term if loss is None else loss + term
        z = logits.data
        zmax = z.max(axis=1)
        lse = np.log(np.exp(z - zmax[:, None]).sum(axis=1)) + zmax
        nll[:, step] = lse - z[np.arange(B), target]
        correct += int(((z.argmax(axis=1) == target) & batch.dec_mask[:, step]).sum())
    sample_losses = (nll * mask).sum(axis=1) / lengths
    return loss, LossInfo(sample_losses, correct, int(mask.sum()))


def greedy_decode(trace, store, config: ModelConfig, max_len=None, vocab=VOCAB):
    """Argmax decoding from BOS until EOS or ``max_len`` tokens, per sample.

    BOS and PAD are never emitted; remaining ties go to the lowest id.
    """
    max_len = config.max_len if max_len is None else max_len
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    B = trace.final_cell.shape[0]
    lengths = trace.step_mask.sum(axis=1)
    state = initial_state(Tensor(trace.final_cell.data))
    o = Tensor(trace.hiddens.data)
    banned = np.zeros(config.vocab_size, dtype=bool)
    banned[[vocab.bos, vocab.pad]] = True
    results = [DecodeResult([], [] if config.graph_attention else None) for _ in range(B)]
    done = np.zeros(B, dtype=bool)
    for _ in range(max_len):
        logits, state, beta = decode_step(state, o, store, config, trace.step_mask)
        z = np.where(banned, -np.inf, logits.data)
        nxt = z.argmax(axis=1)
        for b in np.flatnonzero(~done):
            if nxt[b] == vocab.eos:
                done[b] = True
                continue
            results[b].tokens.append(int(nxt[b]))
            if beta is not None:
                results[b].graph_attention.append(beta.data[b, :lengths[b]])
        if done.all():
            break
        state.prev_tokens = nxt
    for b, r in enumerate(results):
        if r.graph_attention is not None:
            T = int(lengths[b])
            r.graph_attention = (np.array(r.graph_attention) if r.graph_attention
                                 else np.zeros((0, T)))
    return results
