"""Syntax- and domain-aware encoder/decoder transformer.

Encoder layers run paired with a graph-attention (GAT) stack: GAT layer l
attends over the dependency mask (distance < sigma) with tied query/key
projections, and its output additively biases the queries and keys of the
first `gat_biased_heads_per_layer` heads of encoder layer l. The final GAT
states feed the structure probes; mean-pooled encoder states feed the
domain discriminator through a gradient-reversal layer. The decoder is a
standard causal transformer with cross-attention; its output head is a
linear map followed by a small feed-forward whose last layer starts at
zero, so an untrained model scores every token uniformly.

All sequences start with a language-tag symbol: the encoder input carries
the source tag, the decoder prefix the target tag.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

import synglot.tensor as T
from synglot.arrayio import load_arrays, save_arrays
from synglot.syntax import MASK_SENTINEL
from synglot.tensor import Tensor


class PrefixTooLong(Exception):
    pass


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 2
    n_heads: int = 4
    head_dim: int = 16
    d_model: int = 64
    ffn_dim: int = 256
    gat_heads: int = 1
    gat_head_dim: int = 16
    gat_biased_heads_per_layer: int = 2
    sigma: int = 10
    vocab_size: int = 512
    max_len: int = 160
    n_langs: int = 3
    grl_lambda: float = 1.0
    probe_rank: int = 16
    use_domain_head: bool = True

    def __post_init__(self) -> None:
        if self.n_heads * self.head_dim != self.d_model:
            raise ValueError(
                f"n_heads*head_dim must equal d_model: {self.n_heads}*{self.head_dim} != {self.d_model}"
            )
        if not 0 <= self.gat_biased_heads_per_layer <= self.n_heads:
            raise ValueError("gat_biased_heads_per_layer must be in [0, n_heads]")

    @property
    def gat_dim(self) -> int:
        return self.gat_heads * self.gat_head_dim

    @property
    def use_syntax(self) -> bool:
        return self.gat_biased_heads_per_layer > 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


# §V-B-style full-scale values, for documentation and optional big runs;
# model width is heads*head_dim.
PAPER_MODEL = dict(
    n_layers=6, n_heads=8, head_dim=64, d_model=512, ffn_dim=2048,
    gat_heads=1, gat_head_dim=64, gat_biased_heads_per_layer=4,
    sigma=10, vocab_size=2048, max_len=512, probe_rank=64,
)


@dataclass
class EncoderOutput:
    states: Tensor        # (B, n, d_model)
    gat_states: Tensor | None  # (B, n, gat_dim); None when syntax is off
    pooled: Tensor        # (B, d_model)


# ---------------------------------------------------------------------------
# parameters


def init_params(cfg: ModelConfig, seed: int) -> dict[str, Tensor]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    params: dict[str, Tensor] = {}

    def normal(name, *shape):
        params[name] = T.parameter(rng.normal(0.0, 0.02, size=shape).astype(np.float32))

    def zeros(name, *shape):
        params[name] = T.parameter(np.zeros(shape, dtype=np.float32))

    def ones(name, *shape):
        params[name] = T.parameter(np.ones(shape, dtype=np.float32))

    d, f, v = cfg.d_model, cfg.ffn_dim, cfg.vocab_size
    g = cfg.gat_dim

    normal("emb/tok", v, d)
    normal("emb/pos", cfg.max_len, d)

    for l in range(cfg.n_layers):
        for w in ("wq", "wk", "wv", "wo"):
            normal(f"enc/{l}/attn/{w}", d, d)
        ones(f"enc/{l}/ln1/gain", d)
        zeros(f"enc/{l}/ln1/bias", d)
        normal(f"enc/{l}/ffn/w1", d, f)
        zeros(f"enc/{l}/ffn/b1", f)
        normal(f"enc/{l}/ffn/w2", f, d)
        zeros(f"enc/{l}/ffn/b2", d)
        ones(f"enc/{l}/ln2/gain", d)
        zeros(f"enc/{l}/ln2/bias", d)

    if cfg.use_syntax:
        for l in range(cfg.n_layers):
            d_in = d if l == 0 else g
            normal(f"gat/{l}/wqk", d_in, g)
            normal(f"gat/{l}/wv", d_in, g)
            ones(f"gat/{l}/ln/gain", g)
            zeros(f"gat/{l}/ln/bias", g)
            for t in range(cfg.gat_biased_heads_per_layer):
                zeros(f"bias/{l}/gq/{t}", g, cfg.head_dim)
                zeros(f"bias/{l}/gk/{t}", g, cfg.head_dim)
        normal("probe/dist", g, cfg.probe_rank)
        normal("probe/depth", g, cfg.probe_rank)

    for l in range(cfg.n_layers):
        for blk in ("self", "cross"):
            for w in ("wq", "wk", "wv", "wo"):
                normal(f"dec/{l}/{blk}/{w}", d, d)
        ones(f"dec/{l}/ln1/gain", d)
        zeros(f"dec/{l}/ln1/bias", d)
        ones(f"dec/{l}/ln2/gain", d)
        zeros(f"dec/{l}/ln2/bias", d)
        normal(f"dec/{l}/ffn/w1", d, f)
        zeros(f"dec/{l}/ffn/b1", f)
        normal(f"dec/{l}/ffn/w2", f, d)
        zeros(f"dec/{l}/ffn/b2", d)
        ones(f"dec/{l}/ln3/gain", d)
        zeros(f"dec/{l}/ln3/bias", d)

    # output head: linear map, then a feed-forward whose final layer starts
    # at zero so the untrained per-token loss is exactly ln(vocab)
    normal("out/w", d, d)
    normal("out/ffn/w1", d, d)
    zeros("out/ffn/b1", d)
    zeros("out/ffn/w2", d, v)
    zeros("out/ffn/b2", v)

    zeros("cmlm/w", d, v)
    zeros("cmlm/b", v)

    if cfg.use_domain_head:
        zeros("dom/w", d, cfg.n_langs)
        zeros("dom/b", cfg.n_langs)

    return params


def cast_params(params: dict[str, Tensor], dtype) -> dict[str, Tensor]:
    return {k: T.parameter(p.data.astype(dtype)) for k, p in params.items()}


def count_params(params: dict[str, Tensor]) -> int:
    return sum(p.data.size for p in params.values())


# ---------------------------------------------------------------------------
# masks


def additive_pad_mask(ids: np.ndarray, pad_id: int, dtype=np.float32) -> np.ndarray:
    """(B, 1, 1, n) additive mask blocking pad keys."""
    blocked = (ids == pad_id)[:, None, None, :]
    return np.where(blocked, MASK_SENTINEL, 0.0).astype(dtype)


def causal_mask(n: int, dtype=np.float32) -> np.ndarray:
    """(1, 1, n, n) additive mask blocking positions after the query."""
    upper = np.triu(np.ones((n, n), dtype=bool), k=1)
    return np.where(upper, MASK_SENTINEL, 0.0).astype(dtype)[None, None]


# ---------------------------------------------------------------------------
# building blocks


def _split_heads(x: Tensor, n_heads: int, head_dim: int) -> Tensor:
    b, n, _ = x.shape
    return T.swap_axes(T.reshape(x, (b, n, n_heads, head_dim)), 1, 2)


def _merge_heads(x: Tensor) -> Tensor:
    b, h, n, dk = x.shape
    return T.reshape(T.swap_axes(x, 1, 2), (b, n, h * dk))


def _attention(q: Tensor, k: Tensor, v: Tensor, mask_add: np.ndarray | None) -> Tensor:
    dk = q.shape[-1]
    scores = T.scalar_mul(T.matmul(q, T.transpose_last2(k)), 1.0 / np.sqrt(dk))
    return T.matmul(T.softmax_masked(scores, mask_add), v)


def _ffn(params, prefix: str, x: Tensor) -> Tensor:
    h = T.relu(T.add(T.matmul(x, params[f"{prefix}/w1"]), params[f"{prefix}/b1"]))
    return T.add(T.matmul(h, params[f"{prefix}/w2"]), params[f"{prefix}/b2"])


def _ln(params, prefix: str, x: Tensor) -> Tensor:
    return T.layer_norm(x, params[f"{prefix}/gain"], params[f"{prefix}/bias"])


def _head_bias(params, cfg: ModelConfig, layer: int, which: str, gat: Tensor, batch: int, n: int) -> Tensor:
    """(B, n, d_model) additive bias: GAT projections for the first biased
    heads, zeros for the rest."""
    pieces = [
        T.matmul(gat, params[f"bias/{layer}/{which}/{t}"])
        for t in range(cfg.gat_biased_heads_per_layer)
    ]
    rest = cfg.d_model - cfg.gat_biased_heads_per_layer * cfg.head_dim
    if rest:
        pieces.append(T.constant(np.zeros((batch, n, rest), dtype=gat.dtype)))
    return T.concat(pieces, axis=-1)


def _encoder_layer(params, cfg: ModelConfig, layer: int, x: Tensor,
                   pad_add: np.ndarray, gat: Tensor | None) -> Tensor:
    b, n, _ = x.shape
    q = T.matmul(x, params[f"enc/{layer}/attn/wq"])
    k = T.matmul(x, params[f"enc/{layer}/attn/wk"])
    v = T.matmul(x, params[f"enc/{layer}/attn/wv"])
    if gat is not None and cfg.gat_biased_heads_per_layer > 0:
        q = T.add(q, _head_bias(params, cfg, layer, "gq", gat, b, n))
        k = T.add(k, _head_bias(params, cfg, layer, "gk", gat, b, n))
    heads = _attention(
        _split_heads(q, cfg.n_heads, cfg.head_dim),
        _split_heads(k, cfg.n_heads, cfg.head_dim),
        _split_heads(v, cfg.n_heads, cfg.head_dim),
        pad_add,
    )
    attn_out = T.matmul(_merge_heads(heads), params[f"enc/{layer}/attn/wo"])
    x = _ln(params, f"enc/{layer}/ln1", T.add(x, attn_out))
    x = _ln(params, f"enc/{layer}/ln2", T.add(x, _ffn(params, f"enc/{layer}/ffn", x)))
    return x


def _gat_layer(params, cfg: ModelConfig, layer: int, g: Tensor, dep_add: np.ndarray) -> Tensor:
    b, n, d_in = g.shape
    q = _split_heads(T.matmul(g, params[f"gat/{layer}/wqk"]), cfg.gat_heads, cfg.gat_head_dim)
    v = _split_heads(T.matmul(g, params[f"gat/{layer}/wv"]), cfg.gat_heads, cfg.gat_head_dim)
    heads = _attention(q, q, v, dep_add)  # tied query/key projection
    out = _merge_heads(heads)
    if d_in == cfg.gat_dim:
        out = T.add(g, out)
    return _ln(params, f"gat/{layer}/ln", out)


def encode(
    params: dict[str, Tensor],
    cfg: ModelConfig,
    ids: np.ndarray,
    pad_add: np.ndarray,
    dep_add: np.ndarray | None,
    pool_weights: np.ndarray,
) -> EncoderOutput:
    """Run the paired GAT/encoder stack.

    ids: (B, n) with the source-language tag first and pad filling the tail;
    pad_add: (B, 1, 1, n); dep_add: (B, 1, n, n) or None when syntax is off;
    pool_weights: (B, n) rows summing to 1 over the positions h-tilde
    averages (pads and the tag excluded).
    """
    b, n = ids.shape
    if n > cfg.max_len:
        raise PrefixTooLong(f"sequence length {n} exceeds max_len {cfg.max_len}")
    positions = np.arange(n)
    x = T.add(
        T.embedding_lookup(params["emb/tok"], ids),
        T.embedding_lookup(params["emb/pos"], positions),
    )
    use_gat = cfg.use_syntax and dep_add is not None
    g = T.embedding_lookup(params["emb/tok"], ids) if use_gat else None
    for layer in range(cfg.n_layers):
        if use_gat:
            g = _gat_layer(params, cfg, layer, g, dep_add)
        x = _encoder_layer(params, cfg, layer, x, pad_add, g)
    pooled = T.tsum(T.mul(x, T.constant(pool_weights[:, :, None].astype(x.dtype))), axis=1)
    return EncoderOutput(states=x, gat_states=g, pooled=pooled)


def _decoder_layer(params, cfg, layer, x, self_add, enc_states, cross_add, cross_kv=None):
    q = _split_heads(T.matmul(x, params[f"dec/{layer}/self/wq"]), cfg.n_heads, cfg.head_dim)
    k = _split_heads(T.matmul(x, params[f"dec/{layer}/self/wk"]), cfg.n_heads, cfg.head_dim)
    v = _split_heads(T.matmul(x, params[f"dec/{layer}/self/wv"]), cfg.n_heads, cfg.head_dim)
    self_out = T.matmul(_merge_heads(_attention(q, k, v, self_add)), params[f"dec/{layer}/self/wo"])
    x = _ln(params, f"dec/{layer}/ln1", T.add(x, self_out))

    cq = _split_heads(T.matmul(x, params[f"dec/{layer}/cross/wq"]), cfg.n_heads, cfg.head_dim)
    if cross_kv is None:
        ck = _split_heads(T.matmul(enc_states, params[f"dec/{layer}/cross/wk"]), cfg.n_heads, cfg.head_dim)
        cv = _split_heads(T.matmul(enc_states, params[f"dec/{layer}/cross/wv"]), cfg.n_heads, cfg.head_dim)
    else:
        ck, cv = cross_kv
    cross_out = T.matmul(_merge_heads(_attention(cq, ck, cv, cross_add)), params[f"dec/{layer}/cross/wo"])
    x = _ln(params, f"dec/{layer}/ln2", T.add(x, cross_out))
    x = _ln(params, f"dec/{layer}/ln3", T.add(x, _ffn(params, f"dec/{layer}/ffn", x)))
    return x


def output_logits(params, states: Tensor) -> Tensor:
    """Eq-style head: linear map, feed-forward, logits."""
    return _ffn(params, "out/ffn", T.matmul(states, params["out/w"]))


def decode_logits(
    params: dict[str, Tensor],
    cfg: ModelConfig,
    enc_states: Tensor,
    enc_pad_add: np.ndarray,
    y_ids: np.ndarray,
    y_pad_id: int | None = None,
) -> Tensor:
    """Logits (B, n_y, vocab) for the next token at every prefix position.

    y_ids must start with the target-language tag.
    """
    b, n = y_ids.shape
    if n >= cfg.max_len:
        raise PrefixTooLong(f"decoder prefix length {n} >= max_len {cfg.max_len}")
    x = T.add(
        T.embedding_lookup(params["emb/tok"], y_ids),
        T.embedding_lookup(params["emb/pos"], np.arange(n)),
    )
    self_add = causal_mask(n, dtype=x.dtype)
    if y_pad_id is not None:
        self_add = self_add + additive_pad_mask(y_ids, y_pad_id, dtype=x.dtype)
    for layer in range(cfg.n_layers):
        x = _decoder_layer(params, cfg, layer, x, self_add, enc_states, enc_pad_add)
    return output_logits(params, x)


def cmlm_logits(params, states: Tensor) -> Tensor:
    return T.add(T.matmul(states, params["cmlm/w"]), params["cmlm/b"])


def discriminate_domain(params, pooled: Tensor, lam: float) -> Tensor:
    """Language probabilities from pooled states, gradient-reversed by lam."""
    logits = T.add(T.matmul(T.grad_reverse(pooled, lam), params["dom/w"]), params["dom/b"])
    return T.softmax_masked(logits, None)


def probe_predict(params, f: Tensor) -> tuple[Tensor, Tensor]:
    """Squared probe norms: pairwise ||W1(f_i - f_j)||^2 and ||W2 f_i||^2.

    f: (B, n, gat_dim) -> dist (B, n, n), depth (B, n).
    """
    b, n, d = f.shape
    fi = T.reshape(f, (b, n, 1, d))
    fj = T.reshape(f, (b, 1, n, d))
    diff = T.matmul(T.sub(fi, fj), params["probe/dist"])  # (B, n, n, r)
    dist_pred = T.tsum(T.mul(diff, diff), axis=-1)
    dep = T.matmul(f, params["probe/depth"])  # (B, n, r)
    depth_pred = T.tsum(T.mul(dep, dep), axis=-1)
    return dist_pred, depth_pred


# ---------------------------------------------------------------------------
# generation (incremental decoder with cached keys/values)


class _NumpyDecoder:
    """Raw-numpy incremental decoder.

    Mirrors decode_logits exactly (the equality is pinned by tests); caches
    per-layer self-attention keys/values and the cross-attention
    projections so each step costs one token, not the whole prefix.
    """

    def __init__(self, params, cfg: ModelConfig, enc_states: np.ndarray, enc_pad_add: np.ndarray):
        self.p = {k: t.data for k, t in params.items()}
        self.cfg = cfg
        self.enc_pad = enc_pad_add
        b = enc_states.shape[0]
        h, dk = cfg.n_heads, cfg.head_dim
        self.cross = []
        for layer in range(cfg.n_layers):
            ck = self._heads(enc_states @ self.p[f"dec/{layer}/cross/wk"])
            cv = self._heads(enc_states @ self.p[f"dec/{layer}/cross/wv"])
            self.cross.append((ck, cv))
        self.self_k = [np.zeros((b, h, 0, dk), dtype=enc_states.dtype) for _ in range(cfg.n_layers)]
        self.self_v = [np.zeros((b, h, 0, dk), dtype=enc_states.dtype) for _ in range(cfg.n_layers)]
        self.t = 0

    def _heads(self, x):
        b, n, _ = x.shape
        return x.reshape(b, n, self.cfg.n_heads, self.cfg.head_dim).transpose(0, 2, 1, 3)

    def _ln(self, prefix, x):
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        return (xc / np.sqrt(var + 1e-5)) * self.p[f"{prefix}/gain"] + self.p[f"{prefix}/bias"]

    def _softmax(self, z):
        z = z - z.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)

    def reorder(self, sel: np.ndarray) -> None:
        """Keep cache rows sel (beam reordering / expansion)."""
        for layer in range(self.cfg.n_layers):
            self.self_k[layer] = self.self_k[layer][sel]
            self.self_v[layer] = self.self_v[layer][sel]
            ck, cv = self.cross[layer]
            self.cross[layer] = (ck[sel], cv[sel])
        self.enc_pad = self.enc_pad[sel]

    def step(self, ids: np.ndarray) -> np.ndarray:
        """Feed one token per row; returns next-token logits (B, vocab)."""
        p, cfg = self.p, self.cfg
        scale = 1.0 / np.sqrt(cfg.head_dim)
        x = p["emb/tok"][ids][:, None, :] + p["emb/pos"][self.t][None, None, :]
        for layer in range(cfg.n_layers):
            q = self._heads(x @ p[f"dec/{layer}/self/wq"])
            k = self._heads(x @ p[f"dec/{layer}/self/wk"])
            v = self._heads(x @ p[f"dec/{layer}/self/wv"])
            self.self_k[layer] = np.concatenate([self.self_k[layer], k], axis=2)
            self.self_v[layer] = np.concatenate([self.self_v[layer], v], axis=2)
            scores = (q @ self.self_k[layer].transpose(0, 1, 3, 2)) * scale
            heads = self._softmax(scores) @ self.self_v[layer]
            b = heads.shape[0]
            attn = heads.transpose(0, 2, 1, 3).reshape(b, 1, cfg.d_model) @ p[f"dec/{layer}/self/wo"]
            x = self._ln(f"dec/{layer}/ln1", x + attn)

            cq = self._heads(x @ p[f"dec/{layer}/cross/wq"])
            ck, cv = self.cross[layer]
            cscores = (cq @ ck.transpose(0, 1, 3, 2)) * scale + self.enc_pad
            cheads = self._softmax(cscores) @ cv
            cattn = cheads.transpose(0, 2, 1, 3).reshape(b, 1, cfg.d_model) @ p[f"dec/{layer}/cross/wo"]
            x = self._ln(f"dec/{layer}/ln2", x + cattn)

            hmid = np.maximum(x @ p[f"dec/{layer}/ffn/w1"] + p[f"dec/{layer}/ffn/b1"], 0.0)
            x = self._ln(f"dec/{layer}/ln3", x + hmid @ p[f"dec/{layer}/ffn/w2"] + p[f"dec/{layer}/ffn/b2"])
        self.t += 1
        mid = np.maximum((x @ p["out/w"]) @ p["out/ffn/w1"] + p["out/ffn/b1"], 0.0)
        return (mid @ p["out/ffn/w2"] + p["out/ffn/b2"])[:, 0, :]


@dataclass
class GenResult:
    ids: list[int]          # generated tokens, EOS not included
    truncated: bool         # hit max_steps without EOS
    score: float            # length-normalized log probability


def _log_softmax_np(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def greedy_generate(
    params, cfg: ModelConfig, enc_states: np.ndarray, enc_pad_add: np.ndarray,
    start_ids: np.ndarray, eos_id: int, max_steps: int,
) -> list[GenResult]:
    """Batched argmax decoding (ties resolved to the lowest id)."""
    b = enc_states.shape[0]
    dec = _NumpyDecoder(params, cfg, enc_states, enc_pad_add)
    current = np.asarray(start_ids)
    out_ids = [[] for _ in range(b)]
    logp = np.zeros(b)
    done = np.zeros(b, dtype=bool)
    for _ in range(max_steps):
        logits = dec.step(current)
        nxt = logits.argmax(axis=-1)
        lp = _log_softmax_np(logits)
        for i in range(b):
            if not done[i]:
                logp[i] += lp[i, nxt[i]]
                if nxt[i] == eos_id:
                    done[i] = True
                else:
                    out_ids[i].append(int(nxt[i]))
        if done.all():
            break
        current = nxt
    results = []
    for i in range(b):
        length = len(out_ids[i]) + (1 if done[i] else 0)
        results.append(GenResult(out_ids[i], not done[i], float(logp[i] / max(length, 1))))
    return results


def beam_generate(
    params, cfg: ModelConfig, enc_states: np.ndarray, enc_pad_add: np.ndarray,
    start_id: int, eos_id: int, beam: int, max_steps: int,
) -> GenResult:
    """Length-normalized beam search for a single example.

    Hypotheses are scored by total log probability while expanding and by
    logp/length (normalization exponent 1.0) when finished; candidate ties
    break toward the lower token id, then the lower parent beam. At beam=1
    the search must coincide with greedy decoding; that equivalence is a
    regression-tested law, so no width-1 shortcut belongs here.
    """
    dec = _NumpyDecoder(params, cfg, enc_states, enc_pad_add)
    logits = dec.step(np.array([start_id]))
    lp = _log_softmax_np(logits)[0]
    order = np.lexsort((np.arange(lp.size), -lp))[:beam]
    dec.reorder(np.zeros(beam, dtype=np.int64))

    beams = [[int(v)] for v in order]
    scores = lp[order]
    finished: list[GenResult] = []
    active = [i for i in range(beam) if beams[i][-1] != eos_id]
    for i in range(beam):
        if beams[i][-1] == eos_id:
            finished.append(GenResult([], False, float(scores[i] / 1)))

    steps = 1
    while active and steps < max_steps:
        keep = np.array(active, dtype=np.int64)
        dec.reorder(keep)
        beams = [beams[i] for i in active]
        scores = scores[keep]
        current = np.array([b[-1] for b in beams])
        lp = _log_softmax_np(dec.step(current))
        cand = scores[:, None] + lp  # (n_active, vocab)
        n_active, v = cand.shape
        flat = cand.ravel()
        tokens = np.tile(np.arange(v), n_active)
        parents = np.repeat(np.arange(n_active), v)
        take = min(beam, flat.size)
        order = np.lexsort((parents, tokens, -flat))[:take]

        new_beams, new_scores, new_active = [], [], []
        for idx in order:
            parent, token = int(parents[idx]), int(tokens[idx])
            seq = beams[parent] + [token]
            score = float(flat[idx])
            if token == eos_id:
                length = len(seq)  # EOS counted, tag not
                finished.append(GenResult(seq[:-1], False, score / length))
            else:
                new_beams.append((parent, seq, score))
        if not new_beams:
            break
        sel = np.array([p for p, _, _ in new_beams], dtype=np.int64)
        dec.reorder(sel)
        beams = [seq for _, seq, _ in new_beams]
        scores = np.array([s for _, _, s in new_beams])
        active = list(range(len(beams)))
        steps += 1

    if not finished:
        best = int(np.argmax(scores))
        return GenResult(beams[best], True, float(scores[best] / max(len(beams[best]), 1)))
    finished.sort(key=lambda r: (-r.score, r.ids))
    return finished[0]


def generate(
    params, cfg: ModelConfig, enc_states: np.ndarray, enc_pad_add: np.ndarray,
    tgt_tag_id: int, eos_id: int, beam: int = 1, max_steps: int | None = None,
) -> list[GenResult]:
    """Decode every row of the encoded batch into target-language ids."""
    if max_steps is None:
        max_steps = cfg.max_len - 2
    max_steps = min(max_steps, cfg.max_len - 2)
    b = enc_states.shape[0]
    if beam == 1:
        start = np.full(b, tgt_tag_id, dtype=np.int64)
        return greedy_generate(params, cfg, enc_states, enc_pad_add, start, eos_id, max_steps)
    return [
        beam_generate(params, cfg, enc_states[i : i + 1], enc_pad_add[i : i + 1],
                      tgt_tag_id, eos_id, beam, max_steps)
        for i in range(b)
    ]


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(directory, params: dict[str, Tensor], cfg: ModelConfig,
                    card: dict | None = None) -> Path:
    directory = Path(directory)
    save_arrays(directory, {k: p.data for k, p in params.items()})
    doc = {"model_config": cfg.to_dict()}
    doc.update(card or {})
    (directory / "model_card.json").write_text(json.dumps(doc, indent=1, sort_keys=True))
    return directory


def load_checkpoint(directory) -> tuple[dict[str, Tensor], ModelConfig, dict]:
    directory = Path(directory)
    card = json.loads((directory / "model_card.json").read_text())
    cfg = ModelConfig.from_dict(card["model_config"])
    arrays = load_arrays(directory)
    params = {k: T.parameter(v) for k, v in arrays.items() if not k.startswith("adam/")}
    return params, cfg, card
