"""Three-stage unsupervised training.

Stage "init" trains masked-token prediction (a linear head on encoder
states) plus denoising reconstruction, alternating languages round-robin.
Stage "augment" continues with the combined objective

    L = L_DAE + alpha * (L_dis + L_depth) + beta * L_domain

where alpha and beta decay linearly, the structure probes regress squared
tree distances/depths from GAT states, and the domain loss reaches the
encoder through gradient reversal. Stage "backtranslate" cycles ordered
language pairs: greedily translate a batch (no gradients), then train on
translating the pseudo-translation back to the original.

Corruption, loss, and schedule functions are exposed individually so each
has its own oracle tests; run_stage/run_backtranslation wire them into
deterministic seeded loops that emit one LossReport per step.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

import synglot.bpe as bpe
import synglot.tensor as T
from synglot.bpe import EOS, MASK, PAD, UNK, BpeVocab, EncodedFunction
from synglot.model import (
    ModelConfig,
    additive_pad_mask,
    cmlm_logits,
    decode_logits,
    encode,
    generate,
    probe_predict,
    save_checkpoint,
)
from synglot.syntax import MASK_SENTINEL, SubtokenStructure, leaf_structure, subtoken_structure
from synglot.tensor import Adam, Tensor
from synglot.toylang import LANGUAGES, ParseError, parse_with_tree

LANG_LABELS = {lang: i for i, lang in enumerate(sorted(LANGUAGES))}

STAGES = ("init", "augment", "backtranslate")
_STAGE_CODES = {"init": 1, "augment": 2, "backtranslate": 3}


class NoMaskedPositions(Exception):
    """A masked-prediction batch contains no masked tokens."""


@dataclass(frozen=True)
class NoiseSpec:
    drop_prob: float = 0.1
    mask_prob: float = 0.1
    shuffle_k: int = 3
    sub_prob: float = 0.0

    def __post_init__(self):
        for name in ("drop_prob", "mask_prob", "sub_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.shuffle_k < 0:
            raise ValueError("shuffle_k must be >= 0")


@dataclass(frozen=True)
class Schedule:
    start: float = 0.05
    end: float = 0.01
    decay_steps: int = 3000

    def __post_init__(self):
        if self.decay_steps <= 0:
            raise ValueError("decay_steps must be > 0")


@dataclass(frozen=True)
class TrainConfig:
    stage: str
    steps: int
    batch_size: int = 16
    mask_ratio: float = 0.15
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    alpha: Schedule = field(default_factory=Schedule)
    beta: Schedule = field(default_factory=Schedule)
    grl_lambda: float = 1.0
    bt_dae_weight: float = 1.0
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    roster: tuple[str, ...] = ("alpha", "beta")
    checkpoint_every: int = 0
    probe_target: str = "squared"

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.steps < 0 or self.batch_size < 1:
            raise ValueError("steps must be >= 0 and batch_size >= 1")
        if not 0.0 <= self.mask_ratio <= 1.0:
            raise ValueError("mask_ratio must be in [0, 1]")
        if self.probe_target not in ("squared", "plain"):
            raise ValueError("probe_target must be 'squared' or 'plain'")
        if self.bt_dae_weight < 0:
            raise ValueError("bt_dae_weight must be >= 0")
        unknown = [l for l in self.roster if l not in LANGUAGES]
        if unknown:
            raise ValueError(f"unknown languages in roster: {unknown}")
        if not self.roster:
            raise ValueError("roster must not be empty")
        if self.stage == "backtranslate" and len(self.roster) < 2:
            raise ValueError("back-translation needs at least two languages")


@dataclass
class NoisedExample:
    noisy_ids: np.ndarray        # (m,) after drop/shuffle/mask
    noisy_dist: np.ndarray       # (m, m) tree distances realigned to noisy slots
    noisy_depth: np.ndarray      # (m,)
    clean_ids: np.ndarray        # (s,) original subtoken ids
    kept_index_map: np.ndarray   # strictly increasing surviving clean indices
    origin: np.ndarray           # (m,) clean index of the token in each noisy slot


@dataclass
class LossReport:
    step: int
    total: float
    L_DAE: float | None = None
    L_CMLM: float | None = None
    L_dis: float | None = None
    L_depth: float | None = None
    L_domain: float | None = None
    L_BT: float | None = None
    alpha: float | None = None
    beta: float | None = None
    pair: str | None = None

    def to_json(self) -> dict:
        doc = {"step": self.step, "total": self.total}
        for name in ("L_DAE", "L_CMLM", "L_dis", "L_depth", "L_domain",
                     "L_BT", "alpha", "beta", "pair"):
            value = getattr(self, name)
            if value is not None:
                doc[name] = value
        return doc


# ---------------------------------------------------------------------------
# corruption


def corrupt(encoded: EncodedFunction, structure: SubtokenStructure,
            noise: NoiseSpec, rng: np.random.Generator,
            sub_pool: np.ndarray | None = None) -> NoisedExample:
    """Drop, locally shuffle, mask, then substitute subtokens.

    The first token always survives the drop, so the encoder never sees an
    empty sequence. Dropped tokens lose their structure rows/columns;
    masked tokens keep theirs; shuffled tokens carry theirs along (tree
    distances belong to tokens, not slots). No token is displaced more
    than shuffle_k positions.

    Substitution replaces unmasked tokens with draws from sub_pool. With a
    shared cross-language vocabulary this plants wrong-language tokens in
    context, so the denoiser learns to re-spell them instead of copying;
    that is the force that separates translation from transliteration once
    back-translation starts feeding the model its own output.
    """
    ids = np.asarray(encoded.ids, dtype=np.int64)
    s = ids.size
    keep = rng.random(s) >= noise.drop_prob
    keep[0] = True
    kept = np.nonzero(keep)[0]
    m = kept.size

    if noise.shuffle_k > 0 and m > 1:
        keys = np.arange(m) + rng.uniform(0.0, noise.shuffle_k, size=m)
        order = np.argsort(keys, kind="stable")
    else:
        order = np.arange(m)
    origin = kept[order]

    noisy = ids[origin].copy()
    hit = rng.random(m) < noise.mask_prob
    noisy[hit] = MASK
    if noise.sub_prob > 0:
        if sub_pool is None:
            raise ValueError("sub_prob > 0 requires a sub_pool of candidate ids")
        sub_hit = ~hit & (rng.random(m) < noise.sub_prob)
        n_sub = int(sub_hit.sum())
        if n_sub:
            noisy[sub_hit] = rng.choice(sub_pool, size=n_sub)

    return NoisedExample(
        noisy_ids=noisy,
        noisy_dist=structure.dist_sub[np.ix_(origin, origin)],
        noisy_depth=structure.depth_sub[origin],
        clean_ids=ids,
        kept_index_map=kept,
        origin=origin,
    )


def mask_for_prediction(ids: np.ndarray, mask_ratio: float, vocab: BpeVocab,
                        rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Masked-token corruption: select ~mask_ratio of positions, then apply
    the 80/10/10 mask/random/keep split. Resamples until at least one
    position is selected, so downstream losses always have targets."""
    s = ids.size
    sel = rng.random(s) < mask_ratio
    for _ in range(100):
        if sel.any():
            break
        sel = rng.random(s) < mask_ratio
    if not sel.any():
        sel[rng.integers(0, s)] = True
    noisy = ids.copy()
    chosen = np.nonzero(sel)[0]
    u = rng.random(chosen.size)
    vocab_n = len(vocab.id_to_token)
    for pos, roll in zip(chosen, u):
        if roll < 0.8:
            noisy[pos] = MASK
        elif roll < 0.9:
            noisy[pos] = rng.integers(vocab.n_specials, vocab_n)
        # else: keep the original token, but it is still a prediction target
    return noisy, sel


# ---------------------------------------------------------------------------
# batch assembly


@dataclass
class PreparedExample:
    lang: str
    label: int
    encoded: EncodedFunction
    structure: SubtokenStructure

    @property
    def ids(self) -> np.ndarray:
        return np.asarray(self.encoded.ids, dtype=np.int64)


def prepare_corpus(records: list[dict], vocab: BpeVocab) -> dict[str, list[PreparedExample]]:
    """Parse, structure-extract, and encode corpus records once up front."""
    out: dict[str, list[PreparedExample]] = {}
    for rec in records:
        lang, code = rec["lang"], rec["code"]
        _, tree = parse_with_tree(code, lang)
        encoded = bpe.encode(code, lang, vocab)
        structure = subtoken_structure(leaf_structure(tree), encoded.linking)
        out.setdefault(lang, []).append(PreparedExample(
            lang=lang, label=LANG_LABELS[lang], encoded=encoded, structure=structure,
        ))
    return out


@dataclass
class EncBatch:
    ids: np.ndarray        # (B, n) tag first, PAD-filled tail
    pad_add: np.ndarray    # (B, 1, 1, n)
    dep_add: np.ndarray | None   # (B, 1, n, n)
    pool_w: np.ndarray     # (B, n) rows sum to 1 over real subtokens
    labels: np.ndarray     # (B,) language labels
    dist_target: np.ndarray | None   # (B, n, n) probe targets (0 outside valid)
    depth_target: np.ndarray | None  # (B, n)
    valid: np.ndarray | None         # (B, n) 1 where probe targets apply


_FAR = 10 ** 9  # placeholder distance: beyond any sigma, blocked


def build_enc_batch(
    rows: list[tuple[np.ndarray, np.ndarray | None, np.ndarray | None]],
    tag_ids: list[int],
    labels: list[int],
    sigma: int,
    with_structure: bool,
    probe_target: str = "squared",
) -> EncBatch:
    """Pad a batch of (ids, dist, depth) rows into model inputs.

    A row with dist=None gets the permissive fallback: every real position
    may attend every other, and the row is excluded from probe targets.
    """
    b = len(rows)
    n = 1 + max(ids.size for ids, _, _ in rows)
    ids_arr = np.full((b, n), PAD, dtype=np.int64)
    pool = np.zeros((b, n), dtype=np.float32)
    for i, ((ids, _, _), tag) in enumerate(zip(rows, tag_ids)):
        s = ids.size
        ids_arr[i, 0] = tag
        ids_arr[i, 1:1 + s] = ids
        pool[i, 1:1 + s] = 1.0 / s
    pad_add = additive_pad_mask(ids_arr, PAD)

    dep_add = None
    dist_t = depth_t = valid = None
    if with_structure:
        dist_full = np.full((b, n, n), _FAR, dtype=np.int64)
        dist_t = np.zeros((b, n, n), dtype=np.float32)
        depth_t = np.zeros((b, n), dtype=np.float32)
        valid = np.zeros((b, n), dtype=np.float32)
        power = 2 if probe_target == "squared" else 1
        for i, (ids, dist, depth) in enumerate(rows):
            s = ids.size
            if dist is None:
                dist_full[i, : 1 + s, : 1 + s] = 0  # permissive fallback
                continue
            dist_full[i, 1:1 + s, 1:1 + s] = dist
            dist_full[i, 0, : 1 + s] = 0   # tag row/col always open
            dist_full[i, : 1 + s, 0] = 0
            dist_t[i, 1:1 + s, 1:1 + s] = (dist.astype(np.float32)) ** power
            depth_t[i, 1:1 + s] = (depth.astype(np.float32)) ** power
            valid[i, 1:1 + s] = 1.0
        dep_add = np.where(dist_full < sigma, 0.0, MASK_SENTINEL).astype(np.float32)
        diag = np.arange(n)
        dep_add[:, diag, diag] = 0.0   # pads may attend themselves
        dep_add = dep_add[:, None]

    return EncBatch(ids=ids_arr, pad_add=pad_add, dep_add=dep_add, pool_w=pool,
                    labels=np.asarray(labels, dtype=np.int64),
                    dist_target=dist_t, depth_target=depth_t, valid=valid)


def build_dec_batch(targets: list[np.ndarray], tag_ids: list[int]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Teacher-forced decoder arrays: input [tag]+ids, target ids+[EOS]."""
    b = len(targets)
    m = 1 + max(t.size for t in targets)
    y_in = np.full((b, m), PAD, dtype=np.int64)
    y_tgt = np.full((b, m), PAD, dtype=np.int64)
    weights = np.zeros((b, m), dtype=np.float32)
    for i, (ids, tag) in enumerate(zip(targets, tag_ids)):
        s = ids.size
        y_in[i, 0] = tag
        y_in[i, 1:1 + s] = ids
        y_tgt[i, :s] = ids
        y_tgt[i, s] = EOS
        weights[i, : s + 1] = 1.0
    return y_in, y_tgt, weights


@dataclass
class CmlmBatch:
    enc: EncBatch
    targets: np.ndarray   # (B, n) original ids (pads where nothing to predict)
    weights: np.ndarray   # (B, n) 1.0 at masked positions


# ---------------------------------------------------------------------------
# losses


def sequence_ce(logits: Tensor, targets: np.ndarray, weights: np.ndarray) -> Tensor:
    """Weighted mean cross-entropy over positions with weight > 0."""
    total = float(weights.sum())
    if total == 0:
        raise NoMaskedPositions("no positions carry loss weight")
    picked = T.gather_last(T.log_softmax(logits), targets)
    weighted = T.mul(picked, T.constant(weights.astype(logits.dtype)))
    return T.scalar_mul(T.tsum(weighted), -1.0 / total)


def cmlm_loss(params, cfg: ModelConfig, batch: CmlmBatch) -> Tensor:
    """Cross-entropy of the linear masked-token head at masked positions."""
    if not batch.weights.any():
        raise NoMaskedPositions("batch has no masked positions")
    enc = encode(params, cfg, batch.enc.ids, batch.enc.pad_add,
                 batch.enc.dep_add, batch.enc.pool_w)
    return sequence_ce(cmlm_logits(params, enc.states), batch.targets, batch.weights)


def dae_loss(params, cfg: ModelConfig, enc_batch: EncBatch,
             y_in: np.ndarray, y_tgt: np.ndarray, weights: np.ndarray):
    """Decoder cross-entropy reconstructing clean code from noisy input.
    Returns (loss, encoder output) so callers can reuse the encoding."""
    enc = encode(params, cfg, enc_batch.ids, enc_batch.pad_add,
                 enc_batch.dep_add, enc_batch.pool_w)
    logits = decode_logits(params, cfg, enc.states, enc_batch.pad_add, y_in, y_pad_id=PAD)
    return sequence_ce(logits, y_tgt, weights), enc


def syntax_aux_loss(params, f: Tensor, dist_target: np.ndarray,
                    depth_target: np.ndarray, valid: np.ndarray) -> tuple[Tensor, Tensor]:
    """Structure-probe losses, per example (1/n^2) sums of absolute errors
    between target distances/depths and squared probe norms, averaged over
    the examples that carry structure."""
    n_s = valid.sum(axis=1)
    carrying = n_s > 0
    b_eff = int(carrying.sum())
    if b_eff == 0:
        zero = T.constant(np.zeros((), dtype=f.dtype))
        return zero, zero
    denom = np.where(carrying, n_s, 1.0) ** 2 * b_eff
    pair_w = (valid[:, :, None] * valid[:, None, :]) / denom[:, None, None]
    depth_w = valid / denom[:, None]

    dist_pred, depth_pred = probe_predict(params, f)
    l_dis = T.tsum(T.mul(
        T.absolute(T.sub(dist_pred, T.constant(dist_target.astype(f.dtype)))),
        T.constant(pair_w.astype(f.dtype)),
    ))
    l_depth = T.tsum(T.mul(
        T.absolute(T.sub(depth_pred, T.constant(depth_target.astype(f.dtype)))),
        T.constant(depth_w.astype(f.dtype)),
    ))
    return l_dis, l_depth


def domain_loss(params, pooled: Tensor, labels: np.ndarray, lam: float) -> Tensor:
    """Mean cross-entropy of the language discriminator; the encoder sees
    the gradient reversed and scaled by lam."""
    logits = T.add(T.matmul(T.grad_reverse(pooled, lam), params["dom/w"]), params["dom/b"])
    picked = T.gather_last(T.log_softmax(logits), labels)
    return T.scalar_mul(T.tsum(picked), -1.0 / labels.size)


def schedule_weights(step: int, schedule: Schedule) -> float:
    frac = min(step, schedule.decay_steps) / schedule.decay_steps
    return schedule.start + (schedule.end - schedule.start) * frac


# ---------------------------------------------------------------------------
# stage loops


class _ReportLog:
    def __init__(self, log_path):
        self.path = Path(log_path) if log_path else None
        self._fh = self.path.open("a") if self.path else None

    def emit(self, report: LossReport) -> None:
        if self._fh:
            self._fh.write(json.dumps(report.to_json(), sort_keys=True) + "\n")

    def close(self) -> None:
        if self._fh:
            self._fh.close()


def _maybe_checkpoint(step, tcfg, params, mcfg, ckpt_dir):
    if ckpt_dir and tcfg.checkpoint_every and (step + 1) % tcfg.checkpoint_every == 0:
        save_checkpoint(Path(ckpt_dir) / f"step-{step + 1:06d}", params, mcfg,
                        card={"stage": tcfg.stage, "step": step + 1})


def _sample_rows(data, lang, batch_size, rng):
    pool = data[lang]
    idx = rng.integers(0, len(pool), size=batch_size)
    return [pool[int(i)] for i in idx]


def _substitution_pool(vocab: BpeVocab) -> np.ndarray:
    """Every non-special id: substitution noise may plant any code token."""
    return np.arange(vocab.n_specials, len(vocab), dtype=np.int64)


def run_stage(params, mcfg: ModelConfig, tcfg: TrainConfig, data, vocab: BpeVocab,
              log_path=None, ckpt_dir=None):
    """Stages "init" and "augment". Returns (params, [LossReport])."""
    if tcfg.stage not in ("init", "augment"):
        raise ValueError(f"run_stage handles init/augment, got {tcfg.stage!r}")
    missing = [l for l in tcfg.roster if l not in data or not data[l]]
    if missing:
        raise ValueError(f"no data for roster languages: {missing}")

    rng = np.random.default_rng(np.random.SeedSequence([tcfg.seed, _STAGE_CODES[tcfg.stage]]))
    opt = Adam(params, lr=tcfg.lr, beta1=tcfg.adam_beta1, beta2=tcfg.adam_beta2,
               eps=tcfg.adam_eps)
    log = _ReportLog(log_path)
    reports: list[LossReport] = []
    use_structure = mcfg.use_syntax
    sub_pool = _substitution_pool(vocab)
    try:
        for step in range(tcfg.steps):
            lang = tcfg.roster[step % len(tcfg.roster)]
            rows = _sample_rows(data, lang, tcfg.batch_size, rng)
            tag = vocab.tag_id(lang)
            tags = [tag] * len(rows)
            labels = [r.label for r in rows]

            noised = [corrupt(r.encoded, r.structure, tcfg.noise, rng, sub_pool)
                      for r in rows]
            dae_batch = build_enc_batch(
                [(ne.noisy_ids, ne.noisy_dist, ne.noisy_depth) for ne in noised],
                tags, labels, mcfg.sigma, use_structure, tcfg.probe_target)
            y_in, y_tgt, w = build_dec_batch([ne.clean_ids for ne in noised], tags)

            if tcfg.stage == "init":
                masked = [mask_for_prediction(r.ids, tcfg.mask_ratio, vocab, rng) for r in rows]
                cm_batch = CmlmBatch(
                    enc=build_enc_batch(
                        [(mi, r.structure.dist_sub, r.structure.depth_sub)
                         for (mi, _), r in zip(masked, rows)],
                        tags, labels, mcfg.sigma, use_structure, tcfg.probe_target),
                    targets=_pad_targets([r.ids for r in rows], cm_n := 1 + max(r.ids.size for r in rows)),
                    weights=_pad_weights([sel for _, sel in masked], cm_n),
                )
                l_cmlm = cmlm_loss(params, mcfg, cm_batch)
                l_dae, _ = dae_loss(params, mcfg, dae_batch, y_in, y_tgt, w)
                total = T.add(l_cmlm, l_dae)
                report = LossReport(step=step, total=float(total.data),
                                    L_CMLM=float(l_cmlm.data), L_DAE=float(l_dae.data))
            else:
                alpha = schedule_weights(step, tcfg.alpha)
                beta = schedule_weights(step, tcfg.beta)
                l_dae, enc_out = dae_loss(params, mcfg, dae_batch, y_in, y_tgt, w)
                total = l_dae
                report = LossReport(step=step, total=0.0, L_DAE=float(l_dae.data),
                                    alpha=alpha, beta=beta)
                if use_structure:
                    l_dis, l_depth = syntax_aux_loss(
                        params, enc_out.gat_states, dae_batch.dist_target,
                        dae_batch.depth_target, dae_batch.valid)
                    total = T.add(total, T.scalar_mul(T.add(l_dis, l_depth), alpha))
                    report.L_dis = float(l_dis.data)
                    report.L_depth = float(l_depth.data)
                if mcfg.use_domain_head:
                    l_dom = domain_loss(params, enc_out.pooled,
                                        dae_batch.labels, tcfg.grl_lambda)
                    total = T.add(total, T.scalar_mul(l_dom, beta))
                    report.L_domain = float(l_dom.data)
                report.total = float(total.data)

            T.backward(total)
            opt.step()
            reports.append(report)
            log.emit(report)
            _maybe_checkpoint(step, tcfg, params, mcfg, ckpt_dir)
    finally:
        log.close()
    return params, reports


def _pad_targets(ids_list, n):
    out = np.full((len(ids_list), n), PAD, dtype=np.int64)
    for i, ids in enumerate(ids_list):
        out[i, 1:1 + ids.size] = ids
    return out


def _pad_weights(sel_list, n):
    out = np.zeros((len(sel_list), n), dtype=np.float32)
    for i, sel in enumerate(sel_list):
        out[i, 1:1 + sel.size] = sel.astype(np.float32)
    return out


def pseudo_source(gen_ids: list[int], tgt_lang: str, vocab: BpeVocab):
    """Turn generated ids into an encoder input for the back-translation
    step: parse the decoded text when possible (canonical re-encode with
    real structure), otherwise fall back to the raw non-special ids with a
    permissive mask."""
    kept = [i for i in gen_ids if not vocab.is_special(i)]
    if not kept:
        return np.array([UNK], dtype=np.int64), None, None
    text = bpe.decode(kept, vocab)
    try:
        _, tree = parse_with_tree(text, tgt_lang)
    except ParseError:
        return np.asarray(kept, dtype=np.int64), None, None
    encoded = bpe.encode(text, tgt_lang, vocab)
    structure = subtoken_structure(leaf_structure(tree), encoded.linking)
    return (np.asarray(encoded.ids, dtype=np.int64),
            structure.dist_sub, structure.depth_sub)


def run_backtranslation(params, mcfg: ModelConfig, tcfg: TrainConfig, data,
                        vocab: BpeVocab, log_path=None, ckpt_dir=None):
    """Stage "backtranslate". Returns (params, [LossReport])."""
    if tcfg.stage != "backtranslate":
        raise ValueError(f"run_backtranslation needs stage 'backtranslate', got {tcfg.stage!r}")
    missing = [l for l in tcfg.roster if l not in data or not data[l]]
    if missing:
        raise ValueError(f"no data for roster languages: {missing}")

    pairs = [(x, y) for x in tcfg.roster for y in tcfg.roster if x != y]
    rng = np.random.default_rng(np.random.SeedSequence([tcfg.seed, _STAGE_CODES["backtranslate"]]))
    opt = Adam(params, lr=tcfg.lr, beta1=tcfg.adam_beta1, beta2=tcfg.adam_beta2,
               eps=tcfg.adam_eps)
    log = _ReportLog(log_path)
    reports: list[LossReport] = []
    use_structure = mcfg.use_syntax
    sub_pool = _substitution_pool(vocab)
    try:
        for step in range(tcfg.steps):
            src_lang, tgt_lang = pairs[step % len(pairs)]
            rows = _sample_rows(data, src_lang, tcfg.batch_size, rng)
            src_tags = [vocab.tag_id(src_lang)] * len(rows)
            labels = [r.label for r in rows]

            # (a) pseudo-translate, gradient-free
            src_batch = build_enc_batch(
                [(r.ids, r.structure.dist_sub, r.structure.depth_sub) for r in rows],
                src_tags, labels, mcfg.sigma, use_structure, tcfg.probe_target)
            max_src = max(r.ids.size for r in rows)
            cap = min(mcfg.max_len - 2, int(1.5 * max_src) + 12)
            with T.no_grad():
                enc_src = encode(params, mcfg, src_batch.ids, src_batch.pad_add,
                                 src_batch.dep_add, src_batch.pool_w)
                results = generate(params, mcfg, enc_src.states.data, src_batch.pad_add,
                                   vocab.tag_id(tgt_lang), EOS, beam=1, max_steps=cap)

            # (b) structure for the pseudo-translations
            tgt_rows = [pseudo_source(res.ids, tgt_lang, vocab) for res in results]

            # (c) train translating the pseudo-translation back to the source
            tgt_tags = [vocab.tag_id(tgt_lang)] * len(rows)
            bt_batch = build_enc_batch(tgt_rows, tgt_tags, labels, mcfg.sigma,
                                       use_structure, tcfg.probe_target)
            y_in, y_tgt, w = build_dec_batch([r.ids for r in rows], src_tags)
            loss, _ = dae_loss(params, mcfg, bt_batch, y_in, y_tgt, w)
            report = LossReport(step=step, total=float(loss.data),
                                L_BT=float(loss.data),
                                pair=f"{src_lang}->{tgt_lang}")

            # (d) denoising anchor on the same source batch: without it the
            # generate/reconstruct loop drifts toward content-free outputs
            # that the reverse step cannot pin back to the input.
            total = loss
            if tcfg.bt_dae_weight > 0:
                noised = [corrupt(r.encoded, r.structure, tcfg.noise, rng, sub_pool)
                          for r in rows]
                anchor_batch = build_enc_batch(
                    [(ne.noisy_ids, ne.noisy_dist, ne.noisy_depth) for ne in noised],
                    src_tags, labels, mcfg.sigma, use_structure, tcfg.probe_target)
                ay_in, ay_tgt, aw = build_dec_batch([ne.clean_ids for ne in noised], src_tags)
                l_anchor, _ = dae_loss(params, mcfg, anchor_batch, ay_in, ay_tgt, aw)
                total = T.add(total, T.scalar_mul(l_anchor, tcfg.bt_dae_weight))
                report.L_DAE = float(l_anchor.data)
                report.total = float(total.data)

            T.backward(total)
            opt.step()
            reports.append(report)
            log.emit(report)
            _maybe_checkpoint(step, tcfg, params, mcfg, ckpt_dir)
    finally:
        log.close()
    return params, reports
