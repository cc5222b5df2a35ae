"""Translation scoring and analysis.

Corpus-level BLEU-4 over clipped n-gram counts, exact match on lexer
tokens, computational accuracy against interpreter-checked unit tests,
mean-pooled encoder feature export with a linear language probe, and the
three-variant ablation harness.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, replace

import numpy as np

import synglot.bpe as bpe
import synglot.tensor as T
from synglot.bpe import EOS, BpeVocab, EmptyCorpus
from synglot.model import ModelConfig, encode, generate, init_params
from synglot.toylang import (
    NONTERMINATING,
    ParseError,
    ToyRuntimeError,
    interpret,
    lex,
    parse,
)
from synglot.training import (
    TrainConfig,
    build_enc_batch,
    run_backtranslation,
    run_stage,
)

VERDICTS = ("correct", "parse-fail", "runtime-error", "nonterminating", "wrong-output")


@dataclass(frozen=True)
class EvalConfig:
    bleu_max_n: int = 4
    bleu_weights: tuple[float, ...] = (0.25, 0.25, 0.25, 0.25)
    beam: int = 5
    max_steps: int | None = None
    ca_step_limit: int = 10_000
    em_normalization: str = "lexer-tokens"
    sentence_bleu: bool = False   # add-one smoothed, sentence-averaged

    def __post_init__(self):
        if len(self.bleu_weights) != self.bleu_max_n:
            raise ValueError("need one BLEU weight per n-gram order")
        if abs(sum(self.bleu_weights) - 1.0) > 1e-9:
            raise ValueError("BLEU weights must sum to 1")
        if self.beam < 1 or self.ca_step_limit < 1:
            raise ValueError("beam and ca_step_limit must be >= 1")
        if self.em_normalization != "lexer-tokens":
            raise ValueError("only lexer-token comparison is supported")


def tokenize(code: str) -> list[str]:
    """Lexer-token view of a program, the unit of BLEU and exact match."""
    return [t.text for t in lex(code)]


# ---------------------------------------------------------------------------
# BLEU and exact match


def _ngram_counts(seq, n: int) -> Counter:
    return Counter(tuple(seq[i:i + n]) for i in range(len(seq) - n + 1))


def bleu4(hypotheses, references, config: EvalConfig | None = None) -> float:
    """Corpus BLEU in [0, 100] over token sequences.

    Clipped n-gram counts and lengths pool over the whole corpus before the
    precision ratios are taken; if any pooled precision is zero the score
    is zero. The sentence_bleu flag switches to an add-one smoothed,
    sentence-averaged variant instead.
    """
    cfg = config or EvalConfig()
    if len(hypotheses) != len(references):
        raise ValueError("hypothesis and reference counts differ")
    if not hypotheses:
        raise EmptyCorpus("nothing to score")
    if cfg.sentence_bleu:
        scores = [_sentence_bleu(h, r, cfg) for h, r in zip(hypotheses, references)]
        return float(np.mean(scores))

    orders = range(1, cfg.bleu_max_n + 1)
    clipped = dict.fromkeys(orders, 0)
    total = dict.fromkeys(orders, 0)
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in orders:
            counts = _ngram_counts(hyp, n)
            ref_counts = _ngram_counts(ref, n)
            clipped[n] += sum(min(c, ref_counts[g]) for g, c in counts.items())
            total[n] += max(len(hyp) - n + 1, 0)
    if any(total[n] == 0 or clipped[n] == 0 for n in orders):
        return 0.0
    log_p = sum(w * math.log(clipped[n] / total[n])
                for w, n in zip(cfg.bleu_weights, orders))
    brevity = min(1.0, math.exp(1.0 - ref_len / hyp_len))
    return 100.0 * brevity * math.exp(log_p)


def _sentence_bleu(hyp, ref, cfg: EvalConfig) -> float:
    log_p = 0.0
    for w, n in zip(cfg.bleu_weights, range(1, cfg.bleu_max_n + 1)):
        counts = _ngram_counts(hyp, n)
        ref_counts = _ngram_counts(ref, n)
        clipped = sum(min(c, ref_counts[g]) for g, c in counts.items())
        total = max(len(hyp) - n + 1, 0)
        log_p += w * math.log((clipped + 1) / (total + 1))
    if len(hyp) == 0:
        return 0.0
    brevity = min(1.0, math.exp(1.0 - len(ref) / len(hyp)))
    return 100.0 * brevity * math.exp(log_p)


def exact_match(hypotheses, references) -> float:
    """Percentage of hypotheses whose token sequence equals the reference."""
    if len(hypotheses) != len(references):
        raise ValueError("hypothesis and reference counts differ")
    if not hypotheses:
        raise EmptyCorpus("nothing to score")
    hits = sum(list(h) == list(r) for h, r in zip(hypotheses, references))
    return 100.0 * hits / len(hypotheses)


# ---------------------------------------------------------------------------
# computational accuracy


@dataclass
class CaBreakdown:
    total: int
    counts: dict[str, int]
    verdicts: list[dict]   # [{"id": ..., "verdict": ...}] sorted by id

    @property
    def accuracy(self) -> float:
        return 100.0 * self.counts["correct"] / self.total if self.total else 0.0

    @property
    def parse_rate(self) -> float:
        """Fraction of translations that parse in the target language."""
        if not self.total:
            return 0.0
        return 100.0 * (self.total - self.counts["parse-fail"]) / self.total


def _verdict(translation: str, record: dict, step_limit: int) -> str:
    try:
        ir = parse(translation, record["tgt_lang"])
    except ParseError:
        return "parse-fail"
    for test in record["tests"]:
        try:
            got = interpret(ir, test["inputs"], step_limit=step_limit)
        except (ToyRuntimeError, ValueError):
            # ValueError: the translation parsed but declares a different
            # arity than the source, so the tests cannot even be applied.
            return "runtime-error"
        if got is NONTERMINATING:
            return "nonterminating"
        if got != test["expected"]:
            return "wrong-output"
    return "correct"


def computational_accuracy(translations, eval_set, step_limit: int = 10_000) -> CaBreakdown:
    """Interpreter-checked correctness: a translation is correct only when
    it reproduces the expected output on every test of its record. Failure
    modes are verdicts, never exceptions."""
    if len(translations) != len(eval_set):
        raise ValueError("translation and record counts differ")
    for rec in eval_set:
        if not rec["tests"]:
            raise ValueError(f"record {rec['id']} has no tests")
    rows = sorted(zip(translations, eval_set), key=lambda tr: tr[1]["id"])
    counts = dict.fromkeys(VERDICTS, 0)
    verdicts = []
    for text, rec in rows:
        v = _verdict(text, rec, step_limit)
        counts[v] += 1
        verdicts.append({"id": rec["id"], "verdict": v})
    return CaBreakdown(total=len(rows), counts=counts, verdicts=verdicts)


# ---------------------------------------------------------------------------
# translation and pair reports


def _prep_source(code: str, lang: str, vocab: BpeVocab):
    from synglot.syntax import leaf_structure, subtoken_structure
    from synglot.toylang import parse_with_tree

    _, tree = parse_with_tree(code, lang)
    encoded = bpe.encode(code, lang, vocab)
    structure = subtoken_structure(leaf_structure(tree), encoded.linking)
    return np.asarray(encoded.ids, dtype=np.int64), structure


def translate_snippets(params, mcfg: ModelConfig, vocab: BpeVocab, codes,
                       src_lang: str, tgt_lang: str, beam: int = 5,
                       max_steps: int | None = None, batch_size: int = 16) -> list[str]:
    """Translate source programs; returns one decoded program per input."""
    from synglot.training import LANG_LABELS

    out: list[str] = []
    tgt_tag = vocab.tag_id(tgt_lang)
    src_tag = vocab.tag_id(src_lang)
    label = LANG_LABELS[src_lang]
    for at in range(0, len(codes), batch_size):
        chunk = codes[at:at + batch_size]
        rows = []
        for code in chunk:
            ids, structure = _prep_source(code, src_lang, vocab)
            rows.append((ids, structure.dist_sub, structure.depth_sub))
        batch = build_enc_batch(rows, [src_tag] * len(rows), [label] * len(rows),
                                mcfg.sigma, mcfg.use_syntax)
        cap = max_steps
        if cap is None:
            cap = int(1.5 * max(r[0].size for r in rows)) + 12
        with T.no_grad():
            enc = encode(params, mcfg, batch.ids, batch.pad_add, batch.dep_add,
                         batch.pool_w)
            results = generate(params, mcfg, enc.states.data, batch.pad_add,
                               tgt_tag, EOS, beam=beam, max_steps=cap)
        for res in results:
            kept = [i for i in res.ids if not vocab.is_special(i)]
            out.append(bpe.decode(kept, vocab) if kept else "")
    return out


@dataclass
class EvalReport:
    pair: str
    n: int
    bleu: float
    em: float
    ca: float
    parse_rate: float
    counts: dict[str, int]
    verdicts: list[dict]

    def to_json(self) -> dict:
        return {
            "pair": self.pair, "n": self.n,
            "bleu4": round(self.bleu, 4), "exact_match": round(self.em, 4),
            "computational_accuracy": round(self.ca, 4),
            "parse_rate": round(self.parse_rate, 4),
            "counts": dict(self.counts), "verdicts": list(self.verdicts),
        }


def evaluate_pair(params, mcfg: ModelConfig, vocab: BpeVocab, eval_set,
                  config: EvalConfig | None = None) -> EvalReport:
    """Translate every record of one eval set and score all three metrics."""
    cfg = config or EvalConfig()
    if not eval_set:
        raise EmptyCorpus("eval set is empty")
    src, tgt = eval_set[0]["src_lang"], eval_set[0]["tgt_lang"]
    hyps = translate_snippets(params, mcfg, vocab, [r["code_src"] for r in eval_set],
                              src, tgt, beam=cfg.beam, max_steps=cfg.max_steps)
    hyp_tokens = [_tokens_or_empty(h) for h in hyps]
    ref_tokens = [tokenize(r["code_tgt"]) for r in eval_set]
    ca = computational_accuracy(hyps, eval_set, step_limit=cfg.ca_step_limit)
    return EvalReport(
        pair=f"{src}->{tgt}", n=len(eval_set),
        bleu=bleu4(hyp_tokens, ref_tokens, cfg),
        em=exact_match(hyp_tokens, ref_tokens),
        ca=ca.accuracy, parse_rate=ca.parse_rate,
        counts=ca.counts, verdicts=ca.verdicts,
    )


def format_report_table(reports: list[EvalReport]) -> str:
    header = f"{'pair':<14} {'n':>4} {'BLEU-4':>8} {'EM':>7} {'CA':>7} {'parse':>7}"
    lines = [header, "-" * len(header)]
    for r in reports:
        lines.append(f"{r.pair:<14} {r.n:>4} {r.bleu:>8.2f} {r.em:>7.2f} "
                     f"{r.ca:>7.2f} {r.parse_rate:>7.2f}")
    return "\n".join(lines)


def _tokens_or_empty(code: str) -> list[str]:
    try:
        return tokenize(code)
    except ParseError:
        return []


# ---------------------------------------------------------------------------
# feature export and the language probe


def export_features(params, mcfg: ModelConfig, vocab: BpeVocab, records,
                    out_path=None, batch_size: int = 32) -> list[dict]:
    """Mean-pooled encoder vectors, one {id, lang, vector} row per record."""
    from synglot.training import LANG_LABELS

    rows_out: list[dict] = []
    for at in range(0, len(records), batch_size):
        chunk = records[at:at + batch_size]
        rows, tags, labels = [], [], []
        for rec in chunk:
            ids, structure = _prep_source(rec["code"], rec["lang"], vocab)
            rows.append((ids, structure.dist_sub, structure.depth_sub))
            tags.append(vocab.tag_id(rec["lang"]))
            labels.append(LANG_LABELS[rec["lang"]])
        batch = build_enc_batch(rows, tags, labels, mcfg.sigma, mcfg.use_syntax)
        with T.no_grad():
            enc = encode(params, mcfg, batch.ids, batch.pad_add, batch.dep_add,
                         batch.pool_w)
        for rec, vec in zip(chunk, enc.pooled.data):
            rows_out.append({"id": rec["id"], "lang": rec["lang"],
                             "vector": [float(x) for x in vec]})
    if out_path is not None:
        with open(out_path, "w", encoding="utf-8") as fh:
            for row in rows_out:
                fh.write(json.dumps(row) + "\n")
    return rows_out


def linear_probe_accuracy(features: np.ndarray, labels: np.ndarray,
                          train_frac: float = 0.8, seed: int = 0,
                          iters: int = 800, lr: float = 0.5) -> float:
    """Held-out accuracy of a fresh multinomial logistic probe, percent.

    Full-batch gradient descent in float64 on standardized features; the
    split and the fit are deterministic given the seed.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    classes = np.unique(y)
    rng = np.random.default_rng(seed)
    order = rng.permutation(x.shape[0])
    cut = int(round(train_frac * x.shape[0]))
    tr, te = order[:cut], order[cut:]
    if tr.size == 0 or te.size == 0:
        raise ValueError("both probe splits must be non-empty")

    mean = x[tr].mean(axis=0)
    std = x[tr].std(axis=0) + 1e-8
    xin = np.hstack([(x - mean) / std, np.ones((x.shape[0], 1))])
    remap = {c: i for i, c in enumerate(classes)}
    yy = np.array([remap[c] for c in y])
    w = np.zeros((xin.shape[1], classes.size))
    onehot = np.eye(classes.size)[yy[tr]]
    for _ in range(iters):
        z = xin[tr] @ w
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        w -= lr * xin[tr].T @ (p - onehot) / tr.size
    pred = np.argmax(xin[te] @ w, axis=1)
    return 100.0 * float((pred == yy[te]).mean())


# ---------------------------------------------------------------------------
# ablation harness


ABLATION_VARIANTS = ("full", "no_domain", "no_syntax")


def variant_model_config(base: ModelConfig, variant: str) -> ModelConfig:
    """"full" keeps everything; "no_domain" removes the discriminator;
    "no_syntax" removes the GAT stack, bias projections, and probes."""
    if variant == "full":
        return base
    if variant == "no_domain":
        return replace(base, use_domain_head=False)
    if variant == "no_syntax":
        return replace(base, gat_biased_heads_per_layer=0)
    raise ValueError(f"unknown ablation variant {variant!r}")


@dataclass(frozen=True)
class StagePlan:
    """Step budgets shared by the ablation variants."""

    init: TrainConfig
    augment: TrainConfig
    backtranslate: TrainConfig


def train_variant(variant: str, base_mcfg: ModelConfig, plan: StagePlan,
                  data, vocab: BpeVocab, seed: int):
    """Run all three stages for one ablation variant. Returns (params, mcfg)."""
    mcfg = variant_model_config(base_mcfg, variant)
    params = init_params(mcfg, seed)
    params, _ = run_stage(params, mcfg, replace(plan.init, seed=seed), data, vocab)
    params, _ = run_stage(params, mcfg, replace(plan.augment, seed=seed), data, vocab)
    params, _ = run_backtranslation(params, mcfg, replace(plan.backtranslate, seed=seed),
                                    data, vocab)
    return params, mcfg


def ablation_report(base_mcfg: ModelConfig, plan: StagePlan, data,
                    vocab: BpeVocab, eval_set, seeds,
                    config: EvalConfig | None = None) -> dict:
    """Train full / no_domain / no_syntax with identical seeds and budgets;
    report BLEU-4, EM, and CA per variant as mean and half-range."""
    cfg = config or EvalConfig()
    cells: dict[str, dict[str, list[float]]] = {}
    for variant in ABLATION_VARIANTS:
        scores = {"bleu4": [], "exact_match": [], "computational_accuracy": []}
        for seed in seeds:
            params, mcfg = train_variant(variant, base_mcfg, plan, data, vocab, seed)
            rep = evaluate_pair(params, mcfg, vocab, eval_set, cfg)
            scores["bleu4"].append(rep.bleu)
            scores["exact_match"].append(rep.em)
            scores["computational_accuracy"].append(rep.ca)
        cells[variant] = scores

    def cell(values):
        mean = float(np.mean(values))
        half_range = float((max(values) - min(values)) / 2)
        return {"mean": mean, "half_range": half_range, "values": list(values)}

    return {
        "pair": f"{eval_set[0]['src_lang']}->{eval_set[0]['tgt_lang']}",
        "seeds": list(seeds),
        "variants": {v: {m: cell(vals) for m, vals in scores.items()}
                     for v, scores in cells.items()},
    }


def format_ablation_table(report: dict) -> str:
    metrics = ("bleu4", "exact_match", "computational_accuracy")
    header = f"{'variant':<12}" + "".join(f"{m:>24}" for m in metrics)
    lines = [f"pair {report['pair']}  seeds {report['seeds']}", header,
             "-" * len(header)]
    for variant, cols in report["variants"].items():
        row = f"{variant:<12}"
        for m in metrics:
            c = cols[m]
            row += f"{c['mean']:>17.2f} ±{c['half_range']:<5.2f}"
        lines.append(row)
    return "\n".join(lines)
