"""Metric oracles, verdict partitions, feature export, and the ablation table."""

import json
import math

import numpy as np
import pytest

from synglot.bpe import EmptyCorpus, train_bpe
from synglot.evaluate import (
    ABLATION_VARIANTS,
    EvalConfig,
    StagePlan,
    ablation_report,
    bleu4,
    computational_accuracy,
    evaluate_pair,
    exact_match,
    export_features,
    format_ablation_table,
    format_report_table,
    linear_probe_accuracy,
    tokenize,
    translate_snippets,
    variant_model_config,
)
from synglot.model import ModelConfig, init_params
from synglot.toylang import (
    Assign,
    BinOp,
    IntLit,
    IrProgram,
    Return,
    Var,
    While,
    interpret,
    parse,
    render,
)
from synglot.toylang.datasets import gen_corpus, gen_eval_set, read_jsonl
from synglot.toylang.sampler import SizeSpec
from synglot.training import NoiseSpec, Schedule, TrainConfig, prepare_corpus


@pytest.fixture(scope="module")
def small_world(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("evalworld")
    size = SizeSpec(max_stmts=2, max_expr_depth=1, max_params=2)
    paths = []
    for lang in ("alpha", "beta"):
        p = tmp / f"{lang}.jsonl"
        gen_corpus(seed=11, n=30, lang=lang, out_path=p, size=size)
        paths.append(p)
    ev_path = tmp / "eval.jsonl"
    gen_eval_set(seed=501, n=4, src_lang="alpha", tgt_lang="beta",
                 tests_per_fn=3, out_path=ev_path, size=size)
    vocab = train_bpe(paths, vocab_size=160)
    data = prepare_corpus([r for p in paths for r in read_jsonl(p)], vocab)
    eval_set = read_jsonl(ev_path)
    cfg = ModelConfig(
        n_layers=1, n_heads=2, head_dim=8, d_model=16, ffn_dim=32,
        gat_heads=1, gat_head_dim=8, gat_biased_heads_per_layer=1,
        sigma=10, vocab_size=len(vocab.id_to_token), max_len=64, probe_rank=4,
    )
    return vocab, data, eval_set, cfg


# ---------------------------------------------------------------------------
# BLEU


def oracle_bleu(hyps, refs):
    """Brute-force corpus BLEU: count clipped n-grams by list scanning."""
    clipped = [0] * 4
    total = [0] * 4
    for n in range(1, 5):
        for h, r in zip(hyps, refs):
            hgrams = [tuple(h[i:i + n]) for i in range(len(h) - n + 1)]
            rgrams = [tuple(r[i:i + n]) for i in range(len(r) - n + 1)]
            for g in set(hgrams):
                clipped[n - 1] += min(hgrams.count(g), rgrams.count(g))
            total[n - 1] += len(hgrams)
    if any(c == 0 or t == 0 for c, t in zip(clipped, total)):
        return 0.0
    hyp_len = sum(map(len, hyps))
    ref_len = sum(map(len, refs))
    bp = min(1.0, math.exp(1.0 - ref_len / hyp_len))
    return 100.0 * bp * math.exp(sum(0.25 * math.log(c / t)
                                     for c, t in zip(clipped, total)))


def test_bleu_identity_is_100():
    corpus = [["a", "b", "c", "d", "e"], ["x", "y", "z", "w"]]
    assert bleu4(corpus, corpus) == 100.0


def test_bleu_disjoint_is_zero():
    assert bleu4([["a", "b", "c", "d"]], [["p", "q", "r", "s"]]) == 0.0


def test_bleu_against_brute_force_oracle():
    rng = np.random.default_rng(42)
    for trial in range(50):
        n_pairs = int(rng.integers(2, 9))
        hyps, refs = [], []
        for _ in range(n_pairs):
            hyps.append([int(t) for t in rng.integers(0, 6, size=rng.integers(1, 13))])
            refs.append([int(t) for t in rng.integers(0, 6, size=rng.integers(4, 13))])
        got = bleu4(hyps, refs)
        want = oracle_bleu(hyps, refs)
        assert got == pytest.approx(want, abs=1e-9), f"trial {trial}"


def test_bleu_permutation_invariance():
    rng = np.random.default_rng(7)
    hyps = [[int(t) for t in rng.integers(0, 5, size=10)] for _ in range(6)]
    refs = [[int(t) for t in rng.integers(0, 5, size=10)] for _ in range(6)]
    base = bleu4(hyps, refs)
    order = rng.permutation(6)
    again = bleu4([hyps[i] for i in order], [refs[i] for i in order])
    assert again == pytest.approx(base, abs=1e-12)


def test_bleu_errors():
    with pytest.raises(EmptyCorpus):
        bleu4([], [])
    with pytest.raises(ValueError):
        bleu4([["a"]], [])
    with pytest.raises(ValueError):
        EvalConfig(bleu_weights=(0.5, 0.5, 0.5, 0.5))
    with pytest.raises(ValueError):
        EvalConfig(bleu_weights=(0.5, 0.5))


def test_sentence_bleu_flag():
    corpus = [["a", "b", "c", "d", "e"]] * 3
    cfg = EvalConfig(sentence_bleu=True)
    assert bleu4(corpus, corpus, cfg) == 100.0
    mixed = bleu4([["a", "b", "c", "d"], ["z", "z", "z", "z"]],
                  [["a", "b", "c", "d"], ["a", "b", "c", "d"]], cfg)
    assert 0.0 < mixed < 100.0  # smoothing keeps the zero-overlap row finite


# ---------------------------------------------------------------------------
# exact match


def test_exact_match_identity_and_arithmetic():
    refs = [[str(i), "x"] for i in range(10)]
    assert exact_match(refs, refs) == 100.0
    hyps = [list(r) for r in refs]
    hyps[3][1] = "y"
    assert exact_match(hyps, refs) == 90.0


def test_exact_match_ignores_whitespace_via_tokenization():
    a = "def f(a):\n  return (a + 1)\nend\n"
    b = "def f( a )  :\n      return ( a   + 1 )\nend\n"
    assert tokenize(a) == tokenize(b)
    assert exact_match([tokenize(a)], [tokenize(b)]) == 100.0


def test_exact_match_empty_corpus():
    with pytest.raises(EmptyCorpus):
        exact_match([], [])


# ---------------------------------------------------------------------------
# computational accuracy


def make_record(body, rec_id="r0", src_lang="alpha", tgt_lang="beta", inputs=(1, 5)):
    prog = IrProgram(name="f", params=("a",), body=body)
    code_src = render(prog, src_lang)
    tests = [{"inputs": [x], "expected": interpret(parse(code_src, src_lang), [x])}
             for x in inputs]
    return {
        "id": rec_id, "src_lang": src_lang, "code_src": code_src,
        "tgt_lang": tgt_lang, "code_tgt": render(prog, tgt_lang), "tests": tests,
    }


def test_ca_identity_translation_is_correct():
    rec = make_record((Return(BinOp("+", Var("a"), IntLit(1))),))
    report = computational_accuracy([rec["code_tgt"]], [rec])
    assert report.counts["correct"] == 1
    assert report.accuracy == 100.0


def test_ca_constant_translation_is_wrong_output():
    rec = make_record((Return(BinOp("*", Var("a"), IntLit(3))),), inputs=(1, 2))
    constant = render(IrProgram(name="f", params=("a",), body=(Return(IntLit(3)),)), "beta")
    report = computational_accuracy([constant], [rec])
    assert report.counts["wrong-output"] == 1


def test_ca_semantic_equivalence_beats_exact_match():
    rec = make_record((Return(BinOp("+", Var("a"), Var("a"))),), inputs=(0, 3, -4))
    doubled = render(IrProgram(name="f", params=("a",),
                               body=(Return(BinOp("*", IntLit(2), Var("a"))),)), "beta")
    report = computational_accuracy([doubled], [rec])
    assert report.counts["correct"] == 1
    em = exact_match([tokenize(doubled)], [tokenize(rec["code_tgt"])])
    assert em == 0.0


def test_ca_verdict_partition_is_exhaustive_and_exclusive():
    recs = [make_record((Return(Var("a")),), rec_id=f"r{i}") for i in range(5)]
    translations = [
        recs[0]["code_tgt"],                                   # correct
        "func f(a) { return",                                  # parse-fail
        render(IrProgram(name="f", params=("a",),
                         body=(Return(BinOp("/", Var("a"), IntLit(0))),)), "beta"),
        render(IrProgram(name="f", params=("a",), body=(
            While(IntLit(1), (Assign("x", IntLit(1)),)), Return(Var("a")))), "beta"),
        render(IrProgram(name="f", params=("a",), body=(Return(IntLit(99)),)), "beta"),
    ]
    report = computational_accuracy(translations, recs, step_limit=200)
    assert report.counts == {
        "correct": 1, "parse-fail": 1, "runtime-error": 1,
        "nonterminating": 1, "wrong-output": 1,
    }
    assert sum(report.counts.values()) == report.total == 5
    assert report.parse_rate == 80.0
    assert [v["id"] for v in report.verdicts] == [f"r{i}" for i in range(5)]


def test_ca_arity_mismatch_is_runtime_error():
    # Parses fine, but declares two parameters where the source had one, so
    # the record's single-input tests cannot even be applied.
    rec = make_record((Return(Var("a")),))
    two_param = render(IrProgram(name="f", params=("a", "b"),
                                 body=(Return(Var("a")),)), "beta")
    report = computational_accuracy([two_param], [rec])
    assert report.counts["runtime-error"] == 1
    assert report.parse_rate == 100.0


def test_ca_order_independence():
    recs = [make_record((Return(Var("a")),), rec_id=f"q{i}") for i in range(4)]
    translations = [recs[0]["code_tgt"], "garbage", recs[2]["code_tgt"], "zzz ("]
    fwd = computational_accuracy(translations, recs)
    rev = computational_accuracy(translations[::-1], recs[::-1])
    assert fwd.counts == rev.counts
    assert fwd.verdicts == rev.verdicts  # both sorted by record id


def test_ca_requires_tests():
    rec = make_record((Return(Var("a")),))
    rec["tests"] = []
    with pytest.raises(ValueError, match="no tests"):
        computational_accuracy([rec["code_tgt"]], [rec])


def test_em_100_implies_ca_100(small_world):
    _, _, eval_set, _ = small_world
    refs = [r["code_tgt"] for r in eval_set]
    assert exact_match([tokenize(r) for r in refs],
                       [tokenize(r["code_tgt"]) for r in eval_set]) == 100.0
    assert computational_accuracy(refs, eval_set).accuracy == 100.0


# ---------------------------------------------------------------------------
# translation plumbing


def test_translate_snippets_shapes_and_determinism(small_world):
    vocab, _, eval_set, cfg = small_world
    params = init_params(cfg, 3)
    codes = [r["code_src"] for r in eval_set]
    out1 = translate_snippets(params, cfg, vocab, codes, "alpha", "beta", beam=1)
    out2 = translate_snippets(params, cfg, vocab, codes, "alpha", "beta", beam=1)
    assert len(out1) == len(codes)
    assert out1 == out2
    assert all(isinstance(s, str) for s in out1)


def test_evaluate_pair_report_is_consistent(small_world):
    vocab, _, eval_set, cfg = small_world
    params = init_params(cfg, 4)
    report = evaluate_pair(params, cfg, vocab, eval_set, EvalConfig(beam=1))
    assert report.pair == "alpha->beta"
    assert report.n == len(eval_set)
    assert sum(report.counts.values()) == report.n
    assert 0.0 <= report.ca <= 100.0
    doc = report.to_json()
    assert set(doc) == {"pair", "n", "bleu4", "exact_match",
                        "computational_accuracy", "parse_rate", "counts", "verdicts"}
    table = format_report_table([report])
    assert "alpha->beta" in table


# ---------------------------------------------------------------------------
# feature export and probe


def test_export_features_shapes_and_purity(small_world, tmp_path):
    vocab, _, _, cfg = small_world
    params = init_params(cfg, 5)
    records = [
        {"id": "c0", "lang": "alpha", "code": "def f(a):\n  return a\nend\n"},
        {"id": "c1", "lang": "alpha", "code": "def f(a):\n  return a\nend\n"},
        {"id": "c2", "lang": "beta", "code": "func f(a) {\n  return (a + 1);\n}\n"},
    ]
    out = tmp_path / "features.jsonl"
    rows = export_features(params, cfg, vocab, records, out_path=out)
    assert [r["id"] for r in rows] == ["c0", "c1", "c2"]
    assert all(len(r["vector"]) == cfg.d_model for r in rows)
    assert rows[0]["vector"] == rows[1]["vector"]  # identical inputs
    again = export_features(params, cfg, vocab, records)
    assert rows == again
    lines = [json.loads(l) for l in out.read_text().splitlines()]
    assert lines == rows


def test_linear_probe_separable_and_chance():
    rng = np.random.default_rng(0)
    n = 300
    labels = np.repeat([0, 1], n // 2)
    separated = rng.normal(size=(n, 8)) + labels[:, None] * 6.0
    assert linear_probe_accuracy(separated, labels, seed=1) == 100.0
    shuffled = labels.copy()
    rng.shuffle(shuffled)
    near_chance = linear_probe_accuracy(rng.normal(size=(n, 8)), shuffled, seed=1)
    assert near_chance <= 70.0
    repeat = linear_probe_accuracy(separated, labels, seed=1)
    assert repeat == 100.0


# ---------------------------------------------------------------------------
# ablation harness


def test_variant_model_configs():
    base = ModelConfig()
    assert variant_model_config(base, "full") is base
    no_dom = variant_model_config(base, "no_domain")
    assert not no_dom.use_domain_head
    no_syn = variant_model_config(base, "no_syntax")
    assert not no_syn.use_syntax
    with pytest.raises(ValueError):
        variant_model_config(base, "no_everything")


def test_no_syntax_variant_has_no_gat_parameters():
    cfg = variant_model_config(ModelConfig(), "no_syntax")
    names = init_params(cfg, 0).keys()
    assert not [n for n in names if n.startswith(("gat/", "bias/", "probe/"))]


def micro_plan():
    noise = NoiseSpec(0.1, 0.1, 3)
    sched = Schedule(0.05, 0.01, 100)
    return StagePlan(
        init=TrainConfig(stage="init", steps=2, batch_size=2, noise=noise),
        augment=TrainConfig(stage="augment", steps=2, batch_size=2, noise=noise,
                            alpha=sched, beta=sched),
        backtranslate=TrainConfig(stage="backtranslate", steps=2, batch_size=2,
                                  noise=noise),
    )


def test_ablation_report_shape_and_determinism(small_world):
    vocab, data, eval_set, cfg = small_world
    ecfg = EvalConfig(beam=1)
    rep1 = ablation_report(cfg, micro_plan(), data, vocab, eval_set, seeds=[0], config=ecfg)
    rep2 = ablation_report(cfg, micro_plan(), data, vocab, eval_set, seeds=[0], config=ecfg)
    assert json.dumps(rep1, sort_keys=True) == json.dumps(rep2, sort_keys=True)
    assert set(rep1["variants"]) == set(ABLATION_VARIANTS)
    for cols in rep1["variants"].values():
        assert set(cols) == {"bleu4", "exact_match", "computational_accuracy"}
        for cell in cols.values():
            assert cell["half_range"] == 0.0  # single seed
    table = format_ablation_table(rep1)
    for variant in ABLATION_VARIANTS:
        assert variant in table
