"""Encoder/decoder model: shapes, masking laws, gradients, generation."""

import numpy as np
import pytest

import synglot.tensor as T
from synglot.model import (
    EncoderOutput,
    GenResult,
    ModelConfig,
    PrefixTooLong,
    _NumpyDecoder,
    additive_pad_mask,
    beam_generate,
    causal_mask,
    cast_params,
    cmlm_logits,
    count_params,
    decode_logits,
    discriminate_domain,
    encode,
    generate,
    greedy_generate,
    init_params,
    load_checkpoint,
    probe_predict,
    save_checkpoint,
)
from synglot.syntax import MASK_SENTINEL

PAD = 0


def tiny_config(**over):
    base = dict(
        n_layers=2, n_heads=2, head_dim=3, d_model=6, ffn_dim=8,
        gat_heads=1, gat_head_dim=4, gat_biased_heads_per_layer=1,
        sigma=10, vocab_size=23, max_len=24, n_langs=3, probe_rank=2,
    )
    base.update(over)
    return ModelConfig(**base)


def rng_batch(cfg, b=2, n=7, seed=3):
    """ids with a tag-ish first column, no pads except an explicit tail."""
    rng = np.random.default_rng(seed)
    ids = rng.integers(8, cfg.vocab_size, size=(b, n)).astype(np.int64)
    ids[:, 0] = 5
    pad_add = additive_pad_mask(ids, PAD)
    dep_add = np.zeros((b, 1, n, n), dtype=np.float32)
    pool = np.zeros((b, n), dtype=np.float64)
    pool[:, 1:] = 1.0 / (n - 1)
    return ids, pad_add, dep_add, pool


def randomize(params, seed=11, scale=0.1):
    """Overwrite every parameter (including zero-initialized heads) so
    generation tests see non-degenerate logits."""
    rng = np.random.default_rng(seed)
    for name in sorted(params):
        p = params[name]
        p.data = rng.normal(0.0, scale, size=p.shape).astype(p.dtype)
    return params


# ---------------------------------------------------------------------------
# configuration and initialization


def test_config_rejects_mismatched_width():
    with pytest.raises(ValueError, match="d_model"):
        ModelConfig(n_heads=4, head_dim=16, d_model=60)


def test_config_rejects_bad_biased_head_count():
    with pytest.raises(ValueError, match="gat_biased_heads_per_layer"):
        tiny_config(gat_biased_heads_per_layer=3)


def test_init_deterministic_and_seed_sensitive():
    cfg = tiny_config()
    a = init_params(cfg, 1)
    b = init_params(cfg, 1)
    c = init_params(cfg, 2)
    assert sorted(a) == sorted(b)
    for k in a:
        assert a[k].data.tobytes() == b[k].data.tobytes()
    assert any(a[k].data.tobytes() != c[k].data.tobytes() for k in a)


def test_init_zero_initialized_heads():
    params = init_params(tiny_config(), 0)
    for name in ("out/ffn/w2", "out/ffn/b2", "cmlm/w", "cmlm/b",
                 "bias/0/gq/0", "bias/0/gk/0", "dom/w", "dom/b"):
        assert not params[name].data.any(), name


def test_init_syntax_off_drops_gat_probe_and_bias_params():
    params = init_params(tiny_config(gat_biased_heads_per_layer=0), 0)
    assert not any(k.startswith(("gat/", "bias/", "probe/")) for k in params)


def test_init_domain_off_drops_discriminator():
    params = init_params(tiny_config(use_domain_head=False), 0)
    assert not any(k.startswith("dom/") for k in params)


def test_desk_default_config_is_consistent():
    cfg = ModelConfig()
    assert cfg.d_model == cfg.n_heads * cfg.head_dim == 64
    assert cfg.gat_dim == 16
    params = init_params(cfg, 0)
    assert count_params(params) > 0


# ---------------------------------------------------------------------------
# forward shapes and basic laws


def test_encode_shapes():
    cfg = tiny_config()
    params = init_params(cfg, 0)
    ids, pad_add, dep_add, pool = rng_batch(cfg)
    out = encode(params, cfg, ids, pad_add, dep_add, pool)
    assert out.states.shape == (2, 7, cfg.d_model)
    assert out.gat_states.shape == (2, 7, cfg.gat_dim)
    assert out.pooled.shape == (2, cfg.d_model)
    assert np.isfinite(out.states.data).all()


def test_encode_pooled_excludes_masked_positions():
    cfg = tiny_config()
    params = init_params(cfg, 0)
    ids, pad_add, dep_add, pool = rng_batch(cfg)
    out = encode(params, cfg, ids, pad_add, dep_add, pool)
    manual = (out.states.data * pool[:, :, None]).sum(axis=1)
    np.testing.assert_allclose(out.pooled.data, manual, rtol=1e-6)


def test_untrained_decoder_logits_are_exactly_zero():
    cfg = tiny_config()
    params = init_params(cfg, 0)
    ids, pad_add, dep_add, pool = rng_batch(cfg)
    enc = encode(params, cfg, ids, pad_add, dep_add, pool)
    y = np.array([[6, 9, 10], [6, 11, 12]], dtype=np.int64)
    logits = decode_logits(params, cfg, enc.states, pad_add, y)
    assert logits.shape == (2, 3, cfg.vocab_size)
    assert not logits.data.any()


def test_untrained_cmlm_logits_are_exactly_zero():
    cfg = tiny_config()
    params = init_params(cfg, 0)
    ids, pad_add, dep_add, pool = rng_batch(cfg)
    enc = encode(params, cfg, ids, pad_add, dep_add, pool)
    assert not cmlm_logits(params, enc.states).data.any()


def test_untrained_uniform_cross_entropy_is_log_vocab():
    cfg = tiny_config()
    params = init_params(cfg, 0)
    ids, pad_add, dep_add, pool = rng_batch(cfg)
    enc = encode(params, cfg, ids, pad_add, dep_add, pool)
    y = np.array([[6, 9, 10]], dtype=np.int64)
    logits = decode_logits(params, cfg, enc.states[0:1] if False else enc.states, pad_add, np.repeat(y, 2, axis=0))
    lsm = T.log_softmax(logits)
    ce = -float(lsm.data.mean(axis=None)) * 1.0
    # every logit is zero, so each log-probability is exactly -ln(vocab)
    np.testing.assert_allclose(ce, np.log(cfg.vocab_size), rtol=1e-6)


def test_probe_predict_shapes_and_nonnegativity():
    cfg = tiny_config()
    params = randomize(init_params(cfg, 0))
    ids, pad_add, dep_add, pool = rng_batch(cfg)
    enc = encode(params, cfg, ids, pad_add, dep_add, pool)
    dist_pred, depth_pred = probe_predict(params, enc.gat_states)
    assert dist_pred.shape == (2, 7, 7)
    assert depth_pred.shape == (2, 7)
    assert (dist_pred.data >= 0).all() and (depth_pred.data >= 0).all()
    np.testing.assert_allclose(np.diagonal(dist_pred.data, axis1=1, axis2=2), 0.0, atol=1e-12)
    np.testing.assert_allclose(dist_pred.data, np.swapaxes(dist_pred.data, 1, 2), rtol=1e-5, atol=1e-9)


def test_domain_probabilities_sum_to_one():
    cfg = tiny_config()
    params = randomize(init_params(cfg, 0))
    ids, pad_add, dep_add, pool = rng_batch(cfg)
    enc = encode(params, cfg, ids, pad_add, dep_add, pool)
    probs = discriminate_domain(params, enc.pooled, lam=1.0)
    assert probs.shape == (2, 3)
    np.testing.assert_allclose(probs.data.sum(axis=-1), 1.0, rtol=1e-6)


def test_gradient_reversal_scales_encoder_grads_by_minus_lambda():
    cfg = tiny_config()
    params = randomize(init_params(cfg, 0))
    ids, pad_add, dep_add, pool = rng_batch(cfg)
    labels = np.array([0, 1])

    def domain_grads(lam):
        for p in params.values():
            p.grad = None
        enc = encode(params, cfg, ids, pad_add, dep_add, pool)
        probs = discriminate_domain(params, enc.pooled, lam)
        picked = T.gather_last(probs, labels)
        loss = T.scalar_mul(T.tsum(T.absolute(T.add(picked, T.constant(np.full(2, -1.0, dtype=np.float32))))), 0.5)
        T.backward(loss)
        enc_g = params["enc/0/attn/wq"].grad
        dom_g = params["dom/w"].grad.copy()
        return (np.zeros_like(params["enc/0/attn/wq"].data) if enc_g is None else enc_g.copy()), dom_g

    g0, d0 = domain_grads(0.0)
    g1, d1 = domain_grads(1.0)
    gh, dh = domain_grads(0.5)
    assert np.abs(g0).max() == 0.0
    assert np.abs(g1).max() > 0
    np.testing.assert_allclose(gh, 0.5 * g1, rtol=1e-4, atol=1e-10)
    np.testing.assert_allclose(d0, d1, rtol=1e-6)
    np.testing.assert_allclose(dh, d1, rtol=1e-6)


# ---------------------------------------------------------------------------
# structure-bias reduction and masking laws


def test_zero_bias_projections_reduce_to_backbone():
    """With the bias projections at their zero init, running the paired
    GAT/encoder stack must equal the plain backbone, value for value."""
    cfg = tiny_config()
    params = init_params(cfg, 0)
    # randomize everything EXCEPT the bias projections (they stay zero)
    rng = np.random.default_rng(5)
    for name in sorted(params):
        if not name.startswith("bias/"):
            params[name].data = rng.normal(0.0, 0.1, size=params[name].shape).astype(np.float32)
    ids, pad_add, dep_add, pool = rng_batch(cfg)
    with_gat = encode(params, cfg, ids, pad_add, dep_add, pool)
    backbone = encode(params, cfg, ids, pad_add, None, pool)
    assert np.isfinite(with_gat.states.data).all()
    assert np.array_equal(with_gat.states.data, backbone.states.data)
    assert backbone.gat_states is None


def test_nonzero_bias_projections_change_the_encoding():
    cfg = tiny_config()
    params = randomize(init_params(cfg, 0))
    ids, pad_add, dep_add, pool = rng_batch(cfg)
    with_gat = encode(params, cfg, ids, pad_add, dep_add, pool)
    backbone = encode(params, cfg, ids, pad_add, None, pool)
    assert not np.array_equal(with_gat.states.data, backbone.states.data)


def test_dependency_mask_blocks_attention():
    """States at position i must not depend on a position j that the
    dependency mask bars every GAT head from seeing, when the backbone
    heads are also barred; here we check the GAT stream in isolation by
    perturbing a masked-out token and watching gat_states."""
    cfg = tiny_config(n_layers=1)
    params = randomize(init_params(cfg, 0))
    b, n = 1, 5
    ids = np.array([[5, 8, 9, 10, 11]], dtype=np.int64)
    pad_add = additive_pad_mask(ids, PAD)
    pool = np.full((b, n), 1.0 / n)
    # GAT: position 1 sees only itself; everyone else sees everyone but 1
    dep = np.zeros((b, 1, n, n), dtype=np.float32)
    dep[0, 0, 1, :] = MASK_SENTINEL
    dep[0, 0, :, 1] = MASK_SENTINEL
    dep[0, 0, 1, 1] = 0.0

    base = encode(params, cfg, ids, pad_add, dep, pool).gat_states.data.copy()
    ids2 = ids.copy()
    ids2[0, 1] = 12  # change the isolated token
    changed = encode(params, cfg, ids2, pad_add, dep, pool).gat_states.data
    np.testing.assert_array_equal(base[0, [0, 2, 3, 4]], changed[0, [0, 2, 3, 4]])
    assert not np.array_equal(base[0, 1], changed[0, 1])


def test_encoder_padding_invariance():
    cfg = tiny_config()
    params = randomize(init_params(cfg, 0))
    ids, _, _, _ = rng_batch(cfg, b=2, n=6)
    padded = np.concatenate([ids, np.zeros((2, 3), dtype=np.int64)], axis=1)

    def run(x):
        pad_add = additive_pad_mask(x, PAD)
        n = x.shape[1]
        dep = np.where((x == PAD)[:, None, None, :] | (x == PAD)[:, None, :, None],
                       MASK_SENTINEL, 0.0).astype(np.float32)
        idx = np.arange(n)
        dep[:, 0, idx, idx] = 0.0
        pool = np.where(x == PAD, 0.0, 1.0)
        pool = pool / pool.sum(axis=1, keepdims=True)
        return encode(params, cfg, x, pad_add, dep, pool)

    short = run(ids)
    long = run(padded)
    np.testing.assert_allclose(long.states.data[:, :6], short.states.data, rtol=0, atol=1e-6)
    np.testing.assert_allclose(long.pooled.data, short.pooled.data, rtol=0, atol=1e-6)


def test_decoder_causality():
    cfg = tiny_config()
    params = randomize(init_params(cfg, 0))
    ids, pad_add, dep_add, pool = rng_batch(cfg)
    enc = encode(params, cfg, ids, pad_add, dep_add, pool)
    y_long = np.array([[6, 9, 10, 11, 12], [6, 13, 14, 15, 16]], dtype=np.int64)
    full = decode_logits(params, cfg, enc.states, pad_add, y_long).data
    for t in (1, 2, 3, 4):
        part = decode_logits(params, cfg, enc.states, pad_add, y_long[:, :t]).data
        np.testing.assert_array_equal(part, full[:, :t])


def test_decoder_prefix_length_guard():
    cfg = tiny_config()
    params = init_params(cfg, 0)
    ids, pad_add, dep_add, pool = rng_batch(cfg)
    enc = encode(params, cfg, ids, pad_add, dep_add, pool)
    too_long = np.full((2, cfg.max_len), 6, dtype=np.int64)
    with pytest.raises(PrefixTooLong):
        decode_logits(params, cfg, enc.states, pad_add, too_long)


def test_encoder_length_guard():
    cfg = tiny_config()
    params = init_params(cfg, 0)
    n = cfg.max_len + 1
    ids = np.full((1, n), 6, dtype=np.int64)
    with pytest.raises(PrefixTooLong):
        encode(params, cfg, ids, additive_pad_mask(ids, PAD), None, np.full((1, n), 1.0 / n))


# ---------------------------------------------------------------------------
# full-model gradient check


def model_loss(params, cfg, ids, pad_add, dep_add, pool, y, labels):
    """Touches every parameter group: translation CE, masked-token CE,
    structure probes, and the domain head.

    The domain branch skips the gradient-reversal wrapper: its backward is
    -lambda times the true gradient by construction, so it can never agree
    with finite differences; the reversal law is pinned by its own test.
    """
    enc = encode(params, cfg, ids, pad_add, dep_add, pool)
    logits = decode_logits(params, cfg, enc.states, pad_add, y[:, :-1])
    lsm = T.log_softmax(logits)
    ce = T.scalar_mul(T.tsum(T.gather_last(lsm, y[:, 1:])), -1.0 / y[:, 1:].size)

    ml = T.log_softmax(cmlm_logits(params, enc.states))
    cmlm = T.scalar_mul(T.tsum(T.gather_last(ml, ids)), -1.0 / ids.size)

    dist_pred, depth_pred = probe_predict(params, enc.gat_states)
    target_d = T.constant(np.ones(dist_pred.shape, dtype=dist_pred.dtype))
    target_h = T.constant(np.ones(depth_pred.shape, dtype=depth_pred.dtype))
    probes = T.add(T.tmean(T.absolute(T.sub(dist_pred, target_d))),
                   T.tmean(T.absolute(T.sub(depth_pred, target_h))))

    dom_logits = T.add(T.matmul(enc.pooled, params["dom/w"]), params["dom/b"])
    dom = T.scalar_mul(T.tsum(T.gather_last(T.log_softmax(dom_logits), labels)),
                       -1.0 / labels.size)

    return T.add(T.add(ce, cmlm), T.add(probes, dom))


def test_full_model_finite_difference():
    """Every analytic gradient in a <=5k-parameter model matches central
    differences to 1e-5 relative error (float64, inputs off relu kinks)."""
    cfg = tiny_config()
    params64 = cast_params(randomize(init_params(cfg, 0), seed=23, scale=0.4), np.float64)
    assert count_params(params64) <= 5000
    ids, pad_add, dep_add, pool = rng_batch(cfg, b=2, n=5, seed=9)
    pad_add = pad_add.astype(np.float64)
    dep_add = dep_add.astype(np.float64)
    y = np.array([[6, 9, 10, 2], [6, 11, 12, 2]], dtype=np.int64)
    labels = np.array([0, 2])

    worst = T.gradcheck(
        lambda: model_loss(params64, cfg, ids, pad_add, dep_add, pool, y, labels),
        params64, h=1e-3,
    )
    assert worst <= 1e-5, f"max relative gradient error {worst}"


# ---------------------------------------------------------------------------
# generation


def build_generation_model(seed=11):
    cfg = tiny_config()
    params = randomize(init_params(cfg, 0), seed=seed, scale=0.35)
    ids, pad_add, dep_add, pool = rng_batch(cfg, b=2, n=6, seed=seed + 1)
    with T.no_grad():
        enc = encode(params, cfg, ids, pad_add, dep_add, pool)
    return cfg, params, enc.states.data, pad_add


def test_incremental_decoder_matches_full_forward():
    cfg, params, enc_states, pad_add = build_generation_model()
    rng = np.random.default_rng(0)
    y = rng.integers(5, cfg.vocab_size, size=(2, 6)).astype(np.int64)
    y[:, 0] = 6
    dec = _NumpyDecoder(params, cfg, enc_states, pad_add)
    with T.no_grad():
        full = decode_logits(params, cfg, T.constant(enc_states), pad_add, y).data
    for t in range(y.shape[1]):
        step_logits = dec.step(y[:, t])
        np.testing.assert_allclose(step_logits, full[:, t], rtol=1e-5, atol=1e-6)


def test_greedy_equals_stepwise_argmax_over_full_forward():
    cfg, params, enc_states, pad_add = build_generation_model()
    results = greedy_generate(params, cfg, enc_states, pad_add,
                              np.array([6, 6]), eos_id=2, max_steps=10)

    for row in range(2):
        prefix = [6]
        expected = []
        for _ in range(10):
            with T.no_grad():
                logits = decode_logits(params, cfg, T.constant(enc_states[row:row + 1]),
                                       pad_add[row:row + 1],
                                       np.array([prefix], dtype=np.int64)).data
            nxt = int(logits[0, -1].argmax())
            if nxt == 2:
                break
            expected.append(nxt)
            prefix.append(nxt)
        assert results[row].ids == expected


def test_beam_one_is_greedy():
    cfg, params, enc_states, pad_add = build_generation_model()
    greedy = generate(params, cfg, enc_states, pad_add, tgt_tag_id=6, eos_id=2,
                      beam=1, max_steps=10)
    beamed = [
        beam_generate(params, cfg, enc_states[i:i + 1], pad_add[i:i + 1],
                      start_id=6, eos_id=2, beam=1, max_steps=10)
        for i in range(2)
    ]
    for g, b in zip(greedy, beamed):
        assert g.ids == b.ids
        assert g.truncated == b.truncated


def peaked_generation_model(seed, sharp=4.0, eos_boost=1.0):
    """Model with sharply peaked logits and a mildly boosted EOS score: the
    regime trained translation models live in, where greedy decoding
    actually terminates."""
    cfg = tiny_config()
    params = randomize(init_params(cfg, 0), seed=seed, scale=0.35)
    params["out/ffn/w2"].data *= sharp
    params["out/ffn/b2"].data[2] += eos_boost
    ids, pad_add, dep_add, pool = rng_batch(cfg, b=1, n=6, seed=seed + 1)
    with T.no_grad():
        enc = encode(params, cfg, ids, pad_add, dep_add, pool)
    return cfg, params, enc.states.data, pad_add


def test_beam_five_never_scores_below_a_finished_greedy():
    """Whenever greedy decoding terminates with EOS, widening the beam to 5
    may only improve the length-normalized score. (When greedy fails to
    terminate, beam search preferring a finished hypothesis over a
    higher-scoring unfinished one is the intended policy, not a regression,
    so those runs are out of scope here.)"""
    checked = 0
    for seed in (9, 51):
        cfg, params, enc_states, pad_add = peaked_generation_model(seed)
        g = beam_generate(params, cfg, enc_states, pad_add, 6, 2, beam=1, max_steps=20)
        assert not g.truncated and len(g.ids) >= 4, "seed no longer exercises the property"
        b5 = beam_generate(params, cfg, enc_states, pad_add, 6, 2, beam=5, max_steps=20)
        assert not b5.truncated
        assert b5.score >= g.score - 1e-9, (seed, b5.score, g.score)
        checked += 1
    assert checked == 2


def test_beam_prefers_finished_hypotheses_over_truncated_ones():
    cfg, params, enc_states, pad_add = build_generation_model(41)
    g = beam_generate(params, cfg, enc_states[:1], pad_add[:1], 6, 2, beam=1, max_steps=12)
    b5 = beam_generate(params, cfg, enc_states[:1], pad_add[:1], 6, 2, beam=5, max_steps=12)
    assert g.truncated          # greedy never reaches EOS on this model
    assert not b5.truncated     # the wider beam finds a finished hypothesis


def test_generate_truncation_flag_on_eosless_model():
    cfg = tiny_config()
    params = init_params(cfg, 0)  # zero output head: argmax is always id 0
    ids, pad_add, dep_add, pool = rng_batch(cfg, b=1, n=5)
    with T.no_grad():
        enc = encode(params, cfg, ids, pad_add, dep_add, pool)
    out = generate(params, cfg, enc.states.data, pad_add, tgt_tag_id=6, eos_id=2,
                   beam=1, max_steps=7)
    assert out[0].truncated
    assert len(out[0].ids) == 7
    assert out[0].ids == [0] * 7


def test_generate_respects_max_len_budget():
    cfg = tiny_config()
    params = init_params(cfg, 0)
    ids, pad_add, dep_add, pool = rng_batch(cfg, b=1, n=5)
    with T.no_grad():
        enc = encode(params, cfg, ids, pad_add, dep_add, pool)
    out = generate(params, cfg, enc.states.data, pad_add, tgt_tag_id=6, eos_id=2,
                   beam=1, max_steps=10_000)
    assert len(out[0].ids) <= cfg.max_len - 2


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    cfg = tiny_config()
    params = randomize(init_params(cfg, 0))
    save_checkpoint(tmp_path / "ck", params, cfg, card={"stage": "unit"})
    loaded, cfg2, card = load_checkpoint(tmp_path / "ck")
    assert cfg2 == cfg
    assert card["stage"] == "unit"
    assert sorted(loaded) == sorted(params)
    for k in params:
        assert loaded[k].data.tobytes() == params[k].data.tobytes()
        assert loaded[k].requires_grad


def test_checkpoint_reload_reproduces_forward(tmp_path):
    cfg = tiny_config()
    params = randomize(init_params(cfg, 0))
    ids, pad_add, dep_add, pool = rng_batch(cfg)
    before = encode(params, cfg, ids, pad_add, dep_add, pool).states.data
    save_checkpoint(tmp_path / "ck", params, cfg)
    loaded, cfg2, _ = load_checkpoint(tmp_path / "ck")
    after = encode(loaded, cfg2, ids, pad_add, dep_add, pool).states.data
    assert np.array_equal(before, after)
