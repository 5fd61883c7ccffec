"""Tokenization, mask semantics, branch ablations, and a full-stack gradient check."""

import copy

import numpy as np
import pytest

import stylescout.numerics as nm
from stylescout.encoder import (
    EncodedClip,
    EncoderConfig,
    Vocab,
    VocabError,
    build_encoder_params,
    encode_clip,
    sinusoidal_positions,
    tokenize_clip,
    tokenize_event,
)
from stylescout.numerics import ParamStore, gradient_check
from stylescout.schema import parse_clip

from _gen import random_clip_doc

SMALL = EncoderConfig(d_embed=4, d_model=8, n_layers=1, n_heads=2, max_events=16)


@pytest.fixture(scope="module")
def clip(pools):
    rng = np.random.default_rng(100)
    return parse_clip(random_clip_doc(rng, pools, n_events=9), pools)


@pytest.fixture(scope="module")
def small_store(pools, vocab):
    store = ParamStore(0)
    build_encoder_params(store, SMALL, vocab)
    return store


# ------------------------------------------------------------------ vocab


def test_vocab_is_sorted_and_one_based(pools, vocab):
    for name, toks in vocab.tokens.items():
        assert list(toks) == sorted(toks)
    first = vocab.tokens["action"][0]
    assert vocab.index("action", first) == 1  # 0 reserved for padding
    assert vocab.index("action", vocab.tokens["action"][-1]) == vocab.size("action")


def test_vocab_rejects_unknown_token(vocab):
    with pytest.raises(VocabError):
        vocab.index("action", "moonwalk")
    with pytest.raises(VocabError):
        vocab.multihot("weapon", ["excalibur"])


def test_vocab_multihot(vocab):
    toks = vocab.tokens["weapon"]
    vec = vocab.multihot("weapon", [toks[0], toks[2]])
    assert vec.sum() == 2.0
    assert vec[0] == 1.0 and vec[2] == 1.0


def test_vocab_round_trip(vocab):
    assert Vocab.from_dict(vocab.to_dict()).tokens == vocab.tokens


def test_vocab_location_union_spans_all_maps(pools, vocab):
    union = set().union(*pools.locations_by_map.values())
    assert set(vocab.tokens["location"]) == union


# ------------------------------------------------------------- tokenizing


def test_tokenize_event_features(pools, vocab, clip):
    e = clip.events[1]
    bundle = tokenize_event(e, clip.events[0].timestamp, vocab, clip.map)
    dt, dmg = bundle["continuous"]
    assert dt == pytest.approx(e.timestamp - clip.events[0].timestamp)
    assert dmg == pytest.approx(e.damage / 100.0)
    assert bundle["discrete"]["map"] == vocab.index("map", clip.map)


def test_tokenize_clip_first_delta_is_zero(pools, vocab, clip):
    tok = tokenize_clip(clip, vocab, max_events=64)
    assert tok.continuous[0, 0] == 0.0
    assert tok.length == len(clip.events)
    assert not tok.truncated
    deltas = np.diff([e.timestamp for e in clip.events])
    assert np.allclose(tok.continuous[1:, 0], deltas)


def test_tokenize_clip_truncates_and_flags(pools, vocab, clip):
    tok = tokenize_clip(clip, vocab, max_events=4)
    assert tok.length == 4
    assert tok.truncated
    assert tok.continuous.shape == (4, 2)


def test_sinusoidal_positions_shape_and_range():
    pe = sinusoidal_positions(12, 8)
    assert pe.shape == (12, 8)
    assert np.all(np.abs(pe) <= 1.0)
    assert np.allclose(pe[0, 0::2], 0.0)  # sin(0)
    assert np.allclose(pe[0, 1::2], 1.0)  # cos(0)


# ---------------------------------------------------------------- forward


def test_encode_shapes(pools, vocab, clip, small_store):
    r = encode_clip(clip, SMALL, vocab, small_store)
    T = len(clip.events)
    assert r.contextual.shape == (T, SMALL.d_model)
    assert r.style.shape == (SMALL.d_model,)
    assert r.mask.sum() == T
    assert not r.truncated


def test_encode_is_deterministic(pools, vocab, clip, small_store):
    a = encode_clip(clip, SMALL, vocab, small_store)
    b = encode_clip(clip, SMALL, vocab, small_store)
    assert np.array_equal(a.style.data, b.style.data)


def test_padding_is_invisible(pools, vocab, clip, small_store):
    """Masked slots must not leak into valid rows or the pooled vector."""
    base = encode_clip(clip, SMALL, vocab, small_store)
    T = len(clip.events)
    for pad_to in (T, T + 1, T + 7):
        padded = encode_clip(clip, SMALL, vocab, small_store, pad_to=pad_to)
        # blas blocking can shift the last ulp, nothing more
        np.testing.assert_allclose(padded.style.data, base.style.data, atol=1e-12, rtol=0)
        np.testing.assert_allclose(
            padded.contextual.data[:T], base.contextual.data, atol=1e-12, rtol=0
        )
        assert padded.mask.sum() == T and len(padded.mask) == pad_to


def test_pad_to_shorter_than_clip_rejected(pools, vocab, clip, small_store):
    with pytest.raises(ValueError):
        encode_clip(clip, SMALL, vocab, small_store, pad_to=2)


def test_truncation_flag_set_by_config(pools, vocab, clip):
    cfg = EncoderConfig(d_embed=4, d_model=8, n_layers=1, n_heads=2, max_events=4)
    store = ParamStore(0)
    build_encoder_params(store, cfg, vocab)
    r = encode_clip(clip, cfg, vocab, store)
    assert r.truncated
    assert r.contextual.shape[0] == 4


def test_style_is_masked_mean_of_contextual(pools, vocab, clip, small_store):
    r = encode_clip(clip, SMALL, vocab, small_store, pad_to=len(clip.events) + 3)
    manual = r.contextual.data[r.mask].mean(axis=0)
    assert np.allclose(r.style.data, manual, atol=1e-15)


def test_cached_tokens_reproduce_fresh_encode(pools, vocab, clip, small_store):
    tok = tokenize_clip(clip, vocab, SMALL.max_events)
    a = encode_clip(clip, SMALL, vocab, small_store, tokens=tok)
    b = encode_clip(clip, SMALL, vocab, small_store)
    assert np.array_equal(a.style.data, b.style.data)


def test_encoded_clip_detaches(pools, vocab, clip, small_store):
    r = encode_clip(clip, SMALL, vocab, small_store)
    snap = EncodedClip.from_result(r)
    assert isinstance(snap.style_vector, np.ndarray)
    assert np.array_equal(snap.style_vector, r.style.data)
    assert snap.truncated == r.truncated


# ----------------------------------------------------------- branch modes


def _with_damage_bump(clip_doc):
    doc = copy.deepcopy(clip_doc)
    for e in doc["events"]:
        e["damage"] = (e["damage"] + 37) % 101
    return doc


def _with_action_swap(clip_doc, pools):
    doc = copy.deepcopy(clip_doc)
    actions = sorted(pools.actions)
    for e in doc["events"]:
        i = actions.index(e["action"])
        e["action"] = actions[(i + 1) % len(actions)]
    return doc


@pytest.mark.parametrize(
    "mode,blind_to",
    [("telemetry_only", "categorical"), ("commentary_only", "continuous")],
)
def test_single_branch_ablations_ignore_the_other_channel(pools, vocab, mode, blind_to):
    rng = np.random.default_rng(200)
    doc = random_clip_doc(rng, pools, n_events=8)
    cfg = EncoderConfig(d_embed=4, d_model=8, n_layers=1, n_heads=2, branch_mode=mode)
    store = ParamStore(0)
    build_encoder_params(store, cfg, vocab)

    base = parse_clip(doc, pools)
    variant_doc = _with_action_swap(doc, pools) if blind_to == "categorical" else _with_damage_bump(doc)
    variant = parse_clip(variant_doc, pools)

    s_base = encode_clip(base, cfg, vocab, store).style.data
    s_var = encode_clip(variant, cfg, vocab, store).style.data
    assert np.array_equal(s_base, s_var)


def test_fused_mode_sees_both_channels(pools, vocab):
    rng = np.random.default_rng(201)
    doc = random_clip_doc(rng, pools, n_events=8)
    store = ParamStore(0)
    build_encoder_params(store, SMALL, vocab)
    base = encode_clip(parse_clip(doc, pools), SMALL, vocab, store).style.data
    bumped = encode_clip(parse_clip(_with_damage_bump(doc), pools), SMALL, vocab, store).style.data
    swapped = encode_clip(
        parse_clip(_with_action_swap(doc, pools), pools), SMALL, vocab, store
    ).style.data
    assert not np.array_equal(base, bumped)
    assert not np.array_equal(base, swapped)


def test_branch_modes_register_disjoint_branch_params(vocab):
    names = {}
    for mode in ("telemetry_only", "commentary_only", "fused"):
        store = ParamStore(0)
        build_encoder_params(
            store, EncoderConfig(d_embed=4, d_model=8, n_layers=1, n_heads=2, branch_mode=mode), vocab
        )
        names[mode] = set(store.names())
    assert all(n.startswith("enc.tel.") for n in names["telemetry_only"])
    assert all(n.startswith("enc.com.") for n in names["commentary_only"])
    assert names["fused"] >= names["telemetry_only"] | names["commentary_only"]


# ------------------------------------------------------------- gradients


def test_encoder_full_stack_gradient_check(pools, vocab, clip, small_store):
    """Analytic grads through the whole encoder vs central differences."""
    rng = np.random.default_rng(7)
    w = nm.Tensor(rng.normal(size=SMALL.d_model))

    def loss():
        r = encode_clip(clip, SMALL, vocab, small_store)
        return nm.tsum(nm.mul(r.style, w))

    tensors = {name: t for name, t in small_store.items()}
    worst = gradient_check(loss, tensors, rng, coords_per_tensor=2)
    assert worst < 1e-4


def test_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(d_model=10, n_heads=3)
    with pytest.raises(ValueError):
        EncoderConfig(branch_mode="psychic")
    with pytest.raises(ValueError):
        EncoderConfig(max_events=0)
    cfg = EncoderConfig()
    assert EncoderConfig.from_dict(cfg.to_dict()) == cfg
