import numpy as np
import pytest
import torch
from torch import nn

from convtts.context_encoder import (
    ChatHistory,
    ContextEncoder,
    ContextEncoderConfig,
    UtteranceEmbedding,
    broadcast_combine,
    encode_context,
    history_to_tensor,
)
from convtts.errors import InputError
from fdcheck import finite_difference_max_rel_error

TOY = ContextEncoderConfig(embed_dim=12, proj_dim=6, gru_units=5, out_dim=8, capacity=10)


def toy_context(seed=0, dtype=torch.float32, randomize_out=True):
    torch.manual_seed(seed)
    enc = ContextEncoder(TOY).to(dtype)
    if randomize_out:
        nn.init.uniform_(enc.out.weight, -0.4, 0.4)
        nn.init.uniform_(enc.out.bias, -0.1, 0.1)
    return enc.eval()


def make_history(n_past, seed=0, dim=12):
    rng = np.random.default_rng(seed)
    entries = [
        UtteranceEmbedding(rng.standard_normal(dim), int(rng.integers(0, 2)))
        for _ in range(n_past + 1)
    ]
    return ChatHistory(entries=entries)


def test_all_zero_weights_give_zero_vector():
    enc = toy_context(randomize_out=False)
    with torch.no_grad():
        for p in enc.parameters():
            p.zero_()
    out = encode_context(enc, make_history(5))
    assert torch.equal(out, torch.zeros(TOY.out_dim))


def test_capacity_truncates_to_newest_ten():
    enc = toy_context(seed=1)
    history = make_history(12, seed=3)
    out_full = encode_context(enc, history)
    # deleting the two oldest past entries changes nothing
    trimmed = ChatHistory(entries=history.entries[2:])
    assert torch.equal(out_full, encode_context(enc, trimmed))


def test_capacity_law_mutating_old_entries_is_invisible():
    enc = toy_context(seed=2)
    rng = np.random.default_rng(7)
    for trial in range(30):
        n_past = int(rng.integers(11, 21))
        history = make_history(n_past, seed=trial)
        out = encode_context(enc, history)
        mutated = ChatHistory(entries=list(history.entries))
        n_old = n_past - TOY.capacity
        for i in range(n_old):
            mutated.entries[i] = UtteranceEmbedding(
                rng.standard_normal(12), int(rng.integers(0, 2))
            )
        assert torch.equal(out, encode_context(enc, mutated))


def test_first_turn_uses_zero_past_state():
    enc = toy_context(seed=3)
    history = make_history(0, seed=1)
    out = encode_context(enc, history)
    # manual recomputation: out([0 || proj(E_t)])
    entries = history_to_tensor(history, 12)
    projected = enc.act(enc.proj(entries))
    manual = enc.out(torch.cat([torch.zeros(TOY.gru_units), projected[-1]]))
    assert torch.equal(out, manual)


def test_some_permutation_of_past_changes_output():
    enc = toy_context(seed=4)
    history = make_history(6, seed=2)
    out = encode_context(enc, history)
    rng = np.random.default_rng(0)
    changed = False
    for _ in range(10):
        perm = rng.permutation(6)
        permuted = ChatHistory(
            entries=[history.entries[i] for i in perm] + [history.entries[-1]]
        )
        if not torch.equal(out, encode_context(enc, permuted)):
            changed = True
            break
    assert changed, "GRU should be order-sensitive for generic weights"


def test_zero_init_projection_contributes_nothing():
    torch.manual_seed(5)
    enc = ContextEncoder(TOY).eval()  # out layer keeps its zero init
    out = encode_context(enc, make_history(4))
    assert torch.equal(out, torch.zeros(TOY.out_dim))


def test_wrong_embedding_dim_is_input_error():
    enc = toy_context()
    bad = ChatHistory(entries=[UtteranceEmbedding(np.zeros(11), 0)])
    with pytest.raises(InputError, match="dim"):
        encode_context(enc, bad)


def test_bad_speaker_id_is_input_error():
    enc = toy_context()
    bad = ChatHistory(entries=[UtteranceEmbedding(np.zeros(12), 2)])
    with pytest.raises(InputError, match="speaker"):
        encode_context(enc, bad)


def test_empty_history_is_input_error():
    enc = toy_context()
    with pytest.raises(InputError):
        encode_context(enc, ChatHistory(entries=[]))


class TestBroadcastCombine:
    def test_zero_context_is_identity(self):
        memory = torch.randn(5, 8)
        assert torch.equal(broadcast_combine(memory, torch.zeros(8)), memory)

    def test_matches_scalar_loop(self):
        rng = np.random.default_rng(1)
        memory = rng.standard_normal((3, 4))
        ctx = rng.standard_normal(4)
        out = broadcast_combine(torch.tensor(memory), torch.tensor(ctx)).numpy()
        for i in range(3):
            for j in range(4):
                assert out[i, j] == memory[i, j] + ctx[j]

    def test_composes_with_additive_combine(self):
        rng = np.random.default_rng(2)
        m = rng.standard_normal((4, 6))
        a = rng.standard_normal((4, 6))
        v = rng.standard_normal(6)
        out = broadcast_combine(
            torch.tensor(m) + torch.tensor(a), torch.tensor(v)
        ).numpy()
        for i in range(4):
            for j in range(6):
                assert out[i, j] == (m[i, j] + a[i, j]) + v[j]

    def test_dim_mismatch(self):
        with pytest.raises(InputError):
            broadcast_combine(torch.zeros(3, 4), torch.zeros(5))


def test_gradients_match_finite_differences():
    enc = toy_context(seed=6, dtype=torch.float64)
    history = make_history(4, seed=5)
    entries = history_to_tensor(history, 12, dtype=torch.float64)
    torch.manual_seed(0)
    weights = torch.randn(TOY.out_dim, dtype=torch.float64)

    def loss():
        return (enc(entries) * weights).sum()

    err = finite_difference_max_rel_error(loss, list(enc.parameters()))
    assert err < 1e-4
