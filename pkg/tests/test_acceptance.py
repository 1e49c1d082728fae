"""Acceptance suite: one test per release criterion, each printing a
PASS line with its measured runtime. Run with ``pytest tests/test_acceptance.py -v -s``.
"""

import json
import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest
import torch
from torch import nn

from convtts.attention import sma_step
from convtts.aux_encoder import AuxEncoderConfig, AuxiliaryEncoder, encode_auxiliary
from convtts.checkpoint import apply_checkpoint, load_checkpoint, save_checkpoint
from convtts.context_encoder import (
    ChatHistory,
    ContextEncoder,
    ContextEncoderConfig,
    UtteranceEmbedding,
    encode_context,
)
from convtts.corpus import Utterance
from convtts.decoder import Decoder, DecoderConfig, DecoderState, Postnet
from convtts.encoder import EncoderConfig, PhonemeEncoder, encode_phonemes
from convtts.features import NormalizationConfig, compute_stat_features
from convtts.mel import load_mel
from convtts.model import ConversationalTTS
from convtts.training import (
    TrainConfig,
    collate,
    compute_loss,
    lr_at,
    stop_targets_for,
    teacher_forced_forward,
)
from fdcheck import finite_difference_max_rel_error


def report(number, name, t0, detail=""):
    extra = f" ({detail})" if detail else ""
    print(f"\nACCEPTANCE {number} {name}: PASS in {time.monotonic() - t0:.1f}s{extra}")


# ----------------------------------------------------------------------
# 1. SMA invariant suite
# ----------------------------------------------------------------------


def test_c1_sma_invariant_suite():
    t0 = time.monotonic()
    rng = np.random.default_rng(2024)
    checked = 0
    while checked < 10000:
        length = int(rng.integers(1, 48))
        batch = int(rng.integers(1, 64))
        prev = rng.random((batch, length))
        # half the rows get sparse support to exercise the step law
        kill = rng.random((batch, length)) < 0.5
        kill[np.arange(batch), rng.integers(0, length, batch)] = False
        prev = np.where(kill, 0.0, prev)
        prev /= prev.sum(axis=1, keepdims=True)
        energies = rng.normal(0.0, 5.0, size=(batch, length))
        out = sma_step(torch.tensor(prev), torch.tensor(energies)).numpy()

        assert np.all(np.abs(out.sum(axis=1) - 1.0) < 1e-6), "simplex violated"
        assert np.all(out >= 0)
        assert np.all(
            np.cumsum(out, axis=1) <= np.cumsum(prev, axis=1) + 1e-12
        ), "prefix mass increased"
        support_prev = prev > 0
        shifted = np.zeros_like(support_prev)
        shifted[:, 1:] = support_prev[:, :-1]
        assert np.all(~(out > 0) | support_prev | shifted), "support advanced by 2+"
        checked += batch

    # the three hand-worked examples, exact
    stay = sma_step(torch.tensor([1.0, 0, 0]), torch.tensor([20.0, 0, 0]))
    np.testing.assert_allclose(stay.numpy(), [1, 0, 0], atol=1e-8)
    move = sma_step(torch.tensor([1.0, 0, 0]), torch.tensor([-20.0, 0, 0]))
    np.testing.assert_allclose(move.numpy(), [0, 1, 0], atol=1e-8)
    half = sma_step(torch.tensor([0.5, 0.5, 0.0]), torch.zeros(3))
    np.testing.assert_allclose(half.numpy(), [0.25, 0.5, 0.25], rtol=0, atol=1e-15)

    elapsed = time.monotonic() - t0
    assert elapsed < 60.0
    report(1, "sma-invariant-suite", t0, f"{checked} pairs")


# ----------------------------------------------------------------------
# 2. Gradient correctness
# ----------------------------------------------------------------------


def test_c2_gradient_correctness():
    t0 = time.monotonic()
    worst = {}

    torch.manual_seed(0)
    encoder = PhonemeEncoder(
        EncoderConfig(inventory_size=7, embed_dim=8, conv_channels=8, blstm_units=6)
    ).double().eval()
    ids = torch.tensor([0, 1, 2, 3, 4, 5, 6, 2])
    worst["encoder"] = finite_difference_max_rel_error(
        lambda: 0.5 * (encode_phonemes(encoder, ids) ** 2).sum(),
        list(encoder.parameters()),
    )

    torch.manual_seed(1)
    aux = AuxiliaryEncoder(
        AuxEncoderConfig(
            in_dim=10, prenet_dims=(8, 6), bank_k=3, bank_channels=6,
            proj_channels=6, highway_layers=2, highway_units=6,
            gru_units=5, out_dim=12,
        )
    ).double().eval()
    nn.init.uniform_(aux.out_proj.weight, -0.3, 0.3)
    chars = torch.randn(3, 10, dtype=torch.float64)
    torch.manual_seed(2)
    w_aux = torch.randn(5, 12, dtype=torch.float64)
    worst["auxiliary_encoder"] = finite_difference_max_rel_error(
        lambda: (encode_auxiliary(aux, chars, [(0, 2), (2, 3), (3, 5)], 5) * w_aux).sum(),
        list(aux.parameters()),
    )

    torch.manual_seed(3)
    context = ContextEncoder(
        ContextEncoderConfig(embed_dim=12, proj_dim=6, gru_units=5, out_dim=8)
    ).double().eval()
    nn.init.uniform_(context.out.weight, -0.3, 0.3)
    rng = np.random.default_rng(0)
    history = ChatHistory(
        entries=[
            UtteranceEmbedding(rng.standard_normal(12), int(rng.integers(0, 2)))
            for _ in range(5)
        ]
    )
    torch.manual_seed(4)
    w_ctx = torch.randn(8, dtype=torch.float64)
    worst["context_encoder"] = finite_difference_max_rel_error(
        lambda: (encode_context(context, history, dtype=torch.float64) * w_ctx).sum(),
        list(context.parameters()),
    )

    torch.manual_seed(5)
    dec_cfg = DecoderConfig(
        memory_dim=10, prenet_dims=(8, 8), lstm_units=12, attn_dim=8,
        mel_dim=6, postnet_channels=8,
    )
    decoder = Decoder(dec_cfg).double().eval()
    memory = torch.randn(1, 4, 10, dtype=torch.float64)
    torch.manual_seed(6)
    w_frame = torch.randn(6, dtype=torch.float64)

    def decoder_loss():
        state = decoder.init_state(1, 4, dtype=torch.float64, device="cpu")
        state = DecoderState(
            h1=state.h1 + 0.1, c1=state.c1 - 0.2, h2=state.h2 + 0.05, c2=state.c2,
            alignment=state.alignment, prev_frame=state.prev_frame + 0.3,
        )
        frame, stop_logit, _ = decoder.step(
            state, memory, rng=torch.Generator().manual_seed(11)
        )
        return (frame[0] * w_frame).sum() + stop_logit[0]

    worst["decoder_step"] = finite_difference_max_rel_error(
        decoder_loss, list(decoder.parameters())
    )

    torch.manual_seed(7)
    postnet = Postnet(dec_cfg).double().eval()
    mel = torch.randn(2, 6, dtype=torch.float64)
    torch.manual_seed(8)
    w_post = torch.randn(2, 6, dtype=torch.float64)
    worst["postnet"] = finite_difference_max_rel_error(
        lambda: (postnet(mel) * w_post).sum(), list(postnet.parameters())
    )

    for module, err in worst.items():
        assert err < 1e-4, f"{module}: max relative error {err:.2e}"
    elapsed = time.monotonic() - t0
    assert elapsed < 600.0
    report(2, "gradient-correctness", t0,
           "max rel err " + ", ".join(f"{k}={v:.1e}" for k, v in worst.items()))


# ----------------------------------------------------------------------
# 3. Context capacity law
# ----------------------------------------------------------------------


def test_c3_context_capacity_law():
    t0 = time.monotonic()
    torch.manual_seed(10)
    config = ContextEncoderConfig(embed_dim=16, proj_dim=8, gru_units=8, out_dim=12, capacity=10)
    encoder = ContextEncoder(config).eval()
    nn.init.uniform_(encoder.out.weight, -0.4, 0.4)
    rng = np.random.default_rng(11)
    for trial in range(100):
        n_past = int(rng.integers(11, 21))
        entries = [
            UtteranceEmbedding(rng.standard_normal(16), int(rng.integers(0, 2)))
            for _ in range(n_past + 1)
        ]
        baseline = encode_context(encoder, ChatHistory(entries=entries))
        mutated = list(entries)
        for i in range(n_past - config.capacity):
            mutated[i] = UtteranceEmbedding(
                rng.standard_normal(16) * 100.0, int(rng.integers(0, 2))
            )
        after = encode_context(encoder, ChatHistory(entries=mutated))
        assert torch.equal(baseline, after), f"trial {trial}: capacity leak"
    elapsed = time.monotonic() - t0
    assert elapsed < 60.0
    report(3, "context-capacity-law", t0, "100 histories, exact equality")


# ----------------------------------------------------------------------
# 4. Finetune neutrality
# ----------------------------------------------------------------------


def test_c4_finetune_neutrality(corpus, tmp_path):
    t0 = time.monotonic()
    torch.manual_seed(20)
    m1 = ConversationalTTS(corpus.model_config("M1")).eval()
    ckpt_path = tmp_path / "m1.zip"
    save_checkpoint(
        ckpt_path, m1, step=0, inventory=corpus.inventory, normalization=corpus.norm
    )
    grown = {}
    for variant, seed in (("M2", 21), ("M3", 22)):
        torch.manual_seed(seed)
        model = ConversationalTTS(corpus.model_config(variant))
        apply_checkpoint(model, load_checkpoint(ckpt_path))
        grown[variant] = model.eval()

    examples = {v: corpus.examples(v) for v in ("M1", "M2", "M3")}
    rng = np.random.default_rng(23)
    for batch_idx in range(10):
        size = int(rng.integers(2, 9))
        picks = rng.choice(len(examples["M1"]), size=size, replace=False)
        seed = int(rng.integers(1 << 30))
        outputs = {}
        for variant in ("M1", "M2", "M3"):
            model = m1 if variant == "M1" else grown[variant]
            batch = collate([examples[variant][i] for i in picks], variant)
            with torch.no_grad():
                outputs[variant] = teacher_forced_forward(
                    model, batch, torch.Generator().manual_seed(seed)
                )
        for variant in ("M2", "M3"):
            for a, b in zip(outputs["M1"], outputs[variant]):
                assert torch.equal(a, b), f"batch {batch_idx}: {variant} diverged"
    report(4, "finetune-neutrality", t0, "10 batches, bitwise")


# ----------------------------------------------------------------------
# 5. Overfit check
# ----------------------------------------------------------------------


def test_c5_overfit_and_natural_stopping(overfit_runs):
    runs, train_elapsed = overfit_runs
    t0 = time.monotonic()
    ratios = {}
    stops = {}
    for variant, (result, examples) in runs.items():
        first = result.losses[0]["mel_after"]
        last = result.losses[-1]["mel_after"]
        ratios[variant] = last / first
        assert last < 0.1 * first, (
            f"{variant}: mel_after {last:.4f} not below 10% of step-0 {first:.4f}"
        )
        model = result.model
        stopped_count = 0
        for i, example in enumerate(examples):
            batch = collate([example], variant)
            _, _, stopped = model.synthesize(
                batch.items[0],
                rng=torch.Generator().manual_seed(1000 + i),
                max_frames=200,
            )
            stopped_count += int(stopped)
        stops[variant] = stopped_count
        assert stopped_count >= 6, f"{variant}: only {stopped_count}/8 stopped naturally"
    total = train_elapsed + (time.monotonic() - t0)
    assert total < 900.0, f"overfit criterion took {total:.0f}s"
    report(
        5, "overfit-and-stop", t0,
        f"train {train_elapsed:.0f}s; loss ratios "
        + ", ".join(f"{k}={v:.3f}" for k, v in ratios.items())
        + "; stops " + ", ".join(f"{k}={v}/8" for k, v in stops.items()),
    )


# ----------------------------------------------------------------------
# 6. Statistical features
# ----------------------------------------------------------------------


def test_c6_stat_features_match_oracle():
    t0 = time.monotonic()
    rng = np.random.default_rng(30)
    norm = NormalizationConfig(24, 200, 12)
    for _ in range(1000):
        spans, cursor = [], 0
        for _ in range(int(rng.integers(1, 10))):
            length = int(rng.integers(1, 20))
            spans.append((cursor, cursor + length))
            cursor += length
        utt = Utterance(
            text="x" * cursor,
            sentence_spans=spans,
            phonemes=[],
            char_alignment=[(0, 0)] * cursor,
        )
        got = compute_stat_features(utt, norm)

        # hand-written per-definition oracle
        n_chars = cursor
        n_sents = len(spans)
        utt_pos = 0
        for sent_idx, (s, e) in enumerate(spans):
            sent_len = e - s
            for k in range(sent_len):
                expected = (
                    sent_len / norm.max_chars_per_sentence,
                    (k + 1) / sent_len,
                    n_chars / norm.max_chars_per_utterance,
                    (utt_pos + 1) / n_chars,
                    n_sents / norm.max_sentences_per_utterance,
                    (sent_idx + 1) / n_sents,
                )
                assert tuple(got[utt_pos]) == expected, "oracle mismatch"
                utt_pos += 1

        # boundary symmetries at terminal positions
        assert got[-1, 3] == 1.0
        for s, e in spans:
            assert got[e - 1, 1] == 1.0
        assert got[spans[-1][1] - 1, 5] == 1.0
    elapsed = time.monotonic() - t0
    assert elapsed < 60.0
    report(6, "stat-features-oracle", t0, "1000 structures, exact")


# ----------------------------------------------------------------------
# 7. Schedule and loss
# ----------------------------------------------------------------------


def test_c7_schedule_and_loss():
    t0 = time.monotonic()
    cfg = TrainConfig()
    expected = {0: 1e-3, 25000: 1e-4, 50000: 1e-5, 80000: 1e-5}
    for step, value in expected.items():
        assert lr_at(step, cfg) == pytest.approx(value, rel=1e-12)

    rng = np.random.default_rng(31)
    for seed in range(5):
        b, n, m = 3, 6, 4
        pb = rng.standard_normal((b, n, m))
        pa = rng.standard_normal((b, n, m))
        target = rng.standard_normal((b, n, m))
        logits = rng.standard_normal((b, n))
        lengths = rng.integers(1, n + 1, size=b)
        stop_t = stop_targets_for(torch.tensor(lengths), n).double().numpy()

        loss = compute_loss(
            torch.tensor(pb), torch.tensor(pa), torch.tensor(target),
            torch.tensor(logits), torch.tensor(stop_t), torch.tensor(lengths),
            pos_weight=5.0,
        )
        # scalar-loop oracle
        tb = ta = ts = 0.0
        count = 0
        for i in range(b):
            for f in range(int(lengths[i])):
                count += 1
                for j in range(m):
                    tb += (float(pb[i, f, j]) - float(target[i, f, j])) ** 2
                    ta += (float(pa[i, f, j]) - float(target[i, f, j])) ** 2
                p = 1.0 / (1.0 + math.exp(-float(logits[i, f])))
                y = float(stop_t[i, f])
                ts += -(5.0 * y * math.log(p) + (1 - y) * math.log(1 - p))
        assert float(loss.mel_before) == pytest.approx(tb / (count * m), abs=1e-10)
        assert float(loss.mel_after) == pytest.approx(ta / (count * m), abs=1e-10)
        assert float(loss.stop) == pytest.approx(ts / count, abs=1e-10)

        # padding invariance
        pad = lambda a, fill: np.concatenate(
            [a, np.full((a.shape[0], 3) + a.shape[2:], fill)], axis=1
        )
        padded = compute_loss(
            torch.tensor(pad(pb, 9.0)), torch.tensor(pad(pa, -9.0)),
            torch.tensor(pad(target, 1.0)), torch.tensor(pad(logits, 2.0)),
            torch.tensor(pad(stop_t, 1.0)), torch.tensor(lengths),
            pos_weight=5.0,
        )
        for key in ("mel_before", "mel_after", "stop", "total"):
            assert float(getattr(loss, key)) == pytest.approx(
                float(getattr(padded, key)), abs=1e-10
            )
    report(7, "schedule-and-loss", t0)


# ----------------------------------------------------------------------
# 8. Pipeline smoke test
# ----------------------------------------------------------------------


def test_c8_pipeline_smoke(corpus, tmp_path):
    t0 = time.monotonic()
    env = dict(os.environ, OMP_NUM_THREADS="1")

    def cli(*args):
        proc = subprocess.run(
            [sys.executable, "-m", "convtts.cli", *args],
            capture_output=True, text=True, env=env,
        )
        assert proc.returncode == 0, f"{args[0]} failed:\n{proc.stdout}\n{proc.stderr}"
        return proc

    cli("validate-corpus", "--manifest", str(corpus.manifest_path))

    mel_dir = tmp_path / "mels"
    cli("extract-mel", "--manifest", str(corpus.manifest_path), "--out", str(mel_dir))
    caches = sorted(mel_dir.glob("*.mel.f32"))
    assert len(caches) == 8
    for cache in caches:
        assert load_mel(cache).n_mels == 80

    run_cfg = {
        "manifest": str(corpus.manifest_path),
        "out_dir": str(tmp_path / "run"),
        "variant": "M3",
        "embedding_dim": 32,
        "embedder": {"kind": "stub", "seed": 0},
        "train": {"steps": 50, "batch_size": 8, "seed": 0},
    }
    cfg_path = tmp_path / "train.json"
    cfg_path.write_text(json.dumps(run_cfg))
    cli("train", "--config", str(cfg_path))
    checkpoint = tmp_path / "run" / "checkpoint_0000050.zip"
    assert checkpoint.exists()

    out = tmp_path / "synth"
    cli(
        "synth", "--script", str(corpus.script_path), "--checkpoint", str(checkpoint),
        "--out", str(out), "--stub-embedder", "--seed", "7",
        "--max-frames", "80", "--griffin-lim-iters", "30",
    )
    summary = json.loads((out / "results.json").read_text())
    assert len(summary["results"]) == 8
    for entry in summary["results"]:
        mel = load_mel(entry["mel_path"])
        assert mel.n_mels == 80 and mel.n_frames == entry["n_frames"]
        aligns, meta = np.frombuffer(
            open(entry["alignment_path"], "rb").read(), dtype="<f4"
        ), json.loads(open(entry["alignment_path"] + ".json").read())
        assert list(aligns.reshape(meta["shape"]).shape) == meta["shape"]
        from convtts.mel import read_wav

        samples, rate = read_wav(entry["wav_path"], expected_rate=16000)
        assert samples.size > 0
    report(8, "pipeline-smoke", t0)
