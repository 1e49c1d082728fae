import numpy as np
import pytest
import torch

from convtts.attention import StepwiseMonotonicEnergy, sma_step, sma_step_masked
from convtts.errors import InputError


def run_step(prev, energies):
    out = sma_step(
        torch.tensor(prev, dtype=torch.float64),
        torch.tensor(energies, dtype=torch.float64),
    )
    return out.numpy()


class TestHandWorkedExamples:
    def test_stay_case(self):
        # mass at 0 and p_0 -> 1: it stays put
        out = run_step([1.0, 0.0, 0.0], [20.0, 0.0, 0.0])
        np.testing.assert_allclose(out, [1.0, 0.0, 0.0], atol=1e-8)

    def test_move_case(self):
        # mass at 0 and p_0 -> 0: it advances one position
        out = run_step([1.0, 0.0, 0.0], [-20.0, 0.0, 0.0])
        np.testing.assert_allclose(out, [0.0, 1.0, 0.0], atol=1e-8)

    def test_half_split(self):
        # prev = [0.5, 0.5, 0], all p = 0.5
        out = run_step([0.5, 0.5, 0.0], [0.0, 0.0, 0.0])
        np.testing.assert_allclose(out, [0.25, 0.5, 0.25], rtol=0, atol=1e-15)


class TestInvariants:
    def random_pairs(self, n, max_len=40, seed=0):
        rng = np.random.default_rng(seed)
        for _ in range(n):
            length = int(rng.integers(1, max_len))
            prev = rng.random(length)
            prev /= prev.sum()
            energies = rng.normal(0.0, 4.0, size=length)
            yield prev, energies

    def test_simplex_preservation(self):
        for prev, energies in self.random_pairs(2000, seed=1):
            out = run_step(prev, energies)
            assert abs(out.sum() - 1.0) < 1e-6
            assert np.all(out >= 0)

    def test_prefix_mass_never_increases(self):
        for prev, energies in self.random_pairs(2000, seed=2):
            out = run_step(prev, energies)
            assert np.all(np.cumsum(out) <= np.cumsum(prev) + 1e-12)

    def test_support_advances_at_most_one(self):
        rng = np.random.default_rng(3)
        for _ in range(2000):
            length = int(rng.integers(2, 30))
            prev = np.zeros(length)
            support = rng.choice(length, size=rng.integers(1, length), replace=False)
            prev[support] = rng.random(len(support))
            prev /= prev.sum()
            out = run_step(prev, rng.normal(0, 4, size=length))
            for j in np.flatnonzero(out > 0):
                assert prev[j] > 0 or (j > 0 and prev[j - 1] > 0)

    def test_length_one_is_fixed_point(self):
        out = run_step([1.0], [-5.0])
        np.testing.assert_allclose(out, [1.0])


class TestErrors:
    def test_length_mismatch(self):
        with pytest.raises(InputError):
            sma_step(torch.ones(3) / 3, torch.zeros(4))

    def test_non_finite_energies(self):
        with pytest.raises(InputError):
            sma_step(torch.ones(2) / 2, torch.tensor([0.0, float("nan")]))

    def test_empty_alignment(self):
        with pytest.raises(InputError):
            sma_step(torch.zeros(0), torch.zeros(0))


class TestMasked:
    def test_padding_gets_no_mass(self):
        prev = torch.zeros(2, 6, dtype=torch.float64)
        prev[:, 0] = 1.0
        lengths = torch.tensor([3, 6])
        rng = np.random.default_rng(4)
        for _ in range(60):
            energies = torch.tensor(rng.normal(0, 6, size=(2, 6)))
            prev = sma_step_masked(prev, energies, lengths)
            assert torch.all(prev[0, 3:] == 0)
            assert abs(prev[0].sum() - 1) < 1e-9 and abs(prev[1].sum() - 1) < 1e-9

    def test_mass_accumulates_at_last_real_row(self):
        prev = torch.zeros(1, 5, dtype=torch.float64)
        prev[:, 0] = 1.0
        lengths = torch.tensor([3])
        for _ in range(100):
            prev = sma_step_masked(prev, torch.full((1, 5), -20.0).double(), lengths)
        np.testing.assert_allclose(prev[0].numpy(), [0, 0, 1, 0, 0], atol=1e-9)


def test_energy_module_shapes_and_bias():
    torch.manual_seed(0)
    energy = StepwiseMonotonicEnergy(8, 12, attn_dim=6, score_bias_init=1.5)
    memory = torch.randn(2, 7, 12)
    processed = energy.process_memory(memory)
    scores = energy(torch.randn(2, 8), processed)
    assert scores.shape == (2, 7)
    assert float(energy.v.bias.detach()) == 1.5
