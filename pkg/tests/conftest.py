import pytest
import torch

# tiny desk-scale matmuls run faster single-threaded
torch.set_num_threads(1)

from convtts.corpus import load_corpus, load_inventory, load_manifest
from convtts.features import StubEmbeddingProvider, load_normalization
from convtts.mel import MelConfig
from convtts.model import desk_model_config
from convtts.synthetic import make_script, make_synthetic_corpus
from convtts.training import TrainConfig, prepare_examples, train

EMBED_DIM = 32
OVERFIT_STEPS = 500


class CorpusFixture:
    def __init__(self, root):
        self.root = root
        self.manifest_path = make_synthetic_corpus(root / "corpus", seed=0)
        self.script_path = make_script(root / "scripts")
        self.manifest = load_manifest(self.manifest_path)
        self.inventory = load_inventory(self.manifest.inventory_path)
        self.norm = load_normalization(self.manifest.normalization_path)
        self.mel_config = MelConfig.from_dict(self.manifest.audio)
        self.conversations = load_corpus(self.manifest_path)
        self.provider = StubEmbeddingProvider(dim=EMBED_DIM, seed=0)

    def examples(self, variant):
        return prepare_examples(
            self.conversations,
            self.manifest,
            self.inventory,
            self.norm,
            self.provider,
            self.mel_config,
            variant,
        )

    def model_config(self, variant):
        return desk_model_config(len(self.inventory), variant, EMBED_DIM)


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    return CorpusFixture(tmp_path_factory.mktemp("synthetic"))


@pytest.fixture(scope="session")
def overfit_runs(corpus, tmp_path_factory):
    """500-step overfit runs for all three variants (shared, expensive).

    Returns ``(runs, elapsed_seconds)`` where ``runs`` maps variant to
    ``(TrainResult, examples)``.
    """
    import time

    out_root = tmp_path_factory.mktemp("overfit")
    runs = {}
    t0 = time.monotonic()
    for variant in ("M1", "M2", "M3"):
        examples = corpus.examples(variant)
        cfg = TrainConfig(
            batch_size=8, steps=OVERFIT_STEPS, seed=0, model_variant=variant
        )
        result = train(
            cfg,
            corpus.model_config(variant),
            examples,
            out_dir=out_root / variant,
            inventory=corpus.inventory,
            norm=corpus.norm,
            speaker_labels=corpus.manifest.speaker_labels,
            audio_config=corpus.manifest.audio,
        )
        result.model.eval()
        runs[variant] = (result, examples)
    return runs, time.monotonic() - t0
