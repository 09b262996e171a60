from pathlib import Path

import numpy as np
import pytest

from multiattn.embeddings import EmbeddingMatrix, Vocab
from multiattn.model import ModelConfig, VariantId, build
from multiattn.ndmath import make_rng
from multiattn.training import Example

FIXTURES = Path(__file__).parent / "fixtures"
SMOKE_CSV = FIXTURES / "smoke.csv"
OVERFIT_CSV = FIXTURES / "overfit64.csv"

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE_RESULTS: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE_RESULTS):
        status, detail = ACCEPTANCE_RESULTS[num]
        terminalreporter.write_line(f"criterion {num:>2}: {status:<4} {detail}")


def tiny_model(variant=VariantId.MultiProjectedAttentionRNN, vocab_size=20, dim=8, seed=3, emb_scale=1.0):
    """Small model for gradient checks; unit-scale embeddings keep ReLU units away from their kink."""
    vocab = Vocab([f"w{i}" for i in range(vocab_size - 2)])
    cfg = ModelConfig(variant=variant, d=dim, m=dim, proj_width=dim, head_width=dim, attn_hidden=dim,
                      dropout_rate=0.0, seed=seed)
    emb = EmbeddingMatrix(make_rng(seed + 100).normal(0.0, emb_scale, (vocab_size, dim)))
    emb.matrix[0] = 0.0
    return build(cfg, emb, vocab)


def tiny_batch(vocab_size=20, seed=11):
    rng = make_rng(seed)
    return [
        Example(rng.integers(1, vocab_size, 6), np.array([1.0, 0.0, 1.0, 0.0])),
        Example(rng.integers(1, vocab_size, 4), np.array([1.0, 1.0, 0.0, 0.0])),
    ]


def min_relu_margin(model, batch, training=False, seed=None):
    """Smallest |pre-activation| over every ReLU unit the batch touches."""
    margin = np.inf
    rng = make_rng(seed) if seed is not None else None
    for ex in batch:
        _, cache = model.forward(ex.indices, training=training, rng=rng)
        for head in cache.heads.values():
            for _, c in head:
                x, W, z, a, act = c
                if act == "relu":
                    margin = min(margin, float(np.abs(z).min()))
    return margin


@pytest.fixture
def vocab20():
    return Vocab([f"w{i}" for i in range(18)])


@pytest.fixture(scope="session")
def overfit_run(tmp_path_factory):
    """Train MultiProjectedAttentionRNN on the separable fixture until it fits.

    Stops once training f1_macro is 1.0 and the epoch loss is below 0.05.
    The fitted (last-epoch) model is saved so CLI tests can evaluate it.
    """
    import time

    from multiattn import model as M
    from multiattn.pipeline import make_runspec, prepare
    from multiattn.training import TrainConfig, evaluate, train

    spec = make_runspec({"corpus": str(OVERFIT_CSV), "variant": "MultiProjectedAttentionRNN", "augment": False})
    data = prepare(spec)
    examples = data.splits["train"]
    model = M.build(spec.model, data.embeddings, data.vocab)
    state = {"epochs": 0, "f1_macro": 0.0, "loss": float("inf")}

    def on_epoch(entry):
        rep = evaluate(model, examples)
        state.update(epochs=entry["epoch"], f1_macro=rep.f1_macro, loss=entry["loss"])
        return rep.f1_macro == 1.0 and entry["loss"] < 0.05

    start = time.perf_counter()
    train(model, examples, examples, TrainConfig(max_epochs=200, patience=200), on_epoch=on_epoch)
    state["seconds"] = time.perf_counter() - start
    ckpt = tmp_path_factory.mktemp("overfit") / "model.ckpt"
    M.save(model, ckpt)
    state["checkpoint"] = ckpt
    return state
