"""Loss, Adam, metrics, the training loop with AUC early stopping, and the multi-run protocol."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .model import CATEGORIES, Model, ModelConfig, VariantId, build, decide
from .ndmath import DTYPE, NumericError, ShapeError, derive_rng, sigmoid

log = logging.getLogger(__name__)

BCE_EPS = 1e-7
# multitask weights in CATEGORIES order: half on harassment, half split 1/5, 2/5, 2/5 over types
LOSS_WEIGHTS = {"harassment": 0.5, "sexual": 0.5 * 0.2, "indirect": 0.5 * 0.4, "physical": 0.5 * 0.4}
TABLE_COLUMNS = ("sexual_f1", "indirect_f1", "physical_f1", "harassment_f1", "f1_macro")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 32
    max_epochs: int = 20
    patience: int = 10
    threshold: float = 0.33
    seed: int = 1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    freeze_embeddings: bool = False

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience > self.max_epochs:
            raise ValueError("patience must not exceed max_epochs")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must be in (0, 1)")


@dataclass
class Example:
    indices: np.ndarray
    labels: np.ndarray  # float64, CATEGORIES order
    id: str = ""


# -- loss ------------------------------------------------------------------

def bce(y: Sequence[float], y_hat: Sequence[float]) -> float:
    y = np.asarray(y, dtype=DTYPE)
    p = np.asarray(y_hat, dtype=DTYPE)
    if y.shape != p.shape:
        raise ShapeError(f"bce: labels {y.shape} vs predictions {p.shape}")
    p = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def multitask_loss(b_har: float, b_sex: float, b_ind: float, b_phys: float) -> float:
    return 0.5 * b_har + 0.5 * (0.2 * b_sex + 0.4 * b_ind + 0.4 * b_phys)


def batch_loss_and_grads(model: Model, batch: Sequence[Example], training: bool = False,
                         rng: np.random.Generator | None = None, grads: dict | None = None):
    """Multitask loss over a batch and its gradient w.r.t. every parameter.

    Each example is run on its own (no padding); per-example gradients are
    summed and divided by the batch size, matching the mean inside BCE.
    """
    n = len(batch)
    if grads is None:
        grads = model.zero_grads()
    probs = np.empty((n, len(CATEGORIES)), dtype=DTYPE)
    labels = np.empty((n, len(CATEGORIES)), dtype=DTYPE)
    weights = np.array([LOSS_WEIGHTS[c] for c in CATEGORIES], dtype=DTYPE)
    for i, ex in enumerate(batch):
        logits, cache = model.forward(ex.indices, training=training, rng=rng)
        p = sigmoid(logits)
        probs[i], labels[i] = p, ex.labels
        # d BCE / d logit = p - y inside the clamp, 0 where the clamp is active
        live = (p > BCE_EPS) & (p < 1.0 - BCE_EPS)
        dlogits = np.where(live, p - ex.labels, 0.0) * weights / n
        model.backward(cache, dlogits, grads)
    per_cat = {c: bce(labels[:, j], probs[:, j]) for j, c in enumerate(CATEGORIES)}
    loss = multitask_loss(per_cat["harassment"], per_cat["sexual"], per_cat["indirect"], per_cat["physical"])
    return loss, grads


# -- Adam ------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState,
              cfg: TrainConfig, skip: Iterable[str] = ()) -> AdamState:
    """Bias-corrected Adam, updating ``params`` in place."""
    skip = set(skip)
    for name, g in grads.items():
        if name in skip:
            continue
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
        if g.shape != params[name].shape:
            raise ShapeError(f"gradient {name} {g.shape} vs parameter {params[name].shape}")
    state.t += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, g in grads.items():
        if name in skip:
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        params[name] -= cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)
    return state


# -- metrics ---------------------------------------------------------------

def auc_with_flag(scores: Sequence[float], labels: Sequence[int]) -> tuple[float, bool]:
    """ROC AUC as normalized Mann-Whitney U; ``(0.5, True)`` when a class is absent."""
    s = np.asarray(scores, dtype=DTYPE)
    y = np.asarray(labels)
    if s.size == 0:
        raise ValueError("auc of an empty sample")
    if s.shape != y.shape:
        raise ShapeError(f"auc: scores {s.shape} vs labels {y.shape}")
    pos = s[y == 1]
    neg = s[y != 1]
    if pos.size == 0 or neg.size == 0:
        return 0.5, True
    neg_sorted = np.sort(neg)
    below = np.searchsorted(neg_sorted, pos, side="left")
    upto = np.searchsorted(neg_sorted, pos, side="right")
    # concordant pairs + half the ties, kept as integers until the final division
    twice_u = int(np.sum(below)) * 2 + int(np.sum(upto - below))
    return twice_u / (2.0 * pos.size * neg.size), False


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    value, degenerate = auc_with_flag(scores, labels)
    if degenerate:
        log.debug("AUC undefined with a single class present; using 0.5")
    return value


def f1(pred_labels: Sequence[int], true_labels: Sequence[int]) -> float:
    p = np.asarray(pred_labels).astype(bool)
    t = np.asarray(true_labels).astype(bool)
    if p.shape != t.shape:
        raise ShapeError(f"f1: predictions {p.shape} vs labels {t.shape}")
    tp = int(np.sum(p & t))
    fp = int(np.sum(p & ~t))
    fn = int(np.sum(~p & t))
    if tp + fp == 0 or tp + fn == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


@dataclass
class MetricsReport:
    f1: dict
    f1_macro: float
    auc: dict
    auc_avg: float
    seed: int | None = None
    best_epoch: int | None = None
    degenerate_auc: list = field(default_factory=list)

    def table_row(self) -> dict:
        row = {f"{c}_f1": self.f1[c] for c in ("sexual", "indirect", "physical", "harassment")}
        row["f1_macro"] = self.f1_macro
        return row

    def to_dict(self) -> dict:
        return asdict(self)


def score_dataset(model: Model, data: Sequence[Example]) -> np.ndarray:
    out = np.empty((len(data), len(CATEGORIES)), dtype=DTYPE)
    for i, ex in enumerate(data):
        out[i] = model.score(ex.indices)
    return out


def report_from_scores(scores: np.ndarray, labels: np.ndarray, threshold: float, **meta) -> MetricsReport:
    decided = np.array([decide(row, threshold) for row in scores], dtype=int).reshape(scores.shape)
    f1s, aucs, degenerate = {}, {}, []
    for j, c in enumerate(CATEGORIES):
        f1s[c] = f1(decided[:, j], labels[:, j])
        aucs[c], flag = auc_with_flag(scores[:, j], labels[:, j])
        if flag:
            degenerate.append(c)
    if degenerate:
        log.warning("single-class categories %s: AUC set to 0.5", ", ".join(degenerate))
    return MetricsReport(
        f1=f1s,
        f1_macro=float(np.mean([f1s[c] for c in CATEGORIES])),
        auc=aucs,
        auc_avg=float(np.mean([aucs[c] for c in CATEGORIES])),
        degenerate_auc=degenerate,
        **meta,
    )


def evaluate(model: Model, data: Sequence[Example], threshold: float = 0.33, **meta) -> MetricsReport:
    if not data:
        raise ValueError("cannot evaluate on an empty dataset")
    labels = np.array([ex.labels for ex in data], dtype=DTYPE)
    return report_from_scores(score_dataset(model, data), labels, threshold, **meta)


# -- training loop ---------------------------------------------------------

class EarlyStopping:
    """Track the best validation value; signal a stop after ``patience`` epochs without a strict improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -math.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch: int, value: float) -> bool:
        """Record ``value``; returns True when it is a new best."""
        if value > self.best:
            self.best, self.best_epoch, self.bad_epochs = value, epoch, 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


def train(model: Model, train_set: Sequence[Example], val_set: Sequence[Example], cfg: TrainConfig,
          on_epoch: Callable[[dict], None] | None = None, validate: Callable[[Model], float] | None = None):
    """Mini-batch Adam with early stopping on validation average AUC.

    Returns ``(best_model, history)``; the model passed in is left at its
    last-epoch parameters.  ``validate`` overrides the stopping metric, and
    ``on_epoch`` may return True to end training after that epoch.
    """
    if not train_set or not val_set:
        raise ValueError("train and validation sets must be non-empty")
    shuffle_rng = derive_rng(cfg.seed, "shuffle")
    dropout_rng = derive_rng(cfg.seed, "dropout")
    state = AdamState()
    skip = ("embedding",) if cfg.freeze_embeddings else ()
    stopper = EarlyStopping(cfg.patience)
    best_params = {k: v.copy() for k, v in model.params.items()}
    history = []
    n = len(train_set)
    for epoch in range(1, cfg.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        total, n_batches = 0.0, 0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            batch = [train_set[i] for i in order[start: start + cfg.batch_size]]
            loss, grads = batch_loss_and_grads(model, batch, training=True, rng=dropout_rng)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b + 1}")
            adam_step(model.params, grads, state, cfg, skip=skip)
            total += loss
            n_batches += 1
        if validate is not None:
            val_value = float(validate(model))
            entry = {"epoch": epoch, "loss": total / n_batches, "val_auc_avg": val_value}
        else:
            rep = evaluate(model, val_set, cfg.threshold)
            val_value = rep.auc_avg
            entry = {"epoch": epoch, "loss": total / n_batches, "val_auc_avg": rep.auc_avg,
                     "val_f1_macro": rep.f1_macro, "val_auc": rep.auc}
        improved = stopper.update(epoch, val_value)
        entry["best"] = improved
        if improved:
            best_params = {k: v.copy() for k, v in model.params.items()}
        history.append(entry)
        log.info("epoch %d loss %.5f val auc_avg %.5f%s", epoch, entry["loss"], val_value, " *" if improved else "")
        if on_epoch is not None and on_epoch(entry):
            break
        if stopper.should_stop:
            break
    best = Model(model.config, best_params, model.vocab, model.clean_config)
    return best, {"epochs": history, "best_epoch": stopper.best_epoch, "best_val_auc_avg": stopper.best}


# -- protocol --------------------------------------------------------------

@dataclass
class ProtocolRow:
    variant: str
    mean: dict
    std: dict
    runs: list


def run_once(model_cfg: ModelConfig, train_cfg: TrainConfig, embeddings, vocab, clean_config,
             train_set, val_set, eval_set) -> MetricsReport:
    model = build(model_cfg, embeddings, vocab, clean_config)
    best, history = train(model, train_set, val_set, train_cfg)
    return evaluate(best, eval_set, train_cfg.threshold, seed=train_cfg.seed, best_epoch=history["best_epoch"])


def run_protocol(variants: Sequence[VariantId], base_model_cfg: ModelConfig, train_cfg: TrainConfig,
                 embeddings, train_set, val_set, eval_set, n_runs: int = 10, seeds: Sequence[int] | None = None,
                 vocab=None, clean_config=None, on_run: Callable | None = None) -> list[ProtocolRow]:
    """Train every variant ``n_runs`` times (seeds 1..n by default) and average the eval metrics."""
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    seeds = list(seeds) if seeds is not None else list(range(1, n_runs + 1))
    if len(seeds) != n_runs:
        raise ValueError("need one seed per run")
    rows = []
    for v in variants:
        reports = []
        for s in seeds:
            mcfg = ModelConfig(**{**base_model_cfg.to_dict(), "variant": v, "seed": s})
            tcfg = TrainConfig(**{**asdict(train_cfg), "seed": s})
            try:
                rep = run_once(mcfg, tcfg, embeddings, vocab, clean_config, train_set, val_set, eval_set)
            except Exception as exc:
                raise TrainingError(f"run failed for variant {v.value}, seed {s}: {exc}") from exc
            reports.append(rep)
            if on_run is not None:
                on_run(v, s, rep)
        table = np.array([[r.table_row()[c] for c in TABLE_COLUMNS] for r in reports])
        rows.append(ProtocolRow(
            variant=v.value,
            mean=dict(zip(TABLE_COLUMNS, table.mean(axis=0).tolist())),
            std=dict(zip(TABLE_COLUMNS, table.std(axis=0).tolist())),
            runs=[r.to_dict() for r in reports],
        ))
    return rows
