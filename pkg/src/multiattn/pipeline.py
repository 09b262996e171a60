"""Run specification (flat key=value config) and corpus -> examples plumbing."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

from .augment import AugmentPolicy, augment_dataset, make_backend
from .corpus import CorpusRow, parse_column_map, read_corpus, split_rows
from .embeddings import Vocab, build_vocab, encode, load_embeddings, random_embeddings
from .model import ConfigError, ModelConfig, VariantId
from .ndmath import derive_rng
from .textprep import CleanConfig, preprocess
from .training import Example, TrainConfig

log = logging.getLogger(__name__)


@dataclass
class RunSpec:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    corpus: str | None = None
    embeddings: str | None = None
    out_dir: str = "runs/out"
    min_freq: int = 1
    column_map: str = ""
    augment: bool = True
    augment_backend: str = "shuffle"
    pivots: str = "de,fr,el"
    augment_categories: str = "indirect,physical"
    dedup: bool = True
    mt_endpoint: str = ""
    mt_token_env: str = "MT_API_TOKEN"
    mt_auth_header: str = "Authorization"
    mt_timeout: float = 30.0
    cassette: str = ""
    runs: int = 10
    variants: str = "all"
    seed: int = 1

    def policy(self) -> AugmentPolicy:
        return AugmentPolicy(
            pivot_langs=tuple(p.strip() for p in self.pivots.split(",") if p.strip()),
            target_categories=frozenset(c.strip() for c in self.augment_categories.split(",") if c.strip()),
            dedup=self.dedup,
        )

    def variant_list(self) -> list[VariantId]:
        if self.variants.strip().lower() == "all":
            return list(VariantId)
        return [VariantId.parse(v.strip()) for v in self.variants.split(",") if v.strip()]

    def flat(self) -> dict:
        out = {}
        out.update(self.model.to_dict())
        out.update(asdict(self.train))
        for f in fields(self):
            if f.name not in ("model", "train"):
                out[f.name] = getattr(self, f.name)
        return out

    def dump(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in sorted(self.flat().items()) if v is not None)


_MODEL_KEYS = {f.name: f for f in fields(ModelConfig)}
_TRAIN_KEYS = {f.name: f for f in fields(TrainConfig)}
_SPEC_KEYS = {f.name: f for f in fields(RunSpec) if f.name not in ("model", "train")}


def _convert(key: str, raw, typ):
    if raw is None:
        return None
    if not isinstance(raw, str):
        return raw
    typ = str(typ)
    try:
        if "bool" in typ:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ.startswith("int"):
            return int(raw)
        if typ.startswith("float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"config key {key}: cannot parse {raw!r} as {typ}") from None
    return raw.strip()


def read_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def make_runspec(values: dict) -> RunSpec:
    """Build a RunSpec from flat values; ``seed`` is the root seed for model and training."""
    unknown = set(values) - set(_MODEL_KEYS) - set(_TRAIN_KEYS) - set(_SPEC_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    spec_kw = {k: _convert(k, v, _SPEC_KEYS[k].type) for k, v in values.items() if k in _SPEC_KEYS and v is not None}
    seed = spec_kw.get("seed", 1)
    model_kw = {k: _convert(k, v, _MODEL_KEYS[k].type) for k, v in values.items()
                if k in _MODEL_KEYS and k != "variant" and v is not None}
    if values.get("variant") is not None:
        model_kw["variant"] = VariantId.parse(str(values["variant"]))
    train_kw = {k: _convert(k, v, _TRAIN_KEYS[k].type) for k, v in values.items() if k in _TRAIN_KEYS and v is not None}
    model_kw["seed"] = seed
    train_kw["seed"] = seed
    try:
        return RunSpec(model=ModelConfig(**model_kw), train=TrainConfig(**train_kw), **spec_kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


# -- data preparation ------------------------------------------------------

@dataclass
class PreparedData:
    rows: list
    vocab: Vocab
    embeddings: object
    splits: dict
    augment_report: dict | None = None


def to_examples(rows: Sequence[CorpusRow], vocab: Vocab, max_len: int, clean_cfg: CleanConfig) -> list[Example]:
    return [Example(encode(preprocess(r.text, clean_cfg), vocab, max_len), r.labels(), r.id) for r in rows]


def prepare(spec: RunSpec, clean_cfg: CleanConfig | None = None, augment: bool | None = None) -> PreparedData:
    """Corpus -> (optional augmentation) -> tokens -> vocab/embeddings -> encoded splits."""
    clean_cfg = clean_cfg or CleanConfig()
    if not spec.corpus:
        raise ConfigError("no corpus given")
    if not Path(spec.corpus).exists():
        raise FileNotFoundError(f"corpus not found: {spec.corpus}")
    if spec.embeddings and not Path(spec.embeddings).exists():
        raise FileNotFoundError(f"embeddings file not found: {spec.embeddings}")
    rows = read_corpus(spec.corpus, parse_column_map(spec.column_map))
    report = None
    if spec.augment if augment is None else augment:
        backend = make_backend(spec.augment_backend, seed=spec.seed, endpoint=spec.mt_endpoint or None,
                               token_env=spec.mt_token_env, auth_header=spec.mt_auth_header,
                               timeout=spec.mt_timeout, cassette=spec.cassette or None)
        rows, rep = augment_dataset(rows, spec.policy(), backend)
        report = rep.to_dict()
        log.info("augmentation added %d training rows", rep.added)
    train_rows = split_rows(rows, "train")
    if not train_rows:
        raise ConfigError("corpus has no train split")
    vocab = build_vocab((preprocess(r.text, clean_cfg) for r in train_rows), spec.min_freq)
    rng = derive_rng(spec.seed, "oov")
    d = spec.model.d
    if spec.embeddings:
        emb = load_embeddings(spec.embeddings, vocab, rng, d)
        log.info("embeddings cover %d of %d vocabulary tokens", emb.found, len(vocab) - 2)
    else:
        emb = random_embeddings(vocab, d, rng)
    splits = {s: to_examples(split_rows(rows, s), vocab, spec.model.max_len, clean_cfg)
              for s in ("train", "validation", "test")}
    return PreparedData(rows, vocab, emb, splits, report)
