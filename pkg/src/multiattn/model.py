"""The eight GRU classifier variants, scoring, the decision rule and checkpoints.

Parameter count (``Model.n_params`` checks against this), with
``d_in = proj_width`` for projected variants and ``d`` otherwise::

    embedding   |V| * d
    projection  proj_width * d + proj_width                      (projected only)
    GRU         3 * (m * d_in + m * m + m)
    attention   n_attn * (attn_hidden*m + attn_hidden
                          + (attn_layers-1) * (attn_hidden**2 + attn_hidden)
                          + attn_hidden + 1)                     (n_attn = 0, 1 or 4)
    heads       4 * (head_width*m + head_width
                     + (head_layers-1) * (head_width**2 + head_width)
                     + head_width + 1)
"""
from __future__ import annotations

import enum
import io
import json
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import layers as L
from .embeddings import EmbeddingMatrix, Vocab
from .ndmath import DTYPE, derive_rng, sigmoid
from .textprep import CleanConfig

# output order of every score/label vector
CATEGORIES = ("harassment", "indirect", "sexual", "physical")
TYPES = ("indirect", "sexual", "physical")
# exact-tie priority among types: highest train-set prevalence first
TIE_PRIORITY = ("sexual", "indirect", "physical")


class ConfigError(ValueError):
    pass


class CheckpointError(RuntimeError):
    pass


class VariantId(str, enum.Enum):
    LastStateRNN = "LastStateRNN"
    AvgRNN = "AvgRNN"
    AttentionRNN = "AttentionRNN"
    MultiAttentionRNN = "MultiAttentionRNN"
    ProjectedLastStateRNN = "ProjectedLastStateRNN"
    ProjectedAvgRNN = "ProjectedAvgRNN"
    ProjectedAttentionRNN = "ProjectedAttentionRNN"
    MultiProjectedAttentionRNN = "MultiProjectedAttentionRNN"

    @property
    def projected(self) -> bool:
        return "Projected" in self.value

    @property
    def pooling(self) -> str:
        v = self.value
        if v.startswith("Multi"):
            return "multi"
        if "Attention" in v:
            return "attention"
        if "Avg" in v:
            return "avg"
        return "last"

    @property
    def n_attention(self) -> int:
        return {"multi": 4, "attention": 1}.get(self.pooling, 0)

    @classmethod
    def parse(cls, name: str) -> "VariantId":
        for v in cls:
            if v.value.lower() == name.lower():
                return v
        raise ConfigError(f"unknown variant {name!r}; expected one of {[v.value for v in cls]}")


@dataclass
class ModelConfig:
    variant: VariantId = VariantId.MultiProjectedAttentionRNN
    d: int = 200
    m: int = 128
    proj_width: int = 128
    head_width: int = 128
    head_layers: int = 1
    attn_hidden: int = 128
    attn_layers: int = 1
    dropout_rate: float = 0.2
    max_len: int = 70
    seed: int = 1

    def __post_init__(self):
        if not isinstance(self.variant, VariantId):
            self.variant = VariantId.parse(str(self.variant))
        for name in ("d", "m", "proj_width", "head_width", "head_layers", "attn_hidden", "attn_layers", "max_len"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must be in [0, 1)")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["variant"] = self.variant.value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})


class ScoreVector(NamedTuple):
    harassment: float
    indirect: float
    sexual: float
    physical: float


class LabelVector(NamedTuple):
    harassment: int
    indirect: int
    sexual: int
    physical: int


def expected_param_count(cfg: ModelConfig, vocab_size: int) -> int:
    d_in = cfg.proj_width if cfg.variant.projected else cfg.d
    m, q, w = cfg.m, cfg.attn_hidden, cfg.head_width
    n = vocab_size * cfg.d
    if cfg.variant.projected:
        n += cfg.proj_width * cfg.d + cfg.proj_width
    n += 3 * (m * d_in + m * m + m)
    n += cfg.variant.n_attention * (q * m + q + (cfg.attn_layers - 1) * (q * q + q) + q + 1)
    n += 4 * (w * m + w + (cfg.head_layers - 1) * (w * w + w) + w + 1)
    return n


@dataclass
class ForwardCache:
    indices: np.ndarray
    drop_mask: np.ndarray | None
    proj: tuple | None
    gru: L.GruCache
    pools: dict
    heads: dict


class Model:
    """A built classifier: config, vocabulary, text settings and named parameters.

    ``params`` maps dotted names to float64 arrays (``embedding``,
    ``proj.W``, ``gru.U_z``, ``attn.sexual.l0.W``, ``head.sexual.out.b``...).
    """

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray], vocab: Vocab | None = None,
                 clean_config: CleanConfig | None = None):
        self.config = config
        self.params = params
        self.vocab = vocab
        self.clean_config = clean_config or CleanConfig()
        self._check()

    @property
    def attention_names(self) -> list[str]:
        n = self.config.variant.n_attention
        return [] if n == 0 else (["shared"] if n == 1 else list(CATEGORIES))

    def _check(self):
        cfg = self.config
        emb = self.params["embedding"]
        if emb.ndim != 2 or emb.shape[1] != cfg.d:
            raise ConfigError(f"embedding matrix {emb.shape} does not have width d={cfg.d}")
        if self.vocab is not None and len(self.vocab) != emb.shape[0]:
            raise ConfigError(f"vocabulary size {len(self.vocab)} != embedding rows {emb.shape[0]}")
        d_in = cfg.proj_width if cfg.variant.projected else cfg.d
        if self.params["gru.W_h"].shape != (cfg.m, d_in):
            raise ConfigError(f"GRU input weights {self.params['gru.W_h'].shape}, expected {(cfg.m, d_in)}")

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def _names(self, prefix: str) -> list[tuple[str, str]]:
        """(short, dotted) names under ``prefix``; the key set is fixed once built."""
        if getattr(self, "_groups_for", None) is not self.params:
            groups: dict[str, list] = {}
            for full in self.params:
                head, _, rest = full.partition(".")
                groups.setdefault(head, []).append((rest, full))
                if rest:
                    mid, _, short = rest.partition(".")
                    groups.setdefault(f"{head}.{mid}", []).append((short, full))
            self._groups, self._groups_for = groups, self.params
        return self._groups.get(prefix, [])

    def sub(self, prefix: str) -> dict[str, np.ndarray]:
        return {short: self.params[full] for short, full in self._names(prefix)}

    def copy(self) -> "Model":
        return Model(self.config, {k: v.copy() for k, v in self.params.items()}, self.vocab, self.clean_config)

    # -- forward/backward --------------------------------------------------

    def forward(self, indices: np.ndarray, training: bool = False, rng: np.random.Generator | None = None):
        """Four logits in ``CATEGORIES`` order plus the cache for ``backward``."""
        cfg = self.config
        indices = np.asarray(indices, dtype=np.int64)
        if indices.ndim != 1 or indices.size == 0:
            raise ValueError("cannot score an empty sequence")
        x = self.params["embedding"][indices]
        x, mask = L.spatial_dropout(x, cfg.dropout_rate, rng, training)
        pcache = None
        if cfg.variant.projected:
            x, pcache = L.project_forward(x, self.sub("proj"))
        states, gcache = L.gru_forward(x, self.sub("gru"))

        pooling = cfg.variant.pooling
        pools: dict = {}
        contexts: dict[str, np.ndarray] = {}
        if pooling == "last":
            ctx = states[-1]
            contexts = {c: ctx for c in CATEGORIES}
        elif pooling == "avg":
            ctx = states.mean(axis=0)
            contexts = {c: ctx for c in CATEGORIES}
        else:
            for name in self.attention_names:
                _, h_sum, acache = L.attention_forward(states, self.sub(f"attn.{name}"))
                pools[name] = acache
                if name == "shared":
                    contexts = {c: h_sum for c in CATEGORIES}
                else:
                    contexts[name] = h_sum

        logits = np.empty(len(CATEGORIES), dtype=DTYPE)
        heads = {}
        for i, c in enumerate(CATEGORIES):
            _, logits[i], heads[c] = L.head_forward(contexts[c], self.sub(f"head.{c}"))
        return logits, ForwardCache(indices, mask, pcache, gcache, pools, heads)

    def backward(self, cache: ForwardCache, dlogits: np.ndarray, grads: dict[str, np.ndarray]) -> None:
        """Accumulate gradients of ``sum(dlogits * logits)`` into ``grads`` (dotted names)."""
        if cache is None:
            raise L.LayerStateError("model backward called without a forward cache")
        cfg = self.config
        k = cache.indices.size
        sub_grads: dict[str, dict] = {}

        def g(prefix):
            # views of the caller's arrays, so layers accumulate in place
            if prefix not in sub_grads:
                sub_grads[prefix] = {short: grads[full] for short, full in self._names(prefix) if full in grads}
            return sub_grads[prefix]

        dctx = {}
        for i, c in enumerate(CATEGORIES):
            dctx[c] = L.head_backward(cache.heads[c], float(dlogits[i]), g(f"head.{c}"))

        m = cfg.m
        dstates = np.zeros((k, m), dtype=DTYPE)
        pooling = cfg.variant.pooling
        if pooling in ("last", "avg"):
            total = sum(dctx.values())
            if pooling == "last":
                dstates[-1] = total
            else:
                dstates += total / k
        elif pooling == "attention":
            dstates += L.attention_backward(cache.pools["shared"], sum(dctx.values()), g("attn.shared"))
        else:
            for c in CATEGORIES:
                dstates += L.attention_backward(cache.pools[c], dctx[c], g(f"attn.{c}"))

        dx, _ = L.gru_backward(cache.gru, dstates, self.sub("gru"), g("gru"))
        if cfg.variant.projected:
            dx = L.project_backward(cache.proj, dx, g("proj"))
        dx = L.spatial_dropout_backward(cache.drop_mask, dx)

        for prefix, gs in sub_grads.items():
            for name, val in gs.items():
                full = f"{prefix}.{name}"
                if full not in grads:
                    grads[full] = val
        if "embedding" not in grads:
            grads["embedding"] = np.zeros_like(self.params["embedding"])
        np.add.at(grads["embedding"], cache.indices, dx)

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    # -- inference ---------------------------------------------------------

    def score(self, indices) -> ScoreVector:
        logits, _ = self.forward(indices, training=False)
        return ScoreVector(*(float(p) for p in sigmoid(logits)))

    def score_text(self, text: str) -> ScoreVector:
        from .embeddings import encode
        from .textprep import preprocess

        if self.vocab is None:
            raise ConfigError("model has no vocabulary attached")
        return self.score(encode(preprocess(text, self.clean_config), self.vocab, self.config.max_len))


def build(config: ModelConfig, embeddings: EmbeddingMatrix | np.ndarray, vocab: Vocab | None = None,
          clean_config: CleanConfig | None = None) -> Model:
    """Wire a variant: embedding -> dropout -> [projection] -> GRU -> pooling -> four heads."""
    mat = embeddings.matrix if isinstance(embeddings, EmbeddingMatrix) else embeddings
    if mat.ndim != 2 or mat.shape[1] != config.d:
        raise ConfigError(f"embedding width {mat.shape[-1]} != configured d={config.d}")
    rng = derive_rng(config.seed, "init")
    v = config.variant
    params: dict[str, np.ndarray] = {"embedding": np.array(mat, dtype=DTYPE, copy=True)}
    d_in = config.d
    if v.projected:
        for k, t in L.init_projection(config.d, config.proj_width, rng).items():
            params[f"proj.{k}"] = t
        d_in = config.proj_width
    for k, t in L.init_gru(d_in, config.m, rng).items():
        params[f"gru.{k}"] = t
    names = [] if v.n_attention == 0 else (["shared"] if v.n_attention == 1 else list(CATEGORIES))
    for name in names:
        for k, t in L.init_attention(config.m, config.attn_hidden, config.attn_layers, rng).items():
            params[f"attn.{name}.{k}"] = t
    for c in CATEGORIES:
        for k, t in L.init_head(config.m, config.head_width, config.head_layers, rng).items():
            params[f"head.{c}.{k}"] = t
    return Model(config, params, vocab, clean_config)


def decide(scores: Sequence[float], threshold: float = 0.33) -> LabelVector:
    """Gate on the harassment score, then pick the single highest-scoring type.

    Exact ties among types resolve sexual, then indirect, then physical.
    """
    s = ScoreVector(*scores)
    if s.harassment < threshold:
        return LabelVector(0, 0, 0, 0)
    best = TIE_PRIORITY[0]
    for t in TIE_PRIORITY[1:]:
        if getattr(s, t) > getattr(s, best):
            best = t
    return LabelVector(1, int(best == "indirect"), int(best == "sexual"), int(best == "physical"))


# -- checkpoints -----------------------------------------------------------

MAGIC = b"MATTNCKP"
FORMAT_VERSION = 1


def save(model: Model, path) -> None:
    """Header (magic, version, JSON description) then little-endian float64 payloads."""
    tensors = []
    offset = 0
    for name, arr in model.params.items():
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    header = {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "clean_config": asdict(model.clean_config),
        "vocab": model.vocab.index_to_token if model.vocab is not None else None,
        "tensors": tensors,
        "payload_bytes": offset,
    }
    hbytes = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", FORMAT_VERSION, len(hbytes)))
    buf.write(hbytes)
    for arr in model.params.values():
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load(path) -> Model:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    pos = len(MAGIC)
    if len(raw) < pos + 8:
        raise CheckpointError(f"{path}: truncated header")
    version, hlen = struct.unpack("<II", raw[pos: pos + 8])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, this build reads {FORMAT_VERSION}")
    pos += 8
    try:
        header = json.loads(raw[pos: pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    pos += hlen
    payload = raw[pos:]
    if len(payload) != header.get("payload_bytes"):
        raise CheckpointError(f"{path}: payload is {len(payload)} bytes, header says {header.get('payload_bytes')}")
    params = {}
    for t in header["tensors"]:
        n = int(np.prod(t["shape"])) if t["shape"] else 1
        chunk = payload[t["offset"]: t["offset"] + 8 * n]
        if len(chunk) != 8 * n:
            raise CheckpointError(f"{path}: tensor {t['name']} is truncated")
        params[t["name"]] = np.frombuffer(chunk, dtype="<f8").astype(DTYPE).reshape(t["shape"])
    try:
        config = ModelConfig.from_dict(header["config"])
        vocab = Vocab(header["vocab"][2:]) if header.get("vocab") else None
        clean_cfg = CleanConfig(**header.get("clean_config", {}))
        return Model(config, params, vocab, clean_cfg)
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: inconsistent checkpoint ({exc})") from exc
