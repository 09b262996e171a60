"""Back-translation augmentation of rare harassment types with pluggable translators."""
from __future__ import annotations

import json
import logging
import os
import random
import threading
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from .corpus import CorpusRow

log = logging.getLogger(__name__)

SOURCE_LANG = "en"
DEFAULT_PIVOTS = ("de", "fr", "el")
AUGMENTABLE = ("indirect", "sexual", "physical")


class AugmentationError(RuntimeError):
    def __init__(self, message: str, pivot: str | None = None, example_id: str | None = None):
        super().__init__(message)
        self.pivot = pivot
        self.example_id = example_id


class TranslationBackend:
    """Base class: ``translate(text, src, tgt)`` for supported language pairs."""

    name = "base"
    max_concurrency = 1
    languages: frozenset | None = None  # None means any pair

    def supports(self, src: str, tgt: str) -> bool:
        return self.languages is None or (src in self.languages and tgt in self.languages)

    def translate(self, text: str, src: str, tgt: str) -> str:
        raise NotImplementedError


class IdentityBackend(TranslationBackend):
    name = "identity"

    def translate(self, text, src, tgt):
        return text


class ShuffleBackend(TranslationBackend):
    """Offline stand-in for MT: a seeded, input-keyed word-order perturbation.

    The permutation depends only on (seed, text, tgt), so results do not
    depend on call order or concurrency.
    """

    name = "shuffle"

    def __init__(self, seed: int = 0, swaps: int = 1):
        self.seed = seed
        self.swaps = swaps

    def translate(self, text, src, tgt):
        words = text.split()
        if len(words) < 2:
            return text
        key = zlib.crc32(f"{self.seed}\x00{src}\x00{tgt}\x00{text}".encode("utf-8"))
        rnd = random.Random(key)
        for _ in range(self.swaps):
            i, j = rnd.sample(range(len(words)), 2)
            words[i], words[j] = words[j], words[i]
        return " ".join(words)


class HttpBackend(TranslationBackend):
    """Client for MT services speaking ``{"q", "source", "target"} -> {"translatedText"}``."""

    name = "http"

    def __init__(self, endpoint: str, token_env: str | None = "MT_API_TOKEN", auth_header: str = "Authorization",
                 auth_scheme: str = "Bearer", timeout: float = 30.0, max_concurrency: int = 4,
                 max_retries: int = 5, backoff: float = 0.5, transport=None, sleep=time.sleep):
        import httpx

        self.endpoint = endpoint
        self.timeout = timeout
        self.max_concurrency = max_concurrency
        self.max_retries = max_retries
        self.backoff = backoff
        self._sleep = sleep
        headers = {}
        token = os.environ.get(token_env) if token_env else None
        if token:
            headers[auth_header] = f"{auth_scheme} {token}".strip() if auth_scheme else token
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def translate(self, text, src, tgt):
        import httpx

        payload = {"q": text, "source": src, "target": tgt}
        for attempt in range(self.max_retries + 1):
            try:
                resp = self._client.post(self.endpoint, json=payload)
            except httpx.HTTPError as exc:
                err = f"request failed: {exc}"
            else:
                if resp.status_code == 429 or resp.status_code >= 500:
                    err = f"HTTP {resp.status_code}"
                elif resp.status_code >= 400:
                    raise AugmentationError(f"MT service rejected {src}->{tgt}: HTTP {resp.status_code}")
                else:
                    try:
                        return resp.json()["translatedText"]
                    except (ValueError, KeyError, TypeError) as exc:
                        raise AugmentationError(f"malformed MT response: {exc}") from exc
            if attempt < self.max_retries:
                self._sleep(self.backoff * 2 ** attempt)
        raise AugmentationError(f"MT service unavailable for {src}->{tgt}: {err}")

    def close(self):
        self._client.close()


class RecordingBackend(TranslationBackend):
    """Wraps another backend and records every call into a cassette file."""

    name = "record"

    def __init__(self, inner: TranslationBackend, cassette_path):
        self.inner = inner
        self.name = inner.name  # provenance names the service that produced the text
        self.path = Path(cassette_path)
        self.max_concurrency = inner.max_concurrency
        self.languages = inner.languages
        self._entries: dict[tuple, str] = {}
        self._lock = threading.Lock()

    def translate(self, text, src, tgt):
        out = self.inner.translate(text, src, tgt)
        with self._lock:
            self._entries[(src, tgt, text)] = out
        return out

    def save(self):
        entries = [{"src_lang": s, "tgt_lang": t, "input": i, "output": o}
                   for (s, t, i), o in sorted(self._entries.items())]
        self.path.write_text(json.dumps(entries, ensure_ascii=False, indent=1), encoding="utf-8")


class ReplayBackend(TranslationBackend):
    name = "replay"

    def __init__(self, cassette_path):
        data = json.loads(Path(cassette_path).read_text(encoding="utf-8"))
        self._entries = {(e["src_lang"], e["tgt_lang"], e["input"]): e["output"] for e in data}

    def translate(self, text, src, tgt):
        try:
            return self._entries[(src, tgt, text)]
        except KeyError:
            raise AugmentationError(f"cassette has no entry for {src}->{tgt}: {text[:40]!r}") from None


def make_backend(name: str, seed: int = 0, **options) -> TranslationBackend:
    if name == "identity":
        return IdentityBackend()
    if name == "shuffle":
        return ShuffleBackend(seed)
    if name == "http":
        if not options.get("endpoint"):
            raise ValueError("http backend needs an endpoint")
        return HttpBackend(**{k: v for k, v in options.items() if v is not None})
    if name == "replay":
        return ReplayBackend(options["cassette"])
    raise ValueError(f"unknown translation backend {name!r}")


@dataclass(frozen=True)
class AugmentPolicy:
    pivot_langs: tuple = DEFAULT_PIVOTS
    target_categories: frozenset = frozenset({"indirect", "physical"})
    apply_to_split: str = "train"
    dedup: bool = True

    def __post_init__(self):
        if not self.pivot_langs:
            raise ValueError("at least one pivot language is required")
        bad = set(self.target_categories) - set(AUGMENTABLE)
        if bad:
            raise ValueError(f"cannot augment categories {sorted(bad)}")


def back_translate(text: str, pivot: str, backend: TranslationBackend, example_id: str | None = None) -> str:
    if not (backend.supports(SOURCE_LANG, pivot) and backend.supports(pivot, SOURCE_LANG)):
        raise AugmentationError(f"backend {backend.name} does not support en<->{pivot}", pivot, example_id)
    try:
        there = backend.translate(text, SOURCE_LANG, pivot)
        return backend.translate(there, pivot, SOURCE_LANG)
    except AugmentationError as exc:
        raise AugmentationError(str(exc), pivot, example_id) from exc
    except Exception as exc:
        raise AugmentationError(f"{type(exc).__name__}: {exc}", pivot, example_id) from exc


@dataclass
class AugmentReport:
    # counts[category][pivot] of accepted new examples
    counts: dict = field(default_factory=dict)
    attempted: int = 0
    added: int = 0
    duplicates: int = 0
    failed: int = 0

    def to_dict(self) -> dict:
        return {"counts": self.counts, "attempted": self.attempted, "added": self.added,
                "duplicates": self.duplicates, "failed": self.failed}


def augment_dataset(rows: Sequence[CorpusRow], policy: AugmentPolicy, backend: TranslationBackend):
    """Add one back-translated copy per pivot for every targeted row of the policy split.

    Returns ``(rows, report)``.  Original rows keep their order and come
    first; new rows follow, ordered by source id then pivot order.  Rows of
    other splits are passed through as-is.
    """
    sources = [r for r in rows if r.split == policy.apply_to_split
               and any(getattr(r, c) == 1 for c in policy.target_categories)]
    sources.sort(key=lambda r: r.id)
    jobs = [(r, p) for r in sources for p in policy.pivot_langs]
    report = AugmentReport(counts={c: {p: 0 for p in policy.pivot_langs} for c in sorted(policy.target_categories)})
    report.attempted = len(jobs)

    def run(job):
        r, p = job
        try:
            return back_translate(r.text, p, backend, r.id)
        except AugmentationError as exc:
            return exc

    workers = max(1, int(getattr(backend, "max_concurrency", 1)))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]

    seen = {r.text for r in rows}
    out = list(rows)
    for (src, pivot), res in zip(jobs, results):
        if isinstance(res, AugmentationError):
            report.failed += 1
            log.warning("augmentation failed for %s via %s: %s", src.id, pivot, res)
            continue
        if policy.dedup and res in seen:
            report.duplicates += 1
            continue
        seen.add(res)
        out.append(replace(src, id=f"{src.id}_bt_{pivot}", text=res,
                           provenance=f"pivot={pivot};backend={backend.name};source={src.id}"))
        report.added += 1
        for c in policy.target_categories:
            if getattr(src, c) == 1:
                report.counts[c][pivot] += 1
    if report.failed:
        log.warning("%d back-translations failed and were skipped", report.failed)
    return out, report
