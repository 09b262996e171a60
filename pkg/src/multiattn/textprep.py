"""Tweet cleaning and tokenization.

The rule set is fixed and documented so that preprocessing is reproducible:

* URLs (``http://``, ``https://``, ``www.`` and bare ``t.co/`` links) are removed
* ``@mentions`` are removed, as is any stray ``@``
* ``#tag`` becomes ``tag`` (or is dropped when ``keep_hashtag_word`` is off);
  stray ``#`` characters are removed
* emoji and pictographic codepoints are removed
* text is lowercased and whitespace runs are collapsed and trimmed

The rules are applied until the text stops changing, which makes ``clean``
idempotent even when one removal exposes a new match.
"""
from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass

URL_RE = re.compile(r"(?:https?://|www\.)\S*|\bt\.co/\S*", re.IGNORECASE)
MENTION_RE = re.compile(r"@\w+")
HASHTAG_RE = re.compile(r"#(\w+)")
EMOJI_RE = re.compile(
    "["
    "\U0001F000-\U0001FAFF"  # pictographs, emoticons, transport, flags, extended-A
    "\U00002600-\U000027BF"  # misc symbols, dingbats
    "\U00002300-\U000023FF"  # misc technical (watch, hourglass, ...)
    "\U00002B00-\U00002BFF"  # arrows/stars used as emoji
    "\U0000FE00-\U0000FE0F"  # variation selectors
    "\U0000200D"  # zero width joiner
    "\U000020E3"  # combining keycap
    "\U000E0020-\U000E007F"  # tag sequences
    "\U00003030\U0000303D\U00003297\U00003299"
    "]"
)


@dataclass(frozen=True)
class CleanConfig:
    lowercase: bool = True
    strip_urls: bool = True
    strip_mentions: bool = True
    keep_hashtag_word: bool = True
    strip_emoji: bool = True
    collapse_whitespace: bool = True


DEFAULT_CONFIG = CleanConfig()


def _clean_once(text: str, cfg: CleanConfig) -> str:
    if cfg.strip_urls:
        text = URL_RE.sub(" ", text)
    if cfg.strip_mentions:
        text = MENTION_RE.sub(" ", text).replace("@", " ")
    text = HASHTAG_RE.sub(r"\1" if cfg.keep_hashtag_word else " ", text).replace("#", " ")
    if cfg.strip_emoji:
        text = EMOJI_RE.sub(" ", text)
    if cfg.lowercase:
        text = text.lower()
    if cfg.collapse_whitespace:
        text = " ".join(text.split())
    return text


def clean(raw: str, cfg: CleanConfig = DEFAULT_CONFIG) -> str:
    text = raw
    for _ in range(16):
        nxt = _clean_once(text, cfg)
        if nxt == text:
            break
        text = nxt
    return text


def is_punct(ch: str) -> bool:
    cat = unicodedata.category(ch)
    return cat[0] in "PS"


def tokenize(cleaned: str) -> list[str]:
    """Whitespace split, then every punctuation/symbol character becomes its own token."""
    tokens: list[str] = []
    for chunk in cleaned.split():
        word = []
        for ch in chunk:
            if is_punct(ch):
                if word:
                    tokens.append("".join(word))
                    word = []
                tokens.append(ch)
            else:
                word.append(ch)
        if word:
            tokens.append("".join(word))
    return tokens


def preprocess(raw: str, cfg: CleanConfig = DEFAULT_CONFIG) -> list[str]:
    return tokenize(clean(raw, cfg))
