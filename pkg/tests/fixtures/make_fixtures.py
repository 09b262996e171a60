"""Regenerate the committed synthetic corpora.

overfit64.csv: 64 rows, all in the train split.  Every harassment row holds
exactly one type keyword and non-harassment rows hold none, so a keyword
feature separates every category.

smoke.csv: 100 rows over train/validation/test with the same keyword scheme
plus tweet noise (mentions, URLs, hashtags, emoji) for the cleaning rules.

    python tests/fixtures/make_fixtures.py
"""
import csv
import random
from pathlib import Path

HERE = Path(__file__).parent
FILLER = ("the day was long and we went to see a movie with friends after work today "
          "coffee rain city music game team weekend morning book train lunch park").split()
KEYWORDS = {"sexual": "creep", "indirect": "whisper", "physical": "punch"}
NOISE = ["@user", "http://t.co/abc", "#monday", "\U0001F600", "RT", "!!"]


def sentence(rnd, keyword=None, noise=False):
    words = rnd.sample(FILLER, rnd.randint(4, 8))
    if keyword:
        words.insert(rnd.randint(0, len(words)), keyword)
    if noise and rnd.random() < 0.6:
        words.insert(rnd.randint(0, len(words)), rnd.choice(NOISE))
    return " ".join(words)


def rows_for(rnd, counts, split, start, noise):
    out = []
    plan = [None] * counts[None] + [t for t in ("sexual", "indirect", "physical") for _ in range(counts[t])]
    rnd.shuffle(plan)
    for i, t in enumerate(plan):
        out.append({
            "id": f"{split[:2]}{start + i:03d}",
            "text": sentence(rnd, KEYWORDS[t] if t else None, noise),
            "harassment": int(t is not None),
            "IndirectH": int(t == "indirect"),
            "PhysicalH": int(t == "physical"),
            "SexualH": int(t == "sexual"),
            "split": split,
        })
    return out


def write(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=["id", "text", "harassment", "IndirectH", "PhysicalH", "SexualH", "split"])
        w.writeheader()
        w.writerows(rows)


def main():
    rnd = random.Random(20190916)
    write(HERE / "overfit64.csv",
          rows_for(rnd, {None: 32, "sexual": 12, "indirect": 10, "physical": 10}, "train", 0, False))
    rnd = random.Random(7)
    smoke = (rows_for(rnd, {None: 30, "sexual": 14, "indirect": 8, "physical": 8}, "train", 0, True)
             + rows_for(rnd, {None: 10, "sexual": 4, "indirect": 3, "physical": 3}, "validation", 0, True)
             + rows_for(rnd, {None: 10, "sexual": 4, "indirect": 3, "physical": 3}, "test", 0, True))
    write(HERE / "smoke.csv", smoke)


if __name__ == "__main__":
    main()
