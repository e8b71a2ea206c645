#!/usr/bin/env python3
"""Generate the bundled Sentiment140-format sample and its manifest.

The rows are synthetic (the real dataset is not redistributable here) but use
the same six-column layout, polarity codes 0/4, and tweet-like text so the
whole pipeline can run offline.
"""
import argparse
import csv
import datetime as dt
import hashlib
import json
import pathlib
import random

POSITIVE = ["love", "great", "happy", "awesome", "good", "thanks", "fun", "nice",
            "excited", "best", "beautiful", "glad", "enjoying", "amazing", ":)", ":D"]
NEGATIVE = ["hate", "sad", "awful", "bad", "tired", "sick", "miss", "worst",
            "annoying", "sorry", "hurts", "boring", "ugh", "terrible", ":(", ":-("]
NEUTRAL = ["today", "work", "the", "weekend", "morning", "coffee", "school", "my",
           "new", "phone", "music", "this", "is", "so", "just", "going", "home",
           "movie", "night", "rain", "train", "lunch", "friends", "game", "again"]


def make_text(rng, polarity):
    own, other = (POSITIVE, NEGATIVE) if polarity == 4 else (NEGATIVE, POSITIVE)
    words = rng.choices(NEUTRAL, k=rng.randint(3, 9))
    for _ in range(rng.randint(1, 2)):
        words.insert(rng.randrange(len(words) + 1), rng.choice(own))
    if rng.random() < 0.15:
        words.insert(rng.randrange(len(words) + 1), rng.choice(other))
    if rng.random() < 0.2:
        words.insert(0, "@user%d" % rng.randint(1, 500))
    if rng.random() < 0.1:
        words.append("http://example.com/%d" % rng.randint(1, 999))
    return " ".join(words)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data/sample/sentiment140_sample.csv")
    ap.add_argument("--positive", type=int, default=4990)
    ap.add_argument("--negative", type=int, default=5010)
    ap.add_argument("--seed", type=int, default=140)
    args = ap.parse_args()

    rng = random.Random(args.seed)
    labels = [4] * args.positive + [0] * args.negative
    rng.shuffle(labels)
    start = dt.datetime(2009, 4, 6, 22, 19, 45)
    out = pathlib.Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, quoting=csv.QUOTE_ALL, lineterminator="\n")
        for i, polarity in enumerate(labels):
            when = start + dt.timedelta(seconds=37 * i)
            date = when.strftime("%a %b %d %H:%M:%S PDT %Y")
            w.writerow([polarity, 1467810000 + i, date, "NO_QUERY",
                        "user%d" % rng.randint(1, 3000), make_text(rng, polarity)])

    total = args.positive + args.negative
    manifest = {
        "file": out.name,
        "rows": total,
        "positive": args.positive,
        "negative": args.negative,
        "seed": args.seed,
        "sha256": hashlib.sha256(out.read_bytes()).hexdigest(),
        "synthetic": True,
    }
    out.with_name("manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


if __name__ == "__main__":
    main()
