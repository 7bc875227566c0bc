#!/usr/bin/env python3
"""Fetch the Rotten Tomatoes sentence-polarity corpus and write it in the
two-file layout expected by `prelex` (`rt-polarity.pos`, `rt-polarity.neg`).

The only source reachable from an offline build mirror is the MIT-licensed
`movie-reviews` wheel on PyPI, which bundles the 8,530-sentence training
portion of the corpus. Pass a path to an already downloaded wheel to skip the
download step.
"""
import csv
import io
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

MEMBER = "movie_reviews/data/combined_movie_reviews.csv"


def locate_wheel(arg):
    if arg:
        return Path(arg)
    tmp = Path(tempfile.mkdtemp())
    subprocess.check_call(
        [sys.executable, "-m", "pip", "download", "--no-deps", "-d", str(tmp), "movie-reviews==0.0.2"]
    )
    return next(tmp.glob("movie_reviews-*.whl"))


def main():
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parent.parent / "data" / "mr"
    wheel = locate_wheel(sys.argv[2] if len(sys.argv) > 2 else None)
    rows = csv.DictReader(io.StringIO(zipfile.ZipFile(wheel).read(MEMBER).decode("utf-8")))
    by_label = {"0": [], "1": []}
    for row in rows:
        if row["source"] == "rotten_tomatoes":
            by_label[row["label"]].append(" ".join(row["text"].split()))
    out.mkdir(parents=True, exist_ok=True)
    (out / "rt-polarity.neg").write_text("\n".join(by_label["0"]) + "\n", encoding="utf-8")
    (out / "rt-polarity.pos").write_text("\n".join(by_label["1"]) + "\n", encoding="utf-8")
    print(f"wrote {len(by_label['0'])} negative and {len(by_label['1'])} positive sentences to {out}")


if __name__ == "__main__":
    main()
