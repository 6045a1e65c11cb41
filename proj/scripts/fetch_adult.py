#!/usr/bin/env python3
"""Fetch the UCI Adult training split and write it as a headered CSV.

The raw `adult.data` file is taken from the `responsibly` wheel on PyPI,
which ships an unmodified copy of the UCI file. Values are stripped of the
leading space used by the UCI format; '?' is kept as an ordinary level.
"""
import argparse
import csv
import pathlib
import subprocess
import sys
import tempfile
import zipfile

COLUMNS = [
    "age", "workclass", "fnlwgt", "education", "education-num",
    "marital-status", "occupation", "relationship", "race", "sex",
    "capital-gain", "capital-loss", "hours-per-week", "native-country",
    "income",
]


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data/adult.csv")
    args = ap.parse_args()
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.check_call([sys.executable, "-m", "pip", "download", "--no-deps",
                               "-q", "-d", tmp, "responsibly==0.1.2"])
        wheel = next(pathlib.Path(tmp).glob("responsibly-*.whl"))
        raw = zipfile.ZipFile(wheel).read("responsibly/dataset/adult/adult.data").decode()
    rows = 0
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(COLUMNS)
        for line in raw.splitlines():
            if not line.strip():
                continue
            w.writerow([v.strip() for v in line.split(",")])
            rows += 1
    print(f"wrote {rows} rows to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
