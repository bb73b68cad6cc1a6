"""Rebuild the bundled UCI datasets under src/marginprune/data/.

Sources are the copies shipped inside two PyPI packages, so no direct
UCI access is needed::

    pip download keel-ds pydataset --no-deps -d /tmp/src
    python tools/make_datasets.py --keel <keel_ds/data/balanced/raw> \
        --mass <pydataset rdata/csv/MASS>

AU, DIA and SPL come from KEEL; BC comes from the MASS ``biopsy`` table,
which keeps the sample id and the 16 missing "bare nuclei" values of the
original UCI file.
"""
import argparse
import csv
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "marginprune" / "data"
NUCLEOTIDE = {"A": 1, "C": 2, "G": 3, "T": 4}


def _keel_rows(path):
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("@"):
                yield [v.strip() for v in line.split(",")]


def _write(name, header, rows):
    with open(OUT / name, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    print(f"{name}: {len(rows)} rows")


def australian(keel):
    header = [f"A{i}" for i in range(1, 15)] + ["class"]
    _write("australian.csv", header, list(_keel_rows(keel / "australian.dat")))


def pima(keel):
    header = ["preg", "plas", "pres", "skin", "insu", "mass", "pedi", "age", "class"]
    rows = [r[:8] + [r[8].replace("tested_", "")] for r in _keel_rows(keel / "pima.dat")]
    _write("diabetes.csv", header, rows)


def splice(keel):
    header = [f"pos{i}" for i in range(1, 61)] + ["class"]
    rows = []
    for r in _keel_rows(keel / "splice.dat"):
        bases, label = r[:60], r[60]
        if not all(b in NUCLEOTIDE for b in bases):
            continue
        rows.append([NUCLEOTIDE[b] for b in bases] + ["none" if label == "N" else "junction"])
    _write("splice.csv", header, rows)


def biopsy(mass):
    rows = []
    with open(mass / "biopsy.csv") as fh:
        reader = csv.reader(fh)
        next(reader)
        for r in reader:
            rows.append(["?" if v == "NA" else v for v in r[1:]])
    header = ["id", "thickness", "size_unif", "shape_unif", "adhesion", "cell_size",
              "bare_nuclei", "chromatin", "nucleoli", "mitoses", "class"]
    _write("breast_cancer.csv", header, rows)


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--keel", type=Path, required=True)
    ap.add_argument("--mass", type=Path, required=True)
    args = ap.parse_args()
    OUT.mkdir(parents=True, exist_ok=True)
    australian(args.keel)
    pima(args.keel)
    splice(args.keel)
    biopsy(args.mass)
