#!/usr/bin/env python3
"""Download and convert the Bitcoin Alpha trust network for the informational
benchmark (tests/test_acceptance.py criterion 8).

Source: https://snap.stanford.edu/data/soc-sign-bitcoin-alpha.html
Raw format: SOURCE,TARGET,RATING,TIME (rating in [-10, 10], TIME epoch seconds).

Conversion:
  * node ids are remapped to dense integers (mapping saved alongside);
  * self-ratings are dropped; timestamps shifted to start at 0;
  * labels follow a common convention for this network: a node with at least
    3 incoming ratings is fraudulent (1) if its mean incoming rating is
    negative, normal (0) if positive; everything else stays unlabeled.

Writes data/bitcoin_alpha.csv, data/bitcoin_alpha_labels.csv and
data/bitcoin_alpha_idmap.json. Run from the repository root:

    python3 scripts/fetch_bitcoin_alpha.py [--url URL | --input FILE.csv.gz]
"""

import argparse
import csv
import gzip
import io
import json
import urllib.request
from collections import defaultdict
from pathlib import Path

DEFAULT_URL = "https://snap.stanford.edu/data/soc-sign-bitcoinalpha.csv.gz"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--url", default=DEFAULT_URL)
    ap.add_argument("--input", default=None, help="already-downloaded .csv or .csv.gz")
    ap.add_argument("--out-dir", default="data")
    args = ap.parse_args()

    if args.input:
        raw = Path(args.input).read_bytes()
    else:
        print(f"downloading {args.url}")
        raw = urllib.request.urlopen(args.url).read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)

    rows = []
    for rec in csv.reader(io.StringIO(raw.decode("utf-8"))):
        if not rec or rec[0].startswith("#"):
            continue
        s, t, rating, ts = int(rec[0]), int(rec[1]), int(rec[2]), int(float(rec[3]))
        if s != t:
            rows.append((s, t, rating, ts))

    ids = sorted({x for r in rows for x in r[:2]})
    dense = {x: i for i, x in enumerate(ids)}
    t0 = min(r[3] for r in rows)

    incoming = defaultdict(list)
    for s, t, rating, _ in rows:
        incoming[dense[t]].append(rating)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "bitcoin_alpha.csv", "w") as f:
        f.write("src,dst,timestamp,amount\n")
        for s, t, rating, ts in sorted(rows, key=lambda r: (r[3], r[0], r[1])):
            f.write(f"{dense[s]},{dense[t]},{ts - t0},{abs(rating)}\n")
    with open(out / "bitcoin_alpha_labels.csv", "w") as f:
        for v in range(len(ids)):
            ratings = incoming.get(v, [])
            if len(ratings) >= 3:
                mean = sum(ratings) / len(ratings)
                if mean < 0:
                    f.write(f"{v},1\n")
                elif mean > 0:
                    f.write(f"{v},0\n")
    with open(out / "bitcoin_alpha_idmap.json", "w") as f:
        json.dump({str(k): v for k, v in dense.items()}, f, sort_keys=True)
    n_fraud = sum(1 for v in incoming if len(incoming[v]) >= 3
                  and sum(incoming[v]) / len(incoming[v]) < 0)
    print(f"nodes={len(ids)} edges={len(rows)} fraud-labeled={n_fraud}")
    print(f"wrote {out}/bitcoin_alpha.csv, bitcoin_alpha_labels.csv, bitcoin_alpha_idmap.json")


if __name__ == "__main__":
    main()
