#!/usr/bin/env python3
"""Convert the LINQS Cora release (cora.content, cora.cites) to a cl3an dataset.

Usage:
    scripts/convert_cora.py --download --out data/cora
    scripts/convert_cora.py --src path/to/cora --out data/cora

The result is a directory holding meta.json, edges.csv, labels.csv and
features.f32 (row-major little-endian float32). Point CL3AN_DATA_DIR at the
parent directory to refer to it as `--dataset cora`.

Nodes are numbered in cora.content order; classes in sorted name order.
Citations are undirected, deduplicated and stripped of self-citations, which
gives 2708 nodes, 5278 edges, 7 classes and 1433 features.
"""

import argparse
import io
import json
import struct
import sys
import tarfile
import urllib.request
from pathlib import Path

CORA_URL = "https://linqs-data.soe.ucsc.edu/public/lbc/cora.tgz"
FORMAT_VERSION = 1


def fetch(dest: Path) -> Path:
    with urllib.request.urlopen(CORA_URL, timeout=60) as response:
        payload = response.read()
    with tarfile.open(fileobj=io.BytesIO(payload), mode="r:gz") as tar:
        for member in tar.getmembers():
            name = Path(member.name).name
            if name in ("cora.content", "cora.cites"):
                member.name = name
                tar.extract(member, dest)
    return dest


def read_content(path: Path):
    ids, rows, names = [], [], []
    for line_no, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) < 3:
            sys.exit(f"{path}:{line_no}: expected id, features, label")
        ids.append(fields[0])
        rows.append([float(v) for v in fields[1:-1]])
        names.append(fields[-1])
    dims = {len(r) for r in rows}
    if len(dims) != 1:
        sys.exit(f"{path}: rows have differing feature counts {sorted(dims)}")
    if len(set(ids)) != len(ids):
        sys.exit(f"{path}: duplicate paper ids")
    return ids, rows, names


def read_cites(path: Path, index):
    edges, skipped = set(), 0
    for line_no, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != 2:
            sys.exit(f"{path}:{line_no}: expected two paper ids")
        if fields[0] not in index or fields[1] not in index:
            skipped += 1
            continue
        u, v = index[fields[0]], index[fields[1]]
        if u != v:
            edges.add((min(u, v), max(u, v)))
    return sorted(edges), skipped


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--src", type=Path, help="directory holding cora.content and cora.cites")
    source.add_argument("--download", action="store_true", help=f"fetch {CORA_URL}")
    parser.add_argument("--out", type=Path, required=True, help="output dataset directory")
    parser.add_argument("--name", default="cora")
    args = parser.parse_args()

    args.out.mkdir(parents=True, exist_ok=True)
    src = fetch(args.out / "raw") if args.download else args.src

    ids, rows, names = read_content(src / "cora.content")
    index = {pid: i for i, pid in enumerate(ids)}
    classes = sorted(set(names))
    labels = [classes.index(n) for n in names]
    edges, skipped = read_cites(src / "cora.cites", index)

    n, f = len(rows), len(rows[0])
    with open(args.out / "features.f32", "wb") as out:
        for r in rows:
            out.write(struct.pack(f"<{f}f", *r))
    (args.out / "edges.csv").write_text("src,dst\n" + "".join(f"{u},{v}\n" for u, v in edges))
    (args.out / "labels.csv").write_text("node,label\n" + "".join(f"{i},{y}\n" for i, y in enumerate(labels)))
    meta = {
        "format_version": FORMAT_VERSION,
        "name": args.name,
        "num_nodes": n,
        "num_classes": len(classes),
        "feature_dim": f,
        "feature_file": "features.f32",
        "feature_dtype": "float32",
        "feature_shape": [n, f],
        "edge_file": "edges.csv",
        "label_file": "labels.csv",
        "class_names": classes,
    }
    (args.out / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    note = f", {skipped} citations to unknown papers dropped" if skipped else ""
    print(f"wrote {n} nodes, {len(edges)} edges, {len(classes)} classes, {f} features to {args.out}{note}")


if __name__ == "__main__":
    main()
