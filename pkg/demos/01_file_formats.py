"""Write and read the three on-disk inputs: features, label confidences, ground truth.

    python demos/01_file_formats.py
"""

import tempfile
from pathlib import Path

import numpy as np

from semindex.io import (
    FeatureSet,
    FormatError,
    LabelMatrix,
    features_from_bytes,
    parse_ground_truth,
    read_features,
    read_labels,
    write_features,
    write_labels,
)

rng = np.random.default_rng(0)
tmp = Path(tempfile.mkdtemp())

# Features: a dense float32 matrix behind a small binary header.
features = FeatureSet(rng.normal(size=(5, 4)).astype(np.float32))
write_features(tmp / "db.fvec", features)
print("features round-trip:", read_features(tmp / "db.fvec") == features)

# Labels: per item, the top-k (label, confidence) pairs of a classifier.
# Rows are stored sorted by confidence whatever order they arrive in.
probs = rng.dirichlet(np.ones(10), size=5)
labels = LabelMatrix.from_dense(probs, k=3)
write_labels(tmp / "db.lbl", labels)
print("item 0 top labels:", read_labels(tmp / "db.lbl").rows()[0])

# Ground truth: "qid: ids" lines, with optional "qid!: ids" junk lines.
gt = parse_ground_truth("0: 1 3\n0!: 4\n1: 2\n")
for entry in gt:
    print(f"query {entry.query_id}: relevant {sorted(entry.relevant)}, junk {sorted(entry.junk)}")

# Damaged files fail loudly with the byte offset of the problem.
raw = (tmp / "db.fvec").read_bytes()
try:
    features_from_bytes(raw[:-5])
except FormatError as err:
    print("truncated file:", err)
