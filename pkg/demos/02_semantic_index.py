"""Build a label-partitioned index, then merge and split its cells.

    python demos/02_semantic_index.py
"""

import numpy as np

from semindex import (
    IndexParams,
    SyntheticConfig,
    build_index,
    candidate_list,
    cooccurrence_matrix,
    merge_labels,
    pruned_candidate_list,
    split_index,
    synth_dataset,
)

ds = synth_dataset(SyntheticConfig(n_db=5000, n_queries=20))
n = ds.db.n

# Each item goes into the lists of its 5 most confident labels.
index = build_index(ds.db_labels, IndexParams(alpha=5, n_labels=100))
print(f"{index.n_cells} lists holding {index.list_lengths().sum()} entries for {n} items")

# A query reclaims the lists of its own top labels; beta controls how many.
row = ds.query_labels.row(0)
relevant = next(iter(ds.ground_truth)).relevant
for beta in (1, 3, 5, 10):
    cand = candidate_list(index, row, beta)
    hit = np.isin(list(relevant), cand.ids).mean()
    print(f"beta={beta:2d}: {cand.ids.size:5d} candidates ({cand.ids.size / n:.1%} of db), recall {hit:.3f}")

# Labels that keep appearing together can share one cell.
mapping = merge_labels(cooccurrence_matrix(ds.db_labels), 40)
merged = build_index(ds.db_labels, IndexParams(5, 100), mapping)
cand = candidate_list(merged, row, 5)
print(f"merged to {merged.n_cells} cells: {cand.ids.size} candidates")

# Splitting each list into k-means sub-cells lets a query keep only the nearest ones.
split = split_index(index, ds.db, L=10, seed=0)
for tau in (0.1, 0.3, 1.0):
    cand = pruned_candidate_list(split, ds.queries.data[0], row, 5, tau)
    hit = np.isin(list(relevant), cand.ids).mean()
    print(f"tau={tau}: {cand.ids.size} candidates, recall {hit:.3f}")
