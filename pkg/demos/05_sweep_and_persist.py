"""Sweep alpha and beta into a CSV table, then save and reload an index.

    python demos/05_sweep_and_persist.py
"""

import csv
import io
import tempfile
from pathlib import Path

from semindex import (
    DatasetBundle,
    IndexParams,
    StrategyConfig,
    SyntheticConfig,
    attach_pq,
    build_index,
    load_index,
    save_index,
    sweep,
    synth_dataset,
)
from semindex.eval import reports_to_csv
from semindex.search import semantic_adc_search

ds = synth_dataset(SyntheticConfig(n_db=4000, n_queries=50))
bundle = DatasetBundle.from_synthetic(ds)

reports = sweep(StrategyConfig("semantic"), bundle, {"alpha": [1, 3, 5], "beta": [1, 3, 5]})
rows = csv.DictReader(io.StringIO(reports_to_csv(reports)))
print("alpha beta   mAP  recall  scope")
for r in rows:
    print(f"{r['alpha']:>5s} {r['beta']:>4s} {float(r['map']):5.3f} {float(r['recall_candidates']):7.4f} "
          f"{float(r['scope_ratio']):6.3f}")

index = attach_pq(build_index(ds.db_labels, IndexParams(5, 100)), ds.db, M=8, k_bits=8, seed=0)
path = Path(tempfile.mkdtemp()) / "demo.idx"
save_index(path, index)
reloaded = load_index(path)
print(f"saved {path.stat().st_size} bytes")

q, row = ds.queries.data[0], ds.query_labels.row(0)
before = semantic_adc_search(index, q, row, 5, R=5).pairs()
after = semantic_adc_search(reloaded, q, row, 5, R=5).pairs()
print("top-5 after reload matches:", before == after)
