"""Evaluate every retrieval strategy on one synthetic benchmark.

    python demos/04_compare_strategies.py
"""

from semindex import DatasetBundle, StrategyConfig, SyntheticConfig, evaluate, synth_dataset

bundle = DatasetBundle.from_synthetic(synth_dataset(SyntheticConfig(n_db=8000, n_queries=100)))

configs = [
    StrategyConfig("exhaustive"),
    StrategyConfig("semantic"),
    StrategyConfig("semantic", tau=0.3, L=10),
    StrategyConfig("ivf", k_coarse=100, nprobe=5),
    StrategyConfig("adc"),
    StrategyConfig("ivf-adc", k_coarse=100, nprobe=5),
    StrategyConfig("semantic-adc"),
]
print(f"{'strategy':14s} {'tau':>5s} {'mAP':>6s} {'recall':>7s} {'scope':>6s} {'R@100':>6s}")
for cfg in configs:
    r = evaluate(cfg, bundle)
    tau = "-" if cfg.tau is None else f"{cfg.tau}"
    print(f"{cfg.strategy:14s} {tau:>5s} {r.map:6.3f} {r.recall_candidates:7.4f} {r.scope_ratio:6.3f} {r.r_at[100]:6.3f}")
