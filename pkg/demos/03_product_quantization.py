"""Compress vectors with product quantization and score them from lookup tables.

    python demos/03_product_quantization.py
"""

import numpy as np

from semindex.quantizer import (
    ResidualQuantizer,
    adc_distance,
    adc_tables,
    decode,
    encode,
    semantic_adc_cosine,
    semantic_adc_l2,
    train_pq,
)

rng = np.random.default_rng(0)
x = rng.normal(size=(5000, 64))

# 8 sub-quantizers with 256 codewords each: every vector becomes 8 bytes.
codebook = train_pq(x, M=8, k_bits=8, seed=0)
codes = encode(codebook, x)
print("code shape:", codes.shape, codes.dtype)
err = ((x - decode(codebook, codes)) ** 2).sum(1).mean() / (x**2).sum(1).mean()
print(f"relative reconstruction error: {err:.3f}")

# Asymmetric distance: the query stays exact, the database side is a code.
q = rng.normal(size=64)
tables = adc_tables(codebook, q)
print(f"table distance {adc_distance(tables, codes[0]):.4f} vs direct {((q - decode(codebook, codes[0])) ** 2).sum():.4f}")

# Residual encoding against per-partition centroids: codes describe x - c.
centroids = rng.normal(size=(4, 64))
rq = ResidualQuantizer(codebook, centroids)
code = rq.encode(2, x[0])
prepared = rq.prepare(q, [2])
recon = rq.reconstruct(2, code)
print(f"residual l2 {semantic_adc_l2(prepared, 2, code):.4f} vs direct {((q - recon) ** 2).sum():.4f}")
cos = (q @ recon) / np.linalg.norm(q) / np.linalg.norm(recon)
print(f"residual cosine {semantic_adc_cosine(prepared, 2, code):.4f} vs direct {cos:.4f}")
