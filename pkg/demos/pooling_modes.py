# Three ways to squeeze a (seq+1) x d token matrix into one vector.
# The hash encoder stands in for a real pretrained encoder: same geometry,
# deterministic, and cheap enough to run anywhere.

import numpy as np

from hierclass.corpus import Page
from hierclass.encoder import (
    PoolParams,
    concat_dim,
    pool_cls_fwd,
    pool_concat_fwd,
    pool_mean,
)
from hierclass.trainer import HashProvider

D, SEQ = 16, 12

pages = [
    Page(1, "en", "alpha beta gamma delta", frozenset()),
    Page(2, "en", "", frozenset()),
]
provider = HashProvider(pages, d=D, seq=SEQ, seed=0)

E = provider.get("en", 1)
print(f"matrix shape {E.rows.shape}, {E.n_tokens} real tokens, CLS row first")

# the synthetic CLS row is defined as the mean of the real token rows
assert np.allclose(E.cls_row, E.rows[1:E.n_tokens + 1].mean(axis=0))

rng = np.random.default_rng(0)
params = PoolParams.init(D, rng, dropout_rate=0.1, first_k=4)

# CLS: learned projection of the first row, tanh squashed
cls_vec, _ = pool_cls_fwd(E, params)
print(f"CLS    dim {cls_vec.dim:>3}  first values {np.round(cls_vec.values[:3], 4)}")

# MEAN: plain average of CLS + real token rows; padding never leaks in
mean_vec = pool_mean(E)
print(f"MEAN   dim {mean_vec.dim:>3}  first values {np.round(mean_vec.values[:3], 4)}")

# CONCAT: CLS block ++ first_k raw token rows ++ mean of the tail
concat_vec, _ = pool_concat_fwd(E, params)
print(f"CONCAT dim {concat_vec.dim:>3}  = d * (first_k + 2) = {concat_dim(D, 4)}")

# at the reference scale the same formula explodes to 155136 dimensions
print(f"reference scale: concat_dim(768, 200) = {concat_dim(768, 200)}")

# dropout only exists at train time and is inverted, so eval needs no rescale
train_vec, _ = pool_cls_fwd(E, params, mode="train", rng=np.random.default_rng(7))
kept = np.flatnonzero(train_vec.values)
print(f"train-mode CLS keeps {kept.size}/{D} coordinates this draw")

# an empty page still pools: MEAN falls back to the CLS row alone
empty = provider.get("en", 2)
print(f"empty page: {empty.n_tokens} tokens, MEAN dim {pool_mean(empty).dim}")
