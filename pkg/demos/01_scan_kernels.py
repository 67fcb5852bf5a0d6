# %% [markdown]
# Selective scans as matrices
# ===========================
#
# A frozen selective scan is linear in its input, so it can be written as a
# lower-triangular matrix per hidden channel.  Lag fusion adds backward
# diagonals, and channel permutation conjugates the matrix by a permutation.

# %%
import numpy as np

from dimts.ssm import (LagSpec, SSMParams, apply_channel_matrices, lag_fusion_scan,
                       materialize_M, materialize_MC, materialize_MF, permutation_matrix,
                       permutation_scan, selective_scan)

np.set_printoptions(precision=3, suppress=True, linewidth=120)
rng = np.random.default_rng(0)

K, H, N = 6, 1, 2
params = SSMParams(rng.uniform(0.3, 0.9, (K, H, N)), rng.uniform(-1, 1, (K, H, N)),
                   rng.uniform(-1, 1, (K, N)))
x = rng.standard_normal((K, H))

# %%
M = materialize_M(params)
print("M (causal, one row per output step):")
print(M[0])
print("scan == M x:", np.allclose(selective_scan(params, x), apply_channel_matrices(M, x)))

# %% [markdown]
# Lagged states at offsets 2 and 4 contribute shifted copies of the same
# kernel, weighted by eta.

# %%
lags = LagSpec([0, 2, 4], np.array([1.0, 0.5, 0.25]))
MF = materialize_MF(params, lags)
print(MF[0])
print("lag scan == M^F x:", np.allclose(lag_fusion_scan(params, lags, x), apply_channel_matrices(MF, x)))

# %% [markdown]
# Scanning tokens in the order pi and writing results back in place gives
# H^-1 M H: the same kernel, with rows and columns relabelled.

# %%
order = [2, 0, 5, 1, 4, 3]
Hm = permutation_matrix(order)
MC = materialize_MC(params, Hm)
print(MC[0])
print("permuted scan == M^C x:", np.allclose(permutation_scan(params, Hm, x), apply_channel_matrices(MC, x)))
