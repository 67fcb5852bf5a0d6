# %% [markdown]
# Ordering channels so similar ones are scanned next to each other
# ================================================================
#
# Absolute Pearson correlation gives a similarity graph over channels.  The
# generalized Fiedler vector of its Laplacian embeds the channels on a line;
# sorting that embedding gives the scan order.

# %%
import itertools

import numpy as np

from dimts.data import block_correlated_series
from dimts.permutation import adjacency_score, pearson_similarity, solve_ordering

np.set_printoptions(precision=3, suppress=True)

series = block_correlated_series(5000, seed=0)
G = pearson_similarity(series[None])
print(G)

# %%
perm = solve_ordering(G)
print("fiedler vector:", perm.fiedler, " eigenvalue:", round(perm.eigenvalue, 4))
print("scan order:", perm.pi, " adjacency score:", round(adjacency_score(perm.pi, G), 3))

# %% [markdown]
# With three channels there are only six orders, so they can all be scored.

# %%
for order in itertools.permutations(range(3)):
    mark = "<-" if list(order) == list(perm.pi) else ""
    print(order, round(adjacency_score(order, G), 3), mark)

# %% [markdown]
# Shuffle a larger graph with a hidden chain structure and try to recover it.
# The ordering is a spectral relaxation, not an exact arrangement solver, so
# the ends of the chain can come back locally swapped.

# %%
rng = np.random.default_rng(3)
C = 8
chain = np.zeros((C, C))
for i in range(C - 1):
    chain[i, i + 1] = chain[i + 1, i] = 0.9
chain += 0.05 * (1 - np.eye(C))
shuffle = rng.permutation(C)
G8 = chain[np.ix_(shuffle, shuffle)]
found = solve_ordering(G8).pi
print("recovered chain:", shuffle[found])
print("score found:", round(adjacency_score(found, G8), 3),
      " score of the true chain:", round(adjacency_score(np.argsort(shuffle), G8), 3))
