"""
Interaction data and item graphs
================================

Walks through the data side of the package: a planted-block synthetic
dataset, the per-user 8:1:1 split, popularity groups, and the sparse graphs
the model propagates over.
"""

import tempfile
from pathlib import Path

import numpy as np

from egra import knn_graph
from egra.dataset import assign_longtail_groups
from egra.formats import read_graph, write_graph
from egra.synthetic import make_synthetic

# A small dataset: 300 users, 150 items in 5 latent blocks, Zipf-skewed
# popularity, and two feature "modalities" that are noisy linear views of the
# item latents.
ds, features = make_synthetic(num_users=300, num_items=150, seed=0)
print("users", ds.num_users, "items", ds.num_items)
print("train/valid/test pairs:", len(ds.train), len(ds.valid), len(ds.test))
print("feature shapes:", {m: f.shape for m, f in features.items()})

# Every user with n >= 3 interactions holds out floor(n/10) pairs for
# validation and as many for test.
per_user = np.bincount(ds.all_pairs()[:, 0], minlength=ds.num_users)
print("interactions per user: min", per_user.min(), "max", per_user.max())

# Items are cut into five popularity groups by train frequency; group 1 is the
# most active fifth.
groups = assign_longtail_groups(ds)
freq = np.bincount(ds.train[:, 1], minlength=ds.num_items)
for g in range(1, 6):
    members = groups.group_of_item == g
    print(f"group {g}: {members.sum()} items, mean train freq {freq[members].mean():.1f}, "
          f"{len(groups.group_test_sets[g - 1])} test pairs")

# %%
# Item graphs
# -----------
# Per-modality semantic graphs keep each item's K most cosine-similar items
# (weights = cosine), symmetrize by union, clip negatives and normalize.
visual = knn_graph.topk_weighted_graph(features["visual"], k=10)
print("visual Top-10 graph: nnz", visual.nnz, "symmetric", (visual != visual.T).nnz == 0)
norm = knn_graph.modality_graph(features["visual"], k=10)
print("largest |eigenvalue| after normalization:",
      round(float(np.max(np.abs(np.linalg.eigvalsh(norm.toarray())))), 6))

# The behavior graph can be enhanced with a binary Top-H graph over
# pretrained item embeddings. Here we fake "pretrained" embeddings with the
# textual features just to show the plumbing.
s_pt = knn_graph.topk_binary_graph(features["textual"], h=5)
g_e = knn_graph.build_enhanced_adjacency(ds.R, s_pt)
print("enhanced adjacency", g_e.shape, "nnz", g_e.nnz, "= 2*nnz(R) + nnz(S_pt) =",
      2 * ds.R.nnz + s_pt.nnz)

# The intersection of the two modality graphs is the comparator used in the
# enhancement-strategy comparison.
both = knn_graph.build_gume_comparator_graph(visual, knn_graph.topk_weighted_graph(features["textual"], 10))
print("edges shared by both modality graphs:", both.nnz)

# Graphs serialize to a small sorted binary format, byte-identical for equal
# graphs, which is what the stage cache relies on.
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "s_pt.egrag"
    write_graph(path, s_pt)
    again = read_graph(path)
    print("round trip equal:", (again != s_pt).nnz == 0, "bytes:", path.stat().st_size)
