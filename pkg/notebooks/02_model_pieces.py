"""
Inside one forward pass
=======================

Builds the frozen graphs, runs the model once and looks at the pieces:
behavior and modality representations, the modality attention, the
preference gates and the alignment weights of one batch.
"""

import numpy as np
import torch

from egra.alignment import AlignmentSchedule, BatchView, batch_alignment_loss, batch_weights, epoch_weight
from egra.fusion import modality_softmax, preference_gate
from egra.model import EGRAModel, Graphs, feature_tensors
from egra.synthetic import make_synthetic

torch.manual_seed(0)
ds, features = make_synthetic(seed=1)
graphs = Graphs.build(ds.R, features, item_graph=None, knn_k=10)
feats = feature_tensors(features)
model = EGRAModel(ds.num_users, ds.num_items, {m: f.shape[1] for m, f in features.items()}, dim=32)

out = model(graphs, feats)
print("behavior", tuple(out.behavior.shape), "modality", tuple(out.modality.shape),
      "final", tuple(out.final.shape))
# final = behavior + modality, row by row
print("final - (behavior + modality):", float((out.final - out.behavior - out.modality).abs().max()))

# Attention over modalities is a softmax per entity: columns sum to one.
alpha = modality_softmax([out.per_modality[m] for m in model.modalities], model.attention)
print("attention shape", tuple(alpha.shape), "column sums ~1:", bool(torch.allclose(alpha.sum(0), torch.ones(alpha.shape[1]))))
gate = preference_gate(out.behavior, model.gates["visual"])
print("visual gate range", float(gate.min()), float(gate.max()))

# %%
# Alignment weights
# -----------------
# Entity weights are a softmax of misalignment (1 - cos) across the batch, so
# they sum to one per side; the epoch weight ramps from lambda_min to
# lambda_max over the warm-up.
schedule = AlignmentSchedule(lambda_min=0.01, lambda_max=0.04, warmup=10)
print("epoch weights:", [round(epoch_weight(p, schedule), 4) for p in (0, 5, 10, 50)])
pairs = ds.train[np.random.default_rng(0).choice(len(ds.train), 64, replace=False)]
with torch.no_grad():
    batch = BatchView.from_pairs(pairs, out.behavior, out.modality, ds.num_users)
    w_users, w_items = batch_weights(batch, schedule, epoch=5)
    print(f"{len(batch.users)} users, weights sum {float(w_users.sum()):.4f} (= epoch weight 0.025)")
    print("most / least weighted user:", float(w_users.max()), float(w_users.min()))
    print("alignment loss at epoch 5:", float(batch_alignment_loss(batch, schedule, 5)))
