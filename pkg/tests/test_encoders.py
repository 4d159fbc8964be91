import math

import numpy as np
import pytest
import scipy.sparse as sp
import torch

from egra.behavior import propagate_lightgcn, to_sparse_tensor
from egra.errors import ShapeError
from egra.knn_graph import bipartite_normalize, sym_normalize
from egra.modality import (
    ModalityProjector,
    aggregate_user_modality,
    project_modality,
    purify,
    semantic_propagate,
)

D = torch.float64


def _path_graph(n):
    a = np.zeros((n, n))
    for i in range(n - 1):
        a[i, i + 1] = a[i + 1, i] = 1
    return sym_normalize(sp.csr_matrix(a))


def test_lightgcn_zero_layers_identity(rng):
    e = torch.tensor(rng.normal(size=(3, 4)))
    assert torch.equal(propagate_lightgcn(e, _path_graph(3), 0), e)


def test_lightgcn_zero_graph_averages_down(rng):
    e = torch.tensor(rng.normal(size=(4, 2)))
    out = propagate_lightgcn(e, sp.csr_matrix((4, 4)), 3)
    torch.testing.assert_close(out, e / 4)


def test_lightgcn_path_graph_dense_oracle():
    a = _path_graph(3).toarray()
    e = np.ones((3, 2))
    expected = (e + a @ e + a @ a @ e) / 3
    out = propagate_lightgcn(torch.tensor(e), _path_graph(3), 2).numpy()
    np.testing.assert_allclose(out, expected, rtol=1e-12)


def test_lightgcn_linear(rng):
    e = torch.tensor(rng.normal(size=(6, 3)))
    g = _path_graph(6)
    torch.testing.assert_close(propagate_lightgcn(2.5 * e, g, 3), 2.5 * propagate_lightgcn(e, g, 3))


def test_lightgcn_shape_mismatch():
    with pytest.raises(ShapeError):
        propagate_lightgcn(torch.zeros(4, 2), _path_graph(3), 1)


def test_lightgcn_deterministic(rng):
    e = torch.tensor(rng.normal(size=(50, 8)), dtype=torch.float32)
    a = sp.random(50, 50, density=0.1, random_state=1)
    g = to_sparse_tensor(sym_normalize(a + a.T))
    assert torch.equal(propagate_lightgcn(e, g, 3), propagate_lightgcn(e, g, 3))


def _projector(in_dim, dim, value=None, seed=0):
    torch.manual_seed(seed)
    p = ModalityProjector(in_dim, dim).double()
    if value is not None:
        with torch.no_grad():
            for t in p.parameters():
                t.fill_(value)
    return p


def test_projector_zero_params_gives_half(rng):
    out = project_modality(torch.tensor(rng.normal(size=(5, 6))), _projector(6, 4, value=0.0))
    assert torch.all(out == 0.5)


def test_projector_range(rng):
    out = project_modality(torch.tensor(rng.normal(scale=3, size=(20, 6))), _projector(6, 4))
    assert torch.all((out > 0) & (out < 1))


def test_projector_scalar_oracle(rng):
    x = rng.normal(size=(2, 3))
    p = _projector(3, 2, seed=3)
    w1, b1 = p.first.weight.detach().numpy(), p.first.bias.detach().numpy()
    w2, b2 = p.second.weight.detach().numpy(), p.second.bias.detach().numpy()
    b1 = b1 + 0.1
    with torch.no_grad():
        p.first.bias += 0.1
    expected = np.empty((2, 2))
    for r in range(2):
        hidden = [sum(w1[h, c] * x[r, c] for c in range(3)) + b1[h] for h in range(2)]
        for o in range(2):
            z = sum(w2[o, h] * hidden[h] for h in range(2)) + b2[o]
            expected[r, o] = 1 / (1 + math.exp(-z))
    out = project_modality(torch.tensor(x), p).detach().numpy()
    np.testing.assert_allclose(out, expected, atol=1e-6)


def test_projector_width_mismatch():
    with pytest.raises(ShapeError):
        project_modality(torch.zeros(3, 5, dtype=D), _projector(6, 4))


def test_purify_identities(rng):
    x = torch.tensor(rng.normal(size=(4, 3)))
    torch.testing.assert_close(purify(x, torch.ones_like(x)), x)
    assert torch.all(purify(x, torch.zeros_like(x)) == 0)


def test_purify_signs(rng):
    a = torch.tensor(rng.normal(size=(10, 5)))
    b = torch.tensor(rng.normal(size=(10, 5)))
    assert torch.equal(torch.sign(purify(a, b)), torch.sign(a) * torch.sign(b))


def test_semantic_identity_graph(rng):
    x = torch.tensor(rng.normal(size=(5, 3)))
    for layers in (1, 2, 4):
        torch.testing.assert_close(semantic_propagate(x, sp.identity(5, format="csr"), layers), x)


def test_semantic_chain_dense_oracle(rng):
    g = _path_graph(3)
    x = rng.normal(size=(3, 4))
    expected = g.toarray() @ g.toarray() @ x
    out = semantic_propagate(torch.tensor(x), g, 2).numpy()
    np.testing.assert_allclose(out, expected, rtol=1e-5)


def test_semantic_needs_a_layer():
    with pytest.raises(ValueError):
        semantic_propagate(torch.zeros(3, 2), _path_graph(3), 0)


def test_semantic_linear(rng):
    g = _path_graph(7)
    x = torch.tensor(rng.normal(size=(7, 2)))
    y = torch.tensor(rng.normal(size=(7, 2)))
    torch.testing.assert_close(semantic_propagate(x + 3 * y, g, 2),
                               semantic_propagate(x, g, 2) + 3 * semantic_propagate(y, g, 2))


def test_user_aggregation_cases():
    items = torch.tensor([[1.0, 2.0], [3.0, 5.0]], dtype=D)
    # user 0 owns item 0 alone, user 1 has nothing
    R = sp.csr_matrix([[1.0, 0.0], [0.0, 0.0]])
    out = aggregate_user_modality(items, bipartite_normalize(R))
    torch.testing.assert_close(out[0], items[0])
    assert torch.all(out[1] == 0)


def test_user_aggregation_complete_bipartite():
    items = torch.tensor([[1.0, 2.0], [3.0, 5.0]], dtype=D)
    out = aggregate_user_modality(items, bipartite_normalize(sp.csr_matrix(np.ones((2, 2)))))
    torch.testing.assert_close(out, (items[0] + items[1]).expand(2, 2) / 2)
