"""Recurrent cell primitives on the differentiable graph.

Parameters live as plain name -> numpy array dicts owned by the model
objects; `bind` turns them into graph leaves for one forward pass. Gate
weights are fused into single matrices to keep per-step node counts low.
"""

import numpy as np

INIT_SCALE = 0.1


def uniform_init(rng, shape):
    return rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)


def init_gru(rng, input_dim, hidden_dim, prefix):
    """Gated recurrent unit: update/reset gates fused, candidate separate."""
    return {
        f"{prefix}.Wx": uniform_init(rng, (input_dim, 3 * hidden_dim)),
        f"{prefix}.Uzr": uniform_init(rng, (hidden_dim, 2 * hidden_dim)),
        f"{prefix}.Uh": uniform_init(rng, (hidden_dim, hidden_dim)),
        f"{prefix}.bzr": uniform_init(rng, (2 * hidden_dim,)),
        f"{prefix}.bh": uniform_init(rng, (hidden_dim,)),
    }


def init_lstm(rng, input_dim, hidden_dim, prefix):
    """LSTM with input/forget/output/candidate gates fused in one matrix."""
    return {
        f"{prefix}.Wx": uniform_init(rng, (input_dim, 4 * hidden_dim)),
        f"{prefix}.Uh": uniform_init(rng, (hidden_dim, 4 * hidden_dim)),
        f"{prefix}.b": uniform_init(rng, (4 * hidden_dim,)),
    }


def bind(graph, arrays):
    """Create named parameter leaves for one graph, in deterministic order."""
    return {name: graph.param(arrays[name], name=name) for name in sorted(arrays)}


def gru_step(g, p, prefix, x, h):
    """One GRU step. Works on single vectors or on rows batched along the
    leading axis (hidden state h must match x's leading shape)."""
    hidden = p[f"{prefix}.Uh"].shape[0]
    xw = g.matmul(x, p[f"{prefix}.Wx"])
    x_zr = g.slice(xw, (Ellipsis, slice(0, 2 * hidden)))
    x_h = g.slice(xw, (Ellipsis, slice(2 * hidden, 3 * hidden)))
    pre_zr = g.add(g.add(x_zr, g.matmul(h, p[f"{prefix}.Uzr"])), p[f"{prefix}.bzr"])
    zr = g.sigmoid(pre_zr)
    z = g.slice(zr, (Ellipsis, slice(0, hidden)))
    r = g.slice(zr, (Ellipsis, slice(hidden, 2 * hidden)))
    cand = g.tanh(g.add(g.add(x_h, g.matmul(g.mul(r, h), p[f"{prefix}.Uh"])),
                        p[f"{prefix}.bh"]))
    keep = g.offset(g.scale(z, -1.0), 1.0)
    return g.add(g.mul(keep, h), g.mul(z, cand))


def lstm_step(g, p, prefix, x, state):
    """One LSTM step on (h, c). Batches along the leading axis like gru_step."""
    h, c = state
    hidden = p[f"{prefix}.Uh"].shape[0]
    pre = g.add(g.add(g.matmul(x, p[f"{prefix}.Wx"]),
                      g.matmul(h, p[f"{prefix}.Uh"])),
                p[f"{prefix}.b"])
    i = g.sigmoid(g.slice(pre, (Ellipsis, slice(0, hidden))))
    f = g.sigmoid(g.slice(pre, (Ellipsis, slice(hidden, 2 * hidden))))
    o = g.sigmoid(g.slice(pre, (Ellipsis, slice(2 * hidden, 3 * hidden))))
    cand = g.tanh(g.slice(pre, (Ellipsis, slice(3 * hidden, 4 * hidden))))
    c_new = g.add(g.mul(f, c), g.mul(i, cand))
    h_new = g.mul(o, g.tanh(c_new))
    return h_new, c_new


def zero_state(g, shape):
    return g.leaf(np.zeros(shape), requires_grad=False, name="zero_state")
