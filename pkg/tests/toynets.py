"""Random small computation graphs exercising every tape op.

Used by both the tape unit tests and the acceptance gradient check. Nets
use smooth nonlinearities so central differences are a valid oracle; the
relu path is checked separately at points bounded away from its kink.
"""

import numpy as np

from lorasc.numkit import RngState, Tape


def build_toy_net(seed: int):
    """Returns (params dict, loss_fn) where loss_fn(params) -> (tape, node)."""
    rng = RngState(seed)
    kind = seed % 5
    if kind == 0:
        # two-layer tanh regression with rmsnorm
        x = rng.normal((6, 5))
        w1 = rng.normal((4, 5)) * 0.7
        w2 = rng.normal((3, 4)) * 0.7
        y = rng.normal((6, 3))
        params = {"w1": w1, "w2": w2}

        def f(p):
            t = Tape()
            h = t.constant(x)
            h = t.tanh(t.matmul(h, t.transpose(t.param("w1", p["w1"]))))
            h = t.rmsnorm(h)
            out = t.matmul(h, t.transpose(t.param("w2", p["w2"])))
            return t, t.mse(out, y)
    elif kind == 1:
        # softmax attention block into mse
        x = rng.normal((5, 6))
        wq = rng.normal((6, 6)) * 0.5
        wk = rng.normal((6, 6)) * 0.5
        wv = rng.normal((6, 6)) * 0.5
        y = rng.normal((5, 6))
        params = {"wq": wq, "wk": wk, "wv": wv}

        def f(p):
            t = Tape()
            h = t.constant(x)
            q = t.matmul(h, t.transpose(t.param("wq", p["wq"])))
            k = t.matmul(h, t.transpose(t.param("wk", p["wk"])))
            v = t.matmul(h, t.transpose(t.param("wv", p["wv"])))
            att = t.softmax_rows(t.scale(t.matmul(q, t.transpose(k)), 1.0 / np.sqrt(6)))
            return t, t.mse(t.matmul(att, v), y)
    elif kind == 2:
        # classification head with gather (embedding) and mean pooling
        vocab, d, classes = 7, 4, 3
        tokens = rng.integers(0, vocab, (1, 6)).reshape(-1)
        emb = rng.normal((vocab, d)) * 0.8
        head = rng.normal((classes, d)) * 0.8
        label = np.array([int(seed) % classes])
        params = {"emb": emb, "head": head}

        def f(p):
            t = Tape()
            seq = t.gather_rows(t.param("emb", p["emb"]), tokens)
            pooled = t.mean_rows(t.tanh(seq))
            logits = t.matmul(pooled, t.transpose(t.param("head", p["head"])))
            return t, t.cross_entropy(logits, label)
    elif kind == 3:
        # column split/concat with scaling and subtraction
        x = rng.normal((4, 6))
        w = rng.normal((6, 6)) * 0.6
        y = rng.normal((4, 6))
        params = {"w": w}

        def f(p):
            t = Tape()
            h = t.matmul(t.constant(x), t.param("w", p["w"]))
            left = t.slice_cols(h, 0, 3)
            right = t.slice_cols(h, 3, 6)
            mixed = t.concat_cols([t.tanh(right), t.scale(left, 0.5)])
            return t, t.mse(t.sub(mixed, t.constant(np.zeros_like(y))), y)
    else:
        # row concat of two branches; w feeds both, so grads must accumulate
        x1 = rng.normal((3, 4))
        x2 = rng.normal((2, 4))
        w = rng.normal((4, 4)) * 0.6
        b = rng.normal((5, 4)) * 0.3
        y = rng.normal((5, 4))
        params = {"w": w, "b": b}

        def f(p):
            t = Tape()
            wnode = t.param("w", p["w"])
            top = t.tanh(t.matmul(t.constant(x1), wnode))
            bottom = t.rmsnorm(t.matmul(t.constant(x2), wnode))
            merged = t.concat_rows([top, bottom])
            shifted = t.add(merged, t.param("b", p["b"]))
            return t, t.mse(shifted, y)

    return params, f


def max_relative_gap(g_ad, g_fd):
    worst = 0.0
    for name in g_fd:
        a, b = np.asarray(g_ad[name]), np.asarray(g_fd[name])
        scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)
        worst = max(worst, float(np.max(np.abs(a - b)) / scale))
    return worst
