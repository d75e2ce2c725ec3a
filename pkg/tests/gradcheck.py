"""Central finite-difference helpers shared by the gradient tests."""
import numpy as np


def numerical_grad(f, x, eps=1e-5):
    """d f(x) / dx by central differences; ``f`` returns a scalar, ``x`` is perturbed in place."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + eps
        fp = f()
        x[idx] = old - eps
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * eps)
    return g


def rel_error(analytic, numeric, floor=1e-8):
    """Elementwise |a - n| / max(|a|, |n|, floor)."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def naive_conv2d(x, w, b, stride, pad):
    """Direct-summation convolution used as an independent oracle."""
    c_in, h, wd = x.shape
    c_out, _, k, _ = w.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((c_out, ho, wo))
    for o in range(c_out):
        for y in range(ho):
            for xx in range(wo):
                acc = b[o]
                for c in range(c_in):
                    for i in range(k):
                        for j in range(k):
                            r, s = y * stride - pad + i, xx * stride - pad + j
                            if 0 <= r < h and 0 <= s < wd:
                                acc += x[c, r, s] * w[o, c, i, j]
                out[o, y, xx] = acc
    return out
