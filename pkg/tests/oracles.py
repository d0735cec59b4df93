"""Independent reference implementations shared by the unit and acceptance suites."""
import math

import numpy as np

from bplan.neuralnet import Conv3D, Dense, Dropout, MaxPool3D, ReLU, cross_entropy_loss, mse_loss

H = 1e-5
REL_TOL = 1e-4
# components whose gradient is this small compare absolutely: the relative
# error of a value near zero is dominated by finite-difference round-off
ABS_FLOOR = 1e-7


def naive_conv3d(x, W, b, stride):
    """Six nested loops (batch, filter, three output axes) of direct summation."""
    B, c, D, Hh, Ww = x.shape
    f, _, k = W.shape[:3]
    od, oh, ow = [(n - k) // stride + 1 for n in (D, Hh, Ww)]
    out = np.zeros((B, f, od, oh, ow))
    for n in range(B):
        for q in range(f):
            for i in range(od):
                for j in range(oh):
                    for l in range(ow):
                        patch = x[n, :, i * stride:i * stride + k, j * stride:j * stride + k,
                                  l * stride:l * stride + k]
                        out[n, q, i, j, l] = np.sum(patch * W[q]) + b[q]
    return out


def naive_conv3d_backward(x, W, g, stride):
    B, c, D, Hh, Ww = x.shape
    f, _, k = W.shape[:3]
    dx, dW = np.zeros_like(x), np.zeros_like(W)
    for n in range(B):
        for q in range(f):
            for i in range(g.shape[2]):
                for j in range(g.shape[3]):
                    for l in range(g.shape[4]):
                        sl = (n, slice(None), slice(i * stride, i * stride + k),
                              slice(j * stride, j * stride + k), slice(l * stride, l * stride + k))
                        dx[sl] += g[n, q, i, j, l] * W[q]
                        dW[q] += g[n, q, i, j, l] * x[sl]
    return dx, dW, g.sum(axis=(0, 2, 3, 4))


def naive_maxpool(x, g):
    """Explicit 2x2x2 block scan; gradient to the first maximum in C order."""
    B, c, D, Hh, Ww = x.shape
    out = np.zeros((B, c, D // 2, Hh // 2, Ww // 2))
    dx = np.zeros_like(x)
    for n in range(B):
        for ch in range(c):
            for i in range(D // 2):
                for j in range(Hh // 2):
                    for l in range(Ww // 2):
                        best, where = -np.inf, None
                        for a in range(2):
                            for bb in range(2):
                                for cc in range(2):
                                    v = x[n, ch, 2 * i + a, 2 * j + bb, 2 * l + cc]
                                    if v > best:
                                        best, where = v, (2 * i + a, 2 * j + bb, 2 * l + cc)
                        out[n, ch, i, j, l] = best
                        dx[(n, ch) + where] += g[n, ch, i, j, l]
    return out, dx


def numeric_grad(fn, arr):
    """Central differences of scalar ``fn()`` with respect to every entry of ``arr`` (in place)."""
    grad = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = arr[idx]
        arr[idx] = old + H
        fp = fn()
        arr[idx] = old - H
        fm = fn()
        arr[idx] = old
        grad[idx] = (fp - fm) / (2 * H)
    return grad


def max_rel_error(analytic, numeric):
    a, n = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), ABS_FLOOR)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def _layer_check(layer, x, extra=None, train=False):
    """Max relative error over input, side-input and parameter gradients for L = <out, R>."""
    rng = np.random.default_rng(12345)
    kw = {} if extra is None else {"extra": extra}
    out = layer.forward(x, train, None, **kw)
    R = rng.normal(size=out.shape)

    def L():
        return float(np.sum(layer.forward(x, train, None, **kw) * R))

    layer.forward(x, train, None, **kw)
    dx = layer.backward(R)
    grads = {k: v.copy() for k, v in layer.grads.items()}
    d_extra = getattr(layer, "extra_grad", None)
    errs = [max_rel_error(dx, numeric_grad(L, x))]
    if extra is not None:
        errs.append(max_rel_error(d_extra, numeric_grad(L, extra)))
    for k, p in layer.params.items():
        errs.append(max_rel_error(grads[k], numeric_grad(L, p)))
    return max(errs)


def _distinct(rng, shape, gap=1e-3):
    """Values whose pairwise gaps exceed the finite-difference step (no kinks crossed)."""
    n = int(np.prod(shape))
    return (rng.permutation(n) * gap + rng.uniform(0, gap / 4)).reshape(shape) - n * gap / 2


def gradient_check_errors(kind, n_instances=20, seed=0):
    """Worst relative error per random instance for one layer or loss type."""
    rng = np.random.default_rng(seed)
    errs = []
    for _ in range(n_instances):
        if kind == "conv3d":
            c, f, k, s = int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 3))
            side = int(rng.integers(k, k + 4))
            layer = Conv3D("c", c, f, k, s, rng)
            layer.params["b"] = rng.normal(size=f)
            errs.append(_layer_check(layer, rng.normal(size=(2, c, side, side, side))))
        elif kind == "dense":
            i, o, e = int(rng.integers(1, 12)), int(rng.integers(1, 10)), int(rng.integers(0, 4))
            layer = Dense("d", i, o, e, rng)
            layer.params["b"] = rng.normal(size=o)
            extra = rng.normal(size=(3, e)) if e else None
            errs.append(_layer_check(layer, rng.normal(size=(3, i)), extra))
        elif kind == "relu":
            x = rng.normal(size=(2, 3, 4))
            x[np.abs(x) < 1e-3] = 0.5
            errs.append(_layer_check(ReLU("r"), x))
        elif kind == "maxpool3d":
            side = 2 * int(rng.integers(1, 4))
            errs.append(_layer_check(MaxPool3D("p"), _distinct(rng, (2, 2, side, side, side))))
        elif kind == "dropout":
            layer = Dropout("dr", float(rng.uniform(0.1, 0.8)))
            x = rng.normal(size=(4, 7))
            layer.fixed_mask = rng.random(x.shape) >= layer.rate
            errs.append(_layer_check(layer, x, train=True))
        elif kind == "mse":
            pred, target = rng.normal(size=(3, 9)), rng.normal(size=(3, 9))
            _, g = mse_loss(pred, target)
            errs.append(max_rel_error(g, numeric_grad(lambda: mse_loss(pred, target)[0], pred)))
        elif kind == "softmax_cross_entropy":
            logits = rng.normal(size=(4, 5)) * 3
            labels = rng.integers(0, 5, size=4)
            _, g = cross_entropy_loss(logits, labels)
            errs.append(max_rel_error(g, numeric_grad(lambda: cross_entropy_loss(logits, labels)[0], logits)))
        else:
            raise ValueError(kind)
    return errs


GRADIENT_KINDS = ("conv3d", "dense", "relu", "maxpool3d", "dropout", "mse", "softmax_cross_entropy")


def crossing_oracle(omap, a, b):
    """Leaves crossed by segment a-b: split at every grid-plane crossing, take segment midpoints."""
    a = (np.asarray(a) - omap.origin) / omap.leaf
    b = (np.asarray(b) - omap.origin) / omap.leaf
    d = b - a
    ts = [0.0, 1.0]
    for ax in range(3):
        if d[ax] == 0:
            continue
        lo, hi = sorted((a[ax], b[ax]))
        for plane in range(int(math.floor(lo)) + 1, int(math.ceil(hi))):
            ts.append((plane - a[ax]) / d[ax])
    ts = sorted(set(ts))
    cells = set()
    for t0, t1 in zip(ts, ts[1:]):
        mid = a + 0.5 * (t0 + t1) * d
        cells.add(tuple(np.clip(np.floor(mid).astype(int), 0, omap.n - 1)))
    if len(ts) == 2 and ts[0] == ts[1]:
        cells.add(tuple(np.floor(a).astype(int)))
    return cells
