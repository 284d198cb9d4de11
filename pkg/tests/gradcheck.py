"""Central finite-difference oracle shared by the gradient tests."""
import numpy as np

from swarmtopo import autodiff as ad


def numeric_grads(fn, arrays, h=1e-5):
    """Central differences of scalar ``fn(*arrays)`` w.r.t. every array."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = a[idx]
            a[idx] = orig + h
            fp = fn(*arrays)
            a[idx] = orig - h
            fm = fn(*arrays)
            a[idx] = orig
            g[idx] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def analytic_grads(build, arrays):
    ts = [ad.parameter(a.copy()) for a in arrays]
    out = build(*ts)
    ad.backward(out)
    return [t.grad for t in ts]


def max_rel_error(a, b, floor=1e-8):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def check(build, arrays, h=1e-5):
    """Return the worst relative error between analytic and numeric grads.

    ``build`` maps tensors to a scalar tensor; the numeric side evaluates the
    same graph on plain (non-tracking) tensors.
    """
    def value(*arrs):
        return build(*[ad.tensor(a) for a in arrs]).item()

    num = numeric_grads(value, [a.copy() for a in arrays], h)
    ana = analytic_grads(build, arrays)
    errs = []
    for n, a in zip(num, ana):
        scale = max(np.max(np.abs(n)), np.max(np.abs(a)), 1e-6)
        errs.append(float(np.max(np.abs(n - a)) / scale))
    return max(errs)
