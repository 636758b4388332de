"""Independent oracles shared by the test modules."""
import math

import numpy as np

from dinof import autodiff as ad
from dinof.autodiff import Tape, Tensor
from dinof.flow import FlowModel


def central_diff(f, arrays, h=1e-5):
    """Central finite differences of scalar ``f(*arrays)`` w.r.t. every array."""
    grads = []
    for k, a in enumerate(arrays):
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            plus = [x.copy() for x in arrays]
            minus = [x.copy() for x in arrays]
            plus[k][idx] += h
            minus[k][idx] -= h
            g[idx] = (f(*plus) - f(*minus)) / (2 * h)
        grads.append(g)
    return grads


def tape_grads(build, arrays):
    """Reverse-mode gradients of ``build(*tensors)`` (a scalar Tensor)."""
    with Tape() as tape:
        ts = [tape.watch(Tensor(a.copy())) for a in arrays]
        root = build(*ts)
        return tape.gradient(root, ts)


def rel_err(a, b):
    """Max abs difference scaled by the larger of 1 and the reference magnitude."""
    a = np.asarray(a)
    b = np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(b)))))


def plain(build):
    """Evaluate a tensor-building function on raw arrays outside any tape."""
    return lambda *arrs: build(*[Tensor(x) for x in arrs]).item()


def weighted(op, weights):
    """Reduce an op's output to a scalar with fixed random weights (full-Jacobian probe)."""
    def build(*ts):
        out = op(*ts)
        outs = out if isinstance(out, tuple) else (out,)
        total = None
        for o, w in zip(outs, weights):
            term = ad.sum(ad.mul(o, Tensor(w)))
            total = term if total is None else ad.add(total, term)
        return total
    return build


def op_case(kind, rng):
    """Random inputs and a tensor op for one gradient check of ``kind``.

    Returns ``(op, arrays, out_shapes)``.
    """
    b, n, m = rng.integers(1, 5, size=3)
    def r(*shape):
        return rng.standard_normal(shape)
    if kind == "add":
        return ad.add, [r(b, n), r(b, n)], [(b, n)]
    if kind == "sub":
        return ad.sub, [r(b, n), r(b, n)], [(b, n)]
    if kind == "mul":
        return ad.mul, [r(b, n), r(b, n)], [(b, n)]
    if kind == "matmul":
        return ad.matmul, [r(b, n), r(n, m)], [(b, m)]
    if kind == "affine":
        return ad.affine, [r(b, n), r(n, m), r(m)], [(b, m)]
    if kind == "tanh":
        return ad.tanh, [r(b, n)], [(b, n)]
    if kind == "softplus":
        return ad.softplus, [3 * r(b, n)], [(b, n)]
    if kind == "exp":
        return ad.exp, [r(b, n)], [(b, n)]
    if kind == "log":
        return ad.log, [0.5 + rng.random((b, n)) * 2], [(b, n)]
    if kind == "square":
        return ad.square, [r(b, n)], [(b, n)]
    if kind == "scale":
        c = float(rng.standard_normal())
        return (lambda x: ad.scale(x, c)), [r(b, n)], [(b, n)]
    if kind == "sum":
        axis = [None, 0, 1][rng.integers(3)]
        shape = [(), (n,), (b,)][[None, 0, 1].index(axis)]
        return (lambda x: ad.sum(x, axis)), [r(b, n)], [shape]
    if kind == "mean":
        axis = [None, 0, 1][rng.integers(3)]
        shape = [(), (n,), (b,)][[None, 0, 1].index(axis)]
        return (lambda x: ad.mean(x, axis)), [r(b, n)], [shape]
    if kind == "concat":
        return (lambda x, y: ad.concat([x, y], axis=1)), [r(b, n), r(b, m)], [(b, n + m)]
    if kind == "split":
        k = int(rng.integers(0, n + 1))
        return (lambda x: ad.split(x, k, axis=1)), [r(b, n)], [(b, k), (b, n - k)]
    if kind == "broadcast":
        return (lambda x: ad.broadcast(x, int(b))), [r(n)], [(b, n)]
    raise KeyError(kind)


def gradcheck_op(kind, rng, h=1e-5):
    op, arrays, shapes = op_case(kind, rng)
    weights = [rng.standard_normal(s) for s in shapes]
    build = weighted(op, weights)
    analytic = tape_grads(build, arrays)
    numeric = central_diff(plain(build), arrays, h)
    return max(rel_err(a, n) for a, n in zip(analytic, numeric))


def randomized(dim, blocks=2, hidden=8, seed=0, scale=0.5):
    rng = np.random.default_rng(seed)
    f = FlowModel(dim, blocks, hidden, rng=rng)
    f.params = {k: scale * rng.standard_normal(v.shape) for k, v in f.params.items()}
    f.initialized = True
    return f


def identity_flow(dim, blocks=1):
    f = FlowModel(dim, blocks, 4, rng=np.random.default_rng(0))
    f.initialized = True  # zero log-scales, zero biases, zero conditioner heads
    return f


def numerical_logdet(f, x, h=1e-6):
    d = x.shape[0]
    jac = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        jac[:, j] = (f.forward_np((x + e)[None])[0][0] - f.forward_np((x - e)[None])[0][0]) / (2 * h)
    return np.linalg.slogdet(jac)[1]


def simulate_em(spec, x0, t_marks, n_paths, steps_per_unit, rng):
    """Euler-Maruyama paths of dx = f(t) x dt + g(t) dw, recorded at ``t_marks``."""
    x = np.array(np.broadcast_to(x0, (n_paths,)), dtype=np.float64)
    dt = 1.0 / steps_per_unit
    out = {}
    t = 0.0
    buf = np.empty(n_paths)
    for mark in sorted(t_marks):
        n = int(round((mark - t) * steps_per_unit))
        for _ in range(n):
            g = float(spec.diffusion(t))
            f = float(spec.drift_coef(t))
            rng.standard_normal(out=buf)
            x += f * x * dt + g * math.sqrt(dt) * buf
            t += dt
        out[mark] = x.copy()
    return out
