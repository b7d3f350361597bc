"""Hot inner loops: feature extraction, MLP loss/gradient, Adam.

Every kernel has a numba version and a vectorized numpy version with the same
signature. The module-level names at the bottom pick one according to
``dmcc._accel.USE_NUMBA``; both stay importable so tests and the benchmark can
compare them.

MLP parameters live in one flat float64 vector. For layer ``l`` with fan-in
``n_in`` and fan-out ``n_out`` the weight matrix (``n_out x n_in``, row-major)
comes first, then the ``n_out`` biases.
"""
import numpy as np

from ._accel import USE_NUMBA, njit

OUT_LO = 0.001
OUT_HI = 0.998
OUT_SUM_MAX = 0.999
COS_EPS = 1e-7


def layer_offsets(sizes):
    offsets = np.zeros(len(sizes), dtype=np.int64)
    for l in range(len(sizes) - 1):
        offsets[l + 1] = offsets[l] + sizes[l] * sizes[l + 1] + sizes[l + 1]
    return offsets


# --------------------------------------------------------------------------
# features

@njit
def features_numba(px, valid):
    n = px.shape[0]
    mx = np.zeros(3)
    tot = np.zeros(3)
    count = 0
    best_sum = -1.0
    best = -1
    dark_sum = np.inf
    dark = -1
    for p in range(n):
        if not valid[p]:
            continue
        count += 1
        s = 0.0
        for c in range(3):
            v = px[p, c]
            if v > mx[c]:
                mx[c] = v
            tot[c] += v
            s += v
        if s > best_sum:
            best_sum = s
            best = p
        if s > 0.0 and s < dark_sum:
            dark_sum = s
            dark = p
    out = np.full(8, np.nan)
    if count == 0 or dark < 0:
        return out
    ms = mx[0] + mx[1] + mx[2]
    out[0] = mx[0] / ms
    out[1] = mx[1] / ms
    ts = tot[0] + tot[1] + tot[2]
    out[2] = tot[0] / ts
    out[3] = tot[1] / ts
    out[4] = px[best, 0] / best_sum
    out[5] = px[best, 1] / best_sum
    out[6] = px[dark, 0] / dark_sum
    out[7] = px[dark, 1] / dark_sum
    return out


def features_numpy(px, valid):
    idx = np.flatnonzero(valid)
    out = np.full(8, np.nan)
    if idx.size == 0:
        return out
    p = px[idx]
    sums = p.sum(axis=1)
    positive = sums > 0
    if not positive.any():
        return out
    mx = p.max(axis=0)
    mean = p.sum(axis=0)
    b = int(np.argmax(sums))
    cand = np.where(positive, sums, np.inf)
    d = int(np.argmin(cand))
    out[0:2] = mx[:2] / mx.sum()
    out[2:4] = mean[:2] / mean.sum()
    out[4:6] = p[b, :2] / sums[b]
    out[6:8] = p[d, :2] / sums[d]
    return out


# --------------------------------------------------------------------------
# MLP

@njit
def _head_numba(z0, z1, l0, l1, l2):
    """Output clamp/rescale, angular loss and its gradient w.r.t. (z0, z1)."""
    c0 = min(max(z0, OUT_LO), OUT_HI)
    c1 = min(max(z1, OUT_LO), OUT_HI)
    s = c0 + c1
    rescaled = s > OUT_SUM_MAX
    if rescaled:
        o0 = c0 * OUT_SUM_MAX / s
        o1 = c1 * OUT_SUM_MAX / s
    else:
        o0 = c0
        o1 = c1
    o2 = 1.0 - o0 - o1
    nl = np.sqrt(l0 * l0 + l1 * l1 + l2 * l2)
    nh = np.sqrt(o0 * o0 + o1 * o1 + o2 * o2)
    u = (l0 * o0 + l1 * o1 + l2 * o2) / (nl * nh)
    uc = min(max(u, -1.0 + COS_EPS), 1.0 - COS_EPS)
    loss = np.arccos(uc)
    dldu = -1.0 / np.sqrt(1.0 - uc * uc)
    k = 1.0 / (nl * nh)
    q = u / (nh * nh)
    g0 = dldu * (l0 * k - q * o0)
    g1 = dldu * (l1 * k - q * o1)
    g2 = dldu * (l2 * k - q * o2)
    d0 = g0 - g2
    d1 = g1 - g2
    if rescaled:
        proj = (d0 * c0 + d1 * c1) / s
        d0 = OUT_SUM_MAX / s * (d0 - proj)
        d1 = OUT_SUM_MAX / s * (d1 - proj)
    if not (OUT_LO < z0 < OUT_HI):
        d0 = 0.0
    if not (OUT_LO < z1 < OUT_HI):
        d1 = 0.0
    return loss, d0, d1, o0, o1


@njit
def _dense_forward(theta, sizes, offsets, x, acts, pre):
    nl = sizes.size - 1
    for i in range(sizes[0]):
        acts[0, i] = x[i]
    for l in range(nl):
        nin = sizes[l]
        nout = sizes[l + 1]
        wo = offsets[l]
        bo = wo + nin * nout
        last = l == nl - 1
        for j in range(nout):
            z = theta[bo + j]
            row = wo + j * nin
            for i in range(nin):
                z += theta[row + i] * acts[l, i]
            pre[l, j] = z
            if last or z > 0.0:
                acts[l + 1, j] = z
            else:
                acts[l + 1, j] = 0.0


@njit
def forward_numba(theta, sizes, X):
    offsets = layer_offsets_nb(sizes)
    nl = sizes.size - 1
    maxw = sizes.max()
    acts = np.zeros((nl + 1, maxw))
    pre = np.zeros((nl, maxw))
    out = np.empty((X.shape[0], 2))
    for s in range(X.shape[0]):
        _dense_forward(theta, sizes, offsets, X[s], acts, pre)
        z0 = acts[nl, 0]
        z1 = acts[nl, 1]
        c0 = min(max(z0, OUT_LO), OUT_HI)
        c1 = min(max(z1, OUT_LO), OUT_HI)
        t = c0 + c1
        if t > OUT_SUM_MAX:
            c0 = c0 * OUT_SUM_MAX / t
            c1 = c1 * OUT_SUM_MAX / t
        out[s, 0] = c0
        out[s, 1] = c1
    return out


@njit
def layer_offsets_nb(sizes):
    offsets = np.zeros(sizes.size, dtype=np.int64)
    for l in range(sizes.size - 1):
        offsets[l + 1] = offsets[l] + sizes[l] * sizes[l + 1] + sizes[l + 1]
    return offsets


@njit
def loss_grad_numba(theta, sizes, X, L, lam):
    """Mean angular loss (radians) + lam*|theta|_1 and its gradient."""
    offsets = layer_offsets_nb(sizes)
    nl = sizes.size - 1
    maxw = sizes.max()
    acts = np.zeros((nl + 1, maxw))
    pre = np.zeros((nl, maxw))
    delta = np.zeros(maxw)
    prev = np.zeros(maxw)
    grad = np.zeros(theta.size)
    n = X.shape[0]
    total = 0.0
    for s in range(n):
        _dense_forward(theta, sizes, offsets, X[s], acts, pre)
        loss, d0, d1, o0, o1 = _head_numba(acts[nl, 0], acts[nl, 1],
                                           L[s, 0], L[s, 1], L[s, 2])
        total += loss
        delta[0] = d0
        delta[1] = d1
        for l in range(nl - 1, -1, -1):
            nin = sizes[l]
            nout = sizes[l + 1]
            wo = offsets[l]
            bo = wo + nin * nout
            for j in range(nout):
                d = delta[j]
                if d == 0.0:
                    continue
                grad[bo + j] += d
                row = wo + j * nin
                for i in range(nin):
                    grad[row + i] += d * acts[l, i]
            if l > 0:
                for i in range(nin):
                    if pre[l - 1, i] > 0.0:
                        acc = 0.0
                        for j in range(nout):
                            acc += theta[wo + j * nin + i] * delta[j]
                        prev[i] = acc
                    else:
                        prev[i] = 0.0
                for i in range(nin):
                    delta[i] = prev[i]
    l1 = 0.0
    for k in range(theta.size):
        grad[k] /= n
        t = theta[k]
        if t > 0.0:
            grad[k] += lam
            l1 += t
        elif t < 0.0:
            grad[k] -= lam
            l1 -= t
    return total / n + lam * l1, grad


def _unpack(theta, sizes):
    offsets = layer_offsets(sizes)
    layers = []
    for l in range(len(sizes) - 1):
        nin, nout = sizes[l], sizes[l + 1]
        wo = offsets[l]
        w = theta[wo:wo + nin * nout].reshape(nout, nin)
        b = theta[wo + nin * nout:offsets[l + 1]]
        layers.append((w, b))
    return layers


def _dense_numpy(layers, X):
    acts = [X]
    pres = []
    for l, (w, b) in enumerate(layers):
        z = acts[-1] @ w.T + b
        pres.append(z)
        acts.append(z if l == len(layers) - 1 else np.maximum(z, 0.0))
    return acts, pres


def _clamp_numpy(z):
    c = np.clip(z, OUT_LO, OUT_HI)
    s = c.sum(axis=1)
    rescaled = s > OUT_SUM_MAX
    o = c.copy()
    o[rescaled] *= (OUT_SUM_MAX / s[rescaled])[:, None]
    return c, s, rescaled, o


def forward_numpy(theta, sizes, X):
    acts, _ = _dense_numpy(_unpack(theta, sizes), X)
    return _clamp_numpy(acts[-1])[3]


def loss_grad_numpy(theta, sizes, X, L, lam):
    layers = _unpack(theta, sizes)
    acts, pres = _dense_numpy(layers, X)
    z = acts[-1]
    c, s, rescaled, o = _clamp_numpy(z)
    lhat = np.column_stack([o, 1.0 - o[:, 0] - o[:, 1]])
    nl = np.linalg.norm(L, axis=1)
    nh = np.linalg.norm(lhat, axis=1)
    u = np.einsum("ij,ij->i", L, lhat) / (nl * nh)
    uc = np.clip(u, -1.0 + COS_EPS, 1.0 - COS_EPS)
    loss = np.arccos(uc)
    dldu = -1.0 / np.sqrt(1.0 - uc * uc)
    g = dldu[:, None] * (L / (nl * nh)[:, None] - (u / nh ** 2)[:, None] * lhat)
    d = g[:, :2] - g[:, 2:3]
    proj = np.einsum("ij,ij->i", d, c) / s
    dr = (OUT_SUM_MAX / s)[:, None] * (d - proj[:, None])
    d = np.where(rescaled[:, None], dr, d)
    d = d * ((z > OUT_LO) & (z < OUT_HI))
    n = X.shape[0]
    grads = []
    for l in range(len(layers) - 1, -1, -1):
        w, _ = layers[l]
        grads.append((d.T @ acts[l], d.sum(axis=0)))
        if l > 0:
            d = (d @ w) * (pres[l - 1] > 0)
    grad = np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in reversed(grads)])
    grad /= n
    grad += lam * np.sign(theta)
    return loss.mean() + lam * np.abs(theta).sum(), grad


# --------------------------------------------------------------------------
# Adam

@njit
def adam_numba(theta, m, v, grad, t, lr, beta1, beta2, eps):
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for k in range(theta.size):
        g = grad[k]
        m[k] = beta1 * m[k] + (1.0 - beta1) * g
        v[k] = beta2 * v[k] + (1.0 - beta2) * g * g
        theta[k] -= lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + eps)


def adam_numpy(theta, m, v, grad, t, lr, beta1, beta2, eps):
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    theta -= lr * (m / (1.0 - beta1 ** t)) / (np.sqrt(v / (1.0 - beta2 ** t)) + eps)


if USE_NUMBA:
    features = features_numba
    forward_batch = forward_numba
    loss_grad = loss_grad_numba
    adam_update = adam_numba
else:
    features = features_numpy
    forward_batch = forward_numpy
    loss_grad = loss_grad_numpy
    adam_update = adam_numpy
