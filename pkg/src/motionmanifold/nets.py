"""Small tanh MLPs with hand-rolled derivatives.

The computation graph never changes (affine layers, tanh hidden units,
identity output, plus quadratic forms in directional derivatives), so
reverse-mode, forward-mode, and reverse-through-forward passes are written
out structurally instead of going through a general tape.

Shape conventions: weight matrices are (out, in); activations are
(batch, width); tangent stacks carry an extra direction axis,
(batch, k, width).
"""

from __future__ import annotations

import json

import numpy as np

from .errors import DistortionUndefinedError, TrainingError


class Mlp:
    """Fully connected network, tanh on hidden layers, identity output."""

    def __init__(self, sizes, weights, biases, seed=None):
        self.sizes = list(int(s) for s in sizes)
        self.weights = weights
        self.biases = biases
        self.seed = seed
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.shape != (self.sizes[i + 1], self.sizes[i]):
                raise ValueError(f"layer {i} weight shape {w.shape} does not "
                                 f"match sizes {self.sizes}")
            if b.shape != (self.sizes[i + 1],):
                raise ValueError(f"layer {i} bias shape {b.shape} does not "
                                 f"match sizes {self.sizes}")

    @classmethod
    def create(cls, sizes, seed):
        """Symmetric uniform fan-in initialization, reproducible by seed."""
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(sizes, weights, biases, seed=seed)

    @property
    def n_layers(self):
        return len(self.weights)

    @property
    def in_dim(self):
        return self.sizes[0]

    @property
    def out_dim(self):
        return self.sizes[-1]

    def n_params(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    # -- primal ----------------------------------------------------------

    def _check_input(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"input size {x.shape[-1]} != expected "
                             f"{self.in_dim}")
        return x

    def forward(self, x):
        """Evaluate the network; accepts (p,) or (batch, p)."""
        x = self._check_input(x)
        a = x
        last = self.n_layers - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = a @ w.T + b
            if i != last:
                a = np.tanh(a)
        return a

    def forward_cache(self, x):
        """Activations [a_0, ..., a_L] for use by the derivative passes."""
        x = self._check_input(x)
        acts = [x]
        last = self.n_layers - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = acts[-1] @ w.T + b
            if i != last:
                a = np.tanh(a)
            acts.append(a)
        return acts

    # -- reverse mode ----------------------------------------------------

    def backward(self, acts, cotangent):
        """Gradients of <cotangent, output> summed over the batch.

        Returns (input_grad, grads) with grads a list of (dW, db) pairs.
        """
        g = np.asarray(cotangent, dtype=float)
        if g.shape != acts[-1].shape:
            raise ValueError(f"cotangent shape {g.shape} != output shape "
                             f"{acts[-1].shape}")
        grads = [None] * self.n_layers
        for i in range(self.n_layers - 1, -1, -1):
            if i != self.n_layers - 1:
                g = g * (1.0 - acts[i + 1] ** 2)
            a_prev = acts[i]
            if g.ndim == 1:
                grads[i] = (np.outer(g, a_prev), g.copy())
            else:
                grads[i] = (g.T @ a_prev, g.sum(axis=0))
            g = g @ self.weights[i]
        return g, grads

    def vjp(self, x, cotangent):
        """Reverse-mode gradients of <cotangent, forward(x)>."""
        acts = self.forward_cache(x)
        return self.backward(acts, cotangent)

    # -- forward mode ----------------------------------------------------

    def jvp(self, x, tangent):
        """Directional derivative J(x) @ tangent."""
        x = self._check_input(x)
        v = np.asarray(tangent, dtype=float)
        if v.shape != x.shape:
            raise ValueError(f"tangent shape {v.shape} != input shape "
                             f"{x.shape}")
        acts = self.forward_cache(x)
        _, tangents = self._push_tangents(acts, v[..., None, :])
        return tangents[-1][1][..., 0, :]

    def _push_tangents(self, acts, directions):
        """Propagate direction stacks (batch, k, in) through cached acts.

        Returns (acts, tangent cache) where the cache holds per layer the
        pair (t_l, d_l): pre- and post-activation direction values.
        """
        d = np.asarray(directions, dtype=float)
        cache = [(None, d)]
        last = self.n_layers - 1
        for i, w in enumerate(self.weights):
            t = cache[-1][1] @ w.T
            if i != last:
                sp = 1.0 - acts[i + 1] ** 2
                d_out = sp[..., None, :] * t if t.ndim == 3 else sp * t
            else:
                d_out = t
            cache.append((t, d_out))
        return acts, cache

    def jacobian(self, x):
        """Full Jacobian at a single input, shape (out, in), via jvp columns."""
        x = self._check_input(np.asarray(x, dtype=float))
        acts = self.forward_cache(x)
        eye = np.eye(self.in_dim)
        _, cache = self._push_tangents(acts, eye)
        return cache[-1][1].T  # (in, out) -> transpose

    def backward_through_jvp(self, acts, tangent_cache, cotangents):
        """Reverse-mode through the forward-mode pass.

        cotangents attach to the jvp outputs d_L, shape matching them
        ((batch, k, out) or (k, out)).  Returns parameter gradients of
        <cotangents, d_L> summed over batch and directions; the primal
        inputs and the seed directions are treated as constants.
        """
        gd = np.asarray(cotangents, dtype=float)
        d_last = tangent_cache[-1][1]
        if gd.shape != d_last.shape:
            raise ValueError(f"cotangent shape {gd.shape} != jvp output "
                             f"shape {d_last.shape}")
        ga = np.zeros_like(acts[-1])
        grads = [None] * self.n_layers

        def wsum(left, right):
            # Contract (..., k, out) x (..., k, in) -> (out, in).
            if left.ndim == 2:
                return np.einsum("ko,ki->oi", left, right)
            return np.einsum("bko,bki->oi", left, right)

        for i in range(self.n_layers - 1, -1, -1):
            t_i, _ = tangent_cache[i + 1]
            d_prev = tangent_cache[i][1]
            a_prev = acts[i]
            if i == self.n_layers - 1:
                gt = gd
                gs = ga
            else:
                a_i = acts[i + 1]
                sp = 1.0 - a_i ** 2
                spp = -2.0 * a_i * sp
                gt = sp[..., None, :] * gd
                gs = (spp[..., None, :] * t_i * gd).sum(axis=-2) + sp * ga
            dw = wsum(gt, d_prev)
            db = np.zeros(self.sizes[i + 1])
            if np.ndim(gs) == 1:
                dw = dw + np.outer(gs, a_prev)
                db = db + gs
            else:
                dw = dw + gs.T @ a_prev
                db = db + gs.sum(axis=0)
            grads[i] = (dw, db)
            gd = gt @ self.weights[i]
            ga = gs @ self.weights[i]
        return grads

    # -- serialization ---------------------------------------------------

    def to_dict(self):
        return {
            "sizes": self.sizes,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data):
        weights = [np.asarray(w, dtype=float) for w in data["weights"]]
        biases = [np.asarray(b, dtype=float) for b in data["biases"]]
        return cls(data["sizes"], weights, biases, seed=data.get("seed"))

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


def zero_grads(net):
    return [(np.zeros_like(w), np.zeros_like(b))
            for w, b in zip(net.weights, net.biases)]


def add_grads(total, extra, scale=1.0):
    return [(tw + scale * ew, tb + scale * eb)
            for (tw, tb), (ew, eb) in zip(total, extra)]


def check_finite_grads(grads):
    for i, (dw, db) in enumerate(grads):
        if not np.all(np.isfinite(dw)):
            raise TrainingError(f"non-finite gradient in layer {i} weights")
        if not np.all(np.isfinite(db)):
            raise TrainingError(f"non-finite gradient in layer {i} bias")


class AdamState:
    """Adaptive-moment accumulators for one network's parameter list."""

    def __init__(self, net, learning_rate=1e-3, beta1=0.9, beta2=0.999,
                 eps=1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = zero_grads(net)
        self.v = zero_grads(net)


def adam_step(state, net, grads):
    """One adaptive-moment update, in place on the network parameters."""
    check_finite_grads(grads)
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for i, (dw, db) in enumerate(grads):
        for j, g in enumerate((dw, db)):
            m = state.m[i][j]
            v = state.v[i][j]
            m *= state.beta1
            m += (1.0 - state.beta1) * g
            v *= state.beta2
            v += (1.0 - state.beta2) * g * g
            target = net.weights[i] if j == 0 else net.biases[i]
            target -= state.learning_rate * (m / c1) \
                / (np.sqrt(v / c2) + state.eps)


def distortion_terms(decoder, z_batch, metric):
    """Per-point traces of the latent pullback metric.

    Returns (acts, tangent_cache, ku, q, tr, tr_sq) where q[p] is the m x m
    pullback matrix at batch point p expressed through directional
    derivatives, tr its trace and tr_sq the trace of its square.
    """
    z = np.atleast_2d(np.asarray(z_batch, dtype=float))
    n_pts, m = z.shape
    acts = decoder.forward_cache(z)
    directions = np.broadcast_to(np.eye(m), (n_pts, m, m)).copy()
    _, cache = decoder._push_tangents(acts, directions)
    u = cache[-1][1]                       # (N, m, nB): J e_a rows
    ku = metric.apply(u)
    q = np.einsum("pax,pbx->pab", u, ku)   # pullback matrices
    tr = np.einsum("paa->p", q)
    tr_sq = np.einsum("pab,pab->p", q, q)
    return acts, cache, ku, q, tr, tr_sq


def grad_of_distortion(decoder, z_batch, metric):
    """Exact-mode distortion value and its decoder-parameter gradient.

    The scalar is E[Tr(Hbar^2)] / E[Tr(Hbar)]^2 over the batch; the
    gradient flows through every directional-derivative evaluation
    (reverse over forward).  Latent points are treated as constants.
    """
    z = np.atleast_2d(np.asarray(z_batch, dtype=float))
    if z.shape[0] == 0:
        raise ValueError("empty latent batch")
    n_pts = z.shape[0]
    acts, cache, ku, q, tr, tr_sq = distortion_terms(decoder, z, metric)
    denom = tr.mean()
    if denom < 1e-12:
        raise DistortionUndefinedError(
            f"mean pullback trace {denom:.3e} is too small for the "
            f"distortion ratio")
    numer = tr_sq.mean()
    value = numer / denom ** 2

    # d value / d u, with u[p, a] = J(z_p) e_a.
    gu = (4.0 / (n_pts * denom ** 2)) * np.einsum("pab,pbx->pax", q, ku) \
        - (4.0 * numer / (n_pts * denom ** 3)) * ku
    grads = decoder.backward_through_jvp(acts, cache, gu)
    return value, grads
