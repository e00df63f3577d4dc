"""Minimal neural substrate: dense nets with manual reverse-mode gradients.

Everything the dispatch and orchestration learners need and nothing more:
multilayer perceptrons over float64 numpy arrays, three activations
(relu, relu_plus_one, linear), exact hand-written backprop, Adam, a
multiplicative masked softmax, and a flat binary checkpoint format.

No autograd framework is used on purpose: gradients are verified against
finite differences in the test suite, which requires the two routes to be
independent.
"""

from __future__ import annotations

import struct

import numpy as np

ACTIVATIONS = ("relu", "relu_plus_one", "linear")

_CHECKPOINT_MAGIC = b"ESNET001"


def _activate(kind, z):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "relu_plus_one":
        # strictly >= 1 everywhere so downstream multiplicative masking
        # can never zero out a valid entry
        return np.maximum(z, 0.0) + 1.0
    if kind == "linear":
        return z
    raise ValueError(f"unknown activation {kind!r}")


def _activate_grad(kind, z):
    if kind in ("relu", "relu_plus_one"):
        return (z > 0.0).astype(np.float64)
    if kind == "linear":
        return np.ones_like(z)
    raise ValueError(f"unknown activation {kind!r}")


class Mlp:
    """Fully connected network; weights float64, He-uniform init.

    ``layer_sizes`` includes the input width, so a net with sizes
    [8, 64, 32, 1] has three weight matrices. ``activations`` has one
    entry per weight layer.
    """

    def __init__(self, layer_sizes, activations, seed=0):
        if len(layer_sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if len(activations) != len(layer_sizes) - 1:
            raise ValueError(
                f"{len(layer_sizes) - 1} layers but {len(activations)} activations"
            )
        for a in activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        self.layer_sizes = [int(s) for s in layer_sizes]
        self.activations = list(activations)
        rng = np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        for fan_in, fan_out, kind in zip(
            self.layer_sizes[:-1], self.layer_sizes[1:], self.activations
        ):
            limit = np.sqrt(6.0 / fan_in)
            # the +1 floor of relu_plus_one has zero gradient below it and
            # cannot recover on fixed inputs, so those layers start with
            # damped weights and a unit bias: pre-activations near 1, all
            # units live, policy near uniform
            if kind == "relu_plus_one":
                limit *= 0.25
                bias_init = 1.0
            elif kind == "relu":
                bias_init = 0.1
            else:
                bias_init = 0.0
            self.weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.biases.append(np.full(fan_out, bias_init))

    @property
    def params(self):
        """Flat parameter list, weight then bias per layer (live views)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def forward(self, x):
        """Run the net on a single vector or a (batch, in) matrix."""
        y, _ = self.forward_cached(x)
        return y

    def forward_cached(self, x):
        """Forward pass returning (output, cache) for a later backward()."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.layer_sizes[0]:
            raise ValueError(
                f"input width {x.shape[-1]} != expected {self.layer_sizes[0]}"
            )
        inputs = [x]
        pre = []
        h = x
        for w, b, kind in zip(self.weights, self.biases, self.activations):
            z = h @ w + b
            pre.append(z)
            h = _activate(kind, z)
            inputs.append(h)
        return h, (inputs, pre)

    def backward(self, cache, output_grad):
        """Exact reverse-mode gradients for the cached forward pass.

        Returns (param_grads, input_grad) where param_grads aligns with
        ``self.params``.
        """
        inputs, pre = cache
        g = np.asarray(output_grad, dtype=np.float64)
        if g.shape != inputs[-1].shape:
            raise ValueError(
                f"output_grad shape {g.shape} != output shape {inputs[-1].shape}"
            )
        grads = [None] * (2 * len(self.weights))
        for i in reversed(range(len(self.weights))):
            gz = g * _activate_grad(self.activations[i], pre[i])
            a = inputs[i]
            if a.ndim == 1:
                gw = np.outer(a, gz)
                gb = gz.copy()
            else:
                gw = a.T @ gz
                gb = gz.sum(axis=0)
            grads[2 * i] = gw
            grads[2 * i + 1] = gb
            g = gz @ self.weights[i].T
        return grads, g

    def zero_grads(self):
        """Gradient accumulators shaped like params."""
        return [np.zeros_like(p) for p in self.params]

    def copy(self):
        other = Mlp(self.layer_sizes, self.activations, seed=0)
        other.load_state(self.params)
        return other

    def load_state(self, params):
        own = self.params
        if len(own) != len(params):
            raise ValueError("parameter count mismatch")
        for dst, src in zip(own, params):
            if dst.shape != src.shape:
                raise ValueError(f"shape mismatch {dst.shape} vs {src.shape}")
            dst[...] = src


class AdamState:
    """Adam moment accumulators for one parameter list.

    beta1=0.9, beta2=0.999, eps=1e-8; the learning rate is the only knob
    exposed because it is the only one the training setup varies.
    """

    def __init__(self, params, learning_rate):
        self.learning_rate = float(learning_rate)
        self.beta1 = 0.9
        self.beta2 = 0.999
        self.eps = 1e-8
        self.step_count = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]


def adam_step(state, params, grads):
    """One in-place Adam update with bias correction; returns params."""
    if len(params) != len(state.m) or len(params) != len(grads):
        raise ValueError("params/grads/state length mismatch")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
    return params


def masked_softmax(logits, mask):
    """L1-normalize strictly positive logits over the mask support.

    out[j] = logits[j]*mask[j] / sum_k logits[k]*mask[k]; exactly zero
    where the mask is zero. Works on single vectors and (batch, n)
    matrices (mask broadcast or per-row).
    """
    l = np.asarray(logits, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)
    if l.shape[-1] != m.shape[-1]:
        raise ValueError("logits and mask width differ")
    if np.any(l <= 0.0):
        raise ValueError("masked_softmax requires strictly positive logits")
    scores = l * m
    denom = scores.sum(axis=-1, keepdims=True)
    if np.any(denom <= 0.0):
        raise ValueError("mask admits no valid entry")
    return scores / denom


def sample_rows(probs, rng):
    """Draw one index per row of a probability matrix (or one for a vector).

    Inverse-CDF sampling so a million fuzzed draws stay cheap; used for
    both single dispatch decisions and batched mask-safety fuzzing.
    """
    p = np.asarray(probs, dtype=np.float64)
    single = p.ndim == 1
    if single:
        p = p[None, :]
    cdf = np.cumsum(p, axis=1)
    u = rng.random(p.shape[0]) * cdf[:, -1]
    idx = (cdf < u[:, None]).sum(axis=1)
    idx = np.minimum(idx, p.shape[1] - 1)
    return int(idx[0]) if single else idx


def save_checkpoint(path, nets):
    """Write named Mlps to a flat binary file.

    Layout: magic, net count, then per net: name, layer sizes,
    activation codes, and each parameter as ndim + dims + row-major
    float64 payload.
    """
    with open(path, "wb") as f:
        f.write(_CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(nets)))
        for name, net in nets.items():
            blob = name.encode("utf-8")
            f.write(struct.pack("<I", len(blob)))
            f.write(blob)
            f.write(struct.pack("<I", len(net.layer_sizes)))
            f.write(struct.pack(f"<{len(net.layer_sizes)}I", *net.layer_sizes))
            codes = [ACTIVATIONS.index(a) for a in net.activations]
            f.write(struct.pack(f"<{len(codes)}B", *codes))
            for arr in net.params:
                f.write(struct.pack("<I", arr.ndim))
                f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
                f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint written by save_checkpoint; returns {name: Mlp}."""
    with open(path, "rb") as f:
        data = f.read()
    off = 0

    def take(n):
        nonlocal off
        chunk = data[off : off + n]
        if len(chunk) != n:
            raise ValueError("truncated checkpoint")
        off += n
        return chunk

    if take(len(_CHECKPOINT_MAGIC)) != _CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint file")
    (count,) = struct.unpack("<I", take(4))
    nets = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (n_sizes,) = struct.unpack("<I", take(4))
        sizes = list(struct.unpack(f"<{n_sizes}I", take(4 * n_sizes)))
        codes = struct.unpack(f"<{n_sizes - 1}B", take(n_sizes - 1))
        acts = [ACTIVATIONS[c] for c in codes]
        net = Mlp(sizes, acts, seed=0)
        params = []
        for ref in net.params:
            (ndim,) = struct.unpack("<I", take(4))
            shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
            n_items = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(take(8 * n_items), dtype="<f8").reshape(shape)
            params.append(arr.astype(np.float64))
            del ref
        net.load_state(params)
        nets[name] = net
    return nets
