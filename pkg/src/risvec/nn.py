"""
Dense networks in numpy: forward pass, exact backpropagation, Adam and
Polyak averaging. Double precision throughout.

Checkpoint layout (``.npz``, one archive per network)::

    magic              str      "RISVEC-MLP"
    version            int      1
    layer_widths       int[L+1] input width, hidden widths..., output width
    output_activation  str      "linear" | "bounded-sigmoid"
    W0..W{L-1}         float64  weight matrices, shape (in, out)
    b0..b{L-1}         float64  bias vectors, shape (out,)
    adam_step          int      optional; present with the moments below
    adam_lr            float
    adam_m0..          float64  first moments, ordered W0, b0, W1, b1, ...
    adam_v0..          float64  second moments, same order
"""

import numpy as np

from ._validation import check_batch
from .exceptions import ConfigError, DimensionError, NumericError

CHECKPOINT_MAGIC = "RISVEC-MLP"
CHECKPOINT_VERSION = 1
OUTPUT_ACTIVATIONS = ("linear", "bounded-sigmoid")

# keeps bounded-sigmoid outputs strictly inside (0, 1)
SIGMOID_MARGIN = 1e-6


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class MLP:
    """Fully connected ReLU network.

    Parameters
    ----------
    layer_widths : sequence of int
        ``[n_in, hidden..., n_out]``; at least one hidden layer.
    output_activation : {"linear", "bounded-sigmoid"}
    random_state : int or numpy Generator
        Weights and biases are drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    """

    def __init__(self, layer_widths, output_activation="linear", random_state=None):
        widths = [int(w) for w in layer_widths]
        if len(widths) < 3:
            raise ConfigError("an MLP needs input, output and at least one hidden layer")
        if min(widths) < 1:
            raise ConfigError("layer widths must be >= 1")
        if output_activation not in OUTPUT_ACTIVATIONS:
            raise ConfigError(f"unknown output activation {output_activation!r}")
        self.layer_widths = widths
        self.output_activation = output_activation
        rng = np.random.default_rng(random_state)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(rng.uniform(-bound, bound, size=fan_out))

    @property
    def n_in(self):
        return self.layer_widths[0]

    @property
    def n_out(self):
        return self.layer_widths[-1]

    @property
    def params(self):
        """Flat list ``[W0, b0, W1, b1, ...]`` of live arrays."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self):
        twin = MLP.__new__(MLP)
        twin.layer_widths = list(self.layer_widths)
        twin.output_activation = self.output_activation
        twin.weights = [w.copy() for w in self.weights]
        twin.biases = [b.copy() for b in self.biases]
        return twin

    def _forward(self, x):
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            if i < last:
                h = np.maximum(z, 0.0)
            elif self.output_activation == "bounded-sigmoid":
                h = SIGMOID_MARGIN + (1.0 - 2 * SIGMOID_MARGIN) * _sigmoid(z)
            else:
                h = z
            acts.append(h)
        return acts

    def forward(self, x):
        batch, single = check_batch(x, self.n_in)
        out = self._forward(batch)[-1]
        return out[0] if single else out

    __call__ = forward

    def backward(self, x, grad_out):
        """Gradients of ``sum(grad_out * forward(x))``.

        Returns
        -------
        grads : list of arrays, ordered like :attr:`params`
        grad_in : array shaped like ``x``
        """
        batch, single = check_batch(x, self.n_in)
        g = np.asarray(grad_out, dtype=np.float64)
        if single:
            g = g[None, :]
        if g.shape != (batch.shape[0], self.n_out):
            raise DimensionError(
                f"upstream gradient must have shape {(batch.shape[0], self.n_out)}, got {np.shape(grad_out)}"
            )
        acts = self._forward(batch)
        out = acts[-1]
        if self.output_activation == "bounded-sigmoid":
            s = (out - SIGMOID_MARGIN) / (1.0 - 2 * SIGMOID_MARGIN)
            g = g * (1.0 - 2 * SIGMOID_MARGIN) * s * (1.0 - s)
        grads = [None] * (2 * len(self.weights))
        for i in range(len(self.weights) - 1, -1, -1):
            grads[2 * i] = acts[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i].T
            if i > 0:
                g = g * (acts[i] > 0)
        return grads, (g[0] if single else g)


class Adam:
    """Adam with bias correction; moments are kept per parameter array."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        """Apply one update in place."""
        if len(grads) != len(self.params):
            raise DimensionError("gradient list does not match parameter list")
        for g, p in zip(grads, self.params):
            if g.shape != p.shape:
                raise DimensionError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            if not np.all(np.isfinite(g)):
                raise NumericError("non-finite gradient")
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def soft_update(target, source, tau):
    """``target <- tau * source + (1 - tau) * target``, in place."""
    if target.layer_widths != source.layer_widths:
        raise DimensionError("soft_update needs networks of identical shape")
    for t, s in zip(target.params, source.params):
        t *= 1.0 - tau
        t += tau * s
    return target


def save_checkpoint(path, net, optimizer=None):
    arrays = {
        "magic": np.array(CHECKPOINT_MAGIC),
        "version": np.array(CHECKPOINT_VERSION),
        "layer_widths": np.array(net.layer_widths, dtype=np.int64),
        "output_activation": np.array(net.output_activation),
    }
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        arrays[f"W{i}"] = w
        arrays[f"b{i}"] = b
    if optimizer is not None:
        arrays["adam_step"] = np.array(optimizer.t)
        arrays["adam_lr"] = np.array(optimizer.lr)
        for j, (m, v) in enumerate(zip(optimizer.m, optimizer.v)):
            arrays[f"adam_m{j}"] = m
            arrays[f"adam_v{j}"] = v
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Return ``(net, optimizer)``; ``optimizer`` is None if no moments were saved."""
    with np.load(path, allow_pickle=False) as data:
        if "magic" not in data or str(data["magic"]) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a network checkpoint")
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        net = MLP.__new__(MLP)
        net.layer_widths = [int(w) for w in data["layer_widths"]]
        net.output_activation = str(data["output_activation"])
        n_layers = len(net.layer_widths) - 1
        net.weights = [data[f"W{i}"].copy() for i in range(n_layers)]
        net.biases = [data[f"b{i}"].copy() for i in range(n_layers)]
        optimizer = None
        if "adam_step" in data:
            optimizer = Adam(net.params, lr=float(data["adam_lr"]))
            optimizer.t = int(data["adam_step"])
            optimizer.m = [data[f"adam_m{j}"].copy() for j in range(2 * n_layers)]
            optimizer.v = [data[f"adam_v{j}"].copy() for j in range(2 * n_layers)]
    return net, optimizer


def gradient_check(net, x, rng, h=1e-5):
    """Norm-wise relative error between backprop and central differences.

    Checks parameter gradients and the input gradient of a random linear
    functional ``sum(c * net(x))``.
    """
    x = np.asarray(x, dtype=np.float64)
    coef = rng.normal(size=np.shape(net.forward(x)))

    def f():
        return float(np.sum(coef * net.forward(x)))

    grads, grad_in = net.backward(x, coef)
    analytic, numeric = [], []
    for p, g in zip(net.params, grads):
        num = np.empty_like(p)
        flat, nflat = p.reshape(-1), num.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f()
            flat[i] = orig - h
            down = f()
            flat[i] = orig
            nflat[i] = (up - down) / (2 * h)
        analytic.append(g.reshape(-1))
        numeric.append(num.reshape(-1))
    num_in = np.empty_like(x)
    xf, nf = x.reshape(-1), num_in.reshape(-1)
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + h
        up = f()
        xf[i] = orig - h
        down = f()
        xf[i] = orig
        nf[i] = (up - down) / (2 * h)
    analytic.append(np.asarray(grad_in).reshape(-1))
    numeric.append(num_in.reshape(-1))
    a = np.concatenate(analytic)
    n = np.concatenate(numeric)
    denom = max(np.linalg.norm(a) + np.linalg.norm(n), 1e-300)
    return float(np.linalg.norm(a - n) / denom)


def gradcheck_suite(n_networks=20, seed=0, max_width=32, max_input=16, batch=4):
    """Run :func:`gradient_check` on random networks; return the list of errors."""
    rng = np.random.default_rng(seed)
    errors = []
    for i in range(n_networks):
        depth = int(rng.integers(1, 4))
        widths = [int(rng.integers(1, max_input + 1))]
        widths += [int(rng.integers(1, max_width + 1)) for _ in range(depth)]
        widths.append(int(rng.integers(1, 5)))
        act = OUTPUT_ACTIVATIONS[i % 2]
        net = MLP(widths, act, random_state=rng)
        x = rng.normal(size=(batch, widths[0]))
        errors.append(gradient_check(net, x, rng))
    return errors
