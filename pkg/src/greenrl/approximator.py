"""Dense feed-forward networks with analytic gradients.

Parameters live in one flat vector; each layer's weight matrix and bias are
views into it, so an optimizer step is a single vector operation and the
gradient vector shares the layout. Ordering, layer by layer: ``W`` (shape
``(fan_in, fan_out)``, row-major) then ``b``.

Hidden layers use ``tanh``; the output layer is linear. Inputs are batches of
row vectors, ``y = tanh(x @ W1 + b1) @ W2 + b2``.
"""
from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

ACTIVATIONS = ("tanh", "linear")
CHECKPOINT_FORMAT = "greenrl.checkpoint"
CHECKPOINT_VERSION = 1


class DenseNet:
    """Multi-layer perceptron over a flat parameter vector.

    Parameters
    ----------
    sizes : sequence of int
        Layer widths including input and output, e.g. ``(327, 128, 128, 550)``.
    activation : {"tanh", "linear"}
        Nonlinearity of the hidden layers.
    seed : int or numpy Generator, optional
        Source of the fan-in uniform initialization ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``.
    dtype : numpy dtype
        float64 for gradient checks, float32 for fast training.
    """

    def __init__(self, sizes, activation: str = "tanh", seed=0, dtype=np.float64):
        sizes = tuple(int(s) for s in sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"need at least input and output sizes >= 1, got {sizes}")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.sizes = sizes
        self.activation = activation
        self.dtype = np.dtype(dtype)
        self.params = np.zeros(sum(i * o + o for i, o in zip(sizes[:-1], sizes[1:])), dtype=self.dtype)
        self._bind()
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        for W, b in self.layers:
            bound = 1.0 / np.sqrt(W.shape[0])
            W[...] = rng.uniform(-bound, bound, size=W.shape)
            b[...] = rng.uniform(-bound, bound, size=b.shape)

    def _bind(self):
        self.layers = _views(self.params, self.sizes)

    @property
    def parameter_count(self) -> int:
        return self.params.size

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def copy(self) -> "DenseNet":
        twin = object.__new__(DenseNet)
        twin.sizes, twin.activation, twin.dtype = self.sizes, self.activation, self.dtype
        twin.params = self.params.copy()
        twin._bind()
        return twin

    def set_params(self, flat):
        flat = np.asarray(flat)
        if flat.shape != self.params.shape:
            raise ValueError(f"expected {self.params.size} parameters, got shape {flat.shape}")
        self.params[...] = flat

    def layout(self) -> list[dict]:
        """Documented parameter ordering: one entry per tensor with its flat offset."""
        out, offset = [], 0
        for k, (W, b) in enumerate(self.layers):
            out.append(dict(name=f"W{k}", shape=list(W.shape), offset=offset))
            offset += W.size
            out.append(dict(name=f"b{k}", shape=list(b.shape), offset=offset))
            offset += b.size
        return out

    def _check_input(self, x):
        x = np.asarray(x, dtype=self.dtype)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"input must have {self.in_dim} features, got shape {np.shape(x)}")
        return x, single

    def forward(self, x) -> np.ndarray:
        y, _ = self.forward_cache(x)
        return y

    __call__ = forward

    def forward_cache(self, x):
        """Forward pass that also returns the activations needed by :meth:`backward`."""
        x, single = self._check_input(x)
        acts = [x]
        h = x
        last = len(self.layers) - 1
        for k, (W, b) in enumerate(self.layers):
            h = h @ W + b
            if k < last and self.activation == "tanh":
                h = np.tanh(h)
            acts.append(h)
        return (h[0] if single else h), (acts, single)

    def backward(self, cache, upstream, input_grad: bool = True):
        """Gradient of ``sum(upstream * y)`` with respect to parameters and input.

        Returns
        -------
        grad : ndarray
            Flat gradient in the parameter layout.
        grad_input : ndarray or None
            Gradient with respect to the network input, shaped like it
            (``None`` when ``input_grad`` is false).
        """
        acts, single = cache
        g = np.asarray(upstream, dtype=self.dtype)
        if single:
            g = g[None, :]
        if g.shape != acts[-1].shape:
            raise ValueError(f"upstream gradient shape {g.shape} does not match output {acts[-1].shape}")
        grad = np.empty_like(self.params)
        gviews = _views(grad, self.sizes)
        for k in range(len(self.layers) - 1, -1, -1):
            W, _ = self.layers[k]
            gW, gb = gviews[k]
            np.matmul(acts[k].T, g, out=gW)
            g.sum(axis=0, out=gb)
            if k == 0 and not input_grad:
                return grad, None
            g = g @ W.T
            if k > 0 and self.activation == "tanh":
                g *= 1.0 - acts[k] * acts[k]
        return grad, (g[0] if single else g)


def _views(flat, sizes):
    layers, offset = [], 0
    for i, o in zip(sizes[:-1], sizes[1:]):
        W = flat[offset:offset + i * o].reshape(i, o)
        offset += i * o
        b = flat[offset:offset + o]
        offset += o
        layers.append((W, b))
    return layers


def forward(net: DenseNet, x) -> np.ndarray:
    return net.forward(x)


def backward(net: DenseNet, x, upstream) -> np.ndarray:
    """Parameter gradient of ``sum(upstream * net(x))``."""
    _, cache = net.forward_cache(x)
    return net.backward(cache, upstream)[0]


def finite_difference_gradient(net: DenseNet, x, loss_fn, step: float = 1e-5) -> np.ndarray:
    """Central-difference estimate of ``d loss_fn(net(x)) / d params``.

    ``loss_fn`` maps the network output to a scalar. Parameters are perturbed
    in place one at a time and restored afterwards.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    grad = np.zeros(net.parameter_count, dtype=np.float64)
    p = net.params
    for i in range(p.size):
        orig = p[i]
        p[i] = orig + step
        up = float(loss_fn(net.forward(x)))
        p[i] = orig - step
        down = float(loss_fn(net.forward(x)))
        p[i] = orig
        grad[i] = (up - down) / (2.0 * step)
    return grad


def numeric_gradient(fn, theta: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function of a flat vector (modified in place, restored)."""
    grad = np.zeros(theta.size, dtype=np.float64)
    for i in range(theta.size):
        orig = theta[i]
        theta[i] = orig + step
        up = float(fn())
        theta[i] = orig - step
        down = float(fn())
        theta[i] = orig
        grad[i] = (up - down) / (2.0 * step)
    return grad


def relative_error(a, b, floor: float = 1e-8) -> float:
    """``max|a-b| / max(max|a|, max|b|, floor)``; the metric used for gradient checks."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), floor)
    return float(np.max(np.abs(a - b)) / scale)


def sgd_step(net: DenseNet, grad, lr: float) -> bool:
    """Plain gradient descent ``theta <- theta - lr * grad``, in place.

    A gradient with non-finite entries is rejected: the step is skipped, a
    warning is logged and ``False`` returned.
    """
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    grad = np.asarray(grad)
    if grad.shape != net.params.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match {net.params.shape}")
    if not np.all(np.isfinite(grad)):
        log.warning("non-finite gradient, sgd step skipped")
        return False
    if lr:
        net.params -= lr * grad.astype(net.dtype, copy=False)
    return True


class Adam:
    """Adaptive-moment optimizer over one flat parameter vector."""

    def __init__(self, size: int, lr: float = 3e-4, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, dtype=np.float64):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size, dtype=dtype)
        self.v = np.zeros(size, dtype=dtype)
        self.t = 0
        self._tmp = np.empty(size, dtype=dtype)

    def step(self, net: DenseNet, grad) -> bool:
        if not np.all(np.isfinite(grad)):
            log.warning("non-finite gradient, adam step skipped")
            return False
        if self.lr == 0:
            return True
        self.t += 1
        tmp = self._tmp
        self.m *= self.beta1
        np.multiply(grad, 1 - self.beta1, out=tmp)
        self.m += tmp
        self.v *= self.beta2
        np.multiply(grad, grad, out=tmp)
        tmp *= 1 - self.beta2
        self.v += tmp
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        # params -= lr/c1 * m / (sqrt(v/c2) + eps)
        np.sqrt(self.v, out=tmp)
        tmp *= 1.0 / np.sqrt(c2)
        tmp += self.eps
        np.divide(self.m, tmp, out=tmp)
        tmp *= self.lr / c1
        net.params -= tmp
        return True

    def state(self) -> dict:
        return {"m": self.m, "v": self.v, "t": np.array(self.t)}

    def load_state(self, state: dict):
        self.m[...] = state["m"]
        self.v[...] = state["v"]
        self.t = int(state["t"])


def make_optimizer(kind: str, size: int, lr: float, dtype=np.float64):
    """``"sgd"`` gives the plain descent step, ``"adam"`` the adaptive variant."""
    if kind == "sgd":
        return SGD(lr)
    if kind == "adam":
        return Adam(size, lr=lr, dtype=dtype)
    raise ValueError(f"unknown optimizer {kind!r}; expected 'sgd' or 'adam'")


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, net: DenseNet, grad) -> bool:
        return sgd_step(net, grad, self.lr)

    def state(self) -> dict:
        return {}

    def load_state(self, state: dict):
        pass


# --- checkpoints -------------------------------------------------------------

def content_hash(arrays: dict) -> str:
    """SHA-256 over names, dtypes, shapes and raw bytes, in sorted name order."""
    h = hashlib.sha256()
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        h.update(f"{name}|{a.dtype.str}|{a.shape}|".encode())
        h.update(a.tobytes())
    return h.hexdigest()


def save_checkpoint(path, arrays: dict, meta: dict | None = None) -> str:
    """Write ``arrays`` to an ``.npz`` with a JSON header; returns the content hash."""
    arrays = {k: np.asarray(v) for k, v in arrays.items()}
    digest = content_hash(arrays)
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "layout": {k: {"dtype": v.dtype.str, "shape": list(v.shape)} for k, v in sorted(arrays.items())},
        "sha256": digest,
        "meta": meta or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, __header__=np.array(json.dumps(header, sort_keys=True)), **arrays)
    tmp.replace(path)
    return digest


def load_checkpoint(path) -> tuple[dict, dict]:
    """Inverse of :func:`save_checkpoint`; verifies format, version and hash."""
    with np.load(path, allow_pickle=False) as z:
        if "__header__" not in z.files:
            raise ValueError(f"{path}: missing checkpoint header")
        header = json.loads(str(z["__header__"]))
        arrays = {k: z[k] for k in z.files if k != "__header__"}
    if header.get("format") != CHECKPOINT_FORMAT or header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint {header.get('format')} v{header.get('version')}")
    if content_hash(arrays) != header["sha256"]:
        raise ValueError(f"{path}: content hash mismatch, checkpoint is corrupt")
    return arrays, header


def net_to_arrays(net: DenseNet, prefix: str) -> dict:
    return {f"{prefix}.params": net.params}


def net_meta(net: DenseNet) -> dict:
    return {"sizes": list(net.sizes), "activation": net.activation, "dtype": net.dtype.str,
            "layout": net.layout()}


def net_from_arrays(arrays: dict, prefix: str, meta: dict) -> DenseNet:
    net = DenseNet(meta["sizes"], meta["activation"], seed=0, dtype=np.dtype(meta["dtype"]))
    net.set_params(arrays[f"{prefix}.params"])
    return net
