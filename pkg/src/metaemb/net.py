"""Minimal dense-network machinery shared by every trainable model.

Feed-forward stacks with tanh / identity / row-softmax activations,
inverted dropout on hidden layers, plain SGD, seeded initialization,
finite-difference gradient verification and a bit-exact checkpoint
container.  All math is double precision.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FormatError, TrainingError

ACTIVATIONS = ("tanh", "identity", "softmax-rows")


def rng_streams(seed, count):
    """Independent deterministic generators derived from one seed.

    Stream order is part of each trainer's contract: consumers document
    which stream feeds init / shuffling / dropout / splits.
    """
    seq = np.random.SeedSequence(int(seed))
    return [np.random.default_rng(child) for child in seq.spawn(count)]


def init_normal(shape, mean=0.0, std=1.0, seed=0):
    """Seeded N(mean, std^2) matrix; identical seed gives identical bits."""
    if std < 0:
        raise ConfigError("init std must be >= 0")
    return np.random.default_rng(int(seed)).normal(mean, std, size=shape)


@dataclass
class TrainConfig:
    """Knobs shared by every training loop (defaults match the AE setup)."""

    hidden_dims: tuple = (200,)
    batch_size: int = 32
    epochs: int = 50
    learning_rate: float = 0.01
    dropout_p: float = 0.2
    init_mean: float = 0.0
    init_std: float = 1.0
    seed: int = 13
    early_stop_patience: int = 5
    val_fraction: float = 0.1
    lambda_: float = 1.0

    def __post_init__(self):
        self.hidden_dims = tuple(int(d) for d in self.hidden_dims)
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError("dropout_p must lie in [0, 1)")
        if self.init_std < 0 or self.early_stop_patience < 0 or self.lambda_ < 0:
            raise ConfigError("init_std, early_stop_patience and lambda_ must be >= 0")


@dataclass
class Batch:
    inputs: np.ndarray
    targets: np.ndarray = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        if self.targets is not None:
            self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.inputs.ndim != 2 or self.inputs.shape[0] < 1:
            raise ConfigError("batch inputs must be a non-empty 2-D matrix")

    @property
    def m(self):
        return self.inputs.shape[0]


class Layer:
    __slots__ = ("W", "b", "activation")

    def __init__(self, W, b, activation):
        if activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {activation!r}")
        self.W = np.asarray(W, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[1],):
            raise ConfigError("layer weight/bias shapes do not chain")
        self.activation = activation


@dataclass
class ForwardCache:
    """Everything backward() needs: inputs, activations and dropout masks.

    ``acts`` holds post-activation values, ``outs`` the values actually
    fed forward (post-dropout on hidden layers), ``masks`` the 0/1 keep
    masks (None where no dropout was applied).
    """

    inputs: np.ndarray
    acts: list
    outs: list
    masks: list

    @property
    def output(self):
        return self.outs[-1]


def _apply_activation(kind, z):
    if kind == "tanh":
        return np.tanh(z)
    if kind == "identity":
        return z
    # softmax-rows
    from . import kernels
    return kernels.softmax_rows(z)


def _activation_backward(kind, act, grad):
    if kind == "tanh":
        return grad * (1.0 - act * act)
    if kind == "identity":
        return grad
    # softmax-rows: J^T g = s * (g - <g, s>)
    inner = (grad * act).sum(axis=1, keepdims=True)
    return act * (grad - inner)


class FeedForwardNet:
    """A stack of dense layers with inverted dropout on hidden outputs."""

    def __init__(self, layers, dropout_p=0.0):
        if not layers:
            raise ConfigError("network needs at least one layer")
        if not 0.0 <= dropout_p < 1.0:
            raise ConfigError("dropout_p must lie in [0, 1)")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.W.shape[1] != nxt.W.shape[0]:
                raise ConfigError("adjacent layer dimensions do not chain")
        self.layers = list(layers)
        self.dropout_p = float(dropout_p)

    @classmethod
    def init(cls, dims, activations, dropout_p=0.0, mean=0.0, std=1.0, seed=0):
        """Build a net with N(mean, std^2) weights and zero biases."""
        if len(dims) < 2 or len(activations) != len(dims) - 1:
            raise ConfigError("need len(dims) >= 2 and one activation per layer")
        rng = np.random.default_rng(int(seed))
        layers = []
        for d_in, d_out, act in zip(dims, dims[1:], activations):
            W = rng.normal(mean, std, size=(d_in, d_out))
            layers.append(Layer(W, np.zeros(d_out), act))
        return cls(layers, dropout_p=dropout_p)

    @property
    def in_dim(self):
        return self.layers[0].W.shape[0]

    @property
    def out_dim(self):
        return self.layers[-1].W.shape[1]

    @property
    def dims(self):
        return [self.in_dim] + [layer.W.shape[1] for layer in self.layers]

    def draw_masks(self, m, rng):
        """One keep-mask per hidden layer for a batch of m rows."""
        masks = []
        for i, layer in enumerate(self.layers):
            hidden = i < len(self.layers) - 1
            if hidden and self.dropout_p > 0.0:
                masks.append((rng.random((m, layer.W.shape[1]))
                              >= self.dropout_p).astype(np.float64))
            else:
                masks.append(None)
        return masks

    def forward(self, inputs, train_mode=False, rng=None, masks=None):
        """Run the stack; returns a ForwardCache for backward().

        Dropout hits hidden activations only, scaled by 1/(1-p) at train
        time so evaluation outputs need no rescaling.  With train_mode
        off the result is independent of ``rng``.
        """
        inputs = np.asarray(inputs, dtype=np.float64)
        if inputs.ndim != 2 or inputs.shape[1] != self.in_dim:
            raise ConfigError(
                f"input of shape {inputs.shape} does not match in_dim {self.in_dim}")
        use_dropout = train_mode and self.dropout_p > 0.0
        if use_dropout and masks is None:
            if rng is None:
                raise ConfigError("train-mode forward with dropout needs rng or masks")
            masks = self.draw_masks(inputs.shape[0], rng)
        acts, outs, used_masks = [], [], []
        a = inputs
        scale = 1.0 / (1.0 - self.dropout_p) if self.dropout_p else 1.0
        for i, layer in enumerate(self.layers):
            z = a @ layer.W + layer.b
            h = _apply_activation(layer.activation, z)
            mask = masks[i] if (use_dropout and masks is not None) else None
            if mask is not None:
                out = h * mask * scale
            else:
                out = h
            acts.append(h)
            outs.append(out)
            used_masks.append(mask)
            a = out
        return ForwardCache(inputs=inputs, acts=acts, outs=outs, masks=used_masks)

    def backward(self, cache, grad_output, extra_output_grads=None):
        """Exact gradients for the cached graph, dropout masks included.

        ``extra_output_grads`` may inject additional gradient at any
        layer's (post-dropout) output, keyed by layer index — used when a
        hidden code feeds a second objective.  Returns (per-layer
        (dW, db) list, gradient w.r.t. the inputs).
        """
        n = len(self.layers)
        grads = [None] * n
        scale = 1.0 / (1.0 - self.dropout_p) if self.dropout_p else 1.0
        g = np.asarray(grad_output, dtype=np.float64)
        for i in range(n - 1, -1, -1):
            if extra_output_grads and i in extra_output_grads and i != n - 1:
                g = g + extra_output_grads[i]
            mask = cache.masks[i]
            if mask is not None:
                g = g * mask * scale
            gz = _activation_backward(self.layers[i].activation, cache.acts[i], g)
            a_prev = cache.outs[i - 1] if i > 0 else cache.inputs
            grads[i] = (a_prev.T @ gz, gz.sum(axis=0))
            g = gz @ self.layers[i].W.T
        if extra_output_grads and (n - 1) in extra_output_grads:
            raise ConfigError("extra gradient at the output layer belongs in grad_output")
        return grads, g

    def sgd_step(self, grads, learning_rate):
        """theta <- theta - lr * grad, elementwise; rejects non-finite grads."""
        for i, (dW, db) in enumerate(grads):
            if not (np.isfinite(dW).all() and np.isfinite(db).all()):
                raise TrainingError(f"non-finite gradient in layer{i}")
            self.layers[i].W -= learning_rate * dW
            self.layers[i].b -= learning_rate * db

    def param_items(self):
        for i, layer in enumerate(self.layers):
            yield f"layer{i}.W", layer.W
            yield f"layer{i}.b", layer.b

    def snapshot(self):
        return [(layer.W.copy(), layer.b.copy()) for layer in self.layers]

    def restore(self, state):
        for layer, (W, b) in zip(self.layers, state):
            layer.W[...] = W
            layer.b[...] = b

    def copy(self):
        return FeedForwardNet(
            [Layer(l.W.copy(), l.b.copy(), l.activation) for l in self.layers],
            dropout_p=self.dropout_p)


def dropout_mask(rng, shape, p):
    """Standalone inverted-dropout keep mask (already includes 1/(1-p))."""
    if not 0.0 <= p < 1.0:
        raise ConfigError("dropout_p must lie in [0, 1)")
    if p == 0.0:
        return np.ones(shape)
    return (rng.random(shape) >= p).astype(np.float64) / (1.0 - p)


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------

def max_rel_grad_error(params, grads, loss_fn, epsilon=1e-5):
    """Central-difference check of analytic gradients.

    ``params`` are the live parameter arrays (perturbed in place and
    restored), ``grads`` the analytic gradients aligned with them and
    ``loss_fn`` a closure recomputing the loss on a fixed graph (same
    dropout masks).  Returns max over entries of
    |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
    """
    if epsilon <= 0:
        raise ConfigError("epsilon must be positive")
    worst = 0.0
    for arr, g in zip(params, grads):
        flat = arr.ravel()
        gflat = np.asarray(g).ravel()
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + epsilon
            hi = loss_fn()
            flat[idx] = orig - epsilon
            lo = loss_fn()
            flat[idx] = orig
            numeric = (hi - lo) / (2.0 * epsilon)
            analytic = gflat[idx]
            denom = max(1e-8, abs(analytic) + abs(numeric))
            worst = max(worst, abs(analytic - numeric) / denom)
    return worst


def finite_diff_check(net, loss_fn, batch, epsilon=1e-5, rng=None):
    """Verify net.backward against central differences on one batch.

    ``loss_fn(pred, batch) -> (loss, grad_wrt_pred)``.  Dropout masks are
    drawn once and frozen so the perturbed passes see the same graph.
    """
    train_mode = net.dropout_p > 0.0
    masks = None
    if train_mode:
        masks = net.draw_masks(batch.m, rng or np.random.default_rng(0))
    cache = net.forward(batch.inputs, train_mode=train_mode, masks=masks)
    _, grad_pred = loss_fn(cache.output, batch)
    grads, _ = net.backward(cache, grad_pred)
    params = [arr for _, arr in net.param_items()]
    flat_grads = []
    for dW, db in grads:
        flat_grads.extend([dW, db])

    def closure():
        c = net.forward(batch.inputs, train_mode=train_mode, masks=masks)
        return loss_fn(c.output, batch)[0]

    return max_rel_grad_error(params, flat_grads, closure, epsilon)


# ---------------------------------------------------------------------------
# training-loop helpers
# ---------------------------------------------------------------------------

class EarlyStopper:
    """Track best validation loss; stop after ``patience`` bad epochs."""

    def __init__(self, patience):
        self.patience = int(patience)
        self.best = math.inf
        self.best_state = None
        self.bad_epochs = 0

    def update(self, val_loss, snapshot_fn):
        if val_loss < self.best:
            self.best = val_loss
            self.best_state = snapshot_fn()
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        return self.bad_epochs > self.patience


def split_train_val(n, rng, fraction=0.1):
    """Deterministic held-out split; degenerates gracefully for tiny n."""
    idx = rng.permutation(n)
    n_val = int(round(n * fraction))
    if n - n_val < 1:
        n_val = 0
    return idx[n_val:], idx[:n_val]


def iter_minibatches(indices, batch_size, rng):
    """Yield shuffled index slices of at most batch_size."""
    order = rng.permutation(len(indices))
    shuffled = np.asarray(indices)[order]
    for start in range(0, len(shuffled), batch_size):
        yield shuffled[start:start + batch_size]


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    method: str
    tokens: tuple
    matrix: np.ndarray
    nets: dict
    flagged_rows: np.ndarray
    extra: dict


def save_checkpoint(path, method, tokens, matrix, nets=None, flagged_rows=None,
                    extra=None):
    """Write a versioned container; write-then-read is bit-exact."""
    nets = nets or {}
    header = {
        "version": CHECKPOINT_VERSION,
        "method": method,
        "extra": extra or {},
        "nets": {
            name: {"activations": [l.activation for l in n.layers],
                   "dropout_p": n.dropout_p,
                   "n_layers": len(n.layers)}
            for name, n in nets.items()
        },
    }
    arrays = {
        "__header__": np.frombuffer(json.dumps(header).encode("utf-8"), dtype=np.uint8),
        "tokens": np.array(list(tokens), dtype=np.str_),
        "matrix": np.asarray(matrix, dtype=np.float64),
        "flagged": (np.zeros(len(tokens), dtype=bool)
                    if flagged_rows is None else np.asarray(flagged_rows, dtype=bool)),
    }
    for name, n in nets.items():
        for i, layer in enumerate(n.layers):
            arrays[f"net.{name}.{i}.W"] = layer.W
            arrays[f"net.{name}.{i}.b"] = layer.b
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(bytes(data["__header__"]).decode("utf-8"))
        if header.get("version") != CHECKPOINT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version")
        nets = {}
        for name, desc in header["nets"].items():
            layers = [Layer(data[f"net.{name}.{i}.W"], data[f"net.{name}.{i}.b"],
                            desc["activations"][i])
                      for i in range(desc["n_layers"])]
            nets[name] = FeedForwardNet(layers, dropout_p=desc["dropout_p"])
        return Checkpoint(
            method=header["method"],
            tokens=tuple(str(t) for t in data["tokens"]),
            matrix=data["matrix"],
            nets=nets,
            flagged_rows=data["flagged"],
            extra=header.get("extra", {}),
        )
