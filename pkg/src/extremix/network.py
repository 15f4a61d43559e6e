"""Feed-forward softmax networks for spline mixture weights.

One small fully connected network per conditioned site maps a feature vector
to K softmax weights over the M-spline basis. Implemented directly in numpy:
the training gradient must be auditable against finite differences and the
trained weights bit-reproducible for a fixed seed on one thread.

Training loss for a batch is the negative mean log mixture density
    L = -mean_j log( pi(x_j) . b_j )
where b_j holds the K basis-function values at the observed response.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class NetSpec:
    input_dim: int
    hidden: tuple = (30, 20)
    output_dim: int = 15
    learning_rate: float = 0.01
    epochs: int = 100
    batch_size: int = 1000

    def layer_dims(self):
        return (self.input_dim, *self.hidden, self.output_dim)

    def to_dict(self):
        return {"input_dim": self.input_dim, "hidden": list(self.hidden),
                "output_dim": self.output_dim,
                "learning_rate": self.learning_rate,
                "epochs": self.epochs, "batch_size": self.batch_size}

    @classmethod
    def from_dict(cls, d):
        return cls(input_dim=d["input_dim"], hidden=tuple(d["hidden"]),
                   output_dim=d["output_dim"],
                   learning_rate=d["learning_rate"],
                   epochs=d["epochs"], batch_size=d["batch_size"])


class TrainingError(RuntimeError):
    pass


def init_weights(spec, rng):
    """He-scaled Gaussian weights, zero biases."""
    dims = spec.layer_dims()
    weights = []
    for din, dout in zip(dims[:-1], dims[1:]):
        W = rng.normal(0.0, np.sqrt(2.0 / din), size=(din, dout))
        b = np.zeros(dout)
        weights.append((W, b))
    return weights


def softmax(a):
    z = a - a.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(weights, X):
    """Softmax mixture weights, shape (n, K). X: (n, input_dim)."""
    h = X
    last = len(weights) - 1
    for li, (W, b) in enumerate(weights):
        h = h @ W + b
        if li != last:
            np.maximum(h, 0.0, out=h)
    return softmax(h)


def loss_and_grad(weights, X, B):
    """Negative mean log density and its gradient w.r.t. every weight.

    X: (n, input_dim) features; B: (n, K) basis values at the responses.
    Returns (loss, [(dW, db), ...]) matching the layout of `weights`.
    """
    n = X.shape[0]
    acts = [X]
    h = X
    last = len(weights) - 1
    pre = []
    for li, (W, b) in enumerate(weights):
        h = h @ W + b
        pre.append(h)
        if li != last:
            h = np.maximum(h, 0.0)
        acts.append(h)
    pi = softmax(acts[-1])
    mix = np.einsum("nk,nk->n", pi, B)
    with np.errstate(divide="ignore", invalid="ignore"):
        loss = -np.mean(np.log(mix))
        # d loss / d pre-activation of output layer
        delta = (pi - pi * B / mix[:, None]) / n
    grads = [None] * len(weights)
    for li in range(last, -1, -1):
        a_in = acts[li]
        grads[li] = (a_in.T @ delta, delta.sum(axis=0))
        if li > 0:
            delta = delta @ weights[li][0].T
            delta[pre[li - 1] <= 0.0] = 0.0
    return loss, grads


def mean_log_density(weights, X, B):
    pi = forward(weights, X)
    return float(np.mean(np.log(np.einsum("nk,nk->n", pi, B))))


def train(X, B, spec, rng, optimizer="adam", init=None, verbose=False):
    """Mini-batch training; returns (weights, per-epoch mean loss trace).

    Adaptive-moment updates by default; plain gradient descent as fallback.
    Deterministic for a fixed rng: shuffles, init, and update order are all
    driven by numpy ops in a fixed sequence.
    """
    n = X.shape[0]
    if n < spec.batch_size:
        raise ValueError("need at least one full batch of training rows")
    weights = init_weights(spec, rng) if init is None else [
        (W.copy(), b.copy()) for W, b in init]
    if optimizer == "adam":
        m = [(np.zeros_like(W), np.zeros_like(b)) for W, b in weights]
        v = [(np.zeros_like(W), np.zeros_like(b)) for W, b in weights]
        beta1, beta2, eps = 0.9, 0.999, 1e-8
        t = 0
    elif optimizer != "sgd":
        raise ValueError(f"unknown optimizer {optimizer!r}")
    lr = spec.learning_rate
    trace = []
    for epoch in range(spec.epochs):
        order = rng.permutation(n)
        total = 0.0
        nb = 0
        for start in range(0, n - spec.batch_size + 1, spec.batch_size):
            idx = order[start:start + spec.batch_size]
            loss, grads = loss_and_grad(weights, X[idx], B[idx])
            if not np.isfinite(loss):
                raise TrainingError(
                    f"loss diverged at epoch {epoch} (lr={lr})")
            total += loss
            nb += 1
            if optimizer == "adam":
                t += 1
                c1 = 1.0 - beta1 ** t
                c2 = 1.0 - beta2 ** t
                new = []
                for li, (W, b) in enumerate(weights):
                    gW, gb = grads[li]
                    mW = beta1 * m[li][0] + (1 - beta1) * gW
                    mb = beta1 * m[li][1] + (1 - beta1) * gb
                    vW = beta2 * v[li][0] + (1 - beta2) * gW * gW
                    vb = beta2 * v[li][1] + (1 - beta2) * gb * gb
                    m[li] = (mW, mb)
                    v[li] = (vW, vb)
                    W = W - lr * (mW / c1) / (np.sqrt(vW / c2) + eps)
                    b = b - lr * (mb / c1) / (np.sqrt(vb / c2) + eps)
                    new.append((W, b))
                weights = new
            else:
                weights = [(W - lr * gW, b - lr * gb)
                           for (W, b), (gW, gb) in zip(weights, grads)]
        trace.append(total / max(nb, 1))
        if verbose and epoch % 10 == 0:
            print(f"  epoch {epoch:3d}  loss {trace[-1]:.5f}")
    return weights, np.asarray(trace)


def flatten_weights(weights):
    return np.concatenate([a.ravel() for W, b in weights for a in (W, b)])


def unflatten_weights(vec, spec):
    dims = spec.layer_dims()
    weights = []
    pos = 0
    for din, dout in zip(dims[:-1], dims[1:]):
        W = vec[pos:pos + din * dout].reshape(din, dout)
        pos += din * dout
        b = vec[pos:pos + dout]
        pos += dout
        weights.append((W.copy(), b.copy()))
    if pos != vec.size:
        raise ValueError("weight vector length does not match layer dims")
    return weights
