"""SGD training loop: Nesterov momentum, weight decay, step schedule."""

from dataclasses import dataclass, field

import numpy as np

from . import parareal_net as P
from .data import batches

PAD = 4


@dataclass
class TrainConfig:
    epochs: int = 1
    batch_size: int = 128
    lr: float = 0.1
    lr_decay: float = 0.1
    milestones: tuple = (80, 120)
    momentum: float = 0.9
    weight_decay: float = 0.0005
    rng_seed: int = 0
    augment: bool = False

    def __post_init__(self):
        self.milestones = tuple(int(m) for m in self.milestones)
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr <= 0 or self.lr_decay <= 0:
            raise ValueError("learning rate and its decay factor must be positive")
        if self.momentum < 0 or self.weight_decay < 0:
            raise ValueError("momentum and weight decay must be non-negative")
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ValueError("milestones must be strictly increasing")


@dataclass
class MomentumState:
    velocity: dict = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, params):
        return cls({k: np.zeros_like(p) for k, p in params.items()})


def lr_at(config, epoch):
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    passed = sum(1 for m in config.milestones if epoch >= m)
    return config.lr * config.lr_decay ** passed


def sgd_step(params, grads, state, lr, config, decay=None):
    """Nesterov update, in place on ``params`` and ``state.velocity``.

    g = grad + wd * p  (wd only where ``decay[key]`` is true, all keys if None)
    v = mu * v + g
    p = p - lr * (g + mu * v)
    """
    keys = params.keys()
    if keys != grads.keys() or keys != state.velocity.keys():
        missing = set(keys) ^ set(grads) | set(keys) ^ set(state.velocity)
        raise KeyError(f"parameter/gradient/velocity keys differ: {sorted(missing)[:5]}")
    mu, wd = config.momentum, config.weight_decay
    for k, p in params.items():
        g = grads[k]
        if wd and (decay is None or decay[k]):
            g = g + wd * p
        v = state.velocity[k]
        v *= mu
        v += g
        p -= lr * (g + mu * v)
    return params, state


# ---------------------------------------------------------------------------
# augmentation


def crop_flip(image, oy, ox, flip):
    """Zero-pad by 4, take the window at offset (oy, ox), optionally mirror."""
    c, h, w = image.shape
    padded = np.zeros((c, h + 2 * PAD, w + 2 * PAD))
    padded[:, PAD:PAD + h, PAD:PAD + w] = image
    out = padded[:, oy:oy + h, ox:ox + w]
    return out[:, :, ::-1].copy() if flip else out.copy()


def augment(batch, rng, enabled=True):
    """Random pad-crop plus horizontal flip with probability 1/2, per image."""
    if not enabled:
        return batch
    if batch.ndim != 4:
        raise ValueError("augment expects a rank-4 batch")
    n = batch.shape[0]
    offsets = rng.integers(0, 2 * PAD + 1, size=(n, 2))
    flips = rng.random(n) < 0.5
    return np.stack([crop_flip(img, oy, ox, f) for img, (oy, ox), f in zip(batch, offsets, flips)])


# ---------------------------------------------------------------------------
# loss and metrics


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    loss = -log_p[np.arange(n), labels].mean()
    grad = np.exp(log_p)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


def error_rate(logits, labels):
    # argmax returns the first maximum, so ties go to the lower class index
    return 100.0 * float(np.mean(logits.argmax(axis=1) != labels))


def predict(net, images, workers=1, batch_size=500):
    outs = []
    for i in range(0, len(images), batch_size):
        chunk = images[i:i + batch_size]
        if len(chunk) == 1 and outs:
            chunk = images[i - 1:i + 1]
            outs.append(P.forward(net, chunk, workers)[0][1:])
            continue
        outs.append(P.forward(net, chunk, workers)[0])
    return np.concatenate(outs)


def evaluate(net, dataset, workers=1):
    """Error rate in percent.

    Batch norm always uses batch statistics here, so evaluation runs on
    fixed chunks of the data in dataset order.
    """
    return error_rate(predict(net, dataset.images, workers), dataset.labels)


# ---------------------------------------------------------------------------
# loop


def _epoch_batches(dataset, config, epoch):
    split = batches(dataset, config.batch_size, shuffle_seed=(config.rng_seed, epoch))
    if len(split) > 1 and len(split[-1][1]) == 1:
        # batch norm needs two samples; fold a lone trailing one into its neighbour
        (xa, ya), (xb, yb) = split[-2], split[-1]
        split[-2:] = [(np.concatenate([xa, xb]), np.concatenate([ya, yb]))]
    return split


def train(net, train_set, config, test_set=None, workers=1, tape_hook=None,
          state=None, start_epoch=0):
    """Run epochs ``start_epoch .. config.epochs - 1``.

    Returns ``(history, state)`` where history rows are
    ``(epoch, mean_loss, train_err, test_err)``; train_err is measured on the
    mini-batches as they were trained, test_err is NaN without a test set.
    ``tape_hook(tape)`` is called after every training forward pass.
    """
    if train_set.images.shape[1:] != tuple(net.input_shape):
        raise ValueError(f"data shape {train_set.images.shape[1:]} != net input {net.input_shape}")
    params = net.named_parameters()
    decay = net.decay_flags()
    if state is None:
        state = MomentumState.zeros_like(params)
    history = []
    for epoch in range(start_epoch, config.epochs):
        lr = lr_at(config, epoch)
        aug_rng = np.random.default_rng((config.rng_seed, epoch, 1))
        total_loss = 0.0
        wrong = 0
        seen = 0
        for xb, yb in _epoch_batches(train_set, config, epoch):
            xb = augment(xb, aug_rng, config.augment)
            logits, tape = P.forward(net, xb, workers)
            if tape_hook is not None:
                tape_hook(tape)
            loss, dlogits = softmax_cross_entropy(logits, yb)
            grads = P.backward(net, tape, dlogits, workers).flat()
            sgd_step(params, grads, state, lr, config, decay)
            total_loss += loss * len(yb)
            wrong += int(np.sum(logits.argmax(axis=1) != yb))
            seen += len(yb)
        test_err = evaluate(net, test_set, workers) if test_set is not None else float("nan")
        history.append((epoch, total_loss / seen, 100.0 * wrong / seen, test_err))
    return history, state


def write_metrics_csv(path, history):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,loss,train_err,test_err\n")
        for epoch, loss, tr, te in history:
            fh.write(f"{epoch},{loss!r},{tr!r},{te!r}\n")
