"""Desk-scale source networks shaped like the VGG-16 and ResNet tables."""

from . import layers as L
from .parareal_net import SequentialNetwork


def toy_resnet(input_shape=(3, 32, 32), classes=10, blocks=24, stages=3, width=4, seed=0):
    """Stem conv, ``blocks`` residual units split evenly over ``stages``
    (channels double and resolution halves at each new stage), then
    BN-ReLU-global-pool-FC.

    ``stages=1`` gives a balanced network whose blocks all cost the same.
    """
    if blocks < stages or blocks % stages:
        raise ValueError(f"{blocks} blocks do not split evenly over {stages} stages")
    per_stage = blocks // stages
    stem = [L.Conv2d("stem", input_shape[0], width, 3, 1, bias=False)]
    units = []
    cin = width
    for s in range(stages):
        cout = width * 2 ** s
        for b in range(per_stage):
            stride = 2 if s > 0 and b == 0 else 1
            units.append(L.ResidualBlock(f"s{s}.b{b}", cin, cout, stride))
            cin = cout
    head = [
        L.BatchNorm2d("head.bn", cin),
        L.ReLU("head.relu"),
        L.GlobalAvgPool("head.pool"),
        L.FullyConnected("head.fc", cin, classes),
    ]
    return SequentialNetwork.create(input_shape, stem, units, head, seed)


def _vgg_layer(name, cin, cout):
    return [L.Conv2d(f"{name}.conv", cin, cout, 3, 1),
            L.BatchNorm2d(f"{name}.bn", cout),
            L.ReLU(f"{name}.relu")]


def toy_vgg(input_shape=(3, 32, 32), classes=10, divisor=8, seed=0):
    """VGG-16 layout with channel and FC widths divided by ``divisor``.

    The five conv stages are the blocks; each ends in a 2x2 max pool, so the
    input side must be divisible by 32.
    """
    if input_shape[1] % 32 or input_shape[2] % 32:
        raise ValueError("toy-vgg needs spatial sizes divisible by 32")
    c = [64 // divisor, 128 // divisor, 256 // divisor, 512 // divisor, 512 // divisor]
    reps = [1, 2, 3, 3, 3]
    stem = _vgg_layer("stem", input_shape[0], c[0])
    stages = []
    cin = c[0]
    for s, (cout, n) in enumerate(zip(c, reps)):
        layers = []
        for i in range(n):
            layers += _vgg_layer(f"v{s}.{i}", cin, cout)
            cin = cout
        layers.append(L.MaxPool2d(f"v{s}.pool", 2, 2))
        stages.append(L.Sequential(f"v{s}", tuple(layers)))
    fc = 4096 // divisor
    spatial = (input_shape[1] // 32) * (input_shape[2] // 32)
    head = [
        L.FullyConnected("fc1", cin * spatial, fc), L.ReLU("fc1.relu"),
        L.FullyConnected("fc2", fc, fc), L.ReLU("fc2.relu"),
        L.FullyConnected("fc3", fc, classes),
    ]
    return SequentialNetwork.create(input_shape, stem, stages, head, seed)


def linear_toy(input_shape=(3, 8, 8), classes=5, blocks=6, width=3, seed=0):
    """Strictly linear network: bias-free convs, downsampling by stride-2
    1x1 convs instead of pooling, global average pool and a bias-free FC."""
    stem = [L.Conv2d("stem", input_shape[0], width, 3, 1, bias=False)]
    units = []
    cin = width
    for b in range(blocks):
        if b % 3 == 2:
            units.append(L.Conv2d(f"b{b}", cin, cin + 1, 1, 2, bias=False))
            cin += 1
        else:
            units.append(L.Conv2d(f"b{b}", cin, cin, 3, 1, bias=False))
    head = [L.GlobalAvgPool("pool"), L.FullyConnected("fc", cin, classes, bias=False)]
    return SequentialNetwork.create(input_shape, stem, units, head, seed)


PRESETS = {"toy-resnet": toy_resnet, "toy-vgg": toy_vgg}
