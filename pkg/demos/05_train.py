"""Train a small parareal ResNet on synthetic image blobs.

Run:  python3 demos/05_train.py
The same loop drives the MNIST acceptance run (see tests/test_acceptance.py).
"""

import numpy as np

from pararealnet import parareal_net as P
from pararealnet import presets, trainer
from pararealnet.data import synth_blobs

# One draw fixes the class means; split it 60/25 per class into train and test.
full = synth_blobs(4, 85, (1, 8, 8), separation=6.0, seed=0)
is_train = np.tile(np.arange(85) < 60, 4)
train, test = full.subset(np.flatnonzero(is_train)), full.subset(np.flatnonzero(~is_train))

source = presets.toy_resnet((1, 8, 8), classes=4, blocks=12, width=2, seed=0)
net = P.build_parareal(source, 3, n_units=1, seed=0)

config = trainer.TrainConfig(epochs=6, batch_size=20, lr=0.05, rng_seed=0)
history, state = trainer.train(net, train, config, test, workers=3)
for epoch, loss, train_err, test_err in history:
    print(f"epoch {epoch}: loss {loss:.3f}, train {train_err:.1f}%, test {test_err:.1f}%")
