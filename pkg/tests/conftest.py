import gzip
import importlib.util
import os

import numpy as np
import pytest

from pararealnet.data import load_idx, write_idx


def mnist_csv_path():
    """The 5,000-digit MNIST sample shipped inside the mlxtend wheel."""
    spec = importlib.util.find_spec("mlxtend")
    if spec is None:
        return None
    path = os.path.join(os.path.dirname(spec.origin), "data", "data", "mnist_5k.csv.gz")
    return path if os.path.exists(path) else None


@pytest.fixture(scope="session")
def mnist_subset(tmp_path_factory):
    """(train, test) Datasets: 2,000 training and 1,000 test digits.

    The CSV rows are written out as IDX files and read back through
    ``load_idx`` so the real ingestion path is exercised.
    """
    path = mnist_csv_path()
    if path is None:
        pytest.skip("mlxtend MNIST sample not installed")
    with gzip.open(path, "rt") as fh:
        rows = np.loadtxt(fh, delimiter=",", dtype=np.uint8)
    images, labels = rows[:, :784].reshape(-1, 28, 28), rows[:, 784]
    order = np.random.default_rng(0).permutation(len(rows))
    out = tmp_path_factory.mktemp("mnist")
    sets = []
    for name, idx in (("train", order[:2000]), ("test", order[2000:3000])):
        ip, lp = out / f"{name}-images-idx3-ubyte", out / f"{name}-labels-idx1-ubyte"
        write_idx(ip, lp, images[idx], labels[idx])
        sets.append(load_idx(ip, lp))
    return tuple(sets)
