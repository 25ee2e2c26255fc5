import numpy as np
import pytest

from streamreplay.diffcore import init_model
from streamreplay.objectives import TaskKind
from streamreplay.streams import make_phase


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_problem(rng, kind, n=6, topology=None, activation="tanh"):
    """A random small net plus a batch of matching targets."""
    if kind == "classification":
        topology = topology or (3, 4, 5)
        task = TaskKind.classification(topology[-1], topology[0])
        y = rng.integers(0, topology[-1], n)
    elif kind == "reconstruction":
        topology = topology or (4, 3, 4)
        task = TaskKind.reconstruction(topology[0])
        y = None
    else:
        topology = topology or (5, 4, 1)
        task = TaskKind.forecasting(topology[0])
        y = rng.standard_normal((n, 1))
    model = init_model(topology, rng, hidden_activation=activation)
    # jitter biases away from zero so every parameter matters
    model = model.with_params(model.params + 0.1 * rng.standard_normal(model.params.size))
    x = rng.standard_normal((n, topology[0]))
    if y is None:
        y = x + 0.1 * rng.standard_normal(x.shape)
    return model, x, y, task


def linear_regression_phase(rng, phase_id, w_true, n=40, noise=0.1, val_fraction=0.25):
    d_in, d_out = w_true.shape
    x = rng.standard_normal((n, d_in))
    y = x @ w_true + noise * rng.standard_normal((n, d_out))
    keys = np.arange(n) + 1000 * phase_id
    return make_phase(phase_id, x, y, keys, TaskKind.forecasting(d_in, d_out), val_fraction)


def write_mnist_fixture(root, per_digit=30, size=8, seed=0):
    """Tiny MNIST-shaped IDX pair under root/mnist; digit d draws a bar at row d."""
    from streamreplay.streams import write_idx

    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(10), per_digit)
    rng.shuffle(labels)
    images = np.zeros((len(labels), size, size), dtype=np.uint8)
    for i, d in enumerate(labels):
        images[i, d % size, 1:size - 1] = 200
        images[i] += rng.integers(0, 20, (size, size)).astype(np.uint8)
    folder = root / "mnist"
    folder.mkdir(parents=True, exist_ok=True)
    write_idx(folder / "train-images-idx3-ubyte.gz", images)
    write_idx(folder / "train-labels-idx1-ubyte", labels.astype(np.uint8))
    return images, labels


def write_electricity_fixture(root, meters=6, rows=400, seed=0):
    rng = np.random.default_rng(seed)
    folder = root / "electricity"
    folder.mkdir(parents=True, exist_ok=True)
    lines = [";".join(['""'] + [f'"MT_{m:03d}"' for m in range(1, meters + 1)])]
    for r in range(rows):
        vals = [f"{10 + m + 3 * np.sin(r / 20) + rng.random():.3f}".replace(".", ",")
                for m in range(meters)]
        lines.append(";".join([f'"2011-01-01 {r:05d}"'] + vals))
    (folder / "LD2011_2014.txt").write_text("\n".join(lines) + "\n")


def write_airlines_fixture(root, rows=300, seed=0):
    rng = np.random.default_rng(seed)
    folder = root / "airlines"
    folder.mkdir(parents=True, exist_ok=True)
    carriers = ["AA", "DL", "UA", "WN", "B6", "AS", "NK"]
    airports = ["SFO", "JFK", "ORD", "ATL"]
    lines = ["Airline,AirportFrom,AirportTo,DayOfWeek,Time,Length,Delay"]
    for _ in range(rows):
        a = carriers[rng.integers(len(carriers))]
        t = int(rng.integers(0, 1440))
        lines.append(f"{a},{airports[rng.integers(4)]},{airports[rng.integers(4)]},"
                     f"{rng.integers(1, 8)},{t},{rng.integers(30, 400)},{int(t > 720)}")
    (folder / "airlines.csv").write_text("\n".join(lines) + "\n")
