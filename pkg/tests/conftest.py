import os

# acceptance timings are stated for a single thread
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import functools  # noqa: E402
import inspect  # noqa: E402
import time  # noqa: E402

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from smoothadv import attacks, data, nn  # noqa: E402

TOY_SEED = 3
TRAIN = nn.TrainConfig(epochs=50, batch_size=8, learning_rate=2e-3, seed=0)


@pytest.fixture(scope="session")
def toy_split():
    ds = data.generate_synthetic(50, 512, TOY_SEED)
    return data.split(ds, 0.1, TOY_SEED)


TIMINGS: dict = {}


@pytest.fixture(scope="session")
def toy_model(toy_split):
    train_set, _ = toy_split
    spec = nn.default_spec(512)
    start = time.perf_counter()
    model = nn.Classifier(spec, nn.train(spec, train_set, TRAIN))
    TIMINGS["toy_train"] = time.perf_counter() - start
    return model


@pytest.fixture(scope="session")
def attack_set():
    """Held-out synthetic recordings for attack statistics (80 examples)."""
    return data.generate_synthetic(20, 512, 11)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_spec(length=24):
    return nn.ModelSpec(
        (nn.Conv1D(3, 3, 2), nn.ReLU(), nn.MaxPool(2), nn.Conv1D(4, 2, 1), nn.ReLU(),
         nn.GlobalAveragePool(), nn.Dense(4)),
        length,
    )


def random_params(spec, seed, bias_scale=0.1):
    params = nn.init_params(spec, seed)
    r = np.random.default_rng(seed + 1000)
    for p in params.values():
        p["bias"] = r.normal(scale=bias_scale, size=p["bias"].shape)
    return params


# -- ball invariant on every attack run anywhere in the suite -----------------

BALL_TOL = 1e-9
BALL_CHECKS = {"attacks": 0, "violations": []}


def _check_result(r, method, eps):
    if r.error:
        return
    BALL_CHECKS["attacks"] += 1
    if method == "sap":
        norm = float(np.abs(r.theta).max())
    else:
        norm = float(np.abs(r.adversarial - r.original).max())
    if norm > eps + BALL_TOL:
        BALL_CHECKS["violations"].append((method, r.id, norm, eps))
        raise AssertionError(f"{method} attack {r.id!r} left the ball: {norm} > {eps}")


def _guard(fn, method):
    sig = inspect.signature(fn)

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        bound = sig.bind(*args, **kwargs)
        bound.apply_defaults()
        a = bound.arguments
        out = fn(*args, **kwargs)
        if method == "campaign":
            cfg = a["cfg"] or (attacks.SAP_DEFAULTS if a["method"] == "sap" else attacks.PGD_DEFAULTS)
            for r in out[0]:
                _check_result(r, a["method"], cfg.epsilon)
        else:
            eps = a["epsilon"] if method == "fgsm" else a["cfg"].epsilon
            _check_result(out, method, eps)
        return out

    return wrapper


@pytest.fixture(scope="session", autouse=True)
def ball_guard():
    with pytest.MonkeyPatch.context() as mp:
        for name in ("fgsm", "pgd", "sap"):
            mp.setattr(attacks, name, _guard(getattr(attacks, name), name))
        mp.setattr(attacks, "attack_campaign", _guard(attacks.attack_campaign, "campaign"))
        yield BALL_CHECKS


# -- acceptance summary -------------------------------------------------------

ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
