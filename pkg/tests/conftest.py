import json
from importlib import resources

import numpy as np
import pytest

from streamglide import dynamics, flowfield


def bundled_field(name):
    text = resources.files("streamglide.data").joinpath("fields", name).read_text()
    return flowfield.load_field(json.loads(text))


@pytest.fixture(scope="session")
def model():
    return dynamics.default_model()


@pytest.fixture(scope="session")
def still_water():
    return flowfield.layered([(0.0, flowfield.uniform(0.0, 0.0))])


@pytest.fixture(scope="session")
def desk_field():
    return bundled_field("desk_hard.json")


@pytest.fixture(scope="session")
def vortex_field():
    return bundled_field("vortex.json")


@pytest.fixture(scope="session")
def uniform_depth_field():
    return bundled_field("depth_uniform.json")


def small_scenario_doc(**over):
    doc = {"bounds": [[-200, 200], [-200, 200], [-160, 0]], "start": [-180, 180, 0], "goal": [180, -180, 0],
           "n_positions": 64, "n_controls": 16, "k_neighbors": 27,
           "sampling": {"mode": "lattice", "shape": [4, 4, 4]},
           "steering": {"dt_s": 5.0, "steps": 125, "tol_m": 5.0},
           "method": "streamline", "field": "fields/desk_hard.json"}
    doc.update(over)
    return doc


def vortex_psi(gamma, rc, cx, cy, x, y):
    # algebraic-core vortex: tangential speed gamma r / (2 pi (r^2 + rc^2))
    return -gamma / (4 * np.pi) * np.log((x - cx) ** 2 + (y - cy) ** 2 + rc ** 2)


def vortex_uv(gamma, rc, cx, cy, x, y):
    dx, dy = x - cx, y - cy
    k = gamma / (2 * np.pi * (dx * dx + dy * dy + rc * rc))
    return -k * dy, k * dx


def still_water_entry_time(model, a, b, tol, n=200001):
    """Earliest entry into the tol-ball around b over straight still-water glides from a.

    Continuous in glide angle (dense scan) with the heading aimed at b; closed-form
    ray-sphere intersection per angle.
    """
    a, b = np.asarray(a, float), np.asarray(b, float)
    d = b - a
    horiz = np.hypot(d[0], d[1])
    sign = 1 if d[2] > 0 else -1
    g = sign * np.linspace(model.gamma_min, model.gamma_max, n)
    proj = horiz * np.cos(g) + d[2] * np.sin(g)
    perp2 = np.maximum(d @ d - proj ** 2, 0.0)
    inside = (perp2 <= tol * tol) & (proj > 0)
    s = proj - np.sqrt(np.maximum(tol * tol - perp2, 0.0))
    t = np.where(inside, s / model.speed(g), np.inf)
    return float(t.min())


ACCEPTANCE_LINES = []


def report(tag, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} {tag}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
