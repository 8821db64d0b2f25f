import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gmmfield import _backend
from gmmfield.scene import Scene, Sphere
from gmmfield.sparse_map import MapConfig, build_map

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[0][2:])):
            terminalreporter.write_line(line)


@pytest.fixture
def criterion(request):
    """``criterion(n, title, ok, detail)`` records one acceptance line and asserts ``ok``."""

    def record(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"AC{number} {'PASS' if ok else 'FAIL'} {title}: {detail}"
        request.config.stash[ACCEPTANCE].append(line)
        print(line)
        assert ok, line

    return record


BACKENDS = ["python"] + (["cython"] if _backend.compiled_available() else [])


@pytest.fixture(params=BACKENDS)
def impl(request):
    """Kernel module for each available backend."""
    return _backend.get_impl(request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_scene():
    return Scene([Sphere((0.3, 0.2, 0.1), 0.8)], density=400)


@pytest.fixture(scope="session")
def small_map(small_scene):
    """A 13-block map around a small sphere; cheap enough for unit tests."""
    return build_map(small_scene.points(), MapConfig(activation_distance=0.6))


def compact_room():
    """A 3.4 x 2.7 m room with a crate and a pillar."""
    from gmmfield.scene import Box, Cylinder

    return Scene(
        [
            Box((-1.62, -1.33, -0.27), (1.78, 1.41, 1.86)),
            Box((0.33, 0.27, -0.27), (1.08, 0.88, 0.51)),
            Cylinder(-1.05, -0.75, 0.21, -0.27, 1.86),
        ],
        density=100,
    )


@pytest.fixture(scope="session")
def room_scene():
    return compact_room()


@pytest.fixture(scope="session")
def room_map(room_scene):
    from gmmfield.fitter import FitConfig

    cfg = MapConfig(activation_distance=0.6, fit=FitConfig(mae_tolerance=0.02))
    return build_map(room_scene.points(), cfg)


@pytest.fixture(scope="session")
def canonical_build():
    """The default box room fitted at 0.02, with its build time in seconds."""
    import time

    from gmmfield.fitter import FitConfig
    from gmmfield.scene import box_room_scene

    t0 = time.perf_counter()
    m = build_map(box_room_scene().points(), MapConfig(fit=FitConfig(mae_tolerance=0.02)))
    return m, time.perf_counter() - t0


@pytest.fixture(scope="session")
def canonical_map(canonical_build):
    return canonical_build[0]


@pytest.fixture(scope="session")
def sphere_build(tmp_path_factory):
    """``gmmfield build sphere`` with defaults, run once; returns (exit, stdout, seconds, map path)."""
    import contextlib
    import io
    import time

    from gmmfield import cli

    out = tmp_path_factory.mktemp("sphere") / "sphere.bin"
    buf = io.StringIO()
    t0 = time.perf_counter()
    with contextlib.redirect_stdout(buf):
        code = cli.main(["build", "sphere", "--out", str(out)])
    return code, buf.getvalue(), time.perf_counter() - t0, out
