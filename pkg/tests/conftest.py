import numpy as np
import pytest

from adgs.scene import Camera, GaussianCloud
from adgs.sh import rgb_to_sh_dc


def make_camera(size=16, distance=3.0, fov_deg=45.0, eye=None):
    f = (size / 2.0) / np.tan(np.radians(fov_deg) / 2.0)
    eye = np.array([0.3, -distance, 0.4]) if eye is None else np.asarray(eye, dtype=float)
    return Camera.look_at(eye, np.zeros(3), [0.0, 0.0, 1.0], f, f, size, size)


def random_cloud(rng, n=8, dtype=np.float64, spread=0.5, sh_scale=0.2, embed_dim=24):
    pos = rng.uniform(-spread, spread, (n, 3))
    log_scale = np.log(rng.uniform(0.08, 0.3, (n, 3)))
    q = rng.standard_normal((n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    sh = rng.normal(0.0, sh_scale, (n, 16, 3))
    sh[:, 0] = rgb_to_sh_dc(rng.uniform(0.2, 0.8, (n, 3)))
    cloud = GaussianCloud.create(pos, log_scale, q, rng.normal(0.0, 1.0, n), sh,
                                 rng.normal(0.0, 0.1, (n, embed_dim)), embed_dim=embed_dim, dtype=dtype)
    cloud.sampling_rate[...] = rng.uniform(3.0, 8.0, n)
    return cloud


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


TINY_SPEC = dict(seed=3, n_gaussians=12, n_train_views=6, n_test_views=2, width=32, height=32,
                 distractor_ratio=0.2, points_per_gaussian=2)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """A 32x32, 6-view synthetic dataset shared by the slower tests."""
    from adgs.synthdata import SynthSceneSpec, generate_dataset
    root = tmp_path_factory.mktemp("tiny")
    generate_dataset(SynthSceneSpec(**TINY_SPEC), root)
    return root


CRITERIA = {}


def record_criterion(number, name, passed, detail):
    """Remember one acceptance verdict for the end-of-run summary."""
    CRITERIA[str(number)] = f"criterion {str(number):>3} {'PASS' if passed else 'FAIL'}  {name}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(CRITERIA, key=lambda k: (int(k.rstrip("ab")), k)):
        terminalreporter.write_line(CRITERIA[key])
