import numpy as np
import pytest

from domshift.data import gen_shapes_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def shapes_small(tmp_path_factory):
    """3 classes x 6 images at 16x16, shared read-only across tests."""
    return gen_shapes_dataset(tmp_path_factory.mktemp("shapes"), classes=3, per_class=6, resolution=16, seed=7)


def write_folder(root, layout, size=8, seed=0):
    """Create ``root/<class>/<name>`` PNGs from ``{class: [name, ...]}``."""
    from domshift.data import write_image

    rng = np.random.default_rng(seed)
    for cls, names in layout.items():
        (root / cls).mkdir(parents=True, exist_ok=True)
        for name in names:
            write_image(rng.uniform(0, 1, (1, 3, size, size)).astype(np.float32), root / cls / name)
    return root


def named_entries(ds):
    """Entries keyed by class name, independent of label numbering."""
    return sorted((path, ds.class_names[label]) for path, label in ds.entries)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
