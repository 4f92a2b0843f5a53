import numpy as np
import pytest


def central_diff(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Plain central differences of scalar ``f(x)``; ``x`` is perturbed in place."""
    g = np.zeros_like(x)
    flat, out = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        v = flat[i]
        flat[i] = v + h
        up = f(x)
        flat[i] = v - h
        down = f(x)
        flat[i] = v
        out[i] = (up - down) / (2 * h)
    return g


def max_rel_err(a, b, floor=1e-8) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_problem(n_classes=2, samples_per_class=40, noise=0.1, class_gap=1.0, seed=0):
    """Small separable synthetic task plus its prior, sized for ``ModelConfig.tiny``."""
    from nhgln.datasets import SyntheticSpec, generate_synthetic
    from nhgln.geometry import build_prior, random_layout

    layout = random_layout(8, np.random.default_rng(0))
    spec = SyntheticSpec(
        n_classes=n_classes, n_channels=8, n_bands=3, band_edges=((1, 4), (4, 8), (8, 14)),
        n_subjects=2, samples_per_class=samples_per_class, noise=noise, class_gap=class_gap, layout=layout,
    )
    return generate_synthetic(spec, seed), build_prior(layout).adjacency


@pytest.fixture(scope="session")
def tiny_task():
    return tiny_problem()


ACCEPTANCE_LINES = []


def record_criterion(number: int, title: str, ok: bool, detail: str = "") -> None:
    line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title}" + (f" ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
