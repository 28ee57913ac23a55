import csv

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)


def random_state(rng, dim):
    psi = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return psi / np.linalg.norm(psi)


def dense_entropy(psi, d, cut):
    """Reference bipartite entropy in bits, straight from the reduced spectrum."""
    mat = np.asarray(psi).reshape(d**cut, -1)
    w = np.linalg.svd(mat, compute_uv=False) ** 2
    w = w[w > 1e-14]
    return float(-np.sum(w * np.log2(w)))


def fidelity(a, b):
    return abs(np.vdot(a, b))


def read_csv_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def series_map(rows, key="series", t_key="t", val_key="value", err_key="stderr"):
    """Group long-format rows into {series: (t, value, stderr)} arrays."""
    out = {}
    for row in rows:
        out.setdefault(row[key], []).append(
            (float(row[t_key]), float(row[val_key]), float(row[err_key]))
        )
    return {
        k: tuple(np.array(col) for col in zip(*sorted(v)))
        for k, v in out.items()
    }
