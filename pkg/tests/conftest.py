"""Shared problem builders and fixtures.

The expensive pieces (high-accuracy references for the 20-seed sweeps) are
cached at session scope so the safety, rate, residual, and identification
tests all draw from one computation.
"""

import struct

import numpy as np
import pytest
from hypothesis import settings

import gaugecg as gc

settings.register_profile("suite", deadline=None, max_examples=50)
settings.load_profile("suite")


def synthetic_problem(seed, lam=1.0, alpha=2.0, n=100, d=50):
    """The seeded Gaussian logistic instance used throughout."""
    data = gc.gen_synthetic(seed, n=n, d=d)
    loss = gc.LogisticLoss(data)
    penalty = gc.Penalty.power(alpha, weight=lam)
    atomic_set = gc.AtomicSet.signed_basis(d)
    return loss, penalty, atomic_set


def one_dim_problem(c=2.0, lam=1.0, alpha=2.0):
    """min 0.5*(x - c)^2 + lam * |x|^alpha / alpha over the two atoms +-1."""
    data = gc.DataMatrix(np.ones((1, 1)), np.array([float(c)]))
    loss = gc.QuadraticLoss(data)
    penalty = gc.Penalty.power(alpha, weight=lam)
    atomic_set = gc.AtomicSet.signed_basis(1)
    return loss, penalty, atomic_set


def tame_quadratic(rng, d=6, n=9, atom_count=4):
    """Small random quadratic over a symmetric explicit atom set.

    Scales are kept mild so a few dozen iterations never trip the
    divergence guard (wild scales genuinely overshoot under open-loop
    steps, which is its own test elsewhere).
    """
    half = rng.standard_normal((atom_count, d))
    half /= np.linalg.norm(half, axis=1, keepdims=True)
    atoms = np.vstack([half, -half])
    A = rng.standard_normal((n, d)) * 0.4
    b = rng.standard_normal(n) * 0.5
    loss = gc.QuadraticLoss(gc.DataMatrix(A, b))
    return loss, gc.AtomicSet.explicit(atoms)


def write_idx_pair(dirpath, seed=7, counts=None, gzipped=False):
    """Synthesize an IDX image/label pair shaped like the handwriting set.

    Each digit gets a bright 4x4 block at a digit-keyed position on a dim
    noise background, so a linear classifier separating two digits settles
    on a small stable pixel support. Returns (images_path, labels_path,
    labels array).
    """
    import gzip as _gzip

    rng = np.random.default_rng(seed)
    if counts is None:
        counts = {g: 12 for g in range(10)}
        counts[4] = 42
        counts[9] = 45
    labels = np.array(
        [g for g, c in counts.items() for _ in range(c)], dtype=np.uint8
    )
    rng.shuffle(labels)
    n = len(labels)
    blocks = {g: (2 + (g % 5) * 5, 2 + (g // 5) * 12) for g in range(10)}
    imgs = np.zeros((n, 28, 28), dtype=np.uint8)
    for i, g in enumerate(labels):
        base = rng.integers(0, 30, size=(28, 28))
        r, c = blocks[int(g)]
        base[r : r + 4, c : c + 4] = rng.integers(170, 255, size=(4, 4))
        imgs[i] = base.astype(np.uint8)
    img_bytes = struct.pack(">IIII", 0x803, n, 28, 28) + imgs.tobytes()
    lbl_bytes = struct.pack(">II", 0x801, n) + labels.tobytes()
    suffix = ".gz" if gzipped else ""
    img_path = str(dirpath / f"images.idx{suffix}")
    lbl_path = str(dirpath / f"labels.idx{suffix}")
    if gzipped:
        img_bytes = _gzip.compress(img_bytes)
        lbl_bytes = _gzip.compress(lbl_bytes)
    with open(img_path, "wb") as fh:
        fh.write(img_bytes)
    with open(lbl_path, "wb") as fh:
        fh.write(lbl_bytes)
    return img_path, lbl_path, labels


_REFERENCE_CACHE = {}


def get_reference(seed, lam, alpha=2.0):
    """Session-cached reference solution for a synthetic instance."""
    key = (seed, lam, alpha)
    if key not in _REFERENCE_CACHE:
        loss, penalty, atomic_set = synthetic_problem(seed, lam, alpha)
        _REFERENCE_CACHE[key] = gc.reference_solve(
            loss, penalty, atomic_set, iters=10**6, tol=1e-10
        )
    return _REFERENCE_CACHE[key]


_SCREENED_RUN_CACHE = {}


def get_screened_run(seed, lam, alpha=2.0):
    """Session-cached 1e4-iteration screened run with snapshots."""
    key = (seed, lam, alpha)
    if key not in _SCREENED_RUN_CACHE:
        loss, penalty, atomic_set = synthetic_problem(seed, lam, alpha)
        config = gc.SolverConfig(
            max_iters=10**4,
            trace_every=100,
            screening_enabled=True,
            keep_snapshots=True,
        )
        _SCREENED_RUN_CACHE[key] = gc.run(loss, penalty, atomic_set, config)
    return _SCREENED_RUN_CACHE[key]


@pytest.fixture(scope="session")
def mnist_fixture(tmp_path_factory):
    dirpath = tmp_path_factory.mktemp("idx")
    img, lbl, labels = write_idx_pair(dirpath)
    return img, lbl, labels
