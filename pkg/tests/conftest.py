"""Shared fixtures and dense oracles for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from kktsolve.kkt import KktBlocks
from kktsolve.seqgen import BarrierTrace, QpModel, barrier_sequence, standard_trace
from kktsolve.sparsecore import SYMMETRIC_LOWER, CsMatrix, from_dense


def random_sparse(n: int, density: float, seed: int,
                  diag_dominant: bool = True) -> CsMatrix:
    """Random sparse general matrix; diagonally boosted for nonsingularity."""
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((n, n)) * (rng.random((n, n)) < density)
    if diag_dominant:
        M += np.diag(np.sign(np.diagonal(M) + 1e-3)
                     * (np.abs(M).sum(axis=1) + 1.0))
    return from_dense(M)


def random_spd(n: int, density: float, seed: int, shift: float = 1.0) -> CsMatrix:
    """Random sparse SPD matrix in symmetric-lower storage."""
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((n, n)) * (rng.random((n, n)) < density)
    S = B @ B.T + shift * np.eye(n)
    return from_dense(S, symmetry=SYMMETRIC_LOWER)


def random_vector(n: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal(n)


def dense_kkt3x3(blocks: KktBlocks) -> np.ndarray:
    """The unreduced 3x3 step matrix, assembled densely (test oracle only)."""
    n, m = blocks.n, blocks.m
    H = blocks.H.to_dense()
    J = blocks.J.to_dense()
    X = np.diag(blocks.x)
    Z = np.diag(blocks.z)
    top = np.hstack([H, J.T, -np.eye(n)])
    mid = np.hstack([J, np.zeros((m, m)), np.zeros((m, n))])
    bot = np.hstack([Z, np.zeros((n, m)), X])
    return np.vstack([top, mid, bot])


def hand_qp(n: int = 8) -> QpModel:
    """min 0.5||x||^2 s.t. sum(x) = 1, x >= 0; optimum is e/n."""
    Q = from_dense(np.eye(n), symmetry=SYMMETRIC_LOWER)
    A = from_dense(np.ones((1, n)))
    return QpModel(Q=Q, c=np.zeros(n), A=A, b=np.array([1.0]), seed=0)


@pytest.fixture(scope="session")
def trace() -> BarrierTrace:
    """The standard desk-scale ill-conditioned sequence (session-cached)."""
    return standard_trace()


@pytest.fixture(scope="session")
def hand_trace() -> BarrierTrace:
    return barrier_sequence(hand_qp(), 1.0, 0.1, 9)
