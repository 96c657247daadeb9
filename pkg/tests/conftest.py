"""Shared fixtures and dense oracles."""
import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_unitary(dim, rng):
    """Haar-ish random unitary from the QR of a complex Gaussian matrix"""
    z = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def embed(gate, site, n_sites):
    """Full 2^N matrix of a gate acting on `site` (and site + 1 for 4x4 gates)"""
    width = int(np.log2(gate.shape[0]))
    left = np.eye(2 ** site)
    right = np.eye(2 ** (n_sites - site - width))
    return np.kron(np.kron(left, gate), right)


def random_vector(n_sites, rng):
    vector = rng.normal(size=2 ** n_sites) + 1j * rng.normal(size=2 ** n_sites)
    return vector / np.linalg.norm(vector)
