"""Independent brute-force references the fast implementations are checked
against.  Everything here is O(N^2) basis-matrix arithmetic on purpose; keep
it free of np.fft so the two routes share no code.
"""

import numpy as np


def dft_matrix(n: int) -> np.ndarray:
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n)


def oracle_range_profile(data: np.ndarray) -> np.ndarray:
    """(P, N, C) samples -> (N, P, C) fast-time spectrum, unnormalized."""
    w = dft_matrix(data.shape[1])
    return np.einsum("kn,pnc->kpc", w, data)


def oracle_crd(rp: np.ndarray) -> np.ndarray:
    """(N, P, C) range profiles -> center-shifted complex range-Doppler."""
    p = rp.shape[1]
    w = dft_matrix(p)
    crd = np.einsum("dp,kpc->kdc", w, rp)
    half = p // 2  # move zero Doppler to the middle bin
    return np.concatenate([crd[:, half:, :], crd[:, :half, :]], axis=1)


def oracle_chain(data: np.ndarray) -> np.ndarray:
    return np.abs(oracle_crd(oracle_range_profile(data)))
