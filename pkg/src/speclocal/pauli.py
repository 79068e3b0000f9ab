"""Pauli matrices and the Cayley transform."""
import numpy as np

S0 = np.eye(2, dtype=complex)
S1 = np.array([[0, 1], [1, 0]], dtype=complex)
S2 = np.array([[0, -1j], [1j, 0]], dtype=complex)
S3 = np.array([[1, 0], [0, -1]], dtype=complex)
PAULI = (S0, S1, S2, S3)

# (1/sqrt 2) [[1, i], [1, -i]]
CAYLEY = np.array([[1, 1j], [1, -1j]], dtype=complex) / np.sqrt(2)

for _m in (S0, S1, S2, S3, CAYLEY):
    _m.setflags(write=False)


def pauli(i: int) -> np.ndarray:
    return PAULI[i]


def kron(*ms) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for m in ms:
        out = np.kron(out, np.asarray(m, dtype=complex))
    return out


def cayley(k: int) -> np.ndarray:
    """Block Cayley transform with k x k identity blocks."""
    one = np.eye(k)
    return np.block([[one, 1j * one], [one, -1j * one]]) / np.sqrt(2)
