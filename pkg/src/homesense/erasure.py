"""Systematic Reed-Solomon erasure code over GF(2^8).

The generator is the classic Vandermonde construction used by zfec: rows are
the polynomial evaluations at 0, 1, a, a^2, ... (a = x modulo x^8+x^4+x^3+x^2+1),
right-multiplied by the inverse of the top k x k block so the first k output
blocks are the input blocks themselves.  Any k of the m output blocks
reconstruct the input.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

PRIM_POLY = 0x11D


def _build_tables() -> tuple[np.ndarray, np.ndarray]:
    exp = np.zeros(510, dtype=np.int32)
    log = np.zeros(256, dtype=np.int32)
    x = 1
    for i in range(255):
        exp[i] = x
        log[x] = i
        x <<= 1
        if x & 0x100:
            x ^= PRIM_POLY
    exp[255:510] = exp[0:255]
    return exp, log


EXP, LOG = _build_tables()


def _build_mul_table() -> np.ndarray:
    a = np.arange(256)
    table = EXP[(LOG[a][:, None] + LOG[a][None, :])].astype(np.uint8)
    table[0, :] = 0
    table[:, 0] = 0
    return table


MUL = _build_mul_table()
INV = np.zeros(256, dtype=np.uint8)
INV[1:] = EXP[255 - LOG[np.arange(1, 256)]]


def gf_mul(a: int, b: int) -> int:
    return int(MUL[a, b])


def gf_inv(a: int) -> int:
    if a == 0:
        raise ZeroDivisionError("0 has no inverse in GF(256)")
    return int(INV[a])


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """GF(256) product of (r x n) and (n x c) uint8 matrices."""
    if a.shape[1] == 0:
        return np.zeros((a.shape[0], b.shape[1]), dtype=np.uint8)
    return np.bitwise_xor.reduce(MUL[a[:, :, None], b[None, :, :]], axis=1)


def invert(mat: np.ndarray) -> np.ndarray:
    """Gauss-Jordan inverse over GF(256); raises ValueError if singular."""
    n = mat.shape[0]
    work = np.concatenate([mat.astype(np.uint8), np.eye(n, dtype=np.uint8)], axis=1)
    for col in range(n):
        nz = np.nonzero(work[col:, col])[0]
        if nz.size == 0:
            raise ValueError("matrix is singular over GF(256)")
        pivot = col + int(nz[0])
        if pivot != col:
            work[[col, pivot]] = work[[pivot, col]]
        work[col] = MUL[INV[work[col, col]], work[col]]
        factors = work[:, col].copy()
        factors[col] = 0
        rows = np.nonzero(factors)[0]
        if rows.size:
            work[rows] ^= MUL[factors[rows][:, None], work[col][None, :]]
    return work[:, n:]


@lru_cache(maxsize=256)
def encoding_matrix(k: int, m: int) -> np.ndarray:
    if not 1 <= k <= m <= 256:
        raise ValueError(f"need 1 <= k <= m <= 256, got k={k} m={m}")
    vdm = np.zeros((m, k), dtype=np.uint8)
    vdm[0, 0] = 1
    for row in range(m - 1):
        for col in range(k):
            vdm[row + 1, col] = EXP[(row * col) % 255]
    gen = matmul(vdm, invert(vdm[:k]))
    gen.setflags(write=False)
    return gen


def encode(data_blocks: list[bytes], m: int) -> list[bytes]:
    """Extend k equal-length blocks to m blocks; the first k are unchanged."""
    k = len(data_blocks)
    if k == 0:
        raise ValueError("at least one data block is required")
    size = len(data_blocks[0])
    if any(len(b) != size for b in data_blocks):
        raise ValueError("data blocks must share one length")
    data = np.frombuffer(b"".join(data_blocks), dtype=np.uint8).reshape(k, size)
    parity = matmul(encoding_matrix(k, m)[k:], data)
    return list(data_blocks) + [row.tobytes() for row in parity]


def decode(blocks: dict[int, bytes], k: int, m: int) -> list[bytes]:
    """Recover the k data blocks from any k (index -> block) entries."""
    chosen = sorted(blocks)[:k]
    if len(chosen) < k:
        raise ValueError(f"need {k} blocks, got {len(chosen)}")
    if chosen == list(range(k)):
        return [bytes(blocks[i]) for i in chosen]
    sub = encoding_matrix(k, m)[chosen]
    size = len(blocks[chosen[0]])
    received = np.frombuffer(b"".join(blocks[i] for i in chosen), dtype=np.uint8).reshape(k, size)
    data = matmul(invert(sub), received)
    return [row.tobytes() for row in data]
