"""Sealing WiFi credentials and spreading them over 7-byte erasure-coded blocks.

A round of provisioning transmits one :class:`SealedMessage`::

    iv (16) || global_seq (8, big endian) || ciphertext || mac (32)

The ciphertext is AES-128-CBC over a length-prefixed ssid/password pair and
the mac is HMAC-SHA256 over ``iv || ciphertext || global_seq``.  The sealed
bytes are then framed with a 2-byte length, zero padded to ``k * 7`` bytes and
extended to ``m`` blocks, of which any ``k`` suffice.
"""

from __future__ import annotations

import hashlib
import hmac
import math
import os
import struct
from dataclasses import dataclass
from fractions import Fraction
from typing import Protocol, Sequence

from cryptography.hazmat.primitives import padding
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from . import erasure
from .covert_frame import CHUNK_SIZE, MAX_TOTAL
from .errors import (
    AuthFailure,
    CorruptLengthPrefix,
    CorruptPadding,
    CredentialsTooLong,
    InsufficientBlocks,
    MalformedMessage,
    MalformedPlaintext,
    MessageTooLarge,
    ReplayDetected,
)

IV_SIZE = 16
SEQ_SIZE = 8
MAC_SIZE = 32
AES_BLOCK = 16
LENGTH_PREFIX = 2
MAX_SSID = 32
MAX_PASSWORD = 63
MAX_SERIALIZED = 1 + MAX_SSID + 1 + MAX_PASSWORD


class RandomSource(Protocol):
    def randbytes(self, n: int) -> bytes: ...


class _OsRandom:
    def randbytes(self, n: int) -> bytes:
        return os.urandom(n)


@dataclass(frozen=True)
class Credentials:
    ssid: bytes
    password: bytes

    def __post_init__(self):
        if isinstance(self.ssid, str):
            object.__setattr__(self, "ssid", self.ssid.encode())
        if isinstance(self.password, str):
            object.__setattr__(self, "password", self.password.encode())

    def validate(self) -> None:
        if not self.ssid:
            raise ValueError("ssid must not be empty")
        if len(self.ssid) > MAX_SSID or len(self.password) > MAX_PASSWORD:
            raise CredentialsTooLong(
                f"ssid {len(self.ssid)}/{MAX_SSID} bytes, password {len(self.password)}/{MAX_PASSWORD} bytes"
            )

    def to_bytes(self) -> bytes:
        self.validate()
        return bytes([len(self.ssid)]) + self.ssid + bytes([len(self.password)]) + self.password

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Credentials":
        try:
            n = raw[0]
            ssid = raw[1 : 1 + n]
            p = raw[1 + n]
            password = raw[2 + n : 2 + n + p]
        except IndexError:
            raise MalformedPlaintext("truncated credential encoding") from None
        if len(ssid) != n or len(password) != p or 2 + n + p != len(raw) or n == 0:
            raise MalformedPlaintext("credential length prefixes do not match plaintext")
        return cls(ssid, password)


@dataclass(frozen=True)
class KeyPair:
    enc_key: bytes
    mac_key: bytes

    def __post_init__(self):
        if len(self.enc_key) != 16:
            raise ValueError("enc_key must be 16 bytes (AES-128)")
        if len(self.mac_key) != 32:
            raise ValueError("mac_key must be 32 bytes")

    @classmethod
    def from_hex(cls, enc_hex: str, mac_hex: str) -> "KeyPair":
        return cls(bytes.fromhex(enc_hex), bytes.fromhex(mac_hex))

    @classmethod
    def derive(cls, secret: bytes) -> "KeyPair":
        """Deterministic test/simulation keys; real deployments pre-load random keys."""
        return cls(
            hashlib.sha256(b"enc:" + secret).digest()[:16],
            hashlib.sha256(b"mac:" + secret).digest(),
        )


@dataclass(frozen=True)
class SealedMessage:
    iv: bytes
    global_seq: int
    ciphertext: bytes
    mac: bytes

    def to_bytes(self) -> bytes:
        return self.iv + struct.pack(">Q", self.global_seq) + self.ciphertext + self.mac

    @classmethod
    def from_bytes(cls, raw: bytes) -> "SealedMessage":
        ct_len = len(raw) - IV_SIZE - SEQ_SIZE - MAC_SIZE
        if ct_len <= 0 or ct_len % AES_BLOCK:
            raise MalformedMessage(f"{len(raw)} bytes is not a sealed-message length")
        (seq,) = struct.unpack_from(">Q", raw, IV_SIZE)
        body = IV_SIZE + SEQ_SIZE
        return cls(raw[:IV_SIZE], seq, raw[body : body + ct_len], raw[body + ct_len :])

    def __len__(self) -> int:
        return IV_SIZE + SEQ_SIZE + len(self.ciphertext) + MAC_SIZE


def _mac(keys: KeyPair, iv: bytes, ciphertext: bytes, global_seq: int) -> bytes:
    return hmac.new(keys.mac_key, iv + ciphertext + struct.pack(">Q", global_seq), hashlib.sha256).digest()


def seal(creds: Credentials, keys: KeyPair, now_epoch_seconds: int, rng: RandomSource | None = None) -> SealedMessage:
    plaintext = creds.to_bytes()
    if not 0 <= now_epoch_seconds < 2**64:
        raise ValueError("global sequence must fit in 64 unsigned bits")
    iv = (rng or _OsRandom()).randbytes(IV_SIZE)
    padder = padding.PKCS7(128).padder()
    padded = padder.update(plaintext) + padder.finalize()
    enc = Cipher(algorithms.AES(keys.enc_key), modes.CBC(iv)).encryptor()
    ciphertext = enc.update(padded) + enc.finalize()
    return SealedMessage(iv, now_epoch_seconds, ciphertext, _mac(keys, iv, ciphertext, now_epoch_seconds))


def unseal(msg: SealedMessage, keys: KeyPair, last_seq: int) -> Credentials:
    """Verify and decrypt; the caller then raises its replay floor to ``msg.global_seq``."""
    expected = _mac(keys, msg.iv, msg.ciphertext, msg.global_seq)
    if not hmac.compare_digest(expected, msg.mac):
        raise AuthFailure("message authentication code mismatch")
    if msg.global_seq <= last_seq:
        raise ReplayDetected(f"global sequence {msg.global_seq} <= {last_seq}")
    dec = Cipher(algorithms.AES(keys.enc_key), modes.CBC(msg.iv)).decryptor()
    padded = dec.update(msg.ciphertext) + dec.finalize()
    unpadder = padding.PKCS7(128).unpadder()
    try:
        plaintext = unpadder.update(padded) + unpadder.finalize()
    except ValueError:
        raise MalformedPlaintext("bad PKCS#7 padding") from None
    return Credentials.from_bytes(plaintext)


@dataclass(frozen=True)
class LossTable:
    values: tuple[float, float, float, float] = (0.6, 0.7, 0.8, 0.9)

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if len(vals) != 4:
            raise ValueError("loss table must have exactly 4 entries")
        if any(not 0 < v < 1 for v in vals):
            raise ValueError("loss fractions must lie strictly between 0 and 1")
        if any(a >= b for a, b in zip(vals, vals[1:])):
            raise ValueError("loss fractions must be strictly increasing")

    def __getitem__(self, i: int) -> float:
        return self.values[i]

    def __len__(self) -> int:
        return 4


DEFAULT_LOSS_TABLE = LossTable()


@dataclass(frozen=True)
class FecParams:
    k: int
    m: int
    loss_index: int

    @property
    def capacity(self) -> int:
        """Largest message that fits in k blocks next to the length prefix."""
        return self.k * CHUNK_SIZE - LENGTH_PREFIX


def blocks_needed(m: int, loss: float) -> int:
    """k = ceil((1 - loss) * m), computed exactly (0.7 must not become 0.30000000000000004)."""
    return math.ceil((1 - Fraction(str(loss))) * m)


def fec_params(msg_len: int, loss_index: int, table: LossTable = DEFAULT_LOSS_TABLE) -> FecParams:
    if msg_len < 1:
        raise ValueError("message must be at least one byte")
    loss = table[loss_index]
    for m in range(2, MAX_TOTAL + 1, 2):
        k = blocks_needed(m, loss)
        if k * CHUNK_SIZE >= msg_len + LENGTH_PREFIX:
            return FecParams(k=k, m=m, loss_index=loss_index)
    raise MessageTooLarge(f"{msg_len} bytes cannot be sent in {MAX_TOTAL} packets at {loss:.0%} tolerated loss")


def params_for(m: int, loss_index: int, table: LossTable = DEFAULT_LOSS_TABLE) -> FecParams:
    """Receiver side: rebuild the parameters from the header's total and index."""
    return FecParams(k=max(1, blocks_needed(m, table[loss_index])), m=m, loss_index=loss_index)


def encode_blocks(msg: bytes, p: FecParams) -> list[bytes]:
    if len(msg) > p.capacity:
        raise MessageTooLarge(f"{len(msg)} bytes exceeds capacity {p.capacity} of k={p.k}")
    framed = struct.pack(">H", len(msg)) + msg
    framed += b"\x00" * (p.k * CHUNK_SIZE - len(framed))
    data = [framed[i * CHUNK_SIZE : (i + 1) * CHUNK_SIZE] for i in range(p.k)]
    return erasure.encode(data, p.m)


def decode_blocks(blocks: Sequence[tuple[int, bytes]] | dict[int, bytes], p: FecParams) -> bytes:
    items = blocks.items() if isinstance(blocks, dict) else blocks
    distinct: dict[int, bytes] = {}
    for index, chunk in items:
        if not 0 <= index < p.m:
            raise ValueError(f"block index {index} outside 0..{p.m - 1}")
        if len(chunk) != CHUNK_SIZE:
            raise ValueError(f"block {index} is {len(chunk)} bytes, expected {CHUNK_SIZE}")
        distinct.setdefault(index, bytes(chunk))
    if len(distinct) < p.k:
        raise InsufficientBlocks(f"have {len(distinct)} distinct blocks, need {p.k}")
    framed = b"".join(erasure.decode(distinct, p.k, p.m))
    (length,) = struct.unpack_from(">H", framed)
    if length > p.capacity:
        raise CorruptLengthPrefix(f"length prefix {length} exceeds capacity {p.capacity}")
    if any(framed[LENGTH_PREFIX + length :]):
        raise CorruptPadding("non-zero bytes after the message")
    return framed[LENGTH_PREFIX : LENGTH_PREFIX + length]
