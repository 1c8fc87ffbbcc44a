"""Bit-exact packing of the provisioning header and payload into MAC addresses.

An empty Ethernet frame carries 12 usable address bytes.  The source address
holds a 3-byte header followed by 3 payload bytes; the destination address is
an IPv6 multicast address (``33:33:xx:xx:xx:xx``) carrying the other 4 payload
bytes, so every frame moves exactly 7 bytes of sealed data.

Header layout, MSB first across the 24 bits::

    byte0  | id (6) | U/L=1 | I/G=0 |
    byte1  | flag (1) | fec_index (2) | total/2 high 5 bits |
    byte2  | total/2 low bit | seq (7) |

The U/L and I/G flags are the two least significant bits of the first octet,
so every source address is a locally administered unicast address.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import InvalidHeader, NotOurs

HEADER_SIZE = 3
CHUNK_SIZE = 7
MAX_ID = 63
MAX_TOTAL = 126
MAX_SEQ = 127
IPV6_MCAST_PREFIX = b"\x33\x33"

_ADDR_FLAG_MASK = 0b11
_ADDR_FLAGS = 0b10  # locally administered, unicast


@dataclass(frozen=True)
class FrameHeader:
    id: int
    flag: int
    fec_index: int
    total: int
    seq: int

    def validate(self) -> None:
        if not 0 <= self.id <= MAX_ID:
            raise InvalidHeader(f"id {self.id} outside 0..{MAX_ID}")
        if self.flag not in (0, 1):
            raise InvalidHeader(f"flag must be a bit, got {self.flag}")
        if not 0 <= self.fec_index < 4:
            raise InvalidHeader(f"fec_index {self.fec_index} outside 0..3")
        if not 2 <= self.total <= MAX_TOTAL:
            raise InvalidHeader(f"total {self.total} outside 2..{MAX_TOTAL}")
        if self.total % 2:
            raise InvalidHeader(f"total {self.total} is odd")
        if not 0 <= self.seq < self.total:
            raise InvalidHeader(f"seq {self.seq} not below total {self.total}")

    @property
    def is_valid(self) -> bool:
        try:
            self.validate()
        except InvalidHeader:
            return False
        return True


@dataclass(frozen=True)
class CovertFrame:
    src_addr: bytes
    dst_addr: bytes

    def __post_init__(self):
        if len(self.src_addr) != 6 or len(self.dst_addr) != 6:
            raise ValueError("MAC addresses are 6 bytes")

    def to_bytes(self) -> bytes:
        return self.src_addr + self.dst_addr

    @classmethod
    def from_bytes(cls, raw: bytes) -> "CovertFrame":
        if len(raw) != 12:
            raise ValueError(f"expected 12 bytes, got {len(raw)}")
        return cls(bytes(raw[:6]), bytes(raw[6:]))

    def hexdump(self) -> str:
        """``aa:bb:cc:dd:ee:ff->33:33:..`` debug rendering."""
        return f"{self.src_addr.hex(':')}->{self.dst_addr.hex(':')}"

    @classmethod
    def from_hexdump(cls, text: str) -> "CovertFrame":
        src, dst = text.strip().split("->")
        return cls(bytes.fromhex(src.replace(":", "")), bytes.fromhex(dst.replace(":", "")))


def pack_header(h: FrameHeader) -> bytes:
    h.validate()
    half = h.total >> 1
    return bytes(
        (
            (h.id << 2) | _ADDR_FLAGS,
            (h.flag << 7) | (h.fec_index << 5) | (half >> 1),
            ((half & 1) << 7) | h.seq,
        )
    )


def unpack_header(b: bytes) -> FrameHeader:
    """Decode 3 header bytes.

    Only the address-flag bits are checked; field ranges are not, so a
    listener can decode arbitrary traffic and apply its own filters.
    """
    if len(b) != HEADER_SIZE:
        raise ValueError(f"header is {HEADER_SIZE} bytes, got {len(b)}")
    b0, b1, b2 = b
    if b0 & _ADDR_FLAG_MASK != _ADDR_FLAGS:
        raise NotOurs(f"address flag bits {b0 & _ADDR_FLAG_MASK:02b}")
    half = ((b1 & 0x1F) << 1) | (b2 >> 7)
    return FrameHeader(
        id=b0 >> 2,
        flag=b1 >> 7,
        fec_index=(b1 >> 5) & 0b11,
        total=half * 2,
        seq=b2 & 0x7F,
    )


def build_frame(header3: bytes, chunk: bytes) -> CovertFrame:
    if len(header3) != HEADER_SIZE:
        raise ValueError("header must be 3 bytes")
    if len(chunk) != CHUNK_SIZE:
        raise ValueError(f"payload chunk must be {CHUNK_SIZE} bytes, got {len(chunk)}")
    return CovertFrame(bytes(header3) + chunk[:3], IPV6_MCAST_PREFIX + chunk[3:])


def parse_frame(f: CovertFrame, expected_id: int) -> tuple[FrameHeader, bytes] | None:
    """Return ``(header, chunk)`` for our frames addressed to ``expected_id``.

    Anything else yields None: a monitor-mode listener sees unrelated traffic
    all the time, so a mismatch is a filter result, not an error.
    """
    if f.dst_addr[:2] != IPV6_MCAST_PREFIX:
        return None
    try:
        header = unpack_header(f.src_addr[:3])
    except NotOurs:
        return None
    if header.id != expected_id:
        return None
    return header, f.src_addr[3:] + f.dst_addr[2:]
