# sparkppr/utils/crc.py
"""
CRC-16/CCITT-FALSE (полином 0x1021, начальное значение 0xFFFF, без отражения
и без финального XOR) над байтовой сериализацией пакета, и двоичный формат
кадра для дампа пакетов.
"""
import binascii
import logging
import struct
from typing import Iterable, List, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

CRC_INIT = 0xFFFF
FRAME_HEADER = struct.Struct(">IH")
FRAME_CRC = struct.Struct(">H")


class RelayError(Exception):
    """Ошибка сериализации пакетов или разбора дампа."""
    def __init__(self, message="Relay data path error", details=None):
        self.message = message
        self.details = details
        super().__init__(self.message)


def serialize_payload(payload: Sequence[int], q: int, packed: bool = False) -> bytes:
    """
    Один байт на символ при q <= 256. Для q=2 с packed=True биты упаковываются
    по 8 в байт (старший бит первый), хвост дополняется нулями.
    """
    if q > 256:
        raise RelayError(f"Byte serialization supports q <= 256, got q={q}")
    symbols = np.asarray(payload, dtype=np.int64)
    if symbols.size and (symbols.min() < 0 or symbols.max() >= q):
        raise RelayError(f"Payload has symbols outside F_{q}")
    if packed:
        if q != 2:
            raise RelayError("Packed-bit serialization is only defined for q=2")
        return np.packbits(symbols.astype(np.uint8)).tobytes()
    return symbols.astype(np.uint8).tobytes()


def deserialize_payload(data: bytes, q: int, length: int, packed: bool = False) -> np.ndarray:
    raw = np.frombuffer(data, dtype=np.uint8)
    if packed:
        symbols = np.unpackbits(raw)[:length]
    else:
        symbols = raw
    if symbols.size != length:
        raise RelayError(f"Payload holds {symbols.size} symbols, expected {length}")
    if symbols.size and int(symbols.max()) >= q:
        raise RelayError(f"Payload has symbols outside F_{q}")
    return symbols.astype(np.int64)


def crc16_bytes(data: bytes) -> int:
    return binascii.crc_hqx(data, CRC_INIT)


def crc_compute(payload: Sequence[int], q: int, packed: bool = False) -> int:
    """CRC-16/CCITT-FALSE над сериализацией символов payload."""
    return crc16_bytes(serialize_payload(payload, q, packed))


def crc_check(payload: Sequence[int], crc: int, q: int, packed: bool = False) -> bool:
    return crc_compute(payload, q, packed) == crc


# --- Формат кадра ---
# 4 байта индекс (big-endian), 2 байта длина полезной нагрузки в байтах,
# полезная нагрузка, 2 байта CRC

def encode_frame(index: int, payload_bytes: bytes, crc: int) -> bytes:
    if len(payload_bytes) > 0xFFFF:
        raise RelayError(f"Payload of {len(payload_bytes)} bytes does not fit the 2-byte length field")
    return FRAME_HEADER.pack(index, len(payload_bytes)) + payload_bytes + FRAME_CRC.pack(crc)


def decode_frames(data: bytes) -> List[Tuple[int, bytes, int]]:
    frames = []
    offset = 0
    while offset < len(data):
        if offset + FRAME_HEADER.size > len(data):
            raise RelayError(f"Truncated frame header at byte {offset}")
        index, length = FRAME_HEADER.unpack_from(data, offset)
        offset += FRAME_HEADER.size
        end = offset + length + FRAME_CRC.size
        if end > len(data):
            raise RelayError(f"Frame {index} is truncated at byte {offset}")
        payload = data[offset:offset + length]
        (crc,) = FRAME_CRC.unpack_from(data, offset + length)
        frames.append((index, payload, crc))
        offset = end
    return frames


def encode_frames(frames: Iterable[Tuple[int, bytes, int]]) -> bytes:
    return b"".join(encode_frame(index, payload, crc) for index, payload, crc in frames)
