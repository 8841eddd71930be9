# sparkppr/services/relay.py
"""
Тракт передачи: кадрирование с CRC, широковещательная рассылка M дронам по каналам
со стиранием, внесение ошибок в испорченные копии и выбор копии на наземной станции.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np

from sparkppr.models.channel import ChannelParams
from sparkppr.services.fqlinalg import FieldSpec, FqMatrix
from sparkppr.utils.crc import (
    RelayError,
    crc_check,
    crc_compute,
    decode_frames,
    deserialize_payload,
    encode_frames,
    serialize_payload,
)

logger = logging.getLogger(__name__)

__all__ = [
    "CrcSpec", "FramedPacket", "Delivery", "RelayError",
    "frame", "transmit", "inject_errors", "deliver",
    "write_packet_dump", "read_packet_dump",
]


@dataclass(frozen=True)
class CrcSpec:
    """Параметры CRC: поле символов и способ сериализации (байт на символ или упакованные биты)."""
    q: int
    packed: bool = False

    def __post_init__(self):
        if self.q > 256:
            raise RelayError(f"CRC framing supports q <= 256, got q={self.q}")
        if self.packed and self.q != 2:
            raise RelayError("Packed-bit CRC serialization is only defined for q=2")

    def compute(self, payload: Sequence[int]) -> int:
        return crc_compute(payload, self.q, self.packed)

    def check(self, payload: Sequence[int], crc: int) -> bool:
        return crc_check(payload, crc, self.q, self.packed)


@dataclass(frozen=True)
class FramedPacket:
    index: int
    payload: np.ndarray
    crc: int
    # Только для симуляции: копия не искажена
    clean: bool = True


@dataclass(frozen=True)
class Delivery:
    """Пакеты, выбранные наземной станцией: Y, R (прошли CRC), R̄ (не прошли)."""
    Y: FqMatrix
    R: Tuple[int, ...]
    Rbar: Tuple[int, ...]
    crcs: Tuple[int, ...]
    packets: Tuple[FramedPacket, ...]
    # Искажённые копии, прошедшие CRC (попали в R)
    false_accepts: Tuple[int, ...] = field(default=())


def frame(x: FqMatrix, crc_spec: CrcSpec) -> List[FramedPacket]:
    """CRC считается по каждой строке X и добавляется к пакету."""
    return [FramedPacket(n, x.data[n].copy(), crc_spec.compute(x.data[n])) for n in range(x.rows)]


def inject_errors(x: np.ndarray, p_s: float, rng: np.random.Generator, field_spec: FieldSpec) -> np.ndarray:
    """
    y = x + e: каждый символ искажается независимо с вероятностью p_s, ненулевое
    значение ошибки равновероятно из F_q∖{0}. Маска перетягивается, пока хотя бы
    один символ не искажён.
    """
    if not 0.0 < p_s <= 1.0:
        raise RelayError(f"Symbol error probability must be in (0, 1], got {p_s}")
    x = np.asarray(x, dtype=np.int64)
    if x.size == 0:
        raise RelayError("Cannot corrupt an empty payload")
    mask = rng.random(x.size) < p_s
    while not mask.any():
        mask = rng.random(x.size) < p_s
    q = field_spec.q
    if q == 2:
        return x ^ mask.astype(np.int64)
    errors = rng.integers(1, q, size=x.size)
    return (x + np.where(mask, errors, 0)) % q


def transmit(
    packets: Sequence[FramedPacket],
    params: ChannelParams,
    rng: np.random.Generator,
    field_spec: FieldSpec,
) -> List[List[FramedPacket]]:
    """
    Буферы дронов: buffers[m][n]. С вероятностью 1 − ε_m дрон хранит чистую копию,
    иначе копию с ошибками; CRC копии остаётся исходным (его считал источник).
    """
    erased = rng.random((len(packets), params.M)) < np.asarray(params.epsilons)
    buffers: List[List[FramedPacket]] = [[] for _ in range(params.M)]
    for n, packet in enumerate(packets):
        for m in range(params.M):
            if erased[n, m]:
                corrupted = inject_errors(packet.payload, params.symbol_error_prob, rng, field_spec)
                buffers[m].append(FramedPacket(packet.index, corrupted, packet.crc, clean=False))
            else:
                buffers[m].append(packet)
    return buffers


def deliver(buffers: Sequence[Sequence[FramedPacket]], rng: np.random.Generator, crc_spec: CrcSpec) -> Delivery:
    """
    Для каждого n берётся первая (в порядке дронов) копия, прошедшая CRC; если таких
    нет, одна из M испорченных копий выбирается равновероятно.
    """
    if not buffers:
        raise RelayError("No drone buffers to deliver from")
    n_packets = len(buffers[0])
    if any(len(b) != n_packets for b in buffers):
        raise RelayError("Every drone must hold a copy of every packet")
    chosen: List[FramedPacket] = []
    R: List[int] = []
    Rbar: List[int] = []
    false_accepts: List[int] = []
    for n in range(n_packets):
        copies = [b[n] for b in buffers]
        passing = next((c for c in copies if crc_spec.check(c.payload, c.crc)), None)
        if passing is not None:
            chosen.append(passing)
            R.append(n)
            if not passing.clean:
                false_accepts.append(n)
                logger.warning(f"CRC false accept on packet {n}")
        else:
            chosen.append(copies[int(rng.integers(0, len(copies)))])
            Rbar.append(n)
    Y = FqMatrix(FieldSpec(crc_spec.q), np.stack([c.payload for c in chosen]))
    return Delivery(
        Y=Y,
        R=tuple(R),
        Rbar=tuple(Rbar),
        crcs=tuple(c.crc for c in chosen),
        packets=tuple(chosen),
        false_accepts=tuple(false_accepts),
    )


# --- Дамп пакетов ---

def write_packet_dump(path: Union[str, Path], packets: Sequence[FramedPacket], crc_spec: CrcSpec) -> Path:
    path = Path(path)
    frames = [(p.index, serialize_payload(p.payload, crc_spec.q, crc_spec.packed), p.crc) for p in packets]
    path.write_bytes(encode_frames(frames))
    logger.info(f"Packet dump with {len(frames)} frames written to {path}")
    return path


def read_packet_dump(path: Union[str, Path], crc_spec: CrcSpec, L: int) -> List[FramedPacket]:
    """Читает кадры; флаг clean восстанавливается по проверке CRC."""
    path = Path(path)
    if not path.is_file():
        raise RelayError(f"Packet dump not found: {path}")
    packets = []
    for index, data, crc in decode_frames(path.read_bytes()):
        payload = deserialize_payload(data, crc_spec.q, L, crc_spec.packed)
        packets.append(FramedPacket(index, payload, crc, clean=crc_spec.check(payload, crc)))
    return packets
