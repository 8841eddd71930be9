# tests/conftest.py
import numpy as np
import pytest

from sparkppr.services.code import SystematicCode
from sparkppr.services.fqlinalg import FieldSpec, FqMatrix


@pytest.fixture
def gf2() -> FieldSpec:
    return FieldSpec(2)


@pytest.fixture
def gf3() -> FieldSpec:
    return FieldSpec(3)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture
def example_matrix(gf2) -> FqMatrix:
    """4×4 матрица над F_2: spark 3, зависимы столбцы 1, 2 и 4."""
    return FqMatrix.from_rows(gf2, [
        [1, 1, 1, 0],
        [1, 0, 1, 1],
        [0, 0, 1, 0],
        [0, 0, 0, 0],
    ])


@pytest.fixture
def hamming_code(gf2) -> SystematicCode:
    """Систематический [7,4] код Хэмминга: минимальное расстояние 3."""
    P = FqMatrix.from_rows(gf2, [
        [1, 1, 0, 1],
        [1, 0, 1, 1],
        [0, 1, 1, 1],
    ])
    return SystematicCode.from_p(P)


def crc16_ccitt_reference(data: bytes) -> int:
    """Табличная CRC-16/CCITT-FALSE, независимая от binascii."""
    table = []
    for byte in range(256):
        crc = byte << 8
        for _ in range(8):
            crc = ((crc << 1) ^ 0x1021) if crc & 0x8000 else (crc << 1)
        table.append(crc & 0xFFFF)
    crc = 0xFFFF
    for byte in data:
        crc = ((crc << 8) & 0xFFFF) ^ table[((crc >> 8) ^ byte) & 0xFF]
    return crc


@pytest.fixture
def crc_reference():
    return crc16_ccitt_reference
