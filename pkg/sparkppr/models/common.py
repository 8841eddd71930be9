# sparkppr/models/common.py
from enum import Enum
from fractions import Fraction


class Scheme(str, Enum):
    """Способ выбора матрицы P."""
    RLC = "RLC"
    MSLC = "MSLC"
    OSPRLC = "OSPRLC"


class Decoder(str, Enum):
    PLAIN = "plain"
    WITH_SD = "with_SD"


def fraction_to_str(value: Fraction) -> str:
    return f"{value.numerator}/{value.denominator}"


def fraction_from_str(text: str) -> Fraction:
    # Fraction("13/24") разбирает ровно формат num/den
    return Fraction(text.strip())
