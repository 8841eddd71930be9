# sparkppr/models/catalog.py
from fractions import Fraction
from typing import Dict, List, Literal, Optional, Union

from pydantic import BaseModel, Field, field_validator, model_validator

from sparkppr.models.common import Scheme, fraction_from_str, fraction_to_str


class MatrixRecord(BaseModel):
    """Одна матрица P из набора Q^(ε): строки, spark(H^T) и доли элементов."""
    rows: List[str] = Field(..., min_length=1)
    spark: Union[int, Literal["unbounded"]]
    poe: Dict[str, str]

    @field_validator("poe")
    @classmethod
    def check_rationals(cls, value: Dict[str, str]) -> Dict[str, str]:
        for delta, text in value.items():
            if not delta.isdigit():
                raise ValueError(f"PoE key {delta!r} is not a field element")
            if "/" not in text:
                raise ValueError(f"PoE value {text!r} must be written as num/den")
            fraction_from_str(text)
        return value

    def entries(self) -> List[List[int]]:
        return [[int(x) for x in row.split()] for row in self.rows]

    def poe_fractions(self) -> Dict[int, Fraction]:
        return {int(delta): fraction_from_str(text) for delta, text in self.poe.items()}

    @classmethod
    def build(cls, rows: List[List[int]], spark: Optional[int], poe: Dict[int, Fraction]) -> "MatrixRecord":
        return cls(
            rows=[" ".join(str(int(x)) for x in row) for row in rows],
            spark="unbounded" if spark is None else int(spark),
            poe={str(delta): fraction_to_str(poe[delta]) for delta in sorted(poe)},
        )


class CatalogEntry(BaseModel):
    """Набор Q^(ε) для одной схемы и одной избыточности ε = N − K."""
    q: int = Field(..., ge=2)
    K: int = Field(..., ge=1)
    scheme: Scheme
    epsilon: int = Field(..., ge=1)
    seed: int
    budget: int = Field(..., ge=1)
    matrices: List[MatrixRecord] = Field(..., min_length=1)

    @model_validator(mode="after")
    def check_shapes(self) -> "CatalogEntry":
        if self.scheme == Scheme.RLC:
            raise ValueError("RLC draws P at random and has no catalog entries")
        if self.scheme == Scheme.MSLC and len(self.matrices) != 1:
            raise ValueError(f"MSLC entry for epsilon={self.epsilon} must hold exactly one matrix")
        for index, record in enumerate(self.matrices):
            rows = record.entries()
            if len(rows) != self.epsilon or any(len(r) != self.K for r in rows):
                raise ValueError(
                    f"matrix {index} of {self.entry_id} is not {self.epsilon}x{self.K}"
                )
        return self

    @property
    def entry_id(self) -> str:
        return f"{self.scheme.value}/{self.epsilon}"


class Catalog(BaseModel):
    """Все наборы Q^(ε) для поля F_q и числа исходных пакетов K."""
    q: int = Field(..., ge=2)
    K: int = Field(..., ge=1)
    entries: List[CatalogEntry] = []

    @model_validator(mode="after")
    def check_entries(self) -> "Catalog":
        seen = set()
        for entry in self.entries:
            if entry.q != self.q or entry.K != self.K:
                raise ValueError(f"entry {entry.entry_id} has (q, K) = ({entry.q}, {entry.K}), catalog has ({self.q}, {self.K})")
            key = (entry.scheme, entry.epsilon)
            if key in seen:
                raise ValueError(f"duplicate entry {entry.entry_id}")
            seen.add(key)
        # Для каждой схемы ε должны покрывать 1..ε_max без пропусков
        for scheme in {e.scheme for e in self.entries}:
            eps = sorted(e.epsilon for e in self.entries if e.scheme == scheme)
            if eps != list(range(1, len(eps) + 1)):
                raise ValueError(f"{scheme.value} entries must cover epsilon 1..{max(eps)} contiguously, got {eps}")
        return self

    def find(self, scheme: Scheme, epsilon: int) -> Optional[CatalogEntry]:
        for entry in self.entries:
            if entry.scheme == scheme and entry.epsilon == epsilon:
                return entry
        return None

    def schemes(self) -> List[Scheme]:
        return sorted({e.scheme for e in self.entries}, key=lambda s: s.value)

    def max_epsilon(self, scheme: Scheme) -> int:
        return max((e.epsilon for e in self.entries if e.scheme == scheme), default=0)
