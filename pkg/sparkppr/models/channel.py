# sparkppr/models/channel.py
from typing import List

from pydantic import BaseModel, Field, computed_field, field_validator, model_validator

from sparkppr.core.config import settings


class ChannelParams(BaseModel):
    """Параметры ретрансляции: M дронов, вероятность ошибочной копии ε_m на каждом, ошибки внутри пакета."""
    M: int = Field(..., ge=1)
    epsilons: List[float] = Field(..., min_length=1)
    symbol_error_prob: float = Field(default_factory=lambda: settings.DEFAULT_SYMBOL_ERROR_PROB, gt=0.0, le=1.0)
    L: int = Field(default_factory=lambda: settings.DEFAULT_PAYLOAD_SYMBOLS, ge=1)

    @field_validator("epsilons")
    @classmethod
    def check_probabilities(cls, value: List[float]) -> List[float]:
        for eps in value:
            if not 0.0 <= eps <= 1.0:
                raise ValueError(f"erasure probability {eps} is outside [0, 1]")
        return value

    @model_validator(mode="after")
    def check_drone_count(self) -> "ChannelParams":
        if len(self.epsilons) != self.M:
            raise ValueError(f"expected {self.M} erasure probabilities, got {len(self.epsilons)}")
        return self

    @computed_field(return_type=float)
    @property
    def corruption_prob(self) -> float:
        """Вероятность того, что ни один дрон не принёс чистую копию: ∏ ε_m."""
        p = 1.0
        for eps in self.epsilons:
            p *= eps
        return p
