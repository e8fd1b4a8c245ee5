import math

from pydantic import BaseModel, ConfigDict, model_validator

from utils.errors import ConfigError


class LossWeights(BaseModel):
    """λ_Q·(L_V + L_H + L_C) + λ_S·L_SSD + λ_D·L_Dice + λ_B·L_Bend, β inside each quantization loss."""
    model_config = ConfigDict(extra="forbid")

    lambda_Q: float = 0.01
    lambda_S: float = 1.0
    lambda_D: float = 1.0
    lambda_B: float = 10.0
    beta: float = 0.25

    @model_validator(mode="after")
    def _check(self):
        self.ensure_valid(ValueError)
        return self

    def ensure_valid(self, error=ConfigError):
        for name, value in self.model_dump().items():
            if not math.isfinite(value) or value < 0:
                raise error(f"loss weight {name}={value} must be finite and non-negative")

    @classmethod
    def full(cls) -> "LossWeights":
        return cls(lambda_Q=1.0, lambda_S=1.0, lambda_D=1.0, lambda_B=50.0, beta=0.25)

    @classmethod
    def desk(cls) -> "LossWeights":
        return cls()
