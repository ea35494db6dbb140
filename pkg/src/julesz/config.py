"""Training configuration shared by the loss objectives and the trainers."""

from __future__ import annotations

from dataclasses import dataclass, fields


class ConfigError(ValueError):
    """A TrainConfig field violates its constraints."""


@dataclass
class TrainConfig:
    """Everything a training run needs besides the images themselves.

    temperature scales the style loss (objective contains style/temperature);
    diversity_weight is the coefficient on the mean log nearest-neighbor
    distance between generated batch elements; content_weight applies only to
    stylization.  grad_normalize rescales the style-loss gradient to unit L1
    norm where it leaves the filter bank and enters the generator.
    """

    temperature: float = 10.0
    diversity_weight: float = 0.0
    content_weight: float = 0.0
    batch_size: int = 8
    learning_rate: float = 0.05
    iterations: int = 200
    seed: int = 0
    norm: str = "in"
    grad_normalize: bool = True
    out_size: int = 32
    log_every: int = 10
    noise_dim: int = 32
    noise_channels: int = 2
    width: int = 16
    hidden: int = 64
    bank_seed: int = 0
    rho_floor: float = 1e-8
    norm_eps: float = 1e-5

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigError("temperature must be > 0")
        if self.diversity_weight < 0:
            raise ConfigError("diversity_weight must be >= 0")
        if self.content_weight < 0:
            raise ConfigError("content_weight must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.diversity_weight > 0 and self.batch_size < 2:
            raise ConfigError("diversity_weight > 0 requires batch_size >= 2")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.norm not in ("in", "bn", "none"):
            raise ConfigError(f"norm must be 'in', 'bn' or 'none', got {self.norm!r}")
        if self.log_every < 1:
            raise ConfigError("log_every must be >= 1")
        if self.rho_floor <= 0:
            raise ConfigError("rho_floor must be > 0")
        if self.norm_eps <= 0:
            raise ConfigError("norm_eps must be > 0")
        if self.noise_dim < 1:
            raise ConfigError("noise_dim must be >= 1")
        if self.noise_channels < 0:
            raise ConfigError("noise_channels must be >= 0")

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]
