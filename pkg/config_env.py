"""
Environment-based Configuration
Runtime settings per environment plus the flat key=value training config
"""

import dataclasses
import os
import typing
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence

from dotenv import load_dotenv

load_dotenv()


class Config:
    """Base configuration"""
    # Paths
    DATA_PATH = "data/train.jsonl"
    CHECKPOINT_PATH = "checkpoints/model.ckpt"
    TRACE_PATH = "captions.jsonl"

    # Metric constants
    ROUGE_BETA = 1.2
    BLEU_EPSILON = 1e-9

    LOG_LEVEL = os.getenv("CAPTIONER_LOG_LEVEL", "")

    @classmethod
    def to_dict(cls) -> Dict[str, Any]:
        """Convert config to dictionary"""
        return {
            key: getattr(cls, key) for key in dir(cls)
            if not key.startswith('_') and key.isupper()
        }


class DevelopmentConfig(Config):
    """Development environment settings"""
    DEBUG = True
    LOG_LEVEL = Config.LOG_LEVEL or "DEBUG"


class ProductionConfig(Config):
    """Production environment settings"""
    DEBUG = False
    LOG_LEVEL = Config.LOG_LEVEL or "INFO"


def get_config() -> Config:
    """
    Get configuration based on environment

    Checks CAPTIONER_ENV or ENV variable:
    - 'production' → ProductionConfig
    - 'development' or missing → DevelopmentConfig
    """
    env = os.getenv("CAPTIONER_ENV") or os.getenv("ENV", "development")

    if env == "production":
        return ProductionConfig()
    return DevelopmentConfig()


# Global config instance
config = get_config()


ARCHITECTURES = ("dual_attention", "deep_lstm_baseline", "attention_baseline")
UNLINK_MODES = ("zero_context", "no_text_attention")


@dataclass
class TrainingConfig:
    """Hyperparameters and run control for both training steps"""
    lr: float = 1e-5
    batch_size: int = 64
    lambda_: float = 0.3
    gate_threshold: float = 1.9
    max_len: int = 20
    dropout: float = 0.5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: Optional[float] = 5.0
    seed: int = 0

    # model shape
    hidden: int = 512
    enc_hidden: Optional[int] = None
    architecture: str = "dual_attention"
    link_attentions: bool = True
    unlink_mode: str = "zero_context"
    per_dim_gate: bool = False
    init_scale: float = 0.08

    # decoding
    beam_width: int = 5
    length_normalize: bool = False

    # run control
    max_epochs: int = 50
    max_steps: Optional[int] = None
    patience: int = 5
    step2_epochs: int = 10
    regate_every_epoch: bool = True
    num_workers: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        from error_handling import ConfigError

        if not 0.0 <= self.lambda_ <= 1.0:
            raise ConfigError(f"lambda must lie in [0, 1], got {self.lambda_}")
        if not 0.0 <= self.gate_threshold <= 2.0:
            raise ConfigError(f"gate_threshold must lie in [0, 2], got {self.gate_threshold}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        for name in ("batch_size", "max_len", "hidden", "beam_width", "num_workers", "max_epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigError(f"clip_norm must be positive or none, got {self.clip_norm}")
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.architecture!r}; expected one of {ARCHITECTURES}")
        if self.unlink_mode not in UNLINK_MODES:
            raise ConfigError(f"unknown unlink_mode {self.unlink_mode!r}; expected one of {UNLINK_MODES}")

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> "TrainingConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in values.items() if k in known})

    def replace(self, **changes) -> "TrainingConfig":
        return dataclasses.replace(self, **changes)


def _coerce(raw: str, annotation: Any, key: str) -> Any:
    from error_handling import ConfigError

    text = raw.strip()
    if typing.get_origin(annotation) is typing.Union:
        args = [a for a in typing.get_args(annotation) if a is not type(None)]
        if text.lower() in ("none", "null", ""):
            return None
        annotation = args[0]

    try:
        if annotation is bool:
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if annotation is int:
            return int(text)
        if annotation is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"invalid value for {key}: {raw!r}") from None


def parse_config_text(text: str) -> TrainingConfig:
    """
    Parse flat key=value lines into a TrainingConfig

    `lambda` is accepted as an alias for the `lambda_` field.
    """
    from error_handling import ConfigError

    hints = typing.get_type_hints(TrainingConfig)
    values: Dict[str, Any] = {}

    for number, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {number}: expected key = value, got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key == "lambda":
            key = "lambda_"
        if key not in hints:
            raise ConfigError(f"line {number}: unknown config key {key!r}")
        values[key] = _coerce(raw, hints[key], key)

    return TrainingConfig(**values)


def load_config_file(path: Optional[str], overrides: Sequence[str] = ()) -> TrainingConfig:
    """
    Load a TrainingConfig from a flat key=value file

    Args:
        path: Config file, or None for the defaults
        overrides: Extra key=value lines; they come after the file, so they win
    """
    text = ""
    if path:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    return parse_config_text("\n".join([text, *overrides]))


def print_config_info():
    """Print current configuration (for debugging)"""
    env = "PRODUCTION" if isinstance(config, ProductionConfig) else "DEVELOPMENT"
    print(f"\n{'='*50}")
    print(f"Configuration: {env} MODE")
    print(f"{'='*50}")
    for key, value in config.to_dict().items():
        print(f"{key}: {value}")
    print(f"{'='*50}\n")


if __name__ == "__main__":
    print_config_info()
    print("Training defaults:")
    for key, value in TrainingConfig().to_dict().items():
        print(f"  {key}: {value}")
