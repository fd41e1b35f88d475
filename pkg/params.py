"""
Model parameters: shapes, initialization and graph binding
"""

from dataclasses import asdict, dataclass
from typing import Dict, Iterator, Mapping, Optional, Tuple, Union

import numpy as np

from autodiff import DiffValue, constant
from config_env import ARCHITECTURES, UNLINK_MODES, TrainingConfig
from error_handling import ValidationError


@dataclass(frozen=True)
class ModelConfig:
    """Everything that fixes tensor shapes or the forward wiring"""
    feature_dim: int
    vocab_size: int
    hidden: int = 512
    enc_hidden: Optional[int] = None
    architecture: str = "dual_attention"
    link_attentions: bool = True
    unlink_mode: str = "zero_context"
    per_dim_gate: bool = False
    dropout: float = 0.5

    def __post_init__(self):
        if self.feature_dim < 1 or self.hidden < 1:
            raise ValidationError(f"model dimensions must be positive: {self}")
        if self.vocab_size < 3:
            raise ValidationError(f"vocab_size must cover PAD, BOS and EOS, got {self.vocab_size}")
        if self.architecture not in ARCHITECTURES:
            raise ValidationError(f"unknown architecture {self.architecture!r}")
        if self.unlink_mode not in UNLINK_MODES:
            raise ValidationError(f"unknown unlink_mode {self.unlink_mode!r}")

    @property
    def encoder_hidden(self) -> int:
        return self.enc_hidden or self.hidden

    @classmethod
    def from_training(cls, config: TrainingConfig, feature_dim: int, vocab_size: int) -> "ModelConfig":
        return cls(
            feature_dim=feature_dim,
            vocab_size=vocab_size,
            hidden=config.hidden,
            enc_hidden=config.enc_hidden,
            architecture=config.architecture,
            link_attentions=config.link_attentions,
            unlink_mode=config.unlink_mode,
            per_dim_gate=config.per_dim_gate,
            dropout=config.dropout,
        )

    def to_dict(self) -> Dict:
        return asdict(self)


def parameter_shapes(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    d, h, v, dv = config.hidden, config.encoder_hidden, config.vocab_size, config.feature_dim
    return {
        "enc_fw_W": (4 * h, dv + h),
        "enc_fw_b": (4 * h,),
        "enc_bw_W": (4 * h, dv + h),
        "enc_bw_b": (4 * h,),
        "enc_proj_W": (d, 2 * h),
        "enc_proj_b": (d,),
        "embed_W": (v, d),
        "att_v_W": (d, d),
        "att_v_V": (d, d),
        "att_v_b": (d,),
        "att_v_w": (d,),
        "att_t_W": (d, d),
        "att_t_V": (d, d),
        "att_t_b": (d,),
        "att_t_w": (d,),
        "lstm1_W": (4 * d, 3 * d),
        "lstm1_b": (4 * d,),
        "lstm2_W": (4 * d, 3 * d),
        "lstm2_b": (4 * d,),
        "lstm3_W": (4 * d, 2 * d),
        "lstm3_b": (4 * d,),
        "gate_W": (d if config.per_dim_gate else 1, d),
        "out_W": (v, d),
        "out_b": (v,),
    }


class ModelParams:
    """Named float64 tensors for every learned matrix and vector"""

    def __init__(self, config: ModelConfig, tensors: Mapping[str, np.ndarray]):
        self.config = config
        shapes = parameter_shapes(config)
        missing = set(shapes) - set(tensors)
        if missing:
            raise ValidationError(f"missing parameter tensors: {sorted(missing)}")
        self.tensors: Dict[str, np.ndarray] = {}
        for name, shape in shapes.items():
            arr = np.asarray(tensors[name], dtype=np.float64)
            if arr.shape != shape:
                raise ValidationError(f"parameter {name} has shape {arr.shape}, expected {shape}")
            self.tensors[name] = arr

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int = 0, scale: float = 0.08) -> "ModelParams":
        """Uniform(-scale, scale) weights, zero biases"""
        rng = np.random.default_rng(seed)
        tensors = {}
        for name, shape in parameter_shapes(config).items():
            if len(shape) == 1 and name != "att_v_w" and name != "att_t_w":
                tensors[name] = np.zeros(shape)
            else:
                tensors[name] = rng.uniform(-scale, scale, size=shape)
        return cls(config, tensors)

    @classmethod
    def zeros(cls, config: ModelConfig) -> "ModelParams":
        return cls(config, {name: np.zeros(shape) for name, shape in parameter_shapes(config).items()})

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def with_tensors(self, **updates: np.ndarray) -> "ModelParams":
        tensors = dict(self.tensors)
        tensors.update(updates)
        return ModelParams(self.config, tensors)

    def bind(self, trainable: bool = False) -> "ParamGraph":
        """Wrap tensors as graph nodes: leaves when trainable, constants otherwise"""
        if trainable:
            # tensors are replaced, never mutated, by the optimizer, so no copy
            nodes = {
                name: DiffValue(arr, op="leaf", name=name, requires_grad=True)
                for name, arr in self.tensors.items()
            }
        else:
            nodes = {name: constant(arr) for name, arr in self.tensors.items()}
        return ParamGraph(self.config, nodes)


class ParamGraph(Mapping[str, DiffValue]):
    """Parameters bound into one forward pass"""

    def __init__(self, config: ModelConfig, nodes: Dict[str, DiffValue]):
        self.config = config
        self.nodes = nodes

    def __getitem__(self, name: str) -> DiffValue:
        return self.nodes[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.nodes)

    def __len__(self) -> int:
        return len(self.nodes)

    def gradients(self) -> Dict[str, np.ndarray]:
        return {name: node.grad.copy() for name, node in self.nodes.items()}


def bind_params(params: Union[ModelParams, ParamGraph]) -> ParamGraph:
    return params if isinstance(params, ParamGraph) else params.bind(trainable=False)
