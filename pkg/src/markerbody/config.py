"""Run configs for the command-line tools.

Every hyperparameter a command consumes lives in its config dataclass; the
resolved config is serialized next to each run's outputs so re-running it is
a pure function of (config, seed).
"""

import dataclasses
import json
from dataclasses import dataclass, field


class ConfigError(Exception):
    pass


@dataclass
class GenBodyConfig:
    seed: int = 0
    out: str = "runs/body"
    density: float = 1.0


@dataclass
class GenDataConfig:
    seed: int = 0
    out: str = "runs/data"
    body_dir: str = "runs/body"
    count: int = 2000
    image_size: int = 64
    split: str = "train"
    ws_fraction: float = 0.0
    depth_min: float = 1.0
    depth_max: float = 8.0
    # virtual full-frame camera the crops are taken from
    frame_size: int = 512
    frame_focal: float = 600.0


@dataclass
class TrainMPConfig:
    seed: int = 0
    out: str = "runs/mp"
    body_dir: str = "runs/body"
    steps: int = 50000
    batch: int = 32
    lr: float = 1e-4
    lr_decay: float = 0.99
    steps_per_epoch: int = 500
    hidden: int = 256
    noise_mm: float = 5.0
    sweep_noise_mm: list = field(default_factory=list)
    eval_frames: int = 256
    eval_noise_mm: float = 5.0
    log_every: int = 500
    param_supervision: bool = False
    resume: str = ""


@dataclass
class TrainThundrConfig:
    seed: int = 0
    out: str = "runs/thundr"
    body_dir: str = "runs/body"
    dataset_dir: str = "runs/data"
    mp_checkpoint: str = "runs/mp/mp.tensors"
    steps: int = 5000
    batch: int = 16
    lr: float = 1e-4
    lr_decay: float = 0.99
    steps_per_epoch: int = 500
    d_model: int = 64
    heads: int = 4
    n_stages: int = 4
    lambda_step: float = 0.1
    backbone_channels: list = field(default_factory=lambda: [16, 32, 48, 64, 64])
    regime: str = "mixed"  # ws | fs | mixed
    freeze_mp: bool = True
    limit_samples: int = 0  # 0 = use the whole dataset
    w_ps: float = 1e-3
    w_m: float = 1.0
    w_k: float = 1e-2
    w_b: float = 1.0
    w_f: float = 1.0
    w_v: float = 1.0
    w_j: float = 1.0
    sigma: float = 1e-4
    gamma: float = 1e-2
    log_every: int = 100
    resume: str = ""


@dataclass
class EvalConfig:
    seed: int = 0
    out: str = "runs/eval"
    body_dir: str = "runs/body"
    dataset_dir: str = "runs/data"
    checkpoint: str = "runs/thundr/thundr.tensors"
    limit_samples: int = 0


@dataclass
class FitMarkersConfig:
    seed: int = 0
    out: str = "runs/fit"
    body_dir: str = "runs/body"
    mp_checkpoint: str = "runs/mp/mp.tensors"
    frames: int = 50
    noise_mm: float = 5.0
    fit_steps: int = 1000
    fit_lr: float = 0.1
    fit_restarts: int = 3


@dataclass
class RenderConfig:
    seed: int = 0
    out: str = "runs/render"
    body_dir: str = "runs/body"
    dataset_dir: str = "runs/data"
    checkpoint: str = "runs/thundr/thundr.tensors"
    indices: list = field(default_factory=lambda: [0])


@dataclass
class GradcheckConfig:
    seed: int = 0
    out: str = "runs/gradcheck"
    tolerance: float = 1e-3
    geometric_tolerance: float = 1e-5


COMMAND_CONFIGS = {
    "gen-body": GenBodyConfig,
    "gen-data": GenDataConfig,
    "train-mp": TrainMPConfig,
    "train-thundr": TrainThundrConfig,
    "eval": EvalConfig,
    "fit-markers": FitMarkersConfig,
    "render": RenderConfig,
    "gradcheck": GradcheckConfig,
}


def config_to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def config_from_dict(cls, data: dict):
    """Build a config, rejecting unknown keys and wrong-typed values."""
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"unknown config keys for {cls.__name__}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        ftype = fields[name].type
        if ftype is int or ftype == "int":
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{name}: expected int, got {value!r}")
        elif ftype is float or ftype == "float":
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{name}: expected number, got {value!r}")
            value = float(value)
        elif ftype is bool or ftype == "bool":
            if not isinstance(value, bool):
                raise ConfigError(f"{name}: expected bool, got {value!r}")
        elif ftype is str or ftype == "str":
            if not isinstance(value, str):
                raise ConfigError(f"{name}: expected string, got {value!r}")
        elif ftype is list or ftype == "list":
            if not isinstance(value, list):
                raise ConfigError(f"{name}: expected list, got {value!r}")
        kwargs[name] = value
    return cls(**kwargs)


def config_to_json(cfg) -> str:
    return json.dumps(config_to_dict(cfg), indent=1, sort_keys=True) + "\n"


def save_config(path, cfg) -> None:
    with open(path, "w") as fh:
        fh.write(config_to_json(cfg))


def load_config(path, cls):
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(cls, data)
