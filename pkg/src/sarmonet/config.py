"""Flat ``key = value`` run configuration shared by all subcommands.

Lines are ``key = value``; ``#`` starts a comment; blank lines are ignored.
Every key has a default (see :data:`KEYS`), unknown keys are rejected.
``preset = desk`` (the default) takes training defaults from
:meth:`TrainConfig.desk`; ``preset = paper`` uses the full published schedule.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .detect import DetectConfig
from .errors import ConfigError
from .loss import LossWeights
from .speckle import DatasetSpec
from .train import DESK_LAMBDA_KL, TrainConfig


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_int(s: str):
    return None if s.strip().lower() in ("none", "") else int(s)


# key -> (parser, default, help); default None for preset-dependent training keys
KEYS: dict[str, tuple] = {
    "seed": (int, 0, "master seed for data, initialization and shuffling"),
    # dataset
    "source": (str, DatasetSpec.source, "image directory or synthetic:<kind>+<kind>..."),
    "patch_size": (int, 64, "square patch side"),
    "stride": (_opt_int, None, "patch stride (none = patch_size)"),
    "looks": (int, 1, "number of looks of the simulated speckle"),
    "train_frac": (float, 0.8, "training share of the patches"),
    "val_frac": (float, 0.2, "validation share of the patches"),
    "n_images": (int, 16, "number of synthetic source images"),
    "image_size": (int, 256, "side of synthetic source images"),
    "max_patches": (_opt_int, None, "cap on the number of extracted patches"),
    # training
    "preset": (str, "desk", "desk or paper training defaults"),
    "batch_size": (int, None, "mini-batch size (desk 32, paper 128)"),
    "lr_phase1": (float, None, "learning rate of phase 1 (desk 1e-3, paper 1e-4)"),
    "lr_phase2": (float, None, "learning rate of phase 2 (desk 1e-4, paper 1e-5)"),
    "epochs_phase1": (int, None, "epochs at lr_phase1 (desk 10, paper 87)"),
    "epochs_phase2": (int, None, "epochs at lr_phase2 (desk 5, paper 35)"),
    "beta1": (float, 0.9, "Adam first-moment decay"),
    "beta2": (float, 0.99, "Adam second-moment decay"),
    "width": (int, None, "feature channels (desk 16, paper 64)"),
    "depth": (int, 17, "number of convolution layers"),
    "checkpoint_every": (int, 0, "checkpoint period in steps (0 = end only)"),
    "max_steps": (_opt_int, None, "stop after this many steps"),
    # loss
    "lambda_kl": (float, None, f"KL weight (desk {DESK_LAMBDA_KL:g}, paper 1e4)"),
    "lambda_grad": (float, 1.0, "gradient-loss weight"),
    "use_l2": (_bool, True, "enable the L2 term"),
    "use_kl": (_bool, True, "enable the KL term"),
    "use_grad": (_bool, True, "enable the gradient term"),
    "kl_pooling": (str, "batch", "KL histogram pooled per batch or per patch"),
    # detection
    "edge_window": (int, 7, "edge detector window (odd)"),
    "edge_threshold": (float, 1.5, "edge response threshold (> 1)"),
    "ks_patch": (int, 16, "KS test patch side"),
    "ks_alpha": (float, 0.01, "KS test significance level"),
    "combine": (str, "AND", "AND or OR of edge and KS maps"),
    "dilation": (int, 1, "edge map dilation radius"),
    # metrics
    "permutations": (int, 8, "random permutations averaged in delta_h"),
    "roi_size": (int, 32, "side of automatically selected homogeneous ROIs"),
    "roi_count": (int, 4, "number of automatically selected homogeneous ROIs"),
}

_DATASET = ("source", "patch_size", "stride", "looks", "train_frac", "val_frac", "n_images",
            "image_size", "max_patches")
_TRAIN = ("batch_size", "lr_phase1", "lr_phase2", "epochs_phase1", "epochs_phase2", "beta1",
          "beta2", "width", "depth", "checkpoint_every", "max_steps")
_LOSS = ("lambda_kl", "lambda_grad", "use_l2", "use_kl", "use_grad", "kl_pooling")
_DETECT = ("edge_window", "edge_threshold", "ks_patch", "ks_alpha", "combine", "dilation")


def parse_config_text(text: str, name: str = "<config>") -> dict:
    """Typed values for the keys present in ``text``."""
    out = {}
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"{name}:{no}: expected 'key = value', got {raw.strip()!r}")
        if key not in KEYS:
            raise ConfigError(f"{name}:{no}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{name}:{no}: duplicate key {key!r}")
        if KEYS[key][1] is None and value.lower() == "none":
            out[key] = None  # explicit "use the default"
            continue
        try:
            out[key] = KEYS[key][0](value)
        except ValueError as exc:
            raise ConfigError(f"{name}:{no}: bad value for {key!r}: {exc}") from None
    return out


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        unknown = set(self.values) - set(KEYS)
        if unknown:
            raise ConfigError(f"unknown keys: {sorted(unknown)}")
        if self.get("preset") not in ("desk", "paper"):
            raise ConfigError("preset must be 'desk' or 'paper'")
        # build once so bad combinations surface early
        self.dataset(), self.train(), self.detect()

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        p = Path(path)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"{p}: {exc}") from None
        return cls(parse_config_text(text, str(p)))

    def get(self, key: str):
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}")
        return self.values.get(key, KEYS[key][1])

    def with_overrides(self, **kw) -> "RunConfig":
        v = dict(self.values)
        v.update({k: x for k, x in kw.items() if x is not None})
        return RunConfig(v)

    def dataset(self) -> DatasetSpec:
        try:
            return DatasetSpec(seed=self.get("seed"), **{k: self.get(k) for k in _DATASET})
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def loss(self, base: LossWeights | None = None) -> LossWeights:
        kw = {k: self.values[k] for k in _LOSS if self.values.get(k) is not None}
        if base is None:
            lam = DESK_LAMBDA_KL if self.get("preset") == "desk" else LossWeights.lambda_kl
            base = LossWeights(lambda_kl=lam)
        try:
            return LossWeights(**{**base.__dict__, **kw})
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def train(self) -> TrainConfig:
        base = TrainConfig.desk() if self.get("preset") == "desk" else TrainConfig()
        kw = {k: self.get(k) for k in _TRAIN if self.get(k) is not None}
        try:
            return TrainConfig(**{**base.__dict__, **kw, "seed": self.get("seed"),
                                  "weights": self.loss(base.weights)})
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def detect(self) -> DetectConfig:
        try:
            return DetectConfig(**{k: self.get(k) for k in _DETECT})
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def dump(self) -> str:
        lines = []
        for k, (_, default, help_) in KEYS.items():
            v = self.values.get(k, default)
            lines.append(f"# {help_}")
            lines.append(f"{k} = {'none' if v is None else v}")
        return "\n".join(lines) + "\n"


__all__ = ["KEYS", "RunConfig", "parse_config_text"]
