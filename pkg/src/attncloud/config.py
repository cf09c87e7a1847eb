"""Line-based run configuration: ``key = value``, one per line.

The config file is the source of record for an experiment; command-line
``--set key=value`` overrides are merged on top, every key is validated at
parse time, and unknown keys are rejected. The resolved key set is written
next to run outputs for provenance and embedded in checkpoints so that a
model can be rebuilt from its checkpoint alone.
"""

from __future__ import annotations

from pathlib import Path

from . import data as D
from . import models as Mo
from . import training as Tr
from .checkpoint import Checkpoint
from .errors import ConfigError


def _int(lo=None):
    def parse(s):
        v = int(s)
        if lo is not None and v < lo:
            raise ValueError(f"must be >= {lo}")
        return v
    return parse


def _float(lo=None, strict=False):
    def parse(s):
        v = float(s)
        if lo is not None and (v <= lo if strict else v < lo):
            raise ValueError(f"must be {'>' if strict else '>='} {lo}")
        return v
    return parse


def _enum(*values):
    def parse(s):
        if s not in values:
            raise ValueError(f"expected one of {', '.join(values)}")
        return s
    return parse


def _bool(s):
    lowered = s.lower()
    if lowered in ("true", "on", "1", "yes"):
        return True
    if lowered in ("false", "off", "0", "no"):
        return False
    raise ValueError("expected true/false")


def _int_list(s):
    return tuple(int(v) for v in s.split(",") if v != "")


def _family_list(s):
    families = tuple(v.strip() for v in s.split(",") if v.strip())
    for fam in families:
        if fam not in D.FAMILIES:
            raise ValueError(f"unknown family {fam!r}")
    if not families:
        raise ValueError("need at least one family")
    return families


# key -> (parser, default); None defaults resolve per task after parsing
SCHEMA = {
    "task": (_enum("reconstruct", "complete"), "reconstruct"),
    # dataset
    "families": (_family_list, ",".join(D.FAMILIES)),
    "train_shapes": (_int(1), "200"),
    "val_shapes": (_int(0), "40"),
    "test_shapes": (_int(0), "40"),
    "points_per_shape": (_int(1), "512"),
    "partial_points": (_int(1), "256"),
    "partial_method": (_enum("halfspace-cut", "viewpoint-occlusion"), "halfspace-cut"),
    "data_seed": (_int(), "0"),
    # reconstruction model
    "decoder": (_enum("attn", "fc", "folding"), "attn"),
    "out_points": (_int(1), "512"),
    "branches": (_int(1), "1"),
    "latent_dim": (_int(1), "128"),
    "interim_dim": (_int(1), "32"),
    "interim_count": (_int(1), "128"),
    "attn_widths": (_int_list, "64,128"),
    "fc_latent_dim": (_int(1), "1024"),
    "folding_latent_dim": (_int(1), "512"),
    "folding_hidden": (_int(1), "512"),
    "encoder_hidden": (_int_list, "64,128"),
    # completion model
    "coarse_points": (_int(1), "64"),
    "completion_latent_dim": (_int(1), "1024"),
    "branch_dim": (_int(1), "128"),
    "feature_hidden": (_int_list, "1024,1024"),
    "feature_mapping": (_bool, "true"),
    "completion_mode": (_enum("vanilla", "full"), "full"),
    # training
    "epochs": (_int(1), None),
    "batch_size": (_int(1), None),
    "lr": (_float(0.0), None),
    "alpha_ramp": (_int(1), "25"),
    "train_seed": (_int(), "0"),
    "model_seed": (_int(), "0"),
    "checkpoint_every": (_int(0), "0"),
    "grad_clip": (_float(0.0), "0"),
    "threads": (_int(1), "1"),
    # evaluation
    "fscore_threshold": (_float(0.0, strict=True), "0.01"),
    "jsd_resolution": (_int(2), "28"),
    "eval_split": (_enum("train", "val", "test"), "test"),
}

TASK_DEFAULTS = {
    "reconstruct": {"epochs": "200", "batch_size": "32", "lr": "0.0001"},
    "complete": {"epochs": "100", "batch_size": "16", "lr": "0.001"},
}


class RunConfig:
    """Validated configuration; [] returns typed values, .raw the strings."""

    def __init__(self, raw: dict):
        unknown = set(raw) - set(SCHEMA)
        if unknown:
            raise ConfigError(f"unknown config key {sorted(unknown)[0]!r}")
        task = raw.get("task", SCHEMA["task"][1])
        if task not in TASK_DEFAULTS:
            raise ConfigError(f"config key 'task': expected one of reconstruct, complete")
        resolved = {}
        for key, (_, default) in SCHEMA.items():
            if key in raw:
                resolved[key] = raw[key]
            elif default is not None:
                resolved[key] = default
            else:
                resolved[key] = TASK_DEFAULTS[task][key]
        self.raw = resolved
        self.values = {}
        for key, value in resolved.items():
            parse = SCHEMA[key][0]
            try:
                self.values[key] = parse(value)
            except ValueError as err:
                raise ConfigError(f"config key {key!r}: bad value {value!r} ({err})")

    def __getitem__(self, key: str):
        return self.values[key]

    def with_overrides(self, overrides: list) -> "RunConfig":
        raw = dict(self.raw)
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not of the form key=value")
            key, value = item.split("=", 1)
            raw[key.strip()] = value.strip()
        return RunConfig(raw)

    def text(self) -> str:
        return "".join(f"{k} = {self.raw[k]}\n" for k in sorted(self.raw))


def parse_config_text(text: str) -> dict:
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {stripped!r}")
        key, value = stripped.split("=", 1)
        key, value = key.strip(), value.strip()
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value
    return raw


def load_config(path=None, overrides: list = ()) -> RunConfig:
    raw = {}
    if path is not None:
        raw = parse_config_text(Path(path).read_text())
    return RunConfig(raw).with_overrides(list(overrides))


def dataset_config(rc: RunConfig) -> D.DatasetConfig:
    return D.DatasetConfig(
        families=rc["families"],
        train_shapes=rc["train_shapes"],
        val_shapes=rc["val_shapes"],
        test_shapes=rc["test_shapes"],
        points_per_shape=rc["points_per_shape"],
        partial_points=rc["partial_points"],
        partial_method=rc["partial_method"],
        seed=rc["data_seed"],
    )


def reconstruction_config(rc: RunConfig) -> Mo.ReconstructionConfig:
    return Mo.ReconstructionConfig(
        decoder=rc["decoder"],
        out_points=rc["out_points"],
        branches=rc["branches"],
        latent_dim=rc["latent_dim"],
        interim_dim=rc["interim_dim"],
        interim_count=rc["interim_count"],
        attn_widths=rc["attn_widths"],
        fc_latent_dim=rc["fc_latent_dim"],
        folding_latent_dim=rc["folding_latent_dim"],
        folding_hidden=rc["folding_hidden"],
        encoder_hidden=rc["encoder_hidden"],
    )


def completion_config(rc: RunConfig) -> Mo.CompletionConfig:
    return Mo.CompletionConfig(
        branches=rc["branches"],
        coarse_points=rc["coarse_points"],
        latent_dim=rc["completion_latent_dim"],
        branch_dim=rc["branch_dim"],
        interim_dim=rc["interim_dim"],
        interim_count=rc["interim_count"],
        attn_widths=rc["attn_widths"],
        feature_hidden=rc["feature_hidden"],
        encoder_hidden=rc["encoder_hidden"],
        feature_mapping=rc["feature_mapping"],
    )


def train_config(rc: RunConfig) -> Tr.TrainConfig:
    return Tr.TrainConfig(
        task=rc["task"],
        epochs=rc["epochs"],
        batch_size=rc["batch_size"],
        lr=rc["lr"],
        alpha_ramp=rc["alpha_ramp"],
        seed=rc["train_seed"],
        checkpoint_every=rc["checkpoint_every"],
        completion_mode=rc["completion_mode"],
        grad_clip=rc["grad_clip"],
    )


def build_model(rc: RunConfig):
    if rc["task"] == "complete":
        return Mo.CompletionNet(completion_config(rc), seed=rc["model_seed"])
    return Mo.Autoencoder(reconstruction_config(rc), seed=rc["model_seed"])


def model_from_checkpoint(ckpt: Checkpoint):
    """Rebuild the model a checkpoint was trained with and load its weights."""
    rc = RunConfig(dict(ckpt.config))
    model = build_model(rc)
    Tr.load_params_into(model, ckpt.params)
    return model, rc
