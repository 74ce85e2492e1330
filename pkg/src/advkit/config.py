"""Run configuration: the ``key = value`` config dialect and its schema.

Files are UTF-8 lines of ``key = value`` with ``#`` comments and blank
lines; keys are dotted paths (``attack.manigen.c``).  Every key must be
in the schema — unknown keys are validation errors that name the key,
so typos never silently fall back to defaults.  Command-line flags
override file values.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field

from .attacks import AttackConfig
from .errors import ConfigError

_BOOL_WORDS = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}


def _parse_bool(raw):
    try:
        return _BOOL_WORDS[raw.strip().lower()]
    except KeyError:
        raise ConfigError(f"expected a boolean, got {raw!r}") from None


def _parse_optional_int(raw):
    raw = raw.strip()
    return None if raw in ("", "none") else int(raw)


def _parse_sweep(raw):
    """Comma-separated positive floats, or none/off/empty to disable."""
    raw = raw.strip()
    if raw.lower() in ("", "none", "off"):
        return None
    try:
        return tuple(float(part) for part in raw.split(","))
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {raw!r}") from None


# key -> (parser, default).  None defaults are filled in later from context.
SCHEMA = {
    "dataset": (str, "mnist"),
    "data_dir": (str, "data"),
    "out_dir": (str, "out"),
    "seed": (int, 0),
    "sample_count": (int, 384),
    "calibration_count": (int, 1000),
    "train_missing": (_parse_bool, False),
    "resplit_seed": (_parse_optional_int, None),
    "model.clf": (str, ""),
    "model.ae": (str, ""),
    "model.advdef": (str, ""),
    "train.ae.epochs": (int, 10),
    "train.clf.epochs": (int, 10),
    "train.clf.subset": (int, 10000),
    "train.advdef.epochs": (int, 10),
    "attack.manigen.c": (float, 1.0),
    # The black-box search runs once per sweep value and keeps each
    # image's smallest-distortion success; a lone c stalls on anchors
    # whose manifold walk needs a stronger semantic push.
    "attack.manigen.c_sweep": (_parse_sweep, (0.1, 1.0, 10.0)),
    "attack.manigen.iterations": (int, 1000),
    "attack.manigen.learning_rate": (float, 0.01),
    "attack.manigen.check_period": (int, 10),
    "attack.carlini.c": (float, 1.0),
    "attack.carlini.c_sweep": (_parse_sweep, None),
    "attack.carlini.iterations": (int, 1000),
    "attack.carlini.learning_rate": (float, 0.01),
    "attack.fgsm.epsilon": (float, 0.25),
    "attack.bim.epsilon": (float, 0.25),
    "attack.bim.alpha": (float, 0.05),
    "attack.bim.steps": (int, 10),
    "defense.magnet.detector": (str, "reconstruction_error"),
    "defense.magnet.target_fpr": (float, 0.01),
    "defense.magnet.temperature": (float, 10.0),
    "defense.advdef.epsilon": (float, 0.25),
    "grid.count": (int, 10),
}


def parse_config_text(text, source="<config>"):
    """Parse config lines into a raw {key: string} dict with line checks."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, value = stripped.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {stripped!r}")
        values[key.strip()] = value.split("#", 1)[0].strip()
    return values


def load_config_file(path):
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read(), source=path)


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved, typed experiment configuration."""

    dataset: str
    data_dir: str
    out_dir: str
    seed: int
    sample_count: int
    calibration_count: int
    train_missing: bool
    resplit_seed: int | None
    model_paths: dict
    train_epochs: dict
    clf_subset: int
    attacks: dict
    magnet_detector: str
    magnet_target_fpr: float
    magnet_temperature: float
    advdef_epsilon: float
    grid_count: int
    effective: tuple = field(repr=False, default=())

    def digest(self):
        """Hex digest over the canonical effective configuration."""
        text = "\n".join(f"{k} = {v}" for k, v in self.effective)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def build_run_config(file_values=None, overrides=None):
    """Merge file values and CLI overrides against the schema.

    ``overrides`` wins over the file; both must only use schema keys.
    Returns a fully typed RunConfig whose ``effective`` tuple lists every
    key (defaults included) in sorted order — the digest input.
    """
    merged = {}
    for source in (file_values or {}, overrides or {}):
        for key, raw in source.items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
            merged[key] = raw if isinstance(raw, str) else str(raw)

    typed = {}
    for key, (parser, default) in SCHEMA.items():
        if key in merged:
            try:
                typed[key] = parser(merged[key])
            except ConfigError:
                raise
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key}: {merged[key]!r} ({exc})") from None
        else:
            typed[key] = default

    if typed["dataset"] not in ("mnist", "cifar10"):
        raise ConfigError(f"dataset must be mnist or cifar10, got {typed['dataset']!r}")
    if typed["sample_count"] < 1:
        raise ConfigError("sample_count must be >= 1")

    out_dir = typed["out_dir"]
    dataset = typed["dataset"]
    model_paths = {
        role: typed[f"model.{role}"]
        or os.path.join(out_dir, f"{dataset}-{role}.mgwt")
        for role in ("clf", "ae", "advdef")
    }

    def attack_cfg(kind, **extra):
        base = {
            k.rsplit(".", 1)[1]: typed[k]
            for k in SCHEMA
            if k.startswith(f"attack.{kind}.")
        }
        base.update(extra)
        return AttackConfig(kind=kind, seed=typed["seed"], **base)

    attacks = {
        "manigen": attack_cfg("manigen"),
        "carlini": attack_cfg("carlini"),
        "fgsm": attack_cfg("fgsm"),
        "bim": attack_cfg("bim"),
    }

    effective = tuple((k, _canon(typed[k])) for k in sorted(typed))
    return RunConfig(
        dataset=dataset,
        data_dir=typed["data_dir"],
        out_dir=out_dir,
        seed=typed["seed"],
        sample_count=typed["sample_count"],
        calibration_count=typed["calibration_count"],
        train_missing=typed["train_missing"],
        resplit_seed=typed["resplit_seed"],
        model_paths=model_paths,
        train_epochs={
            "ae": typed["train.ae.epochs"],
            "clf": typed["train.clf.epochs"],
            "advdef": typed["train.advdef.epochs"],
        },
        clf_subset=typed["train.clf.subset"],
        attacks=attacks,
        magnet_detector=typed["defense.magnet.detector"],
        magnet_target_fpr=typed["defense.magnet.target_fpr"],
        magnet_temperature=typed["defense.magnet.temperature"],
        advdef_epsilon=typed["defense.advdef.epsilon"],
        grid_count=typed["grid.count"],
        effective=effective,
    )


def _canon(value):
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    return str(value)
