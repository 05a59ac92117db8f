"""INI-style run configuration with a strict schema.

A config file holds sections mirroring the run dataclasses; every key is
validated against the schema below and unknown sections or keys are
rejected outright. Command-line flags override file values through
:func:`apply_overrides`, and :func:`render_config` re-emits the effective
configuration so each output directory records exactly what produced it.

Grammar (configparser dialect)::

    [run]
    seed = 1
    lr = 0.0001

    [dymix]
    tau = 0.05

Tuples are comma-separated (``widths = 8,16,32,32``). In the domain
sections ``bias_order = 0`` switches the multiplicative bias field off.
"""

from __future__ import annotations

import configparser
import copy
from dataclasses import replace
from pathlib import Path

from .freq_augment import BiasFieldParams
from .network import ArchConfig
from .pipeline import RunConfig
from .scheduler import DyMixConfig
from .synth import DEFAULT_SOURCE, DEFAULT_TARGET, ClassSpec, DomainSpec


class ConfigError(Exception):
    """Unknown key/section or unparseable value in a config file."""


def _domain_defaults(spec: DomainSpec) -> dict[str, tuple]:
    bias = spec.bias_field
    return {
        "bias_order": (_int, bias.order if bias else 0),
        "bias_sigma": (_float, bias.sigma if bias else 0.0),
        "gamma": (_float, spec.gamma),
        "noise_sigma": (_float, spec.noise_sigma),
    }


def _int(s: str) -> int:
    return int(s)


def _float(s: str) -> float:
    return float(s)


def _str(s: str) -> str:
    return s


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(p) for p in s.split(","))


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(p) for p in s.split(","))


# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple]] = {
    "run": {
        "data_dir": (_str, ""),
        "out_dir": (_str, ""),
        "seed": (_int, 1),
        "lr": (_float, 1e-4),
        "batch_size": (_int, 4),
        "warmup_epochs": (_int, 4),
        "adversarial_epochs": (_int, 20),
        "adapt_epochs": (_int, 12),
        "lambda1": (_float, 0.1),
        "lambda2": (_float, 0.1),
        "bias_order": (_int, 3),
        "bias_sigma": (_float, 0.8),
        "fda_beta": (_float, 1.0),
        "eval_batch": (_int, 64),
        "threshold": (_float, 0.5),
    },
    # Desk-scale scheduler steps: 12-epoch runs cannot afford the reference
    # patience of 5, and tau must divide the [0.1, 1.0] region walk.
    "dymix": {
        "tau": (_float, 0.1),
        "patience": (_int, 2),
        "min_region": (_float, 0.1),
        "max_region": (_float, 1.0),
        "initial_beta": (_float, 1.0),
    },
    "model": {
        "in_channels": (_int, 1),
        "widths": (_ints, (8, 16, 32, 32)),
        "kernel": (_int, 3),
        "attn_kernel": (_int, 7),
        "head_hidden": (_ints, (128, 64)),
        "n_classes": (_int, 2),
        "dropout": (_float, 0.5),
        "bn_momentum": (_float, 0.9),
        "bn_eps": (_float, 1e-5),
    },
    "data": {
        "dims": (_ints, (32, 32)),
        "n_per_class": (_int, 400),
        "seed": (_int, 0),
        "train_frac": (_float, 0.5),
        "val_frac": (_float, 0.25),
        "test_frac": (_float, 0.25),
    },
    "classes": {
        "radius_means": (_floats, (0.35, 0.5)),
        "radius_jitter": (_float, 0.04),
        "texture_frequency": (_float, 6.0),
        "texture_amplitude": (_float, 0.25),
        "edge_softness": (_float, 1.2),
    },
    "source_domain": _domain_defaults(DEFAULT_SOURCE),
    "target_domain": _domain_defaults(DEFAULT_TARGET),
}


def default_config() -> dict[str, dict]:
    return {sec: {k: copy.copy(d) for k, (_, d) in keys.items()} for sec, keys in SCHEMA.items()}


def load_config(path: str | Path | None) -> dict[str, dict]:
    """Defaults, overlaid with the file's values when a path is given."""
    cfg = default_config()
    if path is None:
        return cfg
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(path.read_text(), source=str(path))
    except configparser.Error as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(
                f"unknown section [{section}] in {path}; valid: {sorted(SCHEMA)}"
            )
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(
                    f"unknown key {key!r} in [{section}] of {path}; "
                    f"valid: {sorted(SCHEMA[section])}"
                )
            parse = SCHEMA[section][key][0]
            try:
                cfg[section][key] = parse(raw)
            except ValueError as e:
                raise ConfigError(f"bad value for {section}.{key}: {raw!r} ({e})") from e
    return cfg


def apply_overrides(cfg: dict[str, dict], overrides: dict[tuple[str, str], object]) -> None:
    """Merge (section, key) -> value pairs; None values are skipped."""
    for (section, key), value in overrides.items():
        if value is None:
            continue
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"unknown config target {section}.{key}")
        if isinstance(value, str):
            value = SCHEMA[section][key][0](value)
        cfg[section][key] = value


def render_config(cfg: dict[str, dict]) -> str:
    """INI text of the effective configuration, schema order."""
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for key in keys:
            v = cfg[section][key]
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{key} = {v}")
        lines.append("")
    return "\n".join(lines)


def to_run_config(cfg: dict[str, dict]) -> RunConfig:
    r = cfg["run"]
    m = cfg["model"]
    d = cfg["dymix"]
    try:
        arch = ArchConfig(
            in_channels=m["in_channels"], widths=m["widths"], kernel=m["kernel"],
            attn_kernel=m["attn_kernel"], head_hidden=m["head_hidden"],
            n_classes=m["n_classes"], dropout=m["dropout"],
            bn_momentum=m["bn_momentum"], bn_eps=m["bn_eps"],
        )
        dymix = DyMixConfig(
            tau=d["tau"], patience=d["patience"], min_region=d["min_region"],
            max_region=d["max_region"], initial_beta=d["initial_beta"],
        )
        return RunConfig(
            data_dir=r["data_dir"], out_dir=r["out_dir"], seed=r["seed"], lr=r["lr"],
            batch_size=r["batch_size"], warmup_epochs=r["warmup_epochs"],
            adversarial_epochs=r["adversarial_epochs"], adapt_epochs=r["adapt_epochs"],
            lambda1=r["lambda1"], lambda2=r["lambda2"], bias_order=r["bias_order"],
            bias_sigma=r["bias_sigma"], fda_beta=r["fda_beta"],
            eval_batch=r["eval_batch"], threshold=r["threshold"],
            dymix=dymix, arch=arch,
        )
    except ValueError as e:
        raise ConfigError(str(e)) from e


def _domain(cfg: dict[str, dict], section: str, name: str) -> DomainSpec:
    d = cfg[section]
    bias = None
    if d["bias_order"] > 0:
        bias = BiasFieldParams(order=d["bias_order"], sigma=d["bias_sigma"], seed=0)
    try:
        return DomainSpec(
            name=name, bias_field=bias, gamma=d["gamma"], noise_sigma=d["noise_sigma"]
        )
    except ValueError as e:
        raise ConfigError(str(e)) from e


def to_data_config(cfg: dict[str, dict]) -> dict:
    """Everything dataset generation needs, as plain values."""
    c = cfg["classes"]
    try:
        classes = ClassSpec(
            radius_means=c["radius_means"], radius_jitter=c["radius_jitter"],
            texture_frequency=c["texture_frequency"],
            texture_amplitude=c["texture_amplitude"], edge_softness=c["edge_softness"],
        )
    except ValueError as e:
        raise ConfigError(str(e)) from e
    d = cfg["data"]
    fractions = {"train": d["train_frac"], "val": d["val_frac"], "test": d["test_frac"]}
    return {
        "classes": classes,
        "source": _domain(cfg, "source_domain", "source"),
        "target": _domain(cfg, "target_domain", "target"),
        "dims": d["dims"],
        "n_per_class": d["n_per_class"],
        "seed": d["seed"],
        "fractions": fractions,
    }
