"""Strict INI-like run configuration.

Lines are ``[section]`` headers, ``key = value`` pairs, blank lines or
comments starting with ``#`` (a ``#`` anywhere ends the line).  Every key
has a fixed type; unknown sections or keys are errors.  Lists are comma
separated.  All defaults live in ``SCHEMA``.
"""

from dataclasses import dataclass
import copy


class ConfigError(ValueError):
    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


# section -> key -> (type, default); types: int, real, str, bool, ints, reals
SCHEMA = {
    "model": {
        "preset": ("str", "toy-resnet"),
        "input_shape": ("ints", [3, 32, 32]),
        "classes": ("int", 10),
        "blocks": ("int", 24),
        "stages": ("int", 3),
        "width": ("int", 4),
        "divisor": ("int", 8),
        "N": ("int", 1),
        "coarse_units": ("int", 0),  # 0 means ceil(12 / N)
        "coarse_style": ("str", "residual"),
    },
    "train": {
        "epochs": ("int", 1),
        "batch_size": ("int", 128),
        "lr": ("real", 0.1),
        "lr_decay": ("real", 0.1),
        "milestones": ("ints", [80, 120]),
        "momentum": ("real", 0.9),
        "weight_decay": ("real", 0.0005),
        "rng_seed": ("int", 0),
        "augment": ("bool", False),
        "resume": ("str", ""),
    },
    "data": {
        "source": ("str", "synth"),
        "train_images": ("str", ""),
        "train_labels": ("str", ""),
        "test_images": ("str", ""),
        "test_labels": ("str", ""),
        "train_limit": ("int", 0),  # 0 keeps everything
        "test_limit": ("int", 0),
        "per_class": ("int", 50),
        "test_per_class": ("int", 20),
        "separation": ("real", 4.0),
    },
    "exec": {
        "workers": ("int", 1),
        "timing": ("str", "wall"),
        "bench_N": ("ints", [1, 2, 3, 4]),
        "bench_batch": ("int", 32),
    },
    "ode": {
        "system": ("str", "random"),
        "dim": ("int", 8),
        "T": ("real", 1.0),
        "N": ("int", 8),
        "M": ("int", 16),
        "max_iters": ("int", 8),
        "tol": ("real", 0.0),
        "seed": ("int", 0),
    },
    "gradcheck": {
        "input_shape": ("ints", [3, 8, 8]),
        "blocks": ("int", 24),
        "width": ("int", 1),
        "batch": ("int", 4),
        "N": ("ints", [1, 3, 6]),
        "coarse_units": ("int", 0),
        "seed": ("int", 0),
    },
    "consistency": {
        "N": ("ints", [2, 3, 4]),
        "blocks": ("int", 6),
        "batch": ("int", 16),
        "seed": ("int", 0),
    },
    "output": {
        "dir": ("str", "out"),
        "metrics": ("str", "metrics.csv"),
        "checkpoint": ("str", "model.prnn"),
        "ode": ("str", "ode.csv"),
        "bench_prefix": ("str", "bench"),
    },
}

_BOOLS = {"true": True, "yes": True, "on": True, "1": True,
          "false": False, "no": False, "off": False, "0": False}


def _convert(kind, text, line, key):
    try:
        if kind == "int":
            return int(text)
        if kind == "real":
            return float(text)
        if kind == "bool":
            return _BOOLS[text.lower()]
        if kind == "ints":
            return [int(t) for t in text.split(",") if t.strip()]
        if kind == "reals":
            return [float(t) for t in text.split(",") if t.strip()]
        return text
    except (ValueError, KeyError):
        raise ConfigError(line, f"{key} expects {kind}, got {text!r}") from None


@dataclass
class RunConfig:
    sections: dict

    def __getitem__(self, section):
        return self.sections[section]


def defaults():
    return RunConfig({s: {k: copy.copy(d) for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()})


def parse_config(text):
    cfg = defaults()
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(lineno, f"malformed section header {raw.strip()!r}")
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(lineno, f"unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(lineno, f"expected 'key = value', got {raw.strip()!r}")
        if section is None:
            raise ConfigError(lineno, "key outside of any section")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA[section]:
            raise ConfigError(lineno, f"unknown key {key!r} in [{section}]")
        cfg.sections[section][key] = _convert(SCHEMA[section][key][0], value, lineno, key)
    return cfg


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
