"""Experiment configuration: a sectioned key-value file (INI syntax) with a fixed schema.

Example::

    [experiment]
    kind = counterexample

    [levy]
    jumps = 1:1

    [grid]
    horizon = 1
    steps = 4

    [noise]
    engine = regression
    paths = 100000
    seed = 7

A ``manifest.json`` written by a previous run is accepted in place of the file;
its ``config`` block is used verbatim.
"""
from __future__ import annotations

import configparser
import json
from pathlib import Path

from .errors import ConfigInvalid
from .levy_teugels import LevyJumpSpec

KINDS = ("teugels", "simulate", "solve", "iterate", "compare", "counterexample",
         "basis_sweep", "infconv")


def _bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s):
    return [float(x) for x in str(s).replace(",", " ").split()]


# section -> key -> (parser, default)
SCHEMA = {
    "experiment": {"kind": (str, None), "name": (str, ""), "dump": (_bool, True)},
    "levy": {"jumps": (str, "1:1")},
    "grid": {"horizon": (float, 1.0), "steps": (int, 4)},
    "noise": {"engine": (str, "tree"), "paths": (int, 10_000), "cap": (int, 2),
              "a_process": (str, "identity"), "seed": (int, 0), "budget": (int, 10**6)},
    "problem": {"generator": (str, "zero"), "terminal": (str, "constant:0"), "k": (str, "zero"),
                "g": (str, "zero"), "K": (float, None), "f_bar": (float, None),
                "k_bar": (float, None), "g_bar": (float, None)},
    "scheme": {"degree": (int, 2), "tol": (float, 1e-6), "max_iters": (int, 200),
               "side": (str, "both"), "bias_budget": (float, 1e-2)},
    "compare": {"generator": (str, None), "terminal": (str, None), "k": (str, None),
                "f_shift": (float, 0.0)},
    "counterexample": {"lambda": (float, 1.0), "t_eval": (float, None)},
    "basis_sweep": {"specs": (int, 200), "max_m": (int, 6), "tol": (float, 1e-10)},
    "infconv": {"n_values": (_floats, [1, 2, 4, 8, 16, 32, 64, 128, 256]),
                "lo": (float, -3.0), "hi": (float, 3.0), "spacing": (float, 1e-4),
                "gap": (float, 0.1), "tol": (float, 0.1)},
}


def _parse_section(name, raw: dict) -> dict:
    if name not in SCHEMA:
        raise ConfigInvalid(f"unknown section [{name}]")
    out = {}
    for key, value in raw.items():
        if key not in SCHEMA[name]:
            raise ConfigInvalid(f"unknown key {key!r} in [{name}]")
        parser = SCHEMA[name][key][0]
        if value is None:
            out[key] = None
            continue
        try:
            out[key] = parser(value) if not isinstance(value, (list, bool)) else value
        except (TypeError, ValueError):
            raise ConfigInvalid(f"[{name}] {key} = {value!r} is not a valid "
                                f"{getattr(parser, '__name__', 'value').lstrip('_')}") from None
    for key, (_, default) in SCHEMA[name].items():
        out.setdefault(key, default)
    return out


def normalize(raw: dict) -> dict:
    """Validate a nested ``{section: {key: value}}`` mapping and fill defaults."""
    if "experiment" not in raw or not raw["experiment"].get("kind"):
        raise ConfigInvalid("missing [experiment] kind")
    cfg = {name: _parse_section(name, raw.get(name, {})) for name in SCHEMA}
    for name in raw:
        if name not in SCHEMA:
            raise ConfigInvalid(f"unknown section [{name}]")
    kind = cfg["experiment"]["kind"]
    if kind not in KINDS:
        raise ConfigInvalid(f"unknown experiment kind {kind!r}; expected one of {', '.join(KINDS)}")
    if cfg["noise"]["engine"] not in ("tree", "regression", "both"):
        raise ConfigInvalid(f"engine must be tree, regression or both, got {cfg['noise']['engine']!r}")
    if cfg["scheme"]["side"] not in ("minimal", "maximal", "both", "lower", "upper"):
        raise ConfigInvalid(f"unknown side {cfg['scheme']['side']!r}")
    if cfg["grid"]["steps"] < 1 or not cfg["grid"]["horizon"] > 0:
        raise ConfigInvalid("grid needs steps >= 1 and horizon > 0")
    if cfg["noise"]["paths"] < 1:
        raise ConfigInvalid("paths must be >= 1")
    parse_jumps(cfg["levy"]["jumps"])
    return cfg


def parse_jumps(text: str) -> LevyJumpSpec:
    """``"1:2, -0.5:1"`` -> sizes (1, -0.5), intensities (2, 1)."""
    pairs = []
    for item in str(text).replace(";", ",").split(","):
        item = item.strip()
        if not item:
            continue
        try:
            a, lam = item.split(":")
            pairs.append((float(a), float(lam)))
        except ValueError:
            raise ConfigInvalid(f"jump entry {item!r} is not size:intensity") from None
    if not pairs:
        raise ConfigInvalid("[levy] jumps is empty")
    try:
        return LevyJumpSpec.from_pairs(pairs)
    except ValueError as exc:
        raise ConfigInvalid(f"[levy] {exc}") from None


def load_config(path) -> dict:
    """Read an INI experiment file or a previous run's manifest."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigInvalid(f"cannot read {path}: {exc.strerror}") from None
    if path.suffix == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"{path}: {exc}") from None
        if not isinstance(data, dict) or not isinstance(data.get("config"), dict):
            raise ConfigInvalid(f"{path} has no config block")
        return normalize(data["config"])
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keys are case sensitive (K)
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigInvalid(str(exc).splitlines()[0]) from None
    return normalize({s: dict(parser[s]) for s in parser.sections()})
