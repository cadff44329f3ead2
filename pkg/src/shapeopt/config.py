"""Run configuration: flat `section.key = value` text files.

One assignment per line; blank lines and lines starting with '#' are
skipped.  Every key must appear in the schema below, so a typo is a
parse error naming the offending line instead of a silently ignored
setting.  Relative paths in the file resolve against the directory the
config file lives in.
"""

import os

from .functionals import KINDS
from .optimize import METHODS, PIPELINES

__all__ = ["ConfigError", "RunConfig", "parse_config", "SCHEMA"]


class ConfigError(ValueError):
    """Malformed configuration; message carries file and line context."""


_REQUIRED = object()


def _parse_bool(text):
    low = text.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_box(text):
    parts = text.split()
    if len(parts) != 4:
        raise ValueError("expected four numbers: x0 y0 x1 y1")
    x0, y0, x1, y1 = (float(p) for p in parts)
    if not (x0 < x1 and y0 < y1):
        raise ValueError("box corners must satisfy x0 < x1 and y0 < y1")
    return ((x0, y0), (x1, y1))


def _choice(options):
    def parse(text):
        if text not in options:
            raise ValueError(f"expected one of {options}, got {text!r}")
        return text

    return parse


# key -> (parser, default); _REQUIRED means the file must set it
SCHEMA = {
    "problem.kind": (_choice(KINDS), _REQUIRED),
    "problem.a_star": (float, 0.0),
    "problem.nu": (float, 0.0),
    "problem.sigma_in": (float, 1.0),
    "problem.sigma_out": (float, 2.0),
    "problem.source": (float, 1.0),
    # interface curve the tracking target is synthesized from: the state
    # is solved once on a mesh around that curve and its interpolant
    # becomes the target data
    "problem.target_curve": (str, ""),
    "mesh.curve": (str, _REQUIRED),
    "mesh.box": (_parse_box, _REQUIRED),
    "mesh.h": (float, _REQUIRED),
    "optimizer.pipeline": (_choice(PIPELINES), "sobolev_surface"),
    "optimizer.method": (_choice(METHODS), "steepest"),
    "optimizer.memory": (int, 5),
    "optimizer.max_iter": (int, 500),
    "optimizer.grad_tol": (float, 1e-6),
    "optimizer.armijo_c1": (float, 1e-4),
    "optimizer.armijo_rho": (float, 0.5),
    "optimizer.step0": (float, 1.0),
    "optimizer.max_backtracks": (int, 30),
    "optimizer.sobolev_weight": (float, 0.1),
    "optimizer.quality_floor": (float, 5.0),
    "output.dir": (str, "out"),
    "output.snapshot_every": (int, 1),
    "output.svg": (_parse_bool, False),
    "run.seed": (int, 0),
    "check.tolerance": (float, 1e-3),
    "check.fields": (int, 8),
}


class RunConfig:
    """Parsed configuration: schema-typed values plus path context."""

    def __init__(self, values, path):
        self.values = values
        self.path = path
        self.base_dir = os.path.dirname(os.path.abspath(path))

    def __getitem__(self, key):
        return self.values[key]

    def resolve(self, key):
        """Value of a path-valued key, resolved against the config dir."""
        raw = self.values[key]
        if not raw:
            return ""
        return raw if os.path.isabs(raw) else os.path.join(self.base_dir, raw)


def parse_config(path):
    try:
        with open(path) as fh:
            raw_lines = fh.read().splitlines()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err

    values = {}
    first_line = {}
    for lineno, raw in enumerate(raw_lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'section.key = value', got {raw!r}")
        key, _, text = line.partition("=")
        key = key.strip()
        text = text.strip()
        if key not in SCHEMA:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(
                f"{path}:{lineno}: duplicate key {key!r} (first set on line {first_line[key]})"
            )
        parser, _ = SCHEMA[key]
        try:
            values[key] = parser(text)
        except ValueError as err:
            raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {err}") from err
        first_line[key] = lineno

    missing = [
        key for key, (_, default) in SCHEMA.items()
        if default is _REQUIRED and key not in values
    ]
    if missing:
        raise ConfigError(f"{path}: missing required keys: {', '.join(sorted(missing))}")
    for key, (_, default) in SCHEMA.items():
        values.setdefault(key, default)
    return RunConfig(values, path)
