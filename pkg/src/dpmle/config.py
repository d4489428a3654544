"""Run-configuration files.

Grammar (one statement per line)::

    # comment                     blank lines and comments are ignored
    [section]                     later keys belong to ``section``
    key = value                   value is an integer, float, true/false,
                                  a "double-quoted string", a bare word,
                                  or a list [v1, v2, ...] of those

Keys may use ``-`` or ``_`` interchangeably.  Top-level keys apply to every
command; a ``[fit]`` (``[simulate]``, ...) section applies to that command
and overrides top-level keys.  Command-line flags override both.
"""
from __future__ import annotations

import re

from .errors import ConfigError

_KEY = re.compile(r"^[A-Za-z_][A-Za-z0-9_\-]*$")


def _scalar(text, line):
    t = text.strip()
    if not t:
        raise ConfigError(f"line {line}: empty value")
    if t.startswith('"'):
        if len(t) < 2 or not t.endswith('"'):
            raise ConfigError(f"line {line}: unterminated string")
        return t[1:-1]
    if t in ("true", "false"):
        return t == "true"
    for cast in (int, float):
        try:
            return cast(t)
        except ValueError:
            pass
    if re.search(r"[\s=\[\]]", t):
        raise ConfigError(f"line {line}: cannot parse value {t!r}")
    return t


def _strip_comment(line):
    quoted = False
    for i, ch in enumerate(line):
        if ch == '"':
            quoted = not quoted
        elif ch == "#" and not quoted:
            return line[:i]
    return line


def parse_config(text):
    """Parse config text into ``{section: {key: value}}`` with top-level keys under ``""``."""
    out = {"": {}}
    section = ""
    for n, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if line.startswith("["):
            m = re.fullmatch(r"\[\s*([A-Za-z_][A-Za-z0-9_\-]*)\s*\]", line)
            if not m:
                raise ConfigError(f"line {n}: bad section header {raw.strip()!r}")
            section = m.group(1)
            out.setdefault(section, {})
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if not _KEY.match(key):
            raise ConfigError(f"line {n}: bad key {key!r}")
        key = key.replace("-", "_")
        value = value.strip()
        if value.startswith("["):
            if not value.endswith("]"):
                raise ConfigError(f"line {n}: unterminated list")
            inner = value[1:-1].strip()
            parsed = [_scalar(v, n) for v in inner.split(",")] if inner else []
        else:
            parsed = _scalar(value, n)
        if key in out[section]:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        out[section][key] = parsed
    return out


def load_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    return parse_config(text)


def settings_for(config, command):
    """Merged settings for one command (section values override top-level ones)."""
    merged = dict(config.get("", {}))
    merged.update(config.get(command, {}))
    return merged
