# This file is part of xtcp.
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program.  If not, see <https://www.gnu.org/licenses/>.

__all__ = ["loadConfigFile", "applyOverrides", "setConfigValue", "configDigest"]

import hashlib
import json
import os

import lsst.pex.config as pexConfig

_NONE_TOKENS = ("none", "full", "")
_TRUE_TOKENS = ("true", "yes", "1", "on")
_FALSE_TOKENS = ("false", "no", "0", "off")


def _unwrap(value):
    """Return the `~lsst.pex.config.Config` behind a configurable field."""
    if isinstance(value, pexConfig.Config):
        return value
    inner = getattr(value, "value", None)
    if isinstance(inner, pexConfig.Config):
        return inner
    return None


def _subConfigs(config):
    for name in sorted(type(config)._fields):
        sub = _unwrap(getattr(config, name))
        if sub is not None:
            yield name, sub


def _findField(config, name):
    """Breadth-first search for the config holding field ``name``."""
    queue = [config]
    while queue:
        current = queue.pop(0)
        if name in type(current)._fields and _unwrap(getattr(current, name)) is None:
            return current
        queue.extend(sub for _, sub in _subConfigs(current))
    return None


def _convert(field, name, raw):
    raw = raw.strip()
    if isinstance(field, pexConfig.ListField):
        return [_convertScalar(field.dtype, name, item.strip()) for item in raw.split(",") if item.strip()]
    if field.optional and raw.lower() in _NONE_TOKENS:
        return None
    return _convertScalar(field.dtype, name, raw)


def _convertScalar(dtype, name, raw):
    if dtype is bool:
        if raw.lower() in _TRUE_TOKENS:
            return True
        if raw.lower() in _FALSE_TOKENS:
            return False
        raise ValueError(f"{name}: {raw!r} is not a boolean")
    try:
        return dtype(raw)
    except ValueError:
        raise ValueError(f"{name}: {raw!r} is not a valid {dtype.__name__}") from None


def setConfigValue(config, key, raw):
    """Set one field from its text value.

    Parameters
    ----------
    config : `lsst.pex.config.Config`
        Root configuration.
    key : `str`
        Dotted path such as ``train.num_iterations``, or a bare field name
        resolved breadth-first through the sub-configurations.
    raw : `str`
        Text value, converted with the field's dtype. ``none`` and ``full``
        give `None` for optional fields; list fields take comma-separated
        items.
    """
    *path, name = key.strip().split(".")
    target = config
    if path:
        for part in path:
            if part not in type(target)._fields or _unwrap(getattr(target, part)) is None:
                raise ValueError(f"Unknown configuration section {part!r} in {key!r}")
            target = _unwrap(getattr(target, part))
    else:
        target = _findField(config, name)
    if target is None or name not in type(target)._fields:
        raise ValueError(f"Unknown configuration key {key!r}")
    field = type(target)._fields[name]
    setattr(target, name, _convert(field, key, raw))


def applyOverrides(config, lines, source="<overrides>"):
    """Apply ``key=value`` lines; blank lines and ``#`` comments are skipped."""
    for number, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ValueError(f"{source}: line {number}: expected key=value, got {line.strip()!r}")
        key, value = text.split("=", 1)
        try:
            setConfigValue(config, key, value)
        except (ValueError, TypeError, AttributeError) as e:
            raise ValueError(f"{source}: line {number}: {e}") from e


def loadConfigFile(config, path):
    """Load overrides into ``config`` from a file.

    Files ending in ``.py`` are pex_config override files applied with
    `~lsst.pex.config.Config.load`; anything else is read as ``key=value``
    lines.
    """
    path = os.fspath(path)
    if path.endswith(".py"):
        config.load(path)
        return config
    try:
        with open(path) as f:
            lines = f.readlines()
    except OSError as e:
        raise ValueError(f"Cannot read configuration file {path}: {e.strerror}") from e
    applyOverrides(config, lines, source=path)
    return config


def configDigest(config):
    """SHA-256 of the canonical JSON form of ``config``."""
    text = json.dumps(config.toDict(), sort_keys=True, default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
