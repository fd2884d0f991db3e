"""Flat ``key = value`` configuration files with ``#`` comments.

Keys carry dotted section prefixes (``model.alpha0 = 0.5``); values are one
or more whitespace-separated tokens.  Chosen over positional flags so runs
are auditable from the config file alone.
"""

from .errors import ConfigParseError


class Config:
    def __init__(self, entries=None, source="<config>"):
        self.entries = dict(entries or {})
        self.source = source

    def __contains__(self, key):
        return key in self.entries

    def _tokens(self, key, default=None):
        if key in self.entries:
            return self.entries[key]
        return default

    def get_str(self, key, default=None):
        toks = self._tokens(key)
        if toks is None:
            return default
        if len(toks) != 1:
            raise ConfigParseError(f"{key} expects one value, got {toks}")
        return toks[0]

    def get_int(self, key, default=None):
        s = self.get_str(key)
        if s is None:
            return default
        try:
            return int(s)
        except ValueError:
            raise ConfigParseError(f"{key} expects an integer, got {s!r}")

    def get_float(self, key, default=None):
        s = self.get_str(key)
        if s is None:
            return default
        try:
            return float(s)
        except ValueError:
            raise ConfigParseError(f"{key} expects a number, got {s!r}")

    def get_bool(self, key, default=None):
        s = self.get_str(key)
        if s is None:
            return default
        low = s.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ConfigParseError(f"{key} expects true/false, got {s!r}")

    def get_floats(self, key, default=None):
        toks = self._tokens(key)
        if toks is None:
            return default
        try:
            return [float(t) for t in toks]
        except ValueError:
            raise ConfigParseError(f"{key} expects numbers, got {toks}")

    def get_strs(self, key, default=None):
        toks = self._tokens(key)
        return list(toks) if toks is not None else default

    def require(self, key):
        if key not in self.entries:
            raise ConfigParseError(f"missing required key {key!r} in {self.source}")
        return self.entries[key]


def parse_config_text(text, source="<config>"):
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigParseError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        toks = value.split()
        if not key:
            raise ConfigParseError(f"{source}:{lineno}: empty key")
        if not toks:
            raise ConfigParseError(f"{source}:{lineno}: key {key!r} has no value")
        if key in entries:
            raise ConfigParseError(f"{source}:{lineno}: duplicate key {key!r}")
        entries[key] = toks
    return Config(entries, source)


def load_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigParseError(f"cannot read config {path}: {exc}")
    return parse_config_text(text, source=str(path))
