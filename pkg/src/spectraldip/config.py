"""Flat ``key = value`` config files and dataset manifests."""

from __future__ import annotations

import argparse
import csv
from dataclasses import dataclass
from pathlib import Path

from .texture import WIDTH_CLASSES

TEXTURE_CLASSES = ("coarse", "fine")


class ConfigError(ValueError):
    """Bad config file or manifest; reported as a usage error."""


def read_config(path: str | Path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment, blank lines are skipped."""
    values: dict[str, str] = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or not key:
            raise ConfigError(f"{path}:{n}: expected 'key = value'")
        if key in values:
            raise ConfigError(f"{path}:{n}: duplicate key {key!r}")
        values[key] = value.strip()
    return values


def _convert(action: argparse.Action, text: str):
    if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
        lowered = text.lower()
        if lowered not in ("true", "false", "1", "0", "yes", "no"):
            raise ConfigError(f"{action.dest}: expected a boolean, got {text!r}")
        return lowered in ("true", "1", "yes")
    convert = action.type or str
    if action.choices is not None and convert(text) not in action.choices:
        raise ConfigError(f"{action.dest}: {text!r} is not one of {list(action.choices)}")
    return convert(text)


def apply_config(parser: argparse.ArgumentParser, values: dict[str, str]) -> None:
    """Install config values as parser defaults so command-line flags still win.

    Keys must name one of the parser's options; anything else is rejected.
    """
    actions = {a.dest: a for a in parser._actions if a.dest not in ("help", "config")}
    unknown = sorted(set(values) - set(actions))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    try:
        parser.set_defaults(**{k: _convert(actions[k], v) for k, v in values.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad config value: {exc}") from None


@dataclass
class ManifestEntry:
    image_path: Path
    clean_path: Path | None = None
    width_label: int | None = None
    texture_class: str | None = None

    @property
    def reference_path(self) -> Path:
        """The clean image if one is listed, else the image itself."""
        return self.clean_path or self.image_path


MANIFEST_FIELDS = ("image_path", "clean_path", "width_label", "texture_class")


def load_manifest(path: str | Path) -> list[ManifestEntry]:
    """Read a CSV manifest.

    With a header row naming ``image_path`` the columns are matched by name
    (any of ``clean_path``, ``width_label``, ``texture_class`` may follow);
    without one, each line is ``image_path, width_label``. Relative paths are
    resolved against the manifest's directory and must exist.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc.strerror}") from None
    rows = [r for r in csv.reader(line for line in text.splitlines() if line.strip() and not line.lstrip().startswith("#"))]
    if not rows:
        raise ConfigError(f"manifest {path} has no entries")
    header = [c.strip() for c in rows[0]]
    if "image_path" in header:
        unknown = set(header) - set(MANIFEST_FIELDS)
        if unknown:
            raise ConfigError(f"manifest {path}: unknown columns {sorted(unknown)}")
        records = [dict(zip(header, (c.strip() for c in r))) for r in rows[1:]]
    else:
        records = [dict(zip(("image_path", "width_label"), (c.strip() for c in r))) for r in rows]
    base = path.parent
    entries = []
    for n, rec in enumerate(records, 1):
        entry = ManifestEntry(image_path=_resolve(base, rec.get("image_path"), path, n))
        if rec.get("clean_path"):
            entry.clean_path = _resolve(base, rec["clean_path"], path, n)
        if rec.get("width_label"):
            try:
                entry.width_label = int(rec["width_label"])
            except ValueError:
                raise ConfigError(f"manifest {path} entry {n}: width_label {rec['width_label']!r} is not an integer") from None
            if entry.width_label not in WIDTH_CLASSES:
                raise ConfigError(f"manifest {path} entry {n}: width_label must be one of {list(WIDTH_CLASSES)}")
        if rec.get("texture_class"):
            if rec["texture_class"] not in TEXTURE_CLASSES:
                raise ConfigError(f"manifest {path} entry {n}: texture_class must be coarse or fine")
            entry.texture_class = rec["texture_class"]
        entries.append(entry)
    if not entries:
        raise ConfigError(f"manifest {path} has no entries")
    return entries


def _resolve(base: Path, value: str | None, manifest: Path, n: int) -> Path:
    if not value:
        raise ConfigError(f"manifest {manifest} entry {n}: missing image_path")
    p = Path(value)
    if not p.is_absolute():
        p = base / p
    if not p.exists():
        raise ConfigError(f"manifest {manifest} entry {n}: {value} does not exist")
    return p


def write_manifest(entries: list[ManifestEntry], path: str | Path) -> None:
    """Write entries with a header, paths relative to the manifest's directory where possible."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_FIELDS)
        for e in entries:
            def rel(p):
                if p is None:
                    return ""
                try:
                    return str(Path(p).resolve().relative_to(path.parent.resolve()))
                except ValueError:
                    return str(p)
            w.writerow([rel(e.image_path), rel(e.clean_path),
                        "" if e.width_label is None else e.width_label, e.texture_class or ""])
