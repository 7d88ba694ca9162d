"""Prompt templates for building zero-shot text classifiers.

Templates are instantiated with the human-readable class name
(underscores become spaces). A templates file is one template per line,
each containing a single `{}` placeholder; blank lines and `#` comments
are ignored.
"""

from __future__ import annotations

from pathlib import Path

DEFAULT_TEMPLATES = [
    "a photo of a {}.",
    "a bad photo of a {}.",
    "a photo of many {}.",
    "a photo of the large {}.",
    "a photo of the small {}.",
    "a cropped photo of a {}.",
    "a bright photo of a {}.",
    "a dark photo of a {}.",
]


def load_templates(path: str | Path) -> list[str]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "{}" not in line:
            raise ValueError(f"template missing {{}} placeholder: {line!r}")
        out.append(line)
    if not out:
        raise ValueError(f"no templates found in {path}")
    return out


def readable(class_name: str) -> str:
    return class_name.replace("_", " ")
