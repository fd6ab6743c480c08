"""``key = value`` text files used for manifests, configs and parameters."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Union


def read_keyvalue(path: Union[str, Path]) -> dict[str, str]:
    """Parse ``key = value`` lines; blank lines and ``#`` comments are skipped."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def write_keyvalue(path: Union[str, Path], items: Mapping[str, object]) -> None:
    Path(path).write_text("".join(f"{k} = {v}\n" for k, v in items.items()))
