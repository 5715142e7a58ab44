"""Run configuration: TOML files with one table per subcommand, overridden by flags.

Example::

    seed = 3
    out = "runs/demo"

    [train]
    epochs = 50
    learning_rate = 0.002

    [attack]
    method = "sap"
    kernel_sizes = [5, 7, 11, 15, 19]
"""

from __future__ import annotations

from pathlib import Path

import tomli
import tomli_w

GLOBAL_KEYS = ("seed", "out")


def load_config(path) -> dict:
    with open(path, "rb") as fh:
        return tomli.load(fh)


def resolve(command: str, defaults: dict, file_cfg: dict | None, flags: dict) -> dict:
    """defaults < top-level file keys < ``[command]`` table < explicit flags."""
    out = dict(defaults)
    file_cfg = file_cfg or {}
    for key in GLOBAL_KEYS:
        if key in file_cfg:
            out[key] = file_cfg[key]
    section = file_cfg.get(command, {})
    if not isinstance(section, dict):
        raise ValueError(f"config entry [{command}] must be a table")
    out.update({k.replace("-", "_"): v for k, v in section.items()})
    out.update({k: v for k, v in flags.items() if v is not None})
    return out


def write_resolved(path, command: str, cfg: dict) -> Path:
    """Serialize the resolved settings of one run as TOML."""
    clean = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(cfg.items()) if v is not None}
    path = Path(path)
    path.write_text(tomli_w.dumps({command: clean}), encoding="utf-8")
    return path
