"""Checkpoint files: an ``.npz`` archive of named tensors plus a JSON header."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import FormatError
from .network import Model, build_model

FORMAT_VERSION = 1


def save_checkpoint(path, model: Model, extra: dict | None = None) -> None:
    header = {
        "format_version": FORMAT_VERSION,
        "architecture": model.architecture,
        "dtype": np.dtype(model.dtype).name,
        "extra": extra or {},
    }
    arrays = {k: np.asarray(v) for k, v in model.state_arrays().items()}
    with open(path, "wb") as fh:
        np.savez(fh, __header__=np.asarray(json.dumps(header, sort_keys=True)), **arrays)


def load_checkpoint(path) -> tuple[Model, dict]:
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"{path}: checkpoint missing")
    with np.load(path, allow_pickle=False) as z:
        if "__header__" not in z.files:
            raise FormatError(f"{path}: not a checkpoint (no header)")
        header = json.loads(str(z["__header__"]))
        if header.get("format_version") != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {header.get('format_version')}")
        arrays = {k: z[k] for k in z.files if k != "__header__"}
    model = build_model(header["architecture"])
    model.astype(np.dtype(header["dtype"]).type)
    model.load_state_arrays(arrays)
    return model, header
