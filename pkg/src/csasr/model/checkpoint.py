"""Checkpoints: an ``.npz`` container of named float64 tensors plus a JSON header.

The header entry ``__meta__`` records format version, model kind, variant,
architecture config and the full text codec (BPE merges and vocabulary), so a
checkpoint is self-describing and loads without any side files.
"""
from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np
import torch

from ..corpus import TextCodec
from .networks import LmConfig, NnlmModel, TransducerConfig, TransducerModel

FORMAT = "csasr-ckpt"
VERSION = 1


def save_model(path: str | Path, model: TransducerModel | NnlmModel) -> None:
    kind = "transducer" if isinstance(model, TransducerModel) else "nnlm"
    meta = {
        "format": FORMAT,
        "version": VERSION,
        "kind": kind,
        "variant": model.config.variant if kind == "transducer" else None,
        "config": model.config.to_dict(),
        "codec": model.codec.to_dict(),
    }
    tensors = {name: t.detach().numpy().copy() for name, t in model.state_dict().items()}
    buf = io.BytesIO()
    np.savez(buf, __meta__=np.array(json.dumps(meta, ensure_ascii=False)), **tensors)
    Path(path).write_bytes(buf.getvalue())


def load_model(path: str | Path) -> TransducerModel | NnlmModel:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        if meta.get("format") != FORMAT or meta.get("version") != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint header {meta.get('format')} v{meta.get('version')}")
        state = {k: torch.from_numpy(z[k].copy()) for k in z.files if k != "__meta__"}
    codec = TextCodec.from_dict(meta["codec"])
    if meta["kind"] == "transducer":
        model = TransducerModel(codec, TransducerConfig(**meta["config"]))
    else:
        model = NnlmModel(codec, LmConfig(**meta["config"]))
    model.load_state_dict(state)
    model.eval()
    return model
