"""Utterance datasets and their JSON-lines format.

Each record is ``{"utt_id", "features", "transcript", "lang"}`` where
``features`` is an inline T x D matrix or a path to a ``.npy`` file.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class Utterance:
    utt_id: str
    features: np.ndarray
    transcript: str = ""
    lang: str = ""

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        if f.ndim != 2 or f.shape[0] < 1:
            raise ValueError(f"{self.utt_id}: features must be a non-empty T x D matrix")
        if not np.all(np.isfinite(f)):
            raise ValueError(f"{self.utt_id}: non-finite feature values")
        object.__setattr__(self, "features", f)

    def with_transcript(self, text: str) -> "Utterance":
        return replace(self, transcript=text)

    def to_record(self) -> dict:
        return {
            "utt_id": self.utt_id,
            "features": self.features.tolist(),
            "transcript": self.transcript,
            "lang": self.lang,
        }

    @classmethod
    def from_record(cls, rec: dict, base: Path | None = None) -> "Utterance":
        feats = rec["features"]
        if isinstance(feats, str):
            path = Path(feats)
            if base is not None and not path.is_absolute():
                path = base / path
            feats = np.load(path)
        return cls(rec["utt_id"], np.asarray(feats, dtype=np.float64), rec.get("transcript", ""), rec.get("lang", ""))


def write_dataset(path: str | Path, utts: Sequence[Utterance]) -> None:
    # repr round-trips float64 exactly
    with open(path, "w", encoding="utf-8") as fh:
        for u in utts:
            fh.write(json.dumps(u.to_record(), ensure_ascii=False) + "\n")


def read_dataset(path: str | Path) -> list[Utterance]:
    path = Path(path)
    out = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(Utterance.from_record(json.loads(line), base=path.parent))
    return out


def split_by_lang(utts: Sequence[Utterance]) -> dict[str, list[Utterance]]:
    pools: dict[str, list[Utterance]] = {}
    for u in utts:
        pools.setdefault(u.lang, []).append(u)
    return pools
