"""On-disk dataset formats.

Primary format: a directory with ``manifest.json`` (geometry, split, label
map) and one binary container per subject. A container is an 8-byte
little-endian header length, a JSON header (subject id, window indices,
labels), then each window's modalities as contiguous little-endian float64
blocks in manifest order. A JSON-lines debug format mirrors the same content
as one window per line. Both round-trip without loss.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .datagen import Dataset, MultiModalWindow, SubjectSession
from .errors import ContractViolationError

DATASET_FORMAT = 1
LABEL_MAP = {"low": 0, "medium": 1, "high": 2}


def _subject_path(root: str, subject_id: str) -> str:
    return os.path.join(root, f"{subject_id}.mmw")


def save_dataset(ds: Dataset, root: str) -> None:
    os.makedirs(root, exist_ok=True)
    manifest = {
        "format": DATASET_FORMAT,
        "t_steps": ds.t_steps,
        "modalities": [[name, dim] for name, dim in ds.modalities],
        "label_map": LABEL_MAP,
        "train": [s.subject_id for s in ds.train],
        "test": [s.subject_id for s in ds.test],
    }
    with open(os.path.join(root, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    for session in ds.all_sessions():
        _save_session(session, ds, _subject_path(root, session.subject_id))


def _save_session(session: SubjectSession, ds: Dataset, path: str) -> None:
    header = {
        "subject_id": session.subject_id,
        "indices": [w.index for w in session.windows],
        "labels": [w.label for w in session.windows],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for w in session.windows:
            for name, _ in ds.modalities:
                fh.write(np.ascontiguousarray(w.features[name], dtype="<f8").tobytes())


def load_dataset(root: str) -> Dataset:
    manifest_path = os.path.join(root, "manifest.json")
    if not os.path.exists(manifest_path):
        raise ContractViolationError(f"no manifest.json under {root!r}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != DATASET_FORMAT:
        raise ContractViolationError("unsupported dataset format")
    modalities = [(str(n), int(d)) for n, d in manifest["modalities"]]
    t_steps = int(manifest["t_steps"])

    def load_split(ids: list[str]) -> list[SubjectSession]:
        return [_load_session(_subject_path(root, sid), t_steps, modalities) for sid in ids]

    return Dataset(t_steps, modalities, load_split(manifest["train"]), load_split(manifest["test"]))


def _load_session(path: str, t_steps: int, modalities: list[tuple[str, int]]) -> SubjectSession:
    with open(path, "rb") as fh:
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        block = fh.read()
    window_bytes = sum(t_steps * dim * 8 for _, dim in modalities)
    n = len(header["indices"])
    if len(block) != n * window_bytes:
        raise ContractViolationError(f"truncated subject container {path!r}")
    windows = []
    offset = 0
    for j in range(n):
        feats = {}
        for name, dim in modalities:
            count = t_steps * dim
            arr = np.frombuffer(block, dtype="<f8", count=count, offset=offset)
            feats[name] = arr.reshape(t_steps, dim).astype(np.float64)
            offset += count * 8
        windows.append(
            MultiModalWindow(
                header["subject_id"], int(header["indices"][j]), feats,
                None if header["labels"][j] is None else int(header["labels"][j]),
            )
        )
    return SubjectSession(header["subject_id"], windows)


# -- JSON-lines debug format ---------------------------------------------------

def save_dataset_jsonl(ds: Dataset, path: str) -> None:
    with open(path, "w") as fh:
        meta = {
            "format": DATASET_FORMAT,
            "t_steps": ds.t_steps,
            "modalities": [[n, d] for n, d in ds.modalities],
            "train": [s.subject_id for s in ds.train],
            "test": [s.subject_id for s in ds.test],
        }
        fh.write(json.dumps(meta, sort_keys=True) + "\n")
        for split, sessions in (("train", ds.train), ("test", ds.test)):
            for s in sessions:
                for w in s.windows:
                    record = {
                        "split": split,
                        "subject_id": w.subject_id,
                        "index": w.index,
                        "label": w.label,
                        "features": {n: w.features[n].tolist() for n, _ in ds.modalities},
                    }
                    fh.write(json.dumps(record, sort_keys=True) + "\n")


def load_dataset_jsonl(path: str) -> Dataset:
    with open(path) as fh:
        meta = json.loads(fh.readline())
        if meta.get("format") != DATASET_FORMAT:
            raise ContractViolationError("unsupported dataset format")
        modalities = [(str(n), int(d)) for n, d in meta["modalities"]]
        by_subject: dict[str, SubjectSession] = {}
        for line in fh:
            rec = json.loads(line)
            feats = {
                n: np.asarray(rec["features"][n], dtype=np.float64) for n, _ in modalities
            }
            w = MultiModalWindow(
                rec["subject_id"], int(rec["index"]), feats,
                None if rec["label"] is None else int(rec["label"]),
            )
            by_subject.setdefault(rec["subject_id"], SubjectSession(rec["subject_id"], [])).windows.append(w)
    train = [by_subject[sid] for sid in meta["train"]]
    test = [by_subject[sid] for sid in meta["test"]]
    return Dataset(int(meta["t_steps"]), modalities, train, test)
