"""Persistent, append-ordered cache of prior edits.

Layout under the cache root::

    manifest.jsonl          header line + one JSON object per entry
    keys/<id>.traj|.emb     retrieval key (camera trajectory or source-frame embeddings)
    payloads/<id>.bin       opaque latent payload (optional)

Every write goes to a temporary file that is renamed into place, and the
manifest is renamed last, so readers either see an entry completely or not
at all. Files left behind by an interrupted insert are removed by :meth:`MemoryCache.gc`.
"""

from __future__ import annotations

import json
import os
import shutil
import tempfile
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from filelock import FileLock

from .errors import CacheError, CacheLoadError, FormatError, InvalidArgument
from .features import SegmentDescriptor, descriptor, read_embeddings, write_embeddings
from .geometry import CameraTrajectory, format_trajectory, read_trajectory

MANIFEST = "manifest.jsonl"
MANIFEST_FORMAT = "memctx-cache"
MANIFEST_VERSION = 1

NOVEL_VIEW = "novel_view"
TEXT_EDIT = "text_edit"
TASKS = (NOVEL_VIEW, TEXT_EDIT)
_KEY_SUFFIX = {NOVEL_VIEW: ".traj", TEXT_EDIT: ".emb"}


@dataclass(frozen=True)
class CacheEntry:
    entry_id: int
    task: str
    latent_shape: tuple
    key: Union[CameraTrajectory, SegmentDescriptor]
    created_seq: int
    key_ref: str
    payload_ref: Optional[str] = None

    def to_record(self) -> dict:
        return {
            "entry_id": self.entry_id,
            "task": self.task,
            "latent_shape": list(self.latent_shape),
            "key_ref": self.key_ref,
            "payload_ref": self.payload_ref,
            "created_seq": self.created_seq,
        }


@dataclass(frozen=True)
class CacheSnapshot:
    """Immutable view of the cache at one point in time."""

    root: Path
    task: Optional[str]
    manifest_version: int
    entries: tuple

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def get(self, entry_id: int) -> CacheEntry:
        for e in self.entries:
            if e.entry_id == entry_id:
                return e
        raise KeyError(entry_id)


def _check_shape(shape) -> tuple:
    shape = tuple(int(x) for x in shape)
    if len(shape) != 4 or any(x <= 0 for x in shape):
        raise InvalidArgument(f"latent shape must be four positive counts (F, H, W, C), got {shape}")
    return shape


def _atomic_write(path: Path, data: bytes, durable: bool) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            if durable:
                fh.flush()
                os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def _header(task, count) -> str:
    return json.dumps(
        {"format": MANIFEST_FORMAT, "manifest_version": MANIFEST_VERSION, "task": task, "entries": count},
        sort_keys=True,
    )


def _render_manifest(task, entries) -> str:
    lines = [_header(task, len(entries))]
    lines += [json.dumps(e.to_record(), sort_keys=True) for e in entries]
    return "\n".join(lines) + "\n"


def _read_key(root: Path, task: str, key_ref: str):
    path = root / key_ref
    if task == NOVEL_VIEW:
        return read_trajectory(path)
    return descriptor(read_embeddings(path))


def _parse_manifest(root: Path, text_bytes: bytes):
    path = root / MANIFEST
    if not text_bytes:
        raise CacheLoadError(path, 0, "empty manifest")
    offset = 0
    records = []
    for raw in text_bytes.splitlines(keepends=True):
        if not raw.endswith(b"\n"):
            raise CacheLoadError(path, offset, "truncated record (missing newline)")
        try:
            obj = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            pos = getattr(exc, "pos", getattr(exc, "start", 0))
            raise CacheLoadError(path, offset + pos, f"malformed record: {exc}") from None
        if not isinstance(obj, dict):
            raise CacheLoadError(path, offset, "record is not a JSON object")
        records.append((offset, obj))
        offset += len(raw)

    hdr_off, hdr = records[0]
    if hdr.get("format") != MANIFEST_FORMAT:
        raise CacheLoadError(path, hdr_off, f"not a {MANIFEST_FORMAT} manifest")
    version = hdr.get("manifest_version")
    if not isinstance(version, int) or version < 1:
        raise CacheLoadError(path, hdr_off, f"bad manifest_version {version!r}")
    task = hdr.get("task")
    if task is not None and task not in TASKS:
        raise CacheLoadError(path, hdr_off, f"unknown task {task!r}")
    body = records[1:]
    if hdr.get("entries") != len(body):
        raise CacheLoadError(path, offset, f"header declares {hdr.get('entries')} entries, found {len(body)}")

    entries = []
    last_seq = 0
    seen = set()
    for off, rec in body:
        try:
            entry_task = rec["task"]
            if entry_task != task:
                raise ValueError(f"entry task {entry_task!r} differs from cache task {task!r}")
            entry_id = int(rec["entry_id"])
            seq = int(rec["created_seq"])
            if entry_id in seen:
                raise ValueError(f"duplicate entry_id {entry_id}")
            if seq <= last_seq:
                raise ValueError("entries out of created_seq order")
            key = _read_key(root, entry_task, rec["key_ref"])
            entries.append(
                CacheEntry(
                    entry_id=entry_id,
                    task=entry_task,
                    latent_shape=_check_shape(rec["latent_shape"]),
                    key=key,
                    created_seq=seq,
                    key_ref=rec["key_ref"],
                    payload_ref=rec.get("payload_ref"),
                )
            )
        except KeyError as exc:
            raise CacheLoadError(path, off, f"missing field {exc}") from None
        except (ValueError, TypeError, OSError, FormatError) as exc:
            raise CacheLoadError(path, off, str(exc)) from None
        seen.add(entry_id)
        last_seq = seq
    return version, task, tuple(entries)


class MemoryCache:
    """Single-writer, many-reader store of prior edits."""

    def __init__(self, root, task, manifest_version, entries, durable=True):
        self.root = Path(root)
        self._task = task
        self._version = manifest_version
        self._entries = entries
        self._durable = durable
        self._lock = threading.Lock()
        self._file_lock = FileLock(str(self.root / ".lock"))

    # -- construction --------------------------------------------------------

    @classmethod
    def create(cls, root, durable=True) -> "MemoryCache":
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        if (root / MANIFEST).exists():
            raise CacheError(f"{root / MANIFEST} already exists")
        (root / "keys").mkdir(exist_ok=True)
        (root / "payloads").mkdir(exist_ok=True)
        _atomic_write(root / MANIFEST, _render_manifest(None, ()).encode(), durable)
        return cls(root, None, MANIFEST_VERSION, (), durable)

    @classmethod
    def open(cls, root, create=False, durable=True) -> "MemoryCache":
        root = Path(root)
        if create and not (root / MANIFEST).exists():
            return cls.create(root, durable)
        return load(root, durable=durable)

    # -- reading -------------------------------------------------------------

    @property
    def task(self):
        return self._task

    @property
    def entries(self) -> tuple:
        return self._entries

    def __len__(self):
        return len(self._entries)

    def snapshot(self) -> CacheSnapshot:
        # entry tuples are replaced, never mutated, so sharing them is safe
        return CacheSnapshot(self.root, self._task, self._version, self._entries)

    # -- writing -------------------------------------------------------------

    def _refresh(self) -> None:
        """Pick up entries appended by another process since we last looked."""
        _, task, entries = _parse_manifest(self.root, (self.root / MANIFEST).read_bytes())
        if entries[: len(self._entries)] != self._entries:
            raise CacheError(f"{self.root / MANIFEST} was rewritten underneath this handle")
        self._task, self._entries = task, entries

    def insert(self, latent_shape, key, payload=None) -> CacheEntry:
        """Append an edit. ``key`` is a CameraTrajectory (novel-view task) or a
        (frames, dim) array of source-segment embeddings (text-edit task).
        ``payload`` is raw bytes or a path to copy; it is stored unread."""
        shape = _check_shape(latent_shape)
        if isinstance(key, CameraTrajectory):
            task = NOVEL_VIEW
        else:
            task = TEXT_EDIT
            key = np.asarray(key, dtype=np.float32)
            if key.ndim != 2 or 0 in key.shape:
                raise InvalidArgument("text-edit keys are (frames, dim) embedding arrays")
        with self._lock, self._file_lock:
            self._refresh()
            if self._task is not None and self._task != task:
                raise InvalidArgument(f"cache holds {self._task} entries, cannot insert a {task} entry")
            entry_id = max((e.entry_id for e in self._entries), default=0) + 1
            seq = max((e.created_seq for e in self._entries), default=0) + 1
            key_ref = f"keys/{entry_id}{_KEY_SUFFIX[task]}"
            payload_ref = f"payloads/{entry_id}.bin" if payload is not None else None
            written = []
            try:
                key_path = self.root / key_ref
                key_path.parent.mkdir(exist_ok=True)
                if task == NOVEL_VIEW:
                    _atomic_write(key_path, format_trajectory(key).encode(), self._durable)
                    stored_key = key
                else:
                    tmp = key_path.with_name(key_path.name + ".part")
                    write_embeddings(tmp, key)
                    os.replace(tmp, key_path)
                    stored_key = descriptor(key)
                written.append(key_path)
                if payload is not None:
                    pay_path = self.root / payload_ref
                    pay_path.parent.mkdir(exist_ok=True)
                    if isinstance(payload, (bytes, bytearray)):
                        _atomic_write(pay_path, bytes(payload), self._durable)
                    else:
                        tmp = pay_path.with_name(pay_path.name + ".part")
                        shutil.copyfile(payload, tmp)
                        os.replace(tmp, pay_path)
                    written.append(pay_path)
                entry = CacheEntry(entry_id, task, shape, stored_key, seq, key_ref, payload_ref)
                entries = self._entries + (entry,)
                _atomic_write(self.root / MANIFEST, _render_manifest(task, entries).encode(), self._durable)
            except OSError as exc:
                for p in written:
                    try:
                        p.unlink()
                    except OSError:
                        pass
                raise CacheError(f"insert into {self.root} failed: {exc}") from exc
            self._task, self._entries = task, entries
            return entry

    def gc(self) -> list:
        """Delete key/payload/temp files the manifest does not reference."""
        with self._lock, self._file_lock:
            self._refresh()
            keep = {self.root / MANIFEST}
            for e in self._entries:
                keep.add(self.root / e.key_ref)
                if e.payload_ref:
                    keep.add(self.root / e.payload_ref)
            removed = []
            for sub in ("keys", "payloads", "."):
                d = self.root / sub
                if not d.is_dir():
                    continue
                for p in sorted(d.iterdir()):
                    if not p.is_file() or p.name == ".lock":
                        continue
                    if sub == "." and not p.name.endswith((".tmp", ".part")):
                        continue
                    if p not in keep:
                        p.unlink()
                        removed.append(p)
            return removed


def load(root, durable=True) -> MemoryCache:
    """Read a cache from disk; any damage raises :class:`CacheLoadError`."""
    root = Path(root)
    path = root / MANIFEST
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        raise CacheLoadError(path, 0, "manifest not found") from None
    except OSError as exc:
        raise CacheLoadError(path, 0, str(exc)) from None
    version, task, entries = _parse_manifest(root, data)
    return MemoryCache(root, task, version, entries, durable)
