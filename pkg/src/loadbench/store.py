"""Sharded corpus on disk with a fixed-width shuffled index.

Layout of a corpus directory::

    buildings.csv      id,dataset,building_type,latitude,longitude,region_id
    shards.csv         path,region_id,building_type,year_tag,n_buildings,n_hours
    shards/*.csv       timestamp,<building id>,<building id>,...

The index file starts with a 32-byte header ``STLFIDX v1 <count>`` (space
padded, newline terminated) followed by 19-byte lines ``SSSSSS BBBBB HHHHH``
(shard ordinal, building column, window start hour). Entry ``n`` therefore
lives at byte ``32 + 19 * n`` and is read with a single seek.
"""
from __future__ import annotations

import csv
import os
import threading
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .core import (
    CONTEXT_HOURS,
    HOUR,
    HORIZON_HOURS,
    WINDOW_HOURS,
    BuildingRecord,
    BuildingType,
    LoadSeries,
    Window,
)
from .ingest import format_timestamp, parse_timestamp, read_metadata_csv, write_metadata_csv
from .kvfile import read_keyvalue

HEADER_BYTES = 32
LINE_BYTES = 19
MAGIC = "STLFIDX v1"
INDEX_STRIDE = 24
VALIDATION_HOURS = 14 * 24

PathLike = Union[str, Path]


class StoreError(Exception):
    pass


class IntegrityError(StoreError):
    pass


@dataclass(frozen=True)
class Shard:
    path: Path
    region_id: str
    building_type: BuildingType
    year_tag: str
    n_buildings: int
    n_hours: int


@dataclass(frozen=True, order=True)
class IndexEntry:
    shard_ordinal: int
    building_column: int
    window_start_hour: int

    def encode(self) -> bytes:
        if not (0 <= self.shard_ordinal < 10**6 and 0 <= self.building_column < 10**5
                and 0 <= self.window_start_hour < 10**5):
            raise StoreError(f"index entry does not fit the fixed-width format: {self}")
        line = f"{self.shard_ordinal:06d} {self.building_column:05d} {self.window_start_hour:05d}\n"
        return line.encode("ascii")

    @classmethod
    def decode(cls, raw: bytes) -> "IndexEntry":
        if len(raw) != LINE_BYTES or raw[-1:] != b"\n" or raw[6:7] != b" " or raw[12:13] != b" ":
            raise IntegrityError(f"malformed index line: {raw!r}")
        try:
            return cls(int(raw[0:6]), int(raw[7:12]), int(raw[13:18]))
        except ValueError:
            raise IntegrityError(f"malformed index line: {raw!r}") from None


# -- shard files -------------------------------------------------------------

def write_shard(path: PathLike, start: datetime, columns: dict[str, np.ndarray]) -> None:
    ids = list(columns)
    matrix = np.column_stack([np.asarray(columns[i], dtype=float) for i in ids]) if ids else np.empty((0, 0))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["timestamp", *ids])
        for h in range(matrix.shape[0]):
            writer.writerow([format_timestamp(start + h * HOUR), *(repr(float(v)) for v in matrix[h])])


def read_shard(path: PathLike) -> tuple[datetime, list[str], np.ndarray]:
    """Return ``(start, building ids, values[n_hours, n_buildings])``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IntegrityError(f"{path}: empty shard") from None
        if not header or header[0] != "timestamp":
            raise IntegrityError(f"{path}: first column must be 'timestamp'")
        rows = list(reader)
    if not rows:
        raise IntegrityError(f"{path}: shard has no rows")
    start = parse_timestamp(rows[0][0])
    try:
        matrix = np.array([[float(v) for v in r[1:]] for r in rows], dtype=float)
    except ValueError as exc:
        raise IntegrityError(f"{path}: {exc}") from None
    if matrix.shape[1] != len(header) - 1:
        raise IntegrityError(f"{path}: ragged shard rows")
    return start, header[1:], matrix


CATALOG_COLUMNS = ("path", "region_id", "building_type", "year_tag", "n_buildings", "n_hours")


def write_catalog(corpus_dir: PathLike, shards: Sequence[Shard]) -> None:
    corpus_dir = Path(corpus_dir)
    with open(corpus_dir / "shards.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CATALOG_COLUMNS)
        for s in shards:
            rel = os.path.relpath(s.path, corpus_dir)
            writer.writerow([rel, s.region_id, s.building_type.value, s.year_tag, s.n_buildings, s.n_hours])


def read_catalog(corpus_dir: PathLike) -> list[Shard]:
    corpus_dir = Path(corpus_dir)
    shards = []
    with open(corpus_dir / "shards.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            shards.append(
                Shard(
                    path=corpus_dir / row["path"],
                    region_id=row["region_id"],
                    building_type=BuildingType.parse(row["building_type"]),
                    year_tag=row["year_tag"],
                    n_buildings=int(row["n_buildings"]),
                    n_hours=int(row["n_hours"]),
                )
            )
    return shards


def validate_shard(shard: Shard) -> None:
    _, ids, matrix = read_shard(shard.path)
    if len(ids) != shard.n_buildings or matrix.shape[0] != shard.n_hours:
        raise IntegrityError(
            f"{shard.path}: catalog says {shard.n_buildings} buildings x {shard.n_hours} h, "
            f"file has {len(ids)} x {matrix.shape[0]}"
        )


@dataclass
class Corpus:
    """A loaded corpus directory: building metadata and shard series."""

    root: Path
    buildings: dict[str, BuildingRecord]
    shards: list[Shard]

    @classmethod
    def open(cls, root: PathLike) -> "Corpus":
        root = Path(root)
        if not (root / "buildings.csv").exists() or not (root / "shards.csv").exists():
            raise StoreError(f"{root}: not a corpus directory (need buildings.csv and shards.csv)")
        records = {r.id: r for r in read_metadata_csv(root / "buildings.csv")}
        return cls(root, records, read_catalog(root))

    def iter_series(self) -> Iterable[tuple[BuildingRecord, LoadSeries]]:
        """Yield every building's series in building-id order."""
        found: dict[str, LoadSeries] = {}
        for shard in self.shards:
            start, ids, matrix = read_shard(shard.path)
            for col, bid in enumerate(ids):
                found[bid] = LoadSeries(start, matrix[:, col])
        for bid in sorted(found):
            if bid not in self.buildings:
                raise IntegrityError(f"building {bid!r} present in shards but not in buildings.csv")
            yield self.buildings[bid], found[bid]


def write_corpus(out_dir: Union[str, Path], buildings: list[tuple[BuildingRecord, LoadSeries]]) -> list[Shard]:
    """Write buildings grouped into one shard per (region, building type, year)."""
    out_dir = Path(out_dir)
    (out_dir / "shards").mkdir(parents=True, exist_ok=True)
    groups: dict[tuple, list[tuple[BuildingRecord, LoadSeries]]] = {}
    for record, series in buildings:
        key = (record.region_id, record.building_type.value, series.start.year, series.start, len(series))
        groups.setdefault(key, []).append((record, series))
    shards = []
    for key in sorted(groups, key=lambda k: (k[0], k[1], k[2], k[3].isoformat(), k[4])):
        members = groups[key]
        region, kind, year, start, n_hours = key
        name = f"{region}__{kind}__{year}"
        if any(s.path.stem == name for s in shards):
            name = f"{name}__{len(shards)}"
        path = out_dir / "shards" / f"{name}.csv"
        write_shard(path, start, {r.id: s.values for r, s in members})
        shards.append(Shard(path, region, BuildingType(kind), str(year), len(members), n_hours))
    write_metadata_csv(out_dir / "buildings.csv", sorted((r for r, _ in buildings), key=lambda r: r.id))
    write_catalog(out_dir, shards)
    return shards


# -- index -------------------------------------------------------------------

def enumerate_entries(
    shards: Sequence[Shard],
    holdout_hours: int = VALIDATION_HOURS,
    heldout_regions: Iterable[str] = (),
) -> list[IndexEntry]:
    """All stride-24 windows that avoid the withheld tail of each shard."""
    heldout = set(heldout_regions)
    entries = []
    for ordinal, shard in enumerate(shards):
        if shard.region_id in heldout:
            continue
        usable = shard.n_hours - holdout_hours
        if usable < WINDOW_HOURS:
            continue
        starts = range(0, usable - WINDOW_HOURS + 1, INDEX_STRIDE)
        for col in range(shard.n_buildings):
            entries.extend(IndexEntry(ordinal, col, h) for h in starts)
    return entries


def _header(count: int) -> bytes:
    text = f"{MAGIC} {count}"
    if len(text) > HEADER_BYTES - 1:
        raise StoreError("entry count too large for header")
    return (text.ljust(HEADER_BYTES - 1) + "\n").encode("ascii")


def build_index(
    shards: Sequence[Shard],
    seed: int,
    index_path: PathLike,
    *,
    holdout_hours: int = VALIDATION_HOURS,
    heldout_regions: Iterable[str] = (),
) -> int:
    """Write a shuffled index plus ``<index_path>.manifest``; return the entry count."""
    heldout_regions = sorted(set(heldout_regions))
    entries = enumerate_entries(shards, holdout_hours, heldout_regions)
    order = np.random.default_rng(seed).permutation(len(entries))
    index_path = Path(index_path)
    with open(index_path, "wb") as fh:
        fh.write(_header(len(entries)))
        fh.write(b"".join(entries[i].encode() for i in order))
    write_manifest(manifest_path(index_path), shards, seed, len(entries), holdout_hours, heldout_regions)
    return len(entries)


def manifest_path(index_path: PathLike) -> Path:
    return Path(str(index_path) + ".manifest")


def write_manifest(path: Path, shards, seed, count, holdout_hours, heldout_regions) -> None:
    base = path.parent
    lines = [
        f"format = {MAGIC}",
        f"seed = {seed}",
        f"entries = {count}",
        f"holdout_hours = {holdout_hours}",
        f"heldout_regions = {','.join(heldout_regions)}",
        f"shards = {len(shards)}",
    ]
    for i, s in enumerate(shards):
        key = f"shard.{i:06d}"
        lines += [
            f"{key}.path = {os.path.relpath(s.path, base)}",
            f"{key}.region_id = {s.region_id}",
            f"{key}.building_type = {s.building_type.value}",
            f"{key}.year_tag = {s.year_tag}",
            f"{key}.n_buildings = {s.n_buildings}",
            f"{key}.n_hours = {s.n_hours}",
        ]
    path.write_text("\n".join(lines) + "\n")


def read_manifest(path: PathLike) -> tuple[dict[str, str], list[Shard]]:
    path = Path(path)
    try:
        kv = read_keyvalue(path)
        shards = []
        for i in range(int(kv["shards"])):
            key = f"shard.{i:06d}"
            shards.append(
                Shard(
                    path=path.parent / kv[f"{key}.path"],
                    region_id=kv[f"{key}.region_id"],
                    building_type=BuildingType.parse(kv[f"{key}.building_type"]),
                    year_tag=kv[f"{key}.year_tag"],
                    n_buildings=int(kv[f"{key}.n_buildings"]),
                    n_hours=int(kv[f"{key}.n_hours"]),
                )
            )
    except (KeyError, ValueError) as exc:
        raise IntegrityError(f"{path}: bad manifest ({exc})") from None
    return kv, shards


class IndexReader:
    """Random access to a built index.

    Each :meth:`fetch` performs one seek and one fixed-size read on the index
    file; ``reads`` and ``bytes_read`` count that traffic. Shards are parsed
    lazily and cached, so concurrent readers share the decoded arrays.
    """

    def __init__(self, index_path: PathLike):
        self.path = Path(index_path)
        self.manifest, self.shards = read_manifest(manifest_path(self.path))
        self._fh = open(self.path, "rb")
        self._lock = threading.Lock()
        self._cache: dict[int, tuple[datetime, list[str], np.ndarray]] = {}
        self.reads = 0
        self.bytes_read = 0
        header = self._read_at(0, HEADER_BYTES)
        text = header.decode("ascii", errors="replace").rstrip()
        if not text.startswith(MAGIC + " ") or header[-1:] != b"\n":
            raise IntegrityError(f"{self.path}: bad index header")
        try:
            self.count = int(text[len(MAGIC) + 1:])
        except ValueError:
            raise IntegrityError(f"{self.path}: bad entry count in header") from None
        expected = HEADER_BYTES + LINE_BYTES * self.count
        actual = os.fstat(self._fh.fileno()).st_size
        if actual != expected:
            raise IntegrityError(f"{self.path}: size {actual} bytes, header implies {expected}")
        if str(self.count) != self.manifest.get("entries"):
            raise IntegrityError(f"{self.path}: entry count disagrees with manifest")

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __len__(self) -> int:
        return self.count

    def _read_at(self, offset: int, size: int) -> bytes:
        with self._lock:
            self._fh.seek(offset)
            raw = self._fh.read(size)
            self.reads += 1
            self.bytes_read += len(raw)
        if len(raw) != size:
            raise IntegrityError(f"{self.path}: short read at byte {offset}")
        return raw

    def entry(self, n: int) -> IndexEntry:
        if not 0 <= n < self.count:
            raise IndexError(f"index entry {n} out of range [0, {self.count})")
        return IndexEntry.decode(self._read_at(HEADER_BYTES + n * LINE_BYTES, LINE_BYTES))

    def _shard(self, ordinal: int):
        if ordinal >= len(self.shards):
            raise IntegrityError(f"shard ordinal {ordinal} not in manifest")
        with self._lock:
            cached = self._cache.get(ordinal)
        if cached is None:
            shard = self.shards[ordinal]
            cached = read_shard(shard.path)
            _, ids, matrix = cached
            if len(ids) != shard.n_buildings or matrix.shape[0] != shard.n_hours:
                raise IntegrityError(f"{shard.path}: shard shape disagrees with manifest")
            with self._lock:
                self._cache[ordinal] = cached
        return cached

    def fetch(self, n: int, buildings: Optional[dict[str, BuildingRecord]] = None) -> Window:
        e = self.entry(n)
        start, ids, matrix = self._shard(e.shard_ordinal)
        if e.building_column >= len(ids) or e.window_start_hour + WINDOW_HOURS > matrix.shape[0]:
            raise IntegrityError(f"entry {n} points outside its shard: {e}")
        h = e.window_start_hour
        values = matrix[h:h + WINDOW_HOURS, e.building_column]
        t0 = start + h * HOUR
        record = buildings.get(ids[e.building_column]) if buildings else None
        return Window(
            LoadSeries(t0, values[:CONTEXT_HOURS]),
            LoadSeries(t0 + CONTEXT_HOURS * HOUR, values[CONTEXT_HOURS:CONTEXT_HOURS + HORIZON_HOURS]),
            record,
        )

    def building_id(self, n: int) -> str:
        e = self.entry(n)
        return self._shard(e.shard_ordinal)[1][e.building_column]


def fetch(index_path: PathLike, n: int) -> Window:
    with IndexReader(index_path) as reader:
        return reader.fetch(n)
