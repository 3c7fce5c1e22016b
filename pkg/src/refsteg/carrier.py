"""Carrier locations, resolution and the local content corpus.

A location is a URI plus an optional list of byte segments in the fragment::

    file:///data/img.ppm#10-15,0-5
    https://host/photo.jpg#0-4096
    corpus://<sha256-hex>

Segments are end-exclusive, applied in the listed order and may overlap or
run backwards. Nothing here ever writes to a carrier source.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import secrets
import tempfile
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable
from urllib.parse import quote, unquote

import numpy as np
from filelock import FileLock

from .errors import (
    CorpusExhausted,
    FetchFailed,
    InvalidLocation,
    InvalidRule,
    IoFailure,
    NotFound,
    SegmentOutOfBounds,
)

log = logging.getLogger(__name__)

SCHEMES = ("file", "http", "https", "corpus")
CACHE_ENV = "REFSTEG_CACHE_DIR"


@dataclass(frozen=True)
class SecretLocation:
    scheme: str
    address: str
    segments: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise InvalidLocation(f"unsupported scheme {self.scheme!r}")
        segs = tuple((int(s), int(e)) for s, e in self.segments)
        for s, e in segs:
            if not 0 <= s < e:
                raise InvalidLocation(f"segment ({s}, {e}) needs 0 <= start < end")
        object.__setattr__(self, "segments", segs)

    @classmethod
    def parse(cls, uri: str) -> "SecretLocation":
        base, _, frag = uri.partition("#")
        scheme, sep, rest = base.partition("://")
        if not sep:
            raise InvalidLocation(f"not a location URI: {uri!r}")
        scheme = scheme.lower()
        if scheme == "file":
            address = unquote(rest)
            if not address.startswith("/"):
                raise InvalidLocation("file locations must be absolute: file:///path")
        elif scheme == "corpus":
            address = rest.strip("/").lower()
        else:
            address = base
        segments = []
        if frag:
            for piece in frag.split(","):
                try:
                    s, e = piece.split("-")
                    segments.append((int(s), int(e)))
                except ValueError:
                    raise InvalidLocation(f"bad segment {piece!r} in {uri!r}") from None
        return cls(scheme, address, tuple(segments))

    def __str__(self) -> str:
        if self.scheme == "file":
            base = "file://" + quote(self.address)
        elif self.scheme == "corpus":
            base = "corpus://" + self.address
        else:
            base = self.address
        if self.segments:
            base += "#" + ",".join(f"{s}-{e}" for s, e in self.segments)
        return base

    @property
    def size(self) -> int | None:
        if not self.segments:
            return None
        return sum(e - s for s, e in self.segments)


@dataclass(frozen=True)
class CarrierRecord:
    location: SecretLocation
    data: bytes = field(repr=False)
    digest: str = ""

    def __post_init__(self):
        if not self.digest:
            object.__setattr__(self, "digest", hashlib.sha256(self.data).hexdigest())


def slice_segments(blob: bytes, segments: Iterable[tuple[int, int]], name: str = "resource") -> bytes:
    segments = tuple(segments)
    if not segments:
        return bytes(blob)
    out = []
    for s, e in segments:
        if e > len(blob):
            raise SegmentOutOfBounds(f"segment ({s}, {e}) beyond {len(blob)}-byte {name}")
        out.append(blob[s:e])
    return b"".join(out)


# ---------------------------------------------------------------------------
# corpus


class Corpus:
    """Content-addressed store: ``objects/<sha256>`` files plus ``catalog.json``."""

    def __init__(self, root):
        self.root = Path(root)
        self.objects = self.root / "objects"
        self.catalog_path = self.root / "catalog.json"
        self._lock = FileLock(str(self.root / ".lock"))

    def _ensure(self):
        try:
            self.objects.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise IoFailure(f"cannot create corpus at {self.root}: {exc}") from exc

    def add(self, source, name: str | None = None) -> str:
        """Store a file path or raw bytes; identical content yields the same id."""
        if isinstance(source, (bytes, bytearray, memoryview)):
            data = bytes(source)
            name = name or "<bytes>"
        else:
            try:
                data = Path(source).read_bytes()
            except OSError as exc:
                raise IoFailure(f"cannot read {source}: {exc}") from exc
            name = name or str(source)
        cid = hashlib.sha256(data).hexdigest()
        self._ensure()
        try:
            with self._lock:
                target = self.objects / cid
                if not target.exists():
                    fd, tmp = tempfile.mkstemp(dir=self.objects)
                    with os.fdopen(fd, "wb") as fh:
                        fh.write(data)
                    os.replace(tmp, target)
                catalog = self._read_catalog()
                if cid not in catalog:
                    catalog[cid] = {"size": len(data), "name": name, "added": time.time()}
                    self._write_catalog(catalog)
        except OSError as exc:
            raise IoFailure(f"corpus write failed: {exc}") from exc
        return cid

    def _read_catalog(self) -> dict:
        if not self.catalog_path.exists():
            return {}
        with open(self.catalog_path, encoding="utf-8") as fh:
            return json.load(fh)

    def _write_catalog(self, catalog: dict):
        fd, tmp = tempfile.mkstemp(dir=self.root)
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(catalog, fh, indent=1, sort_keys=True)
        os.replace(tmp, self.catalog_path)

    def list(self) -> dict:
        try:
            return self._read_catalog()
        except (OSError, ValueError) as exc:
            raise IoFailure(f"cannot read corpus catalog: {exc}") from exc

    def path(self, cid: str) -> Path:
        return self.objects / cid.lower()

    def read(self, cid: str) -> bytes:
        try:
            return self.path(cid).read_bytes()
        except FileNotFoundError:
            raise NotFound(f"corpus object {cid} not found in {self.root}") from None
        except OSError as exc:
            raise IoFailure(str(exc)) from exc

    def __len__(self):
        return len(self.list())


@dataclass
class SelectionRule:
    block_size: int
    source_filter: Callable[[str, dict], bool] | None = None

    def __post_init__(self):
        if self.block_size < 1:
            raise InvalidRule("block size must be >= 1")


def select_carrier(corpus: Corpus, rule: SelectionRule | int, rng=None) -> CarrierRecord:
    """Pick a random K-byte block from a random corpus entry that can hold it."""
    if isinstance(rule, int):
        rule = SelectionRule(rule)
    rng = rng if rng is not None else np.random.default_rng(secrets.randbits(64))
    k = rule.block_size
    entries = [
        (cid, meta)
        for cid, meta in sorted(corpus.list().items())
        if meta["size"] >= k and (rule.source_filter is None or rule.source_filter(cid, meta))
    ]
    if not entries:
        raise CorpusExhausted(f"no corpus resource of at least {k} bytes")
    cid, meta = entries[int(rng.integers(len(entries)))]
    start = int(rng.integers(meta["size"] - k + 1))
    segments = () if k == meta["size"] else ((start, start + k),)
    loc = SecretLocation("corpus", cid, segments)
    return CarrierRecord(loc, slice_segments(corpus.read(cid), segments))


class CarrierSupplier:
    """Hands out distinct K-byte corpus blocks, safe under concurrent callers."""

    def __init__(self, corpus: Corpus, block_size: int, seed=None, source_filter=None, max_tries: int = 64):
        self.corpus = corpus
        self.rule = SelectionRule(block_size, source_filter)
        self.rng = np.random.default_rng(seed)
        self.max_tries = max_tries
        self._used: set[SecretLocation] = set()
        self._lock = threading.Lock()

    def __call__(self) -> CarrierRecord:
        with self._lock:
            for _ in range(self.max_tries):
                rec = select_carrier(self.corpus, self.rule, self.rng)
                if rec.location not in self._used:
                    self._used.add(rec.location)
                    return rec
        raise CorpusExhausted(f"no unused {self.rule.block_size}-byte block after {self.max_tries} draws")


# ---------------------------------------------------------------------------
# resolution


def default_cache_dir() -> Path:
    env = os.environ.get(CACHE_ENV)
    if env:
        return Path(env)
    return Path(os.environ.get("XDG_CACHE_HOME", Path.home() / ".cache")) / "refsteg"


class HttpFetcher:
    """Range-aware HTTP(S) fetcher with a read-through disk cache.

    Cache entries are keyed by URL plus byte range. Servers that ignore
    ``Range`` get one whole-resource fetch, which is cached and sliced.
    """

    def __init__(self, cache_dir=None, use_cache: bool = True, timeout: float = 30.0):
        self.cache_dir = Path(cache_dir) if cache_dir else default_cache_dir()
        self.use_cache = use_cache
        self.timeout = timeout

    def _key(self, url: str, rng: tuple[int, int] | None) -> Path:
        tag = f"{url}|{'' if rng is None else f'{rng[0]}-{rng[1]}'}"
        return self.cache_dir / hashlib.sha256(tag.encode("utf-8")).hexdigest()

    def _cached(self, url, rng):
        if not self.use_cache:
            return None
        p = self._key(url, rng)
        try:
            return p.read_bytes()
        except OSError:
            return None

    def _store(self, url, rng, data: bytes):
        if not self.use_cache:
            return
        try:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=self.cache_dir)
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, self._key(url, rng))
        except OSError as exc:
            log.warning("cache write failed for %s: %s", url, exc)

    def _request(self, url: str, rng: tuple[int, int] | None):
        req = urllib.request.Request(url, headers={"User-Agent": "refsteg"})
        if rng is not None:
            req.add_header("Range", f"bytes={rng[0]}-{rng[1] - 1}")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return resp.status, resp.read()
        except urllib.error.HTTPError as exc:
            if exc.code == 404:
                raise NotFound(f"{url}: 404") from exc
            if exc.code == 416:
                raise SegmentOutOfBounds(f"{url}: range {rng} not satisfiable") from exc
            raise FetchFailed(f"{url}: HTTP {exc.code}") from exc
        except (urllib.error.URLError, OSError) as exc:
            raise FetchFailed(f"{url}: {exc}") from exc

    def whole(self, url: str) -> bytes:
        data = self._cached(url, None)
        if data is None:
            _, data = self._request(url, None)
            self._store(url, None, data)
        return data

    def fetch(self, url: str, segments) -> bytes:
        if not segments:
            return self.whole(url)
        whole = self._cached(url, None)
        if whole is not None:
            return slice_segments(whole, segments, url)
        parts = []
        for seg in segments:
            data = self._cached(url, seg)
            if data is None:
                status, body = self._request(url, seg)
                if status != 206:
                    self._store(url, None, body)
                    return slice_segments(body, segments, url)
                if len(body) != seg[1] - seg[0]:
                    raise SegmentOutOfBounds(f"{url}: range {seg} returned {len(body)} bytes")
                data = body
                self._store(url, seg, data)
            parts.append(data)
        return b"".join(parts)


class CarrierResolver:
    """Turns a :class:`SecretLocation` into carrier bytes. Read-only."""

    def __init__(self, corpus: Corpus | str | os.PathLike | None = None, cache_dir=None,
                 use_cache: bool = True, fetcher: HttpFetcher | None = None):
        if corpus is not None and not isinstance(corpus, Corpus):
            corpus = Corpus(corpus)
        self.corpus = corpus
        self.fetcher = fetcher or HttpFetcher(cache_dir, use_cache)

    def _read_file(self, path: str, segments) -> bytes:
        try:
            size = os.path.getsize(path)
            if not segments:
                with open(path, "rb") as fh:
                    return fh.read()
            out = []
            with open(path, "rb") as fh:
                for s, e in segments:
                    if e > size:
                        raise SegmentOutOfBounds(f"segment ({s}, {e}) beyond {size}-byte {path}")
                    fh.seek(s)
                    out.append(fh.read(e - s))
            return b"".join(out)
        except FileNotFoundError:
            raise NotFound(f"{path} does not exist") from None
        except IsADirectoryError:
            raise NotFound(f"{path} is a directory") from None
        except OSError as exc:
            raise IoFailure(f"{path}: {exc}") from exc

    def resolve(self, location: SecretLocation | str) -> CarrierRecord:
        if isinstance(location, str):
            location = SecretLocation.parse(location)
        if location.scheme == "file":
            data = self._read_file(location.address, location.segments)
        elif location.scheme == "corpus":
            if self.corpus is None:
                raise NotFound("corpus location given but no corpus configured")
            data = self._read_file(str(self.corpus.path(location.address)), location.segments)
        else:
            data = self.fetcher.fetch(location.address, location.segments)
        return CarrierRecord(location, data)

    __call__ = resolve


def resolve(location: SecretLocation | str, **kwargs) -> CarrierRecord:
    return CarrierResolver(**kwargs).resolve(location)


def file_location(path, segments=()) -> SecretLocation:
    return SecretLocation("file", os.path.abspath(path), tuple(segments))
