"""
Text embedding and exact nearest-neighbour lookup of impedance profiles.

Descriptions are embedded with a signed feature hash at dimension 384 and
compared by Euclidean distance over the whole database (no index). The
database file is a JSON array of records:

    {"id": 0, "text": "...", "kind": "hard",
     "profile": {"m": 1.2, "k": 8.5, "d": 4.0, "F": 0.55, "c": 0.35, "v_max": 1.4},
     "embedding_digest": "..."}            # optional

Embeddings are recomputed at load; when a digest is present it must match.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import re
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Protocol

import numpy as np

from errors import (
    DatabaseError,
    DescriptionParseError,
    DimensionMismatch,
    EmptyDatabaseError,
    EmptyTextError,
)
from scene import ObstacleKind, parse_description, render_description

logger = logging.getLogger(__name__)

EMBEDDING_DIM = 384

PROFILE_FIELDS = ("m", "k", "d", "F", "c")

# Table of admissible link parameters per obstacle class.
PROFILE_RANGES: dict[ObstacleKind, dict[str, tuple[float, float]]] = {
    ObstacleKind.HARD: {"m": (1.0, 1.5), "k": (7.0, 10.0), "d": (3.0, 5.0),
                        "F": (0.4, 0.7), "c": (0.2, 0.5)},
    ObstacleKind.SOFT: {"m": (3.0, 7.0), "k": (0.1, 0.9), "d": (1.0, 2.0),
                        "F": (0.2, 0.45), "c": (0.6, 0.9)},
}

# Leader speed cap by (class, dynamic scene).
V_MAX = {
    (ObstacleKind.HARD, False): 1.4,
    (ObstacleKind.SOFT, False): 0.7,
    (ObstacleKind.HARD, True): 1.0,
    (ObstacleKind.SOFT, True): 0.6,
}


@dataclass(frozen=True)
class ImpedanceProfile:
    m: float
    k: float
    d: float
    F: float
    c: float
    v_max: float

    def to_dict(self) -> dict:
        return {"m": self.m, "k": self.k, "d": self.d, "F": self.F, "c": self.c, "v_max": self.v_max}


def profile_issues(profile: ImpedanceProfile, kind: ObstacleKind,
                   field_prefix: str = "profile") -> list[tuple[str, str]]:
    """Range violations of `profile` against the column for `kind`."""
    issues = []
    for name in PROFILE_FIELDS + ("v_max",):
        value = getattr(profile, name)
        if not (math.isfinite(value) and value > 0):
            issues.append((f"{field_prefix}.{name}", f"must be positive and finite, got {value}"))
    for name, (lo, hi) in PROFILE_RANGES[kind].items():
        value = getattr(profile, name)
        if not lo <= value <= hi:
            issues.append((f"{field_prefix}.{name}",
                           f"{value} outside [{lo}, {hi}] for {kind.value} obstacles"))
    return issues


# ── Embedding ──────────────────────────────────────────────────────────────────

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class Embedder(Protocol):
    dim: int

    def __call__(self, text: str) -> np.ndarray: ...


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


class HashingEmbedder:
    """Signed feature hashing: one hash picks the slot, an independent one the sign."""

    def __init__(self, dim: int = EMBEDDING_DIM):
        self.dim = dim
        self._bucket = lru_cache(maxsize=4096)(self._bucket_uncached)

    def _bucket_uncached(self, token: str) -> tuple[int, float]:
        data = token.encode("utf-8")
        index = int.from_bytes(hashlib.blake2b(data, digest_size=8, person=b"swarm-index").digest(), "big")
        sign = hashlib.blake2b(data, digest_size=1, person=b"swarm-sign").digest()[0] & 1
        return index % self.dim, 1.0 if sign else -1.0

    def __call__(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise EmptyTextError("cannot embed empty text")
        tokens = tokenize(text)
        if not tokens:
            raise EmptyTextError(f"no word tokens in {text!r}")
        vec = np.zeros(self.dim)
        for token in tokens:
            index, sign = self._bucket(token)
            vec[index] += sign
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            raise EmptyTextError(f"token hashes cancel out for {text!r}")
        return vec / norm


DEFAULT_EMBEDDER: Embedder = HashingEmbedder()


def embed(text: str, embedder: Embedder = DEFAULT_EMBEDDER) -> np.ndarray:
    return embedder(text)


def embedding_digest(vec: np.ndarray) -> str:
    return hashlib.blake2b(np.asarray(vec, dtype="<f8").tobytes(), digest_size=16).hexdigest()


def distance(x: np.ndarray, y: np.ndarray) -> float:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise DimensionMismatch(x.shape, y.shape)
    diff = x - y
    return float(np.sqrt(np.sum(diff * diff)))


# ── Database ───────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class ScenarioRecord:
    id: int
    text: str
    profile: ImpedanceProfile
    kind: ObstacleKind
    embedding: np.ndarray = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.embedding is None:
            object.__setattr__(self, "embedding", embed(self.text))

    def to_dict(self) -> dict:
        return {"id": self.id, "text": self.text, "kind": self.kind.value,
                "profile": self.profile.to_dict(),
                "embedding_digest": embedding_digest(self.embedding)}


@dataclass(frozen=True)
class VectorDatabase:
    records: tuple[ScenarioRecord, ...]
    matrix: np.ndarray = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        dim = self.records[0].embedding.shape[0] if self.records else EMBEDDING_DIM
        matrix = (np.vstack([r.embedding for r in self.records])
                  if self.records else np.zeros((0, dim)))
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, record_id: int) -> ScenarioRecord:
        return self.records[record_id]


def database_issues(records: Iterable[ScenarioRecord]) -> list[tuple[str, str]]:
    issues = []
    records = list(records)
    ids = [r.id for r in records]
    seen = set()
    for r in records:
        if r.id in seen:
            issues.append((f"records[{r.id}].id", f"duplicate id {r.id}"))
        seen.add(r.id)
    if not issues and sorted(ids) != list(range(len(ids))):
        issues.append(("records.id", "ids must be dense from 0"))
    for r in records:
        prefix = f"records[{r.id}]"
        issues.extend(profile_issues(r.profile, r.kind, f"{prefix}.profile"))
        expected = embed(r.text)
        if r.embedding.shape != expected.shape or not np.array_equal(r.embedding, expected):
            issues.append((f"{prefix}.embedding", "does not match embed(text)"))
    return issues


def build_database(records: Iterable[ScenarioRecord]) -> VectorDatabase:
    records = list(records)
    issues = database_issues(records)
    if issues:
        raise DatabaseError(issues, "database")
    _warn_on_text_quality(records)
    return VectorDatabase(tuple(sorted(records, key=lambda r: r.id)))


def _warn_on_text_quality(records: list[ScenarioRecord]) -> None:
    texts: dict[str, int] = {}
    for r in records:
        try:
            canonical = render_description(parse_description(r.text)) == r.text
        except DescriptionParseError:
            canonical = False
        if not canonical:
            logger.warning("Record %d text is not a canonical scene description", r.id)
        if r.text in texts:
            logger.warning("Records %d and %d share the same text", texts[r.text], r.id)
        texts.setdefault(r.text, r.id)


def record_from_dict(data: dict, n: int) -> tuple[ScenarioRecord | None, list[tuple[str, str]]]:
    prefix = f"records[{n}]"
    issues = []
    unknown = set(data) - {"id", "text", "kind", "profile", "embedding_digest"}
    issues += [(f"{prefix}.{k}", "unknown key") for k in sorted(unknown)]
    missing = {"id", "text", "kind", "profile"} - set(data)
    issues += [(f"{prefix}.{k}", "missing field") for k in sorted(missing)]
    if issues:
        return None, issues
    try:
        kind = ObstacleKind(data["kind"])
        profile = ImpedanceProfile(**{k: float(data["profile"][k]) for k in PROFILE_FIELDS + ("v_max",)})
    except (ValueError, KeyError, TypeError) as e:
        return None, [(prefix, f"malformed record: {e}")]
    try:
        record = ScenarioRecord(int(data["id"]), str(data["text"]), profile, kind)
    except EmptyTextError as e:
        return None, [(f"{prefix}.text", str(e))]
    digest = data.get("embedding_digest")
    if digest is not None and digest != embedding_digest(record.embedding):
        issues.append((f"{prefix}.embedding_digest",
                       "stored embedding differs from the recomputed one (embedding version drift)"))
    return record, issues


def load_database(path: Path) -> VectorDatabase:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DatabaseError([("file", f"invalid JSON: {e}")], str(path)) from e
    if not isinstance(data, list):
        raise DatabaseError([("file", "expected a JSON array of records")], str(path))
    records, issues = [], []
    for n, item in enumerate(data):
        if not isinstance(item, dict):
            issues.append((f"records[{n}]", "expected an object"))
            continue
        record, record_issues = record_from_dict(item, n)
        issues += record_issues
        if record is not None:
            records.append(record)
    if issues:
        raise DatabaseError(issues, str(path))
    try:
        db = build_database(records)
    except DatabaseError as e:
        raise DatabaseError(e.issues, str(path)) from e
    logger.info("Loaded %d records from %s", len(db), path)
    return db


def save_database(db: VectorDatabase | Iterable[ScenarioRecord], path: Path) -> None:
    records = db.records if isinstance(db, VectorDatabase) else tuple(db)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump([r.to_dict() for r in records], f, indent=2, ensure_ascii=False)
        f.write("\n")


# ── Lookup ─────────────────────────────────────────────────────────────────────

def nearest(query_text: str, db: VectorDatabase) -> tuple[ScenarioRecord, float]:
    """Exact scan; ties go to the lowest id."""
    if len(db) == 0:
        raise EmptyDatabaseError("retrieval needs a non-empty database")
    q = embed(query_text)
    if q.shape[0] != db.matrix.shape[1]:
        raise DimensionMismatch(q.shape, db.matrix.shape[1:])
    diff = db.matrix - q
    dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    best = int(np.argmin(dist))
    return db.records[best], float(dist[best])


def retrieve(query_text: str, db: VectorDatabase) -> ScenarioRecord:
    return nearest(query_text, db)[0]
