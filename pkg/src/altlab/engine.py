"""Explicit action lookup: embedding memory bank, thresholded cosine
retrieval with a hold-pose fallback, and a raw-observation KD-tree baseline.

The bank stores one unit-norm embedding per demonstration frame together
with its (trajectory id, frame index). Queries encode the incoming
observation and scan all entries for the best cosine similarity (exact, no
approximate index); below the threshold gamma the query is flagged
out-of-distribution. Banks are bound to the encoder that built them through
a parameter fingerprint.

Bank file layout (little-endian):

    offset 0  : 8-byte magic "ALTBANK1"
    offset 8  : u32 format version (1)
    offset 12 : u32 embedding dim D; u64 entry count N
    offset 24 : f64 OOD threshold gamma
    offset 32 : 32-byte encoder fingerprint (sha256)
    offset 64 : 32-byte dataset manifest hash (sha256)
    offset 96 : u32 crc32 of the payload
    offset 100: payload = embeddings (N*D f64), traj ids (N u32),
                frame indices (N u32)

Rebuilding a bank from identical inputs yields a byte-identical file; build
time is runtime metadata only and is never serialized.
"""

from __future__ import annotations

import struct
import time
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .encoder import FusionEncoder, encoder_fingerprint
from .task import Observation, TaskDataset

BANK_MAGIC = b"ALTBANK1"
BANK_VERSION = 1


class BankError(ValueError):
    pass


class FingerprintMismatch(BankError):
    pass


@dataclass
class MemoryBank:
    embeddings: np.ndarray        # (N, D) unit rows
    traj_ids: np.ndarray          # (N,) uint32
    frame_ids: np.ndarray         # (N,) uint32
    gamma: float
    fingerprint: str              # sha256 hex of the producing encoder
    manifest_hash: str            # sha256 hex of the dataset manifest
    build_time: float | None = None   # runtime metadata, not serialized

    def __post_init__(self):
        if not (len(self.embeddings) == len(self.traj_ids) == len(self.frame_ids)):
            raise BankError("bank arrays must share length")
        if not (0.0 < self.gamma <= 1.0):
            raise BankError("gamma must be in (0, 1]")

    def __len__(self) -> int:
        return len(self.embeddings)

    def nbytes_payload(self) -> int:
        n, d = self.embeddings.shape
        return n * d * 8 + n * 8


def _cached_fingerprint(enc: FusionEncoder) -> str:
    fp = getattr(enc, "_fingerprint_cache", None)
    if fp is None:
        fp = encoder_fingerprint(enc)
        enc._fingerprint_cache = fp
    return fp


def build_bank(dataset: TaskDataset, enc: FusionEncoder, gamma: float = 0.9) -> MemoryBank:
    """Encode every frame of every demonstration into one bank entry."""
    hand, third, pose, tids, fids = dataset.frame_arrays()
    emb = enc.encode_batch(hand, third, pose)
    return MemoryBank(
        embeddings=emb,
        traj_ids=tids.astype(np.uint32),
        frame_ids=fids.astype(np.uint32),
        gamma=gamma,
        fingerprint=_cached_fingerprint(enc),
        manifest_hash=dataset.manifest_hash(),
        build_time=time.time(),
    )


@dataclass
class QueryResult:
    matched: bool
    traj_id: int
    frame_idx: int
    similarity: float
    latency_s: float

    @property
    def decision(self) -> str:
        return "match" if self.matched else "ood"


def _best_entry(bank: MemoryBank, z: np.ndarray):
    sims = bank.embeddings @ z
    best = sims.max()
    tied = np.flatnonzero(sims == best)
    if len(tied) > 1:
        # deterministic tie-break: lowest (traj_id, frame_idx)
        order = np.lexsort((bank.frame_ids[tied], bank.traj_ids[tied]))
        idx = tied[order[0]]
    else:
        idx = tied[0]
    return int(idx), float(best)


def query(bank: MemoryBank, enc: FusionEncoder, obs: Observation) -> QueryResult:
    """Exhaustive best-cosine retrieval with the bank's OOD threshold."""
    if _cached_fingerprint(enc) != bank.fingerprint:
        raise FingerprintMismatch(
            "bank was built by a different encoder (fingerprint mismatch)")
    t0 = time.perf_counter()
    z = enc.encode(obs)
    idx, best = _best_entry(bank, z)
    latency = time.perf_counter() - t0
    return QueryResult(
        matched=bool(best >= bank.gamma),
        traj_id=int(bank.traj_ids[idx]),
        frame_idx=int(bank.frame_ids[idx]),
        similarity=best,
        latency_s=latency,
    )


def retrieve_suffix(dataset: TaskDataset, result: QueryResult) -> np.ndarray:
    """Stored action rows of the matched demonstration from the matched
    frame onward."""
    demo = dataset.demo_by_id(result.traj_id)
    return demo.actions[result.frame_idx:]


@dataclass
class RolloutStep:
    result: QueryResult | None     # None on steps between re-queries
    action: np.ndarray
    fallback: bool


@dataclass
class RolloutLog:
    steps: list[RolloutStep] = field(default_factory=list)

    @property
    def executed(self) -> np.ndarray:
        return np.stack([s.action for s in self.steps])

    @property
    def decisions(self) -> list[str]:
        return [s.result.decision for s in self.steps if s.result is not None]

    def ood_flags(self) -> list[bool]:
        return [s.fallback for s in self.steps]


def rollout(bank: MemoryBank, enc: FusionEncoder, queries: list[Observation],
            dataset: TaskDataset, cadence: int = 1) -> RolloutLog:
    """Closed-loop execution over a query stream: re-query every `cadence`
    steps; on a match, execute the stored suffix from the matched frame; on
    an OOD flag, hold the current pose (open-loop suffix steps continue the
    last matched plan)."""
    if not queries:
        raise ValueError("rollout needs at least one query")
    if cadence < 1:
        raise ValueError("cadence must be >= 1")
    log = RolloutLog()
    plan: np.ndarray | None = None
    plan_pos = 0
    last_grip = 0.0
    for i, obs in enumerate(queries):
        res = None
        if i % cadence == 0:
            res = query(bank, enc, obs)
            if res.matched:
                plan = retrieve_suffix(dataset, res)
                plan_pos = 0
            else:
                plan = None
        if plan is not None and plan_pos < len(plan):
            action = plan[plan_pos].copy()
            plan_pos += 1
            fallback = False
            last_grip = float(action[7])
        else:
            action = np.concatenate([obs.pose, [last_grip]])
            fallback = True
        log.steps.append(RolloutStep(result=res, action=action, fallback=fallback))
    return log


# ---------------------------------------------------------------------------
# serialization

def save_bank(bank: MemoryBank, path) -> None:
    n, d = bank.embeddings.shape
    payload = (np.ascontiguousarray(bank.embeddings, dtype="<f8").tobytes()
               + np.ascontiguousarray(bank.traj_ids, dtype="<u4").tobytes()
               + np.ascontiguousarray(bank.frame_ids, dtype="<u4").tobytes())
    head = (BANK_MAGIC
            + struct.pack("<IIQ", BANK_VERSION, d, n)
            + struct.pack("<d", bank.gamma)
            + bytes.fromhex(bank.fingerprint)
            + bytes.fromhex(bank.manifest_hash)
            + struct.pack("<I", zlib.crc32(payload)))
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(payload)


def load_bank(path) -> MemoryBank:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 100:
        raise BankError(f"{path}: truncated header at byte {len(raw)} (need 100)")
    if raw[:8] != BANK_MAGIC:
        raise BankError(f"{path}: not a memory bank file (bad magic)")
    version, d, n = struct.unpack("<IIQ", raw[8:24])
    if version != BANK_VERSION:
        raise BankError(f"{path}: unsupported bank version {version}")
    (gamma,) = struct.unpack("<d", raw[24:32])
    fingerprint = raw[32:64].hex()
    manifest_hash = raw[64:96].hex()
    (crc,) = struct.unpack("<I", raw[96:100])
    payload = raw[100:]
    expect = n * d * 8 + n * 8
    if len(payload) != expect:
        raise BankError(f"{path}: truncated payload at byte {100 + len(payload)}"
                        f" (expected {expect} payload bytes, got {len(payload)})")
    if zlib.crc32(payload) != crc:
        raise BankError(f"{path}: payload checksum mismatch")
    emb = np.frombuffer(payload, "<f8", n * d).reshape(n, d).copy()
    tids = np.frombuffer(payload, "<u4", n, n * d * 8).copy()
    fids = np.frombuffer(payload, "<u4", n, n * d * 8 + n * 4).copy()
    return MemoryBank(embeddings=emb, traj_ids=tids, frame_ids=fids, gamma=gamma,
                      fingerprint=fingerprint, manifest_hash=manifest_hash)


# ---------------------------------------------------------------------------
# raw-observation baseline

@dataclass
class KdTreeIndex:
    tree: cKDTree
    traj_ids: np.ndarray
    frame_ids: np.ndarray
    dim: int
    leaf_size: int


def build_kdtree(dataset: TaskDataset, leaf_size: int = 16) -> KdTreeIndex:
    """Exact nearest-neighbor index over flattened raw observations
    (both images plus pose)."""
    hand, third, pose, tids, fids = dataset.frame_arrays()
    n = len(tids)
    X = np.concatenate([hand.reshape(n, -1), third.reshape(n, -1), pose], axis=1)
    return KdTreeIndex(tree=cKDTree(X, leafsize=leaf_size),
                       traj_ids=tids, frame_ids=fids, dim=X.shape[1],
                       leaf_size=leaf_size)


def kdtree_query(index: KdTreeIndex, obs: Observation):
    """Returns (traj_id, frame_idx, distance, latency_s)."""
    t0 = time.perf_counter()
    vec = obs.as_vector()
    dist, i = index.tree.query(vec)
    latency = time.perf_counter() - t0
    return int(index.traj_ids[i]), int(index.frame_ids[i]), float(dist), latency
