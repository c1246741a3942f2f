"""Deterministic lock-step simulation of collective exchanges on a node ring.

Nodes are logical processes advanced through identical sequences of
send/receive hops, so results and byte counts are pure functions of the
inputs and seeds. Chunk c of the parameter range is owned by node c, and a
reduction accumulates contributions in ring order starting from the owner:

    chunk c  =  ((x_c + x_{c+1}) + x_{c+2}) + ...   (node indices mod N)

Fixing the summation order this way makes repeated runs bit-identical and
lets an independent checker reproduce the exact floating-point result.
Per-message payload bytes are recorded in :class:`LinkStats`; on a ring the
sending node identifies the link, since node k only ever sends to k+1.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .codec import (
    INDEX_BYTES,
    VALUE_BYTES,
    BitMask,
    SparseGradient,
    decode_mask,
    encode_mask,
    or_masks,
)
from .errors import ConfigError, ProtocolError, StructuralError
from .seeds import SELECT_STREAM, substream

PHASE_SCATTER = "scatter_reduce"
PHASE_ALLGATHER = "allgather"
PHASE_MASK = "mask_round"
REDUCE_PHASES = (PHASE_SCATTER, PHASE_ALLGATHER)

BANDWIDTH_CSV_HEADER = ("step", "node", "phase", "bytes")


@dataclass(frozen=True)
class RingTopology:
    """A ring of nodes, each owning one contiguous chunk of the vector.

    When the vector is shorter than the ring, it is implicitly zero-padded to
    one element per node so the message schedule is unchanged.
    """

    n_nodes: int
    length: int
    chunk_bounds: tuple[int, ...]

    @classmethod
    def create(cls, n_nodes: int, length: int) -> "RingTopology":
        if n_nodes < 2:
            raise StructuralError(f"ring needs at least 2 nodes, got {n_nodes}")
        if length < 0:
            raise StructuralError(f"vector length must be >= 0, got {length}")
        padded = max(length, n_nodes)
        quotient, remainder = divmod(padded, n_nodes)
        bounds = [0]
        for c in range(n_nodes):
            bounds.append(bounds[-1] + quotient + (1 if c < remainder else 0))
        return cls(n_nodes=n_nodes, length=length, chunk_bounds=tuple(bounds))

    @property
    def padded_length(self) -> int:
        return self.chunk_bounds[-1]

    def successor(self, node: int) -> int:
        return (node + 1) % self.n_nodes

    def chunk_slice(self, chunk: int) -> slice:
        return slice(self.chunk_bounds[chunk], self.chunk_bounds[chunk + 1])


@dataclass(frozen=True)
class MaskAgreementConfig:
    """How nodes agree on a shared mask without a coordinator.

    ``n_selected_nodes`` masks are broadcast per round; the broadcasters are
    drawn from a stream keyed by (shared_seed, step) that every node can
    evaluate identically.
    """

    n_selected_nodes: int = 2
    shared_seed: int = 0

    def __post_init__(self) -> None:
        if self.n_selected_nodes < 1:
            raise ConfigError(
                f"n_selected_nodes must be >= 1, got {self.n_selected_nodes}"
            )


class LinkStats:
    """Per-message byte accounting for ring traffic."""

    __slots__ = ("records",)

    def __init__(self) -> None:
        # (step, sender, phase, payload_bytes), one record per message
        self.records: list[tuple[int, int, str, int]] = []

    def record(self, step: int, sender: int, phase: str, payload_bytes: int) -> None:
        if payload_bytes < 0:
            raise StructuralError("payload_bytes must be >= 0")
        self.records.append((int(step), int(sender), phase, int(payload_bytes)))

    def extend(self, other: "LinkStats") -> None:
        self.records.extend(other.records)

    def total_bytes(self) -> int:
        return sum(r[3] for r in self.records)

    def bytes_for(self, phase: str | None = None, node: int | None = None) -> int:
        return sum(
            r[3]
            for r in self.records
            if (phase is None or r[2] == phase) and (node is None or r[1] == node)
        )

    def message_count(self, node: int | None = None, phases: tuple[str, ...] = REDUCE_PHASES) -> int:
        return sum(
            1
            for r in self.records
            if r[2] in phases and (node is None or r[1] == node)
        )

    def aggregated_rows(self) -> list[tuple[int, int, str, int]]:
        """Byte totals summed per (step, node, phase), sorted."""
        totals: dict[tuple[int, int, str], int] = {}
        for step, sender, phase, nbytes in self.records:
            key = (step, sender, phase)
            totals[key] = totals.get(key, 0) + nbytes
        return [(s, n, p, b) for (s, n, p), b in sorted(totals.items())]


@dataclass(frozen=True)
class BandwidthReport:
    """Aggregated traffic view: per-(step, node, phase) rows plus totals."""

    rows: tuple[tuple[int, int, str, int], ...]
    per_node_bytes: dict[int, int]
    total_bytes: int


def bandwidth_report(stats: LinkStats) -> BandwidthReport:
    rows = tuple(stats.aggregated_rows())
    per_node: dict[int, int] = {}
    for _step, node, _phase, nbytes in rows:
        per_node[node] = per_node.get(node, 0) + nbytes
    return BandwidthReport(
        rows=rows,
        per_node_bytes=dict(sorted(per_node.items())),
        total_bytes=sum(r[3] for r in rows),
    )


def write_bandwidth_csv(stats: LinkStats, path) -> None:
    report = bandwidth_report(stats)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(BANDWIDTH_CSV_HEADER)
        for step, node, phase, nbytes in report.rows:
            writer.writerow([step, node, phase, nbytes])


def _check_vectors(contributions, topo: RingTopology) -> list[np.ndarray]:
    vecs = [np.asarray(v, dtype=np.float64) for v in contributions]
    if len(vecs) != topo.n_nodes:
        raise StructuralError(
            f"got {len(vecs)} contributions for {topo.n_nodes} nodes"
        )
    for v in vecs:
        if v.ndim != 1 or v.shape[0] != topo.length:
            raise StructuralError(
                f"contribution shape {v.shape} does not match vector length {topo.length}"
            )
    return vecs


def _pad(vec: np.ndarray, topo: RingTopology) -> np.ndarray:
    pad = topo.padded_length - topo.length
    if pad == 0:
        return vec
    return np.concatenate([vec, np.zeros(pad, dtype=np.float64)])


def _ring_exchange(chunked, topo, stats, step, chunk_nbytes, combine):
    """Run the scatter-reduce and allgather hop schedules over per-node,
    per-chunk buffers, combining partials with ``combine`` and adopting
    finished chunks by reference."""
    n = topo.n_nodes
    # Scatter-reduce: at hop s, node k forwards its partial of chunk (k - s);
    # the receiver folds it in ahead of its own contribution, which keeps the
    # accumulation order owner-first.
    for s in range(n - 1):
        sends = []
        for k in range(n):
            c = (k - s) % n
            sends.append((k, c, chunked[k][c]))
            stats.record(step, k, PHASE_SCATTER, chunk_nbytes(chunked[k][c]))
        for k, c, payload in sends:
            r = topo.successor(k)
            chunked[r][c] = combine(payload, chunked[r][c])
    # Allgather: node k forwards chunk (k + 1 - s); the receiver adopts it.
    for s in range(n - 1):
        sends = []
        for k in range(n):
            c = (k + 1 - s) % n
            sends.append((k, c, chunked[k][c]))
            stats.record(step, k, PHASE_ALLGATHER, chunk_nbytes(chunked[k][c]))
        for k, c, payload in sends:
            chunked[topo.successor(k)][c] = payload


def dense_allreduce(
    contributions,
    topo: RingTopology,
    *,
    step: int = 0,
    value_bytes: int = VALUE_BYTES,
) -> tuple[np.ndarray, LinkStats]:
    """Elementwise sum of all contributions, delivered to every node.

    Each node sends exactly 2(N-1) chunk messages. The returned vector is the
    one every node ends up holding.
    """
    vecs = _check_vectors(contributions, topo)
    n = topo.n_nodes
    chunked = [
        [np.array(_pad(v, topo)[topo.chunk_slice(c)]) for c in range(n)]
        for v in vecs
    ]
    stats = LinkStats()
    _ring_exchange(
        chunked,
        topo,
        stats,
        step,
        chunk_nbytes=lambda chunk: chunk.shape[0] * value_bytes,
        combine=lambda incoming, own: incoming + own,
    )
    results = [np.concatenate(node_chunks)[: topo.length] for node_chunks in chunked]
    for r in results[1:]:
        if not np.array_equal(r, results[0]):
            raise ProtocolError("dense all-reduce results diverged across nodes")
    return results[0], stats


def select_broadcast_nodes(n_nodes: int, cfg: MaskAgreementConfig, step: int) -> tuple[int, ...]:
    """Draw the broadcasting nodes for one agreement round.

    Repeated uniform integer draws with duplicate rejection from the stream
    keyed by (shared_seed, SELECT_STREAM, step). The draw uses no node-local
    state, so every node computes the same answer with no coordinator, and an
    independent checker can replay it from this description.
    """
    if cfg.n_selected_nodes > n_nodes:
        raise ConfigError(
            f"cannot select {cfg.n_selected_nodes} of {n_nodes} nodes"
        )
    rng = substream(cfg.shared_seed, SELECT_STREAM, step)
    chosen: list[int] = []
    while len(chosen) < cfg.n_selected_nodes:
        candidate = int(rng.integers(0, n_nodes))
        if candidate not in chosen:
            chosen.append(candidate)
    return tuple(chosen)


def mask_agreement_round(
    local_masks: list[BitMask],
    cfg: MaskAgreementConfig,
    step: int,
) -> tuple[BitMask, LinkStats]:
    """Agree on one shared mask by OR-combining broadcast masks.

    The selected nodes' masks are byte-packed, circulated around the ring
    (each traverses the N-1 hops needed to visit every node), decoded, and
    OR-combined. Every node ends the round holding the identical mask.
    """
    masks = list(local_masks)
    if not masks:
        raise StructuralError("mask agreement needs at least one local mask")
    length = masks[0].length
    for m in masks[1:]:
        if m.length != length:
            raise StructuralError(f"mask length mismatch: {m.length} vs {length}")
    n = len(masks)
    selected = select_broadcast_nodes(n, cfg, step)
    stats = LinkStats()
    received: list[BitMask] = []
    for origin in selected:
        enc = encode_mask(masks[origin])
        nbytes = len(enc.payload)
        for hop in range(n - 1):
            stats.record(step, (origin + hop) % n, PHASE_MASK, nbytes)
        received.append(decode_mask(enc))
    return or_masks(received), stats


def sparse_allreduce(
    contributions: list[SparseGradient],
    topo: RingTopology,
    *,
    step: int = 0,
    value_bytes: int = VALUE_BYTES,
    index_bytes: int = INDEX_BYTES,
) -> tuple[SparseGradient, LinkStats]:
    """Mean of sparse gradients that share one index set.

    Values are summed per index in the same owner-first ring order as the
    dense reduce, then divided by N. The output index set is exactly the
    shared one, so density is preserved no matter how many nodes reduce.
    """
    if len(contributions) != topo.n_nodes:
        raise StructuralError(
            f"got {len(contributions)} contributions for {topo.n_nodes} nodes"
        )
    first = contributions[0]
    if first.total_length != topo.length:
        raise StructuralError(
            f"sparse total_length {first.total_length} does not match topology length {topo.length}"
        )
    for sg in contributions[1:]:
        if sg.total_length != first.total_length or not np.array_equal(
            sg.indices, first.indices
        ):
            raise ProtocolError(
                "sparse all-reduce requires identical index sets on every node; "
                "a mismatch means mask agreement failed"
            )
    n = topo.n_nodes
    idx = first.indices
    # Chunk c carries the sparse entries whose parameter index falls in the
    # chunk's range; those are contiguous in the sorted index list.
    cuts = np.searchsorted(idx, np.asarray(topo.chunk_bounds))
    per_entry = value_bytes + index_bytes
    chunked = [
        [np.array(sg.values[cuts[c]: cuts[c + 1]]) for c in range(n)]
        for sg in contributions
    ]
    stats = LinkStats()
    _ring_exchange(
        chunked,
        topo,
        stats,
        step,
        chunk_nbytes=lambda chunk: chunk.shape[0] * per_entry,
        combine=lambda incoming, own: incoming + own,
    )
    summed = [np.concatenate(node_chunks) for node_chunks in chunked]
    for s in summed[1:]:
        if not np.array_equal(s, summed[0]):
            raise ProtocolError("sparse all-reduce results diverged across nodes")
    mean = summed[0] / n
    return SparseGradient(indices=idx.copy(), values=mean, total_length=first.total_length), stats


def dgc_union_contrast(per_node_masks: list[BitMask], topo: RingTopology | None = None) -> float:
    """Density after a reduce in which nodes picked indices independently.

    Each hop of such a reduce unions the index sets it carries, so the final
    density is that of the OR of all local masks, growing toward
    min(1, N * d) as node count rises. ``topo`` is optional and only
    validated against the mask count when given, so the single-node
    degenerate case can be expressed.
    """
    masks = list(per_node_masks)
    if topo is not None and len(masks) != topo.n_nodes:
        raise StructuralError(
            f"got {len(masks)} masks for {topo.n_nodes} nodes"
        )
    return or_masks(masks).density()


def naive_sparse_allreduce(
    contributions,
    local_masks: list[BitMask],
    topo: RingTopology,
    *,
    step: int = 0,
    value_bytes: int = VALUE_BYTES,
    index_bytes: int = INDEX_BYTES,
) -> tuple[SparseGradient, LinkStats]:
    """Sparse reduce without mask agreement, for the densification contrast.

    Each node contributes only its own masked entries, but partial sums union
    their index sets hop by hop, so payloads grow as they travel. Message
    bytes reflect the growing unions. The result is the mean of the masked
    contributions on the union support.
    """
    vecs = _check_vectors(contributions, topo)
    if len(local_masks) != topo.n_nodes:
        raise StructuralError(
            f"got {len(local_masks)} masks for {topo.n_nodes} nodes"
        )
    for m in local_masks:
        if m.length != topo.length:
            raise StructuralError(
                f"mask length {m.length} does not match vector length {topo.length}"
            )
    n = topo.n_nodes
    per_entry = value_bytes + index_bytes
    chunked = []
    for v, m in zip(vecs, local_masks):
        vals = _pad(np.where(m.bits, v, 0.0), topo)
        mask = _pad(m.bits.astype(np.float64), topo).astype(bool)
        chunked.append(
            [(np.array(vals[topo.chunk_slice(c)]), np.array(mask[topo.chunk_slice(c)])) for c in range(n)]
        )
    stats = LinkStats()
    _ring_exchange(
        chunked,
        topo,
        stats,
        step,
        chunk_nbytes=lambda chunk: int(np.count_nonzero(chunk[1])) * per_entry,
        combine=lambda incoming, own: (incoming[0] + own[0], incoming[1] | own[1]),
    )
    final_vals = np.concatenate([c[0] for c in chunked[0]])[: topo.length]
    final_mask = np.concatenate([c[1] for c in chunked[0]])[: topo.length]
    idx = np.flatnonzero(final_mask)
    mean = final_vals[idx] / n
    return SparseGradient(indices=idx, values=mean, total_length=topo.length), stats
