"""Deterministic tree collectives and the bulk-synchronous worker layer.

All reductions follow one fixed pairwise combination order (a balanced
binary tree over the sample slots), so a sum over N values produces the
same floating-point bits whether it is computed by one worker or by P
workers each owning a contiguous power-of-two shard.  Workers exchange
partials by recursive doubling, which keeps every collective at
O(N/P + log2 P) while reproducing the serial tree bit for bit.

Transport is multiprocessing pipes; the module only relies on message
passing, so any transport with the same collective semantics would do.
"""

from __future__ import annotations

import multiprocessing as mp
import os
import traceback

import numpy as np

__all__ = [
    "ProtocolError",
    "pairwise_tree_sum",
    "pairwise_tree_max",
    "tree_cumsum",
    "SerialComm",
    "ProcessComm",
    "run_spmd",
]


class ProtocolError(RuntimeError):
    """Collective call sites disagreed across workers (sequence or op mismatch)."""


# -- serial reference reductions (the bit pattern every P must reproduce) ----


def pairwise_tree_sum(x: np.ndarray):
    """Sum along axis 0 by combining adjacent pairs level by level.

    For a power-of-two length this is the perfect balanced tree; an odd
    trailing element is carried unchanged into the next level.
    """
    x = np.asarray(x)
    while x.shape[0] > 1:
        n2 = (x.shape[0] // 2) * 2
        paired = x[0:n2:2] + x[1:n2:2]
        if x.shape[0] % 2:
            paired = np.concatenate([paired, x[n2:]], axis=0)
        x = paired
    return x[0]


def pairwise_tree_max(x: np.ndarray):
    """Max along axis 0 with the same pairing pattern as pairwise_tree_sum."""
    x = np.asarray(x)
    while x.shape[0] > 1:
        n2 = (x.shape[0] // 2) * 2
        paired = np.maximum(x[0:n2:2], x[1:n2:2])
        if x.shape[0] % 2:
            paired = np.concatenate([paired, x[n2:]], axis=0)
        x = paired
    return x[0]


def _blelloch_exclusive(x: np.ndarray, seed: float) -> np.ndarray:
    """Exclusive prefix sums over a power-of-two-padded tree, rooted at ``seed``.

    The up-sweep stores every tree node's pairwise sum; the down-sweep walks
    root-to-leaf adding left-sibling sums, so each prefix is a fixed-order
    chain of tree-node values -- identical no matter how leaves are sharded.
    """
    n = x.shape[0]
    m = 1 << max(0, (n - 1).bit_length())
    padded = x if n == m else np.concatenate([x, np.zeros(m - n)])
    levels = [padded]
    while levels[-1].shape[0] > 1:
        top = levels[-1]
        levels.append(top[0::2] + top[1::2])
    excl = np.array([seed])
    for level in reversed(levels[:-1]):
        child = np.empty_like(level)
        child[0::2] = excl
        child[1::2] = excl + level[0::2]
        excl = child
    return excl[:n]


def tree_cumsum(x: np.ndarray, seed: float = 0.0) -> np.ndarray:
    """Inclusive prefix sums with tree-fixed association (see _blelloch_exclusive)."""
    x = np.asarray(x, dtype=np.float64)
    return _blelloch_exclusive(x, seed) + x


# -- communicators ------------------------------------------------------------


class SerialComm:
    """Single-worker communicator: every collective is the serial tree op."""

    n_workers = 1
    rank = 0

    def tree_sum(self, local: np.ndarray):
        return pairwise_tree_sum(local)

    def tree_max(self, local: np.ndarray):
        return pairwise_tree_max(local)

    def inclusive_scan(self, local: np.ndarray) -> np.ndarray:
        return tree_cumsum(local)

    def allgather(self, local: np.ndarray) -> np.ndarray:
        return np.asarray(local)


class ProcessComm:
    """Recursive-doubling collectives over pre-wired pipe pairs.

    Each collective carries an (op, sequence) tag; a mismatch between
    partners means the SPMD code paths diverged and raises ProtocolError.
    """

    def __init__(self, rank: int, n_workers: int, conns: dict):
        self.rank = rank
        self.n_workers = n_workers
        self._conns = conns
        self._seq = 0

    def _exchange(self, op: str, stage: int, payload):
        partner = self.rank ^ (1 << stage)
        conn = self._conns[partner]
        conn.send((op, self._seq, payload))
        other_op, other_seq, other = conn.recv()
        if other_op != op or other_seq != self._seq:
            raise ProtocolError(
                f"rank {self.rank} in {op}#{self._seq} but rank {partner} "
                f"sent {other_op}#{other_seq}"
            )
        return partner, other

    def _allreduce(self, op: str, value, combine):
        self._seq += 1
        for stage in range(self.n_workers.bit_length() - 1):
            partner, other = self._exchange(op, stage, value)
            value = combine(value, other) if self.rank < partner else combine(other, value)
        return value

    def tree_sum(self, local: np.ndarray):
        return self._allreduce("sum", pairwise_tree_sum(local), lambda a, b: a + b)

    def tree_max(self, local: np.ndarray):
        return self._allreduce("max", pairwise_tree_max(local), np.maximum)

    def allgather(self, local: np.ndarray) -> np.ndarray:
        self._seq += 1
        block = np.asarray(local)
        base = self.rank
        for stage in range(self.n_workers.bit_length() - 1):
            partner, other_block = self._exchange("gather", stage, block)
            partner_base = base ^ (1 << stage)
            if base < partner_base:
                block = np.concatenate([block, other_block], axis=0)
            else:
                block = np.concatenate([other_block, block], axis=0)
                base = partner_base
        return block

    def inclusive_scan(self, local: np.ndarray) -> np.ndarray:
        """Distributed Blelloch scan: local subtrees + a top tree over shard totals."""
        local = np.asarray(local, dtype=np.float64)
        self._seq += 1
        total = pairwise_tree_sum(local)
        for_totals = self.allgather(np.array([total]))
        offset = _blelloch_exclusive(for_totals, 0.0)[self.rank]
        return _blelloch_exclusive(local, offset) + local


# -- SPMD launcher -------------------------------------------------------------


def _worker_main(fn, rank, n_workers, conns, result_conn, args):
    try:
        comm = ProcessComm(rank, n_workers, conns)
        out = fn(comm, *args)
        result_conn.send(("ok", out if rank == 0 else None))
    except BaseException:
        result_conn.send(("error", traceback.format_exc()))
    finally:
        result_conn.close()


def run_spmd(fn, n_workers: int, *args):
    """Run ``fn(comm, *args)`` on n_workers ranks; return rank 0's result.

    n_workers must be a power of two.  Worker exceptions are re-raised in the
    caller with the remote traceback attached.
    """
    if n_workers < 1 or n_workers & (n_workers - 1):
        raise ValueError(f"worker count must be a power of two, got {n_workers}")
    if n_workers == 1:
        return fn(SerialComm(), *args)

    ctx = mp.get_context("fork")
    conns = [dict() for _ in range(n_workers)]
    for stage in range(n_workers.bit_length() - 1):
        for rank in range(n_workers):
            partner = rank ^ (1 << stage)
            if rank < partner:
                a, b = ctx.Pipe(duplex=True)
                conns[rank][partner] = a
                conns[partner][rank] = b

    result_pipes = [ctx.Pipe(duplex=False) for _ in range(n_workers)]
    procs = [
        ctx.Process(
            target=_worker_main,
            args=(fn, rank, n_workers, conns[rank], result_pipes[rank][1], args),
        )
        for rank in range(n_workers)
    ]
    for p in procs:
        p.start()

    result = None
    errors = []
    pending = {recv_end: rank for rank, (recv_end, _) in enumerate(result_pipes)}
    try:
        while pending:
            ready = mp.connection.wait(list(pending), timeout=600.0)
            if not ready:
                errors.append("timed out waiting for workers")
                break
            for conn in ready:
                rank = pending.pop(conn)
                status, payload = conn.recv()
                if status == "error":
                    errors.append(f"[worker {rank}]\n{payload}")
                elif rank == 0:
                    result = payload
            if errors:
                break
    finally:
        for p in procs:
            if errors and p.is_alive():
                p.terminate()
            p.join(timeout=60)
    if errors:
        raise RuntimeError("worker failure:\n" + "\n".join(errors))
    return result


def physical_worker_limit() -> int:
    """Largest power of two not exceeding the host's CPU count."""
    cores = os.cpu_count() or 1
    return 1 << (cores.bit_length() - 1)
