"""
Real-thread executor mirroring the simulated pipeline

One producer thread, one decoder thread, a bounded FIFO hand-off of depth Q,
per-chunk immutable snapshots and a sequence-numbered reorder buffer at the
writer. Timing is wall-clock and never asserted; only ordering, backpressure
and snapshot invariants are.
"""

import heapq
import logging
import queue
import threading
import time
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from src.stream_cache.models.pipeline import PipelineConfig

logger = logging.getLogger(__name__)

_STOP = object()
_POLL_S = 0.05


class _Closed(Exception):
    """停止済みの窓に投入しようとした"""


class InFlightWindow:
    """処理中チャンク数を Q 以下に保つ"""

    def __init__(self, depth: int):
        self.depth = depth
        self.count = 0
        self.max_count = 0
        self._closed = False
        self._cond = threading.Condition()

    def acquire(self) -> Tuple[int, bool]:
        """(投入前の処理中数, 待たされたか) を返す"""
        with self._cond:
            occupancy = self.count
            stalled = occupancy >= self.depth
            while self.count >= self.depth and not self._closed:
                self._cond.wait()
            if self._closed:
                raise _Closed()
            self.count += 1
            self.max_count = max(self.max_count, self.count)
            return occupancy, stalled

    def release(self) -> None:
        with self._cond:
            self.count -= 1
            self._cond.notify()

    def close(self) -> None:
        """待機中の acquire をすべて起こし、以後の投入を拒否"""
        with self._cond:
            self._closed = True
            self._cond.notify_all()


class ReorderBuffer:
    """シーケンス番号順にだけ取り出せるバッファ"""

    def __init__(self, start: int = 0):
        self._heap: List[Tuple[int, object]] = []
        self._next = start

    def push(self, seq: int, item: object) -> List[Tuple[int, object]]:
        """追加し、順番が揃った分を取り出す"""
        heapq.heappush(self._heap, (seq, item))
        ready = []
        while self._heap and self._heap[0][0] == self._next:
            ready.append(heapq.heappop(self._heap))
            self._next += 1
        return ready

    def __len__(self) -> int:
        return len(self._heap)


@dataclass
class ExecutorReport:
    """スレッド実行の結果"""
    emission_indices: List[int] = field(default_factory=list)
    max_queue_occupancy: int = 0
    stall_occupancies: List[int] = field(default_factory=list)
    submit_occupancies: List[int] = field(default_factory=list)
    snapshots_stable: bool = True
    elapsed_s: float = 0.0


def run_threaded(
    cfg: PipelineConfig,
    n_chunks: int,
    time_scale: float = 1e-4,
    seed: Optional[int] = None,
) -> ExecutorReport:
    """生産者・デコーダ・書き出しを別スレッドで実行（time_scale 秒/ms）"""
    rng = np.random.default_rng(cfg.jitter_seed if seed is None else seed)
    jitter = rng.uniform(0.0, cfg.vae_jitter_ms, size=n_chunks) if cfg.vae_jitter_ms > 0 else np.zeros(n_chunks)

    hand_off: "queue.Queue" = queue.Queue(maxsize=cfg.queue_depth)
    decoded: "queue.Queue" = queue.Queue()
    window = InFlightWindow(cfg.queue_depth)
    report = ExecutorReport()
    errors: List[BaseException] = []
    aborted = threading.Event()

    def take(source: "queue.Queue") -> object:
        # いずれかのスレッドが落ちたら _STOP を返す
        while not aborted.is_set():
            try:
                return source.get(timeout=_POLL_S)
            except queue.Empty:
                continue
        return _STOP

    def give(target: "queue.Queue", item: object) -> None:
        while not aborted.is_set():
            try:
                target.put(item, timeout=_POLL_S)
                return
            except queue.Full:
                continue

    def producer() -> None:
        working = np.zeros(cfg.vae_input_frames)
        c, l = cfg.chunk_latent_frames, cfg.overlap_frames
        for index in range(n_chunks):
            working[:] = np.arange(index * c - l, (index + 1) * c)
            time.sleep(cfg.dit_latency_ms * time_scale)
            snapshot = working.copy()
            snapshot.setflags(write=False)
            occupancy, stalled = window.acquire()
            report.submit_occupancies.append(occupancy)
            if stalled:
                report.stall_occupancies.append(occupancy)
                logger.debug(f"生産者が停止: chunk={index}, 処理中={occupancy}")
            give(hand_off, (index, snapshot, snapshot.tobytes()))
        give(hand_off, _STOP)

    def decoder() -> None:
        while True:
            item = take(hand_off)
            if item is _STOP:
                give(decoded, _STOP)
                return
            index, snapshot, stamp = item
            time.sleep((cfg.vae_latency_ms + jitter[index]) * time_scale)
            if snapshot.tobytes() != stamp:
                report.snapshots_stable = False
            window.release()
            give(decoded, (index, snapshot))

    def writer() -> None:
        buffer = ReorderBuffer()
        while True:
            item = take(decoded)
            if item is _STOP:
                return
            index, _ = item
            for seq, _payload in buffer.push(index, item):
                time.sleep(cfg.write_latency_ms * time_scale)
                report.emission_indices.append(seq)

    def guarded(target):
        def run():
            try:
                target()
            except _Closed:
                logger.debug(f"{target.__name__}: 停止済みのため投入を中断")
            except BaseException as e:  # スレッド内の例外を呼び出し側へ伝える
                logger.error(f"パイプラインスレッドでエラー: {e}")
                errors.append(e)
                aborted.set()
                window.close()
        return run

    threads = [threading.Thread(target=guarded(fn), name=fn.__name__) for fn in (producer, decoder, writer)]
    started = time.perf_counter()
    for thread in threads:
        thread.start()
    for thread in threads:
        thread.join()
    report.elapsed_s = time.perf_counter() - started
    report.max_queue_occupancy = window.max_count

    if errors:
        raise errors[0]
    logger.info(f"スレッド実行完了: {n_chunks} チャンク, 最大キュー {report.max_queue_occupancy}")
    return report
