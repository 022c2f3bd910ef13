"""
Discrete-event simulator of the chunked DiT → VAE decode pipeline

The host loop produces a chunk on the device, clones its latent window into a
snapshot, hands it to the decoder through a bounded in-flight queue and then
writes every finished chunk in index order. The decoder stream waits on each
chunk's produce event before decoding. Both stages share one device; while they
are co-resident each advances at 1/contention_factor of its solo rate.

Time is kept as Fraction milliseconds so results are exact and reproducible.
"""

import hashlib
import logging
from fractions import Fraction
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import simpy

from src.stream_cache.models.pipeline import (
    ChunkJob,
    GridPoint,
    PipelineConfig,
    ReportMode,
    Schedule,
    SimResult,
    SweepRow,
    expand_points,
)

logger = logging.getLogger(__name__)


def _ms(value: float) -> Fraction:
    """設定値（10進表記）を正確な有理数ミリ秒に変換"""
    return Fraction(str(value))


def chunk_playback_ms(cfg: PipelineConfig) -> float:
    """チャンクの再生時間 = C × 圧縮率 / fps × 1000"""
    return cfg.chunk_latent_frames * cfg.temporal_compression / cfg.target_fps * 1000.0


def derived_metrics(throughput_ms: float, cfg: PipelineConfig) -> Tuple[float, float]:
    """スループットから実効FPSとRT比を導出"""
    if throughput_ms <= 0:
        raise ValueError(f"throughput must be positive, got {throughput_ms}")
    eff_fps = cfg.retained_pixel_frames / throughput_ms * 1000.0
    rt_ratio = throughput_ms / chunk_playback_ms(cfg)
    return eff_fps, rt_ratio


class _SharedDevice:
    """2つのストリームが共有する計算デバイス"""

    def __init__(self, env: simpy.Environment, contention_factor: float):
        self.env = env
        self.slowdown = _ms(contention_factor)
        self.active = 0
        self.changed = env.event()

    def _notify(self) -> None:
        previous, self.changed = self.changed, self.env.event()
        previous.succeed()

    def _rate(self) -> Fraction:
        return Fraction(1) if self.active <= 1 else 1 / self.slowdown

    def execute(self, work: Fraction):
        """work ミリ秒分の処理を、同時実行中は減速しながら進める"""
        if work <= 0:
            return
        self.active += 1
        self._notify()
        remaining = work
        try:
            while remaining > 0:
                rate = self._rate()
                started = self.env.now
                yield self.env.timeout(remaining / rate) | self.changed
                remaining -= (self.env.now - started) * rate
        finally:
            self.active -= 1
            self._notify()


class _LatentSnapshot:
    """ハンドオフ時に複製された不変の潜在ウィンドウ"""

    def __init__(self, version: int, window: np.ndarray):
        self.version = version
        self.frames = window.copy()
        self.frames.setflags(write=False)
        self.digest = self._digest(self.frames)

    @staticmethod
    def _digest(frames: np.ndarray) -> str:
        return hashlib.blake2b(frames.tobytes(), digest_size=16).hexdigest()

    def is_stable(self) -> bool:
        return self._digest(self.frames) == self.digest


class _AliasedSnapshot(_LatentSnapshot):
    """複製せず生成側のバッファを参照する（読み書きハザードの再現用）"""

    def __init__(self, version: int, window: np.ndarray):
        self.version = version
        self.frames = window
        self.digest = self._digest(window)


class PipelineSimulator:
    """チャンク単位パイプラインの離散事象シミュレータ"""

    def __init__(self, cfg: PipelineConfig, n_chunks: int, clone_snapshots: bool = True):
        if n_chunks < 2:
            raise ValueError(f"n_chunks must be >= 2 for a steady-state interval, got {n_chunks}")
        self.cfg = cfg
        self.n_chunks = n_chunks
        self.clone_snapshots = clone_snapshots

        self.env = simpy.Environment()
        self.device = _SharedDevice(self.env, cfg.contention_factor)
        self.slots = simpy.Resource(self.env, capacity=cfg.queue_depth)
        self.decode_queue = simpy.Store(self.env)

        # 計測範囲の後ろも生産を続け、末尾の排出で定常値が崩れないようにする
        self.total_chunks = n_chunks + cfg.queue_depth + 1
        self.produced = [self.env.event() for _ in range(self.total_chunks)]
        self.decoded = [self.env.event() for _ in range(self.total_chunks)]

        self.jobs: Dict[int, ChunkJob] = {}
        self.snapshots: Dict[int, _LatentSnapshot] = {}
        self.write_times: List[Fraction] = []
        self.emission: List[int] = []
        self.in_flight = 0
        self.max_in_flight = 0
        self.stalls = 0
        self._next_write = 0

        # 生成側が使い回す潜在ウィンドウ（L + C フレーム）
        self._working = np.zeros(cfg.vae_input_frames)
        rng = np.random.default_rng(cfg.jitter_seed)
        jitter = rng.uniform(0.0, cfg.vae_jitter_ms, size=self.total_chunks) if cfg.vae_jitter_ms > 0 else None
        self.vae_work = [
            _ms(cfg.vae_latency_ms) + (Fraction(float(jitter[i])) if jitter is not None else 0)
            for i in range(self.total_chunks)
        ]

    def _fill_window(self, index: int) -> None:
        # 前チャンクの L フレーム + 新規 C フレームの潜在インデックスを書き込む
        c, l = self.cfg.chunk_latent_frames, self.cfg.overlap_frames
        self._working[:] = np.arange(index * c - l, (index + 1) * c)

    def _take_snapshot(self, index: int) -> _LatentSnapshot:
        snapshot_cls = _LatentSnapshot if self.clone_snapshots else _AliasedSnapshot
        return snapshot_cls(index, self._working)

    def _record(self, job: ChunkJob) -> None:
        if job.index < self.n_chunks:
            self.jobs[job.index] = job

    def _write(self, index: int):
        yield self.env.timeout(_ms(self.cfg.write_latency_ms))
        self.write_times.append(self.env.now)
        self.emission.append(index)
        if index in self.jobs:
            self.jobs[index].write_done_ms = float(self.env.now)

    def _write_ready(self):
        """デコード済みのチャンクをインデックス順に書き出す（待たない）"""
        while self._next_write < self.n_chunks and self.decoded[self._next_write].triggered:
            yield from self._write(self._next_write)
            self._next_write += 1

    def _decoder(self):
        """VAEストリーム: 生成イベントを待ってからスナップショットをデコード"""
        while True:
            job, request = yield self.decode_queue.get()
            yield self.produced[job.index]
            snapshot = self.snapshots[job.index]
            job.decode_start_ms = float(self.env.now)

            yield from self.device.execute(self.vae_work[job.index])

            job.decode_done_ms = float(self.env.now)
            job.snapshot_stable = snapshot.is_stable() and snapshot.version == job.index
            del self.snapshots[job.index]
            self.in_flight -= 1
            self.slots.release(request)
            self.decoded[job.index].succeed()

    def _overlapped_host(self):
        cfg = self.cfg
        for index in range(self.total_chunks):
            self._fill_window(index)
            yield from self.device.execute(_ms(cfg.dit_latency_ms))
            produce_done = self.env.now
            self.snapshots[index] = self._take_snapshot(index)
            self.produced[index].succeed()

            occupancy = self.in_flight
            stalled = occupancy >= cfg.queue_depth
            if stalled:
                self.stalls += 1
                logger.debug(f"生産者が停止: chunk={index}, 処理中={occupancy}")
            request = self.slots.request()
            yield request

            self.in_flight += 1
            self.max_in_flight = max(self.max_in_flight, self.in_flight)
            job = ChunkJob(
                index=index,
                produce_done_ms=float(produce_done),
                submit_ms=float(self.env.now),
                snapshot_taken=True,
                snapshot_version=index,
                occupancy_before_submit=occupancy,
                stalled=stalled,
            )
            self._record(job)
            yield self.decode_queue.put((job, request))

            yield from self._write_ready()

        # 計測範囲の残りを順番に書き出す
        while self._next_write < self.n_chunks:
            yield self.decoded[self._next_write]
            yield from self._write(self._next_write)
            self._next_write += 1

    def _sequential_host(self):
        cfg = self.cfg
        for index in range(self.n_chunks):
            self._fill_window(index)
            yield from self.device.execute(_ms(cfg.dit_latency_ms))
            snapshot = self._take_snapshot(index)
            job = ChunkJob(
                index=index,
                produce_done_ms=float(self.env.now),
                submit_ms=float(self.env.now),
                decode_start_ms=float(self.env.now),
                snapshot_taken=True,
                snapshot_version=index,
            )
            self._record(job)
            self.max_in_flight = max(self.max_in_flight, 1)

            yield from self.device.execute(self.vae_work[index])
            job.decode_done_ms = float(self.env.now)
            job.snapshot_stable = snapshot.is_stable()
            yield from self._write(index)

    def run(self) -> SimResult:
        cfg = self.cfg
        if cfg.schedule == Schedule.SEQUENTIAL:
            host = self.env.process(self._sequential_host())
        else:
            self.env.process(self._decoder())
            host = self.env.process(self._overlapped_host())
        self.env.run(until=host)

        intervals = self.write_times[-1] - self.write_times[0]
        throughput = float(intervals / (self.n_chunks - 1))
        eff_fps, rt_ratio = derived_metrics(throughput, cfg) if throughput > 0 else (float("inf"), 0.0)

        result = SimResult(
            schedule=cfg.schedule,
            n_chunks=self.n_chunks,
            throughput_ms_per_chunk=throughput,
            eff_fps=eff_fps,
            rt_ratio=rt_ratio,
            max_queue_occupancy=self.max_in_flight,
            producer_stalls=self.stalls,
            emission_indices=list(self.emission),
            vae_input_frames=cfg.vae_input_frames,
            retained_pixel_frames=cfg.retained_pixel_frames,
            peak_snapshot_frames=self.max_in_flight * cfg.vae_input_frames,
            jobs=[self.jobs[i] for i in sorted(self.jobs)],
        )
        logger.info(
            f"シミュレーション完了: {cfg.schedule.value}, {self.n_chunks} チャンク, "
            f"スループット {throughput:.1f} ms/chunk, 最大キュー {self.max_in_flight}"
        )
        return result


def simulate(cfg: PipelineConfig, n_chunks: int, clone_snapshots: bool = True) -> SimResult:
    """パイプラインを n_chunks 分シミュレート"""
    return PipelineSimulator(cfg, n_chunks, clone_snapshots=clone_snapshots).run()


def expand_grid(points: Sequence[GridPoint], axes: Dict[str, List[Any]]) -> List[GridPoint]:
    """グリッド点と軸の直積を展開"""
    return expand_points(points, axes)


def _config_for(base: PipelineConfig, point: GridPoint) -> PipelineConfig:
    return point.apply(base)


def _row(point: GridPoint, cfg: PipelineConfig, mode: ReportMode, throughput: float,
         max_queue: Optional[int]) -> SweepRow:
    eff_fps, rt_ratio = derived_metrics(throughput, cfg)
    return SweepRow(
        backend=point.backend,
        L=cfg.overlap_frames,
        Q=cfg.queue_depth,
        mode=mode,
        throughput_ms=throughput,
        eff_fps=eff_fps,
        rt_ratio=rt_ratio,
        max_queue=max_queue,
    )


def sweep(
    base_cfg: PipelineConfig,
    points: Sequence[GridPoint],
    modes: Sequence[ReportMode] = (ReportMode.SEQUENTIAL, ReportMode.OVERLAPPED),
    n_chunks: int = 64,
) -> List[SweepRow]:
    """グリッドの各点・各モードについて結果行を作る"""
    if not points:
        logger.warning("スイープのグリッドが空です")
        return []

    rows: List[SweepRow] = []
    for point in points:
        cfg = _config_for(base_cfg, point)
        for mode in modes:
            if mode == ReportMode.MEASURED:
                if point.measured_throughput_ms is None:
                    logger.warning(f"{point.backend}: 実測スループットがないため measured 行を省略")
                    continue
                rows.append(_row(point, cfg, mode, point.measured_throughput_ms, None))
                continue

            if mode == ReportMode.SEQUENTIAL:
                run_cfg = cfg.model_copy(update={"schedule": Schedule.SEQUENTIAL})
            elif mode == ReportMode.IDEAL:
                run_cfg = cfg.model_copy(update={"schedule": Schedule.OVERLAPPED, "contention_factor": 1.0})
            else:
                run_cfg = cfg.model_copy(update={"schedule": Schedule.OVERLAPPED})
            result = simulate(run_cfg, n_chunks)
            rows.append(_row(point, run_cfg, mode, result.throughput_ms_per_chunk, result.max_queue_occupancy))
        logger.info(f"スイープ点完了: backend={point.backend}, L={cfg.overlap_frames}, Q={cfg.queue_depth}")
    return rows


def bracket(base_cfg: PipelineConfig, point: GridPoint, n_chunks: int = 64) -> Tuple[float, float]:
    """(理想オーバーラップ, 逐次) のスループット区間"""
    cfg = _config_for(base_cfg, point)
    ideal = simulate(cfg.model_copy(update={"schedule": Schedule.OVERLAPPED, "contention_factor": 1.0}), n_chunks)
    sequential = simulate(cfg.model_copy(update={"schedule": Schedule.SEQUENTIAL}), n_chunks)
    return ideal.throughput_ms_per_chunk, sequential.throughput_ms_per_chunk
