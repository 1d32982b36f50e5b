"""Manifest-level glue: statistics fitting, feature building and evaluation reports."""

from __future__ import annotations

import csv
import io
import os
import threading
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import DataError
from .corpus import MixtureSpec, RealizedMixture, check_files, realize
from .features import FeatureBundle, make_bundle
from .inference import MODES, enhance_all_modes
from .metrics import segmental_snr, si_sdr, stoi
from .model import MTMSNet
from .spectral import stft
from .targets import SnrStats, fit_compression_stats


def realize_all(records: Sequence[MixtureSpec], root: str | Path) -> list[RealizedMixture]:
    check_files(records, root)
    cache: dict = {}
    return [realize(r, root, cache) for r in records]


def stats_from_mixtures(mixtures: Sequence[RealizedMixture]) -> SnrStats:
    if not mixtures:
        raise DataError("no mixtures to fit statistics on")
    return fit_compression_stats((stft(m.clean), stft(m.noise)) for m in mixtures)


def bundles_from_mixtures(mixtures: Sequence[RealizedMixture], stats: SnrStats) -> list[FeatureBundle]:
    return [make_bundle(m.clean, m.noise, stats) for m in mixtures]


@dataclass(frozen=True)
class EvalRow:
    utterance: str
    mode: str
    snr_db: float
    stoi: float
    si_sdr: float
    seg_snr: float


def _metrics(clean: np.ndarray, out: np.ndarray) -> tuple[float, float, float]:
    c = clean[: out.size]
    return stoi(c, out), si_sdr(c, out), segmental_snr(c, out)


def evaluate_mixture(m: RealizedMixture, net: MTMSNet, stats: SnrStats, modes=MODES,
                     include_noisy: bool = True) -> list[EvalRow]:
    outs = enhance_all_modes(m.noisy, net, stats, modes)
    rows = []
    n = next(iter(outs.values())).samples.size
    if include_noisy:
        rows.append(EvalRow(m.spec.id, "noisy", m.spec.snr_db, *_metrics(m.clean.samples, m.noisy.samples[:n])))
    for mode, w in outs.items():
        rows.append(EvalRow(m.spec.id, mode, m.spec.snr_db, *_metrics(m.clean.samples, w.samples)))
    return rows


def evaluation_threads() -> int:
    env = os.environ.get("MTMS_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def evaluate(mixtures: Sequence[RealizedMixture], net: MTMSNet, stats: SnrStats, modes=MODES,
             threads: int | None = None) -> list[EvalRow]:
    threads = threads or evaluation_threads()
    local = threading.local()

    def job(m):
        # one model instance per worker over the shared, read-only parameters
        if not hasattr(local, "net"):
            local.net = MTMSNet(net.cfg, net.params)
        return evaluate_mixture(m, local.net, stats, modes)

    if threads == 1:
        parts = [job(m) for m in mixtures]
    else:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(job, mixtures))
    return [r for p in parts for r in p]


def summarize(rows: Sequence[EvalRow]) -> list[tuple[float, str, int, float, float, float]]:
    groups: dict[tuple[float, str], list[EvalRow]] = defaultdict(list)
    for r in rows:
        groups[(r.snr_db, r.mode)].append(r)
    out = []
    for (snr, mode), rs in sorted(groups.items()):
        out.append((snr, mode, len(rs), float(np.mean([r.stoi for r in rs])),
                    float(np.mean([r.si_sdr for r in rs])), float(np.mean([r.seg_snr for r in rs]))))
    return out


def report_text(rows: Sequence[EvalRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["utterance_id", "mode", "snr_db", "stoi", "si_sdr", "seg_snr"])
    for r in rows:
        w.writerow([r.utterance, r.mode, f"{r.snr_db:.6f}", f"{r.stoi:.6f}", f"{r.si_sdr:.6f}", f"{r.seg_snr:.6f}"])
    buf.write("\n# summary: per-SNR means\n")
    w.writerow(["snr_db", "mode", "n", "stoi", "si_sdr", "seg_snr"])
    for snr, mode, n, a, b, c in summarize(rows):
        w.writerow([f"{snr:.6f}", mode, n, f"{a:.6f}", f"{b:.6f}", f"{c:.6f}"])
    return buf.getvalue()
