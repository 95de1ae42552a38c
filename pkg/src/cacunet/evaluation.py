"""Source-to-distortion ratio and median-over-tracks reporting.

The SDR of an estimate against a reference allows a short FIR distortion of
the reference: the estimate is projected onto the span of the reference and
its delays ``0 .. filter_len - 1`` (both zero-padded by ``filter_len - 1``
samples), and everything outside that span counts as distortion.  Tracks are
scored framewise and the median over frames is taken; a run is summarised by
the median over tracks, and several runs by the mean of their medians.
"""

from dataclasses import dataclass, field
import csv
import json
import logging
import math
from pathlib import Path

import numpy as np
import scipy.linalg

from ._validation import InvalidInputError, check_positive_int
from .spectral import Waveform

__all__ = [
    "SDR_CAP",
    "EvalReport",
    "sdr_frame",
    "sdr_track",
    "evaluate_separators",
    "evaluate_model",
    "compare_report",
    "write_report",
]

LOG = logging.getLogger(__name__)

SDR_CAP = 100.0
FILTER_LEN = 512
FRAME_S = 1.0


def _as_channels(x):
    if isinstance(x, Waveform):
        return x.samples
    x = np.asarray(x, dtype=np.float64)
    return x[np.newaxis] if x.ndim == 1 else x


def _project_channel(est, ref, filter_len):
    """Return (target energy, distortion energy) for one channel."""
    n = ref.shape[0]
    n_fft = int(2 ** math.ceil(math.log2(n + filter_len - 1)))
    ref_f = np.fft.rfft(ref, n_fft)
    est_f = np.fft.rfft(est, n_fft)
    autocorr = np.fft.irfft(np.abs(ref_f) ** 2, n_fft)[:filter_len]
    xcorr = np.fft.irfft(est_f * np.conj(ref_f), n_fft)[:filter_len]
    try:
        coef = scipy.linalg.solve_toeplitz(autocorr, xcorr)
        if not np.all(np.isfinite(coef)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        gram = scipy.linalg.toeplitz(autocorr)
        coef = np.linalg.lstsq(gram, xcorr, rcond=None)[0]
    target = np.convolve(ref, coef)   # length n + filter_len - 1
    est_pad = np.concatenate([est, np.zeros(filter_len - 1)])
    return float(np.dot(target, target)), float(np.sum((est_pad - target) ** 2))


def _ratio_db(target_energy, distortion_energy):
    if distortion_energy <= 1e-20 * max(target_energy, 1e-300):
        return SDR_CAP
    if target_energy <= 0:
        return -SDR_CAP
    return float(np.clip(10 * np.log10(target_energy / distortion_energy), -SDR_CAP, SDR_CAP))


def sdr_frame(est, ref, filter_len=FILTER_LEN):
    """SDR in dB of one segment; NaN when the reference is silent.

    Multichannel segments pool target and distortion energy over channels,
    each channel projected onto its own reference channel.
    """
    est, ref = _as_channels(est), _as_channels(ref)
    if est.shape != ref.shape:
        raise InvalidInputError(f"estimate {est.shape} and reference {ref.shape} differ")
    check_positive_int(filter_len, "filter_len")
    if est.shape[1] < filter_len:
        raise InvalidInputError(
            f"segment of {est.shape[1]} samples shorter than filter_len={filter_len}")
    if not np.any(ref):
        return float("nan")
    tgt = dist = 0.0
    for e, r in zip(est, ref):
        if not np.any(r):
            dist += float(np.dot(e, e))
            continue
        t, d = _project_channel(e, r, filter_len)
        tgt += t
        dist += d
    return _ratio_db(tgt, dist)


def frame_sdrs(est, ref, sample_rate, frame_s=FRAME_S, filter_len=FILTER_LEN):
    """SDR of every full window of ``frame_s`` seconds (hop = window)."""
    est, ref = _as_channels(est), _as_channels(ref)
    if est.shape != ref.shape:
        raise InvalidInputError(f"estimate {est.shape} and reference {ref.shape} differ")
    win = int(round(frame_s * sample_rate))
    n = ref.shape[1]
    if n <= win:
        return np.array([sdr_frame(est, ref, min(filter_len, n))])
    starts = range(0, n - win + 1, win)
    return np.array([sdr_frame(est[:, s:s + win], ref[:, s:s + win], filter_len)
                     for s in starts])


def sdr_track(est, ref, sample_rate=None, frame_s=FRAME_S, filter_len=FILTER_LEN):
    """Median framewise SDR of a track; NaN if every frame is flagged."""
    if sample_rate is None:
        if not isinstance(ref, Waveform):
            raise InvalidInputError("sample_rate is required for raw arrays")
        sample_rate = ref.sample_rate
    values = frame_sdrs(est, ref, sample_rate, frame_s, filter_len)
    values = values[~np.isnan(values)]
    return float(np.median(values)) if values.size else float("nan")


@dataclass
class EvalReport:
    """Per-track SDR (mean over runs) with median and mean-of-medians.

    ``per_run`` keeps each run's per-track values; ``flagged`` counts tracks
    whose SDR was undefined (silent reference) and were left out.
    """

    per_track: dict
    median_sdr: float
    run_seeds: list
    mean_of_medians: float
    run_medians: list = field(default_factory=list)
    per_run: list = field(default_factory=list)
    flagged: int = 0
    name: str = ""
    meta: dict = field(default_factory=dict)

    def summary(self):
        return {
            "name": self.name,
            "median_sdr": self.median_sdr,
            "mean_of_medians": self.mean_of_medians,
            "run_medians": self.run_medians,
            "runs": self.run_seeds,
            "flagged": self.flagged,
            **self.meta,
        }


def _nanmedian(values):
    arr = np.array([v for v in values if not math.isnan(v)])
    return float(np.median(arr)) if arr.size else float("nan")


def evaluate_separators(separators, test_set, run_ids=None, name="", **sdr_kw):
    """Score each separator (one per run) on ``test_set``.

    A separator is any object with ``separate(Waveform) -> Waveform``.
    """
    separators = list(separators)
    if not separators:
        raise InvalidInputError("need at least one run to evaluate")
    run_ids = list(run_ids) if run_ids is not None else list(range(len(separators)))
    per_run = []
    for sep in separators:
        scores = {}
        for track in test_set:
            est = sep.separate(track.mixture)
            scores[track.id] = sdr_track(est, track.vocals, **sdr_kw)
        per_run.append(scores)
    ids = sorted(per_run[0])
    per_track = {}
    for tid in ids:
        vals = [r[tid] for r in per_run if not math.isnan(r[tid])]
        per_track[tid] = float(np.mean(vals)) if vals else float("nan")
    run_medians = [_nanmedian(r.values()) for r in per_run]
    valid = [m for m in run_medians if not math.isnan(m)]
    return EvalReport(
        per_track=per_track,
        median_sdr=_nanmedian(per_track.values()),
        run_seeds=run_ids,
        mean_of_medians=float(np.mean(valid)) if valid else float("nan"),
        run_medians=run_medians,
        per_run=per_run,
        flagged=sum(math.isnan(v) for v in per_track.values()),
        name=name,
    )


def evaluate_model(checkpoints, test_set, name="", chunk_frames=None, **sdr_kw):
    """Load each checkpoint (one per run) and evaluate it on ``test_set``."""
    from .checkpoint import load_checkpoint
    from .training import SpectrogramSeparator

    checkpoints = list(checkpoints)
    if not checkpoints:
        raise InvalidInputError("need at least one checkpoint")
    seps, run_ids = [], []
    for path in checkpoints:
        ckpt = load_checkpoint(path)
        seps.append(SpectrogramSeparator(ckpt.model, chunk_frames=chunk_frames))
        run_ids.append(ckpt.train_config.get("seed", str(path)) if ckpt.train_config else str(path))
    report = evaluate_separators(seps, test_set, run_ids, name=name, **sdr_kw)
    report.meta["n_params"] = sum(p.numel() for p in seps[0].model.parameters())
    report.meta["n_blocks"] = len(seps[0].model.cfg.blocks)
    return report


def compare_report(reports, csv_path=None):
    """Tabulate named reports sorted by SDR (descending).

    ``reports`` maps a model name to an :class:`EvalReport`; each report's
    ``meta`` may carry ``n_blocks`` and ``n_params``.  Returns the text table
    and writes a CSV when ``csv_path`` is given.
    """
    if not reports:
        raise InvalidInputError("compare_report needs at least one report")
    rows = []
    for model_name, rep in reports.items():
        rows.append({
            "model": model_name,
            "n_blocks": rep.meta.get("n_blocks", ""),
            "n_params": rep.meta.get("n_params", ""),
            "sdr_db": rep.mean_of_medians,
        })
    rows.sort(key=lambda r: -np.inf if math.isnan(r["sdr_db"]) else -r["sdr_db"])
    rows.sort(key=lambda r: math.isnan(r["sdr_db"]))
    if csv_path is not None:
        with open(csv_path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
    header = f"{'model':<24} {'# blocks':>8} {'# params':>10} {'SDR':>8}"
    lines = [header, "-" * len(header)]
    for r in rows:
        params = f"{r['n_params'] / 1e6:.2f}M" if r["n_params"] != "" else ""
        lines.append(f"{r['model']:<24} {str(r['n_blocks']):>8} {params:>10} {r['sdr_db']:>8.2f}")
    return rows, "\n".join(lines)


def write_report(report, out_dir, stem="report"):
    """Write ``<stem>.csv`` (track_id,sdr_db,flag) and ``<stem>.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = out_dir / f"{stem}.csv", out_dir / f"{stem}.json"
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["track_id", "sdr_db", "flag"])
        for tid, v in sorted(report.per_track.items()):
            flagged = math.isnan(v)
            writer.writerow([tid, "" if flagged else f"{v:.6f}", "silent" if flagged else ""])
    with open(json_path, "w") as f:
        json.dump(report.summary(), f, indent=2, sort_keys=True)
    return csv_path, json_path
