"""Frame-level audio descriptors, grouped feature-set summaries, windowing,
and min-max normalization.

The frame descriptor vector and the 102-dimension grouped summary
(loudness 7 / rhythm 22 / tonal 14 / timbre 59) are this library's own fixed
composition; silence conventions make every descriptor finite for any finite
input (zero spectrum -> centroid 0, flatness 0, tempo 0, etc.).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


SAMPLE_RATE = 44100
EPS = 1e-10


class FeatureError(Exception):
    """Invalid input to a feature operation."""


@dataclass(frozen=True, slots=True)
class FrameParams:
    frame_size: int = 2048
    hop: int = 1024
    window: str = "hann"

    def __post_init__(self):
        if self.hop > self.frame_size:
            raise FeatureError("hop must not exceed frame_size")
        if self.frame_size & (self.frame_size - 1):
            raise FeatureError("frame_size must be a power of two")


@dataclass(frozen=True, slots=True)
class WindowSpec:
    length: int = 80
    hop: int = 80
    head_trim: int = 10
    tail_trim: int = 10

    def __post_init__(self):
        if self.length < 1 or self.hop < 1:
            raise FeatureError("window length and hop must be >= 1")


@dataclass(slots=True)
class FeatureMatrix:
    clip_id: str
    values: np.ndarray  # (frames, dims)
    descriptor_names: list[str]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] < 1:
            raise FeatureError("feature matrix must be 2-D with >= 1 row")
        if len(self.descriptor_names) != self.values.shape[1]:
            raise FeatureError("descriptor name count does not match columns")
        if len(set(self.descriptor_names)) != len(self.descriptor_names):
            raise FeatureError("descriptor names must be unique")
        if not np.isfinite(self.values).all():
            raise FeatureError(f"non-finite feature values for clip {self.clip_id}")


@dataclass(frozen=True, slots=True)
class FeatureSetSummary:
    clip_id: str
    loudness: np.ndarray   # 7
    rhythm: np.ndarray     # 22
    tonal: np.ndarray      # 14
    timbre: np.ndarray     # 59

    def __post_init__(self):
        for name, size in GROUP_SIZES.items():
            vec = getattr(self, name)
            if vec.shape != (size,):
                raise FeatureError(f"{name} block must have {size} entries")
            if not np.isfinite(vec).all():
                raise FeatureError(f"non-finite {name} summary for {self.clip_id}")

    @property
    def combined(self) -> np.ndarray:
        return np.concatenate([self.loudness, self.rhythm, self.tonal, self.timbre])


GROUP_SIZES = {"loudness": 7, "rhythm": 22, "tonal": 14, "timbre": 59}

LOUDNESS_NAMES = [
    "rms_mean", "rms_std", "log_energy_mean", "log_energy_std",
    "dynamic_range_db", "crest_factor", "low_energy_rate",
]
RHYTHM_NAMES = [
    "onset_env_mean", "onset_env_std", "onset_env_skew", "onset_env_kurt",
    "onset_env_max", "onset_rate", "tempo_bpm", "tempo_salience",
    "tempo_peak1_bpm", "tempo_peak1_mag", "tempo_peak2_bpm", "tempo_peak2_mag",
    "tempo_hist_centroid", "tempo_hist_spread",
    "ioi_mean", "ioi_std", "ioi_min", "ioi_max",
    "pulse_clarity", "acf_first_peak_lag", "acf_first_peak_height",
    "onset_above_median_rate",
]
TONAL_NAMES = [f"chroma_mean_{i:02d}" for i in range(12)] + [
    "key_clarity", "chroma_flux_mean",
]
_SPECTRAL = [
    "centroid", "spread", "skewness", "kurtosis", "rolloff85", "rolloff95",
    "flux", "flatness", "entropy", "crest",
]
TIMBRE_NAMES = (
    [f"mfcc{i:02d}_mean" for i in range(1, 14)]
    + [f"mfcc{i:02d}_std" for i in range(1, 14)]
    + [f"{s}_mean" for s in _SPECTRAL] + [f"{s}_std" for s in _SPECTRAL]
    + ["zcr_mean", "zcr_std"]
    + [f"contrast_band{i}_mean" for i in range(6)]
    + ["hfc_mean", "hfc_std", "slope_mean", "slope_std", "peak_count_mean"]
)
SUMMARY_NAMES = LOUDNESS_NAMES + RHYTHM_NAMES + TONAL_NAMES + TIMBRE_NAMES

FRAME_DESCRIPTOR_NAMES = (
    ["rms", "zcr"] + _SPECTRAL
    + [f"mfcc{i:02d}" for i in range(1, 14)]
    + [f"chroma{i:02d}" for i in range(12)]
    + ["onset_strength"]
)

N_MFCC = 13
N_CHROMA = 12
_MEL_BANDS_FOR_MFCC = 26


def _frame_signal(samples: np.ndarray, params: FrameParams) -> np.ndarray:
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 1:
        raise FeatureError("expected a mono 1-D signal")
    if len(samples) < params.frame_size:
        raise FeatureError(
            f"signal of {len(samples)} samples shorter than one frame "
            f"({params.frame_size})"
        )
    n = (len(samples) - params.frame_size) // params.hop + 1
    idx = np.arange(params.frame_size)[None, :] + params.hop * np.arange(n)[:, None]
    return samples[idx]


def _window(params: FrameParams) -> np.ndarray:
    if params.window != "hann":
        raise FeatureError(f"unsupported window: {params.window}")
    return np.hanning(params.frame_size)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Triangular mel filterbank, shape (n_mels, n_fft // 2 + 1)."""
    if n_mels < 1:
        raise FeatureError("n_mels must be >= 1")
    freqs = np.fft.rfftfreq(n_fft, 1.0 / sample_rate)
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))
    bank = np.zeros((n_mels, len(freqs)))
    for i in range(n_mels):
        lo, mid, hi = edges[i], edges[i + 1], edges[i + 2]
        up = (freqs - lo) / max(mid - lo, EPS)
        down = (hi - freqs) / max(hi - mid, EPS)
        bank[i] = np.maximum(0.0, np.minimum(up, down))
    return bank


def mel_band_centers(n_mels: int, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))
    return edges[1:-1]


def stft_magnitude(samples: np.ndarray, params: FrameParams) -> np.ndarray:
    frames = _frame_signal(samples, params) * _window(params)
    return np.abs(np.fft.rfft(frames, axis=1))


def stft_log_mel(
    samples: np.ndarray,
    params: FrameParams = FrameParams(),
    n_mels: int = 64,
    sample_rate: int = SAMPLE_RATE,
) -> np.ndarray:
    """Log mel-band energies, shape (frames, n_mels); cells are log(E + eps)."""
    mag = stft_magnitude(samples, params)
    bank = mel_filterbank(n_mels, params.frame_size, sample_rate)
    return np.log(mag**2 @ bank.T + EPS)


def _safe_div(num, den):
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


def _spectral_moments(mag: np.ndarray, freqs: np.ndarray):
    """Centroid, spread, skewness, kurtosis of the magnitude distribution."""
    total = mag.sum(axis=1)
    centroid = _safe_div((mag * freqs).sum(axis=1), total)
    dev = freqs[None, :] - centroid[:, None]
    var = _safe_div((mag * dev**2).sum(axis=1), total)
    spread = np.sqrt(var)
    m3 = _safe_div((mag * dev**3).sum(axis=1), total)
    m4 = _safe_div((mag * dev**4).sum(axis=1), total)
    skew = _safe_div(m3, spread**3)
    kurt = _safe_div(m4, var**2)
    return centroid, spread, skew, kurt


def _rolloff(power: np.ndarray, freqs: np.ndarray, frac: float) -> np.ndarray:
    total = power.sum(axis=1)
    cum = np.cumsum(power, axis=1)
    out = np.zeros(len(power))
    nonzero = total > 0
    if nonzero.any():
        thresh = frac * total[nonzero]
        idx = (cum[nonzero] >= thresh[:, None]).argmax(axis=1)
        out[nonzero] = freqs[idx]
    return out


def _dct_ortho(x: np.ndarray, n_out: int) -> np.ndarray:
    """Orthonormal DCT-II along the last axis, truncated to n_out coefficients."""
    n = x.shape[-1]
    k = np.arange(n_out)[:, None]
    basis = np.cos(np.pi * k * (2 * np.arange(n)[None, :] + 1) / (2 * n))
    scale = np.full(n_out, np.sqrt(2.0 / n))
    scale[0] = np.sqrt(1.0 / n)
    return (x @ basis.T) * scale


def _chroma_map(freqs: np.ndarray) -> np.ndarray:
    """Pitch-class index per FFT bin (0 = C); -1 for out-of-range bins."""
    pc = np.full(len(freqs), -1, dtype=int)
    usable = (freqs >= 55.0) & (freqs <= 8000.0)
    midi = 69.0 + 12.0 * np.log2(freqs[usable] / 440.0)
    pc[usable] = np.round(midi).astype(int) % 12
    return pc


def frame_descriptors(
    samples: np.ndarray,
    params: FrameParams = FrameParams(),
    clip_id: str = "",
    sample_rate: int = SAMPLE_RATE,
) -> FeatureMatrix:
    """Per-frame descriptor vectors in the documented column order."""
    frames = _frame_signal(samples, params)
    mag = np.abs(np.fft.rfft(frames * _window(params), axis=1))
    power = mag**2
    freqs = np.fft.rfftfreq(params.frame_size, 1.0 / sample_rate)
    n_frames = len(frames)

    rms = np.sqrt((frames**2).mean(axis=1))
    signs = np.signbit(frames)
    zcr = (signs[:, 1:] != signs[:, :-1]).mean(axis=1)
    # a DC-only or silent frame has no crossings; signbit handles +-0 edge
    zcr[rms == 0] = 0.0

    centroid, spread, skew, kurt = _spectral_moments(mag, freqs)
    rolloff85 = _rolloff(power, freqs, 0.85)
    rolloff95 = _rolloff(power, freqs, 0.95)

    flux = np.zeros(n_frames)
    if n_frames > 1:
        flux[1:] = np.sqrt(((mag[1:] - mag[:-1]) ** 2).sum(axis=1))
    onset = np.zeros(n_frames)
    if n_frames > 1:
        onset[1:] = np.maximum(mag[1:] - mag[:-1], 0.0).sum(axis=1)

    ptotal = power.sum(axis=1)
    live = ptotal > 0
    flatness = np.zeros(n_frames)
    entropy = np.zeros(n_frames)
    crest = np.zeros(n_frames)
    if live.any():
        p = power[live]
        flatness[live] = np.exp(np.log(p + EPS).mean(axis=1)) / (p.mean(axis=1) + EPS)
        dist = p / p.sum(axis=1, keepdims=True)
        entropy[live] = -(dist * np.log(dist + EPS)).sum(axis=1) / np.log(p.shape[1])
        crest[live] = p.max(axis=1) / p.mean(axis=1)

    log_mel = np.log(power @ mel_filterbank(_MEL_BANDS_FOR_MFCC, params.frame_size,
                                            sample_rate).T + EPS)
    mfcc = _dct_ortho(log_mel, N_MFCC)

    pc = _chroma_map(freqs)
    chroma = np.zeros((n_frames, N_CHROMA))
    for c in range(N_CHROMA):
        cols = pc == c
        if cols.any():
            chroma[:, c] = power[:, cols].sum(axis=1)
    csum = chroma.sum(axis=1, keepdims=True)
    chroma = np.where(csum > 0, chroma / np.where(csum > 0, csum, 1.0), 0.0)

    values = np.column_stack([
        rms, zcr, centroid, spread, skew, kurt, rolloff85, rolloff95,
        flux, flatness, entropy, crest, mfcc, chroma, onset,
    ])
    return FeatureMatrix(clip_id=clip_id, values=values,
                         descriptor_names=list(FRAME_DESCRIPTOR_NAMES))


def _col(fm: FeatureMatrix, name: str) -> np.ndarray:
    return fm.values[:, fm.descriptor_names.index(name)]


def _moments(x: np.ndarray) -> tuple[float, float, float, float]:
    mean = float(x.mean())
    std = float(x.std())
    if std == 0.0:
        return mean, 0.0, 0.0, 0.0
    z = (x - mean) / std
    return mean, std, float((z**3).mean()), float((z**4).mean())


def _pick_onsets(onset: np.ndarray) -> np.ndarray:
    """Indices of local maxima of the onset envelope above mean + std."""
    if len(onset) < 3:
        return np.array([], dtype=int)
    thresh = onset.mean() + onset.std()
    mid = onset[1:-1]
    is_peak = (mid > onset[:-2]) & (mid >= onset[2:]) & (mid > thresh)
    return np.flatnonzero(is_peak) + 1


def _acf(x: np.ndarray) -> np.ndarray:
    x = x - x.mean()
    n = len(x)
    padded = np.zeros(2 * n)
    padded[:n] = x
    spec = np.fft.rfft(padded)
    return np.fft.irfft(spec * np.conj(spec))[:n].real


def _local_maxima(y: np.ndarray) -> np.ndarray:
    if len(y) < 3:
        return np.array([], dtype=int)
    mid = y[1:-1]
    return np.flatnonzero((mid > y[:-2]) & (mid >= y[2:])) + 1


def _rhythm_block(onset: np.ndarray, hop_seconds: float) -> np.ndarray:
    out = np.zeros(len(RHYTHM_NAMES))
    mean, std, skew, kurt = _moments(onset)
    out[0:5] = [mean, std, skew, kurt, float(onset.max(initial=0.0))]
    duration = len(onset) * hop_seconds

    peaks = _pick_onsets(onset)
    out[5] = len(peaks) / duration if duration > 0 else 0.0
    if len(peaks) >= 2:
        ioi = np.diff(peaks) * hop_seconds
        out[14:18] = [ioi.mean(), ioi.std(), ioi.min(), ioi.max()]

    acf = _acf(onset)
    if acf[0] > 0:
        acf_n = acf / acf[0]
        # candidate beat lags for 30..240 BPM
        lag_lo = max(1, int(np.floor(60.0 / 240.0 / hop_seconds)))
        lag_hi = min(len(acf_n) - 1, int(np.ceil(60.0 / 30.0 / hop_seconds)))
        if lag_hi > lag_lo:
            seg = acf_n[lag_lo:lag_hi + 1]
            peak_idx = _local_maxima(seg)
            if len(peak_idx) == 0:
                peak_idx = np.array([int(seg.argmax())])
            lags = peak_idx + lag_lo
            mags = seg[peak_idx]
            order = np.argsort(mags)[::-1]
            lags, mags = lags[order], mags[order]
            bpms = 60.0 / (lags * hop_seconds)

            out[6] = bpms[0]                   # tempo
            out[7] = max(mags[0], 0.0)         # salience
            out[8:10] = [bpms[0], mags[0]]
            if len(bpms) > 1:
                out[10:12] = [bpms[1], mags[1]]
                out[18] = (mags[0] - mags[1]) / abs(mags[0]) if mags[0] != 0 else 0.0
            else:
                out[18] = max(mags[0], 0.0)
            w = np.maximum(mags, 0.0)
            if w.sum() > 0:
                cen = float((bpms * w).sum() / w.sum())
                out[12] = cen
                out[13] = float(np.sqrt(((bpms - cen) ** 2 * w).sum() / w.sum()))
        all_peaks = _local_maxima(acf_n)
        if len(all_peaks):
            out[19] = all_peaks[0] * hop_seconds
            out[20] = acf_n[all_peaks[0]]

    med = np.median(onset)
    out[21] = float((onset > med).mean())
    return out


def _spectral_contrast(power: np.ndarray, freqs: np.ndarray) -> np.ndarray:
    """Mean log peak-to-valley ratio in 6 octave-ish bands."""
    edges = [0.0, 400.0, 800.0, 1600.0, 3200.0, 6400.0, freqs[-1] + 1.0]
    out = np.zeros(6)
    for b in range(6):
        cols = (freqs >= edges[b]) & (freqs < edges[b + 1])
        if cols.sum() < 2:
            continue
        band = np.sort(power[:, cols], axis=1)
        k = max(1, int(0.2 * band.shape[1]))
        valley = band[:, :k].mean(axis=1)
        peak = band[:, -k:].mean(axis=1)
        out[b] = float(np.mean(np.log(peak + EPS) - np.log(valley + EPS)))
    return out


def summarize_feature_sets(
    fm: FeatureMatrix,
    samples: np.ndarray,
    params: FrameParams = FrameParams(),
    sample_rate: int = SAMPLE_RATE,
) -> FeatureSetSummary:
    """Collapse a clip to the fixed 7/22/14/59 grouped descriptor summary."""
    frames = _frame_signal(samples, params)
    if len(frames) != fm.values.shape[0]:
        raise FeatureError("feature matrix does not match the supplied samples")
    hop_seconds = params.hop / sample_rate

    rms = _col(fm, "rms")
    if rms.max(initial=0.0) == 0.0:
        loudness = np.zeros(7)
    else:
        log_energy = np.log(rms**2 + EPS)
        dyn = 20.0 * np.log10((rms.max() + EPS) / (rms.min() + EPS))
        peak = float(np.abs(samples).max())
        global_rms = float(np.sqrt(np.mean(np.asarray(samples) ** 2)))
        loudness = np.array([
            rms.mean(), rms.std(), log_energy.mean(), log_energy.std(),
            dyn, peak / (global_rms + EPS), float((rms < rms.mean()).mean()),
        ])

    rhythm = _rhythm_block(_col(fm, "onset_strength"), hop_seconds)

    chroma = fm.values[:, [fm.descriptor_names.index(f"chroma{i:02d}")
                           for i in range(12)]]
    chroma_mean = chroma.mean(axis=0)
    total = chroma_mean.sum()
    key_clarity = float(chroma_mean.max() / total) if total > 0 else 0.0
    if len(chroma) > 1:
        chroma_flux = float(np.sqrt(((chroma[1:] - chroma[:-1]) ** 2).sum(axis=1)).mean())
    else:
        chroma_flux = 0.0
    tonal = np.concatenate([chroma_mean, [key_clarity, chroma_flux]])

    mfcc = fm.values[:, [fm.descriptor_names.index(f"mfcc{i:02d}")
                         for i in range(1, 14)]]
    spectral = fm.values[:, [fm.descriptor_names.index(s) for s in _SPECTRAL]]
    zcr = _col(fm, "zcr")

    mag = np.abs(np.fft.rfft(frames * _window(params), axis=1))
    power = mag**2
    freqs = np.fft.rfftfreq(params.frame_size, 1.0 / sample_rate)
    hfc = (np.arange(power.shape[1]) * power).sum(axis=1)
    fc = freqs - freqs.mean()
    denom = float((fc**2).sum())
    slope = (mag * fc).sum(axis=1) / denom
    live = power.sum(axis=1) > 0
    peak_counts = np.zeros(len(frames))
    if live.any():
        p = power[live]
        mid = p[:, 1:-1]
        is_peak = (mid > p[:, :-2]) & (mid >= p[:, 2:]) & (mid > p.mean(axis=1, keepdims=True))
        peak_counts[live] = is_peak.sum(axis=1)

    timbre = np.concatenate([
        mfcc.mean(axis=0), mfcc.std(axis=0),
        spectral.mean(axis=0), spectral.std(axis=0),
        [zcr.mean(), zcr.std()],
        _spectral_contrast(power, freqs),
        [hfc.mean(), hfc.std(), slope.mean(), slope.std(), peak_counts.mean()],
    ])
    return FeatureSetSummary(clip_id=fm.clip_id, loudness=loudness,
                             rhythm=rhythm, tonal=tonal, timbre=timbre)


def make_windows(fm: FeatureMatrix, spec: WindowSpec = WindowSpec()) -> list[FeatureMatrix]:
    """Cut trimmed, fixed-length windows out of a feature matrix."""
    rows = fm.values.shape[0]
    usable = rows - spec.head_trim - spec.tail_trim
    if usable < spec.length:
        raise FeatureError(
            f"clip {fm.clip_id!r} too short: {usable} usable rows < {spec.length}"
        )
    windows = []
    start = spec.head_trim
    while start + spec.length <= rows - spec.tail_trim:
        windows.append(FeatureMatrix(
            clip_id=fm.clip_id,
            values=fm.values[start:start + spec.length].copy(),
            descriptor_names=list(fm.descriptor_names),
        ))
        start += spec.hop
    return windows


def minmax_fit(train: Sequence[FeatureMatrix]) -> tuple[np.ndarray, np.ndarray]:
    if not train:
        raise FeatureError("cannot fit normalization on an empty training set")
    dims = {m.values.shape[1] for m in train}
    if len(dims) != 1:
        raise FeatureError(f"inconsistent feature dimensions: {sorted(dims)}")
    stacked = np.vstack([m.values for m in train])
    return stacked.min(axis=0), stacked.max(axis=0)


def minmax_apply(matrices: Sequence[FeatureMatrix], mins: np.ndarray,
                 maxs: np.ndarray) -> list[FeatureMatrix]:
    out = []
    for m in matrices:
        if m.values.shape[1] != len(mins):
            raise FeatureError("dimension mismatch in normalization")
        span = maxs - mins
        scaled = np.where(span > 0, (m.values - mins) / np.where(span > 0, span, 1.0), 0.0)
        out.append(FeatureMatrix(m.clip_id, scaled, list(m.descriptor_names)))
    return out


def minmax_normalize(
    train: Sequence[FeatureMatrix],
    apply: Sequence[FeatureMatrix] = (),
) -> tuple[list[FeatureMatrix], list[FeatureMatrix], np.ndarray, np.ndarray]:
    """Fit per-dimension min/max on train only, then scale both lists."""
    mins, maxs = minmax_fit(train)
    return minmax_apply(train, mins, maxs), minmax_apply(apply, mins, maxs), mins, maxs


FMX_MAGIC = b"FMX1"


def write_feature_matrix(fm: FeatureMatrix, path: str | Path) -> None:
    rows, cols = fm.values.shape
    with open(path, "wb") as fh:
        fh.write(FMX_MAGIC)
        fh.write(struct.pack("<II", rows, cols))
        fh.write(fm.values.astype("<f4").tobytes())
    Path(path).with_suffix(Path(path).suffix + ".names").write_text(
        "\n".join(fm.descriptor_names) + "\n", encoding="utf-8"
    )


def read_feature_matrix(path: str | Path, clip_id: str = "") -> FeatureMatrix:
    raw = Path(path).read_bytes()
    if raw[:4] != FMX_MAGIC:
        raise FeatureError(f"bad feature-matrix magic in {path}")
    rows, cols = struct.unpack_from("<II", raw, 4)
    expected = 12 + rows * cols * 4
    if len(raw) != expected:
        raise FeatureError(f"truncated feature matrix {path}")
    values = np.frombuffer(raw, dtype="<f4", offset=12).reshape(rows, cols)
    names_path = Path(path).with_suffix(Path(path).suffix + ".names")
    if names_path.exists():
        names = names_path.read_text(encoding="utf-8").splitlines()
    else:
        names = [f"dim{i:03d}" for i in range(cols)]
    return FeatureMatrix(clip_id or Path(path).stem, values.astype(np.float64), names)
