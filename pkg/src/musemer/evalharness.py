"""Experiment runners and metrics: embedding import, repeated shuffle-split
evaluation with clip-level splits, window-to-clip ensembling, R^2/MSE,
paired t-tests, and line-delimited report files.

Every runner fits normalization, grid search, and feature selection on the
training clips of each repeat only; a LeakageMonitor can record which clips
were touched during fitting so tests can assert the absence of leakage.
"""

from __future__ import annotations

import struct
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import betainc

from . import features as feat
from . import seqnet, svr


class EvalError(Exception):
    """Invalid input to a metric or experiment runner."""


@dataclass(slots=True)
class EmbeddingSequence:
    clip_id: str
    vectors: np.ndarray  # (count, dim)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise EvalError("embedding vectors must form a 2-D array")
        if not np.isfinite(self.vectors).all():
            raise EvalError(f"non-finite embeddings for clip {self.clip_id}")


EMB_MAGIC = b"EMB1"


def write_embeddings(seq: EmbeddingSequence, path: str | Path) -> None:
    count, dim = seq.vectors.shape
    with open(path, "wb") as fh:
        fh.write(EMB_MAGIC)
        fh.write(struct.pack("<II", count, dim))
        fh.write(seq.vectors.astype("<f4").tobytes())


def import_embeddings(path: str | Path, clip_id: str = "") -> EmbeddingSequence:
    raw = Path(path).read_bytes()
    if raw[:4] != EMB_MAGIC:
        raise EvalError(f"bad embedding magic in {path}")
    count, dim = struct.unpack_from("<II", raw, 4)
    if len(raw) != 12 + count * dim * 4:
        raise EvalError(f"embedding payload size mismatch in {path}")
    vectors = np.frombuffer(raw, dtype="<f4", offset=12).reshape(count, dim)
    return EmbeddingSequence(clip_id or Path(path).stem, vectors.astype(np.float64))


def trim_ends(seq: EmbeddingSequence) -> EmbeddingSequence:
    """Drop the first and last vector (clip edges differ from the middle)."""
    if seq.vectors.shape[0] <= 2:
        raise EvalError(
            f"clip {seq.clip_id!r} has {seq.vectors.shape[0]} vectors; "
            "need >= 3 to trim"
        )
    return EmbeddingSequence(seq.clip_id, seq.vectors[1:-1].copy())


def regression_metrics(y_true, y_pred) -> tuple[float, float]:
    y_true = np.asarray(y_true, dtype=np.float64).ravel()
    y_pred = np.asarray(y_pred, dtype=np.float64).ravel()
    if len(y_true) != len(y_pred) or len(y_true) == 0:
        raise EvalError("length mismatch or empty inputs")
    mse = float(((y_true - y_pred) ** 2).mean())
    ss_tot = float(((y_true - y_true.mean()) ** 2).sum())
    if ss_tot == 0.0:
        raise EvalError("R^2 undefined for zero-variance targets")
    r2 = 1.0 - float(((y_true - y_pred) ** 2).sum()) / ss_tot
    return r2, mse


def ensemble_average(window_preds: Mapping[str, Sequence[float]]) -> dict[str, float]:
    out = {}
    for clip_id, preds in window_preds.items():
        if len(preds) == 0:
            raise EvalError(f"no predictions for clip {clip_id}")
        out[clip_id] = float(np.mean(preds))
    return out


@dataclass(frozen=True, slots=True)
class TTestResult:
    t: float
    df: int
    p: float


def paired_t_test(a, b) -> TTestResult:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if len(a) != len(b) or len(a) < 2:
        raise EvalError("paired t-test needs equal-length inputs with n >= 2")
    d = a - b
    sd = d.std(ddof=1)
    if sd == 0.0:
        raise EvalError("degenerate paired t-test: zero-variance differences")
    n = len(d)
    t = float(d.mean() / (sd / np.sqrt(n)))
    df = n - 1
    # two-tailed p from Student-t via the regularized incomplete beta
    x = df / (df + t * t)
    p = float(betainc(df / 2.0, 0.5, x))
    return TTestResult(t=t, df=df, p=p)


@dataclass(frozen=True, slots=True)
class SplitPlan:
    n_repeats: int
    test_fraction: float
    seed: int
    splits: tuple[tuple[tuple[str, ...], tuple[str, ...]], ...]  # (train, test)


def make_split_plan(clip_ids: Sequence[str], n_repeats: int = 10,
                    test_fraction: float = 0.1, seed: int = 0) -> SplitPlan:
    clip_ids = list(clip_ids)
    if len(set(clip_ids)) != len(clip_ids):
        raise EvalError("duplicate clip ids in split plan input")
    n_test = max(1, int(round(test_fraction * len(clip_ids))))
    if n_test >= len(clip_ids):
        raise EvalError("too few clips for the requested test fraction")
    rng = np.random.default_rng(seed)
    splits = []
    for _ in range(n_repeats):
        order = [clip_ids[i] for i in rng.permutation(len(clip_ids))]
        splits.append((tuple(sorted(order[n_test:])), tuple(sorted(order[:n_test]))))
    return SplitPlan(n_repeats, test_fraction, seed, tuple(splits))


class LeakageMonitor:
    """Records which clips each pipeline phase touched, per repeat."""

    FIT_PHASES = ("normalize_fit", "grid_search", "rfe", "train")

    def __init__(self):
        self.events: list[tuple[int, str, str]] = []  # (repeat, phase, clip)
        self._repeat = -1
        self._phase = "idle"

    def set_repeat(self, repeat: int) -> None:
        self._repeat = repeat

    @contextmanager
    def phase(self, name: str):
        prev = self._phase
        self._phase = name
        try:
            yield
        finally:
            self._phase = prev

    def touch(self, clip_id: str) -> None:
        self.events.append((self._repeat, self._phase, clip_id))

    def touch_all(self, clip_ids) -> None:
        for c in clip_ids:
            self.touch(c)

    def fit_violations(self, plan: SplitPlan) -> list[tuple[int, str, str]]:
        """Fit-phase touches of clips in the same repeat's test set."""
        out = []
        for repeat, phase, clip in self.events:
            if phase in self.FIT_PHASES and 0 <= repeat < len(plan.splits):
                if clip in plan.splits[repeat][1]:
                    out.append((repeat, phase, clip))
        return out


def _null_monitor() -> LeakageMonitor:
    return LeakageMonitor()


def shuffle_split_eval(
    windows_by_clip: Mapping[str, np.ndarray],
    ratings: Mapping[str, float],
    plan: SplitPlan,
    fit: Callable[[Mapping[str, np.ndarray], Mapping[str, float]],
                  Callable[[np.ndarray], np.ndarray]],
    monitor: LeakageMonitor | None = None,
) -> list[tuple[float, float]]:
    """Per-repeat (R^2, MSE) with clip-level splits and mean ensembling.

    ``fit`` receives the training clips' window arrays and ratings and must
    return a predictor over window arrays; normalization and model selection
    belong inside ``fit`` so they never see test clips.
    """
    monitor = monitor or _null_monitor()
    for clip_id, wins in windows_by_clip.items():
        if np.asarray(wins).shape[0] == 0:
            raise EvalError(f"clip {clip_id} has no windows")
        if clip_id not in ratings:
            raise EvalError(f"clip {clip_id} has no rating")
    results = []
    for repeat, (train_ids, test_ids) in enumerate(plan.splits):
        monitor.set_repeat(repeat)
        train_windows = {c: windows_by_clip[c] for c in train_ids}
        train_ratings = {c: ratings[c] for c in train_ids}
        predictor = fit(train_windows, train_ratings)
        per_clip = {}
        with monitor.phase("predict"):
            for c in test_ids:
                monitor.touch(c)
                per_clip[c] = predictor(np.asarray(windows_by_clip[c]))
        ensembled = ensemble_average(per_clip)
        y_true = [ratings[c] for c in test_ids]
        y_pred = [ensembled[c] for c in test_ids]
        results.append(regression_metrics(y_true, y_pred))
    return results


@dataclass(slots=True)
class ExperimentReport:
    kind: str
    entries: dict  # str -> float | int | str | list[float]

    def get(self, key, default=None):
        return self.entries.get(key, default)


def serialize_report(report: ExperimentReport) -> str:
    lines = [f"kind={report.kind}"]
    for key, value in report.entries.items():
        if isinstance(value, (list, tuple)):
            rendered = ",".join(
                repr(v) if isinstance(v, int) else repr(float(v)) for v in value
            )
            lines.append(f"{key}=[{rendered}]")
        elif isinstance(value, bool):
            lines.append(f"{key}={value}")
        elif isinstance(value, float):
            lines.append(f"{key}={value!r}")
        else:
            lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> ExperimentReport:
    kind = None
    entries = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, _, raw = line.partition("=")
        if not _:
            raise EvalError(f"malformed report line: {line!r}")
        if key == "kind":
            kind = raw
            continue
        if raw.startswith("[") and raw.endswith("]"):
            body = raw[1:-1]
            items = []
            for v in body.split(",") if body else []:
                try:
                    items.append(int(v))
                except ValueError:
                    items.append(float(v))
            entries[key] = items
        else:
            for cast in (int, float):
                try:
                    entries[key] = cast(raw)
                    break
                except ValueError:
                    continue
            else:
                entries[key] = raw
    if kind is None:
        raise EvalError("report missing kind line")
    return ExperimentReport(kind=kind, entries=entries)


def write_report(report: ExperimentReport, path: str | Path) -> None:
    Path(path).write_text(serialize_report(report), encoding="utf-8")


def read_report(path: str | Path) -> ExperimentReport:
    return parse_report(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True, slots=True)
class TransferConfig:
    """Knobs for the embedding -> SVR pipelines."""

    c_grid: tuple[float, ...] = tuple(svr.DEFAULT_C_GRID)
    gamma_grid: tuple[float, ...] = tuple(svr.DEFAULT_GAMMA_GRID)
    cv_folds: int = 5
    epsilon: float = 0.1
    n_repeats: int = 10
    test_fraction: float = 0.1
    seed: int = 0


def _vectors_to_matrix(wins) -> np.ndarray:
    arr = np.asarray(wins, dtype=np.float64)
    return arr if arr.ndim == 2 else arr.reshape(len(arr), -1)


def _normalize_fit(stack: np.ndarray):
    mins = stack.min(axis=0)
    maxs = stack.max(axis=0)
    span = maxs - mins

    def apply(x):
        return np.where(span > 0, (x - mins) / np.where(span > 0, span, 1.0), 0.0)

    return apply


def _svr_window_fit(config: TransferConfig, monitor: LeakageMonitor):
    """fit() callback: min-max normalize, grid-search an RBF SVR, train."""

    def fit(train_windows, train_ratings):
        with monitor.phase("normalize_fit"):
            monitor.touch_all(train_windows)
            stack = np.vstack([_vectors_to_matrix(w) for w in train_windows.values()])
            normalize = _normalize_fit(stack)
        X, y = [], []
        for clip_id, wins in train_windows.items():
            mat = normalize(_vectors_to_matrix(wins))
            X.append(mat)
            y.extend([train_ratings[clip_id]] * len(mat))
        X = np.vstack(X)
        y = np.asarray(y)
        with monitor.phase("grid_search"):
            monitor.touch_all(train_windows)
            result = svr.grid_search(
                X, y, config.c_grid, config.gamma_grid, k=config.cv_folds,
                seed=config.seed, epsilon=config.epsilon,
            )
        with monitor.phase("train"):
            monitor.touch_all(train_windows)
            model = svr.train_svr(X, y, result.best, result.best_kernel)

        def predictor(wins):
            return svr.predict_many(model, normalize(_vectors_to_matrix(wins)))

        return predictor

    return fit


def run_transfer_experiment(
    sequences: Mapping[str, np.ndarray],
    ratings_by_dim: Mapping[str, Mapping[str, float]],
    config: TransferConfig = TransferConfig(),
    monitor: LeakageMonitor | None = None,
) -> ExperimentReport:
    """Embedding vectors -> SVR -> repeated shuffle-split scores.

    ``sequences`` maps clip id to its (count, dim) embedding array or an
    ``EmbeddingSequence`` (already trimmed). ``ratings_by_dim`` maps dimension
    name -> clip -> rating. The report mirrors the per-corpus arousal/valence
    R^2 and MSE layout.
    """
    monitor = monitor or _null_monitor()
    sequences = {
        c: (s.vectors if isinstance(s, EmbeddingSequence) else np.asarray(s))
        for c, s in sequences.items()
    }
    clip_ids = sorted(sequences)
    plan = make_split_plan(clip_ids, config.n_repeats, config.test_fraction,
                           config.seed)
    entries: dict = {"n_repeats": config.n_repeats, "seed": config.seed,
                     "n_clips": len(clip_ids)}
    for dim, ratings in ratings_by_dim.items():
        missing = [c for c in clip_ids if c not in ratings]
        if missing:
            raise EvalError(f"missing {dim} ratings for {missing[:3]}")
        results = shuffle_split_eval(
            sequences, ratings, plan, _svr_window_fit(config, monitor), monitor,
        )
        r2s = [r for r, _ in results]
        mses = [m for _, m in results]
        entries[f"{dim}.r2_per_repeat"] = r2s
        entries[f"{dim}.mse_per_repeat"] = mses
        entries[f"{dim}.r2_mean"] = float(np.mean(r2s))
        entries[f"{dim}.mse_mean"] = float(np.mean(mses))
    return ExperimentReport(kind="transfer", entries=entries)


@dataclass(frozen=True, slots=True)
class ClassifyConfig:
    hidden_dim: int = 32
    holdout_fraction: float = 0.1
    train: seqnet.TrainConfig = seqnet.TrainConfig(epochs=30)
    seed: int = 0


def run_classification_experiment(
    train_windows: Mapping[str, Sequence[np.ndarray]],
    train_labels: Mapping[str, float],
    test_windows: Mapping[str, Sequence[np.ndarray]],
    config: ClassifyConfig = ClassifyConfig(),
    class_names: tuple[str, str] = ("WCMED", "CCMED"),
) -> ExperimentReport:
    """Binary corpus classifier: min-max normalize on training windows, train
    the sigmoid LSTM with a validation split, report held-out training-domain
    accuracy and per-class classification counts on the test set."""
    labels = set(train_labels.values())
    if labels != {0.0, 1.0} and labels != {0, 1}:
        raise EvalError("training data must contain both classes with 0/1 labels")

    rng = np.random.default_rng(config.seed)
    clip_ids = sorted(train_windows)
    n_hold = max(1, int(round(config.holdout_fraction * len(clip_ids))))
    if n_hold >= len(clip_ids):
        raise EvalError("too few training clips for a held-out slice")
    order = [clip_ids[i] for i in rng.permutation(len(clip_ids))]
    held_ids, fit_ids = order[:n_hold], order[n_hold:]
    if len({train_labels[c] for c in fit_ids}) < 2:
        raise EvalError("held-out slice left a single-class training set")

    stack = np.vstack([np.vstack([np.asarray(w) for w in train_windows[c]])
                       for c in fit_ids])
    normalize = _normalize_fit(stack)

    def windows_of(mapping, ids):
        out = []
        for c in ids:
            for w in mapping[c]:
                out.append((normalize(np.asarray(w, dtype=np.float64)), c))
        return out

    dataset = [(w, float(train_labels[c])) for w, c in windows_of(train_windows, fit_ids)]
    input_dim = dataset[0][0].shape[1]
    model, history = seqnet.train(
        dataset, input_dim, hidden_dim=config.hidden_dim, head=seqnet.SIGMOID,
        config=config.train,
    )

    held = windows_of(train_windows, held_ids)
    held_correct = sum(
        1 for w, c in held
        if (seqnet.forward(model, w)[0] >= 0.5) == (train_labels[c] >= 0.5)
    )
    test = windows_of(test_windows, sorted(test_windows))
    n_pos = sum(1 for w, _ in test if seqnet.forward(model, w)[0] >= 0.5)

    entries = {
        "n_train_windows": len(dataset),
        "n_holdout_windows": len(held),
        "holdout_accuracy": held_correct / len(held) if held else 0.0,
        "n_test_windows": len(test),
        f"test_classified_as_{class_names[1]}": n_pos,
        f"test_classified_as_{class_names[0]}": len(test) - n_pos,
        f"test_fraction_{class_names[1]}": n_pos / len(test) if test else 0.0,
        "best_epoch": history.best_epoch,
    }
    return ExperimentReport(kind="classification", entries=entries)


@dataclass(frozen=True, slots=True)
class FeatureAnalysisConfig:
    c_grid: tuple[float, ...] = (0.1, 1.0, 10.0)
    cv_folds: int = 3
    epsilon: float = 0.1
    n_repeats: int = 10
    test_fraction: float = 0.1
    seed: int = 0
    run_rfe: bool = True


FEATURE_SETS = ("loudness", "rhythm", "tonal", "timbre", "all")


def run_feature_analysis(
    summaries: Mapping[str, feat.FeatureSetSummary],
    ratings: Mapping[str, float],
    config: FeatureAnalysisConfig = FeatureAnalysisConfig(),
    monitor: LeakageMonitor | None = None,
) -> ExperimentReport:
    """Linear-SVR regression per feature set (and all combined), with grid
    search over C and RFE fitted on training clips of each repeat."""
    monitor = monitor or _null_monitor()
    clip_ids = sorted(summaries)
    missing = [c for c in clip_ids if c not in ratings]
    if missing:
        raise EvalError(f"missing ratings for {missing[:3]}")
    plan = make_split_plan(clip_ids, config.n_repeats, config.test_fraction,
                           config.seed)

    def block(summary, name):
        if name == "all":
            return summary.combined
        return getattr(summary, name)

    entries: dict = {"n_repeats": config.n_repeats, "seed": config.seed,
                     "sets": ",".join(FEATURE_SETS)}
    for set_name in FEATURE_SETS:
        X_all = {c: block(summaries[c], set_name) for c in clip_ids}
        r2s = []
        selected_union: set[int] = set()
        for repeat, (train_ids, test_ids) in enumerate(plan.splits):
            monitor.set_repeat(repeat)
            with monitor.phase("normalize_fit"):
                monitor.touch_all(train_ids)
                stack = np.vstack([X_all[c] for c in train_ids])
                normalize = _normalize_fit(stack)
            Xtr = np.vstack([normalize(X_all[c]) for c in train_ids])
            ytr = np.asarray([ratings[c] for c in train_ids])
            with monitor.phase("grid_search"):
                monitor.touch_all(train_ids)
                gs = svr.grid_search(
                    Xtr, ytr, config.c_grid, k=config.cv_folds,
                    seed=config.seed, epsilon=config.epsilon,
                    kernel_kind="linear",
                )
            feats = list(range(Xtr.shape[1]))
            if config.run_rfe and Xtr.shape[1] > 1:
                with monitor.phase("rfe"):
                    monitor.touch_all(train_ids)
                    rfe_result = svr.rfe(Xtr, ytr, gs.best, k=config.cv_folds,
                                         seed=config.seed)
                feats = list(rfe_result.best_features)
            selected_union.update(feats)
            with monitor.phase("train"):
                monitor.touch_all(train_ids)
                model = svr.train_svr(Xtr[:, feats], ytr, gs.best,
                                      svr.linear_kernel())
            Xte = np.vstack([normalize(X_all[c]) for c in test_ids])[:, feats]
            yte = np.asarray([ratings[c] for c in test_ids])
            r2, _ = regression_metrics(yte, svr.predict_many(model, Xte))
            r2s.append(r2)
        entries[f"{set_name}.r2_per_repeat"] = r2s
        entries[f"{set_name}.r2_mean"] = float(np.mean(r2s))
        entries[f"{set_name}.selected_features"] = sorted(selected_union)
    return ExperimentReport(kind="feature_analysis", entries=entries)
