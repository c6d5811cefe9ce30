"""Metrics, the setup x seed experiment matrix and plot-ready analysis files."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from cdpauth.authenticator import TrainConfig, TrainResult, aggregate, train
from cdpauth.errors import ConfigError
from cdpauth.setups import SetupSpec, standard_setups
from cdpauth.types import CdpTuple, normalized_correlation

log = logging.getLogger(__name__)

METRICS_HEADER = ["setup", "d_train", "a_train", "d_test", "a_test", "seed",
                  "p_miss", "p_fa", "auc", "n_test"]
KEYS = ["setup", "d_train", "a_train", "d_test", "a_test"]
SPLIT_POLICY = ("one fixed train/validation/test split for all seeds; seeds vary "
                "initialization, batch shuffling and augmentation only")

__all__ = ["SetupSpec", "standard_setups", "confusion_rates", "auc", "roc_curve", "trapezoid_auc",
           "kde_estimate", "silverman_bandwidth", "pca2", "MetricsRecord", "run_experiment_matrix"]


# -- scores -> rates ----------------------------------------------------------------

def _scores(values, what: str) -> np.ndarray:
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise ValueError(f"{what} scores are empty")
    return arr


def confusion_rates(original_scores, fake_scores, tau: float = 0.5) -> tuple[float, float]:
    """``(P_miss, P_fa)``: originals rejected (score < tau) and fakes accepted (score >= tau)."""
    o = _scores(original_scores, "original")
    f = _scores(fake_scores, "fake")
    return float(np.count_nonzero(o < tau)) / o.size, float(np.count_nonzero(f >= tau)) / f.size


def auc(original_scores, fake_scores) -> float:
    """Mann-Whitney estimate of P(original > fake), ties counted one half."""
    o = _scores(original_scores, "original")
    f = np.sort(_scores(fake_scores, "fake"))
    below = np.searchsorted(f, o, side="left")
    ties = np.searchsorted(f, o, side="right") - below
    u = float(below.sum()) + 0.5 * float(ties.sum())
    return u / (o.size * f.size)


def roc_curve(original_scores, fake_scores) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(P_fa, 1 - P_miss, thresholds)`` sweeping tau down through every distinct score.

    The first point is (0, 0) at tau = +inf and the last is (1, 1).
    """
    o = _scores(original_scores, "original")
    f = _scores(fake_scores, "fake")
    thresholds = np.unique(np.concatenate([o, f]))[::-1]
    o_sorted, f_sorted = np.sort(o), np.sort(f)
    tpr = (o.size - np.searchsorted(o_sorted, thresholds, side="left")) / o.size
    fpr = (f.size - np.searchsorted(f_sorted, thresholds, side="left")) / f.size
    return (np.concatenate([[0.0], fpr]), np.concatenate([[0.0], tpr]),
            np.concatenate([[np.inf], thresholds]))


def trapezoid_auc(fpr: np.ndarray, tpr: np.ndarray) -> float:
    return float(np.trapezoid(tpr, fpr))


# -- density and projection -------------------------------------------------------

def silverman_bandwidth(samples) -> float:
    x = np.asarray(samples, dtype=np.float64)
    return 1.06 * x.std(ddof=1) * x.size ** (-1 / 5)


def kde_estimate(samples, grid, bandwidth: float | None = None) -> np.ndarray:
    """Gaussian kernel density of ``samples`` evaluated on ``grid``."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size < 2:
        raise ValueError("kernel density estimation needs at least 2 samples")
    h = silverman_bandwidth(x) if bandwidth is None else float(bandwidth)
    if not h > 0:
        raise ValueError("bandwidth must be positive (are all samples equal?)")
    g = np.asarray(grid, dtype=np.float64)
    z = (g[:, None] - x[None, :]) / h
    return np.exp(-0.5 * z ** 2).sum(axis=1) / (x.size * h * math.sqrt(2 * math.pi))


def pca2(features) -> tuple[np.ndarray, tuple[float, float]]:
    """Project onto the top two principal axes of the (ddof=1) covariance.

    Each axis is signed so that its largest-magnitude loading is positive.
    Returns the ``(n, 2)`` projections and the two explained variances.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3 or x.shape[1] < 2:
        raise ValueError(f"pca2 needs >= 3 vectors of dimension >= 2, got shape {x.shape}")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (x.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:2]
    axes = evecs[:, order]
    signs = np.sign(axes[np.abs(axes).argmax(axis=0), [0, 1]])
    axes = axes * np.where(signs == 0, 1.0, signs)
    return centered @ axes, (float(evals[order[0]]), float(evals[order[1]]))


def correlation_populations(tuples: Iterable[CdpTuple]) -> dict[str, list[float]]:
    """Normalized correlation with the template, per population ``original_<d>`` / ``fake_<a>_<d>``."""
    pops: dict[str, list[float]] = {}
    for t in tuples:
        for d, x in sorted(t.originals.items()):
            pops.setdefault(f"original_{d}", []).append(normalized_correlation(t.template, x))
        for (a, d), f in sorted(t.fakes.items()):
            pops.setdefault(f"fake_{a}_{d}", []).append(normalized_correlation(t.template, f))
    return pops


# -- experiment matrix -------------------------------------------------------------

@dataclass
class MetricsRecord:
    setup: str
    d_train: str
    a_train: str
    d_test: str
    a_test: str
    seed: int
    p_miss: float
    p_fa: float
    auc: float
    n_test: int

    def row(self) -> list:
        return [self.setup, self.d_train, self.a_train, self.d_test, self.a_test, self.seed,
                f"{self.p_miss:.6f}", f"{self.p_fa:.6f}", f"{self.auc:.6f}", self.n_test]


@dataclass
class CellScores:
    setup: str
    seed: int
    d_test: str
    a_test: str
    tuple_ids: list[int]
    original: np.ndarray
    fake: np.ndarray


@dataclass
class MatrixResult:
    records: list[MetricsRecord]
    scores: list[CellScores] = field(default_factory=list)
    models: dict = field(default_factory=dict)


def score_cell(model, test_tuples: Sequence[CdpTuple], d_test: str, a_test: str,
               batch_size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Scores of the test originals ``x^{d}`` and the test fakes ``f^{a/d}``."""
    x_orig = np.stack([aggregate(t.originals[d_test], t.template) for t in test_tuples])
    x_fake = np.stack([aggregate(t.fakes[a_test, d_test], t.template) for t in test_tuples])
    return model.predict(x_orig, batch_size), model.predict(x_fake, batch_size)


def evaluate_setup(model, setup: SetupSpec, seed: int, test_tuples: Sequence[CdpTuple],
                   tau: float) -> tuple[list[MetricsRecord], list[CellScores]]:
    records, scores = [], []
    ids = [t.id for t in test_tuples]
    for d, a in setup.test_cells:
        o, f = score_cell(model, test_tuples, d, a)
        p_miss, p_fa = confusion_rates(o, f, tau)
        records.append(MetricsRecord(setup.name, "+".join(setup.d_train), "+".join(setup.a_train),
                                     d, a, seed, p_miss, p_fa, auc(o, f), len(test_tuples)))
        scores.append(CellScores(setup.name, seed, d, a, ids, o, f))
    return records, scores


def check_matrix(tuples: Sequence[CdpTuple], setups: Sequence[SetupSpec]) -> None:
    """Fail before any training when a setup needs printers some tuple lacks."""
    if not setups:
        raise ConfigError("no setups selected")
    defenders = set.intersection(*(set(t.originals) for t in tuples))
    attackers = set.intersection(*({a for a, _ in t.fakes} for t in tuples))
    for s in setups:
        s.validate(defenders, attackers)


def run_experiment_matrix(tuples: Sequence[CdpTuple], split: tuple[Sequence[int], Sequence[int], Sequence[int]],
                          setups: Sequence[SetupSpec], config: TrainConfig,
                          on_trained: Callable[[SetupSpec, int, TrainResult], None] | None = None,
                          keep_models: bool = False) -> MatrixResult:
    """Train one model per (setup, seed) and score every test cell on the test split."""
    check_matrix(tuples, setups)
    by_id = {t.id: t for t in tuples}
    train_ids, val_ids, test_ids = (list(s) for s in split)
    if set(train_ids) & set(val_ids) or set(train_ids) & set(test_ids) or set(val_ids) & set(test_ids):
        raise ValueError("train/validation/test splits overlap")
    train_set = [by_id[i] for i in train_ids]
    val_set = [by_id[i] for i in val_ids]
    test_set = [by_id[i] for i in test_ids]
    result = MatrixResult([])
    for setup in setups:
        for seed in config.seeds:
            res = train(train_set, val_set, setup, config, seed, test_ids=set(test_ids))
            if on_trained is not None:
                on_trained(setup, seed, res)
            records, scores = evaluate_setup(res.model, setup, seed, test_set, config.tau)
            for r in records:
                log.info("%s seed %d %s/%s: P_miss %.3f P_fa %.3f AUC %.3f", r.setup, seed,
                         r.d_test, r.a_test, r.p_miss, r.p_fa, r.auc)
            result.records += records
            result.scores += scores
            if keep_models:
                result.models[setup.name, seed] = res.model
    return result


# -- aggregation and files ---------------------------------------------------------

def aggregate_records(records: Sequence[MetricsRecord]) -> list[dict]:
    """Mean and (population) std per cell, in first-appearance order of the records."""
    groups: dict[tuple, list[MetricsRecord]] = {}
    for r in records:
        groups.setdefault(tuple(getattr(r, k) for k in KEYS), []).append(r)
    rows = []
    for key, recs in groups.items():
        row = dict(zip(KEYS, key))
        for metric in ("p_miss", "p_fa", "auc"):
            vals = np.array([getattr(r, metric) for r in recs])
            row[f"{metric}_mean"] = float(np.mean(vals))
            row[f"{metric}_std"] = float(np.std(vals))
        row["n_seeds"] = len(recs)
        row["n_test"] = recs[0].n_test
        rows.append(row)
    return rows


AGG_HEADER = KEYS + ["p_miss_mean", "p_miss_std", "p_fa_mean", "p_fa_std",
                     "auc_mean", "auc_std", "n_seeds", "n_test"]


def write_metrics_csv(path: str | Path, records: Sequence[MetricsRecord],
                      failed: Sequence[tuple[str, int]] = ()) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_HEADER)
        for r in records:
            w.writerow(r.row())
        for name, seed in failed:
            w.writerow([name, "", "", "", "", seed, "FAILED", "FAILED", "FAILED", ""])


def read_metrics_csv(path: str | Path) -> list[MetricsRecord]:
    records = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["p_miss"] == "FAILED":
                continue
            records.append(MetricsRecord(row["setup"], row["d_train"], row["a_train"],
                                         row["d_test"], row["a_test"], int(row["seed"]),
                                         float(row["p_miss"]), float(row["p_fa"]),
                                         float(row["auc"]), int(row["n_test"])))
    return records


def write_agg_csv(path: str | Path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=AGG_HEADER)
        w.writeheader()
        for row in rows:
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})


def write_scores(path: str | Path, scores: Sequence[CellScores]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t")
        w.writerow(["setup", "seed", "d_test", "a_test", "tuple_id", "label", "score"])
        for c in scores:
            for i, s in zip(c.tuple_ids, c.original):
                w.writerow([c.setup, c.seed, c.d_test, c.a_test, i, 1, repr(float(s))])
            for i, s in zip(c.tuple_ids, c.fake):
                w.writerow([c.setup, c.seed, c.d_test, c.a_test, i, 0, repr(float(s))])


def read_scores(path: str | Path) -> list[CellScores]:
    cells: dict[tuple, dict] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh, delimiter="\t"):
            key = (row["setup"], int(row["seed"]), row["d_test"], row["a_test"])
            cell = cells.setdefault(key, {"ids": [], 1: [], 0: []})
            label = int(row["label"])
            if label == 1:
                cell["ids"].append(int(row["tuple_id"]))
            cell[label].append(float(row["score"]))
    return [CellScores(*key, c["ids"], np.array(c[1]), np.array(c[0])) for key, c in cells.items()]


def write_table(path: str | Path, columns: Mapping[str, Sequence[float]],
                comments: Sequence[str] = ()) -> None:
    """Whitespace-separated numeric columns with ``#`` comment lines on top."""
    names = list(columns)
    data = np.column_stack([np.asarray(columns[n], dtype=np.float64) for n in names])
    header = "\n".join([*comments, " ".join(names)])
    np.savetxt(path, data, fmt="%.10g", delimiter="\t", header=header, comments="# ")


def write_kde_files(out: Path, tuples: Sequence[CdpTuple], n_grid: int = 256) -> dict[str, Path]:
    pops = correlation_populations(tuples)
    values = np.concatenate([np.asarray(v) for v in pops.values()])
    spread = max(np.ptp(values), 1e-3)
    grid = np.linspace(values.min() - 0.1 * spread, values.max() + 0.1 * spread, n_grid)
    paths = {}
    for name, vals in pops.items():
        path = out / f"kde_{name}.tsv"
        write_table(path, {"correlation": grid, "density": kde_estimate(vals, grid)},
                    [f"population {name}, n={len(vals)}, bandwidth={silverman_bandwidth(vals):.6g}"])
        paths[name] = path
    return paths


def write_roc_files(out: Path, scores: Sequence[CellScores]) -> list[Path]:
    paths = []
    for c in scores:
        fpr, tpr, _ = roc_curve(c.original, c.fake)
        path = out / f"roc_{c.setup}_{c.d_test}_{c.a_test}_seed{c.seed}.tsv"
        write_table(path, {"p_fa": fpr, "tpr": tpr},
                    [f"setup {c.setup} seed {c.seed}: originals x^{c.d_test} vs fakes "
                     f"f^{c.a_test}/{c.d_test}; auc={auc(c.original, c.fake):.6f}"])
        paths.append(path)
    return paths


def pca_groups(model, setup: SetupSpec, test_tuples: Sequence[CdpTuple]):
    """Backbone features of the test originals and fakes of every test cell, with group codes."""
    feats, codes, legend = [], [], []
    groups = [("x", d, None) for d in dict.fromkeys(d for d, _ in setup.test_cells)]
    groups += [("f", d, a) for d, a in setup.test_cells]
    for code, (kind, d, a) in enumerate(groups):
        probes = [t.originals[d] if kind == "x" else t.fakes[a, d] for t in test_tuples]
        x = np.stack([aggregate(p, t.template) for p, t in zip(probes, test_tuples)])
        feats.append(model.features(x))
        codes += [code] * len(test_tuples)
        legend.append(f"{code} = x^{d}" if kind == "x" else f"{code} = f^{a}/{d}")
    return np.concatenate(feats), np.array(codes, dtype=np.float64), legend


def write_pca_file(out: Path, model, setup: SetupSpec, test_tuples: Sequence[CdpTuple],
                   seed: int) -> Path:
    feats, codes, legend = pca_groups(model, setup, test_tuples)
    proj, (v1, v2) = pca2(feats)
    path = out / f"pca_{setup.name}.tsv"
    write_table(path, {"pc1": proj[:, 0], "pc2": proj[:, 1], "group": codes},
                [f"setup {setup.name}, seed {seed}, explained variance {v1:.6g} {v2:.6g}",
                 "groups: " + "; ".join(legend)])
    return path


def format_report(rows: Sequence[dict], config: TrainConfig, header: Mapping[str, object]) -> str:
    """Markdown report: run header plus the aggregated table in setup block order."""
    lines = ["# Authentication results", ""]
    for k, v in header.items():
        lines.append(f"- {k}: {v}")
    lines += [f"- split policy: {SPLIT_POLICY}",
              f"- training: {asdict(config)}", "",
              "| setup | D_train | A_train | D_test | A_test | P_miss | P_fa | AUC |",
              "|---|---|---|---|---|---|---|---|"]
    for r in rows:
        lines.append(
            f"| {r['setup']} | {r['d_train']} | {r['a_train']} | {r['d_test']} | {r['a_test']} "
            f"| {r['p_miss_mean']:.2f} ± {r['p_miss_std']:.2f} | {r['p_fa_mean']:.2f} ± {r['p_fa_std']:.2f} "
            f"| {r['auc_mean']:.2f} ± {r['auc_std']:.2f} |")
    return "\n".join(lines) + "\n"
