"""Experiment runner: rank/cost metrics, the Wilcoxon test, and the seeded
benchmark protocol producing raw per-trial CSVs and aggregated reports.

Every reported cost is evaluated under the trial's ground-truth matrix; the
estimated center only ever picks candidates, so methods cannot grade
themselves.  All randomness flows from one root seed through named spawn
keys, making the raw CSV byte-reproducible.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .classifiers import train_classifier
from .core import ConfidenceSet, CostMatrix, PreferenceSet, confidence_set, cost
from .datasets import Dataset, DatasetSchema, gen_synthetic, load_csv
from .elicitation import gen_truth_random, run_session
from .gradient_recourse import GradConfig, generate, generate_fixed
from .graph_recourse import (
    RecourseGraph,
    Unreachable,
    assign_weights,
    assign_worst_case_weights,
    build_graph,
    path_truth_cost,
    shortest_sequential_recourse,
)

DEFAULT_RANK_K = 10
RAW_COLUMNS = (
    "dataset",
    "method",
    "T",
    "truth_id",
    "subject_id",
    "seed",
    "validity",
    "cost",
    "path_cost",
    "mean_rank",
    "time_ms",
)


# ---------------------------------------------------------------------------
# Metrics


def mean_rank(center, truth, pool: np.ndarray, x0: np.ndarray, k: int = DEFAULT_RANK_K) -> float:
    """Normalized true-cost rank sum of the top-k candidates under `center`.

    0 means the estimated matrix retrieves the k truly cheapest recourses;
    1 is the worst possible selection.  Ties break by pool index on both
    rankings, keeping the metric deterministic.
    """
    n = pool.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}]")
    idx = np.arange(n)
    tc = np.array([cost(truth, p, x0) for p in pool])
    cc = np.array([cost(center, p, x0) for p in pool])
    ranks = np.empty(n, dtype=int)
    ranks[np.lexsort((idx, tc))] = np.arange(1, n + 1)
    chosen = np.lexsort((idx, cc))[:k]
    r_min = (k + 1) * k / 2.0
    r_max = (2 * n - k + 1) * k / 2.0
    return float((ranks[chosen].sum() - r_min) / r_max)


def _signed_midranks(diffs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Midranks of |d| (ties averaged) and the signs, zeros already removed."""
    mags = np.abs(diffs)
    order = np.argsort(mags, kind="stable")
    ranks = np.empty(len(diffs))
    i = 0
    pos = 1
    while i < len(diffs):
        j = i
        while j + 1 < len(diffs) and mags[order[j + 1]] == mags[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (pos + (pos + j - i)) / 2.0
        pos += j - i + 1
        i = j + 1
    return ranks, np.sign(diffs)


def _exact_tail(double_ranks: np.ndarray, w2_obs: int) -> float:
    """P(2 W+ <= w2_obs) by the generating function over doubled midranks."""
    total = int(double_ranks.sum())
    counts = np.zeros(total + 1, dtype=float)
    counts[0] = 1.0
    for r in double_ranks:
        r = int(r)
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    tail = counts[: min(w2_obs, total) + 1].sum()
    return float(tail / 2.0 ** len(double_ranks))


def wilcoxon_one_sided(differences) -> float:
    """One-sided signed-rank p-value for the alternative "first is smaller".

    Zero differences are dropped.  Exact distribution (handles ties through
    midranks) for n <= 20, normal approximation with tie correction and
    continuity correction beyond.
    """
    d = np.asarray(list(differences), dtype=float)
    d = d[d != 0.0]
    n = len(d)
    if n == 0:
        raise ValueError("all differences are zero")
    if n < 5:
        raise ValueError("need at least 5 nonzero differences")
    ranks, signs = _signed_midranks(d)
    w_plus = float(ranks[signs > 0].sum())
    if n <= 20:
        double = np.rint(2.0 * ranks).astype(int)
        return _exact_tail(double, int(round(2.0 * w_plus)))
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    # Tie correction over groups of equal |d|.
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    var -= float(((tie_counts**3 - tie_counts) / 48.0).sum())
    z = (w_plus + 0.5 - mean) / math.sqrt(var)
    return float(0.5 * (1.0 + math.erf(z / math.sqrt(2.0))))


# ---------------------------------------------------------------------------
# Configuration


@dataclass
class ExperimentConfig:
    dataset: str = "synthetic"  # "synthetic" or a CSV path
    schema: str | None = None  # schema JSON path for CSV datasets
    t_values: tuple[int, ...] = tuple(range(11))
    recourse_t_values: tuple[int, ...] = (5,)
    num_truths: int = 10
    num_subjects: int = 20
    rank_strategies: tuple[str, ...] = ("exhaustive",)
    k_options: int = 3
    margin: float = 0.01
    seed: int = 0
    methods: tuple[str, ...] = ("grad", "graph")
    mean_rank_k: int = DEFAULT_RANK_K
    pool_cap: int = 200
    graph_cap: int = 40  # nodes drawn from each class for the graph arm
    graph_k: int = 10
    synthetic_n: int = 2000
    measure_time: bool = False
    workers: int = 1
    # Saturated negatives (f near 0) give descent no gradient to follow;
    # raising this floor keeps such subjects out of the recourse arms.
    subject_min_proba: float = 0.0
    grad: GradConfig = field(default_factory=GradConfig)

    def __post_init__(self):
        if self.num_truths < 1:
            raise ValueError("need at least one truth matrix")
        if any(t < 0 for t in self.t_values):
            raise ValueError("T values must be nonnegative")


def _strategy_args(name: str, k_options: int) -> tuple[str, int]:
    if name == "exhaustive":
        return "exhaustive", 2
    if name == "similar2":
        return "similar_cost", 2
    if name in ("similarK", "similark"):
        return "similar_cost", k_options
    if name == "random":
        return "random", 2
    if name.startswith("similar") and name[7:].isdigit():
        return "similar_cost", int(name[7:])
    raise ValueError(f"unknown strategy {name!r}")


def _trial_seed(root: int, *key: int) -> int:
    ss = np.random.SeedSequence(root, spawn_key=tuple(key))
    return int(ss.generate_state(1)[0])


def _subsample(idx: np.ndarray, cap: int, rng: np.random.Generator) -> np.ndarray:
    if len(idx) <= cap:
        return idx
    return np.sort(rng.choice(idx, size=cap, replace=False))


def load_experiment_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.dataset == "synthetic":
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(0,)))
        return gen_synthetic(cfg.synthetic_n, rng)
    if cfg.schema is None:
        raise ValueError("CSV datasets need a schema path")
    schema = DatasetSchema.from_file(cfg.schema)
    return load_csv(cfg.dataset, schema, seed=_trial_seed(cfg.seed, 0, 1))


def replay_prefs(
    transcript: list[dict], upto: int, margin: float
) -> PreferenceSet:
    """Preference pairs revealed by the first `upto` transcript rounds."""
    prefs = PreferenceSet(pairs=[], margin=margin)
    for entry in transcript[:upto]:
        opts = entry["option_indices"]
        ans = entry["answer"]
        if ans["kind"] == "indifferent":
            i, j = opts
            prefs.add(i, j)
            prefs.add(j, i)
        else:
            win = ans["index"]
            for other in opts:
                if other != win:
                    prefs.add(win, other)
    return prefs


def center_at(transcript: list[dict], t: int, dim: int) -> CostMatrix:
    if t == 0:
        return CostMatrix.identity(dim, 0.5)
    entry = transcript[t - 1]
    return CostMatrix(np.array(entry["center"], dtype=float))


# ---------------------------------------------------------------------------
# Runner


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_raw_csv(rows: list[dict], path: Path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RAW_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row.get(c)) for c in RAW_COLUMNS])


def write_tsweep_csv(rows: list[dict], path: Path):
    cols = ("dataset", "strategy", "T", "truth_id", "subject_id", "mean_rank")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(cols)
        for row in rows:
            writer.writerow([_fmt(row.get(c)) for c in cols])


@dataclass
class Report:
    config: dict
    cells: list[dict]
    p_values: dict
    failures: list[dict]
    notes: dict

    def to_json(self) -> dict:
        return {
            "config": self.config,
            "notes": self.notes,
            "cells": self.cells,
            "p_values": self.p_values,
            "failures": self.failures,
        }


def _aggregate(rows: list[dict]) -> list[dict]:
    cells: dict[tuple, list[float]] = {}
    for row in rows:
        for metric in ("validity", "cost", "path_cost", "mean_rank", "time_ms"):
            v = row.get(metric)
            if v is None:
                continue
            key = (row["dataset"], row["method"], row["T"], metric)
            cells.setdefault(key, []).append(float(v))
    out = []
    for (ds, method, t, metric), vals in sorted(cells.items()):
        arr = np.array(vals)
        out.append(
            {
                "dataset": ds,
                "method": method,
                "T": t,
                "metric": metric,
                "mean": float(arr.mean()),
                "std": float(arr.std(ddof=1)) if len(arr) > 1 else 0.0,
                "count": len(arr),
            }
        )
    return out


def _paired_pvalues(rows: list[dict]) -> dict:
    """Wilcoxon p for adaptive-vs-baseline cost pairs at each recourse T."""
    by_key: dict[tuple, dict[tuple, float]] = {}
    for row in rows:
        metric = "cost" if row["method"] in ("reap-grad", "wachter") else "path_cost"
        v = row.get(metric)
        if v is None or row["method"] not in ("reap-grad", "wachter", "reap-graph", "face"):
            continue
        key = (row["dataset"], row["method"], row["T"])
        by_key.setdefault(key, {})[(row["truth_id"], row["subject_id"])] = float(v)
    out = {}
    for ours, base in (("reap-grad", "wachter"), ("reap-graph", "face")):
        for (ds, method, t), vals in by_key.items():
            if method != ours:
                continue
            basevals = by_key.get((ds, base, t))
            if not basevals:
                continue
            shared = sorted(set(vals) & set(basevals))
            diffs = [vals[kk] - basevals[kk] for kk in shared]
            label = f"{ds}/T={t}/{ours}-vs-{base}"
            try:
                out[label] = wilcoxon_one_sided(diffs)
            except ValueError as exc:
                out[label] = f"undefined ({exc})"
    return out


def _run_trial(
    cfg: ExperimentConfig,
    ds: Dataset,
    model,
    pool: np.ndarray,
    graph: RecourseGraph | None,
    face_plan,
    truth: CostMatrix,
    truth_id: int,
    subject_id: int,
    x0: np.ndarray,
) -> tuple[list[dict], list[dict], list[dict]]:
    rows: list[dict] = []
    tsweep: list[dict] = []
    failures: list[dict] = []
    t_max = max(cfg.t_values) if cfg.t_values else 0
    seed = _trial_seed(cfg.seed, 3, truth_id, subject_id)
    base = {
        "dataset": ds.name,
        "truth_id": truth_id,
        "subject_id": subject_id,
        "seed": seed,
    }
    transcripts: dict[str, list[dict]] = {}

    for strategy in cfg.rank_strategies:
        sname, k = _strategy_args(strategy, cfg.k_options)
        started = time.perf_counter()
        try:
            _, transcript = run_session(
                x0,
                pool,
                truth,
                budget=t_max,
                strategy=sname,
                k=k,
                margin=cfg.margin,
                seed=seed,
            )
        except Exception as exc:  # noqa: BLE001 - recorded, not fatal
            failures.append(
                {**base, "stage": f"session/{strategy}", "error": str(exc)}
            )
            continue
        elapsed = (time.perf_counter() - started) * 1000.0
        transcripts[strategy] = transcript
        for t in cfg.t_values:
            if t > len(transcript):
                continue
            center = center_at(transcript, t, ds.dim)
            mr = mean_rank(center, truth, pool, x0, cfg.mean_rank_k)
            rows.append(
                {
                    **base,
                    "method": f"rank-{strategy}",
                    "T": t,
                    "mean_rank": mr,
                    "time_ms": elapsed if cfg.measure_time else 0.0,
                }
            )
            tsweep.append(
                {
                    "dataset": ds.name,
                    "strategy": strategy,
                    "T": t,
                    "truth_id": truth_id,
                    "subject_id": subject_id,
                    "mean_rank": mr,
                }
            )

    main = cfg.rank_strategies[0] if cfg.rank_strategies else None
    transcript = transcripts.get(main, [])
    for t in cfg.recourse_t_values:
        prefs = replay_prefs(transcript, t, cfg.margin)
        spec = confidence_set(prefs, pool, x0)
        half = CostMatrix.identity(ds.dim, 0.5)
        if "grad" in cfg.methods:
            for method, runner in (
                (
                    "reap-grad",
                    lambda: generate(
                        x0, model, spec, cfg.grad, ds.one_hot_blocks()
                    )
                    if t > 0
                    else generate_fixed(
                        x0, model, half, cfg.grad, ds.one_hot_blocks()
                    ),
                ),
                (
                    "wachter",
                    lambda: generate_fixed(
                        x0, model, half, cfg.grad, ds.one_hot_blocks()
                    ),
                ),
            ):
                started = time.perf_counter()
                try:
                    plan = runner()
                except Exception as exc:  # noqa: BLE001
                    failures.append(
                        {**base, "stage": f"{method}/T={t}", "error": str(exc)}
                    )
                    continue
                elapsed = (time.perf_counter() - started) * 1000.0
                rows.append(
                    {
                        **base,
                        "method": method,
                        "T": t,
                        "validity": int(plan.valid),
                        "cost": cost(truth, plan.terminal, x0),
                        "time_ms": elapsed if cfg.measure_time else 0.0,
                    }
                )
        if "graph" in cfg.methods and graph is not None:
            for method in ("reap-graph", "face"):
                started = time.perf_counter()
                try:
                    if method == "face" or t == 0:
                        plan = face_plan
                        if plan is None:
                            raise Unreachable("no positive node reachable")
                    else:
                        weighted = assign_worst_case_weights(graph, spec)
                        plan = shortest_sequential_recourse(weighted)
                    pc = path_truth_cost(plan, graph, truth)
                except Exception as exc:  # noqa: BLE001
                    failures.append(
                        {**base, "stage": f"{method}/T={t}", "error": str(exc)}
                    )
                    continue
                elapsed = (time.perf_counter() - started) * 1000.0
                rows.append(
                    {
                        **base,
                        "method": method,
                        "T": t,
                        "validity": 1,
                        "path_cost": pc,
                        "time_ms": elapsed if cfg.measure_time else 0.0,
                    }
                )
    return rows, tsweep, failures


def run_experiment(cfg: ExperimentConfig, out_dir) -> Report:
    """Execute the full protocol and write raw/report artifacts to out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ds = load_experiment_dataset(cfg)
    model = train_classifier(ds, seed=_trial_seed(cfg.seed, 1))
    xt, _ = ds.test()
    pred = model.predict(xt)
    pos_idx = np.flatnonzero(pred == 1)
    neg_idx = np.flatnonzero(pred == 0)
    if len(pos_idx) < cfg.mean_rank_k or len(neg_idx) < 1:
        raise ValueError("test split lacks enough positives or negatives")
    rng_pool = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(2,)))
    pool = xt[_subsample(pos_idx, cfg.pool_cap, rng_pool)]
    if cfg.subject_min_proba > 0.0:
        proba = model.predict_proba(xt[neg_idx])
        neg_idx = neg_idx[proba >= cfg.subject_min_proba]
    subjects = xt[neg_idx[: cfg.num_subjects]]

    graph_pts = None
    if "graph" in cfg.methods:
        gp = xt[_subsample(pos_idx, cfg.graph_cap, rng_pool)]
        gn = xt[_subsample(neg_idx, cfg.graph_cap, rng_pool)]
        graph_pts = (
            np.vstack([gp, gn]),
            np.concatenate([np.ones(len(gp), dtype=int), np.zeros(len(gn), dtype=int)]),
        )

    truths = []
    for truth_id in range(cfg.num_truths):
        rng_t = np.random.default_rng(
            np.random.SeedSequence(cfg.seed, spawn_key=(4, truth_id))
        )
        truths.append(gen_truth_random(ds.dim, rng_t))

    subject_graphs: list[RecourseGraph | None] = []
    face_plans: list = []
    for x0 in subjects:
        if graph_pts is None:
            subject_graphs.append(None)
            face_plans.append(None)
            continue
        g = build_graph(graph_pts[0], graph_pts[1], x0, k=cfg.graph_k)
        subject_graphs.append(g)
        half = assign_weights(g, 0.5 * np.eye(ds.dim))
        try:
            face_plans.append(shortest_sequential_recourse(half))
        except Exception:  # noqa: BLE001 - recorded per trial downstream
            face_plans.append(None)

    jobs = [
        (truth_id, subject_id)
        for truth_id in range(cfg.num_truths)
        for subject_id in range(len(subjects))
    ]

    def _job(args):
        truth_id, subject_id = args
        return args, _run_trial(
            cfg,
            ds,
            model,
            pool,
            subject_graphs[subject_id],
            face_plans[subject_id],
            truths[truth_id],
            truth_id,
            subject_id,
            subjects[subject_id],
        )

    results: dict[tuple, tuple] = {}
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as ex:
            for key, res in ex.map(_job, jobs):
                results[key] = res
    else:
        for job in jobs:
            key, res = _job(job)
            results[key] = res

    rows: list[dict] = []
    tsweep: list[dict] = []
    failures: list[dict] = []
    for key in jobs:  # fixed order regardless of completion order
        r, t, f = results[key]
        rows.extend(r)
        tsweep.extend(t)
        failures.extend(f)

    write_raw_csv(rows, out_dir / "raw.csv")
    write_tsweep_csv(tsweep, out_dir / "tsweep.csv")
    cells = _aggregate(rows)
    report = Report(
        config=_config_dict(cfg),
        cells=cells,
        p_values=_paired_pvalues(rows),
        failures=failures,
        notes={
            "mean_rank_k": cfg.mean_rank_k,
            "baselines": "wachter = descent with fixed A = I/2; face = shortest path under A = I/2 weights",
            "costs": "all costs and ranks evaluated under the trial truth matrix",
        },
    )
    with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_json(), fh, indent=2)
    _write_report_csv(cells, out_dir / "report.csv")
    return report


def _config_dict(cfg: ExperimentConfig) -> dict:
    d = asdict(cfg)
    d["grad"] = asdict(cfg.grad)
    return d


def _write_report_csv(cells: list[dict], path: Path):
    cols = ("dataset", "method", "T", "metric", "mean", "std", "count")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(cols)
        for cell in cells:
            writer.writerow([_fmt(cell[c]) for c in cols])


# ---------------------------------------------------------------------------
# Selection timing study


def selection_timing_study(
    n_values=(100, 500, 1000, 10000), seed: int = 0, repeats: int = 1
) -> list[dict]:
    """Wall time and objective gap of heuristic vs exhaustive selection.

    Pools are uniform 2-d scaled points with the uninformative center, the
    regime where both selectors only depend on geometry.
    """
    from .elicitation import (
        ElicitationSession,
        next_question_exhaustive,
        next_question_similar_cost,
    )

    out = []
    for n in n_values:
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(5, n)))
        pool = rng.uniform(0.0, 1.0, size=(n, 2))
        x0 = rng.uniform(0.0, 1.0, size=2)
        t_ex = t_he = np.inf
        gap = None
        for _ in range(repeats):
            sess = ElicitationSession(x0=x0, pool=pool, budget=1, rng_seed=0)
            start = time.perf_counter()
            q_ex = next_question_exhaustive(sess)
            t_ex = min(t_ex, time.perf_counter() - start)
            start = time.perf_counter()
            q_he = next_question_similar_cost(sess, k=2)
            t_he = min(t_he, time.perf_counter() - start)
            base = max(abs(q_ex.projection_distance), 1e-30)
            gap = (q_he.projection_distance - q_ex.projection_distance) / base
        out.append(
            {
                "N": n,
                "exhaustive_ms": t_ex * 1000.0,
                "heuristic_ms": t_he * 1000.0,
                "relative_gap": float(gap),
            }
        )
    return out


def write_timing_csv(rows: list[dict], path):
    cols = ("N", "exhaustive_ms", "heuristic_ms", "relative_gap")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(cols)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in cols])
