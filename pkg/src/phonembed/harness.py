"""Evaluation and experiment reproduction.

Scores decodes with edit-distance word error rate and drives the three
study types over a synthetic (or adapter-supplied) corpus: the data-size
by pair-count spectrum, single-term loss ablations, and the cycle
regularization study.  Every row of a result table carries the seed and
config that produced it, so any row is reproducible in isolation; failed
cells are recorded and the run continues.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Corpus, PairSet, build_pair_set, subsample_speech
from .decoder import (
    JointEmbeddingSource,
    SmoothingConfig,
    build_text_index,
    decode_corpus,
    train_trigram_lm,
)
from .nets import NetConfig
from .trainer import TrainConfig, train_joint

log = logging.getLogger(__name__)

SPECTRUM_COLUMNS = ("hours", "n_paired", "wer", "seed", "status")
ABLATION_COLUMNS = ("dropped_term", "n_paired", "wer", "seed")
CYCLE_COLUMNS = ("cycle_enabled", "n_paired", "wer", "seed")
CONTOUR_COLUMNS = ("hours", "n_paired", "wer_interp")


# -- scoring ----------------------------------------------------------------


def edit_distance(ref, hyp) -> int:
    """Minimum substitutions + insertions + deletions between sequences."""
    ref, hyp = list(ref), list(hyp)
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, 1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, 1):
            cur[j] = min(
                prev[j] + 1,  # deletion
                cur[j - 1] + 1,  # insertion
                prev[j - 1] + (r != h),  # substitution
            )
        prev = cur
    return prev[-1]


def word_error_rate(refs, hyps) -> float:
    """100 * (S + I + D) / reference words, edits summed over utterances."""
    refs, hyps = list(refs), list(hyps)
    if len(refs) != len(hyps):
        raise ValueError(f"got {len(refs)} references but {len(hyps)} hypotheses")
    if not refs:
        raise ValueError("empty reference set")
    total_ref = sum(len(list(r)) for r in refs)
    if total_ref == 0:
        raise ValueError("references contain no words")
    edits = sum(edit_distance(r, h) for r, h in zip(refs, hyps))
    return 100.0 * edits / total_ref


# -- experiment plumbing ------------------------------------------------------


def derive_seed(master: int, *key: int) -> int:
    """A stable independent seed for one grid cell / repeat."""
    return int(np.random.SeedSequence([master, *key]).generate_state(1)[0])


@dataclass
class HarnessConfig:
    """Everything one experiment run needs besides the grid itself."""

    train_corpus: Corpus
    test_corpus: Corpus
    net_config: NetConfig
    train_config: TrainConfig
    beta: float = 0.01
    beam_size: int = 10
    smoothing: SmoothingConfig = SmoothingConfig()
    master_seed: int = 0
    frame_period: float = 0.01


@dataclass(frozen=True)
class ExperimentGrid:
    """The (speech hours, paired words) cells to evaluate."""

    cells: tuple[tuple[float, int], ...]
    n_seeds: int = 1

    def __post_init__(self):
        if not self.cells:
            raise ValueError("empty experiment grid")
        if self.n_seeds < 1:
            raise ValueError("n_seeds must be >= 1")


@dataclass
class ResultTable:
    """Rows of results plus the config metadata to reproduce each one."""

    rows: list[dict] = field(default_factory=list)

    def write_csv(self, path, columns) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=list(columns), extrasaction="ignore")
            writer.writeheader()
            for row in self.rows:
                out = dict(row)
                if out.get("wer") is None:
                    out["wer"] = ""
                writer.writerow(out)

    def write_manifest(self, path) -> None:
        """Full per-row config record, line-delimited."""
        with open(path, "w", encoding="utf-8") as f:
            for row in self.rows:
                f.write(json.dumps(row, default=str) + "\n")

    @property
    def any_failed(self) -> bool:
        return any(row.get("status") == "failed" for row in self.rows)

    def mean_wer(self, **match) -> float:
        """Mean WER over ok rows matching the given column values."""
        vals = [
            row["wer"]
            for row in self.rows
            if row.get("status", "ok") == "ok"
            and all(row.get(k) == v for k, v in match.items())
        ]
        if not vals:
            raise ValueError(f"no successful rows match {match}")
        return float(np.mean(vals))


def evaluate_model(model, config: HarnessConfig, lm_corpus: Corpus) -> float:
    """Decode the test corpus with a trigram LM from ``lm_corpus`` and score."""
    lm = train_trigram_lm(
        lm_corpus.transcripts, lm_corpus.lexicon.n_words, config.smoothing
    )
    source = JointEmbeddingSource(model)
    index = build_text_index(config.train_corpus.lexicon, source)
    results = decode_corpus(
        config.test_corpus, source, index, lm, config.beta, config.beam_size
    )
    refs, hyps = [], []
    for utt in sorted(config.test_corpus.utterances):
        refs.append(list(config.test_corpus.transcripts[utt]))
        hyps.append(list(results[utt].words))
    return word_error_rate(refs, hyps)


def _train_and_score(
    config: HarnessConfig,
    corpus: Corpus,
    pairs: PairSet | None,
    train_config: TrainConfig,
) -> tuple[float, dict]:
    start = time.perf_counter()
    result = train_joint(corpus, pairs, config.net_config, train_config)
    wer = evaluate_model(result.model, config, corpus)
    return wer, {
        "steps": result.steps,
        "wall_time": round(time.perf_counter() - start, 3),
        "aborted": result.aborted,
    }


# -- the studies --------------------------------------------------------------


def run_spectrum(grid: ExperimentGrid, config: HarnessConfig) -> ResultTable:
    """Train and score one model per (hours, n_paired, seed) cell.

    Cells whose pair budget exceeds the annotated words available at
    that data size are marked infeasible rather than dropped; cells that
    raise are marked failed and the grid continues.
    """
    table = ResultTable()
    for cell_no, (hours, n_paired) in enumerate(grid.cells):
        for rep in range(grid.n_seeds):
            seed = derive_seed(config.master_seed, cell_no, rep)
            row = {"hours": hours, "n_paired": n_paired, "seed": seed, "wer": None}
            try:
                sub = subsample_speech(
                    config.train_corpus, hours, config.frame_period, seed=seed
                )
                available = len(sub.annotated_indices)
                if n_paired > available:
                    row["status"] = "infeasible"
                    row["reason"] = f"only {available} annotated words at {hours} hr"
                    table.rows.append(row)
                    continue
                pairs = build_pair_set(sub, n_paired, seed=seed)
                tcfg = dataclasses.replace(config.train_config, seed=seed)
                wer, meta = _train_and_score(config, sub, pairs, tcfg)
                row.update(wer=wer, status="ok", **meta)
            except Exception as exc:  # cell isolation is the contract
                log.exception("cell (%s hr, %s pairs) failed", hours, n_paired)
                row.update(status="failed", reason=f"{type(exc).__name__}: {exc}")
            table.rows.append(row)
    return table


def run_ablation(
    config: HarnessConfig,
    terms_to_drop: tuple[str, ...],
    n_paired: int,
    n_seeds: int = 1,
) -> ResultTable:
    """The full objective against single-term removals, on shared data.

    Every run in one repeat shares the seed, pair set, and corpus, so
    rows differ only in the dropped term.
    """
    table = ResultTable()
    for term in terms_to_drop:
        if term != "none":
            config.train_config.weights.without(term)  # validates the name
    for rep in range(n_seeds):
        seed = derive_seed(config.master_seed, 7000, rep)
        pairs = build_pair_set(config.train_corpus, n_paired, seed=seed)
        for term in ("none", *terms_to_drop):
            weights = config.train_config.weights
            if term != "none":
                weights = weights.without(term)
            tcfg = dataclasses.replace(config.train_config, seed=seed, weights=weights)
            row = {"dropped_term": term, "n_paired": n_paired, "seed": seed, "wer": None}
            try:
                wer, meta = _train_and_score(config, config.train_corpus, pairs, tcfg)
                row.update(wer=wer, status="ok", **meta)
            except Exception as exc:
                log.exception("ablation %s failed", term)
                row.update(status="failed", reason=f"{type(exc).__name__}: {exc}")
            table.rows.append(row)
    return table


def run_cycle_study(
    config: HarnessConfig,
    n_values: tuple[int, ...],
    cycle_weight: float = 1.0,
    n_seeds: int = 1,
) -> ResultTable:
    """With/without the cycle term at each pair budget."""
    table = ResultTable()
    for rep in range(n_seeds):
        for n_no, n_paired in enumerate(n_values):
            seed = derive_seed(config.master_seed, 9000 + n_no, rep)
            pairs = build_pair_set(config.train_corpus, n_paired, seed=seed)
            for enabled in (False, True):
                weights = config.train_config.weights
                weights = weights.with_cycle(cycle_weight) if enabled else weights
                tcfg = dataclasses.replace(config.train_config, seed=seed, weights=weights)
                row = {
                    "cycle_enabled": enabled,
                    "n_paired": n_paired,
                    "seed": seed,
                    "wer": None,
                }
                try:
                    wer, meta = _train_and_score(config, config.train_corpus, pairs, tcfg)
                    row.update(wer=wer, status="ok", **meta)
                except Exception as exc:
                    log.exception("cycle cell N=%s failed", n_paired)
                    row.update(status="failed", reason=f"{type(exc).__name__}: {exc}")
                table.rows.append(row)
    return table


# -- contour interpolation -----------------------------------------------------


def contour_interpolator(table: ResultTable):
    """Piecewise-linear WER surface over (log hours, log pairs).

    Triangulates the successful cells and interpolates linearly, exactly
    reproducing the input points.  Returns ``f(hours, n_paired)`` which
    yields NaN outside the convex hull.
    """
    from scipy.interpolate import LinearNDInterpolator

    cells: dict[tuple[float, int], list[float]] = {}
    for row in table.rows:
        if row.get("status") == "ok" and row.get("wer") is not None:
            cells.setdefault((row["hours"], row["n_paired"]), []).append(row["wer"])
    points = np.array([[np.log10(h), np.log10(n)] for h, n in cells])
    values = np.array([float(np.mean(v)) for v in cells.values()])
    if len(points) < 3:
        raise ValueError(f"contour needs >= 3 successful cells, got {len(points)}")
    if np.linalg.matrix_rank(points - points[0], tol=1e-12) < 2:
        raise ValueError("contour needs non-collinear cells")
    interp = LinearNDInterpolator(points, values)

    def f(hours: float, n_paired: float) -> float:
        return float(interp(np.log10(hours), np.log10(n_paired)))

    f.log_points = points  # type: ignore[attr-defined]
    f.values = values  # type: ignore[attr-defined]
    return f


def emit_contour(table: ResultTable, grid_resolution: int = 25) -> ResultTable:
    """Evaluate the WER surface on a regular grid in log-log space.

    Grid rows outside the convex hull of the measured cells carry an
    empty interpolated value.
    """
    if grid_resolution < 2:
        raise ValueError("grid_resolution must be >= 2")
    f = contour_interpolator(table)
    pts = f.log_points
    gx = np.linspace(pts[:, 0].min(), pts[:, 0].max(), grid_resolution)
    gy = np.linspace(pts[:, 1].min(), pts[:, 1].max(), grid_resolution)
    out = ResultTable()
    for lx in gx:
        for ly in gy:
            val = f(10.0**lx, 10.0**ly)
            out.rows.append(
                {
                    "hours": round(10.0**lx, 9),
                    "n_paired": round(10.0**ly, 9),
                    "wer_interp": None if np.isnan(val) else val,
                }
            )
    return out


def write_contour_csv(contour: ResultTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(CONTOUR_COLUMNS), extrasaction="ignore")
        writer.writeheader()
        for row in contour.rows:
            out = dict(row)
            if out.get("wer_interp") is None:
                out["wer_interp"] = ""
            writer.writerow(out)
