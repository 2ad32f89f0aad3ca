"""Train/test scenarios, the featurization x predictor grid, and result tables."""

from __future__ import annotations

import csv
import enum
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .curves import ALL_KINDS, FeatureKind, featurize_all
from .forest import Dataset, ForestConfig, Task, fit, metrics, predict
from .image import DEPTHS, QUADRANT_NAMES, GrayImage, gaussian_blur3, load_image, split_quadrants

log = logging.getLogger(__name__)

WHOLE_VIEW = "whole"
BLURRED_VIEW = "blurred"
ALL_VIEWS = (WHOLE_VIEW, BLURRED_VIEW) + QUADRANT_NAMES


class ConfigurationError(ValueError):
    pass


class Scenario(str, enum.Enum):
    WHOLE = "WHOLE"
    SPLIT = "SPLIT"
    SPLIT_BR = "SPLIT_BR"
    BLURRED = "BLURRED"
    MISSING_DEPTHS = "MISSING_DEPTHS"

    @property
    def title(self) -> str:
        return _TITLES[self]

    @property
    def deterministic(self) -> bool:
        """Split does not depend on the trial seed."""
        return self in (Scenario.SPLIT_BR, Scenario.MISSING_DEPTHS)

    @property
    def views(self) -> tuple[str, ...]:
        if self in (Scenario.SPLIT, Scenario.SPLIT_BR):
            return QUADRANT_NAMES
        if self is Scenario.BLURRED:
            return (WHOLE_VIEW, BLURRED_VIEW)
        return (WHOLE_VIEW,)

    def valid_for(self, task: Task) -> bool:
        return not (self is Scenario.MISSING_DEPTHS and Task(task) is Task.CLASSIFICATION)


_TITLES = {
    Scenario.WHOLE: "Whole",
    Scenario.SPLIT: "Split",
    Scenario.SPLIT_BR: "Split BR",
    Scenario.BLURRED: "Blurred",
    Scenario.MISSING_DEPTHS: "Missing depths",
}
ALL_SCENARIOS = tuple(Scenario)


@dataclass(frozen=True)
class ScenarioSpec:
    name: Scenario
    split_fraction: float = 0.75
    held_out_depths: frozenset[int] = frozenset({23, 53, 70})
    trial_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "name", Scenario(self.name))
        object.__setattr__(self, "held_out_depths", frozenset(self.held_out_depths))
        if not 0.0 < self.split_fraction < 1.0:
            raise ValueError("split_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class CorpusEntry:
    image_id: str
    depth: int
    path: Path | None = None
    image: GrayImage | None = field(default=None, compare=False, repr=False)

    def load(self) -> GrayImage:
        if self.image is not None:
            return self.image
        if self.path is None:
            raise ValueError(f"{self.image_id}: no image or path")
        return load_image(self.path)


@dataclass(frozen=True, order=True)
class Sample:
    """One row of a train or test set: a view of a corpus image."""

    image_id: str
    view: str
    depth: int


def read_manifest(path) -> list[CorpusEntry]:
    """CSV with columns ``path,depth_metres``; paths relative to the manifest.

    Image ids are the relative paths without extension.
    """
    path = Path(path)
    entries = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rel = Path(rec["path"])
            depth = int(float(rec["depth_metres"]))
            if depth not in DEPTHS:
                raise ConfigurationError(f"{rel}: depth {depth} is not one of {DEPTHS}")
            entries.append(CorpusEntry(rel.with_suffix("").as_posix(), depth, path.parent / rel))
    return entries


def write_manifest(path, rows: Iterable[tuple[str, int]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "depth_metres"])
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------


def _random_split(items: list, fraction: float, seed: int) -> tuple[list, list]:
    perm = np.random.default_rng(seed).permutation(len(items))
    n_train = int(math.floor(fraction * len(items)))
    train_idx, test_idx = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    return [items[i] for i in train_idx], [items[i] for i in test_idx]


def make_split(
    corpus: Sequence[CorpusEntry], spec: ScenarioSpec, task: Task | None = None
) -> tuple[list[Sample], list[Sample]]:
    """Train and test samples for one scenario and trial seed.

    Random scenarios shuffle with ``spec.trial_seed`` and put
    ``floor(fraction * n)`` items in train. SPLIT_BR and MISSING_DEPTHS are
    seed independent. With ``task=CLASSIFICATION`` every corpus depth must
    appear in train.
    """
    if not corpus:
        raise ConfigurationError("empty corpus")
    if task is not None and not spec.name.valid_for(task):
        raise ConfigurationError(f"{spec.name.value} is only defined for regression")
    whole = [Sample(e.image_id, WHOLE_VIEW, e.depth) for e in corpus]
    quads = [Sample(e.image_id, q, e.depth) for e in corpus for q in QUADRANT_NAMES]
    name = spec.name
    if name is Scenario.WHOLE:
        train, test = _random_split(whole, spec.split_fraction, spec.trial_seed)
    elif name is Scenario.BLURRED:
        train, test = _random_split(whole, spec.split_fraction, spec.trial_seed)
        test = [Sample(s.image_id, BLURRED_VIEW, s.depth) for s in test]
    elif name is Scenario.SPLIT:
        train, test = _random_split(quads, spec.split_fraction, spec.trial_seed)
    elif name is Scenario.SPLIT_BR:
        train = [s for s in quads if s.view != "BR"]
        test = [s for s in quads if s.view == "BR"]
    else:
        train = [s for s in whole if s.depth not in spec.held_out_depths]
        test = [s for s in whole if s.depth in spec.held_out_depths]
    if not train or not test:
        raise ConfigurationError(f"{name.value}: empty train or test set")
    if task is not None and Task(task) is Task.CLASSIFICATION:
        missing = {e.depth for e in corpus} - {s.depth for s in train}
        if missing:
            raise ConfigurationError(
                f"{name.value}: depths {sorted(missing)} have no training samples"
            )
    return train, test


# ---------------------------------------------------------------------------
# feature cache
# ---------------------------------------------------------------------------


def view_image(img: GrayImage, view: str) -> GrayImage:
    if view == WHOLE_VIEW:
        return img
    if view == BLURRED_VIEW:
        return gaussian_blur3(img)
    return split_quadrants(img)[QUADRANT_NAMES.index(view)]


def _featurize_entry(args):
    entry, views, kinds = args
    img = entry.load()
    out = {}
    for view in views:
        for kind, vec in featurize_all(view_image(img, view), kinds).items():
            out[(view, kind)] = vec.values
    return out


class FeatureCache:
    """Feature vectors keyed by (image id, view, featurization)."""

    def __init__(self):
        self._store: dict[tuple[str, str, FeatureKind], np.ndarray] = {}

    def __len__(self) -> int:
        return len(self._store)

    def __contains__(self, key) -> bool:
        image_id, view, kind = key
        return (image_id, view, FeatureKind(kind)) in self._store

    def put(self, image_id: str, view: str, kind: FeatureKind, values: np.ndarray) -> None:
        self._store[(image_id, view, FeatureKind(kind))] = np.asarray(values, dtype=np.float64)

    def get(self, image_id: str, view: str, kind: FeatureKind) -> np.ndarray:
        try:
            return self._store[(image_id, view, FeatureKind(kind))]
        except KeyError:
            raise KeyError(f"no {FeatureKind(kind).value} features for {image_id} [{view}]") from None

    def populate(
        self,
        corpus: Sequence[CorpusEntry],
        views: Iterable[str] = ALL_VIEWS,
        kinds: Iterable[FeatureKind] = ALL_KINDS,
        workers: int = 1,
    ) -> FeatureCache:
        """Compute every missing (image, view, kind) in one pass over the corpus."""
        views = list(views)
        kinds = [FeatureKind(k) for k in kinds]
        jobs = []
        for e in corpus:
            need_views = [v for v in views if any((e.image_id, v, k) not in self for k in kinds)]
            if need_views:
                jobs.append((e, need_views, kinds))
        if not jobs:
            return self
        log.info("featurizing %d images (%s)", len(jobs), ", ".join(views))
        if workers > 1:
            with ProcessPoolExecutor(workers) as pool:
                results = list(pool.map(_featurize_entry, jobs, chunksize=4))
        else:
            results = map(_featurize_entry, jobs)
        for (entry, _, _), res in zip(jobs, results):
            for (view, kind), vec in res.items():
                self.put(entry.image_id, view, kind, vec)
        return self

    def dataset(self, samples: Sequence[Sample], kind: FeatureKind, task: Task) -> Dataset:
        X = np.stack([self.get(s.image_id, s.view, kind) for s in samples])
        depths = np.array([s.depth for s in samples])
        if Task(task) is Task.CLASSIFICATION:
            labels = np.array([DEPTHS.index(d) for d in depths])
        else:
            labels = depths.astype(np.float64)
        ids = tuple(f"{s.image_id}[{s.view}]" for s in samples)
        return Dataset(X, labels, ids)


# ---------------------------------------------------------------------------
# grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentResult:
    scenario: Scenario
    featurization: FeatureKind
    task: Task
    values: tuple[float, ...]

    @property
    def n_trials(self) -> int:
        return len(self.values)

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def std(self) -> float:
        """Population standard deviation over trials (0 for a single trial)."""
        return float(np.std(self.values))


def run_grid(
    corpus: Sequence[CorpusEntry],
    scenarios: Iterable[Scenario] = ALL_SCENARIOS,
    featurizations: Iterable[FeatureKind] = ALL_KINDS,
    tasks: Iterable[Task] = (Task.REGRESSION, Task.CLASSIFICATION),
    n_trials: int = 10,
    base_seed: int = 0,
    cache: FeatureCache | None = None,
    n_trees: int = 100,
    held_out_depths: Iterable[int] = (23, 53, 70),
    workers: int = 1,
) -> list[ExperimentResult]:
    """Run every (task, scenario, featurization) cell for ``n_trials`` trials.

    Trial ``i`` uses ``trial_seed = base_seed + i`` both for the split (random
    scenarios only) and as the forest seed. MISSING_DEPTHS is skipped for
    classification.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    scenarios = [Scenario(s) for s in scenarios]
    kinds = [FeatureKind(k) for k in featurizations]
    tasks = [Task(t) for t in tasks]
    if cache is None:
        cache = FeatureCache()
    views = sorted({v for s in scenarios for v in s.views}, key=ALL_VIEWS.index)
    cache.populate(corpus, views, kinds, workers=workers)

    results = []
    for task in tasks:
        for scenario in scenarios:
            if not scenario.valid_for(task):
                continue
            scores: dict[FeatureKind, list[float]] = {k: [] for k in kinds}
            for trial in range(n_trials):
                seed = base_seed + trial
                spec = ScenarioSpec(scenario, held_out_depths=frozenset(held_out_depths), trial_seed=seed)
                train, test = make_split(corpus, spec, task)
                for kind in kinds:
                    tr = cache.dataset(train, kind, task)
                    te = cache.dataset(test, kind, task)
                    forest = fit(tr, ForestConfig(task=task, n_trees=n_trees, seed=seed))
                    scores[kind].append(metrics(predict(forest, te.features), te.labels, task))
            for kind in kinds:
                r = ExperimentResult(scenario, kind, task, tuple(scores[kind]))
                log.info("%s %s %s: %.2f +- %.2f", task.value, scenario.title, kind.value, r.mean, r.std)
                results.append(r)
    return results


# ---------------------------------------------------------------------------
# reporting
# ---------------------------------------------------------------------------

BLOCK_TITLES = {
    Task.REGRESSION: "Scalar prediction (mean absolute error in metres)",
    Task.CLASSIFICATION: "Category prediction (% accuracy)",
}


def format_cell(r: ExperimentResult) -> str:
    return f"{r.mean:.2f} ± {r.std:.2f}"


def table_blocks(results: Sequence[ExperimentResult]) -> list[tuple[Task, list[list[str]]]]:
    """Rows of each task block: header row, then one row per scenario present."""
    header = ["Scenario"] + [k.value for k in ALL_KINDS]
    blocks = []
    for task in (Task.REGRESSION, Task.CLASSIFICATION):
        cells = {(r.scenario, r.featurization): r for r in results if r.task is task}
        present = [s for s in ALL_SCENARIOS if s.valid_for(task) and any(sc is s for sc, _ in cells)]
        if not present:
            continue
        rows = [header]
        for s in present:
            rows.append([s.title] + [format_cell(cells[(s, k)]) if (s, k) in cells else "-" for k in ALL_KINDS])
        blocks.append((task, rows))
    return blocks


def format_table(results: Sequence[ExperimentResult]) -> str:
    out = []
    for task, rows in table_blocks(results):
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        out.append(BLOCK_TITLES[task])
        for row in rows:
            out.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        out.append("")
    return "\n".join(out)


def write_results_csv(path, results: Sequence[ExperimentResult]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task", "scenario", "featurization", "n_trials", "mean", "std", "trials"])
        for r in results:
            writer.writerow(
                [r.task.value, r.scenario.value, r.featurization.value, r.n_trials,
                 f"{r.mean:.6f}", f"{r.std:.6f}", ";".join(repr(float(v)) for v in r.values)]
            )


def read_results_csv(path) -> list[ExperimentResult]:
    with open(path, newline="") as fh:
        return [
            ExperimentResult(
                Scenario(rec["scenario"]),
                FeatureKind(rec["featurization"]),
                Task(rec["task"]),
                tuple(float(v) for v in rec["trials"].split(";")),
            )
            for rec in csv.DictReader(fh)
        ]


def report(results: Sequence[ExperimentResult], out_dir, stem: str = "results") -> dict[str, Path]:
    """Write ``<stem>.csv`` (per-trial values), ``<stem>_table.csv`` and ``<stem>.txt``."""
    if not results:
        raise ValueError("no results to report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "csv": out_dir / f"{stem}.csv",
        "table_csv": out_dir / f"{stem}_table.csv",
        "text": out_dir / f"{stem}.txt",
    }
    write_results_csv(paths["csv"], results)
    with open(paths["table_csv"], "w", newline="") as fh:
        writer = csv.writer(fh)
        for task, rows in table_blocks(results):
            writer.writerow(["task"] + rows[0])
            for row in rows[1:]:
                writer.writerow([task.value] + row)
    paths["text"].write_text(format_table(results), encoding="utf-8")
    return paths
