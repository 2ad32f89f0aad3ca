"""Command-line entry point: synth -> featurize -> train / evaluate -> report."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .curves import (
    ALL_KINDS,
    FeatureKind,
    FeatureRow,
    FeatureVector,
    mean_curves_by_depth,
    read_feature_csv,
    write_feature_csv,
)
from .experiments import (
    ALL_SCENARIOS,
    ALL_VIEWS,
    WHOLE_VIEW,
    ConfigurationError,
    CorpusEntry,
    FeatureCache,
    Scenario,
    _featurize_entry,
    read_manifest,
    read_results_csv,
    report,
    run_grid,
    write_manifest,
)
from .forest import Dataset, ForestConfig, Task, fit, save_forest
from .image import DEPTHS, save_pgm, synth_corpus

log = logging.getLogger("firntopo")

FEATURE_DIR = "features"


class CliError(Exception):
    """Reported on stderr; exit status 1."""


def _selector(enum_cls, aliases=None):
    def parse(text: str):
        if text.strip().lower() == "all":
            return list(enum_cls)
        out = []
        for tok in text.split(","):
            tok = tok.strip()
            match = [m for m in enum_cls if tok.lower() in (m.value.lower(), m.name.lower())]
            if not match:
                choices = ", ".join(m.value for m in enum_cls)
                raise argparse.ArgumentTypeError(f"unknown value {tok!r} (choose from {choices})")
            if match[0] not in out:
                out.append(match[0])
        return out

    return parse


def _positive(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {n}")
    return n


def feature_path(out_dir: Path, kind: FeatureKind, view: str = WHOLE_VIEW) -> Path:
    name = kind.value if view == WHOLE_VIEW else f"{kind.value}.{view}"
    return out_dir / FEATURE_DIR / f"{name}.csv"


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    out = Path(args.out)
    rows = []
    for depth, i, img in synth_corpus(args.images_per_depth, args.size, args.seed):
        rel = Path(f"d{depth:02d}") / f"img_{i:03d}.pgm"
        (out / rel.parent).mkdir(parents=True, exist_ok=True)
        save_pgm(img, out / rel)
        rows.append((rel.as_posix(), depth))
    write_manifest(out / "manifest.csv", rows)
    log.info("wrote %d images and %s", len(rows), out / "manifest.csv")
    return 0


def _safe_featurize(job):
    try:
        return _featurize_entry(job), None
    except Exception as exc:  # reported per image, run continues
        return None, f"{type(exc).__name__}: {exc}"


def cmd_featurize(args) -> int:
    out = Path(args.out)
    corpus = read_manifest(args.manifest)
    kinds, views = args.features, args.views
    jobs = [(e, views, kinds) for e in corpus]
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            results = list(pool.map(_safe_featurize, jobs, chunksize=4))
    else:
        results = []
        for k, job in enumerate(jobs, 1):
            results.append(_safe_featurize(job))
            if k % 20 == 0 or k == len(jobs):
                log.info("featurized %d/%d images", k, len(jobs))

    failed = 0
    rows: dict[tuple[FeatureKind, str], list[FeatureRow]] = {(k, v): [] for k in kinds for v in views}
    for entry, (res, err) in zip(corpus, results):
        if err is not None:
            failed += 1
            log.error("%s: %s", entry.image_id, err)
            continue
        for (view, kind), values in res.items():
            rows[(kind, view)].append(FeatureRow(entry.image_id, entry.depth, FeatureVector(kind, values)))

    (out / FEATURE_DIR).mkdir(parents=True, exist_ok=True)
    for (kind, view), rs in rows.items():
        write_feature_csv(feature_path(out, kind, view), rs)
    if WHOLE_VIEW in views:
        whole = [r for k in kinds for r in rows[(k, WHOLE_VIEW)]]
        with open(out / "mean_curves.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            for (kind, depth), curve in mean_curves_by_depth(whole).items():
                writer.writerow([kind.value, depth] + [repr(float(x)) for x in curve])
    if failed:
        log.error("%d of %d images failed", failed, len(corpus))
        return 1
    log.info("features written to %s", out / FEATURE_DIR)
    return 0


def _load_features(out: Path, kinds, views) -> tuple[list[CorpusEntry], FeatureCache]:
    cache = FeatureCache()
    corpus: list[CorpusEntry] | None = None
    missing = [feature_path(out, k, v) for k in kinds for v in views if not feature_path(out, k, v).exists()]
    if missing:
        raise CliError(
            f"missing feature file {missing[0]}; run `firntopo featurize --manifest <manifest.csv> "
            f"--out {out}` first"
        )
    for kind in kinds:
        for view in views:
            rows = list(read_feature_csv(feature_path(out, kind, view)))
            for r in rows:
                cache.put(r.image_id, view, kind, r.vector.values)
            if view == WHOLE_VIEW and corpus is None:
                corpus = [CorpusEntry(r.image_id, r.depth) for r in rows]
    if corpus is None:
        rows = read_feature_csv(feature_path(out, kinds[0], WHOLE_VIEW))
        corpus = [CorpusEntry(r.image_id, r.depth) for r in rows]
    return corpus, cache


def cmd_train(args) -> int:
    out = Path(args.out)
    (out / "models").mkdir(parents=True, exist_ok=True)
    for kind in args.features:
        path = feature_path(out, kind)
        if not path.exists():
            raise CliError(f"missing feature file {path}; run `firntopo featurize` first")
        rows = list(read_feature_csv(path))
        X = np.stack([r.vector.values for r in rows])
        for task in args.tasks:
            if task is Task.CLASSIFICATION:
                y = np.array([DEPTHS.index(r.depth) for r in rows])
            else:
                y = np.array([r.depth for r in rows], dtype=np.float64)
            forest = fit(Dataset(X, y, tuple(r.image_id for r in rows)),
                         ForestConfig(task=task, n_trees=args.trees, seed=args.seed))
            dest = out / "models" / f"{kind.value}__{task.value}.json"
            save_forest(forest, dest)
            log.info("saved %s", dest)
    return 0


def cmd_evaluate(args) -> int:
    out = Path(args.out)
    views = sorted({v for s in args.scenarios for v in s.views}, key=ALL_VIEWS.index)
    if WHOLE_VIEW not in views:
        views = [WHOLE_VIEW] + views
    corpus, cache = _load_features(out, args.features, views)
    results = run_grid(
        corpus,
        args.scenarios,
        args.features,
        args.tasks,
        n_trials=args.trials,
        base_seed=args.seed,
        cache=cache,
        n_trees=args.trees,
    )
    paths = report(results, out)
    sys.stdout.write(paths["text"].read_text(encoding="utf-8"))
    return 0


def cmd_report(args) -> int:
    src = Path(args.out) / "results.csv"
    if not src.exists():
        raise CliError(f"{src} not found; run `firntopo evaluate` first")
    paths = report(read_results_csv(src), args.out)
    sys.stdout.write(paths["text"].read_text(encoding="utf-8"))
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="firntopo", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--out", required=True, help="output directory")
        if seed:
            p.add_argument("--seed", type=int, default=0, help="base seed (default 0)")

    p = sub.add_parser("synth", help="write a synthetic firn corpus and manifest")
    common(p)
    p.add_argument("--images-per-depth", type=_positive, default=20)
    p.add_argument("--size", type=_positive, default=128, help="image side in pixels")
    p.set_defaults(func=cmd_synth)

    kinds = _selector(FeatureKind)
    tasks = _selector(Task)
    scenarios = _selector(Scenario)

    p = sub.add_parser("featurize", help="compute feature CSVs for a manifest")
    common(p, seed=False)
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", type=kinds, default=list(ALL_KINDS))
    p.add_argument("--views", type=lambda s: [v.strip() for v in s.split(",")], default=list(ALL_VIEWS),
                   help="image views to featurize (default: whole,blurred,TL,TR,BL,BR)")
    p.add_argument("--workers", type=_positive, default=1)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="fit forests on all whole-image features")
    common(p)
    p.add_argument("--features", type=kinds, default=list(ALL_KINDS))
    p.add_argument("--tasks", type=tasks, default=list(Task))
    p.add_argument("--trees", type=_positive, default=100)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="run the scenario grid and write the results table")
    common(p)
    p.add_argument("--scenarios", type=scenarios, default=list(ALL_SCENARIOS))
    p.add_argument("--features", type=kinds, default=list(ALL_KINDS))
    p.add_argument("--tasks", type=tasks, default=list(Task))
    p.add_argument("--trials", type=_positive, default=10)
    p.add_argument("--trees", type=_positive, default=100)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="re-render the table from results.csv")
    common(p, seed=False)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "views", None):
        bad = [v for v in args.views if v not in ALL_VIEWS]
        if bad:
            build_parser().error(f"unknown view(s) {bad}; choose from {list(ALL_VIEWS)}")
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (CliError, ConfigurationError, OSError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
