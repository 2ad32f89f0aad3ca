"""Betti and Gaussian persistence curves, and the four image featurizations."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np
from scipy.special import ndtr

from .binarize import binarize, distance_transform
from .cubical import PersistenceDiagram, sublevel_persistence
from .image import GrayImage


@dataclass(frozen=True)
class CurveConfig:
    t_min: int
    t_max: int
    sigma: float
    essential_death: float

    def __post_init__(self):
        if self.t_max <= self.t_min:
            raise ValueError("t_max must exceed t_min")
        if self.essential_death <= self.t_max:
            raise ValueError("essential_death must exceed t_max")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @property
    def grid(self) -> np.ndarray:
        return np.arange(self.t_min, self.t_max + 1, dtype=np.float64)


# covariance 100*I and 25*I respectively
SUBLEVEL_CURVES = CurveConfig(t_min=0, t_max=255, sigma=10.0, essential_death=256.0)
DT_CURVES = CurveConfig(t_min=1, t_max=100, sigma=5.0, essential_death=101.0)


class Filtration(str, enum.Enum):
    SUBLEVEL = "SS"
    DISTANCE = "DT"


class CurveKind(str, enum.Enum):
    BETTI = "Betti"
    GAUSSIAN = "Gaussian"


class FeatureKind(str, enum.Enum):
    SS_BETTI = "SS-Betti"
    SS_GAUSSIAN = "SS-Gaussian"
    DT_BETTI = "DT-Betti"
    DT_GAUSSIAN = "DT-Gaussian"

    @property
    def filtration(self) -> Filtration:
        return Filtration(self.value.split("-")[0])

    @property
    def curve(self) -> CurveKind:
        return CurveKind(self.value.split("-")[1])

    @property
    def length(self) -> int:
        cfg = SUBLEVEL_CURVES if self.filtration is Filtration.SUBLEVEL else DT_CURVES
        return 2 * len(cfg.grid)

    @classmethod
    def of(cls, filtration: Filtration, curve: CurveKind) -> FeatureKind:
        return cls(f"{Filtration(filtration).value}-{CurveKind(curve).value}")


ALL_KINDS = tuple(FeatureKind)


@dataclass(frozen=True, eq=False)
class FeatureVector:
    kind: FeatureKind
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (self.kind.length,):
            raise ValueError(f"{self.kind.value} vector must have length {self.kind.length}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return len(self.values)

    def __eq__(self, other):
        if not isinstance(other, FeatureVector):
            return NotImplemented
        return self.kind == other.kind and np.array_equal(self.values, other.values)


def _substituted(dgm: PersistenceDiagram, cfg: CurveConfig) -> np.ndarray:
    p = np.array(dgm.pairs)
    if p.size:
        p[np.isinf(p[:, 1]), 1] = cfg.essential_death
    return p


def betti_curve(dgm: PersistenceDiagram, cfg: CurveConfig) -> np.ndarray:
    """Number of pairs with b <= t < d at each grid threshold t."""
    p = _substituted(dgm, cfg)
    t = cfg.grid[:, None]
    inside = (p[None, :, 0] <= t) & (t < p[None, :, 1])
    return inside.sum(axis=1).astype(np.float64)


def persistence_weights(dgm: PersistenceDiagram, cfg: CurveConfig) -> np.ndarray:
    """Lifespan weights (d - b) / sum(d' - b'), essentials substituted first."""
    p = _substituted(dgm, cfg)
    life = p[:, 1] - p[:, 0]
    return life / life.sum() if life.size else life


def gaussian_curve(dgm: PersistenceDiagram, cfg: CurveConfig) -> np.ndarray:
    """Mass of the weighted Gaussian persistence surface inside {x <= t < y}.

    The region is a product of half-lines, so each isotropic Gaussian
    contributes Phi((t - b)/sigma) * (1 - Phi((t - d)/sigma)).
    """
    p = _substituted(dgm, cfg)
    if not len(p):
        return np.zeros(len(cfg.grid))
    kappa = persistence_weights(dgm, cfg)
    t = cfg.grid[:, None]
    mass = ndtr((t - p[None, :, 0]) / cfg.sigma) * ndtr((p[None, :, 1] - t) / cfg.sigma)
    return mass @ kappa


def curve_vector(
    diagrams: tuple[PersistenceDiagram, PersistenceDiagram], kind: FeatureKind
) -> FeatureVector:
    cfg = SUBLEVEL_CURVES if kind.filtration is Filtration.SUBLEVEL else DT_CURVES
    fn = betti_curve if kind.curve is CurveKind.BETTI else gaussian_curve
    d0, d1 = diagrams
    return FeatureVector(kind, np.concatenate([fn(d0, cfg), fn(d1, cfg)]))


def sublevel_diagrams(img: GrayImage):
    return sublevel_persistence(img.pixels)


def dt_diagrams(img: GrayImage):
    """binarize -> distance transform -> persistence of the capped distances."""
    dt = distance_transform(binarize(img))
    return sublevel_persistence(dt.capped_values)


def diagrams_for(img: GrayImage, filtration: Filtration):
    if Filtration(filtration) is Filtration.SUBLEVEL:
        return sublevel_diagrams(img)
    return dt_diagrams(img)


def featurize_sublevel(img: GrayImage, curve: CurveKind | str = CurveKind.BETTI) -> FeatureVector:
    return curve_vector(sublevel_diagrams(img), FeatureKind.of(Filtration.SUBLEVEL, curve))


def featurize_dt(img: GrayImage, curve: CurveKind | str = CurveKind.BETTI) -> FeatureVector:
    return curve_vector(dt_diagrams(img), FeatureKind.of(Filtration.DISTANCE, curve))


def featurize(img: GrayImage, kind: FeatureKind | str) -> FeatureVector:
    kind = FeatureKind(kind)
    return curve_vector(diagrams_for(img, kind.filtration), kind)


def featurize_all(img: GrayImage, kinds: Iterable[FeatureKind] = ALL_KINDS) -> dict[FeatureKind, FeatureVector]:
    """Several featurizations of one image, computing each filtration's persistence once."""
    kinds = [FeatureKind(k) for k in kinds]
    out = {}
    for filtration in Filtration:
        wanted = [k for k in kinds if k.filtration is filtration]
        if wanted:
            dgms = diagrams_for(img, filtration)
            for k in wanted:
                out[k] = curve_vector(dgms, k)
    return {k: out[k] for k in kinds}


# ---------------------------------------------------------------------------
# CSV: image_id, depth_label, kind, v0 ... v{n-1}
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureRow:
    image_id: str
    depth: int
    vector: FeatureVector


def write_feature_csv(path, rows: Iterable[FeatureRow]) -> int:
    n = 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in rows:
            writer.writerow(
                [row.image_id, row.depth, row.vector.kind.value]
                + [repr(float(x)) for x in row.vector.values]
            )
            n += 1
    return n


def read_feature_csv(path) -> Iterator[FeatureRow]:
    with open(Path(path), newline="") as fh:
        for rec in csv.reader(fh):
            if not rec:
                continue
            kind = FeatureKind(rec[2])
            yield FeatureRow(rec[0], int(rec[1]), FeatureVector(kind, [float(x) for x in rec[3:]]))


def mean_curves_by_depth(rows: Iterable[FeatureRow]) -> dict[tuple[FeatureKind, int], np.ndarray]:
    groups: dict[tuple[FeatureKind, int], list[np.ndarray]] = {}
    for row in rows:
        groups.setdefault((row.vector.kind, row.depth), []).append(row.vector.values)
    return {key: np.mean(vs, axis=0) for key, vs in sorted(groups.items(), key=lambda kv: (kv[0][0].value, kv[0][1]))}
