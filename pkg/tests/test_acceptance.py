"""Exit criteria, one test per criterion.

Each test records a short detail string; the terminal summary prints one
PASS/FAIL line per criterion.
"""

import time

import numpy as np
import pytest
from conftest import DIHEDRAL
from oracles import edt_brute, otsu_exhaustive, quadrature_curve

from firntopo.binarize import otsu_threshold, squared_edt
from firntopo.cubical import ESSENTIAL, PersistenceDiagram, betti_at, sublevel_persistence
from firntopo.curves import (
    ALL_KINDS,
    SUBLEVEL_CURVES,
    CurveConfig,
    FeatureKind,
    betti_curve,
    featurize_all,
    gaussian_curve,
    persistence_weights,
)
from firntopo.experiments import ALL_SCENARIOS, CorpusEntry, FeatureCache, Scenario, run_grid, table_blocks
from firntopo.forest import Dataset, ForestConfig, Task, fit, oob_score, predict
from firntopo.image import GrayImage, default_params, synth_corpus, synth_firn


def detail(record_property, text):
    record_property("detail", text)


@pytest.fixture(scope="module", autouse=True)
def warm_jit():
    # compile the numba kernels before anything is timed
    sublevel_persistence(np.zeros((3, 3)))
    squared_edt(np.eye(3, dtype=bool))
    fit(Dataset([[0.0], [1.0]], [0, 1]), ForestConfig(n_trees=1))


@pytest.mark.acceptance(1, "sublevel diagrams reproduce oracle Betti numbers")
def test_fundamental_lemma(record_property):
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    n_images = 60
    for _ in range(n_images):
        g = rng.integers(0, 8, (16, 16))
        d0, d1 = sublevel_persistence(g)
        c0, c1 = betti_curve(d0, SUBLEVEL_CURVES), betti_curve(d1, SUBLEVEL_CURVES)
        # the sublevel set stops changing at t = 7, so t >= 7 shares the oracle value at 7
        oracle = [betti_at(g, t) for t in range(8)]
        assert betti_at(g, 255) == oracle[-1]
        oracle += [oracle[-1]] * (256 - 8)
        assert c0.tolist() == [float(b0) for b0, _ in oracle]
        assert c1.tolist() == [float(b1) for _, b1 in oracle]
        for t in (-1, 3.5, 300):
            assert (int(((d0.births <= t) & (t < d0.deaths)).sum()),
                    int(((d1.births <= t) & (t < d1.deaths)).sum())) == betti_at(g, t)
    elapsed = time.perf_counter() - start
    detail(record_property, f"{n_images} images, {elapsed:.2f}s")
    assert elapsed < 10


@pytest.mark.acceptance(2, "handcrafted diagrams")
def test_handcrafted(record_property):
    d0, d1 = sublevel_persistence([[42]])
    assert d0.as_set() == [(42.0, ESSENTIAL)] and len(d1) == 0
    ring = np.zeros((3, 3))
    ring[1, 1] = 5
    d0, d1 = sublevel_persistence(ring)
    assert d1.as_set() == [(0.0, 5.0)]
    assert d0.as_set() == [(0.0, ESSENTIAL)]
    detail(record_property, "1x1 and 3x3 ring exact")


@pytest.mark.acceptance(3, "EDT matches brute force")
def test_edt_exact(record_property):
    rng = np.random.default_rng(3)
    start = time.perf_counter()
    n = 120
    for k in range(n):
        ice = rng.random((40, 40)) < (0.01 + 0.98 * k / n)
        if not ice.any():
            ice[rng.integers(40), rng.integers(40)] = True
        assert np.array_equal(squared_edt(ice), edt_brute(ice))
    elapsed = time.perf_counter() - start
    detail(record_property, f"{n} masks, {elapsed:.2f}s")
    assert elapsed < 10


@pytest.mark.acceptance(4, "Otsu equals exhaustive scan")
def test_otsu(record_property):
    rng = np.random.default_rng(4)
    n = 0
    while n < 120:
        shape = tuple(rng.integers(2, 24, 2))
        mode = n % 3
        if mode == 0:
            px = rng.integers(0, 256, shape)
        elif mode == 1:
            px = rng.choice(rng.choice(256, rng.integers(2, 6), replace=False), shape)
        else:
            px = np.clip(rng.normal(rng.integers(40, 200), 30, shape), 0, 255).astype(int)
        img = GrayImage(px)
        if px.min() == px.max():
            continue
        assert otsu_threshold(img) == otsu_exhaustive(img)
        n += 1
    detail(record_property, f"{n} images")


@pytest.mark.acceptance(5, "Gaussian curve closed form vs quadrature")
def test_gaussian_quadrature(record_property):
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(20):
        k = rng.integers(1, 4)
        sigma = float(rng.uniform(1.0, 12.0))
        b = rng.integers(0, 80, k).astype(float)
        d = b + rng.integers(1, 60, k)
        t = int(rng.integers(0, 150))
        cfg = CurveConfig(0, 150, sigma, 151.0)
        dgm = PersistenceDiagram(0, np.c_[b, d])
        closed = gaussian_curve(dgm, cfg)[t]
        worst = max(worst, abs(closed - quadrature_curve(np.c_[b, d], t, sigma)))
        assert abs(persistence_weights(dgm, cfg).sum() - 1.0) <= 1e-12
    detail(record_property, f"max error {worst:.1e}")
    assert worst <= 1e-6


@pytest.mark.acceptance(6, "featurizations invariant under the dihedral group")
def test_dihedral(record_property):
    rng = np.random.default_rng(6)
    for k in range(10):
        img = synth_firn(default_params(int(rng.choice([7, 31, 53, 78])), int(rng.integers(2**32))), 128)
        ref = featurize_all(img)
        for _, op in DIHEDRAL[1:]:
            moved = featurize_all(GrayImage(op(img.pixels)))
            for kind in ALL_KINDS:
                assert np.array_equal(ref[kind].values, moved[kind].values), (k, kind)
    detail(record_property, "10 images x 8 transforms x 4 kinds")


@pytest.mark.acceptance(7, "feature vector lengths")
def test_shapes(record_property):
    vecs = featurize_all(synth_firn(default_params(46, 0), 64))
    lengths = {k.value: len(v) for k, v in vecs.items()}
    assert lengths == {"SS-Betti": 512, "SS-Gaussian": 512, "DT-Betti": 200, "DT-Gaussian": 200}
    detail(record_property, "SS 512, DT 200")


@pytest.mark.acceptance(8, "forest XOR out-of-bag accuracy and determinism")
def test_forest(record_property):
    rng = np.random.default_rng(8)
    X = rng.integers(0, 2, (400, 2)).astype(float)
    data = Dataset(X, (X[:, 0] != X[:, 1]).astype(int))
    cfg = ForestConfig(Task.CLASSIFICATION, n_trees=100, seed=8)
    f = fit(data, cfg)
    oob = oob_score(f, data)
    Xt = rng.uniform(-0.5, 1.5, (200, 2))
    assert np.array_equal(predict(f, Xt), predict(fit(data, cfg), Xt))
    detail(record_property, f"OOB {oob:.2f}%")
    assert oob > 95.0


# ---------------------------------------------------------------------------
# directional checks on the synthetic corpus
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def directional():
    start = time.perf_counter()
    corpus = [CorpusEntry(f"d{d:02d}/img_{i:03d}", d, image=img) for d, i, img in synth_corpus(20, 128, 0)]
    cache = FeatureCache()
    kinds = [FeatureKind.SS_BETTI, FeatureKind.DT_BETTI]
    cls = run_grid(corpus, [Scenario.WHOLE, Scenario.BLURRED], kinds, [Task.CLASSIFICATION],
                   n_trials=10, base_seed=0, cache=cache)
    reg = run_grid(corpus, [Scenario.MISSING_DEPTHS], kinds, [Task.REGRESSION],
                   n_trials=10, base_seed=0, cache=cache)
    res = {(r.task, r.scenario, r.featurization): r.mean for r in cls + reg}
    return res, time.perf_counter() - start


def _get(res, task, scenario, kind):
    return res[(task, Scenario(scenario), FeatureKind(kind))]


@pytest.mark.slow
@pytest.mark.acceptance("9a", "WHOLE classification with SS-Betti >= 90%")
def test_whole_accuracy(directional, record_property):
    res, elapsed = directional
    acc = _get(res, Task.CLASSIFICATION, "WHOLE", "SS-Betti")
    detail(record_property, f"{acc:.2f}%; corpus, features and grid in {elapsed:.0f}s")
    assert acc >= 90.0


@pytest.mark.slow
@pytest.mark.acceptance("9b", "blurring costs SS-Betti at least 15 points")
def test_blur_hurts_sublevel(directional, record_property):
    res, _ = directional
    whole = _get(res, Task.CLASSIFICATION, "WHOLE", "SS-Betti")
    blurred = _get(res, Task.CLASSIFICATION, "BLURRED", "SS-Betti")
    detail(record_property, f"{whole:.2f} -> {blurred:.2f}")
    assert blurred <= whole - 15.0


@pytest.mark.slow
@pytest.mark.acceptance("9c", "DT-Betti robust to blur within 10 points")
def test_blur_spares_dt(directional, record_property):
    res, _ = directional
    whole = _get(res, Task.CLASSIFICATION, "WHOLE", "DT-Betti")
    blurred = _get(res, Task.CLASSIFICATION, "BLURRED", "DT-Betti")
    detail(record_property, f"{whole:.2f} -> {blurred:.2f}")
    assert abs(whole - blurred) <= 10.0


@pytest.mark.slow
@pytest.mark.acceptance("9d", "MISSING_DEPTHS MAE: DT-Betti <= SS-Betti")
def test_missing_depths(directional, record_property):
    res, _ = directional
    dt = _get(res, Task.REGRESSION, "MISSING_DEPTHS", "DT-Betti")
    ss = _get(res, Task.REGRESSION, "MISSING_DEPTHS", "SS-Betti")
    detail(record_property, f"DT {dt:.2f} m vs SS {ss:.2f} m")
    assert dt <= ss


@pytest.mark.acceptance(10, "table has 5 regression and 4 classification rows")
def test_table_shape(record_property):
    corpus = [CorpusEntry(f"d{d:02d}/img_{i:03d}", d, image=img) for d, i, img in synth_corpus(3, 24, 10)]
    results = run_grid(corpus, ALL_SCENARIOS, ALL_KINDS, n_trials=1, n_trees=3)
    blocks = dict(table_blocks(results))
    reg = [r[0] for r in blocks[Task.REGRESSION][1:]]
    cls = [r[0] for r in blocks[Task.CLASSIFICATION][1:]]
    assert reg == ["Whole", "Split", "Split BR", "Blurred", "Missing depths"]
    assert cls == ["Whole", "Split", "Split BR", "Blurred"]
    assert all(len(r) == 1 + 4 for rows in blocks.values() for r in rows)
    detail(record_property, "5 x 4 and 4 x 4")
