import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from osadas.backend import Backend, BackendCapabilities, OracleRegionModel, ToyLinearBackend
from osadas.cli import validate_report
from osadas.errors import CapabilityError, ConfigError
from osadas.metrics import (
    MetricConfig,
    MetricReport,
    auc,
    baseline_image,
    contour_bands,
    deletion,
    evaluate,
    insertion,
    minimal_size_contour,
    minimal_size_plain,
    overall,
    pixel_order,
    step_counts,
)

from conftest import REGION

REGION_FRACTION = REGION[2] * REGION[3] / 224**2


class ConstantBackend(Backend):
    def __init__(self, probs, shape=(8, 8, 1)):
        self.input_shape = shape
        self._logits = np.log(np.asarray(probs, dtype=np.float64))
        self.capabilities = BackendCapabilities(True, False, 2)

    def raw_features(self, image):
        return np.array([1.0, 0.0])

    def logits(self, image):
        return self._logits.copy()


def ideal(model):
    return model.region_mask / model.region_mask.sum()


def uniform(shape=(224, 224)):
    return np.full(shape, 1.0 / (shape[0] * shape[1]))


# -- AUC and overall -----------------------------------------------------------

def test_auc_closed_forms():
    x = np.linspace(0, 1, 33)
    assert auc(x, np.full(33, 0.3)) == pytest.approx(0.3, abs=1e-12)
    assert auc(x, x) == pytest.approx(0.5, abs=1e-12)
    assert auc(x, 1 - x) == pytest.approx(0.5, abs=1e-12)
    step = (x >= 0.5).astype(float)
    assert abs(auc(x, step) - 0.5) <= 1 / 32


@pytest.mark.parametrize("fr,vals", [([0, 1], [1.0]), ([0], [1.0]), ([0, 0.5, 0.5, 1], [1, 1, 1, 1]),
                                     ([0.1, 1], [1, 1]), ([[0, 1]], [[1, 1]])])
def test_auc_malformed(fr, vals):
    with pytest.raises(ValueError, match="malformed curve"):
        auc(fr, vals)


def test_overall_examples():
    assert overall(0.6, 0.2, 0.5) == pytest.approx(0.8, abs=1e-12)
    # reference triple whose overall rounds to 0.880
    assert overall(0.549, 0.328, 0.251) == pytest.approx(0.8805, abs=1e-4)
    assert round(overall(0.549, 0.328, 0.251), 3) == pytest.approx(0.880, abs=1e-3)
    with pytest.raises(ValueError):
        overall(0.5, 0.1, 0.0)


def test_step_counts():
    assert step_counts(10, 4).tolist() == [0, 2, 5, 8, 10]
    assert step_counts(224 * 224, 32)[1] == 1568


def test_pixel_order_ties_row_major():
    hm = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert pixel_order(hm).tolist() == [1, 2, 0, 3]
    assert pixel_order(np.zeros((2, 3))).tolist() == list(range(6))


def test_baselines():
    img = np.random.default_rng(0).random((32, 32, 3))
    assert np.all(baseline_image(img, "zero") == 0)
    blurred = baseline_image(img, "blur", 10.0)
    assert blurred.shape == img.shape and blurred.std() < img.std()
    with pytest.raises(ValueError):
        baseline_image(img, "noise")


# -- deletion / insertion ------------------------------------------------------

@pytest.mark.parametrize("c", [0.2, 0.5, 0.9])
def test_constant_model_auc(c):
    b = ConstantBackend([c, 1 - c])
    img = np.random.default_rng(1).random((8, 8, 1))
    hm = np.random.default_rng(2).random((8, 8))
    assert deletion(img, hm, b, target=0).auc == pytest.approx(c, abs=1e-12)
    assert insertion(img, hm, b, target=0).auc == pytest.approx(c, abs=1e-12)


def test_curve_endpoints(oracle, oracle_image):
    d = deletion(oracle_image, ideal(oracle), oracle)
    i = insertion(oracle_image, ideal(oracle), oracle)
    p = oracle.infer_probabilities(oracle_image).max()
    assert d.values[0] == pytest.approx(p) and d.values[-1] == pytest.approx(0.1)
    assert i.values[0] == pytest.approx(0.1) and i.values[-1] == pytest.approx(p)
    assert len(d.fractions) == 33


def test_ranking_region_last_lowers_insertion(oracle, oracle_image):
    good = insertion(oracle_image, ideal(oracle), oracle).auc
    bad = insertion(oracle_image, 1.0 - oracle.region_mask, oracle).auc
    assert bad < good


def test_metrics_need_head(oracle_image):
    m = OracleRegionModel(REGION, with_head=False)
    with pytest.raises(CapabilityError):
        deletion(oracle_image, ideal(m), m)


def test_shape_mismatch(oracle, oracle_image):
    with pytest.raises(ValueError, match="does not match"):
        deletion(oracle_image, np.zeros((10, 10)), oracle)


# -- minimal size --------------------------------------------------------------

def test_minimal_size_huge_tolerance(small_linear):
    img = np.random.default_rng(3).random((16, 16, 3))
    cfg = MetricConfig(tolerance=10.0)
    assert minimal_size_plain(img, uniform((16, 16)), small_linear, cfg) == pytest.approx(1 / 32)


def test_minimal_size_full_rank_tiny_tolerance():
    b = ToyLinearBackend(np.eye(16), (4, 4, 1))
    img = np.random.default_rng(4).random((4, 4, 1)) + 0.1
    cfg = MetricConfig(steps=8, tolerance=1e-12)
    assert minimal_size_plain(img, np.random.default_rng(5).random((4, 4)), b, cfg) == 1.0


def test_minimal_size_ideal_near_region_fraction(oracle, oracle_image):
    ms = minimal_size_plain(oracle_image, ideal(oracle), oracle)
    assert abs(ms - REGION_FRACTION) <= 1 / 32


def test_minimal_size_monotone_in_tolerance(oracle, oracle_image):
    hm = np.random.default_rng(6).random((224, 224)) + 2 * oracle.region_mask
    sizes = [minimal_size_plain(oracle_image, hm, oracle, MetricConfig(tolerance=t))
             for t in (1e-4, 1e-3, 1e-2, 1e-1, 1.0)]
    assert all(a >= b for a, b in zip(sizes, sizes[1:]))


def test_l1_tolerance_is_stricter(oracle, oracle_image):
    hm = np.random.default_rng(7).random((224, 224)) + oracle.region_mask
    linf = minimal_size_plain(oracle_image, hm, oracle, MetricConfig())
    l1 = minimal_size_plain(oracle_image, hm, oracle, MetricConfig(tolerance_norm="l1"))
    assert l1 >= linf


def test_contour_bands_equal_values_share_band():
    hm = np.array([[0.0, 0.0], [1.0, 1.0]])
    bands = contour_bands(hm, 4)
    assert bands[0, 0] == bands[0, 1] and bands[1, 0] == bands[1, 1] and bands[1, 0] > bands[0, 0]


def test_contour_concentrated_heatmap(oracle, oracle_image):
    ms = minimal_size_contour(oracle_image, ideal(oracle), oracle)
    assert ms == pytest.approx(REGION_FRACTION)


def test_contour_within_one_band_of_plain(oracle, oracle_image):
    hm = np.random.default_rng(8).random((224, 224)) + 3 * oracle.region_mask
    plain = minimal_size_plain(oracle_image, hm, oracle)
    contour = minimal_size_contour(oracle_image, hm, oracle)
    assert abs(plain - contour) <= 1 / 32 + 1e-9


# -- full reports -------------------------------------------------------------

def test_ideal_beats_uniform_over_seeds():
    for seed in range(10):
        m = OracleRegionModel(REGION, k=64, classes=10, seed=seed)
        img = np.random.default_rng(1000 + seed).random((224, 224, 3))
        good, flat = evaluate(img, ideal(m), m), evaluate(img, uniform(), m)
        assert good.deletion < flat.deletion
        assert good.insertion > flat.insertion
        assert good.minimal_size < flat.minimal_size
        assert abs(good.minimal_size - REGION_FRACTION) <= 1 / 32


def test_report_self_consistent_and_schema_valid(oracle, oracle_image):
    for method in ("plain", "contour"):
        rep = evaluate(oracle_image, ideal(oracle), oracle, MetricConfig(minimal_size_method=method))
        d = rep.to_dict()
        assert abs(d["overall"] - (d["insertion"] - d["deletion"]) / d["minimal_size"]) <= 1e-9
        assert d["minimal_size"] == d[f"minimal_size_{method}"]
        validate_report(d)


def test_report_schema_rejects_missing_field():
    rep = MetricReport(0.2, 0.6, 0.5).to_dict()
    validate_report(rep)
    del rep["overall"]
    with pytest.raises(Exception):
        validate_report(rep)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(1 / 64, 1))
def test_overall_identity_property(ins, dele, ms):
    rep = MetricReport(deletion=dele, insertion=ins, minimal_size=ms)
    assert abs(rep.overall - (ins - dele) / ms) <= 1e-9


@pytest.mark.parametrize("kwargs", [{"steps": 1}, {"tolerance": 0}, {"tolerance_norm": "l2"},
                                    {"deletion_baseline": "mean"}, {"contour_levels": 0},
                                    {"minimal_size_method": "both"}])
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        MetricConfig(**kwargs)
