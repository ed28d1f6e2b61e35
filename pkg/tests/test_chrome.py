import numpy as np
import pytest

from scdgcn.chrome import (ChromeConfig, ChromeNet, build_chrome_net, evaluate_chrome, predict_chrome,
                           rmse_per_target, train_chrome)
from scdgcn.dataset import Dataset, GeneratorConfig, PercollImage, Sample, generate_synthetic
from scdgcn.errors import DataError, ShapeError

SMALL = GeneratorConfig(num_patients=2, total_samples=6, height=64, width=16)
FAST = ChromeConfig(epochs=3)


@pytest.fixture(scope="module")
def small():
    return generate_synthetic(SMALL, 0)


def test_rmse_examples():
    truth = np.array([[3.0, 4.0], [3.0, 4.0]])
    assert rmse_per_target(truth, truth) == {"rmse_hypo": 0.0, "rmse_hyper": 0.0}
    got = rmse_per_target(np.zeros((2, 2)), np.array([[3.0, 3.0], [4.0, 4.0]]))
    assert got["rmse_hypo"] == pytest.approx(3.5355, abs=1e-4)
    assert got["rmse_hyper"] == pytest.approx(np.sqrt(12.5), rel=1e-15)


def test_outputs_non_negative_and_deterministic(small):
    net = train_chrome(small, FAST, seed=3)
    again = train_chrome(small, FAST, seed=3)
    assert net.loss_trace == again.loss_trace
    pred = net.predict(small.images())
    assert pred.shape == (6, 2) and np.all(pred >= 0)
    np.testing.assert_array_equal(pred, again.predict(small.images()))


def test_untrained_final_relu_clamps():
    model = build_chrome_net(64, 16, ChromeConfig(), seed=0)
    model.layers[-2].params["b"][:] = -1e3
    out = ChromeNet(model).predict(np.zeros((2, 64, 16)))
    assert np.all(out == 0.0)


def test_single_sample_overfits(small):
    one = small.subset([0])
    net = train_chrome(one, ChromeConfig(epochs=200, dropout=0.0, lr=0.001), seed=0)
    est = predict_chrome(net, one[0].image)
    assert est.hypo_pct == pytest.approx(one[0].lab.hypo_pct, abs=0.5)
    assert est.hyper_pct == pytest.approx(one[0].lab.hyper_pct, abs=0.5)


def test_training_objective_non_increasing_over_epochs():
    # training is a deterministic prefix, so an e-epoch run is the state after epoch e
    ds = generate_synthetic(GeneratorConfig(num_patients=4, total_samples=32, height=64, width=16,
                                            noise=0.0), 0)
    lab = ds.lab_matrix()
    monotone = 0
    for seed in range(10):
        objective = [np.mean((train_chrome(ds, ChromeConfig(epochs=e), seed).predict(ds.images()) - lab) ** 2)
                     for e in range(1, 11)]
        monotone += bool(np.all(np.diff(objective) <= 0))
    assert monotone >= 9


def test_noise_free_cohort_is_learnable():
    ds = generate_synthetic(GeneratorConfig(num_patients=10, total_samples=200, height=64, width=16,
                                            noise=0.0), 0)
    net = train_chrome(ds, ChromeConfig(epochs=80), seed=0)
    rmse = evaluate_chrome(net, ds)
    baseline = ds.lab_matrix().std(axis=0)
    assert rmse["rmse_hypo"] < 0.3 * baseline[0]
    assert rmse["rmse_hyper"] < 0.3 * baseline[1]


def test_missing_lab_rejected(small):
    s = small[0]
    unlabelled = Dataset((Sample(s.sample_id, s.patient_id, s.image, s.spleen, None, None),), 5)
    with pytest.raises(DataError, match=s.sample_id):
        train_chrome(unlabelled, FAST)


def test_wrong_image_size(small):
    net = train_chrome(small, ChromeConfig(epochs=1))
    with pytest.raises(ShapeError):
        predict_chrome(net, PercollImage(np.zeros((128, 32))))
