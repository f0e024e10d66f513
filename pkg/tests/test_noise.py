import numpy as np
import pytest

from battery_denoise.dataset import TimeSeries, generate_synthetic
from battery_denoise.ecm import BatteryConfig
from battery_denoise.noise import NoiseError, NoiseSpec, corrupt, psd_to_variance


@pytest.fixture(scope="module")
def flat():
    n = 70_000
    return TimeSeries(np.arange(n) * 0.1, np.ones(n), np.full(n, 293.0),
                      np.full(n, 3.7), np.full(n, 0.5), sample_rate=10.0, phase="discharge")


@pytest.mark.parametrize("psd,fs,expected", [
    (1e-4, 10.0, 5e-4),
    (0.0, 3.0, 0.0),
    (1e-4, 1.0, 5e-5),
])
def test_psd_to_variance(psd, fs, expected):
    assert psd_to_variance(NoiseSpec(psd, fs)) == pytest.approx(expected, rel=1e-15)


def test_zero_psd_is_identity():
    truth = generate_synthetic("charge", BatteryConfig(), duration_s=10.0)
    noisy = corrupt(truth, NoiseSpec(0.0, 10.0, 7))
    assert np.array_equal(noisy.voltage_v, truth.voltage_v)
    assert np.array_equal(noisy.soc, truth.soc)
    assert np.array_equal(noisy.truth_soc, truth.soc)


def test_deterministic_and_seed_sensitive():
    truth = generate_synthetic("charge", BatteryConfig(), duration_s=50.0)
    a = corrupt(truth, NoiseSpec(1e-4, 10.0, 42))
    b = corrupt(truth, NoiseSpec(1e-4, 10.0, 42))
    c = corrupt(truth, NoiseSpec(1e-4, 10.0, 43))
    assert a == b
    assert not np.array_equal(a.voltage_v, c.voltage_v)
    assert np.array_equal(a.truth_voltage_v, c.truth_voltage_v)


def test_truth_preserved_on_recorruption():
    truth = generate_synthetic("charge", BatteryConfig(), duration_s=5.0)
    once = corrupt(truth, NoiseSpec(1e-4, 10.0, 1))
    twice = corrupt(once, NoiseSpec(1e-4, 10.0, 2))
    assert np.array_equal(twice.truth_soc, truth.soc)


def test_variance_calibration(flat):
    noisy = corrupt(flat, NoiseSpec(1e-4, 10.0, 2024))
    for got, clean in ((noisy.voltage_v, flat.voltage_v), (noisy.soc, flat.soc)):
        var = np.var(got - clean)
        assert abs(var / 5e-4 - 1) < 0.05


def test_zero_mean_over_many_samples():
    n = 200_000
    series = TimeSeries(np.arange(n) * 0.1, np.zeros(n), np.full(n, 293.0),
                        np.zeros(n), np.zeros(n), sample_rate=10.0)
    noisy = corrupt(series, NoiseSpec(1e-4, 10.0, 5))
    sigma = np.sqrt(5e-4)
    assert abs(noisy.voltage_v.mean()) < 4 * sigma / np.sqrt(n)
    assert abs(noisy.soc.mean()) < 4 * sigma / np.sqrt(n)


def test_channel_independence(flat):
    noisy = corrupt(flat, NoiseSpec(1e-4, 10.0, 99))
    r = np.corrcoef(noisy.voltage_v - flat.voltage_v, noisy.soc - flat.soc)[0, 1]
    assert abs(r) < 0.02


def test_rate_mismatch():
    truth = generate_synthetic("charge", BatteryConfig(), duration_s=5.0)
    with pytest.raises(NoiseError):
        corrupt(truth, NoiseSpec(1e-4, 1.0, 0))


@pytest.mark.parametrize("kw", [{"psd": -1.0}, {"sample_rate": 0.0}, {"seed": -1}, {"seed": 2**64}])
def test_spec_validation(kw):
    with pytest.raises(NoiseError):
        NoiseSpec(**kw)
