import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radiotrack import (AntennaConfig, Calibration, CosineLobePattern, DegenerateGeometryError,
                        display_to_power, field_amplitude, nearest_antenna, power_to_display,
                        received_power)
from radiotrack.measurement import PowerObservation, is_saturated

CAL = Calibration()


class TestDisplayLink:
    def test_zero(self):
        assert display_to_power(0) == 0.0
        assert power_to_display(0.0) == 0.0

    def test_mid_scale(self):
        Y = display_to_power(128)
        assert Y == pytest.approx(2.2812e-10, rel=1e-4)
        assert power_to_display(Y) == pytest.approx(128, abs=1e-9)

    def test_saturated_clamped(self):
        assert display_to_power(255) == display_to_power(254.5)
        assert math.isfinite(display_to_power(255))
        assert is_saturated(255) and not is_saturated(254)

    @pytest.mark.parametrize("Z", [1, 50, 128, 200, 254])
    def test_round_trip_examples(self, Z):
        assert power_to_display(display_to_power(Z)) == pytest.approx(Z, abs=1e-9)

    def test_round_trip_every_integer(self):
        Z = np.arange(1, 255)
        np.testing.assert_allclose(power_to_display(display_to_power(Z)), Z, atol=1e-9, rtol=0)

    @settings(max_examples=200)
    @given(st.floats(0.0, 254.5))
    def test_round_trip_real(self, Z):
        assert power_to_display(display_to_power(Z)) == pytest.approx(Z, abs=1e-9)

    def test_monotone(self):
        Z = np.linspace(0, 254.5, 2000)
        Y = display_to_power(Z)
        assert np.all(np.diff(Y) > 0)
        assert np.all(np.diff(power_to_display(Y)) > 0)

    def test_large_power_approaches_but_never_reaches_top(self):
        Z = power_to_display(np.array([1e-6, 1e-3, 1.0]))
        assert np.all(Z < 255) and Z[-1] > 254.99

    @pytest.mark.parametrize("Z", [-1, 255.5, 300, math.nan])
    def test_out_of_range_display(self, Z):
        with pytest.raises(ValueError):
            display_to_power(Z)

    def test_negative_power(self):
        with pytest.raises(ValueError):
            power_to_display(-1e-12)

    def test_calibration_validation(self):
        with pytest.raises(ValueError):
            Calibration(b=0)
        with pytest.raises(ValueError):
            Calibration(Zm=10, ZM=5)

    def test_observation_from_display(self):
        obs = PowerObservation.from_display(3.0, "A", 255, CAL)
        assert obs.saturated and obs.Y == display_to_power(254.5)


def antenna(az=0.0, A=1e-4, p=2.0, pos=(0.0, 0.0, 0.0)):
    return AntennaConfig("A", pos, az, CosineLobePattern(A, p))


def state(x, y, z):
    return np.array([x, 0.0, y, 0.0, z])


class TestField:
    def test_boresight(self):
        # Boresight of azimuth 0 is +y.
        assert field_amplitude(state(0, 50, 0), antenna()) == pytest.approx(math.sqrt(1e-4) / 50)

    def test_inverse_distance(self):
        ant = antenna(az=0.7)
        s = np.array([30.0, 0, 40.0, 0, 5.0])
        s2 = s.copy()
        s2[[0, 2, 4]] *= 2
        assert field_amplitude(s2, ant) / field_amplitude(s, ant) == pytest.approx(0.5, rel=1e-12)

    def test_azimuth_convention(self):
        # Azimuth pi/2 points east (+x): a target due east is on boresight.
        ant = antenna(az=math.pi / 2)
        assert field_amplitude(state(100, 0, 0), ant) == pytest.approx(1e-2 / 100)
        assert field_amplitude(state(0, 100, 0), ant) == pytest.approx(math.sqrt(1e-4 * 0.05 ** 2) / 100)

    def test_gain_shape(self):
        ant = antenna()
        theta = math.radians(60)
        xi = field_amplitude(state(100 * math.sin(theta), 100 * math.cos(theta), 0), ant)
        assert xi == pytest.approx(math.sqrt(1e-4 * 0.5 ** 2) / 100)

    def test_overhead_counts_as_boresight(self):
        assert field_amplitude(state(0, 0, 20), antenna()) == pytest.approx(1e-2 / 20)

    def test_zero_range(self):
        with pytest.raises(DegenerateGeometryError):
            field_amplitude(state(1, 2, 3), antenna(pos=(1, 2, 3)))

    def test_vectorized(self):
        ant = antenna(az=0.3)
        states = np.array([state(10, 20, 1), state(-5, 40, 2), state(100, -3, 0)])
        single = [field_amplitude(s, ant) for s in states]
        np.testing.assert_allclose(field_amplitude(states, ant), single, rtol=1e-15)

    def test_decreasing_along_boresight(self):
        r = np.linspace(1, 5000, 500)
        xi = field_amplitude(np.stack([np.zeros_like(r), 0 * r, r, 0 * r, 0 * r], axis=1), antenna())
        assert np.all(np.diff(xi) < 0)

    def test_pattern_validation(self):
        with pytest.raises(ValueError):
            CosineLobePattern(A=-1)
        with pytest.raises(ValueError):
            CosineLobePattern(floor=0)


class TestReceivedPower:
    def test_noiseless(self):
        ant = antenna()
        s = state(3, 40, 2)
        assert received_power(s, 0.0, ant) == pytest.approx(field_amplitude(s, ant) ** 2, rel=1e-15)

    def test_noise_only(self):
        class Silent:
            def amplitude(self, antenna, positions):
                return np.zeros(np.shape(positions)[:-1])

        ant = AntennaConfig("S", (0, 0, 0), 0.0, Silent())
        assert received_power(state(1, 1, 1), 1.0, ant) == pytest.approx(CAL.P0)

    def test_monte_carlo_mean(self):
        ant = antenna()
        s = state(0, 800, 5)
        gamma = np.random.default_rng(0).standard_normal(100_000)
        h = received_power(np.broadcast_to(s, (gamma.size, 5)), gamma, ant)
        expected = field_amplitude(s, ant) ** 2 + CAL.P0
        assert h.mean() == pytest.approx(expected, rel=0.01)
        assert np.all(h >= 0)


class TestNearestAntenna:
    def test_picks_closest(self):
        towers = [AntennaConfig("b", (0, 0, 0)), AntennaConfig("a", (100, 0, 0))]
        assert nearest_antenna([90, 0, 0], towers).id == "a"

    def test_tie_to_lowest_id(self):
        towers = [AntennaConfig("b", (0, 0, 0)), AntennaConfig("a", (100, 0, 0))]
        assert nearest_antenna([50, 0, 0], towers).id == "a"

    def test_height_counts(self):
        towers = [AntennaConfig("a", (0, 0, 100)), AntennaConfig("b", (30, 0, 0))]
        assert nearest_antenna([0, 0, 0], towers).id == "b"

    def test_empty(self):
        with pytest.raises(ValueError):
            nearest_antenna([0, 0, 0], [])
