import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modgrok.analysis import (
    avg_ipr,
    extract_phases,
    interference_ratio,
    interference_ratio_from_output,
    ipr,
    line_masks,
    output_grid,
    preactivation_map,
    read_map_csv,
    slot_spectra,
    weight_spectrum,
    wrap_phase,
    write_map_csv,
    write_phases_csv,
    write_spectra_csv,
)
from modgrok.analytic import build_addition_weights
from modgrok.errors import ConfigError
from modgrok.modtask import ModularTask, one_hot_encode
from modgrok.network import NetworkParams, forward, init_params


def naive_ipr(row, p, r=2):
    """Textbook DFT with explicit sums, per slot, normalized over both slots."""
    mags = []
    for s in range(2):
        x = row[s * p:(s + 1) * p]
        for nu in range(p):
            c = sum(x[n] * np.exp(-2j * np.pi * nu * n / p) for n in range(p))
            mags.append(abs(c) ** 2)
    mags = np.array(mags) / sum(mags)
    return float(np.sum(mags**r))


def cosine_params(p, nu, phi1, phi2, phi3, N=1):
    n = np.arange(p)
    W1 = np.tile(np.concatenate([np.cos(2 * np.pi * nu * n / p + phi1),
                                 np.cos(2 * np.pi * nu * n / p + phi2)]), (N, 1))
    W2 = np.tile(np.cos(2 * np.pi * nu * n / p + phi3)[:, None], (1, N))
    return NetworkParams(W1, W2)


class TestSpectra:
    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32), p=st.integers(2, 40))
    def test_parseval(self, seed, p):
        W1 = np.random.default_rng(seed).normal(size=(5, 2 * p))
        spec = slot_spectra(W1)
        np.testing.assert_allclose(np.sum(np.abs(spec) ** 2, axis=(1, 2)) / p,
                                   np.sum(W1**2, axis=1), rtol=1e-10)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32), p=st.integers(2, 40), scale=st.floats(1e-3, 1e3))
    def test_ipr_bounds(self, seed, p, scale):
        params = NetworkParams(scale * np.random.default_rng(seed).normal(size=(7, 2 * p)),
                               np.zeros((p, 7)))
        np.testing.assert_allclose(ipr(params, 1), 1.0, atol=1e-12)
        i2 = ipr(params, 2)
        assert np.all(i2 >= 1 / (2 * p) - 1e-12) and np.all(i2 <= 1 + 1e-12)

    def test_matches_naive_dft(self):
        params = init_params(11, 4, seed=5)
        for k in range(4):
            assert ipr(params)[k] == pytest.approx(naive_ipr(params.W1[k], 11), rel=1e-12)

    def test_single_slot_cosine(self):
        p = 13
        row = np.zeros(2 * p)
        row[:p] = np.cos(2 * np.pi * 3 * np.arange(p) / p)
        prof = weight_spectrum(NetworkParams(row[None, :], np.zeros((p, 1))), 0)
        assert prof.ipr[2] == pytest.approx(0.5, abs=1e-14)
        assert prof.ipr[1] == pytest.approx(1.0, abs=1e-14)
        assert np.sum(prof.magnitudes**2) == pytest.approx(1.0, abs=1e-14)
        assert prof.dominant_freq[0] == 3
        assert prof.fit_residual[0] < 1e-12

    def test_constant_row(self):
        params = NetworkParams(np.r_[np.ones(7), np.zeros(7)][None, :], np.zeros((7, 1)))
        assert ipr(params)[0] == pytest.approx(1.0, abs=1e-15)

    def test_random_rows_delocalized(self):
        params = init_params(97, 1000, seed=11)
        vals = ipr(params)
        assert vals.max() < 0.1
        assert avg_ipr(params) < 0.1

    def test_analytic_against_closed_form(self):
        p, N = 97, 300   # includes the constant neurons k = 97, 194, 291
        params, ph = build_addition_weights(p, N, seed=4)
        k = np.arange(1, N + 1)
        c1, c2 = np.cos(ph.phi1), np.cos(ph.phi2)
        closed = np.where(k % p == 0, (c1**4 + c2**4) / (c1**2 + c2**2) ** 2, 0.25)
        np.testing.assert_allclose(ipr(params), closed, atol=1e-12)
        assert avg_ipr(params) == pytest.approx(np.mean(closed), abs=1e-9)
        for j in (0, 96, 193):
            assert ipr(params)[j] == pytest.approx(naive_ipr(params.W1[j], p), abs=1e-9)

    def test_bad_neuron(self):
        with pytest.raises(ConfigError):
            weight_spectrum(init_params(5, 3), 3)


class TestPhases:
    @settings(max_examples=40, deadline=None)
    @given(nu=st.integers(1, 48), phi=st.floats(-10, 10))
    def test_round_trip(self, nu, phi):
        p = 97
        params = cosine_params(p, nu, phi, 0.3, phi + 0.3)
        prof = weight_spectrum(params, 0)
        assert abs(wrap_phase(prof.extracted_phase[0] - phi)) < 1e-9
        assert prof.fit_residual[0] < 1e-12
        rep = extract_phases(params)
        assert len(rep.neurons) == 1 and rep.frequencies[0] == nu
        assert abs(rep.residuals[0]) < 1e-9
        assert abs(wrap_phase(rep.phases[0, 0] - phi)) < 1e-9

    def test_analytic_residuals_zero(self):
        params, _ = build_addition_weights(97, 48, seed=2)   # frequencies 1..48 are all distinct
        rep = extract_phases(params)
        assert len(rep.neurons) == 48
        assert np.max(np.abs(rep.residuals)) < 1e-9
        assert rep.concentration() == pytest.approx(8.0)

    def test_opposite_shifts_leave_residuals(self):
        params, ph = build_addition_weights(31, 15, seed=3)
        base = extract_phases(params).residuals
        p, n = 31, np.arange(31)
        k = np.arange(1, 16)[:, None]
        eps = 0.7
        W1 = np.concatenate([np.cos(2 * np.pi * k * n / p + ph.phi1[:, None] + eps),
                             np.cos(2 * np.pi * k * n / p + ph.phi2[:, None] - eps)], axis=1)
        shifted = extract_phases(NetworkParams(W1, params.W2)).residuals
        np.testing.assert_allclose(wrap_phase(shifted - base), 0.0, atol=1e-9)

    def test_degenerate_excluded(self):
        p = 11
        n = np.arange(p)
        two = np.cos(2 * np.pi * n / p) + np.cos(2 * np.pi * 3 * n / p)
        W1 = np.stack([np.r_[two, two], cosine_params(p, 2, 0, 0, 0).W1[0]])
        W2 = np.stack([np.cos(2 * np.pi * n / p), np.cos(2 * np.pi * 3 * n / p)], axis=1)
        rep = extract_phases(NetworkParams(W1, W2))
        assert rep.degenerate == 1
        assert rep.mismatched == 1
        assert len(rep.neurons) == 0
        assert rep.mass_within(1.0) == 0.0

    def test_residuals_in_range(self):
        rep = extract_phases(init_params(23, 200, seed=0))
        assert np.all(rep.residuals > -np.pi) and np.all(rep.residuals <= np.pi)
        counts, _ = rep.histogram()
        assert counts.sum() == len(rep.neurons)

    def test_wrap_phase(self):
        np.testing.assert_allclose(wrap_phase([np.pi, -np.pi, 3 * np.pi, 0.5, 2 * np.pi]),
                                   [np.pi, np.pi, np.pi, 0.5, 0.0], atol=1e-15)


class TestMaps:
    def test_layer2_matches_forward(self):
        params = init_params(7, 9, "gelu", seed=1)
        grid, _ = preactivation_map(params, 2, 3)
        for n, m in [(0, 0), (2, 5), (6, 6)]:
            assert grid[n, m] == pytest.approx(forward(params, one_hot_encode(n, m, 7)).h2[3], rel=1e-12)

    def test_layer1_is_separable(self):
        params, _ = build_addition_weights(31, 10, seed=0)
        grid, fourier = preactivation_map(params, 1, 4)
        # a + b structure: second differences vanish
        np.testing.assert_allclose(grid[1:, 1:] - grid[1:, :-1] - grid[:-1, 1:] + grid[:-1, :-1], 0.0,
                                   atol=1e-14)
        masks = line_masks(31)
        axes = masks["n_only"] | masks["m_only"]
        axes[0, 0] = True
        assert fourier[~axes].max() < 1e-12

    def test_analytic_fourier_lines(self):
        params, _ = build_addition_weights(97, 1552, seed=0)
        grid, fourier = preactivation_map(params, 2, 6)
        masks = line_masks(97)
        peaks = {k: fourier[v].max() for k, v in masks.items()}
        for k in ("diff", "n_only", "m_only"):
            assert 0 < peaks[k] < peaks["sum"]
        on_lines = np.any(list(masks.values()), axis=0)
        on_lines[0, 0] = True
        assert fourier[~on_lines].max() < 1e-9 * peaks["sum"]
        # in real space the map peaks on n + m = 6
        assert all((n + grid[n].argmax()) % 97 == 6 for n in range(97))

    def test_random_map_has_no_dominant_off_axis_peak(self):
        masks = line_masks(97)
        axes = masks["n_only"] | masks["m_only"]
        axes[0, 0] = True
        for act in ("quadratic", "relu", "gelu"):
            _, fourier = preactivation_map(init_params(97, 512, act, seed=3), 2, 0)
            vals = fourier[~axes]
            assert vals.max() < 5 * vals.mean()

    def test_line_masks(self):
        m = line_masks(5)
        assert m["sum"][2, 2] and m["diff"][2, 3] and m["n_only"][3, 0] and m["m_only"][0, 1]
        assert not any(v[0, 0] for v in m.values())
        assert m["sum"].sum() == 4

    def test_bad_index(self):
        params = init_params(5, 3)
        with pytest.raises(ConfigError):
            preactivation_map(params, 1, 3)
        with pytest.raises(ConfigError):
            preactivation_map(params, 2, 5)
        with pytest.raises(ConfigError):
            preactivation_map(params, 3, 0)

    def test_map_csv_round_trip(self, tmp_path):
        grid, _ = preactivation_map(init_params(5, 3, seed=2), 2, 1)
        path = write_map_csv(grid, tmp_path / "map.csv", p=5, layer=2, index=1)
        back, header = read_map_csv(path)
        np.testing.assert_array_equal(back, grid)
        assert header == {"index": 1, "layer": 2, "p": 5}


class TestInterference:
    def test_output_grid(self):
        params = init_params(6, 5, "relu", seed=0)
        out = output_grid(params, chunk=7)
        assert out.shape == (6, 6, 6)
        np.testing.assert_allclose(out[4, 1], forward(params, one_hot_encode(4, 1, 6)).h2, rtol=1e-13)

    def test_perfect_delta(self):
        targets = np.array([0, 2, 1])
        h2 = np.zeros((3, 3))
        h2[np.arange(3), targets] = 0.25
        assert interference_ratio_from_output(h2, targets) == 0.0

    def test_decreases_with_width(self):
        task = ModularTask.add(97)
        med = [np.median([interference_ratio(build_addition_weights(97, N, seed=s)[0], task)
                          for s in range(5)]) for N in (97, 388, 1552)]
        assert med[0] > med[1] > med[2]
        assert med[-1] < 1.0

    def test_modulus_mismatch(self):
        with pytest.raises(ConfigError):
            interference_ratio(init_params(5, 3), ModularTask.add(7))


class TestExport:
    def test_spectra_csv(self, tmp_path):
        params, _ = build_addition_weights(13, 4, seed=0)
        lines = write_spectra_csv(params, tmp_path / "s.csv").read_text().splitlines()
        assert lines[0].startswith("neuron,freq_1,freq_2")
        assert len(lines) == 5
        assert float(lines[1].split(",")[-1]) == pytest.approx(0.25)

    def test_phases_csv(self, tmp_path):
        rep = extract_phases(build_addition_weights(13, 6, seed=0)[0])
        lines = write_phases_csv(rep, tmp_path / "ph.csv").read_text().splitlines()
        assert len(lines) == 1 + len(rep.neurons)
