import numpy as np
import pytest

from ionchain import noise as nz
from ionchain import protocols as pr
from ionchain import xy


def walk(n=10, alpha=0.3):
    j = pr.idealized_couplings(n, alpha)
    return j / np.linalg.eigvalsh(j)[-1]


def config(n=10):
    j = walk(n)
    return j, pr.ProtocolConfig(gamma=pr.analytic_gamma(j), sender=0,
                                receiver=n - 1, duration=pr.transfer_time(n))


class TestNoiseConfig:
    def test_sigma_from_t2(self):
        assert nz.NoiseConfig(t2=10e-3).sigma == pytest.approx(10.0)
        assert nz.NoiseConfig(t2=1.0).sigma == pytest.approx(1.0)

    def test_field_variance_override(self):
        c = nz.NoiseConfig(t2=10e-3, field_variance=400.0)
        assert c.sigma == pytest.approx(20.0)

    def test_validation(self):
        with pytest.raises(ValueError):
            nz.NoiseConfig(t2=0.0)
        with pytest.raises(ValueError):
            nz.NoiseConfig(n_samples=0)


class TestSampling:
    def test_deterministic_in_seed_and_index(self):
        c = nz.NoiseConfig(rng_seed=3)
        a = nz.sample_static_fields(6, c, 4)
        b = nz.sample_static_fields(6, c, 4)
        assert np.array_equal(a, b)

    def test_distinct_across_indices_and_seeds(self):
        c1 = nz.NoiseConfig(rng_seed=3)
        c2 = nz.NoiseConfig(rng_seed=4)
        assert not np.array_equal(nz.sample_static_fields(6, c1, 0),
                                  nz.sample_static_fields(6, c1, 1))
        assert not np.array_equal(nz.sample_static_fields(6, c1, 0),
                                  nz.sample_static_fields(6, c2, 0))

    def test_common_random_numbers_across_chain_sizes(self):
        # the first 6 fields of a longer chain's draw match the shorter one
        c = nz.NoiseConfig(rng_seed=0)
        short = nz.sample_static_fields(6, c, 2)
        long = nz.sample_static_fields(9, c, 2)
        assert np.array_equal(short, long[:6])

    def test_moments(self):
        c = nz.NoiseConfig(t2=10e-3, rng_seed=1)
        draws = np.concatenate(
            [nz.sample_static_fields(50, c, k) for k in range(400)])
        assert np.mean(draws) == pytest.approx(0.0, abs=0.15)
        assert np.std(draws) == pytest.approx(10.0, rel=0.02)


class TestEnsemble:
    def test_zero_variance_matches_noiseless(self):
        j, cfg = config()
        noise = nz.NoiseConfig(field_variance=0.0, n_samples=3)
        out = nz.noisy_transfer_ensemble(j, None, cfg, noise)
        assert out.mean_at_T == pytest.approx(out.noiseless_at_T, abs=1e-12)
        # the running-moment variance loses ~sqrt(machine eps) to
        # cancellation when all samples coincide
        assert out.std_at_T == pytest.approx(0.0, abs=1e-7)
        assert np.max(out.std_trace) < 1e-7

    def test_matches_manual_loop(self):
        j, cfg = config(n=8)
        noise = nz.NoiseConfig(t2=1e-4, n_samples=5, rng_seed=7)
        out = nz.noisy_transfer_ensemble(j, None, cfg, noise, n_times=40)
        times = np.linspace(0.0, cfg.duration, 40)
        traces = []
        for k in range(5):
            fields = nz.sample_static_fields(8, noise, k)
            hs = pr.search_hamiltonian(j, cfg.gamma, [0, 7])
            hs = hs + np.diag(2.0 * fields / cfg.marker_amplitude)
            sector = xy.build_single_excitation(hs)
            psi0 = np.zeros(8, dtype=complex)
            psi0[0] = 1.0
            states = xy.evolve_grid(sector, psi0, times)
            traces.append(np.abs(states[:, 7]) ** 2)
        traces = np.array(traces)
        assert out.mean_trace == pytest.approx(np.mean(traces, axis=0),
                                               abs=1e-12)
        assert out.std_trace == pytest.approx(np.std(traces, axis=0),
                                              abs=1e-10)

    def test_local_fields_enter_with_factor_two(self):
        j, cfg = config(n=6)
        h = 0.05 * np.arange(6, dtype=float)
        noise = nz.NoiseConfig(field_variance=0.0, n_samples=1)
        out = nz.noisy_transfer_ensemble(j, h, cfg, noise, n_times=30)
        direct = pr.transfer_fidelity_at(j, cfg.gamma, cfg.duration, 0, 5,
                                         h=h)
        assert out.noiseless_at_T == pytest.approx(direct, abs=1e-12)

    def test_marker_amplitude_scales_fields(self):
        # doubling the marker amplitude halves the effective noise, which
        # must raise the mean fidelity for strong noise
        j, cfg = config(n=10)
        noise = nz.NoiseConfig(field_variance=0.02, n_samples=40)
        weak_cfg = pr.ProtocolConfig(gamma=cfg.gamma, sender=0, receiver=9,
                                     duration=cfg.duration,
                                     marker_amplitude=2.0)
        strong = nz.noisy_transfer_ensemble(j, None, cfg, noise)
        weak = nz.noisy_transfer_ensemble(j, None, weak_cfg, noise)
        assert weak.mean_at_T > strong.mean_at_T

    def test_noise_degrades_mean_fidelity(self):
        j, cfg = config(n=12)
        noise = nz.NoiseConfig(field_variance=0.01, n_samples=60)
        out = nz.noisy_transfer_ensemble(j, None, cfg, noise)
        assert out.mean_at_T < out.noiseless_at_T
        assert out.noiseless_at_T > 0.97

    def test_deterministic_given_seed(self):
        j, cfg = config(n=8)
        noise = nz.NoiseConfig(field_variance=0.01, n_samples=10, rng_seed=2)
        a = nz.noisy_transfer_ensemble(j, None, cfg, noise, n_times=25)
        b = nz.noisy_transfer_ensemble(j, None, cfg, noise, n_times=25)
        assert np.array_equal(a.mean_trace, b.mean_trace)
        assert np.array_equal(a.std_trace, b.std_trace)
