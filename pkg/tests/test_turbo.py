import numpy as np
import pytest
from scipy.special import logsumexp

from gampofdm import hmm, ldpc, modem, turbo
from gampofdm.prior_fit import Gm2HmmPrior


@pytest.fixture(scope="module")
def qpsk():
    return modem.build_constellation(2)


class TestBitsToSymbols:
    def test_uniform(self):
        c = modem.build_constellation(4)
        lb = turbo.bits_to_symbols(np.zeros((3, 4)), c)
        np.testing.assert_allclose(np.exp(lb), 1 / 16)

    def test_certain_bits(self):
        c = modem.build_constellation(4)
        bits = c.labels[5]
        llr = np.where(bits == 0, np.inf, -np.inf)
        p = np.exp(turbo.bits_to_symbols(llr[None], c))[0]
        assert p[5] == 1.0 and p.sum() == 1.0

    def test_product_rule(self, qpsk):
        p = np.exp(turbo.bits_to_symbols(np.array([[np.inf, 0.0]]), qpsk))[0]
        want = np.where(qpsk.labels[:, 0] == 0, 0.5, 0.0)
        np.testing.assert_allclose(p, want, atol=1e-15)

    def test_finite_llrs(self, qpsk):
        llr = np.array([1.3, -0.4])
        p = np.exp(turbo.bits_to_symbols(llr[None], qpsk))[0]
        pb0 = 1 / (1 + np.exp(-llr))  # Pr{bit = 0}
        for k, lab in enumerate(qpsk.labels):
            want = np.prod(np.where(lab == 0, pb0, 1 - pb0))
            assert p[k] == pytest.approx(want)


class TestSymbolsToBits:
    def test_uniform_likelihood(self):
        c = modem.build_constellation(4)
        rng = np.random.default_rng(0)
        out = turbo.symbols_to_bits(np.zeros((5, 16)), rng.normal(0, 2, (5, 4)), c)
        np.testing.assert_allclose(out, 0.0, atol=1e-12)

    def test_hand_enumeration(self, qpsk):
        like = np.array([0.1, 0.4, 0.2, 0.3])
        llr_in = np.array([0.7, -1.1])
        pb0 = 1 / (1 + np.exp(-llr_in))
        lab = qpsk.labels
        want = []
        for m in range(2):
            o = 1 - m
            w0 = sum(like[k] * (pb0[o] if lab[k, o] == 0 else 1 - pb0[o])
                     for k in range(4) if lab[k, m] == 0)
            w1 = sum(like[k] * (pb0[o] if lab[k, o] == 0 else 1 - pb0[o])
                     for k in range(4) if lab[k, m] == 1)
            want.append(np.log(w0 / w1))
        got = turbo.symbols_to_bits(np.log(like)[None], llr_in[None], qpsk)[0]
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_degenerate_neighbour_bit(self, qpsk):
        like = np.array([0.1, 0.4, 0.2, 0.3])
        got = turbo.symbols_to_bits(np.log(like)[None], np.array([[np.inf, 0.0]]), qpsk)[0]
        k0 = [k for k in range(4) if qpsk.labels[k, 0] == 0]
        a = [k for k in k0 if qpsk.labels[k, 1] == 0][0]
        b = [k for k in k0 if qpsk.labels[k, 1] == 1][0]
        assert got[1] == pytest.approx(np.log(like[a] / like[b]))

    def test_known_positions_zero_and_clipped(self, qpsk):
        ll = np.array([[0.0, -1e4, -1e4, -1e4]])
        out = turbo.symbols_to_bits(ll, np.zeros((1, 2)), qpsk, known=np.array([[True, False]]))
        assert out[0, 0] == 0.0
        assert abs(out[0, 1]) == ldpc.LLR_MAX


class TestLeftwardLikelihood:
    def test_perfect_csi(self, qpsk):
        y = np.array([0.3 + 0.1j])
        z = np.array([1.1 - 0.2j])
        ll = turbo.leftward_symbol_likelihood(y, z, np.zeros(1), qpsk.points, 0.2)[0]
        want = -np.log(np.pi * 0.2) - np.abs(y[0] - qpsk.points * z[0]) ** 2 / 0.2
        np.testing.assert_allclose(ll, want)

    def test_uninformative_channel(self, qpsk):
        ll = turbo.leftward_symbol_likelihood(np.array([1.0 + 1j]), np.zeros(1), np.array([1e12]),
                                              qpsk.points, 0.1)[0]
        p = np.exp(ll - logsumexp(ll))
        np.testing.assert_allclose(p, 0.25, atol=1e-9)

    def test_qpsk_ratios_depend_on_correlation(self, qpsk):
        rng = np.random.default_rng(1)
        y = modem.complex_normal(rng, 20, 1.0)
        z = modem.complex_normal(rng, 20, 1.0)
        nuz = rng.uniform(0.1, 1, 20)
        ll = turbo.leftward_symbol_likelihood(y, z, nuz, qpsk.points, 0.3)
        var = nuz + 0.3  # |s| = 1
        want = 2 * np.real(y[:, None] * np.conj(qpsk.points[None] * z[:, None])) / var[:, None]
        np.testing.assert_allclose(ll - ll[:, :1], want - want[:, :1], atol=1e-10)


def test_receiver_config_validation():
    with pytest.raises(ValueError):
        turbo.ReceiverConfig(max_turbo=0)
    with pytest.raises(ValueError):
        turbo.ReceiverConfig(soft_output="bogus")


def _small_system(seed, noise_var, algorithm="gamp_mc", Np=0, Mt=32):
    rng = np.random.default_rng(seed)
    N, L, M = 64, 16, 2
    cfg = modem.FrameConfig.for_efficiency(N, L, M, Np, Mt, 0.5, 224, noise_var=noise_var)
    code = ldpc.generate_code(cfg.Mc, cfg.rate, seed=1)
    assert code.k == cfg.Mi
    const = modem.build_constellation(M)
    perm = modem.interleaver(cfg.Mc, 2)
    info = rng.integers(0, 2, code.k, dtype=np.uint8)
    frame = modem.assemble_frame(code.encode(info), cfg, rng, perm, const, info)
    pdp = np.exp(-np.arange(L) / 4.0)
    pdp /= pdp.sum()
    # stationary chain with lambda = 0.3; taps are drawn from this same prior
    lam0 = 0.3
    p01 = np.full(L, 0.2)
    p10 = np.full(L, 0.2 * lam0 / (1 - lam0))
    lam = hmm.chain_marginals(lam0, p01, p10, L)
    nu1 = pdp / (lam + (1 - lam) * 0.01)
    prior = Gm2HmmPrior(lam=lam, nu0=nu1 * 0.01, nu1=nu1, p01=p01, p10=p10)
    d = np.empty((cfg.Q, L), bool)
    d[:, 0] = rng.random(cfg.Q) < lam0
    for j in range(L - 1):
        u = rng.random(cfg.Q)
        d[:, j + 1] = np.where(d[:, j], u >= p01[j], u < p10[j])
    taps = np.sqrt(np.where(d, prior.nu1, prior.nu0)) * modem.complex_normal(rng, (cfg.Q, L), 1.0)
    gains = modem.subcarrier_gains(taps, N)
    y = frame.symbols * gains + np.sqrt(noise_var) * modem.complex_normal(rng, (cfg.Q, N), 1.0)
    layout = turbo.FrameKnowledge.from_frame(frame)
    out = turbo.run_receiver(y, prior, code, cfg, turbo.ReceiverConfig(), const, perm, layout,
                             algorithm, genie=turbo.Genie(taps=taps, gains=gains))
    return out, info, taps


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("noise_var", [1e-8, 1e-2])
def test_gamp_mc_decodes_quickly(seed, noise_var):
    out, info, _ = _small_system(seed, noise_var)
    assert not out.failed
    assert np.array_equal(out.info_hat, info)
    assert out.n_turbo <= 2


@pytest.mark.parametrize("algorithm", ["gamp", "lmmse", "lasso", "pcsi"])
def test_other_arms_noiseless(algorithm):
    out, info, _ = _small_system(0, 1e-8, algorithm)
    assert not out.failed
    assert np.array_equal(out.info_hat, info)


def test_pcsi_stops_on_syndrome():
    out, info, taps = _small_system(1, 1e-3, "pcsi")
    assert out.stop_reason == "syndrome"
    np.testing.assert_array_equal(out.xhat, taps)


def test_pilot_only_lasso_first_iteration():
    out, info, _ = _small_system(2, 1e-4, "lasso", Np=16, Mt=0)
    assert not out.failed and np.array_equal(out.info_hat, info)


def test_checkpoint_clamps():
    out, _, _ = _small_system(3, 0.05, "gamp_mc")
    assert out.checkpoint(1) is out.iterations[0]
    assert out.checkpoint(99) is out.iterations[-1]
    rec = out.iterations[0]
    assert {"turbo_iter", "info_hat", "xhat", "decoder_iters", "syndrome_ok", "seconds",
            "eq_iters", "gamp_iters"} <= set(rec)


def test_unknown_algorithm():
    with pytest.raises(ValueError):
        turbo.run_receiver(np.zeros((1, 8)), None, None, modem.FrameConfig(N=8, L=2, Q=1,
                           M=2, Mt=0, rate=0.5), turbo.ReceiverConfig(), None, None, None,
                           "nope")
