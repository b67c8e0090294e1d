import numpy as np
import pytest

from gampofdm import ldpc


@pytest.fixture(scope="module")
def small():
    return ldpc.generate_code(16, 0.5, seed=3)


@pytest.fixture(scope="module")
def desk():
    return ldpc.generate_code(2000, 0.5, seed=7)


def test_small_shape_and_codewords(small):
    assert small.m == 8 and small.n == 16 and small.k == 8
    rng = np.random.default_rng(0)
    for _ in range(20):
        c = small.encode(rng.integers(0, 2, small.k))
        assert not small.syndrome(c).any()


def test_seed_determinism():
    a = ldpc.generate_code(120, 0.5, seed=11)
    b = ldpc.generate_code(120, 0.5, seed=11)
    assert [list(c) for c in a.checks] == [list(c) for c in b.checks]


def test_desk_code_structure(desk):
    w = desk.column_weights()
    assert w.min() >= 2
    assert w.mean() == pytest.approx(3.0, abs=0.5)
    assert ldpc.four_cycle_free_fraction(desk) >= 0.99


def test_encode_linear(desk):
    rng = np.random.default_rng(1)
    b1, b2 = rng.integers(0, 2, (2, desk.k))
    np.testing.assert_array_equal(desk.encode(b1 ^ b2), desk.encode(b1) ^ desk.encode(b2))
    assert not desk.encode(np.zeros(desk.k, int)).any()
    with pytest.raises(ValueError):
        desk.encode(np.zeros(desk.k + 1, int))


def test_extract_info_inverts_encode(desk):
    b = np.random.default_rng(2).integers(0, 2, desk.k)
    np.testing.assert_array_equal(desk.extract_info(desk.encode(b)), b)


def test_noiseless_prior_converges_immediately(desk):
    c = desk.encode(np.random.default_rng(3).integers(0, 2, desk.k))
    prior = np.where(c == 0, 30.0, -30.0)
    ext, post, ok, n = desk.siso_decode(prior)
    assert ok and n == 0
    assert np.all(np.sign(post) == np.sign(prior))


def test_single_flip_corrected_exhaustively(small):
    rng = np.random.default_rng(4)
    c = small.encode(rng.integers(0, 2, small.k))
    base = np.where(c == 0, 4.0, -4.0)
    for i in range(small.n):
        prior = base.copy()
        prior[i] = -0.5 * prior[i]
        ext, post, ok, n = small.siso_decode(prior, max_iters=5)
        assert ok, i
        np.testing.assert_array_equal((post < 0).astype(np.uint8), c)


def test_zero_prior_symmetric(small):
    ext, post, ok, _ = small.siso_decode(np.zeros(small.n))
    np.testing.assert_array_equal(post, ext)
    np.testing.assert_allclose(ext, 0.0, atol=1e-9)


def test_extrinsic_decomposition_and_clamp(desk):
    rng = np.random.default_rng(5)
    c = desk.encode(rng.integers(0, 2, desk.k))
    prior = (1 - 2.0 * c) * 2.0 + rng.normal(0, 2.0, desk.n)
    ext, post, ok, n = desk.siso_decode(prior, max_iters=25)
    np.testing.assert_array_equal(post, np.clip(prior, -30, 30) + ext)
    assert np.all(np.abs(ext) <= ldpc.LLR_MAX)


def test_bpsk_awgn_high_snr(desk):
    rng = np.random.default_rng(6)
    nv = 10 ** (-6.0 / 10) / 2  # BPSK at 3 dB Eb/N0
    errors = 0
    for _ in range(30):
        b = rng.integers(0, 2, desk.k)
        c = desk.encode(b)
        r = (1 - 2.0 * c) + np.sqrt(nv) * rng.standard_normal(desk.n)
        _, post, _, _ = desk.siso_decode(2 * r / nv)
        errors += int(np.sum(desk.extract_info((post < 0).astype(np.uint8)) != b))
    assert errors == 0


def test_file_round_trip(tmp_path, small):
    p = tmp_path / "h.txt"
    ldpc.save_checks(small, p)
    text = p.read_text().splitlines()
    assert text[0] == "# n 16" and len(text) == 1 + small.m
    back = ldpc.load_checks(p)
    assert back.n == small.n
    assert [list(c) for c in back.checks] == [list(c) for c in small.checks]


def test_rank_deficient_rejected():
    with pytest.raises(ldpc.CodeConstructionError):
        ldpc.code_from_checks([[0, 1], [0, 1]], 4)


def test_bad_rate():
    with pytest.raises(ValueError):
        ldpc.generate_code(10, 1.0)


def test_uncoded_passthrough():
    u = ldpc.UncodedCode(5)
    ext, post, ok, n = u.siso_decode(np.array([1.0, -40, 3, 0, 2]))
    assert ok and n == 0
    np.testing.assert_array_equal(ext, 0)
    assert post[1] == -ldpc.LLR_MAX
