import math

import numpy as np
import pytest

from crbeam import model


def _toy_scenario(**over):
    kwargs = dict(N=1, K=1, L=0, H=np.array([[1.0 + 0j]]),
                  G=np.zeros((0, 1)), sigma2=0.1, P=1.0, eps=np.zeros(0), M=4)
    kwargs.update(over)
    return model.Scenario(**kwargs)


def test_scenario_validation():
    _toy_scenario()  # valid
    with pytest.raises(ValueError):
        _toy_scenario(M=2)
    with pytest.raises(ValueError):
        _toy_scenario(sigma2=0.0)
    with pytest.raises(ValueError):
        _toy_scenario(H=np.ones((2, 1), dtype=complex))
    with pytest.raises(ValueError):
        model.Scenario(N=2, K=1, L=1, H=np.ones((1, 2), dtype=complex),
                       G=np.ones((1, 2), dtype=complex), sigma2=0.1, P=1.0,
                       eps=np.array([0.0]), M=4)


def test_constellation_geometry():
    for M in (4, 8, 16, 32, 64):
        con = model.Constellation.psk(M)
        assert con.theta == pytest.approx(math.pi / M)
        assert np.allclose(np.abs(con.points), 1.0)
        ang = np.angle(con.points)
        gaps = np.diff(np.unwrap(ang))
        assert np.allclose(gaps, 2 * math.pi / M)


def test_ula_channel_examples():
    assert np.allclose(model.ula_channel(0.0, 4), np.ones(4))
    assert np.allclose(model.ula_channel(90.0, 2), [1.0, -1.0], atol=1e-12)
    # sin 30 deg = 0.5 -> phases 0, pi/2, pi
    assert np.allclose(model.ula_channel(30.0, 3), [1.0, 1j, -1.0], atol=1e-12)
    h = model.ula_channel(47.3, 6)
    assert np.allclose(np.abs(h), 1.0)
    assert h[0] == 1.0


def test_default_directions():
    su, pu = model.default_directions(jitter=False)
    assert np.array_equal(su, [3, 35, 10, 39, 17, 74, 24, 86, 30, 80])
    assert np.array_equal(pu, [50, 57])
    a = model.default_directions(seed=11)
    b = model.default_directions(seed=11)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    for seed in range(1000):
        su_j, pu_j = model.default_directions(seed=seed)
        assert np.all(np.abs(su_j - su) <= 1.0)
        assert np.all(np.abs(pu_j - pu) <= 1.0)


def test_embedding_toy_t_vectors():
    # N=1, h=1, b=1, M=4: hbar = [0, 1], tan(theta) = 1
    sc = _toy_scenario()
    emb = model.build_embedding(sc, model.SymbolFrame.from_indices([0], 4))
    assert np.allclose(emb.t[0], [1.0, -1.0], atol=1e-12)
    assert np.allclose(emb.t[1], [1.0, 1.0], atol=1e-12)
    assert emb.rbar == 0.0
    assert emb.sigma_tilde ** 2 == pytest.approx(0.1, abs=1e-12)


def test_embedding_noise_parameters_by_order():
    su, pu = model.default_directions(jitter=False)
    for M, rbar_ref in ((8, -0.7071), (16, -0.9239), (64, -0.9952)):
        sc = model.Scenario.from_directions(4, su[:2], pu, sigma2=0.1, P=1.0,
                                            eps=0.5, M=M)
        emb = model.build_embedding(sc, model.SymbolFrame.from_indices([0, 1], M))
        assert emb.rbar == pytest.approx(rbar_ref, abs=1e-4)
        theta = math.pi / M
        assert emb.sigma_tilde ** 2 == pytest.approx(
            0.1 * (1 + math.tan(theta) ** 2) / 2, abs=1e-12)
        assert -1 < emb.rbar <= 0


def test_embedding_identities_randomized():
    rng = np.random.default_rng(123)
    for _ in range(1000):
        N = int(rng.integers(1, 17))
        M = int(rng.choice([4, 8, 16, 32, 64]))
        h = rng.normal(size=N) + 1j * rng.normal(size=N)
        sc = model.Scenario(N=N, K=1, L=0, H=h[None, :], G=np.zeros((0, N)),
                            sigma2=0.1, P=1.0, eps=np.zeros(0), M=M)
        k = int(rng.integers(0, M))
        frame = model.SymbolFrame.from_indices([k], M)
        emb = model.build_embedding(sc, frame)
        x = rng.normal(size=N) + 1j * rng.normal(size=N)
        xbar = model.embed_complex(x)
        b = frame.b[0]
        re = float(emb.hbar[0] @ emb.Pi @ xbar)
        im = float(emb.hbar[0] @ xbar)
        assert re == pytest.approx((np.conj(b) * (h @ x)).real, abs=1e-12 * max(1, abs(re)))
        assert im == pytest.approx((np.conj(b) * (h @ x)).imag, abs=1e-12 * max(1, abs(im)))


def test_embedding_interference_norm_identity():
    rng = np.random.default_rng(321)
    for _ in range(200):
        N = int(rng.integers(1, 12))
        g = rng.normal(size=N) + 1j * rng.normal(size=N)
        x = rng.normal(size=N) + 1j * rng.normal(size=N)
        sc = model.Scenario(N=N, K=1, L=1, H=np.ones((1, N), dtype=complex),
                            G=g[None, :], sigma2=0.1, P=1.0,
                            eps=np.array([1.0]), M=4)
        emb = model.build_embedding(sc, model.SymbolFrame.from_indices([0], 4))
        xbar = model.embed_complex(x)
        assert np.linalg.norm(emb.B[0] @ xbar) == pytest.approx(abs(g @ x), rel=1e-12)


def test_single_inequality_equivalence():
    # |Im(y b*)| - Re(y b*) tan(theta) <= 0  iff both transformed margins
    # beat the transformed noise pair built from the same draw
    rng = np.random.default_rng(77)
    for _ in range(1000):
        N = int(rng.integers(1, 8))
        M = int(rng.choice([4, 8, 16]))
        theta = math.pi / M
        h = rng.normal(size=N) + 1j * rng.normal(size=N)
        sc = model.Scenario(N=N, K=1, L=0, H=h[None, :], G=np.zeros((0, N)),
                            sigma2=0.1, P=1.0, eps=np.zeros(0), M=M)
        frame = model.SymbolFrame.from_indices([int(rng.integers(0, M))], M)
        emb = model.build_embedding(sc, frame)
        x = rng.normal(size=N) + 1j * rng.normal(size=N)
        n = rng.normal() + 1j * rng.normal()
        b = frame.b[0]
        y = h @ x + n
        lhs_holds = abs((y * np.conj(b)).imag) - (y * np.conj(b)).real * math.tan(theta) <= 0
        bn = np.conj(b) * n
        n1 = bn.imag - bn.real * math.tan(theta)
        n2 = -bn.imag - bn.real * math.tan(theta)
        xbar = model.embed_complex(x)
        rhs_holds = (emb.t[0] @ xbar >= n1) and (emb.t[1] @ xbar >= n2)
        assert lhs_holds == rhs_holds


def test_transformed_noise_statistics():
    # empirical variance within 1% of sigma^2/(2 cos^2 theta); correlation
    # of each pair within 0.01 of -cos(2 theta)
    rng = np.random.default_rng(2024)
    sigma2 = 0.1
    for M in (4, 8):
        theta = math.pi / M
        n = (rng.normal(size=10 ** 6) + 1j * rng.normal(size=10 ** 6)) * math.sqrt(sigma2 / 2)
        b = np.exp(2j * math.pi * rng.integers(0, M, 10 ** 6) / M)
        bn = np.conj(b) * n
        n1 = bn.imag - bn.real * math.tan(theta)
        n2 = -bn.imag - bn.real * math.tan(theta)
        var_ref = sigma2 / (2 * math.cos(theta) ** 2)
        assert np.var(n1) == pytest.approx(var_ref, rel=0.01)
        assert np.var(n2) == pytest.approx(var_ref, rel=0.01)
        corr = np.mean(n1 * n2) / var_ref
        assert corr == pytest.approx(-math.cos(2 * theta), abs=0.01)


def test_psi_angle_values():
    assert model.psi_angle(1 + 1j, 1.0) == pytest.approx(math.pi / 4)
    assert model.psi_angle(-1.0 + 0j, 1.0) == pytest.approx(math.pi)
    assert model.psi_angle(1j, 1j) == 0.0
    with pytest.raises(ValueError):
        model.psi_angle(0j, 1.0)
    with pytest.raises(ValueError):
        model.psi_angle(1.0, 2.0)  # non-unit reference


def test_psi_angle_range():
    rng = np.random.default_rng(4)
    for _ in range(500):
        y = rng.normal() + 1j * rng.normal()
        b = np.exp(1j * rng.uniform(0, 2 * math.pi))
        psi = model.psi_angle(y, b)
        assert -math.pi < psi <= math.pi


def test_detect_psk_examples():
    assert model.detect_psk(0.9 + 0.1j, 4) == 0
    theta = math.pi / 8
    assert model.detect_psk(np.exp(1j * (theta - 1e-9)), 8) == 0
    for M in (4, 8, 64):
        con = model.Constellation.psk(M)
        for k in range(M):
            assert model.detect_psk(con.points[k], M) == k
    assert model.detect_psk(0j, 4) == model.ERROR_INDEX


def test_detect_psk_tie_breaks_to_lower_index():
    # exactly on the boundary between index 0 and 1
    assert model.detect_psk(np.exp(1j * math.pi / 4), 4) == 0
    assert model.detect_psk(np.exp(-1j * math.pi / 4), 4) == 0


def test_detect_psk_agrees_with_angle_membership():
    rng = np.random.default_rng(10)
    for _ in range(2000):
        M = int(rng.choice([4, 8, 16]))
        theta = math.pi / M
        con = model.Constellation.psk(M)
        y = rng.normal() + 1j * rng.normal()
        k = model.detect_psk(y, M)
        psi = model.psi_angle(y, con.points[k])
        assert abs(psi) <= theta + 1e-12


def test_beamformers_from_x():
    rng = np.random.default_rng(3)
    x = rng.normal(size=3) + 1j * rng.normal(size=3)
    frame = model.SymbolFrame(b=np.array([1.0 + 0j, 1j]), indices=np.array([0, 1]))
    W = model.beamformers_from_x(x, frame)
    assert np.allclose(W[0], x / 2)
    assert np.allclose(W[1], -1j * x / 2)
    assert np.allclose(W.T @ frame.b, x, atol=1e-12)

    frame1 = model.SymbolFrame(b=np.array([1.0 + 0j]), indices=np.array([0]))
    assert np.allclose(model.beamformers_from_x(x, frame1)[0], x)

    for _ in range(50):
        K = int(rng.integers(1, 9))
        M = 8
        frame = model.SymbolFrame.from_indices(rng.integers(0, M, K), M)
        x = rng.normal(size=4) + 1j * rng.normal(size=4)
        W = model.beamformers_from_x(x, frame)
        assert np.allclose(W.T @ frame.b, x, atol=1e-10)


def test_channels_csv_round_trip(tmp_path):
    rng = np.random.default_rng(12)
    H = rng.normal(size=(3, 4)) + 1j * rng.normal(size=(3, 4))
    rows = []
    for i in range(3):
        row = np.empty(8)
        row[0::2] = H[i].real
        row[1::2] = H[i].imag
        rows.append(",".join(f"{v:.17g}" for v in row))
    path = tmp_path / "channels.csv"
    path.write_text("\n".join(rows) + "\n")
    loaded = model.load_channels_csv(path)
    assert np.allclose(loaded, H)
    bad = tmp_path / "bad.csv"
    bad.write_text("1.0,2.0,3.0\n")
    with pytest.raises(ValueError):
        model.load_channels_csv(bad)
