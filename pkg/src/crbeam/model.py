"""Domain model: scenarios, PSK geometry, ULA channels, and the real embedding.

The real embedding turns the complex downlink design into a real vector
problem: the transmit vector x in C^N becomes xbar = [Re x; Im x] in R^{2N},
each user contributes two linear forms t_{2i-1}, t_{2i} whose positivity
against transformed noise is equivalent to correct PSK detection, and each
primary-user channel becomes a 2 x 2N matrix B_l with ||B_l xbar|| = |g_l^T x|.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Scenario",
    "Constellation",
    "SymbolFrame",
    "RealEmbedding",
    "BeamSolution",
    "ula_channel",
    "default_directions",
    "build_embedding",
    "psi_angle",
    "detect_psk",
    "beamformers_from_x",
    "embed_complex",
    "unembed",
    "load_channels_csv",
]

ALLOWED_PSK_ORDERS = (4, 8, 16, 32, 64)

# Base directions (degrees) for the secondary and primary users of the
# default scenario; per-draw jitter is uniform on [-1, 1] degrees.
SU_BASE_ANGLES_DEG = (3.0, 35.0, 10.0, 39.0, 17.0, 74.0, 24.0, 86.0, 30.0, 80.0)
PU_BASE_ANGLES_DEG = (50.0, 57.0)


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Constellation:
    """Unit-magnitude M-PSK constellation with decision half-angle pi/M."""

    M: int
    theta: float
    points: np.ndarray

    @classmethod
    def psk(cls, M: int) -> "Constellation":
        if M < 2:
            raise ValueError(f"PSK order must be >= 2, got {M}")
        k = np.arange(M)
        points = np.exp(2j * np.pi * k / M)
        return cls(M=M, theta=math.pi / M, points=_freeze(points))


@dataclass(frozen=True)
class Scenario:
    """One downlink instance: channels, budgets, noise, and modulation.

    H holds the K secondary-user channels as rows (length N), G the L
    primary-user channels.  P and eps are linear-scale power budgets; sigma2
    is the per-user complex noise variance.
    """

    N: int
    K: int
    L: int
    H: np.ndarray
    G: np.ndarray
    sigma2: float
    P: float
    eps: np.ndarray
    M: int

    def __post_init__(self):
        if self.N < 1 or self.K < 1 or self.L < 0:
            raise ValueError("need N >= 1, K >= 1, L >= 0")
        if self.M not in ALLOWED_PSK_ORDERS:
            raise ValueError(f"PSK order must be one of {ALLOWED_PSK_ORDERS}, got {self.M}")
        if not (self.sigma2 > 0 and self.P > 0):
            raise ValueError("sigma2 and P must be positive")
        H = np.asarray(self.H, dtype=complex)
        G = np.asarray(self.G, dtype=complex).reshape(self.L, self.N)
        eps = np.atleast_1d(np.asarray(self.eps, dtype=float))
        if H.shape != (self.K, self.N):
            raise ValueError(f"H must be {self.K}x{self.N}, got {H.shape}")
        if eps.shape != (self.L,):
            raise ValueError(f"eps must have length L={self.L}, got {eps.shape}")
        if self.L and not np.all(eps > 0):
            raise ValueError("interference budgets eps must be positive")
        object.__setattr__(self, "H", _freeze(H))
        object.__setattr__(self, "G", _freeze(G))
        object.__setattr__(self, "eps", _freeze(eps))

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    @property
    def constellation(self) -> Constellation:
        return Constellation.psk(self.M)

    @classmethod
    def from_directions(cls, N, su_angles_deg, pu_angles_deg, sigma2, P, eps, M):
        """Build a scenario with unit-modulus ULA channels at the given angles."""
        su = np.atleast_1d(np.asarray(su_angles_deg, dtype=float))
        pu = np.atleast_1d(np.asarray(pu_angles_deg, dtype=float))
        H = np.array([ula_channel(a, N) for a in su])
        G = (np.array([ula_channel(a, N) for a in pu])
             if pu.size else np.zeros((0, N), dtype=complex))
        eps = np.full(pu.size, eps, dtype=float) if np.isscalar(eps) else np.asarray(eps, dtype=float)
        return cls(N=N, K=su.size, L=pu.size, H=H, G=G,
                   sigma2=sigma2, P=P, eps=eps, M=M)


@dataclass(frozen=True)
class SymbolFrame:
    """One slot of transmit symbols: b[i] = points[indices[i]] for user i."""

    b: np.ndarray
    indices: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.b, dtype=complex)
        idx = np.asarray(self.indices, dtype=int)
        if b.shape != idx.shape or b.ndim != 1:
            raise ValueError("b and indices must be 1-d with equal length")
        object.__setattr__(self, "b", _freeze(b))
        object.__setattr__(self, "indices", _freeze(idx))

    @classmethod
    def from_indices(cls, indices, M: int) -> "SymbolFrame":
        con = Constellation.psk(M)
        idx = np.asarray(indices, dtype=int)
        if np.any((idx < 0) | (idx >= M)):
            raise ValueError("symbol indices out of range")
        return cls(b=con.points[idx], indices=idx)


@dataclass(frozen=True)
class RealEmbedding:
    """Per-frame real-valued data defining every optimization.

    t: (2K, 2N) rows t_1..t_2K; correct detection of user i (against the
        transformed noise) is t_{2i-1}^T xbar >= n~_{2i-1} and
        t_{2i}^T xbar >= n~_{2i}.
    B: (L, 2, 2N) interference matrices with ||B_l xbar|| = |g_l^T x|.
    sigma_tilde: std deviation of the transformed noise, sigma/(sqrt(2) cos theta).
    rbar: correlation of each noise pair, -cos(2 theta); in (-1, 0] for M >= 4.
    Pi: (2N, 2N) rotation [[0, -I], [I, 0]] linking real and imaginary forms.
    hbar: (K, 2N) embedded conjugate-weighted channels.
    frame: the symbol frame the embedding was built for.
    """

    t: np.ndarray
    B: np.ndarray
    sigma_tilde: float
    rbar: float
    Pi: np.ndarray
    hbar: np.ndarray
    theta: float
    frame: SymbolFrame


@dataclass
class BeamSolution:
    """Result of one beamformer design on one frame."""

    x: np.ndarray
    w: np.ndarray
    rho: float
    upsilon: float
    method: str
    stats: dict = field(default_factory=dict)


def ula_channel(angle_deg: float, N: int) -> np.ndarray:
    """Uniform-linear-array channel: element n is exp(j pi (n-1) sin(angle))."""
    if N < 1:
        raise ValueError("N must be >= 1")
    omega = math.radians(angle_deg)
    return np.exp(1j * math.pi * np.arange(N) * math.sin(omega))


def default_directions(seed=None, jitter: bool = True):
    """Default user directions: base angles plus uniform jitter on [-1, 1] deg.

    Returns (su_angles, pu_angles) in degrees, deterministic given the seed.
    """
    su = np.array(SU_BASE_ANGLES_DEG)
    pu = np.array(PU_BASE_ANGLES_DEG)
    if jitter:
        rng = np.random.default_rng(seed)
        su = su + rng.uniform(-1.0, 1.0, su.size)
        pu = pu + rng.uniform(-1.0, 1.0, pu.size)
    return su, pu


def embed_complex(x: np.ndarray) -> np.ndarray:
    """Stack a complex vector as [Re(x); Im(x)]."""
    x = np.asarray(x, dtype=complex)
    return np.concatenate([x.real, x.imag])


def unembed(xbar: np.ndarray) -> np.ndarray:
    """Inverse of embed_complex."""
    xbar = np.asarray(xbar, dtype=float)
    n = xbar.size // 2
    return xbar[:n] + 1j * xbar[n:]


def build_embedding(scenario: Scenario, frame: SymbolFrame) -> RealEmbedding:
    """Assemble the real embedding of one scenario/frame pair.

    t_{2i-1} = -hbar_i + tan(theta) Pi^T hbar_i and
    t_{2i}   =  hbar_i + tan(theta) Pi^T hbar_i, with
    hbar_i = [Im(b_i^* h_i); Re(b_i^* h_i)].
    """
    if frame.b.shape != (scenario.K,):
        raise ValueError(f"frame has {frame.b.size} symbols for K={scenario.K} users")
    N, K, L = scenario.N, scenario.K, scenario.L
    theta = math.pi / scenario.M
    tan_t = math.tan(theta)

    Pi = np.zeros((2 * N, 2 * N))
    Pi[:N, N:] = -np.eye(N)
    Pi[N:, :N] = np.eye(N)

    hbar = np.empty((K, 2 * N))
    t = np.empty((2 * K, 2 * N))
    for i in range(K):
        bh = np.conj(frame.b[i]) * scenario.H[i]
        hbar[i] = np.concatenate([bh.imag, bh.real])
        rot = Pi.T @ hbar[i]
        t[2 * i] = -hbar[i] + tan_t * rot
        t[2 * i + 1] = hbar[i] + tan_t * rot

    B = np.empty((L, 2, 2 * N))
    for l in range(L):
        g = scenario.G[l]
        B[l, 0, :N] = g.real
        B[l, 0, N:] = -g.imag
        B[l, 1, :N] = g.imag
        B[l, 1, N:] = g.real

    rbar = -math.cos(2.0 * theta)
    if abs(rbar) < 1e-14:
        rbar = 0.0  # exact for M = 4; lets the bivariate CDF factorize
    sigma_tilde = scenario.sigma / (math.sqrt(2.0) * math.cos(theta))

    return RealEmbedding(
        t=_freeze(t), B=_freeze(B), sigma_tilde=sigma_tilde, rbar=rbar,
        Pi=_freeze(Pi), hbar=_freeze(hbar), theta=theta, frame=frame,
    )


def psi_angle(y: complex, b: complex) -> float:
    """Angle in (-pi, pi] between a received sample y and its symbol b."""
    if y == 0:
        raise ValueError("psi_angle is ambiguous at y = 0")
    if abs(abs(b) - 1.0) > 1e-9:
        raise ValueError("reference symbol must have unit magnitude")
    z = y * np.conj(b)
    psi = math.atan2(z.imag, z.real)
    if psi == -math.pi:
        psi = math.pi
    return psi


ERROR_INDEX = -1


def detect_psk(y: complex, M: int) -> int:
    """Nearest-angle PSK detector; ties resolve to the lower symbol index.

    Returns ERROR_INDEX for the ambiguous input y = 0.
    """
    if y == 0:
        return ERROR_INDEX
    ang = math.atan2(y.imag, y.real)
    d = np.abs(np.angle(np.exp(1j * (ang - 2.0 * np.pi * np.arange(M) / M))))
    return int(np.argmin(d))


def beamformers_from_x(x: np.ndarray, frame: SymbolFrame) -> np.ndarray:
    """Per-user beamformers w_i = x b_i^* / K; satisfies sum_i w_i b_i = x."""
    x = np.asarray(x, dtype=complex)
    K = frame.b.size
    return np.conj(frame.b)[:, None] * x[None, :] / K


def load_channels_csv(path) -> np.ndarray:
    """Read a complex channel matrix from CSV.

    One row per user; each antenna contributes an interleaved (real, imag)
    pair, so a row has 2N numbers.
    """
    raw = np.loadtxt(path, delimiter=",", ndmin=2, dtype=float)
    if raw.shape[1] % 2 != 0:
        raise ValueError("channel CSV rows must have an even number of columns")
    return raw[:, 0::2] + 1j * raw[:, 1::2]
