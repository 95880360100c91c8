"""Jones-vector polarization algebra.

States are amplitude pairs in the (|H>, |V>) basis. Poincare-sphere
conventions: S1 is the H/V axis, S2 the +/- (diagonal) axis and S3 the
L/R (circular) axis, so a rotation by ``angle`` about unit axis ``n`` is
``exp(-i angle/2 n.sigma)`` with sigma = (sigma_z, sigma_x, sigma_y).

The key basis Z is {|L>, |R>} and the control basis X is {|+>, |->}.
Outcome 0 is |L> (Z) or |+> (X).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

UNITARITY_TOL = 1e-8

Z, X = 0, 1
BASIS_NAMES = {Z: "Z", X: "X"}

_S = 1.0 / math.sqrt(2.0)
KET_H = np.array([1.0, 0.0], dtype=complex)
KET_V = np.array([0.0, 1.0], dtype=complex)
KET_PLUS = np.array([_S, _S], dtype=complex)
KET_MINUS = np.array([_S, -_S], dtype=complex)
KET_L = np.array([_S, 1j * _S], dtype=complex)
KET_R = np.array([_S, -1j * _S], dtype=complex)

# BASIS_KETS[basis][outcome]
BASIS_KETS = np.array([[KET_L, KET_R], [KET_PLUS, KET_MINUS]])

SIGMA_1 = np.array([[1, 0], [0, -1]], dtype=complex)
SIGMA_2 = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_3 = np.array([[0, -1j], [1j, 0]], dtype=complex)
IDENTITY = np.eye(2, dtype=complex)


@dataclass(frozen=True)
class PolarizationState:
    amp_h: complex
    amp_v: complex

    def __post_init__(self):
        norm = abs(self.amp_h) ** 2 + abs(self.amp_v) ** 2
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"polarization state not normalized (|psi|^2 = {norm})")

    @classmethod
    def from_vector(cls, vec) -> "PolarizationState":
        v = np.asarray(vec, dtype=complex)
        v = v / np.linalg.norm(v)
        return cls(complex(v[0]), complex(v[1]))

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.amp_h, self.amp_v], dtype=complex)

    def overlap(self, other: "PolarizationState") -> float:
        """|<self|other>|, insensitive to global phase."""
        return abs(np.vdot(self.vector, other.vector))

    def stokes(self) -> np.ndarray:
        """Normalized Stokes vector (S1, S2, S3); diagnostic view only."""
        v = self.vector
        return np.real([np.vdot(v, s @ v) for s in (SIGMA_1, SIGMA_2, SIGMA_3)])


STATE_H = PolarizationState.from_vector(KET_H)
STATE_V = PolarizationState.from_vector(KET_V)
STATE_PLUS = PolarizationState.from_vector(KET_PLUS)
STATE_MINUS = PolarizationState.from_vector(KET_MINUS)
STATE_L = PolarizationState.from_vector(KET_L)
STATE_R = PolarizationState.from_vector(KET_R)


@dataclass(frozen=True)
class PognacPhases:
    """Phases applied to the early and late passage through the Sagnac loop."""

    phi_e: float
    phi_l: float

    def __post_init__(self):
        if not (math.isfinite(self.phi_e) and math.isfinite(self.phi_l)):
            raise ValueError("phases must be finite")

    def canonical(self) -> "PognacPhases":
        return PognacPhases(self.phi_e % (2 * math.pi), self.phi_l % (2 * math.pi))


def prepare_pognac(phases: PognacPhases) -> PolarizationState:
    """Output of the Sagnac modulator: (|H> + exp(i(phi_e - phi_l))|V>)/sqrt(2)."""
    rel = phases.phi_e - phases.phi_l
    return PolarizationState(_S, _S * complex(math.cos(rel), math.sin(rel)))


def measure_probability(state: PolarizationState, basis: int, outcome: int) -> float:
    return float(abs(np.vdot(BASIS_KETS[basis][outcome], state.vector)) ** 2)


def check_unitary(u, tol: float = UNITARITY_TOL) -> np.ndarray:
    u = np.asarray(u, dtype=complex)
    if u.shape != (2, 2):
        raise ValueError(f"expected a 2x2 matrix, got shape {u.shape}")
    resid = np.max(np.abs(u.conj().T @ u - IDENTITY))
    if resid > tol:
        raise ValueError(f"matrix is not unitary (residual {resid:.3e})")
    return u


def apply_unitary(u, state: PolarizationState) -> PolarizationState:
    u = check_unitary(u)
    v = u @ state.vector
    # renormalize away rounding so the dataclass invariant holds exactly
    return PolarizationState.from_vector(v)


def rotation(axis, angle: float) -> np.ndarray:
    """SU(2) matrix rotating the Poincare sphere by ``angle`` about ``axis``."""
    n = np.asarray(axis, dtype=float)
    n = n / np.linalg.norm(n)
    gen = n[0] * SIGMA_1 + n[1] * SIGMA_2 + n[2] * SIGMA_3
    return math.cos(angle / 2) * IDENTITY - 1j * math.sin(angle / 2) * gen


def rotation_s1(angle: float) -> np.ndarray:
    return rotation((1.0, 0.0, 0.0), angle)


def rotation_s2(angle: float) -> np.ndarray:
    return rotation((0.0, 1.0, 0.0), angle)


def rotation_angle(u) -> float:
    """Poincare-sphere rotation angle in [0, pi] of a 2x2 unitary."""
    u = np.asarray(u, dtype=complex)
    det = np.linalg.det(u)
    su = u / np.sqrt(det)
    c = min(1.0, abs(np.trace(su).real) / 2.0)
    return 2.0 * math.acos(c)


def reorthonormalize(u) -> np.ndarray:
    """Nearest unitary (polar factor) of ``u``."""
    w, _, vh = np.linalg.svd(np.asarray(u, dtype=complex))
    return w @ vh


def random_unitary(rng: np.random.Generator) -> np.ndarray:
    """Haar-random element of SU(2)."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    a = complex(q[0], q[1])
    b = complex(q[2], q[3])
    return np.array([[a, -b.conjugate()], [b, a.conjugate()]])


def leakage_probability(extinction_ratio_db: float) -> float:
    """Probability of projecting onto the orthogonal state for a given ER."""
    if not extinction_ratio_db >= 0:
        raise ValueError("extinction ratio must be non-negative")
    if math.isinf(extinction_ratio_db):
        return 0.0
    return 1.0 / (1.0 + 10.0 ** (extinction_ratio_db / 10.0))


def orthogonal(vec: np.ndarray) -> np.ndarray:
    """The state orthogonal to ``vec`` (fixed phase convention)."""
    return np.array([-np.conj(vec[1]), np.conj(vec[0])])


def imperfect_prepare(ideal: PolarizationState, extinction_ratio_db: float, rng: np.random.Generator) -> PolarizationState:
    """Add coherent leakage into the orthogonal state with a random phase.

    The leaked weight is ``1/(1 + 10**(ER/10))``; ``ER = inf`` returns
    ``ideal`` unchanged.
    """
    eps = leakage_probability(extinction_ratio_db)
    if eps == 0.0:
        return ideal
    phase = rng.uniform(0.0, 2 * math.pi)
    v = ideal.vector
    out = math.sqrt(1 - eps) * v + math.sqrt(eps) * complex(math.cos(phase), math.sin(phase)) * orthogonal(v)
    return PolarizationState.from_vector(out)


def qber_from_extinction_ratio(er_linear: float) -> float:
    """Intrinsic QBER from an error:signal extinction ratio, ER/(1+ER)."""
    return er_linear / (1.0 + er_linear)


def qber_from_visibility(visibility: float) -> float:
    return (1.0 - visibility) / 2.0


def extinction_db_to_linear(er_db: float) -> float:
    """Error:signal power ratio for an extinction ratio quoted in dB."""
    return 10.0 ** (-er_db / 10.0)
