from math import comb
from typing import Optional, Tuple

import numpy as np
from scipy.special import gammaln, logsumexp, roots_legendre

from eigenpool.config import settings
from eigenpool.core.exceptions import DegenerateGapError, InvalidInputError
from eigenpool.core.logging import get_logger
from eigenpool.hypergeo.schemas import ConcentrationParams

logger = get_logger("hypergeo")

QUADRATURE_TOL = 1e-10


def _pairwise_gaps(x: np.ndarray) -> np.ndarray:
    """x_i - x_j over all i < j."""
    i, j = np.triu_indices(x.shape[0], k=1)
    return x[i] - x[j]


def _strict_gaps(x: np.ndarray, name: str) -> np.ndarray:
    gaps = _pairwise_gaps(np.asarray(x, dtype=float))
    if np.any(gaps <= 0):
        raise DegenerateGapError(f"{name} must be strictly decreasing")
    return gaps


def log_c_tilde(a: np.ndarray, b: np.ndarray) -> float:
    """log of 2^{-p} π^{-C(p,2)} e^{-aᵀb} Π_{i<j} (a_i - a_j)^{1/2} (b_i - b_j)^{1/2}"""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise InvalidInputError("a and b must have the same length")
    p = a.shape[0]
    a_gaps = _strict_gaps(a, "a")
    b_gaps = _strict_gaps(b, "b")
    return float(
        -p * np.log(2.0)
        - comb(p, 2) * np.log(np.pi)
        - a @ b
        + 0.5 * np.sum(np.log(a_gaps))
        + 0.5 * np.sum(np.log(b_gaps))
    )


def log_haar_volume_constant(p: int) -> float:
    """log[Vol(O(p)) · π^{C(p,2)/2}].

    c̃ is written against the unnormalized volume element of O(p); adding this
    constant to log c̃ gives the approximation of 1/₀F₀ under the Haar
    probability measure, the convention of the quadrature oracle.
    """
    if p < 1:
        raise InvalidInputError("dimension must be at least 1")
    k = np.arange(1, p)
    # Vol(O(p)) = 2 Π_{k=1}^{p-1} |S^k|, with |S^k| = 2 π^{(k+1)/2} / Γ((k+1)/2)
    log_spheres = np.log(2.0) + 0.5 * (k + 1) * np.log(np.pi) - gammaln(0.5 * (k + 1))
    return float(np.log(2.0) + np.sum(log_spheres) + 0.5 * comb(p, 2) * np.log(np.pi))


def _correction_terms(params: ConcentrationParams) -> Tuple[np.ndarray, float]:
    alpha_gaps = _strict_gaps(params.alpha, "alpha")
    beta_gaps = _strict_gaps(params.beta, "beta")
    return 1.0 / (4.0 * params.w * alpha_gaps * beta_gaps), min(alpha_gaps.min(), beta_gaps.min())


def correction_factor(
    params: ConcentrationParams,
    order: int = 1,
    ceiling: Optional[float] = None,
    gap_floor: Optional[float] = None,
) -> float:
    """Series h(α, β, w) relating c to c̃, truncated after `order` terms.

    With t_ij = 1 / (4w (α_i - α_j)(β_i - β_j)) the first-order factor is
    1 + Σ t_ij. Order 2 multiplies out Π (1 + t_ij + 9/2 t_ij²) to second
    order, which is exact for p = 2. When some gap falls below `gap_floor`
    the factor is capped at `ceiling`.
    """
    if order not in (1, 2):
        raise InvalidInputError(f"correction order must be 1 or 2, got {order}")
    ceiling = settings.CORRECTION_CEILING if ceiling is None else ceiling
    gap_floor = settings.CORRECTION_GAP_FLOOR if gap_floor is None else gap_floor
    if params.dim < 2:
        return 1.0
    t, min_gap = _correction_terms(params)
    first = float(np.sum(t))
    h = 1.0 + first
    if order == 2:
        second = float(np.sum(t * t))
        h += 4.5 * second + 0.5 * (first * first - second)
    if min_gap < gap_floor and h > ceiling:
        logger.debug(f"Correction factor {h:.3e} capped at {ceiling:.3e} (min gap {min_gap:.2e})")
        h = ceiling
    return h


def mh_correct_w(
    w_current: float,
    w_proposal: float,
    params: ConcentrationParams,
    k: int,
    rng: np.random.Generator,
    order: int = 1,
) -> float:
    """Accept `w_proposal` with probability min(1, [h(w̃) / h(w)]^K).

    The factor is applied as the model defines it. The quadrature normalizer
    gives 1/₀F₀ ≈ c̃·e^const / h, so the exact ratio would be [h(w) / h(w̃)]^K
    and this step moves w the other way. `--mh-correction off` skips it.
    """
    if w_current <= 0 or w_proposal <= 0:
        raise InvalidInputError("concentration values must be positive")
    if k == 0:
        return w_proposal
    h_new = correction_factor(params.model_copy(update={"w": w_proposal}), order)
    h_old = correction_factor(params.model_copy(update={"w": w_current}), order)
    log_r = k * (np.log(h_new) - np.log(h_old))
    if log_r >= 0 or np.log(rng.random()) < log_r:
        return w_proposal
    return w_current


# --- Quadrature oracle ---
def _log_mean_exp(values: np.ndarray) -> float:
    return float(logsumexp(values) - np.log(values.size))


def _log_f00_circle(a: np.ndarray, b: np.ndarray, max_points: int) -> float:
    # Over O(2), X∘X = [[c², s²], [s², c²]] for rotations and reflections alike
    ab = np.outer(a, b)
    diag_coef = ab[0, 0] + ab[1, 1]
    off_coef = ab[0, 1] + ab[1, 0]
    points = 64
    previous = None
    while points <= max_points:
        phi = 2.0 * np.pi * np.arange(points) / points
        c2 = np.cos(phi) ** 2
        estimate = _log_mean_exp(diag_coef * c2 + off_coef * (1.0 - c2))
        if previous is not None and abs(estimate - previous) < QUADRATURE_TOL:
            return estimate
        previous = estimate
        points *= 2
    logger.warning(f"Circle quadrature stopped at {max_points} points before converging")
    return previous


def _euler_squares(alpha: np.ndarray, t: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """Squared entries of Rz(α)·Ry(β)·Rz(γ) with cos β = t, broadcast over a grid."""
    ca, sa = np.cos(alpha), np.sin(alpha)
    cg, sg = np.cos(gamma), np.sin(gamma)
    cb, sb = t, np.sqrt(np.clip(1.0 - t * t, 0.0, None))
    x = np.stack(
        np.broadcast_arrays(
            ca * cb * cg - sa * sg, -ca * cb * sg - sa * cg, ca * sb,
            sa * cb * cg + ca * sg, -sa * cb * sg + ca * cg, sa * sb,
            -sb * cg, sb * sg, cb,
        ),
        axis=-1,
    )
    return x * x


def _log_f00_euler(a: np.ndarray, b: np.ndarray, max_points: int) -> float:
    # O(3) = SO(3) ∪ -SO(3) and X∘X ignores the overall sign
    coef = np.outer(a, b).ravel()
    points = 16
    previous = None
    while points <= max_points:
        nodes, weights = roots_legendre(points)
        angles = 2.0 * np.pi * np.arange(2 * points) / (2 * points)
        squares = _euler_squares(angles[:, None, None], nodes[None, :, None], angles[None, None, :])
        exponent = squares @ coef
        # dt/2 on [-1, 1], uniform in both periodic angles
        log_w = np.log(0.5 * weights)[None, :, None] - 2.0 * np.log(2 * points)
        estimate = float(logsumexp(exponent + log_w))
        if previous is not None and abs(estimate - previous) < QUADRATURE_TOL:
            return estimate
        previous = estimate
        points *= 2
    logger.warning(f"Euler-angle quadrature stopped at {max_points} nodes before converging")
    return previous


def log_f00_quadrature_small_p(a: np.ndarray, b: np.ndarray, max_points: Optional[int] = None) -> float:
    """log ₀F₀(A, B) = log ∫ etr(B Xᵀ A X) dX against the Haar probability on O(p), p in {2, 3}."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise InvalidInputError("a and b must be vectors of the same length")
    p = a.shape[0]
    if p == 2:
        return _log_f00_circle(a, b, max_points or 2**22)
    if p == 3:
        return _log_f00_euler(a, b, max_points or 64)
    raise InvalidInputError(f"quadrature oracle supports p = 2 or 3, got p = {p}")
