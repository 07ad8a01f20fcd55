"""Instability growth rate via the modified variational fixed point.

An unstable normal mode (solution growing like e^{Lambda t}) of the
linearized perturbation dynamics solves

    Lambda^2 rho_bar w + Lambda grad beta - Lambda mu lap w
        = (kappa div(|rho_bar'|^2 grad w2) + g rho_bar' w2) e2,
    div w = 0,   (w2, d2 w1) = 0 on the walls.

Fix the would-be decay weight s >= 0 and maximize the penalized quotient

    alpha(s) = sup_w [ E(w) - s mu ||grad w||^2 ] / ||sqrt(rho_bar) w||^2 ,
    E(w) = g int rho_bar' w2^2 - kappa || rho_bar' grad w2 ||^2 ;

alpha is strictly decreasing in s (the penalty form is positive definite),
so alpha(s) = s^2 has at most one positive root, and that root is the
growth rate Lambda.  If alpha(0) <= 0 there is no growing mode.

Everything reduces per horizontal Fourier mode.  For w2 = phi(y2) sin(xi x1)
incompressibility gives w1 = phi'(y2) cos(xi x1)/xi, and after dropping the
common horizontal factor the three quadratic forms become (phi in H^1_0,
with phi'' = 0 at the walls entering naturally)

    M(phi)    = int rho_bar (phi^2 + phi'^2 / xi^2)            kinetic
    V(phi)    = int (2 phi'^2 + phi''^2 / xi^2 + xi^2 phi^2)   viscous
    Epot(phi) = g int rho_bar' phi^2
                - kappa int |rho_bar'|^2 (phi'^2 + xi^2 phi^2)

and alpha(s) is the largest eigenvalue of the real symmetric-definite
pencil (Epot - s mu V) phi = alpha M phi.  The per-mode problem is posed in
real variables throughout; the quadrature-exact horizontal factor i/xi of
w1 is carried symbolically into the cos mode of the reconstruction.

The unstable pressure amplitude follows from the horizontal momentum
balance: with W = phi'/xi,

    beta_hat = [ mu (phi''' - xi^2 phi') - Lambda rho_bar phi' ] / xi^2 .
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from .errors import EigensolverError
from .operators import lumped_mass, second_difference_form, stiffness, trapezoid_weights
from .profiles import DensityProfile, SlabConfig, check_admissibility
from .threshold import _normalize_eigvec

__all__ = [
    "ModeForms",
    "GrowthResult",
    "assemble_mode_forms",
    "alpha",
    "mode_growth_rate",
    "compute_growth",
    "write_modes_csv",
    "write_eigenfunction",
]


@dataclass(frozen=True)
class ModeForms:
    """Per-mode kinetic (M), viscous (V) and potential (Epot) forms.

    All three matrices are real symmetric on interior nodes; M and V are
    positive definite.  The profile columns and coefficients ride along so
    quotients can be re-evaluated from difference sums, which is far less
    sensitive to rounding than the assembled H^2-form matrices.
    """

    xi: float
    M: np.ndarray
    V: np.ndarray
    Epot: np.ndarray
    mu: float
    nodes: np.ndarray
    rho: np.ndarray
    d1: np.ndarray
    g: float
    kappa: float


def assemble_mode_forms(p: DensityProfile, config: SlabConfig, k: int,
                        N: int | None = None) -> ModeForms:
    if k < 1:
        raise ValueError("mode index k must be >= 1")
    pN = p if N is None else p.resample(N)
    xi = config.xi(k)
    dy = pN.dy
    n = pN.N - 1
    ones = np.ones_like(pN.rho)
    M = lumped_mass(pN.rho, dy) + stiffness(pN.rho, dy) / xi**2
    V = (2.0 * stiffness(ones, dy) + second_difference_form(n, dy) / xi**2
         + xi**2 * lumped_mass(ones, dy))
    c = pN.d1**2
    Epot = config.g * lumped_mass(pN.d1, dy) - config.kappa * (
        stiffness(c, dy) + xi**2 * lumped_mass(c, dy))
    return ModeForms(xi=xi, M=M, V=V, Epot=Epot, mu=config.mu, nodes=pN.nodes,
                     rho=pN.rho, d1=pN.d1, g=config.g, kappa=config.kappa)


def _penalized_quotient(phi: np.ndarray, s: float, forms: ModeForms) -> float:
    """(Epot(phi) - s*mu*V(phi)) / M(phi) evaluated from difference sums.

    For a smooth phi the sums carry no large cancellations, so this is
    accurate to a few ulps of the quotient, well below the rounding of
    the assembled-matrix eigenvalue whose backward error scales with the
    huge top of the discrete biharmonic spectrum.
    """
    dy = float(forms.nodes[1] - forms.nodes[0])
    xi = forms.xi
    dphi = np.diff(phi) / dy                         # interval values
    d2phi = (phi[2:] - 2.0 * phi[1:-1] + phi[:-2]) / dy**2

    def mass(c):
        return dy * float(np.sum(c[1:-1] * phi[1:-1] ** 2))

    def stiff(c):
        cm = 0.5 * (c[:-1] + c[1:])
        return dy * float(np.sum(cm * dphi**2))

    ones = np.ones_like(forms.rho)
    m_val = mass(forms.rho) + stiff(forms.rho) / xi**2
    v_val = 2.0 * stiff(ones) + dy * float(np.sum(d2phi**2)) / xi**2 + xi**2 * mass(ones)
    c2 = forms.d1**2
    e_val = forms.g * mass(forms.d1) - forms.kappa * (stiff(c2) + xi**2 * mass(c2))
    return (e_val - s * forms.mu * v_val) / m_val


def alpha(s: float, forms: ModeForms) -> tuple[float, np.ndarray]:
    """Largest eigenvalue of (Epot - s*mu*V) phi = alpha M phi.

    Returns (alpha_s, phi) with phi on the full node set, unit L2 norm.
    The eigensolve supplies the maximizer; the returned value is its
    quotient re-evaluated from difference sums (Rayleigh-quotient
    refinement: the vector error enters only quadratically, restoring the
    accuracy the assembled-pencil reduction loses).
    """
    if s < 0:
        raise ValueError("penalty weight s must be >= 0")
    A = forms.Epot - s * forms.mu * forms.V
    n = A.shape[0]
    try:
        _, vecs = scipy.linalg.eigh(A, forms.M, subset_by_index=[n - 1, n - 1])
    except scipy.linalg.LinAlgError as exc:
        raise EigensolverError(f"alpha({s}) eigensolve failed: {exc}") from exc
    phi = _normalize_eigvec(vecs[:, 0], forms.nodes)
    return _penalized_quotient(phi, s, forms), phi


def _fixed_point(forms: ModeForms, tol: float) -> tuple[float, np.ndarray | None, float]:
    """Solve alpha(s) = s^2; returns (Lambda_xi, phi, residual)."""
    a0, _ = alpha(0.0, forms)
    if a0 <= 0.0:
        return 0.0, None, 0.0
    s_hi = 1.0
    for _ in range(80):
        a_hi, _ = alpha(s_hi, forms)
        if a_hi < s_hi**2:
            break
        s_hi *= 2.0
    else:
        raise EigensolverError("growth-rate bracket did not close")
    s_lo = 0.0
    for _ in range(300):
        s = 0.5 * (s_lo + s_hi)
        a_s, phi = alpha(s, forms)
        resid = a_s - s**2
        if abs(resid) < tol * max(1.0, s**2):
            return s, phi, abs(resid)
        if resid > 0.0:
            s_lo = s
        else:
            s_hi = s
    raise EigensolverError(
        f"growth-rate bisection stalled at s={s:.12g}, residual {resid:.3g}")


def mode_growth_rate(forms: ModeForms, tol: float = 1e-10) -> tuple[float, np.ndarray | None]:
    """Growth rate of one horizontal mode; Lambda_xi = 0 when alpha(0) <= 0."""
    lam, phi, _ = _fixed_point(forms, tol)
    return lam, phi


@dataclass(frozen=True)
class GrowthResult:
    """Growth-rate sweep output.

    Lambda : max over modes of the per-mode growth rate (0 when stable)
    k_star : maximizing integer mode (None when Lambda = 0)
    per_mode : (k, xi, alpha0, Lambda_xi) for each swept mode
    w2, w1, beta : vertical amplitudes of the unstable mode on the full
        grid, normalized so the 2-D velocity has unit L2 norm over the
        cell (None when Lambda = 0); w2 rides the sin(xi x1) mode, w1 and
        beta the cos / sin modes respectively
    residual : |alpha(Lambda) - Lambda^2| at the accepted fixed point
    """

    Lambda: float
    k_star: int | None
    per_mode: list[tuple[int, float, float, float]]
    w2: np.ndarray | None
    w1: np.ndarray | None
    beta: np.ndarray | None
    residual: float
    nodes: np.ndarray
    grid_N: int


def _d1(f: np.ndarray, dy: float) -> np.ndarray:
    """Centered first derivative, 2nd-order one-sided at the ends."""
    out = np.empty_like(f)
    out[1:-1] = (f[2:] - f[:-2]) / (2.0 * dy)
    out[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * dy)
    out[-1] = (3.0 * f[-1] - 4.0 * f[-2] + f[-3]) / (2.0 * dy)
    return out


def compute_growth(p: DensityProfile, config: SlabConfig, N: int = 256,
                   tol: float = 1e-10, k_max: int = 64,
                   exhaustive: bool = False) -> GrowthResult:
    """Sweep horizontal modes and return the dominant growth rate.

    The sweep stops after three consecutive modes fail to improve the
    running maximum (viscosity and capillarity damp large wavenumbers);
    ``exhaustive=True`` forces the full sweep to k_max for verification.
    """
    pN = p.resample(N)
    rep = check_admissibility(pN)
    if not rep.rt_condition:
        raise ValueError("growth-rate sweep expects an RT profile (rho' > 0 somewhere)")
    per_mode: list[tuple[int, float, float, float]] = []
    best: tuple | None = None
    running_max = 0.0
    decline = 0
    prev_a0 = np.inf
    for k in range(1, k_max + 1):
        forms = assemble_mode_forms(pN, config, k)
        a0, _ = alpha(0.0, forms)
        lam, phi, resid = _fixed_point(forms, tol) if a0 > 0 else (0.0, None, 0.0)
        per_mode.append((k, forms.xi, a0, lam))
        if lam > running_max:
            running_max = lam
            best = (lam, k, phi, forms, resid)
            decline = 0
        elif running_max > 0.0 and lam < running_max:
            decline += 1
        elif running_max == 0.0 and a0 <= 0.0 and a0 <= prev_a0 + 1e-12 * max(1.0, abs(prev_a0)):
            decline += 1
        else:
            decline = 0
        prev_a0 = a0
        if not exhaustive and decline >= 3:
            break
    if best is None:
        return GrowthResult(Lambda=0.0, k_star=None, per_mode=per_mode,
                            w2=None, w1=None, beta=None, residual=0.0,
                            nodes=pN.nodes, grid_N=N)
    lam, k_star, phi, forms, resid = best
    xi = forms.xi
    dy = pN.dy
    dphi = _d1(phi, dy)
    w1 = dphi / xi
    wq = trapezoid_weights(pN.nodes.size, dy)
    cell = np.pi * config.L * float(np.sum(wq * (phi**2 + w1**2)))
    scale = 1.0 / np.sqrt(cell)
    phi = phi * scale
    w1 = w1 * scale
    dphi = dphi * scale
    d3phi = _d1(_d1(dphi, dy), dy)
    beta = (config.mu * (d3phi - xi**2 * dphi) - lam * pN.rho * dphi) / xi**2
    return GrowthResult(Lambda=lam, k_star=k_star, per_mode=per_mode,
                        w2=phi, w1=w1, beta=beta, residual=resid,
                        nodes=pN.nodes, grid_N=N)


def write_modes_csv(result: GrowthResult, path: str | Path) -> None:
    with open(path, "w") as fh:
        fh.write("k,xi,alpha0,Lambda_xi\n")
        for k, xi, a0, lam in result.per_mode:
            fh.write(f"{k},{xi:.17g},{a0:.17g},{lam:.17g}\n")


def write_eigenfunction(nodes: np.ndarray, values: np.ndarray, path: str | Path) -> None:
    """Two-column (y2, value) text export."""
    with open(path, "w") as fh:
        for y, v in zip(nodes, values):
            fh.write(f"{y:.17g} {v:.17g}\n")
