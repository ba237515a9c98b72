"""Plane-strain elasticity and traction-separation laws with damage history.

Sign convention: ``cohesive_traction`` returns ``t_coh = -T`` where ``T``
is the physical cohesive traction (tension positive) produced by the jump
``[[u]] = u+ - u-``. A linear law with stiffness ``k`` therefore gives
``t_coh = -k [[u]]``. Tangents are exact derivatives of ``t_coh`` on the
branch selected by the trial state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class NumericalError(ArithmeticError):
    """Non-finite input reached a constitutive routine."""


# ------------------------------------------------------------------ bulk


@dataclass(frozen=True)
class ElasticMaterial:
    """Isotropic linear elastic solid under plane strain."""

    E: float
    nu: float = 0.0

    def __post_init__(self):
        if not self.E > 0.0:
            raise ValueError(f"E must be positive, got {self.E}")
        if not -1.0 < self.nu < 0.5:
            raise ValueError(f"nu must lie in (-1, 0.5), got {self.nu}")

    @property
    def lame(self):
        lam = self.E * self.nu / ((1 + self.nu) * (1 - 2 * self.nu))
        mu = self.E / (2 * (1 + self.nu))
        return lam, mu

    @property
    def D(self) -> np.ndarray:
        """Voigt stiffness for ``[e_xx, e_yy, 2 e_xy]`` -> ``[s_xx, s_yy, s_xy]``."""
        lam, mu = self.lame
        return np.array([[lam + 2 * mu, lam, 0.0], [lam, lam + 2 * mu, 0.0], [0.0, 0.0, mu]])


def bulk_stress(mat: ElasticMaterial, strain):
    """Plane-strain Hooke's law.

    Returns the in-plane stress tensor(s) with the same leading shape as
    ``strain`` (..., 2, 2) and the constant 2x2x2x2 tangent.
    """
    eps = np.asarray(strain, dtype=float)
    lam, mu = mat.lame
    tr = eps[..., 0, 0] + eps[..., 1, 1]
    sig = 2 * mu * eps + lam * tr[..., None, None] * np.eye(2)
    I = np.eye(2)
    C = lam * np.einsum("ij,kl->ijkl", I, I) + mu * (
        np.einsum("ik,jl->ijkl", I, I) + np.einsum("il,jk->ijkl", I, I)
    )
    return sig, C


def out_of_plane_stress(mat: ElasticMaterial, sig_xx, sig_yy):
    """sigma_zz for plane strain."""
    return mat.nu * (np.asarray(sig_xx) + np.asarray(sig_yy))


def von_mises(sxx, syy, sxy, szz=0.0):
    sxx, syy, sxy, szz = (np.asarray(a, dtype=float) for a in (sxx, syy, sxy, szz))
    return np.sqrt(
        0.5 * ((sxx - syy) ** 2 + (syy - szz) ** 2 + (szz - sxx) ** 2) + 3.0 * sxy**2
    )


# ------------------------------------------------------------------ TSLs


@dataclass(frozen=True)
class Linear:
    """``T = k [[u]]``; used by the manufactured solutions with ``k = 1``."""

    k: float = 1.0

    def __post_init__(self):
        if not self.k > 0.0:
            raise ValueError("Linear: k must be positive")


@dataclass(frozen=True)
class Exponential:
    """Exponential softening with damage ``d = 1 - exp(-kappa / delta0)``.

    Initial stiffness ``G_c / delta0**2`` makes the mode-I work of
    separation equal ``G_c``. ``beta`` weights the tangential opening in
    the effective separation.
    """

    G_c: float
    delta0: float
    beta: float = 0.0

    def __post_init__(self):
        if not (self.G_c > 0.0 and self.delta0 > 0.0):
            raise ValueError("Exponential: G_c and delta0 must be positive")
        if self.beta < 0.0:
            raise ValueError("Exponential: beta must be non-negative")

    @property
    def k0(self):
        return self.G_c / self.delta0**2


@dataclass(frozen=True)
class BilinearMixedMode:
    """Bilinear mixed-mode law with B-K propagation.

    Penalty stiffness ``K``, strengths ``N`` (mode I) and ``S`` (mode II),
    toughnesses ``G_Ic``/``G_IIc`` mixed with exponent ``eta``, and a
    friction coefficient ``mu`` acting on sliding under compression once
    damage has developed.
    """

    K: float
    G_Ic: float
    G_IIc: float
    N: float
    S: float
    eta: float = 1.0
    mu: float = 0.0

    def __post_init__(self):
        for name in ("K", "G_Ic", "G_IIc", "N", "S"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"BilinearMixedMode: {name} must be positive")
        if self.eta < 1.0:
            raise ValueError("BilinearMixedMode: eta must be >= 1")
        if self.mu < 0.0:
            raise ValueError("BilinearMixedMode: mu must be non-negative")
        # final opening must exceed onset in both pure modes
        if self.G_Ic <= 0.5 * self.N**2 / self.K or self.G_IIc <= 0.5 * self.S**2 / self.K:
            raise ValueError("BilinearMixedMode: toughness too small for the given strength")


TSL_KINDS = {"linear": Linear, "exponential": Exponential, "bilinear": BilinearMixedMode}


@dataclass
class CohesiveState:
    """Damage and maximum effective separation per interface quadrature point."""

    damage: np.ndarray
    kappa: np.ndarray

    @classmethod
    def virgin(cls, n: int) -> "CohesiveState":
        return cls(np.zeros(n), np.zeros(n))

    def copy(self) -> "CohesiveState":
        return CohesiveState(self.damage.copy(), self.kappa.copy())

    def __len__(self):
        return len(self.damage)


def commit_state(trial: CohesiveState, committed: CohesiveState | None = None) -> CohesiveState:
    """Accept a converged trial state; damage never decreases."""
    new = trial.copy()
    if committed is not None:
        new.damage = np.maximum(new.damage, committed.damage)
        new.kappa = np.maximum(new.kappa, committed.kappa)
    return new


def rotate_jump_to_local(jump, n):
    """Normal opening ``jump . n`` and tangential magnitude ``|jump - (jump . n) n|``."""
    jump = np.asarray(jump, dtype=float)
    n = np.asarray(n, dtype=float)
    dn = np.sum(jump * n, axis=-1)
    dt = np.linalg.norm(jump - dn[..., None] * n, axis=-1)
    return dn, dt


def _prep(jump, n, state):
    jump = np.atleast_2d(np.asarray(jump, dtype=float))
    n = np.broadcast_to(np.atleast_2d(np.asarray(n, dtype=float)), jump.shape)
    if not (np.all(np.isfinite(jump)) and np.all(np.isfinite(n))):
        raise NumericalError("non-finite jump or normal")
    if state is None:
        state = CohesiveState.virgin(len(jump))
    t = np.stack([-n[:, 1], n[:, 0]], axis=1)
    dn = np.sum(jump * n, axis=1)
    ds = np.sum(jump * t, axis=1)
    return jump, n, t, dn, ds, state


def _outer(a, b):
    return a[:, :, None] * b[:, None, :]


def cohesive_traction(tsl, jump, n, state: CohesiveState | None = None):
    """Cohesive traction ``t_coh``, its jump derivative and the trial state.

    Parameters
    ----------
    tsl : Linear | Exponential | BilinearMixedMode
    jump : array_like, shape (Q, 2) or (2,)
    n : array_like
        Unit normal(s) used for the mode split.
    state : CohesiveState, optional
        Committed state; virgin when omitted.

    Returns
    -------
    t_coh : ndarray (Q, 2)
    dt_djump : ndarray (Q, 2, 2)
    trial : CohesiveState
    """
    jump, n, t, dn, ds, state = _prep(jump, n, state)
    Q = len(jump)
    if isinstance(tsl, Linear):
        T = tsl.k * jump
        dT = np.broadcast_to(tsl.k * np.eye(2), (Q, 2, 2)).copy()
        return -T, -dT, state.copy()
    if isinstance(tsl, Exponential):
        T, dT, trial = _exponential(tsl, n, t, dn, ds, state)
    elif isinstance(tsl, BilinearMixedMode):
        T, dT, trial = _bilinear(tsl, n, t, dn, ds, state)
    else:
        raise TypeError(f"unknown traction-separation law {tsl!r}")
    return -T, -dT, trial


def _exponential(tsl, n, t, dn, ds, state):
    k0, b2 = tsl.k0, tsl.beta**2
    a = np.maximum(dn, 0.0)
    eff = np.sqrt(a**2 + b2 * ds**2)
    d_hist = np.maximum(state.damage, 1.0 - np.exp(-state.kappa / tsl.delta0))
    d_eff = 1.0 - np.exp(-eff / tsl.delta0)
    loading = d_eff > d_hist
    kappa = np.maximum(eff, state.kappa)
    d = np.where(loading, d_eff, d_hist)
    # v = d(eff^2 / 2) / d jump on the damaged branch
    v = a[:, None] * n + (b2 * ds)[:, None] * t
    comp = np.minimum(dn, 0.0)
    T = ((1 - d) * k0)[:, None] * v + (k0 * comp)[:, None] * n
    Hn = (dn > 0).astype(float)
    dv = Hn[:, None, None] * _outer(n, n) + b2 * _outer(t, t)
    dT = ((1 - d) * k0)[:, None, None] * dv + (k0 * (1 - Hn))[:, None, None] * _outer(n, n)
    # damage growth: dd/deff * deff/djump, deff/djump = v / eff
    grow = loading & (eff > 0)
    if np.any(grow):
        dd = np.exp(-eff / tsl.delta0) / tsl.delta0
        safe = np.where(grow, eff, 1.0)
        coef = np.where(grow, k0 * dd / safe, 0.0)
        dT -= coef[:, None, None] * _outer(v, v)
    return T, dT, CohesiveState(d, kappa)


def _bilinear_damage(tsl, a, ds):
    """Current damage demand and its partials w.r.t. (a, ds).

    Returns d (unclipped then clipped), dd/da, dd/dds and delta_m.
    """
    K = tsl.K
    d3, d1 = tsl.N / K, tsl.S / K
    dm2 = a**2 + ds**2
    dm = np.sqrt(dm2)
    # below this the opening is far inside the elastic range and B is moot
    pos = dm > 1e-100
    safe_dm = np.where(pos, dm, 1.0)
    safe_dm2 = safe_dm**2
    B = np.where(pos, ds**2 / safe_dm2, 0.0)
    root = d1**2 * (1 - B) + d3**2 * B
    d0 = d3 * d1 / np.sqrt(root)
    dd0_dB = -0.5 * d3 * d1 * root**-1.5 * (d3**2 - d1**2)
    dG = tsl.G_IIc - tsl.G_Ic
    G = tsl.G_Ic + dG * B**tsl.eta
    Gp = tsl.eta * dG * np.where(B > 0, B ** (tsl.eta - 1), 1.0 if tsl.eta == 1 else 0.0)
    df = 2.0 * G / (K * d0)
    ddf_dB = 2.0 / K * (Gp / d0 - G / d0**2 * dd0_dB)
    den = safe_dm * (df - d0)
    raw = df * (safe_dm - d0) / den
    raw = np.where(pos, raw, 0.0)
    active = pos & (raw > 0) & (raw < 1)
    dd_dm = df * d0 / (safe_dm2 * (df - d0))
    dd_dd0 = safe_dm * df * (safe_dm - df) / den**2
    dd_ddf = -safe_dm * d0 * (safe_dm - d0) / den**2
    dd_dB = dd_dd0 * dd0_dB + dd_ddf * ddf_dB
    dB_da = -2 * B * a / safe_dm2
    dB_dds = 2 * (1 - B) * ds / safe_dm2
    dd_da = np.where(active, dd_dm * a / safe_dm + dd_dB * dB_da, 0.0)
    dd_dds = np.where(active, dd_dm * ds / safe_dm + dd_dB * dB_dds, 0.0)
    return np.clip(raw, 0.0, 1.0), dd_da, dd_dds, dm


def _bilinear(tsl, n, t, dn, ds, state):
    K = tsl.K
    a = np.maximum(dn, 0.0)
    Hn = (dn > 0).astype(float)
    dcur, dd_da, dd_dds, dm = _bilinear_damage(tsl, a, ds)
    loading = dcur > state.damage
    d = np.where(loading, dcur, state.damage)
    kappa = np.maximum(state.kappa, dm)
    comp = np.minimum(dn, 0.0)
    v = a[:, None] * n + ds[:, None] * t
    T = ((1 - d) * K)[:, None] * v + (K * comp)[:, None] * n
    dT = ((1 - d) * K)[:, None, None] * (Hn[:, None, None] * _outer(n, n) + _outer(t, t))
    dT += (K * (1 - Hn))[:, None, None] * _outer(n, n)
    # d(d)/d(jump) on the loading branch
    grad_d = (dd_da * Hn)[:, None] * n + dd_dds[:, None] * t
    grad_d = np.where(loading[:, None], grad_d, 0.0)
    dT -= K * _outer(v, grad_d)
    if tsl.mu > 0.0:
        eps = 1e-3 * tsl.S / K
        p = np.maximum(-dn, 0.0)
        r = np.sqrt(ds**2 + eps**2)
        s = ds / r
        f = d * tsl.mu * K * p
        T += (f * s)[:, None] * t
        ds_ds = eps**2 / r**3
        # f depends on damage (through jump) and on the compressive opening
        df_dj = (tsl.mu * K * p)[:, None] * grad_d - (d * tsl.mu * K * (dn < 0))[:, None] * n
        dT += s[:, None, None] * _outer(t, df_dj) + (f * ds_ds)[:, None, None] * _outer(t, t)
    return T, dT, CohesiveState(d, kappa)


def stored_energy(tsl, jump, n, state: CohesiveState):
    """Recoverable cohesive energy density at ``jump`` for the given state."""
    jump, n, t, dn, ds, state = _prep(jump, n, state)
    comp = np.minimum(dn, 0.0)
    a = np.maximum(dn, 0.0)
    if isinstance(tsl, Linear):
        return 0.5 * tsl.k * np.sum(jump**2, axis=1)
    if isinstance(tsl, Exponential):
        k, tang = tsl.k0, tsl.beta**2 * ds**2
    else:
        k, tang = tsl.K, ds**2
    return 0.5 * (1 - state.damage) * k * (a**2 + tang) + 0.5 * k * comp**2


def physical_traction(tsl, jump, n, state=None):
    """Convenience wrapper returning ``T = -t_coh`` only."""
    t_coh, _, _ = cohesive_traction(tsl, jump, n, state)
    return -t_coh
