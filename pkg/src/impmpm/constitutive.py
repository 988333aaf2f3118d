"""Hyperelastic stress and deformation-gradient updates.

Only compressible Neo-Hookean is implemented:

    psi(F) = mu/2 (tr(F F^T) - 3) - mu ln J + lambda/2 (ln J)^2
    tau    = mu (F F^T - I) + lambda ln(J) I

Other models plug in through :class:`ConstitutiveModel`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .core import MaterialParams
from .exceptions import InvertedElementError, SingularMatrixError


class ConstitutiveModel(Protocol):
    def kirchhoff(self, F: np.ndarray) -> np.ndarray: ...

    @property
    def stiffness_scale(self) -> float:
        """Modulus used by the diagonal stiffness estimate (lambda + 2 mu)."""
        ...


def _det3(F: np.ndarray) -> np.ndarray:
    return (
        F[..., 0, 0] * (F[..., 1, 1] * F[..., 2, 2] - F[..., 1, 2] * F[..., 2, 1])
        - F[..., 0, 1] * (F[..., 1, 0] * F[..., 2, 2] - F[..., 1, 2] * F[..., 2, 0])
        + F[..., 0, 2] * (F[..., 1, 0] * F[..., 2, 1] - F[..., 1, 1] * F[..., 2, 0])
    )


def _cofactor3(F: np.ndarray) -> np.ndarray:
    """Cofactor matrix, so that ``F^{-T} = cof(F) / det(F)``."""
    a, b, c = F[..., 0, 0], F[..., 0, 1], F[..., 0, 2]
    d, e, f = F[..., 1, 0], F[..., 1, 1], F[..., 1, 2]
    g, h, i = F[..., 2, 0], F[..., 2, 1], F[..., 2, 2]
    rows = [
        [e * i - f * h, f * g - d * i, d * h - e * g],
        [c * h - b * i, a * i - c * g, b * g - a * h],
        [b * f - c * e, c * d - a * f, a * e - b * d],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def kirchhoff_neo_hookean(F: np.ndarray, lam: float, mu: float) -> np.ndarray:
    """Kirchhoff stress for one ``(3, 3)`` or a batch ``(..., 3, 3)`` of F."""
    F = np.asarray(F, dtype=float)
    J = _det3(F)
    if np.any(~(J > 0)):
        raise InvertedElementError(f"det(F) <= 0 (min {np.min(J):.3e})")
    FFt = F @ np.swapaxes(F, -1, -2)
    eye = np.eye(3)
    return mu * (FFt - eye) + (lam * np.log(J))[..., None, None] * eye


def first_piola(tau: np.ndarray, F: np.ndarray) -> np.ndarray:
    """``P = tau F^{-T}``."""
    F = np.asarray(F, dtype=float)
    J = _det3(F)
    if np.any(J == 0) or not np.all(np.isfinite(J)):
        raise SingularMatrixError("deformation gradient is singular")
    return np.asarray(tau) @ (_cofactor3(F) / J[..., None, None])


def neo_hookean_energy(F: np.ndarray, lam: float, mu: float) -> np.ndarray:
    F = np.asarray(F, dtype=float)
    J = _det3(F)
    if np.any(~(J > 0)):
        raise InvertedElementError("det(F) <= 0")
    lnJ = np.log(J)
    trC = np.einsum("...ij,...ij->...", F, F)
    return 0.5 * mu * (trC - 3.0) - mu * lnJ + 0.5 * lam * lnJ**2


def update_deformation_gradient(F_n: np.ndarray, grad_v: np.ndarray, dt: float,
                                check: bool = False) -> np.ndarray:
    """``F_trial = (I + dt grad_v) F_n``.

    Inverted results are returned as-is unless ``check`` is set; callers
    decide whether to reject or clamp them.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    F = (np.eye(3) + dt * np.asarray(grad_v)) @ np.asarray(F_n)
    if check and np.any(_det3(F) <= 0):
        raise InvertedElementError("trial deformation gradient inverted")
    return F


def determinant(F: np.ndarray) -> np.ndarray:
    return _det3(np.asarray(F, dtype=float))


@dataclass(frozen=True)
class NeoHookean:
    lam: float
    mu: float

    @classmethod
    def from_material(cls, material: MaterialParams) -> "NeoHookean":
        lam, mu = material.lame
        return cls(lam, mu)

    def kirchhoff(self, F: np.ndarray) -> np.ndarray:
        return kirchhoff_neo_hookean(F, self.lam, self.mu)

    def first_piola(self, F: np.ndarray) -> np.ndarray:
        return first_piola(self.kirchhoff(F), F)

    def energy(self, F: np.ndarray) -> np.ndarray:
        return neo_hookean_energy(F, self.lam, self.mu)

    @property
    def stiffness_scale(self) -> float:
        return self.lam + 2.0 * self.mu


MODELS = {"neo_hookean": NeoHookean.from_material}


def model_for(material: MaterialParams) -> ConstitutiveModel:
    return MODELS[material.model](material)
