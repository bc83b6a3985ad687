"""Ideal and noise-modelled linear cluster states and stabilizer bounds.

A linear cluster state is the graph state of the line graph: qubits prepared
in ``|+>`` entangled by controlled-Z gates between neighbours.  It is
stabilized by ``X_1 Z_2``, ``Z_{s-1} X_s Z_{s+1}`` and ``Z_{N-1} X_N``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
import scipy.optimize

from ._validation import check_positive_int
from .channels import amplitude_damping, compose, pure_dephasing
from .errors import ConvergenceError, DataError, ValidationError
from .mpo import Mpo, apply_local_channels
from .pauli import PauliWord


def ideal_cluster_mps(n: int) -> list[np.ndarray]:
    """Bond-dimension-2 MPS of the ideal linear cluster state.

    Returns:
        site tensors of shape ``(D_left, 2, D_right)`` with boundary bonds 1.
    """
    check_positive_int(n, "n", minimum=2)
    s2 = 1.0 / np.sqrt(2.0)
    first = np.zeros((1, 2, 2))
    first[0, 0, 0] = s2
    first[0, 1, 1] = s2
    interior = np.zeros((2, 2, 2))
    interior[0, 0, 0] = s2
    interior[0, 1, 1] = s2
    interior[1, 0, 0] = s2
    interior[1, 1, 1] = -s2
    last = np.zeros((2, 2, 1))
    last[0, 0, 0] = s2
    last[0, 1, 0] = s2
    last[1, 0, 0] = s2
    last[1, 1, 0] = -s2
    if n == 2:
        return [first, last]
    return [first] + [interior] * (n - 2) + [last]


def ideal_cluster_mpo(n: int) -> Mpo:
    """Bond-dimension-4 MPO of the ideal linear cluster state (n >= 3)."""
    check_positive_int(n, "n", minimum=3)
    first = np.zeros((1, 4, 4))
    first[0, 0, 0] = 1.0  # I
    first[0, 1, 1] = 1.0  # X
    first[0, 2, 2] = -1.0  # -Y
    first[0, 3, 3] = 1.0  # Z
    # interior operator-valued matrix:
    #   [I  0   0  Z]
    #   [Z  0   0  I]
    #   [0 -Y  -X  0]
    #   [0  X  -Y  0]
    interior = np.zeros((4, 4, 4))
    interior[0, 0, 0] = 1.0
    interior[0, 3, 3] = 1.0
    interior[1, 3, 0] = 1.0
    interior[1, 0, 3] = 1.0
    interior[2, 2, 1] = -1.0
    interior[2, 1, 2] = -1.0
    interior[3, 1, 1] = 1.0
    interior[3, 2, 2] = -1.0
    last = np.zeros((4, 4, 1))
    last[0, 0, 0] = 1.0  # I
    last[1, 3, 0] = 1.0  # Z
    last[2, 2, 0] = -1.0  # -Y
    last[3, 1, 0] = 1.0  # X
    return Mpo([first] + [interior] * (n - 2) + [last])


def stabilizer_words(n: int) -> list[PauliWord]:
    """The N stabilizer generators S_1 .. S_N of the linear cluster state."""
    check_positive_int(n, "n", minimum=2)
    words = [PauliWord((1, 3), 1)]
    for s in range(2, n):
        words.append(PauliWord((3, 1, 3), s - 1))
    words.append(PauliWord((3, 1), n - 1))
    return words


def stabilizer_expectations(mpo: Mpo) -> np.ndarray:
    return np.array([mpo.correlation(w) for w in stabilizer_words(mpo.n_qubits)])


def mean_excitations(mpo: Mpo) -> np.ndarray:
    """Per-site mean excitation ``(1 - <Z_s>) / 2``."""
    return np.array(
        [(1.0 - mpo.correlation(PauliWord((3,), s))) / 2.0 for s in range(1, mpo.n_qubits + 1)]
    )


@dataclass(frozen=True)
class ErrorModel:
    """Per-site photon-loss and dephasing probabilities.

    ``eps_pd`` is the dephasing amplitude; the equivalent phase-flip
    probability is ``eps_pd / 2``.
    """

    eps_ad: np.ndarray
    eps_pd: np.ndarray

    def __post_init__(self):
        ad = np.atleast_1d(np.asarray(self.eps_ad, dtype=float))
        pd = np.atleast_1d(np.asarray(self.eps_pd, dtype=float))
        if ad.shape != pd.shape:
            raise ValidationError("eps_ad and eps_pd must have equal lengths")
        if np.any((ad < 0) | (ad > 1)) or np.any((pd < 0) | (pd > 1)):
            raise ValidationError("error probabilities must lie in [0, 1]")
        object.__setattr__(self, "eps_ad", ad)
        object.__setattr__(self, "eps_pd", pd)

    @classmethod
    def uniform(cls, n: int, eps_ad: float, eps_pd: float) -> "ErrorModel":
        return cls(np.full(n, eps_ad), np.full(n, eps_pd))

    @property
    def n_sites(self) -> int:
        return len(self.eps_ad)

    @property
    def phase_flip(self) -> np.ndarray:
        return self.eps_pd / 2.0

    def channels(self) -> list[np.ndarray]:
        """Per-site process matrices, dephasing applied after loss."""
        return [
            compose(pure_dephasing(pd), amplitude_damping(ad))
            for ad, pd in zip(self.eps_ad, self.eps_pd)
        ]

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(
                {"eps_ad": self.eps_ad.tolist(), "eps_pd": self.eps_pd.tolist()},
                fh,
                sort_keys=True,
            )

    @classmethod
    def from_json(cls, path) -> "ErrorModel":
        with open(path) as fh:
            doc = json.load(fh)
        return cls(doc["eps_ad"], doc["eps_pd"])


def noisy_cluster_model(n: int, model: ErrorModel) -> Mpo:
    """Ideal cluster MPO with per-site loss and dephasing channels applied."""
    if model.n_sites != n:
        raise ValidationError(
            f"error model covers {model.n_sites} sites, chain has {n}"
        )
    return apply_local_channels(ideal_cluster_mpo(n), model.channels())


def stabilizer_fidelity_bound(stab_values, ses=None) -> float:
    """Fidelity lower bound from the N stabilizer expectation values.

    Computes ``prod_odd (1+<S>)/2 + prod_even (1+<S>)/2 - 1``; the result may
    be negative, in which case it carries no information.
    """
    v = np.asarray(stab_values, dtype=float)
    se = np.zeros_like(v) if ses is None else np.asarray(ses, dtype=float)
    if np.any(np.abs(v) > 1.0 + 3.0 * se):
        raise DataError("stabilizer values outside [-1, 1] beyond 3 sigma")
    odd = np.prod((1.0 + v[0::2]) / 2.0)
    even = np.prod((1.0 + v[1::2]) / 2.0)
    return float(odd + even - 1.0)


def stabilizer_concurrence_bound(stab_values, k: int) -> tuple[float, float]:
    """Lower bound on the localizable concurrence across ``k`` bonds.

    Returns:
        (clamped, raw) where raw = ``1 - (k+1) (1 - min <S_r>)`` and clamped
        floors the reported value at 0.
    """
    check_positive_int(k, "k", minimum=1)
    raw = 1.0 - (k + 1) * (1.0 - float(np.min(np.asarray(stab_values, dtype=float))))
    return max(0.0, raw), raw


def fit_error_model(
    mean_exc,
    mean_exc_se,
    stab_values,
    stab_se,
    uniform: bool = True,
    max_iter: int = 100,
) -> ErrorModel:
    """Fit loss and dephasing probabilities to summary statistics.

    The fit is nested: mean excitations determine the loss probabilities
    (model ``excitation = (1 - eps_ad) / 2``; they are insensitive to
    dephasing), then the dephasing probabilities are fit to the stabilizer
    expectations with the loss held fixed.  Residuals are weighted by
    reciprocal standard errors.

    Args:
        mean_exc, mean_exc_se: per-site mean excitations and standard errors.
        stab_values, stab_se: stabilizer expectations and standard errors.
        uniform: fit a single (eps_ad, eps_pd) pair instead of per-site values.

    Raises:
        ConvergenceError: if the dephasing fit does not converge within
            ``max_iter`` residual evaluations (carries the last iterate).
    """
    exc = np.asarray(mean_exc, dtype=float)
    stab = np.asarray(stab_values, dtype=float)
    n = len(exc)
    if n < 3 or len(stab) != n:
        raise ValidationError("need at least 3 sites of excitation and stabilizer data")
    w_exc = 1.0 / np.clip(np.asarray(mean_exc_se, dtype=float), 1e-12, None)
    w_stab = 1.0 / np.clip(np.asarray(stab_se, dtype=float), 1e-12, None)

    ad_point = np.clip(1.0 - 2.0 * exc, 0.0, 1.0)
    if uniform:
        # weighted least squares of a constant
        eps_ad = np.full(n, np.sum(w_exc**2 * ad_point) / np.sum(w_exc**2))
    else:
        eps_ad = ad_point

    def stab_residuals(pd_params):
        pd = np.full(n, pd_params[0]) if uniform else pd_params
        model = ErrorModel(eps_ad, np.clip(pd, 0.0, 1.0))
        pred = stabilizer_expectations(noisy_cluster_model(n, model))
        return (pred - stab) * w_stab

    x0 = np.array([0.05]) if uniform else np.full(n, 0.05)
    res = scipy.optimize.least_squares(
        stab_residuals, x0, bounds=(0.0, 1.0), max_nfev=max_iter, xtol=1e-14, ftol=1e-14, gtol=1e-14
    )
    pd_fit = np.full(n, res.x[0]) if uniform else res.x
    model = ErrorModel(eps_ad, np.clip(pd_fit, 0.0, 1.0))
    if not res.success and res.status == 0:
        raise ConvergenceError(
            f"dephasing fit did not converge within {max_iter} evaluations",
            last_iterate=model,
        )
    return model


def write_stabilizer_report(path, values, ses, model_values) -> None:
    """CSV report with columns (s, value, se, model_value)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["s", "value", "se", "model_value"])
        for s, (v, e, m) in enumerate(zip(values, ses, model_values), start=1):
            writer.writerow([s, repr(float(v)), repr(float(e)), repr(float(m))])
