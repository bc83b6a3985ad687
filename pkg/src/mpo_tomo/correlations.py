"""Conversion of quadrature moments to Pauli correlations with uncertainties.

The pipeline works in the Z-shifted Pauli basis ``R = (I, X, Y, 2I - Z)``
wherever possible: those correlations are reachable from the measured
moments by pure per-site scaling, which keeps their statistical errors
independent.  Conversion to the plain Pauli basis mixes rows and is done
only where needed.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np

from ._validation import check_efficiency
from .errors import CompletenessError, DataError, ValidationError
from .measurement import MomentTable, moment_word_string
from .mpo import Mpo

PAULI_BASIS = "pauli"
ZSHIFTED_BASIS = "z-shifted"

#: 4x6 per-site map from moment letters (q^0, p^0, q, p, q^2, p^2) to the
#: Z-shifted basis (I, X, Y, 2I - Z); the first row averages the duplicated
#: identity measurements.
G_MATRIX = np.array(
    [
        [0.5, 0.5, 0, 0, 0, 0],
        [0, 0, np.sqrt(2.0), 0, 0, 0],
        [0, 0, 0, np.sqrt(2.0), 0, 0],
        [0, 0, 0, 0, 1.0, 1.0],
    ]
)

#: Involutive per-site map between the Z-shifted and plain Pauli bases.
F_MATRIX = np.array(
    [
        [1.0, 0, 0, 0],
        [0, 1.0, 0, 0],
        [0, 0, 1.0, 0],
        [2.0, 0, 0, -1.0],
    ]
)

_PAULI_NAMES = ("I", "X", "Y", "Z")
_R_NAMES = ("R0", "R1", "R2", "R3")


@dataclass
class PauliCorrelationSet:
    """Local correlations with standard errors, keyed by window start and word.

    ``values[start]`` is a ``(4,)*window`` tensor over per-site letters in
    the basis given by ``basis`` ("pauli" or "z-shifted").
    """

    n_sites: int
    window: int
    basis: str
    values: dict[int, np.ndarray] = field(repr=False)
    ses: dict[int, np.ndarray] = field(repr=False)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.basis not in (PAULI_BASIS, ZSHIFTED_BASIS):
            raise ValidationError(f"unknown basis tag {self.basis!r}")

    @property
    def starts(self) -> list[int]:
        return sorted(self.values)

    def word_value(self, letters, start_site: int) -> tuple[float, float]:
        """Value and SE of a (sub-window) word via identity padding.

        The word is looked up inside the canonical window covering sites
        ``start_site .. start_site + len(letters) - 1``.
        """
        letters = tuple(int(a) for a in letters)
        end = start_site + len(letters) - 1
        if len(letters) > self.window or start_site < 1 or end > self.n_sites:
            raise ValidationError(
                f"word at sites {start_site}..{end} does not fit the table"
            )
        w0 = min(max(1, start_site), self.n_sites - self.window + 1)
        w0 = max(w0, end - self.window + 1)
        idx = [0] * self.window
        idx[start_site - w0 : start_site - w0 + len(letters)] = letters
        idx = tuple(idx)
        return float(self.values[w0][idx]), float(self.ses[w0][idx])

    def word_names(self):
        return _PAULI_NAMES if self.basis == PAULI_BASIS else _R_NAMES


def window_correlation_set(mpo: Mpo, window: int) -> PauliCorrelationSet:
    """Exact Pauli correlation windows of an MPO (all standard errors zero)."""
    corrs = mpo.window_correlations(window)
    return PauliCorrelationSet(
        n_sites=mpo.n_qubits,
        window=window,
        basis=PAULI_BASIS,
        values={s: c.copy() for s, c in corrs.items()},
        ses={s: np.zeros((4,) * window) for s in corrs},
    )


def _apply_site_map(values, ses, mat):
    """Contract a per-site linear map over every axis, propagating variances
    under the independence assumption."""
    sq = mat**2
    out_v, out_s = {}, {}
    for start, v in values.items():
        var = ses[start] ** 2
        for _ in range(v.ndim):
            v = np.tensordot(v, mat, axes=([0], [1]))
            var = np.tensordot(var, sq, axes=([0], [1]))
        out_v[start] = v
        out_s[start] = np.sqrt(var)
    return out_v, out_s


def _fill_identity_duplicates(table: MomentTable):
    """Fill missing Q0/P0-duplicate rows from their twins.

    A missing duplicate is copied from its partner with the SE inflated by
    sqrt(3) so that the G-average of the pair carries the variance of a
    single measurement: (se^2 + 3 se^2) / 4 = se^2.
    """
    filled_v = {s: v.copy() for s, v in table.values.items()}
    filled_s = {s: v.copy() for s, v in table.ses.items()}
    L = table.window
    for start in table.starts:
        v = filled_v[start]
        se = filled_s[start]
        holes = np.argwhere(~np.isfinite(v))
        for word in map(tuple, holes):
            for site in range(L):
                if v[word] == v[word]:  # filled by an earlier twin
                    break
                if word[site] in (0, 1):
                    twin = list(word)
                    twin[site] = 1 - word[site]
                    twin = tuple(twin)
                    if np.isfinite(v[twin]):
                        v[word] = v[twin]
                        se[word] = se[twin] * np.sqrt(3.0)
    return filled_v, filled_s


def moments_to_zshifted(table: MomentTable) -> PauliCorrelationSet:
    """Convert a complete moment table to Z-shifted-Pauli correlations.

    Applies the per-site matrix G; standard errors are propagated assuming
    independent moment errors.  Missing Q0/P0 duplicates are tolerated (their
    twin is reused at degraded SE); any other missing row is fatal.
    """
    values, ses = _fill_identity_duplicates(table)
    missing = []
    for start in sorted(values):
        for word in np.argwhere(~np.isfinite(values[start])):
            missing.append((start, moment_word_string(word)))
    if missing:
        raise CompletenessError(
            f"moment table incomplete: {len(missing)} rows absent "
            f"(first: start={missing[0][0]} word={missing[0][1]})",
            missing=missing,
        )
    out_v, out_s = _apply_site_map(values, ses, G_MATRIX)
    return PauliCorrelationSet(
        n_sites=table.n_sites,
        window=table.window,
        basis=ZSHIFTED_BASIS,
        values=out_v,
        ses=out_s,
        meta={"shots": table.shots},
    )


def inverse_loss_zshifted(eta: float) -> np.ndarray:
    """Per-site inverse of the loss channel in the Z-shifted basis.

    Lower triangular: rescales X and Y by eta^-1/2 and unmixes the identity
    component from the 2I - Z row.
    """
    eta = check_efficiency(eta)
    return np.array(
        [
            [1.0, 0, 0, 0],
            [0, eta**-0.5, 0, 0],
            [0, 0, eta**-0.5, 0],
            [-(1.0 - eta) / eta, 0, 0, 1.0 / eta],
        ]
    )


def _inverse_loss_deta(eta: float) -> np.ndarray:
    return np.array(
        [
            [0.0, 0, 0, 0],
            [0, -0.5 * eta**-1.5, 0, 0],
            [0, 0, -0.5 * eta**-1.5, 0],
            [1.0 / eta**2, 0, 0, -1.0 / eta**2],
        ]
    )


def correct_inefficiency(
    corrs: PauliCorrelationSet, eta: float, eta_se: float = 0.0
) -> PauliCorrelationSet:
    """Undo the measurement-efficiency loss channel on Z-shifted correlations.

    The tensor product of per-site inverse loss maps is applied; input SEs
    are propagated as independent, and the uncertainty of eta itself is
    folded in by first-order sensitivity.
    """
    if corrs.basis != ZSHIFTED_BASIS:
        raise ValidationError("inefficiency correction expects z-shifted input")
    eta = check_efficiency(eta)
    einv = inverse_loss_zshifted(eta)
    out_v, out_s = _apply_site_map(corrs.values, corrs.ses, einv)
    if eta_se > 0.0:
        deinv = _inverse_loss_deta(eta)
        for start, v in corrs.values.items():
            dv = np.zeros_like(v)
            L = v.ndim
            for site in range(L):
                term = v
                for k in range(L):
                    mat = deinv if k == site else einv
                    term = np.tensordot(term, mat, axes=([0], [1]))
                dv += term
            out_s[start] = np.sqrt(out_s[start] ** 2 + (dv * eta_se) ** 2)
    meta = dict(corrs.meta)
    meta.update({"eta": eta, "eta_se": eta_se})
    return PauliCorrelationSet(
        corrs.n_sites, corrs.window, ZSHIFTED_BASIS, out_v, out_s, meta
    )


def zshifted_to_pauli(corrs: PauliCorrelationSet) -> PauliCorrelationSet:
    """Convert Z-shifted correlations to the plain Pauli basis (F per site).

    F is its own inverse.  SEs are propagated under the independence
    assumption, which overstates nothing on the X/Y rows but ignores the
    correlation introduced on Z rows; the assumption is recorded in meta.
    """
    if corrs.basis != ZSHIFTED_BASIS:
        raise ValidationError("expected z-shifted input")
    out_v, out_s = _apply_site_map(corrs.values, corrs.ses, F_MATRIX)
    meta = dict(corrs.meta)
    meta["se_independence_assumed"] = True
    return PauliCorrelationSet(
        corrs.n_sites, corrs.window, PAULI_BASIS, out_v, out_s, meta
    )


def pauli_to_zshifted(corrs: PauliCorrelationSet) -> PauliCorrelationSet:
    """Inverse of :func:`zshifted_to_pauli` (same map; F is an involution)."""
    if corrs.basis != PAULI_BASIS:
        raise ValidationError("expected pauli input")
    out_v, out_s = _apply_site_map(corrs.values, corrs.ses, F_MATRIX)
    return PauliCorrelationSet(
        corrs.n_sites, corrs.window, ZSHIFTED_BASIS, out_v, out_s, dict(corrs.meta)
    )


# --- phase alignment --------------------------------------------------------


def _stabilizer_components(corrs: PauliCorrelationSet, site: int):
    """(Y-component, X-component) of the stabilizer pattern around a site."""
    n = corrs.n_sites
    if corrs.basis == PAULI_BASIS:
        as_pauli = corrs
    else:
        as_pauli = zshifted_to_pauli(corrs)
    if site == 1:
        num = as_pauli.word_value((2, 3), 1)  # <Y1 Z2>
        den = as_pauli.word_value((1, 3), 1)  # <X1 Z2>
    elif site == n:
        num = as_pauli.word_value((3, 2), n - 1)
        den = as_pauli.word_value((3, 1), n - 1)
    else:
        num = as_pauli.word_value((3, 2, 3), site - 1)
        den = as_pauli.word_value((3, 1, 3), site - 1)
    return num, den


def estimate_phase_angles(corrs: PauliCorrelationSet, min_significance: float = 5.0):
    """Per-site rotation angles that zero the Y-flavoured stabilizer patterns.

    The angle for site s is ``-atan2(<Z Y Z>, <Z X Z>)`` (two-argument form,
    so anti-aligned qubits are handled); boundary sites use the two-qubit
    stabilizers.

    Raises:
        DataError: if both components are below ``min_significance`` standard
            errors for some site, leaving the phase undefined.
    """
    angles = np.zeros(corrs.n_sites)
    for site in range(1, corrs.n_sites + 1):
        (num, num_se), (den, den_se) = _stabilizer_components(corrs, site)
        if abs(num) < min_significance * num_se and abs(den) < min_significance * den_se:
            raise DataError(
                f"phase of site {site} is undefined: stabilizer components "
                f"{num:.3g}+-{num_se:.3g}, {den:.3g}+-{den_se:.3g}"
            )
        angles[site - 1] = -np.arctan2(num, den)
    return angles


def rotate_sites(corrs: PauliCorrelationSet, angles) -> PauliCorrelationSet:
    """Apply per-site Z-rotations to all words (X/Y components mix)."""
    angles = np.asarray(angles, dtype=float)
    if angles.shape != (corrs.n_sites,):
        raise ValidationError(f"need one angle per site, got {angles.shape}")
    out_v = {}
    out_s = {}
    for start, v in corrs.values.items():
        var = corrs.ses[start] ** 2
        L = v.ndim
        for k in range(L):
            th = angles[start - 1 + k]
            c, s = np.cos(th), np.sin(th)
            rot = np.array(
                [[1, 0, 0, 0], [0, c, -s, 0], [0, s, c, 0], [0, 0, 0, 1.0]]
            )
            v = np.tensordot(v, rot, axes=([0], [1]))
            var = np.tensordot(var, rot**2, axes=([0], [1]))
        out_v[start] = v
        out_s[start] = np.sqrt(var)
    meta = dict(corrs.meta)
    meta["alignment_angles"] = angles.tolist()
    return replace(corrs, values=out_v, ses=out_s, meta=meta)


def align_phases(corrs: PauliCorrelationSet, min_significance: float = 5.0):
    """Estimate and apply the per-qubit phase correction.

    Returns:
        (rotated correlation set, angles) where the rotation maximizes every
        stabilizer's X component and zeroes its Y companion.
    """
    angles = estimate_phase_angles(corrs, min_significance)
    return rotate_sites(corrs, angles), angles


# --- file formats ------------------------------------------------------------


def save_correlation_csv(corrs: PauliCorrelationSet, path, meta_path=None) -> None:
    names = corrs.word_names()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["window_start", "word", "value", "se"])
        for start in corrs.starts:
            vals = corrs.values[start]
            ses = corrs.ses[start]
            for word in np.ndindex(*vals.shape):
                writer.writerow(
                    [
                        start,
                        "".join(names[a] for a in word),
                        repr(float(vals[word])),
                        repr(float(ses[word])),
                    ]
                )
    if meta_path is not None:
        doc = {"basis": corrs.basis, "n_sites": corrs.n_sites, "window": corrs.window}
        doc.update(corrs.meta)
        with open(meta_path, "w") as fh:
            json.dump(doc, fh, sort_keys=True)


def _parse_word(s: str, names) -> tuple[int, ...]:
    width = len(names[0])
    if len(s) % width:
        raise ValidationError(f"malformed word {s!r}")
    return tuple(names.index(s[i : i + width]) for i in range(0, len(s), width))


def load_correlation_csv(path, n_sites: int, window: int, basis: str) -> PauliCorrelationSet:
    names = _PAULI_NAMES if basis == PAULI_BASIS else _R_NAMES
    shape = (4,) * window
    values = {s: np.full(shape, np.nan) for s in range(1, n_sites - window + 2)}
    ses = {s: np.full(shape, np.nan) for s in range(1, n_sites - window + 2)}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            start = int(row["window_start"])
            word = _parse_word(row["word"], names)
            values[start][word] = float(row["value"])
            ses[start][word] = float(row["se"])
    return PauliCorrelationSet(n_sites, window, basis, values, ses)
