"""Quadrature-moment observables: exact values, synthetic datasets, sampling.

The per-mode observable alphabet is ``q^0, p^0, q^1, p^1, q^2, p^2``
(letters ``Q0, P0, Q1, P1, Q2, P2``, indices 0..5).  ``q^0`` and ``p^0``
both equal the identity but are tracked separately because they come from
different measurement settings.  For a state confined to the 0/1-photon
subspace every moment is a linear image of the window's Pauli correlations.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_efficiency, check_positive_int
from .channels import measurement_loss
from .errors import CompletenessError, ValidationError
from .mpo import Mpo, apply_local_channels
from .pauli import PAULIS

QUAD_LETTERS = ("Q0", "P0", "Q1", "P1", "Q2", "P2")

_FOCK_CUTOFF = 4  # q^2 couples |1> to |3>, so fourth moments need 4 levels


def _fock_ops():
    a = np.zeros((_FOCK_CUTOFF, _FOCK_CUTOFF))
    for n in range(1, _FOCK_CUTOFF):
        a[n - 1, n] = np.sqrt(n)
    q = (a + a.T) / np.sqrt(2.0)
    p = 1j * (a.T - a) / np.sqrt(2.0)
    eye = np.eye(_FOCK_CUTOFF)
    return [eye, eye, q, p, q @ q, p @ p]


def _pauli_embedded():
    out = np.zeros((4, _FOCK_CUTOFF, _FOCK_CUTOFF), dtype=complex)
    out[:, :2, :2] = PAULIS
    return out


def _site_tables():
    """First- and second-moment tables t[pauli, letter] = Tr[P Q]/2, Tr[P Q^2]/2."""
    ops = _fock_ops()
    emb = _pauli_embedded()
    t1 = np.real(np.stack([[np.trace(emb[i] @ op) for op in ops] for i in range(4)])) / 2.0
    t2 = (
        np.real(np.stack([[np.trace(emb[i] @ op @ op) for op in ops] for i in range(4)]))
        / 2.0
    )
    return t1, t2


_T1, _T2 = _site_tables()


def moment_word_string(word) -> str:
    return "".join(QUAD_LETTERS[k] for k in word)


def parse_moment_word(s: str) -> tuple[int, ...]:
    if len(s) % 2:
        raise ValidationError(f"malformed moment word {s!r}")
    pairs = [s[i : i + 2] for i in range(0, len(s), 2)]
    try:
        return tuple(QUAD_LETTERS.index(p) for p in pairs)
    except ValueError:
        raise ValidationError(f"malformed moment word {s!r}") from None


@dataclass
class MomentTable:
    """Measured multivariate quadrature moments keyed by window and word.

    ``values[start]`` is a ``(6,)*window`` tensor over the per-site letters;
    missing rows are NaN.  ``ses`` holds matching standard errors.
    """

    n_sites: int
    window: int
    values: dict[int, np.ndarray] = field(repr=False)
    ses: dict[int, np.ndarray] = field(repr=False)
    shots: int = 0

    @property
    def starts(self) -> list[int]:
        return sorted(self.values)

    def missing_rows(self):
        out = []
        for start in self.starts:
            for word in np.argwhere(~np.isfinite(self.values[start])):
                out.append((start, moment_word_string(word)))
        return out

    def require_complete(self):
        missing = self.missing_rows()
        if missing:
            raise CompletenessError(
                f"moment table is missing {len(missing)} rows "
                f"(first: start={missing[0][0]} word={missing[0][1]})",
                missing=missing,
            )

    def rows(self):
        """Iterate (start, word_tuple, value, se) over present rows."""
        for start in self.starts:
            vals = self.values[start]
            ses = self.ses[start]
            for word in np.ndindex(*vals.shape):
                v = vals[word]
                if np.isfinite(v):
                    yield start, word, float(v), float(ses[word])


def empty_moment_table(n_sites: int, window: int, shots: int = 0) -> MomentTable:
    starts = range(1, n_sites - window + 2)
    shape = (6,) * window
    return MomentTable(
        n_sites=n_sites,
        window=window,
        values={s: np.full(shape, np.nan) for s in starts},
        ses={s: np.full(shape, np.nan) for s in starts},
        shots=shots,
    )


def _window_moments(corr_tensor: np.ndarray, table: np.ndarray) -> np.ndarray:
    """Contract a (4,)*L Pauli tensor with a per-site 4x6 moment table."""
    out = corr_tensor
    L = corr_tensor.ndim
    for _ in range(L):
        # contract the leading Pauli axis, appending the letter axis at the end
        out = np.tensordot(out, table, axes=([0], [0]))
    return out


def exact_local_moments(mpo: Mpo, window: int, eta: float = 1.0) -> MomentTable:
    """Exact quadrature moments of every window, measured at efficiency eta.

    The state is pushed through a per-site loss channel of strength
    ``1 - eta`` before the quadrature moments are evaluated; standard errors
    are zero.
    """
    eta = check_efficiency(eta)
    if not 1 <= window <= mpo.n_qubits:
        raise ValidationError(f"window must be in 1..{mpo.n_qubits}")
    lossy = apply_local_channels(mpo, [measurement_loss(eta)] * mpo.n_qubits)
    corrs = lossy.window_correlations(window)
    values = {s: _window_moments(c, _T1) for s, c in corrs.items()}
    ses = {s: np.zeros((6,) * window) for s in corrs}
    return MomentTable(mpo.n_qubits, window, values, ses, shots=0)


def moment_variances(mpo: Mpo, window: int, eta: float = 1.0) -> dict[int, np.ndarray]:
    """Per-window single-shot variances Var[O] of every moment observable."""
    eta = check_efficiency(eta)
    lossy = apply_local_channels(mpo, [measurement_loss(eta)] * mpo.n_qubits)
    corrs = lossy.window_correlations(window)
    out = {}
    for s, c in corrs.items():
        first = _window_moments(c, _T1)
        second = _window_moments(c, _T2)
        out[s] = np.clip(second - first**2, 0.0, None)
    return out


def synthesize_dataset(
    mpo: Mpo, window: int, eta: float, shots: int, seed: int
) -> MomentTable:
    """Exact moments perturbed by shot noise with the matching standard errors.

    Every row receives independent zero-mean Gaussian noise of variance
    ``Var[O] / shots``; the reported standard error is the square root of the
    same quantity.  Noise is drawn from a counter-based generator keyed by
    ``(seed, row_index)``, so the table is reproducible row by row.
    """
    if shots < 100:
        raise ValidationError(f"shots must be >= 100, got {shots}")
    exact = exact_local_moments(mpo, window, eta)
    variances = moment_variances(mpo, window, eta)
    n_words = 6**window
    values = {}
    ses = {}
    for start in exact.starts:
        var = variances[start] / shots
        se = np.sqrt(var)
        base = (start - 1) * n_words
        noise = np.empty(n_words)
        for ridx in range(n_words):
            gen = np.random.Generator(np.random.Philox(key=[seed, base + ridx]))
            noise[ridx] = gen.standard_normal()
        values[start] = exact.values[start] + noise.reshape(se.shape) * se
        ses[start] = se
    return MomentTable(mpo.n_qubits, window, values, ses, shots=shots)


def save_moment_csv(table: MomentTable, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["window_start", "basis_word", "value", "se", "shots"])
        for start, word, value, se in table.rows():
            writer.writerow([start, moment_word_string(word), repr(value), repr(se), table.shots])


def load_moment_csv(paths, n_sites: int, window: int) -> MomentTable:
    """Merge one or more moment CSV files into a single table."""
    if isinstance(paths, (str, bytes)) or hasattr(paths, "read"):
        paths = [paths]
    table = empty_moment_table(n_sites, window)
    shots = 0
    for path in paths:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                start = int(row["window_start"])
                word = parse_moment_word(row["basis_word"])
                if len(word) != window or start not in table.values:
                    raise ValidationError(
                        f"row (start={start}, word={row['basis_word']}) does not fit "
                        f"an N={n_sites}, L={window} table"
                    )
                table.values[start][word] = float(row["value"])
                table.ses[start][word] = float(row["se"])
                shots = max(shots, int(row["shots"]))
    table.shots = shots
    return table


# --- quadrature sampling oracle --------------------------------------------

_GRID_POINTS = 2**14
_GRID_HALF_WIDTH = 6.0


def _sampling_grids():
    x = np.linspace(-_GRID_HALF_WIDTH, _GRID_HALF_WIDTH, _GRID_POINTS)
    dx = x[1] - x[0]
    psi0 = np.pi**-0.25 * np.exp(-(x**2) / 2.0)
    psi1 = np.sqrt(2.0) * x * psi0
    dens = np.stack([psi0 * psi0, psi0 * psi1, psi1 * psi1])
    cums = np.cumsum(dens, axis=1) * dx
    return x, dx, dens, cums


_GRID_X, _GRID_DX, _GRID_DENS, _GRID_CUMS = _sampling_grids()


def _sample_pure(psi: np.ndarray, bases, rng) -> np.ndarray:
    """Sequential conditional quadrature sampling of one pure state.

    ``psi`` has shape (n_shots, 2**modes); returns (n_shots, modes) samples.
    """
    n_modes = len(bases)
    shots = psi.shape[0]
    out = np.empty((shots, n_modes))
    state = psi.astype(complex)
    for s, basis in enumerate(bases):
        rest = 2 ** (n_modes - s - 1)
        state = state.reshape(shots, 2, rest)
        sigma00 = np.einsum("sr,sr->s", state[:, 0], np.conj(state[:, 0])).real
        sigma11 = np.einsum("sr,sr->s", state[:, 1], np.conj(state[:, 1])).real
        sigma01 = np.einsum("sr,sr->s", state[:, 0], np.conj(state[:, 1]))
        if basis == "q":
            cross = 2.0 * sigma01.real
        elif basis == "p":
            cross = -2.0 * sigma01.imag
        else:
            raise ValidationError(f"basis must be 'q' or 'p', got {basis!r}")
        coef = np.stack([sigma00, cross, sigma11])  # (3, shots)
        total = coef[0] + coef[2]
        target = rng.random(shots) * total
        lo = np.zeros(shots, dtype=np.int64)
        hi = np.full(shots, _GRID_POINTS - 1, dtype=np.int64)
        for _ in range(15):
            mid = (lo + hi) // 2
            fmid = np.einsum("cs,cs->s", coef, _GRID_CUMS[:, mid])
            takes = fmid < target
            lo = np.where(takes, mid, lo)
            hi = np.where(takes, hi, mid)
        flo = np.einsum("cs,cs->s", coef, _GRID_CUMS[:, lo])
        fhi = np.einsum("cs,cs->s", coef, _GRID_CUMS[:, hi])
        frac = np.clip((target - flo) / np.where(fhi > flo, fhi - flo, 1.0), 0.0, 1.0)
        x = _GRID_X[lo] + frac * (_GRID_X[hi] - _GRID_X[lo])
        out[:, s] = x
        psi0x = np.pi**-0.25 * np.exp(-(x**2) / 2.0)
        psi1x = np.sqrt(2.0) * x * psi0x
        if basis == "p":
            phi0, phi1 = psi0x, 1j * psi1x  # conj(-i psi1) = i psi1
        else:
            phi0, phi1 = psi0x, psi1x
        state = phi0[:, None] * state[:, 0] + phi1[:, None] * state[:, 1]
    return out


def sample_quadratures(rho: np.ndarray, bases, shots: int, seed: int) -> np.ndarray:
    """Draw joint quadrature samples from a density matrix of qubit modes.

    Args:
        rho: 2^M x 2^M density matrix over M pulse modes, each confined to
            the {|0>, |1>} Fock subspace (M <= 8).
        bases: per-mode quadrature choice, each 'q' or 'p'.
        shots: number of samples.
        seed: RNG seed; output is deterministic given the seed.

    Returns:
        array of shape (shots, M) of quadrature values, sampled from the
        exact joint density by sequential conditional inverse-CDF sampling.
    """
    rho = np.asarray(rho, dtype=complex)
    n_modes = len(bases)
    if n_modes > 8:
        raise ValidationError("sampling oracle limited to 8 modes")
    if rho.shape != (2**n_modes, 2**n_modes):
        raise ValidationError(
            f"density matrix shape {rho.shape} does not match {n_modes} modes"
        )
    check_positive_int(shots, "shots", minimum=1)
    rng = np.random.default_rng(seed)
    evals, evecs = np.linalg.eigh(rho)
    evals = np.clip(evals.real, 0.0, None)
    weights = evals / np.sum(evals)
    counts = rng.multinomial(shots, weights)
    samples = np.empty((shots, n_modes))
    pos = 0
    chunk = max(1, 2**21 // 2**n_modes)
    for k, n_k in enumerate(counts):
        if n_k == 0:
            continue
        phi = evecs[:, k]
        done = 0
        while done < n_k:
            take = min(chunk, n_k - done)
            psi = np.broadcast_to(phi, (take, phi.size)).copy()
            samples[pos : pos + take] = _sample_pure(psi, bases, rng)
            pos += take
            done += take
    # interleave the mixture components so rows are exchangeable
    return samples[rng.permutation(shots)]
