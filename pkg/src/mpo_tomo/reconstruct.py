"""MPO reconstruction from local correlations: rank analysis and inversion.

The four-qubit correlation matrix ``B_s`` (rows ``4a+b`` over sites s, s+1,
columns ``4c+d`` over sites s+2, s+3) factorizes through the bond between
sites s+1 and s+2, so its rank equals the bond dimension required there.
Solving ``B_{s-2} A_s = C_{s-2}`` site by site reconstructs the chain
explicitly; the same singular value decompositions compress the result.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .correlations import PAULI_BASIS, PauliCorrelationSet
from .errors import DataError, ValidationError
from .mpo import Mpo

_SE_FLOOR_REL = 1e-11  # absolute floor on singular-value SEs, relative to sigma_max


@dataclass
class CorrMatrices:
    """Correlation matrices for bond analysis and five-qubit inversion.

    Attributes:
        b: per window start s (1..N-3), the 16x16 four-qubit matrix B_s.
        c: per s (1..N-4), the 4x16x16 stack of five-qubit matrices C_s^(i).
        b1: 4x4x16 boundary stack B_1^(i) (four-qubit, word at sites 1..4).
        bn3: 4x16x4 boundary stack B_{N-3}^(i) (four-qubit at sites N-3..N).
    """

    n_sites: int
    b: dict[int, np.ndarray] = field(repr=False)
    b_se: dict[int, np.ndarray] = field(repr=False)
    c: dict[int, np.ndarray] = field(repr=False)
    c_se: dict[int, np.ndarray] = field(repr=False)
    b1: np.ndarray = field(repr=False)
    b1_se: np.ndarray = field(repr=False)
    bn3: np.ndarray = field(repr=False)
    bn3_se: np.ndarray = field(repr=False)


def _four_qubit_window(corrs: PauliCorrelationSet, start: int):
    """(4,4,4,4) tensor of correlations at sites start..start+3 and its SEs."""
    n = corrs.n_sites
    if start <= n - 4:
        v = corrs.values[start][..., 0]
        se = corrs.ses[start][..., 0]
    else:  # rightmost window, marginalize the leading site instead
        v = corrs.values[n - 4][0, ...]
        se = corrs.ses[n - 4][0, ...]
    return v, se


def build_corr_matrices(corrs: PauliCorrelationSet, sigma_check: float = 5.0) -> CorrMatrices:
    """Assemble B_s, C_s and the boundary forms from five-qubit correlations.

    Four-qubit entries are obtained from the five-qubit windows by identity
    marginalization.  Values outside [-1, 1] beyond ``sigma_check`` standard
    errors raise a :class:`DataError`.
    """
    if corrs.basis != PAULI_BASIS:
        raise ValidationError("correlation matrices require the pauli basis")
    if corrs.window != 5:
        raise ValidationError(f"need 5-qubit windows, got L={corrs.window}")
    n = corrs.n_sites
    if n < 5:
        raise ValidationError("need at least 5 sites")
    for start in corrs.starts:
        v = corrs.values[start]
        se = corrs.ses[start]
        if np.any(np.abs(v) > 1.0 + sigma_check * se + 1e-9):
            raise DataError(
                f"correlations at window {start} exceed 1 beyond "
                f"{sigma_check} sigma"
            )
    b, b_se = {}, {}
    for s in range(1, n - 2):
        v, se = _four_qubit_window(corrs, s)
        b[s] = v.reshape(16, 16)
        b_se[s] = se.reshape(16, 16)
        if abs(b[s][0, 0] - 1.0) > max(0.3, 5 * b_se[s][0, 0]):
            raise DataError(f"B_{s}[0, 0] should be 1 after normalization")
    c, c_se = {}, {}
    for s in range(1, n - 3):
        v = corrs.values[s]
        se = corrs.ses[s]
        c[s] = np.stack([v[:, :, i, :, :].reshape(16, 16) for i in range(4)])
        c_se[s] = np.stack([se[:, :, i, :, :].reshape(16, 16) for i in range(4)])
    v1, se1 = _four_qubit_window(corrs, 1)
    b1 = np.stack([v1[:, i, :, :].reshape(4, 16) for i in range(4)])
    b1_se = np.stack([se1[:, i, :, :].reshape(4, 16) for i in range(4)])
    vn, sen = _four_qubit_window(corrs, n - 3)
    bn3 = np.stack([vn[:, :, i, :].reshape(16, 4) for i in range(4)])
    bn3_se = np.stack([sen[:, :, i, :].reshape(16, 4) for i in range(4)])
    return CorrMatrices(n, b, b_se, c, c_se, b1, b1_se, bn3, bn3_se)


def singular_value_ses(mat: np.ndarray, mat_se: np.ndarray):
    """Singular values of a measured matrix and their propagated SEs.

    Uses ``d sigma_n / d B_ij = U_in V_jn`` with the full SVD.
    """
    u, s, vt = np.linalg.svd(mat)
    var = np.einsum("in,ij,jn->n", u**2, np.asarray(mat_se) ** 2, (vt.T) ** 2)
    return s, np.sqrt(var)


@dataclass
class BondEstimate:
    """Estimated bond dimension per analyzed bond.

    ``dims[s]`` is the bond between sites s+1 and s+2, for s = 1..N-3.
    """

    dims: dict[int, int]
    singular_values: dict[int, np.ndarray]
    singular_value_ses: dict[int, np.ndarray]
    k_sigma: float


def estimate_bond_dims(cm: CorrMatrices, k_sigma: float = 5.0) -> BondEstimate:
    """Count singular values of each B_s significantly above their SEs."""
    dims, svs, ses = {}, {}, {}
    for s, mat in cm.b.items():
        sv, sv_se = singular_value_ses(mat, cm.b_se[s])
        floor = _SE_FLOOR_REL * max(sv[0], 1e-300)
        dims[s] = int(np.sum(sv > np.maximum(k_sigma * sv_se, floor)))
        svs[s] = sv
        ses[s] = sv_se
    return BondEstimate(dims, svs, ses, k_sigma)


def _truncated_pinv(mat: np.ndarray, rank: int | None, rcond: float):
    u, s, vt = np.linalg.svd(mat, full_matrices=False)
    if rank is None:
        rank = int(np.sum(s > rcond * max(s[0], 1e-300)))
    rank = max(1, min(rank, len(s)))
    return (vt[:rank].T / s[:rank]) @ u[:, :rank].T


def _l3_matrices(corrs: PauliCorrelationSet, s: int):
    """(B_s, C_s stack) for the three-qubit reconstruction at window s."""
    b = np.empty((4, 4))
    b_stack = np.empty((4, 4, 4))
    for a in range(4):
        for bb in range(4):
            b[a, bb] = corrs.word_value((a, bb), s)[0]
            for i in range(4):
                b_stack[i, a, bb] = corrs.word_value((a, i, bb), s)[0]
    return b, b_stack


def _l4_matrices(corrs: PauliCorrelationSet, s: int):
    b = np.empty((16, 4))
    c = np.empty((4, 16, 4))
    for a in range(4):
        for bb in range(4):
            for cc in range(4):
                b[4 * a + bb, cc] = corrs.word_value((a, bb, cc), s)[0]
                for i in range(4):
                    c[i, 4 * a + bb, cc] = corrs.word_value((a, bb, i, cc), s)[0]
    return b, c


@dataclass
class InversionResult:
    """Outcome of the explicit inversion; a failed solve is data, not a crash.

    Attributes:
        mpo: the reconstructed chain, or None when some site had no solution
            or the verification pass failed.
        site_residuals: Frobenius residual ``|B A - C|`` per solved site.
        column_residuals: per site, a (4, n_cols) array of per-Pauli-slice,
            per-column least-squares residual norms.
        failed_sites: sites whose residual exceeded the tolerance.
        verification_error: worst deviation of the reconstructed windows from
            the input correlations.  A bond dimension beyond the window's
            capacity leaves every local equation solvable, so this is the
            signal that catches it.
    """

    mpo: Mpo | None
    site_residuals: dict[int, float]
    column_residuals: dict[int, np.ndarray]
    failed_sites: list[int]
    message: str = ""
    verification_error: float = 0.0

    @property
    def ok(self) -> bool:
        return self.mpo is not None


def _boundary_site(first: bool) -> np.ndarray:
    t = np.eye(4)
    return t.reshape(1, 4, 4) if first else t.reshape(4, 4, 1)


def invert_reconstruct(
    corrs: PauliCorrelationSet,
    L: int = 5,
    ranks: dict[int, int] | None = None,
    rcond: float = 1e-10,
    residual_tol: float = 1e-6,
) -> InversionResult:
    """Reconstruct an MPO from L-qubit local correlations by pseudoinversion.

    Boundary sites are pinned to the Pauli row/column; interior sites solve
    ``B A = C`` in least squares via a Moore-Penrose pseudoinverse whose
    truncation is either ``rcond`` (exact data) or the externally estimated
    per-bond ranks (measured data).

    Args:
        corrs: pauli-basis correlations with window length >= L.
        L: 3, 4 or 5 consecutive qubits used by the inversion.
        ranks: optional pseudoinverse rank per B-matrix index.
        residual_tol: per-site Frobenius residual above which the site is
            declared unsolvable and no MPO is returned.
    """
    if corrs.basis != PAULI_BASIS:
        raise ValidationError("inversion requires the pauli basis")
    if L not in (3, 4, 5):
        raise ValidationError(f"L must be 3, 4 or 5, got {L}")
    if corrs.window < min(L, corrs.n_sites):
        raise ValidationError(f"window {corrs.window} too short for L={L}")
    n = corrs.n_sites
    ranks = ranks or {}
    sites: list[np.ndarray | None] = [None] * n
    sites[0] = _boundary_site(True)
    sites[-1] = _boundary_site(False)
    site_res: dict[int, float] = {}
    col_res: dict[int, np.ndarray] = {}

    def solve(site_index: int, bmat: np.ndarray, cstack: np.ndarray, b_index: int):
        pinv = _truncated_pinv(bmat, ranks.get(b_index), rcond)
        slices = np.stack([pinv @ cstack[i] for i in range(4)])
        resid = np.stack([bmat @ slices[i] - cstack[i] for i in range(4)])
        col_res[site_index] = np.linalg.norm(resid, axis=1)
        site_res[site_index] = float(np.linalg.norm(resid))
        sites[site_index - 1] = np.transpose(slices, (1, 0, 2))

    if L == 3:
        _, c1 = _l3_matrices(corrs, 1)
        sites[1] = np.transpose(c1, (1, 0, 2))
        for s_site in range(3, n):
            b, c = _l3_matrices(corrs, s_site - 1)
            solve(s_site, b, c, s_site - 1)
    elif L == 4:
        _, c1 = _l3_matrices(corrs, 1)
        sites[1] = np.transpose(c1, (1, 0, 2))
        for s_site in range(3, n):
            b, c = _l4_matrices(corrs, s_site - 2)
            solve(s_site, b, c, s_site - 2)
    else:
        cm = build_corr_matrices(corrs)
        sites[1] = np.transpose(cm.b1, (1, 0, 2))
        for s_site in range(3, n - 1):
            solve(s_site, cm.b[s_site - 2], cm.c[s_site - 2], s_site - 2)
        solve(n - 1, cm.b[n - 3], cm.bn3, n - 3)

    failed = sorted(s for s, r in site_res.items() if r > residual_tol)
    if failed:
        worst = max(failed, key=lambda s: site_res[s])
        return InversionResult(
            None,
            site_res,
            col_res,
            failed,
            message=(
                f"no solution: site {worst} residual {site_res[worst]:.3g} "
                f"exceeds {residual_tol:.3g}"
            ),
        )
    candidate = Mpo(sites)
    verification = 0.0
    if np.isfinite(residual_tol):
        # every local equation can be solvable and the chain still wrong (a
        # bond dimension beyond the window capacity); verify globally
        rebuilt = candidate.window_correlations(corrs.window)
        verification = max(
            float(np.max(np.abs(rebuilt[s] - corrs.values[s]))) for s in corrs.starts
        )
        if verification > residual_tol:
            return InversionResult(
                None,
                site_res,
                col_res,
                [],
                message=(
                    f"no solution: reconstructed correlations deviate by "
                    f"{verification:.3g} (tolerance {residual_tol:.3g}); the "
                    f"state needs a bond dimension beyond the window capacity"
                ),
                verification_error=verification,
            )
    return InversionResult(candidate, site_res, col_res, [], verification_error=verification)


@dataclass
class ReconstructibilityReport:
    l_ranks: dict[int, int]
    r_ranks: dict[int, int]
    l_expected: dict[int, int]
    r_expected: dict[int, int]
    reconstructible: bool


def _rank(mat: np.ndarray, rtol: float = 1e-10) -> int:
    s = np.linalg.svd(mat, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def check_reconstructibility(truth: Mpo, L: int = 5) -> ReconstructibilityReport:
    """Rank test of the boundary-contracted products required for inversion.

    The chain is reconstructible from L-qubit correlations iff every left
    product L_s and right product R_s has rank equal to the bond dimension it
    factorizes through.
    """
    if L not in (3, 4, 5):
        raise ValidationError(f"L must be 3, 4 or 5, got {L}")
    n = truth.n_qubits
    ts = truth.tensors
    # cumulative products of identity slices, kept as row/column matrices
    prefix = [np.ones((1, 1))]
    for t in ts:
        prefix.append(prefix[-1] @ t[:, 0, :])
    suffix = [np.ones((1, 1))]
    for t in reversed(ts):
        suffix.append(t[:, 0, :] @ suffix[-1])
    suffix.reverse()

    left_sites = 1 if L == 3 else 2
    right_sites = 1 if L in (3, 4) else 2
    l_ranks, l_expected = {}, {}
    for s in range((2 if L == 3 else 1), n - left_sites):
        rows = prefix[s - 1]  # (1, D_left-of-site-s)
        block = rows
        for k in range(left_sites):
            t = ts[s - 1 + k]
            block = np.einsum("wd,die->wie", block, t).reshape(-1, t.shape[2])
        l_ranks[s] = _rank(block)
        l_expected[s] = ts[s - 1 + left_sites - 1].shape[2]
    r_ranks, r_expected = {}, {}
    for s in range(3, n):
        block = suffix[s - 1 + right_sites]  # (bond, 1) product of trailing slices
        for k in reversed(range(right_sites)):
            t = ts[s - 1 + k]
            block = np.einsum("die,ew->diw", t, block).reshape(t.shape[0], -1)
        r_ranks[s] = _rank(block)
        r_expected[s] = ts[s - 1].shape[0]
    ok = all(l_ranks[s] == l_expected[s] for s in l_ranks) and all(
        r_ranks[s] == r_expected[s] for s in r_ranks
    )
    return ReconstructibilityReport(l_ranks, r_ranks, l_expected, r_expected, ok)


def compress(mpo: Mpo, cm: CorrMatrices, targets: dict[int, int]) -> Mpo:
    """Compress the bonds of an inversion-output MPO via SVDs of the B_s.

    For each bond s (between sites s+1 and s+2, left to right) the truncated
    SVD ``B_s ~ U S V*`` transforms site s+1 by V and rebuilds site s+2 as
    ``S^-1 U* C_s``; exact when the target equals rank(B_s), otherwise the
    best rank-limited approximation.  The input must be the (uncompressed)
    inversion output aligned with ``cm``.
    """
    n = mpo.n_qubits
    ts = [np.array(t) for t in mpo.tensors]
    for s in range(1, n - 2):
        target = targets.get(s)
        if target is None:
            continue
        if target > ts[s].shape[2]:
            raise ValidationError(
                f"target {target} exceeds bond {ts[s].shape[2]} at bond {s}"
            )
        u, sv, vt = np.linalg.svd(cm.b[s])
        if sv[target - 1] <= 1e-14 * max(sv[0], 1e-300):
            raise ValidationError(
                f"singular value {target} of B_{s} vanishes; cannot compress"
            )
        v = vt[:target].T
        ts[s] = np.einsum("dix,xr->dir", ts[s], v)
        cstack = cm.c[s] if s <= n - 4 else cm.bn3
        rebuilt = np.einsum("r,rx,ixy->riy", 1.0 / sv[:target], u[:, :target].T, cstack)
        ts[s + 1] = rebuilt
    return Mpo(ts)
