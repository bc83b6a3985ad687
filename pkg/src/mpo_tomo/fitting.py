"""Weighted Gauss-Newton fit of a standard-form MPO to local correlations.

Residuals are the differences between measured window correlations and the
chain-product values of the MPO, each weighted by the reciprocal standard
error.  The analytic Jacobian follows from the product rule: removing one
site from the chain leaves a left prefix and a right suffix whose outer
product is the derivative block.  Data in the Z-shifted basis is fit
directly there (the model chain is contracted with the involution F on the
window sites), which keeps the residual weights statistically independent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .correlations import (
    F_MATRIX,
    PAULI_BASIS,
    ZSHIFTED_BASIS,
    PauliCorrelationSet,
    window_correlation_set,
    zshifted_to_pauli,
)
from .errors import DataError, ValidationError
from .mpo import Mpo, is_standard_form, load_json, save_json, to_standard_form
from .reconstruct import (
    build_corr_matrices,
    compress,
    estimate_bond_dims,
    invert_reconstruct,
)
from .standard_form import free_masks, n_free_parameters, pack, unpack


def _window_values_jacobian(mpo: Mpo, window: int, basis_k=None, want_jacobian=True):
    """Model values (and Jacobian) of all window words w.r.t. free parameters.

    Requires standard form, so sites right of a window never contribute
    derivatives through their pinned identity columns.

    Returns:
        values: dict start -> (4**window,) array in site-major word order.
        jac: dict start -> (4**window, n_params) array, or None.
    """
    n = mpo.n_qubits
    masks = free_masks(mpo)
    n_par = n_free_parameters(masks)
    tensors = list(mpo.tensors)
    if basis_k is not None:
        tensors = [np.einsum("ji,dia->dja", basis_k, t) for t in tensors]
    prefix = [np.ones(1)]
    for t in tensors:
        prefix.append(prefix[-1] @ t[:, 0, :])
    suffix = [np.ones(1)]
    for t in reversed(tensors):
        suffix.append(t[:, 0, :] @ suffix[-1])
    suffix.reverse()

    # per-site flat offsets of the free parameters inside the packed vector
    offsets = np.cumsum([0] + [int(m.sum()) for m in masks])
    site_free = [m.transpose(1, 0, 2).ravel() for m in masks]

    values = {}
    jacs = {} if want_jacobian else None
    eye4 = np.eye(4)
    k_mat = eye4 if basis_k is None else np.asarray(basis_k, dtype=float)
    for start in range(1, n - window + 2):
        sites = list(range(start - 1, start - 1 + window))
        lefts = [prefix[start - 1][None, :]]  # (4^k, D) partial products
        for t in (tensors[s] for s in sites):
            nxt = np.einsum("wx,xiy->wiy", lefts[-1], t)
            lefts.append(nxt.reshape(-1, t.shape[2]))
        rights = [suffix[start - 1 + window][:, None].T]  # (4^k, D) from the right
        for t in (tensors[s] for s in reversed(sites)):
            prev = rights[-1]  # (4^k, D_right-of-site)
            nxt = np.einsum("xiy,wy->iwx", t, prev)
            rights.append(nxt.reshape(-1, t.shape[0]))
        rights.reverse()  # rights[k] pairs with window position k as right factor

        values[start] = lefts[window] @ suffix[start - 1 + window]
        if not want_jacobian:
            continue
        jac = np.zeros((4**window, n_par))
        for k, s in enumerate(sites):
            lt = lefts[k]  # (4^k, Dl)
            rt = rights[k + 1]  # (4^{window-k-1}, Dr)
            # block[a, w, b, i, x, y] = K[w, i] lt[a, x] rt[b, y]
            block = np.einsum("wi,ax,by->awbixy", k_mat, lt, rt)
            block = block.reshape(4**window, -1)
            free = site_free[s]
            jac[:, offsets[s] : offsets[s + 1]] = block[:, free]
        # sites left of the window contribute through their identity slices
        vt = rights[0]  # (4^window, D_left-of-window)
        for s in range(start - 2, -1, -1):
            t = tensors[s]
            # d value / d (A_s^(0))_{x,y} = prefix[s][x] * tail[w, y]
            blk = np.einsum("x,wy->wxy", prefix[s], vt)  # (4^w, Dl, Dr)
            full = np.zeros((4**window, 4, t.shape[0], t.shape[2]))
            full[:, 0] = blk
            free = site_free[s]
            jac[:, offsets[s] : offsets[s + 1]] = full.reshape(4**window, -1)[:, free]
            vt = np.einsum("xy,wy->wx", t[:, 0, :], vt)
        jacs[start] = jac
    return values, jacs


@dataclass
class FitResult:
    """Fitted standard-form MPO with covariance and convergence metadata."""

    mpo: Mpo
    covariance: np.ndarray = field(repr=False)
    sse: float
    dof: int
    iterations: int
    converged: bool
    basis: str
    masks: list = field(repr=False, default=None)

    @property
    def reduced_sse(self) -> float:
        return self.sse / max(self.dof, 1)


def _row_filter(window: int) -> np.ndarray:
    """Boolean selector dropping the all-identity word (constant 1)."""
    keep = np.ones(4**window, dtype=bool)
    keep[0] = False
    return keep


def gauss_newton_fit(
    initial: Mpo,
    data: PauliCorrelationSet,
    max_iter: int = 200,
    tol: float = 1e-10,
    damping: float = 1e-3,
    se_floor: float = 1e-9,
) -> FitResult:
    """Levenberg-damped Gauss-Newton weighted least squares.

    The normal equations are solved in the Hessian eigenbasis with the
    residual gauge directions of the standard form projected out, and each
    step carries a geodesic-acceleration correction (the second directional
    derivative of the residuals along the step); the damping shrinks by 10
    on accepted steps and grows gently (x2) on rejections.  Accepted steps
    never increase the weighted SSE.

    Args:
        initial: standard-form starting point; its pinned entries stay fixed.
        data: measured correlations (pauli or z-shifted basis) with SEs.
        damping: initial Levenberg parameter.

    Returns:
        FitResult; ``converged`` is False when ``max_iter`` was exhausted
        (the result is usable but flagged).
    """
    if not is_standard_form(initial):
        raise ValidationError("initial MPO must be in standard form")
    if data.basis == ZSHIFTED_BASIS:
        basis_k = F_MATRIX
    elif data.basis == PAULI_BASIS:
        basis_k = None
    else:  # pragma: no cover - guarded by PauliCorrelationSet
        raise ValidationError(f"unknown basis {data.basis}")
    window = data.window
    keep = _row_filter(window)
    starts = data.starts
    y, se = [], []
    for s in starts:
        y.append(data.values[s].ravel()[keep])
        se.append(data.ses[s].ravel()[keep])
    y = np.concatenate(y)
    se = np.concatenate(se)
    if not np.all(np.isfinite(y)):
        raise DataError("correlation data contains NaN")
    w = 1.0 / np.clip(se, se_floor, None)

    masks = free_masks(initial)
    theta = pack(initial.tensors, masks)
    current = initial

    def model(mpo, want_jacobian):
        vals, jacs = _window_values_jacobian(mpo, window, basis_k, want_jacobian)
        v = np.concatenate([vals[s][keep] for s in starts])
        if not want_jacobian:
            return v, None
        j = np.vstack([jacs[s][keep] for s in starts])
        return v, j

    def values_at(th):
        v, _ = model(unpack(th, initial, masks), False)
        return v

    vals = values_at(theta)
    resid = (y - vals) * w
    sse = float(resid @ resid)
    lam = damping
    iterations = 0
    converged = sse == 0.0
    jac = None
    fd_step = 0.1
    while not converged and iterations < max_iter:
        current = unpack(theta, initial, masks)
        vals, jac = model(current, True)
        resid = (y - vals) * w
        jw = jac * w[:, None]
        grad = jw.T @ resid
        # work in the Hessian eigenbasis: residual gauge freedom of the
        # standard form leaves exact null directions that must not enter the
        # step regardless of the damping
        evals, evecs = np.linalg.eigh(jw.T @ jw)
        cut = 1e-12 * max(evals[-1], 1e-300)
        live = evals > cut
        gproj = evecs.T @ grad
        accepted = False
        for _ in range(80):
            d1 = evecs @ np.where(live, gproj / (evals + lam), 0.0)
            # geodesic acceleration: second directional derivative of the
            # residuals along d1, solved against the same damped system
            vp = values_at(theta + fd_step * d1)
            vm = values_at(theta - fd_step * d1)
            curv = ((vp - 2.0 * vals + vm) / fd_step**2) * w
            cproj = evecs.T @ (jw.T @ curv)
            d2 = -0.5 * (evecs @ np.where(live, cproj / (evals + lam), 0.0))
            if np.linalg.norm(d2) <= 0.75 * np.linalg.norm(d1):
                cand_theta = theta + d1 + d2
                cand_vals = values_at(cand_theta)
                cand_resid = (y - cand_vals) * w
                cand_sse = float(cand_resid @ cand_resid)
                if cand_sse <= sse:
                    accepted = True
                    lam = max(lam / 10.0, 1e-15)
                    break
            lam *= 2.0
        iterations += 1
        if not accepted:
            converged = True  # no acceptable step left: relative decrease is 0
            break
        decrease = sse - cand_sse
        theta, sse = cand_theta, cand_sse
        # the 1e-20 floor stops the loop from polishing float dust once an
        # exact-data fit has effectively reached zero
        if decrease <= tol * max(sse, 1e-20):
            converged = True
    current = unpack(theta, initial, masks)
    # covariance of the free parameters at the final iterate
    _, jac = model(current, True)
    jw = jac * w[:, None]
    hess = jw.T @ jw
    evals, evecs = np.linalg.eigh(hess)
    cutoff = 1e-12 * max(evals.max(), 1e-300)
    inv = np.where(evals > cutoff, 1.0 / np.where(evals > cutoff, evals, 1.0), 0.0)
    cov = (evecs * inv) @ evecs.T
    dof = y.size - n_free_parameters(masks)
    return FitResult(
        mpo=current,
        covariance=cov,
        sse=sse,
        dof=dof,
        iterations=iterations,
        converged=converged,
        basis=data.basis,
        masks=masks,
    )


def propagate_covariance(fit: FitResult, functional) -> tuple[float, float]:
    """Value and propagated SE of a differentiable scalar of the fitted MPO.

    Args:
        functional: callable returning ``(value, per-site gradient arrays)``
            for an MPO, e.g. built from :func:`mpo_tomo.mpo.fidelity_gradient`.
    """
    value, grads = functional(fit.mpo)
    g = pack(grads, fit.masks)
    var = float(g @ fit.covariance @ g)
    return float(value), float(np.sqrt(max(var, 0.0)))


def fidelity_functional(target: Mpo):
    """Functional computing fidelity to a pure target, for covariance propagation."""
    from .mpo import fidelity, fidelity_gradient

    def run(mpo: Mpo):
        return fidelity(mpo, target), fidelity_gradient(mpo, target)

    return run


class MpoLeastSquares:
    """Estimator reconstructing an MPO from five-qubit local correlations.

    The fit pipeline is: build correlation matrices, estimate the bond
    dimension from their singular values, reconstruct an initial guess by
    pseudoinversion, compress it to the estimated bonds, convert to standard
    form, and refine by weighted Gauss-Newton.

    Follows the scikit-learn estimator conventions: hyperparameters in
    ``__init__`` / ``get_params`` / ``set_params``, fitted state in
    trailing-underscore attributes set by :meth:`fit`.
    """

    def __init__(
        self,
        k_sigma: float = 5.0,
        max_iter: int = 200,
        tol: float = 1e-10,
        damping: float = 1e-3,
        se_floor: float = 1e-9,
        bond_dims: dict | None = None,
    ):
        self.k_sigma = k_sigma
        self.max_iter = max_iter
        self.tol = tol
        self.damping = damping
        self.se_floor = se_floor
        self.bond_dims = bond_dims

    _param_names = ("k_sigma", "max_iter", "tol", "damping", "se_floor", "bond_dims")

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names}

    def set_params(self, **params) -> "MpoLeastSquares":
        for name, value in params.items():
            if name not in self._param_names:
                raise ValidationError(f"unknown parameter {name!r}")
            setattr(self, name, value)
        return self

    def fit(self, corrs: PauliCorrelationSet) -> "MpoLeastSquares":
        """Run the full reconstruction pipeline on an L=5 correlation set."""
        if corrs.window != 5:
            raise ValidationError("the estimator expects 5-qubit windows")
        pauli = corrs if corrs.basis == PAULI_BASIS else zshifted_to_pauli(corrs)
        self.corr_matrices_ = build_corr_matrices(pauli)
        self.bond_estimate_ = estimate_bond_dims(self.corr_matrices_, self.k_sigma)
        dims = dict(self.bond_dims or self.bond_estimate_.dims)
        self.inversion_ = invert_reconstruct(
            pauli, 5, ranks=dims, residual_tol=np.inf
        )
        guess = compress(self.inversion_.mpo, self.corr_matrices_, dims)
        guess = to_standard_form(guess)
        self.initial_mpo_ = guess
        self.fit_result_ = gauss_newton_fit(
            guess,
            corrs,
            max_iter=self.max_iter,
            tol=self.tol,
            damping=self.damping,
            se_floor=self.se_floor,
        )
        self.mpo_ = self.fit_result_.mpo
        self.covariance_ = self.fit_result_.covariance
        return self

    def predict(self, starts=None) -> PauliCorrelationSet:
        """Model correlations of the fitted MPO on the data's window grid."""
        if not hasattr(self, "mpo_"):
            raise ValidationError("estimator is not fitted")
        out = window_correlation_set(self.mpo_, 5)
        if starts is not None:
            missing = [s for s in starts if s not in out.values]
            if missing:
                raise ValidationError(f"window starts {missing} out of range")
            out.values = {s: out.values[s] for s in starts}
            out.ses = {s: out.ses[s] for s in starts}
        return out


# --- persistence -------------------------------------------------------------


def save_fit_bundle(fit: FitResult, directory) -> None:
    """Persist a fit: MPO JSON, covariance binary + header, report JSON."""
    import os

    os.makedirs(directory, exist_ok=True)
    save_json(fit.mpo, os.path.join(directory, "mpo.json"))
    cov = np.ascontiguousarray(fit.covariance, dtype=np.float64)
    cov.tofile(os.path.join(directory, "covariance.bin"))
    header = {
        "shape": list(cov.shape),
        "dtype": "float64",
        "order": "row-major",
        "parameter_ordering": "site-major, then Pauli index, then row, then column over starred entries",
    }
    with open(os.path.join(directory, "covariance_header.json"), "w") as fh:
        json.dump(header, fh, sort_keys=True)
    report = {
        "sse": fit.sse,
        "dof": fit.dof,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "basis": fit.basis,
    }
    with open(os.path.join(directory, "fit_report.json"), "w") as fh:
        json.dump(report, fh, sort_keys=True)


def load_fit_bundle(directory) -> FitResult:
    import os

    mpo = load_json(os.path.join(directory, "mpo.json"))
    with open(os.path.join(directory, "covariance_header.json")) as fh:
        header = json.load(fh)
    cov = np.fromfile(
        os.path.join(directory, "covariance.bin"), dtype=np.float64
    ).reshape(header["shape"])
    with open(os.path.join(directory, "fit_report.json")) as fh:
        report = json.load(fh)
    return FitResult(
        mpo=mpo,
        covariance=cov,
        sse=report["sse"],
        dof=report["dof"],
        iterations=report["iterations"],
        converged=report["converged"],
        basis=report["basis"],
        masks=free_masks(mpo),
    )
