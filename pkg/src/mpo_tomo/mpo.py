"""Matrix product operators in the Pauli basis.

An ``Mpo`` stores one real tensor per site with index order
``(bond_left, pauli, bond_right)``; site 1 has ``bond_left = 1`` and site N
has ``bond_right = 1``.  The represented operator is

    rho = 2^-N * sum_w  (A_1^(w1) ... A_N^(wN))  P_w1 x ... x P_wN,

so the chain product of coefficient matrices equals the Pauli-word
expectation value ``<P_w1 ... P_wN>`` of the state.  All entries are real
because Pauli coefficients of a Hermitian operator are real.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import ValidationError
from .pauli import PauliWord

_TRACE_TOL = 1e-14


class Mpo:
    """Immutable chain of real site tensors representing a density operator.

    Args:
        tensors: one array of shape ``(D_left, 4, D_right)`` per site, with
            matching bond dimensions between neighbours and boundary bonds 1.
    """

    __slots__ = ("tensors",)

    def __init__(self, tensors):
        ts = []
        for s, t in enumerate(tensors):
            t = np.array(t, dtype=float)
            if t.ndim != 3 or t.shape[1] != 4:
                raise ValidationError(
                    f"site {s + 1} tensor must have shape (D_left, 4, D_right), "
                    f"got {t.shape}"
                )
            if not np.all(np.isfinite(t)):
                raise ValidationError(f"site {s + 1} tensor has non-finite entries")
            ts.append(t)
        if not ts:
            raise ValidationError("an MPO needs at least 1 site")
        if ts[0].shape[0] != 1 or ts[-1].shape[2] != 1:
            raise ValidationError("boundary bond dimensions must be 1")
        for s in range(len(ts) - 1):
            if ts[s].shape[2] != ts[s + 1].shape[0]:
                raise ValidationError(
                    f"bond mismatch between sites {s + 1} and {s + 2}: "
                    f"{ts[s].shape[2]} vs {ts[s + 1].shape[0]}"
                )
        for t in ts:
            t.flags.writeable = False
        object.__setattr__(self, "tensors", tuple(ts))

    def __setattr__(self, name, value):
        raise AttributeError("Mpo is immutable")

    @property
    def n_qubits(self) -> int:
        return len(self.tensors)

    @property
    def bonds(self) -> tuple[int, ...]:
        """Bond dimensions between consecutive sites (length N-1)."""
        return tuple(t.shape[2] for t in self.tensors[:-1])

    def site(self, s: int) -> np.ndarray:
        """Site tensor at 1-based site index ``s``."""
        if not 1 <= s <= self.n_qubits:
            raise ValidationError(f"site index {s} out of range 1..{self.n_qubits}")
        return self.tensors[s - 1]

    def trace(self) -> float:
        """Trace of the represented operator (product of identity slices)."""
        v = self.tensors[0][0, 0, :]
        for t in self.tensors[1:]:
            v = v @ t[:, 0, :]
        return float(v[0])

    def correlation(self, word) -> float:
        """Expectation value of a Pauli word.

        Args:
            word: a :class:`PauliWord`, or a full-chain letter tuple.
        """
        if isinstance(word, PauliWord):
            letters = word.padded(self.n_qubits)
        else:
            letters = tuple(int(a) for a in word)
            if len(letters) != self.n_qubits:
                raise ValidationError(
                    f"letter tuple of length {len(letters)} does not match "
                    f"{self.n_qubits} qubits"
                )
        v = self.tensors[0][0, letters[0], :]
        for t, a in zip(self.tensors[1:], letters[1:]):
            v = v @ t[:, a, :]
        return float(v[0])

    def window_correlations(self, window: int) -> dict[int, np.ndarray]:
        """All Pauli correlations of every length-``window`` site window.

        Returns:
            dict mapping 1-based window start to a ``(4,)*window`` tensor whose
            ``[a, b, ...]`` entry is ``<P_a_s P_b_{s+1} ...>``.
        """
        n = self.n_qubits
        if not 1 <= window <= n:
            raise ValidationError(f"window must be in 1..{n}, got {window}")
        # prefix[s] = product of identity slices of sites 1..s (row vector)
        prefix = [np.ones(1)]
        for t in self.tensors:
            prefix.append(prefix[-1] @ t[:, 0, :])
        suffix = [np.ones(1)]
        for t in reversed(self.tensors):
            suffix.append(t[:, 0, :] @ suffix[-1])
        suffix.reverse()
        out = {}
        for start in range(1, n - window + 2):
            block = prefix[start - 1]  # shape (D,)
            block = block[:, None]  # (D, 1): trailing axis collects letters
            for k in range(window):
                t = self.tensors[start - 1 + k]
                block = np.einsum("dw,die->wie", block, t)
                block = block.reshape(-1, t.shape[2]).T  # (D_right, 4^{k+1})
            vals = block.T @ suffix[start - 1 + window]
            out[start] = vals.reshape((4,) * window)
        return out

    def __eq__(self, other):
        if not isinstance(other, Mpo):
            return NotImplemented
        return len(self.tensors) == len(other.tensors) and all(
            a.shape == b.shape and np.array_equal(a, b)
            for a, b in zip(self.tensors, other.tensors)
        )

    def __repr__(self):
        return f"Mpo(n_qubits={self.n_qubits}, bonds={self.bonds})"


def apply_local_channels(mpo: Mpo, channels) -> Mpo:
    """Apply one single-qubit process matrix per site.

    Each site tensor is contracted along its Pauli axis:
    ``A'^(i) = sum_j E[i, j] A^(j)``.  Bond dimensions are unchanged.
    """
    channels = list(channels)
    if len(channels) != mpo.n_qubits:
        raise ValidationError(
            f"got {len(channels)} channels for {mpo.n_qubits} sites"
        )
    out = []
    for t, e in zip(mpo.tensors, channels):
        e = np.asarray(e, dtype=float)
        if e.shape != (4, 4):
            raise ValidationError(f"channel must be 4x4, got {e.shape}")
        out.append(np.einsum("ij,dja->dia", e, t))
    return Mpo(out)


def gauge_transform(mpo: Mpo, bond: int, u) -> Mpo:
    """Insert ``U U^-1`` on a bond: ``A_s <- A_s U``, ``A_{s+1} <- U^-1 A_{s+1}``.

    Args:
        bond: 1-based bond index; bond ``b`` sits between sites ``b`` and ``b+1``.
        u: invertible matrix of the bond's dimension.
    """
    n = mpo.n_qubits
    if not 1 <= bond <= n - 1:
        raise ValidationError(f"bond must be in 1..{n - 1}, got {bond}")
    u = np.asarray(u, dtype=float)
    d = mpo.bonds[bond - 1]
    if u.shape != (d, d):
        raise ValidationError(f"gauge matrix must be {d}x{d}, got {u.shape}")
    if np.linalg.cond(u) > 1e12:
        raise ValidationError("gauge matrix is numerically singular")
    uinv = np.linalg.inv(u)
    ts = list(mpo.tensors)
    ts[bond - 1] = np.einsum("dix,xy->diy", ts[bond - 1], u)
    ts[bond] = np.einsum("xy,yiz->xiz", uinv, ts[bond])
    return Mpo(ts)


def pad_bond(mpo: Mpo, bond: int, dim: int) -> Mpo:
    """Zero-pad a bond up to dimension ``dim`` (no-op if already that large)."""
    d = mpo.bonds[bond - 1]
    if d >= dim:
        return mpo
    ts = list(mpo.tensors)
    left = ts[bond - 1]
    right = ts[bond]
    ts[bond - 1] = np.concatenate(
        [left, np.zeros((left.shape[0], 4, dim - d))], axis=2
    )
    ts[bond] = np.concatenate([right, np.zeros((dim - d, 4, right.shape[2]))], axis=0)
    return Mpo(ts)


def _signed_qr(a: np.ndarray):
    """Complete QR with the R diagonal forced nonnegative (deterministic)."""
    q, r = np.linalg.qr(a, mode="complete")
    m = min(a.shape)
    signs = np.sign(np.diag(r)[:m])
    signs[signs == 0] = 1.0
    q = q.copy()
    r = r.copy()
    q[:, :m] *= signs
    r[:m, :] *= signs[:, None]
    return q, r


def to_standard_form(mpo: Mpo) -> Mpo:
    """Gauge-fix an MPO into the unit-trace standard form.

    The result has site N pinned to the Pauli column ``[I, X, Y, Z]^T``,
    upper-triangular identity slices with unit (0, 0) entries at sites
    2..N-1, and a leading 1 in the identity slice of site 1; the represented
    operator is unchanged up to overall normalization to trace 1.
    """
    tr = mpo.trace()
    if abs(tr) < _TRACE_TOL:
        raise ValidationError("cannot normalize an MPO with (near-)zero trace")
    n = mpo.n_qubits
    if n < 2:
        raise ValidationError("standard form needs at least 2 sites")
    ts = [np.array(t) for t in mpo.tensors]

    # Pin the last site to [I, X, Y, Z]^T by absorbing it into site N-1.
    last = ts[-1][:, :, 0]  # (D, 4); column b is A_N^(b)
    ts[-2] = np.einsum("diy,yb->dib", ts[-2], last)
    ts[-1] = np.eye(4).reshape(4, 4, 1)

    if ts[-2].shape[0] < 4 and n >= 3:
        padded = pad_bond(Mpo(ts), n - 2, 4)
        ts = [np.array(t) for t in padded.tensors]

    # Triangularize identity slices from the right.
    for k in range(n - 2, 0, -1):
        q, r = _signed_qr(ts[k][:, 0, :])
        ts[k - 1] = np.einsum("dix,xy->diy", ts[k - 1], q)
        ts[k] = np.einsum("xy,yiz->xiz", q.T, ts[k])

    # Rescale so every pinned (0, 0) identity entry is exactly 1; this also
    # absorbs any overall trace factor.
    for k in range(n - 1):
        pivot = ts[k][0, 0, 0]
        if abs(pivot) < _TRACE_TOL:
            raise ValidationError(
                f"standard-form pivot vanished at site {k + 1}; input is degenerate"
            )
        ts[k] = ts[k] / pivot
    # snap the pinned structure exactly (QR leaves ~1e-17 in the zeros)
    ts[0][0, 0, 0] = 1.0
    for k in range(1, n - 1):
        dl, _, dr = ts[k].shape
        rows = np.arange(dl)[:, None]
        cols = np.arange(dr)[None, :]
        ts[k][:, 0, :][rows > cols] = 0.0
        ts[k][0, 0, 0] = 1.0
    return Mpo(ts)


def is_standard_form(mpo: Mpo, tol: float = 1e-9) -> bool:
    """Structural check of the standard-form constraints."""
    ts = mpo.tensors
    n = mpo.n_qubits
    if ts[-1].shape != (4, 4, 1) or not np.allclose(
        ts[-1][:, :, 0], np.eye(4), atol=tol
    ):
        return False
    if abs(ts[0][0, 0, 0] - 1.0) > tol:
        return False
    for k in range(1, n - 1):
        a0 = ts[k][:, 0, :]
        if abs(a0[0, 0] - 1.0) > tol:
            return False
        if np.max(np.abs(np.tril(a0, -1))) > tol:
            return False
    return True


def fidelity(mpo: Mpo, target: Mpo) -> float:
    """Quantum state fidelity ``<psi| rho |psi>`` against a pure target MPO.

    The caller asserts that ``target`` encodes a pure state; the contraction
    pairs the two chains site by site, which costs O(N D_a^2 D_t^2).
    """
    if target.n_qubits != mpo.n_qubits:
        raise ValidationError(
            f"length mismatch: {mpo.n_qubits} vs {target.n_qubits}"
        )
    v = np.ones((1, 1)).reshape(1)
    for t, a in zip(target.tensors, mpo.tensors):
        m = np.einsum("uiv,xiy->uxvy", t, a)
        m = m.reshape(t.shape[0] * a.shape[0], t.shape[2] * a.shape[2])
        v = v @ m
    return float(v[0]) / 2**mpo.n_qubits


def fidelity_gradient(mpo: Mpo, target: Mpo) -> list[np.ndarray]:
    """Partial derivatives of :func:`fidelity` by every site-tensor entry.

    Returns:
        one array per site, shaped like the site tensor, obtained by removing
        that site from the pair contraction.
    """
    if target.n_qubits != mpo.n_qubits:
        raise ValidationError(
            f"length mismatch: {mpo.n_qubits} vs {target.n_qubits}"
        )
    n = mpo.n_qubits
    mats = []
    for t, a in zip(target.tensors, mpo.tensors):
        m = np.einsum("uiv,xiy->uxvy", t, a)
        mats.append(
            m.reshape(t.shape[0] * a.shape[0], t.shape[2] * a.shape[2])
        )
    lefts = [np.ones(1)]
    for m in mats[:-1]:
        lefts.append(lefts[-1] @ m)
    rights = [np.ones(1)]
    for m in reversed(mats[1:]):
        rights.append(m @ rights[-1])
    rights.reverse()
    scale = 1.0 / 2**n
    grads = []
    for s in range(n):
        t, a = target.tensors[s], mpo.tensors[s]
        lv = lefts[s].reshape(t.shape[0], a.shape[0])
        rv = rights[s].reshape(t.shape[2], a.shape[2])
        g = np.einsum("ux,uiv,vy->xiy", lv, t, rv) * scale
        grads.append(g)
    return grads


def correlation_gradient(mpo: Mpo, letters) -> list[np.ndarray]:
    """Partials of a full-chain Pauli-word expectation by every tensor entry."""
    letters = tuple(int(a) for a in letters)
    if len(letters) != mpo.n_qubits:
        raise ValidationError("letters must cover the full chain")
    mats = [t[:, a, :] for t, a in zip(mpo.tensors, letters)]
    lefts = [np.ones(1)]
    for m in mats[:-1]:
        lefts.append(lefts[-1] @ m)
    rights = [np.ones(1)]
    for m in reversed(mats[1:]):
        rights.append(m @ rights[-1])
    rights.reverse()
    grads = []
    for s, t in enumerate(mpo.tensors):
        g = np.zeros(t.shape)
        g[:, letters[s], :] = np.outer(lefts[s], rights[s])
        grads.append(g)
    return grads


def matrix_element(mpo: Mpo, bra_bits, ket_bits) -> complex:
    """Single density-matrix element ``<bra| rho |ket>`` by chain contraction."""
    from .pauli import PAULIS

    bra = tuple(int(b) for b in bra_bits)
    ket = tuple(int(b) for b in ket_bits)
    if len(bra) != mpo.n_qubits or len(ket) != mpo.n_qubits:
        raise ValidationError("bit strings must cover the full chain")
    v = np.ones(1, dtype=complex)
    for t, i, j in zip(mpo.tensors, bra, ket):
        u = PAULIS[:, i, j] / 2.0  # <i| P_a |j> / 2 per site
        v = v @ np.einsum("a,dae->de", u, t.astype(complex))
    return complex(v[0])


def save_json(mpo: Mpo, path) -> None:
    """Write the MPO file format: flat row-major site arrays plus bond list."""
    doc = {
        "n_qubits": mpo.n_qubits,
        "bonds": list(mpo.bonds),
        "sites": [t.ravel().tolist() for t in mpo.tensors],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)


def load_json(path) -> Mpo:
    with open(path) as fh:
        doc = json.load(fh)
    n = doc["n_qubits"]
    bonds = [1] + list(doc["bonds"]) + [1]
    if len(doc["sites"]) != n:
        raise ValidationError("site count does not match n_qubits")
    ts = []
    for s, flat in enumerate(doc["sites"]):
        shape = (bonds[s], 4, bonds[s + 1])
        ts.append(np.asarray(flat, dtype=float).reshape(shape))
    return Mpo(ts)
