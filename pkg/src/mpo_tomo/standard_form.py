"""Free-parameter bookkeeping for MPOs in standard form.

The fit parameters are exactly the unpinned ("starred") entries: everything
except the leading 1 of each identity slice, the zeros below its diagonal,
and the fixed Pauli column at the last site.  Parameters are ordered
site-major, then Pauli index, then row, then column.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError
from .mpo import Mpo


def free_masks(mpo: Mpo) -> list[np.ndarray]:
    """Boolean mask per site tensor marking the free standard-form entries."""
    n = mpo.n_qubits
    masks = []
    for k, t in enumerate(mpo.tensors):
        mask = np.ones(t.shape, dtype=bool)
        if k == n - 1:
            mask[:] = False
        elif k == 0:
            mask[0, 0, 0] = False
        else:
            dl, _, dr = t.shape
            rows = np.arange(dl)[:, None]
            cols = np.arange(dr)[None, :]
            upper = rows <= cols
            upper[0, 0] = False
            mask[:, 0, :] = upper
        masks.append(mask)
    return masks


def _site_major(arr: np.ndarray) -> np.ndarray:
    """Reorder a (D_l, 4, D_r) array to (pauli, row, column) and flatten."""
    return arr.transpose(1, 0, 2).ravel()


def n_free_parameters(masks) -> int:
    return int(sum(m.sum() for m in masks))


def pack(site_arrays, masks) -> np.ndarray:
    """Extract the free entries of per-site arrays into one parameter vector."""
    if len(site_arrays) != len(masks):
        raise ValidationError("site count mismatch between arrays and masks")
    parts = []
    for arr, mask in zip(site_arrays, masks):
        arr = np.asarray(arr)
        if arr.shape != mask.shape:
            raise ValidationError(
                f"gradient shape {arr.shape} does not match mask {mask.shape}"
            )
        parts.append(_site_major(arr)[_site_major(mask)])
    return np.concatenate(parts) if parts else np.zeros(0)


def unpack(theta: np.ndarray, template: Mpo, masks) -> Mpo:
    """Rebuild an MPO from a parameter vector, keeping pinned entries."""
    theta = np.asarray(theta, dtype=float)
    out = []
    pos = 0
    for t, mask in zip(template.tensors, masks):
        flat = _site_major(np.array(t))
        mflat = _site_major(mask)
        k = int(mflat.sum())
        flat[mflat] = theta[pos : pos + k]
        pos += k
        dl, _, dr = t.shape
        out.append(flat.reshape(4, dl, dr).transpose(1, 0, 2))
    if pos != theta.size:
        raise ValidationError(
            f"parameter vector length {theta.size} does not match masks ({pos})"
        )
    return Mpo(out)
