import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mpo_tomo.cluster import ErrorModel, ideal_cluster_mpo, noisy_cluster_model

#: uniform per-qubit error probabilities used throughout: 9.8% photon loss
#: and a 4.6% phase flip (dephasing amplitude 0.092)
PAPER_EPS_AD = 0.098
PAPER_EPS_PD = 0.092


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture(scope="session")
def cluster5():
    return ideal_cluster_mpo(5)


@pytest.fixture(scope="session")
def cluster6():
    return ideal_cluster_mpo(6)


@pytest.fixture(scope="session")
def noisy5():
    return noisy_cluster_model(5, ErrorModel.uniform(5, PAPER_EPS_AD, PAPER_EPS_PD))


@pytest.fixture(scope="session")
def noisy6():
    return noisy_cluster_model(6, ErrorModel.uniform(6, 0.09, 0.06))


def random_mpo(n, bond, rng, scale=1.0):
    """Random real site tensors (a generic Hermitian operator, not a state)."""
    ts = [rng.normal(size=(1, 4, bond)) * scale]
    for _ in range(n - 2):
        ts.append(rng.normal(size=(bond, 4, bond)) * scale)
    ts.append(rng.normal(size=(bond, 4, 1)) * scale)
    from mpo_tomo.mpo import Mpo

    return Mpo(ts)


@pytest.fixture(scope="session")
def fitted_noisy5(noisy5):
    """One converged fit of a synthetic 5-qubit dataset, reused across tests."""
    from mpo_tomo.correlations import moments_to_zshifted
    from mpo_tomo.fitting import MpoLeastSquares
    from mpo_tomo.measurement import synthesize_dataset

    table = synthesize_dataset(noisy5, 5, 1.0, 10**7, seed=11)
    est = MpoLeastSquares().fit(moments_to_zshifted(table))
    assert est.fit_result_.converged
    return est
