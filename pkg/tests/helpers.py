"""Random instance generators shared by the unit and acceptance suites."""
import numpy as np
import scipy.sparse as sp


def random_sparse_symmetric(rng, n, density=None):
    """Sparse symmetric matrix with a random pattern, a diagonal and O(1) entries."""
    density = density if density is not None else min(1.0, 4.0 / n)
    R = sp.random(n, n, density=density, random_state=rng, data_rvs=rng.standard_normal)
    D = sp.diags(rng.uniform(-2.0, 2.0, n))
    return ((R + R.T) / 2 + D).tocsr()


def random_partition(rng, n):
    phi = rng.uniform(0.0, 1.0, n)
    phi[rng.random(n) < 0.2] = 1.0
    phi[rng.random(n) < 0.2] = 0.0
    return phi, np.sqrt(1.0 - phi ** 2)
