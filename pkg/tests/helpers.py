import numpy as np

from scdgcn.gcn import PopulationGraph


def two_cluster_graph(seed: int, per_cluster: int = 10, intra: float = 1.0, inter: float = 0.01) -> PopulationGraph:
    """Two dense blocks weakly joined; label = block; half of each block labelled."""
    rng = np.random.default_rng(seed)
    n = 2 * per_cluster
    labels = np.repeat([0, 1], per_cluster)
    same = labels[:, None] == labels[None, :]
    adj = np.where(same, intra, inter) * rng.uniform(0.8, 1.0, size=(n, n))
    adj = np.triu(adj, 1)
    adj = adj + adj.T
    train = np.zeros(n, dtype=bool)
    for c in (0, 1):
        idx = rng.permutation(np.flatnonzero(labels == c))
        train[idx[: per_cluster // 2]] = True
    # featureless nodes: one-hot identities, so only the topology separates the classes
    return PopulationGraph(adj, np.eye(n), labels, train, ~train, 2)


def dominant_eigenvalue(m: np.ndarray, iters: int = 2000, seed: int = 0) -> float:
    """Largest-magnitude eigenvalue of a symmetric matrix by power iteration."""
    v = np.random.default_rng(seed).normal(size=len(m))
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = m @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        lam = float(v @ w)
        v = w / norm
    return abs(lam)
