"""Degree-normalized bipartite adjacency and its dropout augmentations.

Nodes are indexed 0..num_users-1 (users) then num_users..n-1 (items). Each
kept training interaction (u, i) contributes the symmetric pair of entries
1/sqrt(deg(u) * deg(i)) where degrees come from the graph actually stored
(dropout variants renormalize with the corrupted degrees).
"""

from dataclasses import dataclass, field

import numpy as np

from gclrec import kernels
from gclrec.errors import ConfigError


@dataclass(frozen=True)
class SparseAdjacency:
    """Symmetric normalized adjacency in row-compressed form.

    Immutable after construction; `user_edges`/`item_edges` keep the
    undirected edge list (item side unshifted) so augmentations can be
    drawn without reconstructing it.
    """

    num_users: int
    num_items: int
    indptr: np.ndarray          # int64, len n+1
    indices: np.ndarray         # int64, column per nonzero
    data: np.ndarray            # float64, normalized values
    degrees: np.ndarray         # int64 per node, of this (possibly corrupted) graph
    user_edges: np.ndarray = field(repr=False)  # int64, kept undirected edges
    item_edges: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.num_users + self.num_items

    @property
    def nnz(self) -> int:
        return int(self.indices.shape[0])

    @property
    def num_edges(self) -> int:
        return int(self.user_edges.shape[0])

    def multiply(self, embeddings: np.ndarray) -> np.ndarray:
        """Propagate one layer: sparse @ dense with fixed summation order."""
        if embeddings.shape[0] != self.n:
            raise ValueError(
                f"embedding rows {embeddings.shape[0]} != node count {self.n}"
            )
        return kernels.spmm(self.indptr, self.indices, self.data, embeddings)

    def dump_coo(self, fh) -> None:
        """Debug dump, one `row col value` line per nonzero."""
        for r in range(self.n):
            for k in range(self.indptr[r], self.indptr[r + 1]):
                fh.write(f"{r}\t{self.indices[k]}\t{self.data[k]:.17g}\n")


def _assemble(num_users: int, num_items: int, uu: np.ndarray, ii: np.ndarray) -> SparseAdjacency:
    """Build the CSR layout from kept undirected edges, normalizing by the
    kept graph's degrees. Duplicate edges are not expected here."""
    n = num_users + num_items
    uu = np.ascontiguousarray(uu, dtype=np.int64)
    ii = np.ascontiguousarray(ii, dtype=np.int64)
    item_nodes = ii + num_users

    rows = np.concatenate([uu, item_nodes])
    cols = np.concatenate([item_nodes, uu])
    degrees = np.bincount(rows, minlength=n).astype(np.int64)

    # 1/sqrt(0) guarded to 0; isolated nodes keep empty rows.
    inv_sqrt = np.zeros(n, dtype=np.float64)
    nz = degrees > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(degrees[nz].astype(np.float64))
    vals = inv_sqrt[rows] * inv_sqrt[cols]

    order = np.lexsort((cols, rows))
    rows_s, cols_s, vals_s = rows[order], cols[order], vals[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows_s, minlength=n), out=indptr[1:])
    return SparseAdjacency(
        num_users=num_users,
        num_items=num_items,
        indptr=indptr,
        indices=np.ascontiguousarray(cols_s),
        data=np.ascontiguousarray(vals_s),
        degrees=degrees,
        user_edges=uu,
        item_edges=ii,
    )


def build_adjacency(dataset) -> SparseAdjacency:
    """Normalized adjacency over the dataset's training interactions."""
    train = dataset.train
    return _assemble(dataset.num_users, dataset.num_items, train[:, 0], train[:, 1])


def edge_dropout(adj: SparseAdjacency, keep_rate: float, rng) -> SparseAdjacency:
    """Keep each undirected edge independently with probability ``keep_rate``.

    Both directed entries share one coin flip; the surviving graph is
    renormalized with its own degrees.
    """
    if not 0.0 < keep_rate <= 1.0:
        raise ConfigError(f"keep rate must be in (0, 1], got {keep_rate}")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    if keep_rate == 1.0:
        keep = np.ones(adj.num_edges, dtype=bool)
    else:
        keep = rng.random(adj.num_edges) < keep_rate
    return _assemble(adj.num_users, adj.num_items,
                     adj.user_edges[keep], adj.item_edges[keep])


def node_dropout(adj: SparseAdjacency, keep_rate: float, rng) -> SparseAdjacency:
    """Drop each node with probability 1-keep_rate along with all its edges."""
    if not 0.0 < keep_rate <= 1.0:
        raise ConfigError(f"keep rate must be in (0, 1], got {keep_rate}")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    if keep_rate == 1.0:
        return _assemble(adj.num_users, adj.num_items, adj.user_edges, adj.item_edges)
    keep_node = rng.random(adj.n) < keep_rate
    keep = keep_node[adj.user_edges] & keep_node[adj.item_edges + adj.num_users]
    return _assemble(adj.num_users, adj.num_items,
                     adj.user_edges[keep], adj.item_edges[keep])


def multiply(adj: SparseAdjacency, embeddings: np.ndarray) -> np.ndarray:
    """Module-level alias for :meth:`SparseAdjacency.multiply`."""
    return adj.multiply(embeddings)
