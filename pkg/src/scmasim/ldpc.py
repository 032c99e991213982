"""Irregular LDPC code: deterministic PEG construction and sum-product decoding.

Node-perspective degree profile (fractions of nodes, mean variable degree
3.1424, mean check degree 10.9983, redundancy 2/7, rate 5/7). Checks get a
near-uniform degree split implied by the edge count.
"""

from __future__ import annotations

import functools

import numpy as np

LLR_MAX = 30.0

VAR_DEGREE_FRACTIONS = {1: 0.0005, 2: 0.2852, 3: 0.2857, 4: 0.4286}
CHECK_MEAN_DEGREE = 10.9983


class ConstructionError(RuntimeError):
    pass


def _largest_remainder_counts(fractions: dict, total: int) -> dict:
    raw = {d: f * total for d, f in fractions.items()}
    counts = {d: int(np.floor(x)) for d, x in raw.items()}
    short = total - sum(counts.values())
    order = sorted(fractions, key=lambda d: (-(raw[d] - counts[d]), d))
    for d in order[:short]:
        counts[d] += 1
    return counts


def profile(n: int):
    """Variable degree sequence (length n) and check degree sequence."""
    counts = _largest_remainder_counts(VAR_DEGREE_FRACTIONS, n)
    var_degrees = np.repeat(sorted(counts), [counts[d] for d in sorted(counts)])
    n_edges = int(var_degrees.sum())
    m = int(round(n_edges / CHECK_MEAN_DEGREE))
    base, rem = divmod(n_edges, m)
    check_degrees = np.array([base + 1] * rem + [base] * (m - rem))
    return var_degrees, check_degrees


def peg_construct(var_degrees, check_degrees):
    """Progressive edge growth honoring a fixed check-degree sequence.

    Deterministic: variables placed in ascending degree order; each edge goes
    to the unsaturated unreached (or farthest) check with the lowest current
    degree, ties by index. Returns per-variable check lists."""
    n = len(var_degrees)
    n_checks = len(check_degrees)
    var_adj = [[] for _ in range(n)]
    check_adj = [[] for _ in range(n_checks)]
    check_deg = np.zeros(n_checks, dtype=int)
    capacity = np.asarray(check_degrees, dtype=int)

    order = sorted(range(n), key=lambda v: (var_degrees[v], v))
    for v in order:
        for _ in range(int(var_degrees[v])):
            if not var_adj[v]:
                candidates = np.arange(n_checks)
            else:
                candidates = _peg_candidates(v, var_adj, check_adj, n_checks)
            open_slots = check_deg < capacity
            usable = candidates[open_slots[candidates]]
            if usable.size == 0:
                # rare saturation fallback: any unsaturated non-neighbor
                usable = np.flatnonzero(open_slots)
                usable = usable[~np.isin(usable, var_adj[v])]
                if usable.size == 0:
                    raise ConstructionError("check capacities exhausted during placement")
            best = usable[np.lexsort((usable, check_deg[usable]))[0]]
            var_adj[v].append(int(best))
            check_adj[best].append(v)
            check_deg[best] += 1
    if not np.array_equal(np.sort(check_deg), np.sort(capacity)):
        raise ConstructionError("check degree sequence not met")
    return var_adj


def _peg_candidates(v, var_adj, check_adj, n_checks):
    """Checks not in the BFS tree of v, or the deepest BFS level if the tree
    spans every check."""
    seen_v = np.zeros(len(var_adj), dtype=bool)
    seen_c = np.zeros(n_checks, dtype=bool)
    seen_v[v] = True
    frontier = list(var_adj[v])
    for c in frontier:
        seen_c[c] = True
    last_level = frontier
    while True:
        next_vars = []
        for c in frontier:
            for u in check_adj[c]:
                if not seen_v[u]:
                    seen_v[u] = True
                    next_vars.append(u)
        next_checks = []
        for u in next_vars:
            for c in var_adj[u]:
                if not seen_c[c]:
                    seen_c[c] = True
                    next_checks.append(c)
        if not next_checks:
            break
        last_level = next_checks
        frontier = next_checks
    if not seen_c.all():
        return np.flatnonzero(~seen_c)
    return np.unique(last_level)


def _rref_gf2(H):
    """Reduced row echelon form over GF(2). Returns (R, pivot_cols)."""
    R = H.copy().astype(np.uint8)
    m, n = R.shape
    pivots = []
    row = 0
    for col in range(n):
        if row >= m:
            break
        hit = np.flatnonzero(R[row:, col]) + row
        if hit.size == 0:
            continue
        if hit[0] != row:
            R[[row, hit[0]]] = R[[hit[0], row]]
        others = np.flatnonzero(R[:, col])
        others = others[others != row]
        R[others] ^= R[row]
        pivots.append(col)
        row += 1
    return R, np.array(pivots, dtype=int)


class LdpcCode:
    """Parity-check structure plus systematic encoder and BP decoder."""

    def __init__(self, n: int):
        var_degrees, check_degrees = profile(n)
        m = len(check_degrees)
        var_adj = peg_construct(var_degrees, check_degrees)
        H = np.zeros((m, n), dtype=np.uint8)
        for v, checks in enumerate(var_adj):
            H[checks, v] = 1
        self._setup(H)

    @classmethod
    def from_parity(cls, H) -> "LdpcCode":
        """Wrap an explicit parity-check matrix (tests and experiments)."""
        obj = cls.__new__(cls)
        obj._setup(np.asarray(H, dtype=np.uint8))
        return obj

    def _setup(self, H):
        m, n = H.shape
        var_adj = [list(np.flatnonzero(H[:, v])) for v in range(n)]
        R, pivots = _rref_gf2(H)
        if len(pivots) != m:
            raise ConstructionError(f"parity-check matrix rank {len(pivots)} < {m}")

        self.n = n
        self.m = m
        self.k_info = n - m
        self.H = H
        self.rate = self.k_info / n
        self._pivot_cols = pivots
        info_mask = np.ones(n, dtype=bool)
        info_mask[pivots] = False
        self.info_positions = np.flatnonzero(info_mask)
        # parity bits = P @ info bits (mod 2)
        self._P = R[:, self.info_positions]

        # edge bookkeeping for the vectorized decoder
        edge_var = np.concatenate([np.full(len(c), v) for v, c in enumerate(var_adj)])
        edge_check = np.concatenate([np.asarray(c) for c in var_adj]).astype(int)
        by_check = np.lexsort((edge_var, edge_check))
        self.edge_var = edge_var[by_check]
        self.edge_check = edge_check[by_check]
        self.n_edges = len(self.edge_var)
        self._check_ptr = np.searchsorted(self.edge_check, np.arange(m))
        self._by_var = np.argsort(self.edge_var, kind="stable")
        self._var_ptr = np.searchsorted(self.edge_var[self._by_var], np.arange(n))

    def encode(self, info_bits):
        """info_bits: (..., k_info) in {0,1} -> codewords (..., n)."""
        info_bits = np.asarray(info_bits)
        if info_bits.shape[-1] != self.k_info:
            raise ValueError(f"expected {self.k_info} info bits, got {info_bits.shape[-1]}")
        out = np.zeros(info_bits.shape[:-1] + (self.n,), dtype=np.uint8)
        out[..., self.info_positions] = info_bits
        parity = (info_bits @ self._P.T) & 1
        out[..., self._pivot_cols] = parity
        return out

    def syndrome_ok(self, bits):
        return ~np.any((bits @ self.H.T) & 1, axis=-1)

    def decode_bp(self, channel_llrs, iters: int = 10):
        """Sum-product decoding.

        channel_llrs: (..., n), sign convention log p(0)/p(1).
        Returns (extrinsic_llrs, hard_bits, syndrome_ok).
        """
        L = np.clip(np.asarray(channel_llrs, dtype=float), -LLR_MAX, LLR_MAX)
        batch = L.shape[:-1]
        v2c = L[..., self.edge_var]
        c2v = np.zeros_like(v2c)
        for _ in range(iters):
            c2v = self._check_update(v2c)
            total = L + self._scatter_var_sums(c2v)
            v2c = np.clip(total[..., self.edge_var] - c2v, -LLR_MAX, LLR_MAX)
        total = np.clip(L + self._scatter_var_sums(c2v), -LLR_MAX, LLR_MAX)
        hard = (total < 0).astype(np.uint8)
        ext = total - L
        ok = self.syndrome_ok(hard.reshape(-1, self.n)).reshape(batch)
        return ext, hard, ok

    def _check_update(self, v2c):
        """tanh-rule check messages with explicit zero handling."""
        t = np.tanh(v2c / 2.0)
        zero = np.abs(t) < 1e-300
        t_safe = np.where(zero, 1.0, t)
        # per-check product of nonzero factors and count of zero factors
        logs = np.log(np.abs(t_safe))
        neg = (t_safe < 0).astype(int)
        seg_log = np.add.reduceat(logs, self._check_ptr, axis=-1)
        seg_neg = np.add.reduceat(neg, self._check_ptr, axis=-1)
        seg_zero = np.add.reduceat(zero.astype(int), self._check_ptr, axis=-1)

        e_log = seg_log[..., self.edge_check] - logs
        e_neg = seg_neg[..., self.edge_check] - neg
        e_zero = seg_zero[..., self.edge_check] - zero.astype(int)
        prod = np.where(e_zero > 0, 0.0, np.exp(e_log) * np.where(e_neg % 2 == 1, -1.0, 1.0))
        prod = np.clip(prod, -0.9999999999999999, 0.9999999999999999)
        return 2.0 * np.arctanh(prod)

    def _scatter_var_sums(self, c2v):
        sums = np.add.reduceat(c2v[..., self._by_var], self._var_ptr, axis=-1)
        return sums


@functools.lru_cache(maxsize=8)
def get_code(n: int) -> LdpcCode:
    return LdpcCode(n)


def ldpc_encode(info_bits, code: LdpcCode):
    return code.encode(info_bits)


def ldpc_decode_bp(channel_llrs, code: LdpcCode, inner_iters: int = 10):
    return code.decode_bp(channel_llrs, inner_iters)
