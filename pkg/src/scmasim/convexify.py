"""Counting numbers that make the Gaussian free energy convex.

Standard BP weighs every factor once and every variable 1-|N(i)| times.
This module finds alternative counting numbers c_a (per factor) that stay
close to 1 while admitting the nonnegative split

    c_a = c_aa + sum_{i in N(a)} c_ia          (factor split)
    c_i = c_ii - sum_{a in N(i)} c_ia          (variable split)
    c_i = 1 - sum_{a in N(i)} c_a              (marginal consistency)

with c_aa, c_ii, c_ia >= 0, which is sufficient for the weighted free
energy to be convex.  Message updates then carry per-edge exponents

    gamma_ai = d_i c_a / (d_i c_a + c_i + d_i - 1)
    gamma_ia = d_i     / (d_i c_a + c_i + d_i - 1)

where d_i = |N(i)|; gamma_ai = gamma_ia = 1 recovers plain BP.

The solve runs on a shortened frame (all positions beyond 2L+1 from either
end are interchangeable) and the values are tiled to the real frame length.
"""

from __future__ import annotations

import dataclasses
import json
import time

import numpy as np

from .receiver import CountingArrays
from .msg_core import GaussianMsg, VACUOUS, from_natural

C_MIN = 1e-3
REG = 1e-9


# ---------------------------------------------------------------------------
# graph template


@dataclasses.dataclass(frozen=True)
class TemplateGraph:
    """Bipartite factor-graph skeleton: who touches whom, and node kinds."""

    factor_vars: tuple[tuple[int, ...], ...]
    factor_kinds: tuple[str, ...]
    var_kinds: tuple[str, ...]

    def __post_init__(self):
        if len(self.factor_vars) != len(self.factor_kinds):
            raise ValueError("factor_vars and factor_kinds must align")
        n_vars = len(self.var_kinds)
        seen = np.zeros(n_vars, dtype=bool)
        for vs in self.factor_vars:
            if len(vs) == 0:
                raise ValueError("factors must touch at least one variable")
            for i in vs:
                if not 0 <= i < n_vars:
                    raise ValueError(f"variable index {i} out of range")
                seen[i] = True
        if not seen.all():
            raise ValueError("every variable must touch at least one factor")

    @property
    def n_factors(self):
        return len(self.factor_vars)

    @property
    def n_vars(self):
        return len(self.var_kinds)

    def var_factors(self):
        adj = [[] for _ in range(self.n_vars)]
        for a, vs in enumerate(self.factor_vars):
            for i in vs:
                adj[i].append(a)
        return adj

    def edges(self):
        """Canonical edge order: factors in order, then their variable lists."""
        return [(a, i) for a, vs in enumerate(self.factor_vars) for i in vs]

    def var_degrees(self):
        deg = np.zeros(self.n_vars, dtype=int)
        for vs in self.factor_vars:
            for i in vs:
                deg[i] += 1
        return deg


def _compact(labels):
    """Map hashable labels to dense ints by first appearance."""
    ids = {}
    out = []
    for lab in labels:
        if lab not in ids:
            ids[lab] = len(ids)
        out.append(ids[lab])
    return out


def wl_classes(tg: TemplateGraph):
    """Color refinement on the bipartite graph, run to the fixed point.

    Two nodes share a class only if their kinds match and their neighbor
    class multisets match, recursively.  Returns (factor_class, var_class)
    integer arrays.
    """
    vf = tg.var_factors()
    fcol = _compact(tg.factor_kinds)
    vcol = _compact(tg.var_kinds)
    while True:
        fsig = [
            (fcol[a],) + tuple(sorted(vcol[i] for i in vs))
            for a, vs in enumerate(tg.factor_vars)
        ]
        vsig = [
            (vcol[i],) + tuple(sorted(fcol[a] for a in adj))
            for i, adj in enumerate(vf)
        ]
        new_f = _compact(fsig)
        new_v = _compact(vsig)
        stable = (max(new_f) == max(fcol)) and (max(new_v) == max(vcol))
        fcol, vcol = new_f, new_v
        if stable:
            return np.asarray(fcol), np.asarray(vcol)


@dataclasses.dataclass(frozen=True)
class ClassSystem:
    """Quotient of a template graph under WL classes, with multiplicities.

    m_fv[(fc, vc)]: how many class-vc neighbors one class-fc factor has.
    m_vf[(vc, fc)]: how many class-fc neighbors one class-vc variable has.
    """

    graph: TemplateGraph
    f_class: np.ndarray
    v_class: np.ndarray
    n_fclass: int
    n_vclass: int
    f_weight: np.ndarray
    v_weight: np.ndarray
    d_v: np.ndarray
    pairs: tuple[tuple[int, int], ...]  # (vc, fc) with at least one edge
    m_fv: dict
    m_vf: dict


def build_class_system(tg: TemplateGraph) -> ClassSystem:
    f_class, v_class = wl_classes(tg)
    n_fclass = int(f_class.max()) + 1
    n_vclass = int(v_class.max()) + 1
    f_weight = np.bincount(f_class, minlength=n_fclass)
    v_weight = np.bincount(v_class, minlength=n_vclass)

    vf = tg.var_factors()
    deg = tg.var_degrees()
    d_v = np.full(n_vclass, -1, dtype=int)
    m_vf = {}
    for i, adj in enumerate(vf):
        vc = v_class[i]
        counts = {}
        for a in adj:
            counts[f_class[a]] = counts.get(f_class[a], 0) + 1
        for fc, c in counts.items():
            key = (int(vc), int(fc))
            if key in m_vf and m_vf[key] != c:
                raise AssertionError("refinement left inconsistent classes")
            m_vf[key] = c
        if d_v[vc] >= 0 and d_v[vc] != deg[i]:
            raise AssertionError("refinement left mixed degrees in a class")
        d_v[vc] = deg[i]
    m_fv = {}
    for a, vs in enumerate(tg.factor_vars):
        fc = f_class[a]
        counts = {}
        for i in vs:
            counts[v_class[i]] = counts.get(v_class[i], 0) + 1
        for vc, c in counts.items():
            key = (int(fc), int(vc))
            if key in m_fv and m_fv[key] != c:
                raise AssertionError("refinement left inconsistent classes")
            m_fv[key] = c

    pairs = tuple(sorted(m_vf.keys()))
    for vc, fc in pairs:
        # both countings of the (vc, fc) edge bundle must agree
        assert v_weight[vc] * m_vf[(vc, fc)] == f_weight[fc] * m_fv[(fc, vc)]
    return ClassSystem(
        graph=tg,
        f_class=f_class,
        v_class=v_class,
        n_fclass=n_fclass,
        n_vclass=n_vclass,
        f_weight=f_weight,
        v_weight=v_weight,
        d_v=d_v,
        pairs=pairs,
        m_fv=m_fv,
        m_vf=m_vf,
    )


# ---------------------------------------------------------------------------
# counting numbers


def gamma_pair(c_a, c_i, d_i):
    """Per-edge message exponents (gamma_ai, gamma_ia)."""
    den = d_i * c_a + c_i + d_i - 1.0
    if not den > 0.0:
        raise ValueError(f"gamma denominator {den} must be positive")
    return d_i * c_a / den, d_i / den


@dataclasses.dataclass(frozen=True)
class CountingNumbers:
    """Class-level counting numbers for one template graph."""

    system: ClassSystem
    c_a: np.ndarray  # (n_fclass,)
    c_aa: np.ndarray  # (n_fclass,)
    c_ii: np.ndarray  # (n_vclass,)
    c_ia: dict  # (vc, fc) -> value
    objective: float

    @property
    def c_i(self):
        out = np.ones(self.system.n_vclass)
        for (vc, fc), m in self.system.m_vf.items():
            out[vc] -= m * self.c_a[fc]
        return out

    def factor_counting(self, a):
        return float(self.c_a[self.system.f_class[a]])

    def var_counting(self, i):
        return float(self.c_i[self.system.v_class[i]])

    def edge_gammas(self, i, a):
        vc = self.system.v_class[i]
        return gamma_pair(
            self.c_a[self.system.f_class[a]],
            self.c_i[vc],
            float(self.system.d_v[vc]),
        )

    def expand(self) -> "NodeCounting":
        """Per-node values on the template's own graph."""
        sys = self.system
        tg = sys.graph
        c_ia = np.array(
            [
                self.c_ia[(int(sys.v_class[i]), int(sys.f_class[a]))]
                for a, i in tg.edges()
            ]
        )
        return NodeCounting(
            graph=tg,
            c_a=self.c_a[sys.f_class],
            c_aa=self.c_aa[sys.f_class],
            c_ii=self.c_ii[sys.v_class],
            c_ia=c_ia,
        )


@dataclasses.dataclass(frozen=True)
class NodeCounting:
    """Counting numbers spelled out per concrete node and edge."""

    graph: TemplateGraph
    c_a: np.ndarray  # (n_factors,)
    c_aa: np.ndarray
    c_ii: np.ndarray  # (n_vars,)
    c_ia: np.ndarray  # aligned with graph.edges()

    @property
    def c_i(self):
        out = np.ones(self.graph.n_vars)
        for a, vs in enumerate(self.graph.factor_vars):
            for i in vs:
                out[i] -= self.c_a[a]
        return out


@dataclasses.dataclass(frozen=True)
class ConvexityReport:
    ok: bool
    max_factor_residual: float
    max_var_residual: float
    min_component: float

    def __bool__(self):
        return self.ok


def validate_convexity(counting: NodeCounting, tol=1e-8) -> ConvexityReport:
    """Check the nonnegative split equalities on a concrete graph."""
    tg = counting.graph
    fac_sum = counting.c_aa.copy()
    var_sum = counting.c_ii.copy()
    for e, (a, i) in enumerate(tg.edges()):
        fac_sum[a] += counting.c_ia[e]
        var_sum[i] -= counting.c_ia[e]
    rf = float(np.max(np.abs(fac_sum - counting.c_a))) if tg.n_factors else 0.0
    rv = float(np.max(np.abs(var_sum - counting.c_i))) if tg.n_vars else 0.0
    mc = float(
        min(
            counting.c_aa.min(initial=np.inf),
            counting.c_ii.min(initial=np.inf),
            counting.c_ia.min(initial=np.inf),
        )
    )
    ok = rf <= tol and rv <= tol and mc >= -tol
    return ConvexityReport(ok, rf, rv, mc)


def solve_counting_numbers(
    tg: TemplateGraph, *, c_min=C_MIN, reg=REG, pin_kinds=()
) -> CountingNumbers:
    """Find counting numbers nearest 1 that admit a nonnegative split.

    Quadratic program over class values, weighted by class sizes so the
    quotient objective equals the full-graph objective.  Deterministic:
    fixed solver, fixed tolerances, tiny Tikhonov term to pin the split.

    Factor kinds listed in pin_kinds keep counting exactly 1; use this for
    factors that cannot be fractionally exponentiated (point-mass priors).
    """
    import cvxpy as cp

    sys = build_class_system(tg)
    pair_index = {p: t for t, p in enumerate(sys.pairs)}
    fclass_kind = [None] * sys.n_fclass
    for a, fc in enumerate(sys.f_class):
        fclass_kind[fc] = tg.factor_kinds[a]

    ca = cp.Variable(sys.n_fclass)
    caa = cp.Variable(sys.n_fclass)
    cii = cp.Variable(sys.n_vclass)
    cia = cp.Variable(len(sys.pairs))

    # c_i = 1 - sum_a m_vf * c_a, as an affine expression in ca
    Mv = np.zeros((sys.n_vclass, sys.n_fclass))
    for (vc, fc), m in sys.m_vf.items():
        Mv[vc, fc] = m
    ci_expr = 1.0 - Mv @ ca

    # factor split: c_a = c_aa + sum_i m_fv * c_ia
    Af = np.zeros((sys.n_fclass, len(sys.pairs)))
    Av = np.zeros((sys.n_vclass, len(sys.pairs)))
    for (vc, fc), t in pair_index.items():
        Af[fc, t] = sys.m_fv[(fc, vc)]
        Av[vc, t] = sys.m_vf[(vc, fc)]

    constraints = [
        ca >= c_min,
        caa >= 0,
        cii >= 0,
        cia >= 0,
        ca == caa + Af @ cia,
        cii - Av @ cia == ci_expr,
    ]
    pinned = [fc for fc in range(sys.n_fclass) if fclass_kind[fc] in set(pin_kinds)]
    if pinned:
        constraints.append(ca[pinned] == 1.0)
    w = sys.f_weight.astype(float)
    objective = cp.Minimize(
        cp.sum(cp.multiply(w, cp.square(ca - 1.0)))
        + reg * (cp.sum_squares(caa) + cp.sum_squares(cii) + cp.sum_squares(cia))
    )
    prob = cp.Problem(objective, constraints)
    for settings in (
        {"tol_gap_abs": 1e-10, "tol_gap_rel": 1e-10, "tol_feas": 1e-10},
        {},
    ):
        prob.solve(solver=cp.CLARABEL, **settings)
        if prob.status == cp.OPTIMAL:
            break
    if prob.status != cp.OPTIMAL:
        raise RuntimeError(f"counting-number solve ended with status {prob.status}")

    def clean(x):
        x = np.asarray(x, dtype=float)
        if x.min(initial=0.0) < -1e-7:
            raise RuntimeError("solver returned a significantly negative component")
        return np.maximum(x, 0.0)

    c_a = np.maximum(np.asarray(ca.value, dtype=float), c_min)
    c_aa = clean(caa.value)
    c_ii = clean(cii.value)
    cia_val = clean(cia.value)
    c_ia = {p: float(cia_val[t]) for p, t in pair_index.items()}

    obj = float(np.sum(w * (c_a - 1.0) ** 2))
    cn = CountingNumbers(
        system=sys, c_a=c_a, c_aa=c_aa, c_ii=c_ii, c_ia=c_ia, objective=obj
    )
    report = validate_convexity(cn.expand(), tol=1e-7)
    if not report:
        raise RuntimeError(f"solver output failed the split check: {report}")
    # gamma denominators must be positive on every edge class
    for vc, fc in sys.pairs:
        gamma_pair(c_a[fc], cn.c_i[vc], float(sys.d_v[vc]))
    return cn


def solve_split(tg: TemplateGraph, c_a) -> NodeCounting | None:
    """Find any nonnegative split of the given per-factor countings.

    Sparse feasibility LP on the concrete graph; None when no split
    exists.  The factor totals alone pin the message exponents, but only
    a successful split certifies convexity, so this runs at full size.
    """
    from scipy.optimize import linprog
    from scipy import sparse

    c_a = np.asarray(c_a, dtype=float)
    edges = tg.edges()
    A = tg.n_factors
    I = tg.n_vars
    E = len(edges)
    c_i = np.ones(I)
    for a, i in edges:
        c_i[i] -= c_a[a]
    # variables: [caa (A), cii (I), cia (E)], all >= 0
    rows = list(range(A)) + list(range(A, A + I))
    cols = list(range(A)) + list(range(A, A + I))
    data = [1.0] * (A + I)
    for e, (a, i) in enumerate(edges):
        rows += [a, A + i]
        cols += [A + I + e, A + I + e]
        data += [1.0, -1.0]
    A_eq = sparse.csr_matrix((data, (rows, cols)), shape=(A + I, A + I + E))
    b_eq = np.concatenate([c_a, c_i])
    res = linprog(
        np.zeros(A + I + E), A_eq=A_eq, b_eq=b_eq, bounds=(0, None),
        method="highs",
    )
    if not res.success:
        return None
    x = np.maximum(res.x, 0.0)
    return NodeCounting(
        graph=tg,
        c_a=c_a,
        c_aa=x[:A],
        c_ii=x[A:A + I],
        c_ia=x[A + I:],
    )


def bethe_decomposable(tg: TemplateGraph) -> bool:
    """Feasibility of the nonnegative split at the plain-BP point c_a = 1."""
    return solve_split(tg, np.ones(tg.n_factors)) is not None


# ---------------------------------------------------------------------------
# reference message rules at scalar level


@dataclasses.dataclass(frozen=True)
class LinearFactor:
    """exp(-|offset - sum_t weights[t] x_t|^2 / noise_var).

    noise_var = 0 is a hard linear constraint; raising it to any positive
    power changes nothing.
    """

    weights: tuple
    offset: complex = 0j
    noise_var: float = 0.0


def factor_cavity(fac: LinearFactor, incoming, idx, c_a=1.0) -> GaussianMsg:
    """Gaussian the factor alone would send variable idx.

    incoming[t] is the product of variable t's messages from its other
    factors.  Raising the factor to 1/c_a multiplies its noise variance
    by c_a before the usual linear combination.
    """
    w_out = fac.weights[idx]
    if w_out == 0:
        return VACUOUS
    m = fac.offset
    v = c_a * fac.noise_var
    for t, msg in enumerate(incoming):
        if t == idx:
            continue
        w = fac.weights[t]
        if w == 0:
            continue
        m -= w * msg.mean
        if np.isfinite(msg.var):
            v += abs(w) ** 2 * msg.var
        else:
            v = np.inf
    return GaussianMsg(m / w_out, v / abs(w_out) ** 2)


def _combine_pow(parts) -> GaussianMsg:
    eta = 0j
    lam = 0.0
    for msg, e in parts:
        if e == 0.0:
            continue
        em, el = msg.natural()
        eta += e * em
        lam += e * el
    return from_natural(eta, lam)


def conv_messages(fac: LinearFactor, incoming, c_a, c_i, d_i):
    """Exponent-weighted messages both ways across one factor.

    incoming[t] is the plain product of other-factor messages at variable
    t (the auxiliary variable-to-factor message).  Returns (to_var,
    to_factor) lists.  gamma_ai = gamma_ia = 1 collapses both to the plain
    rules.  Raises IndefiniteMessage when a combination turns improper;
    callers apply their own safeguard.
    """
    to_var = []
    to_fac = []
    for idx in range(len(incoming)):
        g_ai, g_ia = gamma_pair(c_a, c_i[idx], d_i[idx])
        aux_f = factor_cavity(fac, incoming, idx, c_a)
        aux_v = incoming[idx]
        to_var.append(_combine_pow([(aux_f, g_ai), (aux_v, g_ia - 1.0)]))
        to_fac.append(_combine_pow([(aux_f, g_ai - 1.0), (aux_v, g_ia)]))
    return to_var, to_fac


# ---------------------------------------------------------------------------
# receiver graph template and instantiation


def build_receiver_template(F, L, N, cyclic=False):
    """Stretched detection graph for one receiver at frame length N.

    Variables: x (per user, occupied antenna, instant), s (per antenna,
    instant), r (per antenna, observation instant).  Factors: g (symbol
    prior tying a user's x's), phi (s = sum of x on the antenna), psi
    (r = tapped sum of s), f (observation).  Returns the graph plus name
    registries for both directions.

    cyclic wraps the time axis: every cell then looks like a deep-interior
    cell of a long frame, which is what makes cell-level counting numbers
    transferable to any longer frame.  Needs N > L so taps stay distinct.
    """
    F = np.asarray(F)
    J, K = F.shape
    L = int(L)
    N = int(N)
    if cyclic and N <= L:
        raise ValueError("cyclic template needs N > L")
    N_obs = N if cyclic else N + L - 1

    var_kinds = []
    x_id = {}
    s_id = {}
    r_id = {}

    def add_var(kind, reg, key):
        reg[key] = len(var_kinds)
        var_kinds.append(kind)

    for k in range(K):
        for j in range(J):
            if F[j, k]:
                for m in range(N):
                    add_var("x", x_id, (k, j, m))
    for j in range(J):
        for m in range(N):
            add_var("s", s_id, (j, m))
    for j in range(J):
        for n in range(N_obs):
            add_var("r", r_id, (j, n))

    factor_vars = []
    factor_kinds = []
    g_id = {}
    phi_id = {}
    psi_id = {}
    f_id = {}

    def add_factor(kind, reg, key, vs):
        reg[key] = len(factor_vars)
        factor_vars.append(tuple(vs))
        factor_kinds.append(kind)

    for k in range(K):
        occupied = [j for j in range(J) if F[j, k]]
        for m in range(N):
            add_factor("g", g_id, (k, m), [x_id[(k, j, m)] for j in occupied])
    for j in range(J):
        users = [k for k in range(K) if F[j, k]]
        for m in range(N):
            add_factor(
                "phi",
                phi_id,
                (j, m),
                [s_id[(j, m)]] + [x_id[(k, j, m)] for k in users],
            )
    for j in range(J):
        for n in range(N_obs):
            if cyclic:
                taps = [s_id[(j, (n - l) % N)] for l in range(L)]
            else:
                taps = [s_id[(j, n - l)] for l in range(L) if 0 <= n - l < N]
            add_factor("psi", psi_id, (j, n), [r_id[(j, n)]] + taps)
    for n in range(N_obs):
        add_factor("f", f_id, (n,), [r_id[(j, n)] for j in range(J)])

    tg = TemplateGraph(
        factor_vars=tuple(factor_vars),
        factor_kinds=tuple(factor_kinds),
        var_kinds=tuple(var_kinds),
    )
    registry = {
        "x": x_id,
        "s": s_id,
        "r": r_id,
        "g": g_id,
        "phi": phi_id,
        "psi": psi_id,
        "f": f_id,
    }
    return tg, registry


def _uniform_value(values, label, tol=1e-9):
    """Collapse per-position values that symmetry says must be equal."""
    v = np.asarray(values, dtype=float)
    if v.max() - v.min() > tol:
        raise AssertionError(f"{label} varies across a symmetric axis: {v}")
    return float(v[0])


@dataclasses.dataclass(frozen=True)
class ConvexifiedCounting:
    """Engine-ready counting arrays plus the solve's audit trail.

    `split` keeps the concrete nonnegative decomposition so a cached copy
    can be re-validated without re-solving.
    """

    arrays: CountingArrays
    report: ConvexityReport
    objective: float
    template_n: int
    n_classes: int
    solve_seconds: float
    split: dict | None = None

    def to_json(self) -> str:
        return json.dumps(
            {
                "c_phi": self.arrays.c_phi.tolist(),
                "c_s": self.arrays.c_s.tolist(),
                "c_psi": self.arrays.c_psi.tolist(),
                "c_r": self.arrays.c_r.tolist(),
                "c_f": self.arrays.c_f.tolist(),
                "c_x": self.arrays.c_x.tolist(),
                "objective": self.objective,
                "template_n": self.template_n,
                "n_classes": self.n_classes,
                "solve_seconds": self.solve_seconds,
                "split": {k: v.tolist() for k, v in self.split.items()}
                if self.split is not None
                else None,
            }
        )

    @classmethod
    def from_json(cls, text, report=None):
        d = json.loads(text)
        arrays = CountingArrays(
            c_phi=np.asarray(d["c_phi"]),
            c_s=np.asarray(d["c_s"]),
            c_psi=np.asarray(d["c_psi"]),
            c_r=np.asarray(d["c_r"]),
            c_f=np.asarray(d["c_f"]),
            c_x=np.asarray(d["c_x"]),
        )
        split = d.get("split")
        return cls(
            arrays=arrays,
            report=report if report is not None else ConvexityReport(True, 0, 0, 0),
            objective=d["objective"],
            template_n=d["template_n"],
            n_classes=d["n_classes"],
            solve_seconds=d["solve_seconds"],
            split={k: np.asarray(v) for k, v in split.items()} if split else None,
        )

    def revalidate(self, F, L, N) -> ConvexityReport:
        """Re-check the stored split on the freshly rebuilt concrete graph."""
        if self.split is None:
            raise ValueError("counting data carries no split to validate")
        tg, _ = build_receiver_template(F, L, N)
        node = NodeCounting(
            graph=tg,
            c_a=self.split["c_a"],
            c_aa=self.split["c_aa"],
            c_ii=self.split["c_ii"],
            c_ia=self.split["c_ia"],
        )
        return validate_convexity(node, tol=1e-6)


def template_length(L, N):
    """Frame length the counting QP actually runs at."""
    return min(int(N), 2 * int(L) + 2)


def _cell_edge_values(F, L, N_t, tg_t, names_t, node_t):
    """Read per-edge split values off the wrapped cell, per role.

    Rotation symmetry makes every instant equivalent, so each (role,
    indices) slot must carry one value across positions; asserted, then
    collapsed.
    """
    F = np.asarray(F)
    J, K = F.shape
    eidx = {e: t for t, e in enumerate(tg_t.edges())}
    vals = {}

    def collect(key, pairs):
        vals[key] = _uniform_value(
            [node_t.c_ia[eidx[p]] for p in pairs], f"split[{key}]"
        )

    for k in range(K):
        occupied = [j for j in range(J) if F[j, k]]
        for j in occupied:
            collect(("g_x", k, j), [
                (names_t["g"][(k, m)], names_t["x"][(k, j, m)])
                for m in range(N_t)
            ])
    for j in range(J):
        users = [k for k in range(K) if F[j, k]]
        collect(("phi_s", j), [
            (names_t["phi"][(j, m)], names_t["s"][(j, m)]) for m in range(N_t)
        ])
        for k in users:
            collect(("phi_x", j, k), [
                (names_t["phi"][(j, m)], names_t["x"][(k, j, m)])
                for m in range(N_t)
            ])
        collect(("psi_r", j), [
            (names_t["psi"][(j, n)], names_t["r"][(j, n)]) for n in range(N_t)
        ])
        for l in range(L):
            collect(("psi_s", j, l), [
                (names_t["psi"][(j, n)], names_t["s"][(j, (n - l) % N_t)])
                for n in range(N_t)
            ])
        collect(("f_r", j), [
            (names_t["f"][(n,)], names_t["r"][(j, n)]) for n in range(N_t)
        ])
    return vals


def _tile_cell(F, L, N, tg_t, names_t, node_t):
    """Spell the wrapped cell's counting split out on the real frame.

    Factor countings and edge values tile verbatim: every s variable keeps
    its full tap set at any frame length.  Frame-edge psi factors lose taps,
    and the lost edge mass moves into their self-term, which keeps the
    factor split exact and nonnegative.
    """
    F = np.asarray(F)
    J, K = F.shape
    N_t = len(names_t["f"])
    vals = _cell_edge_values(F, L, N_t, tg_t, names_t, node_t)

    def cell(kind, key):
        return names_t[kind][key]

    aa_g = [node_t.c_aa[cell("g", (k, 0))] for k in range(K)]
    aa_phi = [node_t.c_aa[cell("phi", (j, 0))] for j in range(J)]
    aa_psi = [node_t.c_aa[cell("psi", (j, 0))] for j in range(J)]
    aa_f = node_t.c_aa[cell("f", (0,))]
    ca_g = [node_t.c_a[cell("g", (k, 0))] for k in range(K)]
    ca_phi = [node_t.c_a[cell("phi", (j, 0))] for j in range(J)]
    ca_psi = [node_t.c_a[cell("psi", (j, 0))] for j in range(J)]
    ca_f = node_t.c_a[cell("f", (0,))]
    ii_x = {
        (k, j): node_t.c_ii[cell("x", (k, j, 0))]
        for k in range(K) for j in range(J) if F[j, k]
    }
    ii_s = [node_t.c_ii[cell("s", (j, 0))] for j in range(J)]
    ii_r = [node_t.c_ii[cell("r", (j, 0))] for j in range(J)]

    tg, names = build_receiver_template(F, L, N)
    c_a = np.empty(tg.n_factors)
    c_aa = np.empty(tg.n_factors)
    c_ii = np.empty(tg.n_vars)
    edge_vals = [None] * tg.n_factors

    for (k, m), a in names["g"].items():
        c_a[a] = ca_g[k]
        c_aa[a] = aa_g[k]
        occupied = [j for j in range(J) if F[j, k]]
        edge_vals[a] = [vals[("g_x", k, j)] for j in occupied]
    for (j, m), a in names["phi"].items():
        c_a[a] = ca_phi[j]
        c_aa[a] = aa_phi[j]
        users = [k for k in range(K) if F[j, k]]
        edge_vals[a] = [vals[("phi_s", j)]] + [
            vals[("phi_x", j, k)] for k in users
        ]
    for (j, n), a in names["psi"].items():
        c_a[a] = ca_psi[j]
        present = [l for l in range(L) if 0 <= n - l < N]
        missing = [l for l in range(L) if not 0 <= n - l < N]
        c_aa[a] = aa_psi[j] + sum(vals[("psi_s", j, l)] for l in missing)
        edge_vals[a] = [vals[("psi_r", j)]] + [
            vals[("psi_s", j, l)] for l in present
        ]
    for (n,), a in names["f"].items():
        c_a[a] = ca_f
        c_aa[a] = aa_f
        edge_vals[a] = [vals[("f_r", j)] for j in range(J)]

    for (k, j, m), i in names["x"].items():
        c_ii[i] = ii_x[(k, j)]
    for (j, m), i in names["s"].items():
        c_ii[i] = ii_s[j]
    for (j, n), i in names["r"].items():
        c_ii[i] = ii_r[j]

    c_ia = np.array([v for per_factor in edge_vals for v in per_factor])
    node = NodeCounting(graph=tg, c_a=c_a, c_aa=c_aa, c_ii=c_ii, c_ia=c_ia)
    return node, names


def receiver_counting(F, L, N, *, c_min=C_MIN, reg=REG) -> ConvexifiedCounting:
    """Solve counting numbers for one receiver and spell them out at size N.

    Short frames are solved outright.  Long frames solve a time-wrapped
    cell (every position a deep-interior position, so the cell values carry
    no frame-edge subsidy), tile its values across the frame, and re-check
    the full-size split, so the shortcut can only fail loudly.

    Prior factors are pinned to counting 1: the detector combines discrete
    point-mass priors on that edge, and those admit no fractional power.
    """
    F = np.asarray(F)
    J, K = F.shape
    N = int(N)
    L = int(L)
    N_obs = N + L - 1
    N_t = template_length(L, N)
    direct = N_t == N

    t0 = time.perf_counter()
    tg_t, names_t = build_receiver_template(F, L, N_t, cyclic=not direct)
    cn = solve_counting_numbers(tg_t, c_min=c_min, reg=reg, pin_kinds=("g",))
    node_t = cn.expand()
    solve_seconds = time.perf_counter() - t0

    if direct:
        tg, names = tg_t, names_t
        node = node_t
    else:
        node, names = _tile_cell(F, L, N, tg_t, names_t, node_t)
        tg = node.graph
    report = validate_convexity(node, tol=1e-6)
    if not report:
        raise AssertionError(f"counting numbers failed validation: {report}")
    c_a = node.c_a
    c_i = node.c_i
    deg = tg.var_degrees()
    for a, i in tg.edges():
        gamma_pair(c_a[a], c_i[i], float(deg[i]))

    arrays = CountingArrays(
        c_phi=np.array([[c_a[names["phi"][(j, m)]] for m in range(N)]
                        for j in range(J)]),
        c_s=np.array([[c_i[names["s"][(j, m)]] for m in range(N)]
                      for j in range(J)]),
        c_psi=np.array([[c_a[names["psi"][(j, n)]] for n in range(N_obs)]
                        for j in range(J)]),
        c_r=np.array([[c_i[names["r"][(j, n)]] for n in range(N_obs)]
                      for j in range(J)]),
        c_f=np.array([c_a[names["f"][(n,)]] for n in range(N_obs)]),
        c_x=np.array(
            [
                [
                    [
                        c_i[names["x"][(k, j, m)]] if F[j, k] else -1.0
                        for m in range(N)
                    ]
                    for j in range(J)
                ]
                for k in range(K)
            ]
        ),
    )
    return ConvexifiedCounting(
        arrays=arrays,
        report=report,
        objective=cn.objective,
        template_n=N_t,
        n_classes=cn.system.n_fclass + cn.system.n_vclass,
        solve_seconds=solve_seconds,
        split={
            "c_a": node.c_a,
            "c_aa": node.c_aa,
            "c_ii": node.c_ii,
            "c_ia": node.c_ia,
        },
    )


def chain_template(n_vars):
    """Path of pairwise factors, the classic loop-free benchmark."""
    if n_vars < 2:
        raise ValueError("chain needs at least two variables")
    factor_vars = tuple((i, i + 1) for i in range(n_vars - 1))
    return TemplateGraph(
        factor_vars=factor_vars,
        factor_kinds=("pair",) * (n_vars - 1),
        var_kinds=("v",) * n_vars,
    )


def cycle_template(n_vars):
    factor_vars = tuple((i, (i + 1) % n_vars) for i in range(n_vars))
    return TemplateGraph(
        factor_vars=factor_vars,
        factor_kinds=("pair",) * n_vars,
        var_kinds=("v",) * n_vars,
    )


def complete_pairwise_template(n_vars):
    factor_vars = tuple(
        (i, j) for i in range(n_vars) for j in range(i + 1, n_vars)
    )
    return TemplateGraph(
        factor_vars=factor_vars,
        factor_kinds=("pair",) * len(factor_vars),
        var_kinds=("v",) * n_vars,
    )
