"""Dense second-order cone programming and the complex -> real embedding.

Canonical problem form:

    maximize    c^T x
    subject to  ||A_i x + b_i||_2 <= d_i^T x + e_i     (second-order cones)
                a_j^T x = r_j                          (linear equalities)

Equality rows are eliminated against an orthonormal null-space basis, the
remainder is solved with a primal-dual interior-point method on the
homogeneous self-dual embedding (Nesterov-Todd scaling, Mehrotra
predictor-corrector).  Everything is dense numpy: the beamforming
subproblems this module exists for have a few hundred variables at most,
where dense factorizations beat any sparse machinery.

The ComplexEmbedding helper maps complex per-AP beamforming vectors
w in C^{M*N} to real variables x in R^{2*M*N} (per-AP blocks contiguous,
real parts then imaginary parts within a block) and builds the constraint
rows that show up in every subproblem: two-row affine maps for complex
inner products a^H w, per-AP power cones ||x_m|| <= sqrt(P_m), and the
single equality row Im{g^H w} = 0.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 100
FEAS_TOL = 1e-7

_STEP_FRAC = 0.99  # fraction of the distance to the cone boundary taken per step


class ConeStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    MAX_ITER = "max_iter"
    NUMERICAL = "numerical_failure"


@dataclass(frozen=True)
class SocConstraint:
    """One cone ||A x + b|| <= d^T x + e."""

    A: np.ndarray
    b: np.ndarray
    d: np.ndarray
    e: float

    def evaluate(self, x: np.ndarray) -> tuple[float, float]:
        """Return (lhs, rhs) = (||Ax+b||, d'x+e) at x."""
        lhs = float(np.linalg.norm(self.A @ x + self.b))
        rhs = float(self.d @ x + self.e)
        return lhs, rhs

    def margin(self, x: np.ndarray) -> float:
        """rhs - lhs; nonnegative iff the constraint holds at x."""
        lhs, rhs = self.evaluate(x)
        return rhs - lhs


@dataclass
class ConeProgram:
    """maximize c'x over SOC and equality constraints (treat as immutable)."""

    c: np.ndarray
    socs: list[SocConstraint]
    eqs: list[tuple[np.ndarray, float]] = field(default_factory=list)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        if self.c.size < 1:
            raise ValueError("need at least one variable")
        n = self.c.size
        checked = []
        for soc in self.socs:
            A = np.atleast_2d(np.asarray(soc.A, dtype=float))
            b = np.asarray(soc.b, dtype=float).ravel()
            d = np.asarray(soc.d, dtype=float).ravel()
            if A.shape != (b.size, n) or d.size != n or A.shape[0] < 1:
                raise ValueError("inconsistent SOC dimensions")
            if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))
                    and np.all(np.isfinite(d)) and np.isfinite(soc.e)):
                raise ValueError("non-finite SOC data")
            checked.append(SocConstraint(A, b, d, float(soc.e)))
        self.socs = checked
        self.eqs = [(np.asarray(a, dtype=float).ravel(), float(r)) for a, r in self.eqs]
        for a, _ in self.eqs:
            if a.size != n:
                raise ValueError("inconsistent equality dimension")

    @property
    def n(self) -> int:
        return self.c.size

    def max_violation(self, x: np.ndarray) -> tuple[float, float]:
        """(worst SOC violation, worst equality violation) at x; <=0 is satisfied."""
        soc_v = max((-(soc.margin(x)) for soc in self.socs), default=0.0)
        eq_v = max((abs(a @ x - r) for a, r in self.eqs), default=0.0)
        return max(soc_v, 0.0), eq_v


@dataclass
class ConeSolution:
    status: ConeStatus
    x: np.ndarray
    objective_value: float
    iterations: int
    residuals: dict


@dataclass
class FeasibilityResult:
    """Outcome of the max-slack feasibility reformulation."""

    feasible: bool
    marginal: bool
    slack: float
    x: np.ndarray
    solution: ConeSolution


@dataclass
class SolveCounters:
    """Running totals over every `solve` call in this process.

    Long Monte-Carlo drivers read these to report solver health; workers
    snapshot before/after a batch and ship the difference back.
    """

    solves: int = 0
    iterations: int = 0
    failures: int = 0

    def snapshot(self) -> "SolveCounters":
        return SolveCounters(self.solves, self.iterations, self.failures)

    def add(self, other: "SolveCounters") -> None:
        self.solves += other.solves
        self.iterations += other.iterations
        self.failures += other.failures

    def diff(self, earlier: "SolveCounters") -> "SolveCounters":
        return SolveCounters(self.solves - earlier.solves,
                             self.iterations - earlier.iterations,
                             self.failures - earlier.failures)

    def reset(self) -> None:
        self.solves = self.iterations = self.failures = 0


counters = SolveCounters()


# ---------------------------------------------------------------------------
# Jordan-algebra / cone helpers.  Vectors living in a product of second-order
# cones are stored flat; _Groups gathers cones of equal dimension into
# contiguous row blocks so every per-cone operation vectorizes as a (g, k)
# array op.
# ---------------------------------------------------------------------------

class _Groups:
    def __init__(self, dims: list[int]):
        self.dims = dims
        self.m = int(sum(dims))
        self.blocks: list[tuple[int, int, int]] = []  # (row_start, g, k)
        start = 0
        i = 0
        while i < len(dims):
            k = dims[i]
            j = i
            while j < len(dims) and dims[j] == k:
                j += 1
            g = j - i
            self.blocks.append((start, g, k))
            start += g * k
            i = j
        self.num_cones = len(dims)

    def views(self, v: np.ndarray) -> list[np.ndarray]:
        return [v[s:s + g * k].reshape(g, k) for s, g, k in self.blocks]

    def mat_views(self, mat: np.ndarray) -> list[np.ndarray]:
        ncol = mat.shape[1]
        return [mat[s:s + g * k].reshape(g, k, ncol) for s, g, k in self.blocks]

    def identity(self) -> np.ndarray:
        e = np.zeros(self.m)
        for s, g, k in self.blocks:
            e[s:s + g * k].reshape(g, k)[:, 0] = 1.0
        return e

    def in_cone_residual(self, v: np.ndarray) -> float:
        """max over cones of ||v_1|| - v_0 (<= 0 means v is in the cone)."""
        worst = -np.inf
        for u in self.views(v):
            r = np.linalg.norm(u[:, 1:], axis=1) - u[:, 0]
            worst = max(worst, float(r.max()))
        return worst


def _jdot(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Hyperbolic inner product u0*v0 - u1'v1, rowwise on (g, k) arrays."""
    return u[:, 0] * v[:, 0] - np.einsum("gk,gk->g", u[:, 1:], v[:, 1:])


def _jmul(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Jordan product (u'v ; u0 v1 + v0 u1) rowwise."""
    out = np.empty_like(u)
    out[:, 0] = np.einsum("gk,gk->g", u, v)
    out[:, 1:] = u[:, :1] * v[:, 1:] + v[:, :1] * u[:, 1:]
    return out


def _jsolve(lam: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve lam o u = rhs rowwise (lam in the cone interior)."""
    lam0 = lam[:, 0]
    lam1 = lam[:, 1:]
    det = lam0 ** 2 - np.einsum("gk,gk->g", lam1, lam1)
    u0 = (lam0 * rhs[:, 0] - np.einsum("gk,gk->g", lam1, rhs[:, 1:])) / det
    out = np.empty_like(rhs)
    out[:, 0] = u0
    out[:, 1:] = (rhs[:, 1:] - u0[:, None] * lam1) / lam0[:, None]
    return out


def _max_step(u_groups: list[np.ndarray], du_groups: list[np.ndarray]) -> float:
    """Largest t >= 0 with u + t*du still in the cone (inf if unconstrained)."""
    best = np.inf
    for u, du in zip(u_groups, du_groups):
        a = _jdot(du, du)
        b = 2.0 * _jdot(u, du)
        c0 = _jdot(u, u)
        t = np.full(a.shape, np.inf)
        disc = b * b - 4.0 * a * c0
        # quadratic coefficient present and real roots exist
        quad = (a != 0.0) & (disc >= 0.0)
        if np.any(quad):
            sq = np.sqrt(np.where(quad, disc, 0.0))
            q = -0.5 * (b + np.where(b >= 0.0, sq, -sq))
            with np.errstate(divide="ignore", invalid="ignore"):
                r1 = np.where(quad & (a != 0.0), q / a, np.inf)
                r2 = np.where(quad & (q != 0.0), c0 / q, np.inf)
            for r in (r1, r2):
                ok = quad & (r > 0.0)
                t = np.where(ok & (r < t), r, t)
        lin = (a == 0.0) & (b < 0.0)
        if np.any(lin):
            r = -c0 / b
            ok = lin & (r > 0.0)
            t = np.where(ok & (r < t), r, t)
        best = min(best, float(t.min()))
    return best


class _Scaling:
    """Nesterov-Todd scaling W = eta*(2 v v' - J) per cone, batched by group."""

    def __init__(self, groups: _Groups, s: np.ndarray, z: np.ndarray):
        self.groups = groups
        self.ok = True
        self.v: list[np.ndarray] = []
        self.jv: list[np.ndarray] = []
        self.eta: list[np.ndarray] = []
        for su, zu in zip(groups.views(s), groups.views(z)):
            s2 = _jdot(su, su)
            z2 = _jdot(zu, zu)
            if np.any(s2 <= 0.0) or np.any(z2 <= 0.0) or np.any(su[:, 0] <= 0.0) or np.any(zu[:, 0] <= 0.0):
                self.ok = False
                return
            sn = np.sqrt(s2)
            zn = np.sqrt(z2)
            sb = su / sn[:, None]
            zb = zu / zn[:, None]
            gam = np.sqrt((1.0 + np.einsum("gk,gk->g", sb, zb)) / 2.0)
            wb = sb.copy()
            wb[:, 0] += zb[:, 0]
            wb[:, 1:] -= zb[:, 1:]
            wb /= (2.0 * gam)[:, None]
            v = wb.copy()
            v[:, 0] += 1.0
            v /= np.sqrt(2.0 * (wb[:, 0] + 1.0))[:, None]
            jv = v.copy()
            jv[:, 1:] = -jv[:, 1:]
            self.v.append(v)
            self.jv.append(jv)
            self.eta.append(np.sqrt(sn / zn))

    def _apply(self, vec: np.ndarray, inverse: bool) -> np.ndarray:
        out = np.empty_like(vec)
        for (s0, g, k), v, jv, eta, u in zip(
                self.groups.blocks, self.v, self.jv, self.eta, self.groups.views(vec)):
            p = jv if inverse else v
            t = np.einsum("gk,gk->g", p, u)
            ju = u.copy()
            ju[:, 1:] = -ju[:, 1:]
            r = 2.0 * p * t[:, None] - ju
            r = r / eta[:, None] if inverse else r * eta[:, None]
            out[s0:s0 + g * k] = r.reshape(-1)
        return out

    def apply(self, vec: np.ndarray) -> np.ndarray:
        """W @ vec."""
        return self._apply(vec, inverse=False)

    def apply_inv(self, vec: np.ndarray) -> np.ndarray:
        """W^{-1} @ vec."""
        return self._apply(vec, inverse=True)

    def apply_inv2(self, vec: np.ndarray) -> np.ndarray:
        """W^{-2} @ vec in a single grouped pass (cheaper than two applies)."""
        out = np.empty_like(vec)
        for (s0, g, k), v, jv, eta, u in zip(
                self.groups.blocks, self.v, self.jv, self.eta, self.groups.views(vec)):
            a = np.einsum("gk,gk->g", jv, u)
            b = np.einsum("gk,gk->g", v, u)
            tau = np.einsum("gk,gk->g", v, v)
            r = u + (4.0 * tau * a - 2.0 * b)[:, None] * jv - (2.0 * a)[:, None] * v
            out[s0:s0 + g * k] = (r / (eta * eta)[:, None]).reshape(-1)
        return out

    def apply_inv_mat(self, mat: np.ndarray) -> np.ndarray:
        """W^{-1} @ mat, columnwise."""
        out = np.empty_like(mat)
        for (s0, g, k), jv, eta, u in zip(
                self.groups.blocks, self.jv, self.eta, self.groups.mat_views(mat)):
            t = np.einsum("gk,gkn->gn", jv, u)
            ju = u.copy()
            ju[:, 1:, :] = -ju[:, 1:, :]
            r = (2.0 * jv[:, :, None] * t[:, None, :] - ju) / eta[:, None, None]
            out[s0:s0 + g * k] = r.reshape(g * k, -1)
        return out

    def lmbda(self, z: np.ndarray) -> np.ndarray:
        """Scaled point lambda = W z (flat)."""
        return self.apply(z)


class _BlockStructure:
    """Separable sparsity pattern of the reduced cone matrix.

    The beamforming subproblems share one shape: a stack of equal-size cones
    where all but a few are coordinate selectors -- their body rows each pick
    out one private column, the private columns tile the variables, and the
    leading row touches at most a single column shared across cones (the
    feasibility slack).  For that shape the normal matrix G' W^-2 G is block
    diagonal with a closed-form identity-plus-rank-one block per selector
    cone, corrected by a low-rank term from the leftover dense cones and the
    shared column.  Its inverse then applies through per-block
    Sherman-Morrison formulas and a small Woodbury core, instead of a dense
    Cholesky of the full normal matrix each iteration.

    `detect` returns None whenever the pattern does not hold, and the solver
    keeps its general path; `factor` likewise falls back on any numerical
    trouble, so the fast path never widens the set of solvable programs, it
    only accelerates them.
    """

    def __init__(self, G: np.ndarray, k: int, pow_idx: np.ndarray,
                 cols: np.ndarray, vals: np.ndarray, betas: np.ndarray,
                 gen: list[int], t_col: int | None):
        self.G = G
        self.n = G.shape[1]
        self.num_cones = G.shape[0] // k
        self.k = k
        self.pow_idx = pow_idx   # positions of selector cones in the stack
        self.cols = cols         # (P, k-1) private column of each body row
        self.vals = vals         # (P,) uniform body coefficient
        self.betas = betas       # (P,) leading-row coefficient, 0 if absent
        self.gen = gen           # positions of the leftover dense cones
        self.t_col = t_col       # shared column index, or None

    @staticmethod
    def detect(G: np.ndarray, dims: list[int]) -> "_BlockStructure | None":
        if len(dims) < 4 or len(set(dims)) != 1:
            return None
        k = dims[0]
        if k < 2:
            return None
        n = G.shape[1]
        body_rows = np.arange(k - 1)
        sel = []
        gen: list[int] = []
        for i in range(len(dims)):
            blk = G[i * k:(i + 1) * k]
            rr, cc = np.nonzero(blk[1:])
            if (rr.size == k - 1 and np.array_equal(rr, body_rows)
                    and np.unique(cc).size == k - 1):
                vv = blk[1:][body_rows, cc]
                if vv[0] != 0.0 and np.all(vv == vv[0]):
                    lead = np.nonzero(blk[0])[0]
                    if lead.size == 0:
                        sel.append((i, cc, vv[0], 0.0, None))
                        continue
                    if lead.size == 1:
                        sel.append((i, cc, vv[0], blk[0, lead[0]], int(lead[0])))
                        continue
            gen.append(i)
            if len(gen) * k > 24:
                return None
        if len(sel) < 4:
            return None
        shared = {t for *_, t in sel if t is not None}
        if len(shared) > 1:
            return None
        t_col = shared.pop() if shared else None
        cols = np.array([cc for _, cc, _, _, _ in sel])
        counts = np.bincount(cols.ravel(), minlength=n)
        if t_col is not None:
            counts[t_col] += 1
        # private columns plus the shared one must tile the variables exactly
        if counts.size != n or not np.all(counts == 1):
            return None
        return _BlockStructure(
            G, k,
            pow_idx=np.array([i for i, _, _, _, _ in sel]),
            cols=cols,
            vals=np.array([v for _, _, v, _, _ in sel]),
            betas=np.array([b for _, _, _, b, _ in sel]),
            gen=gen, t_col=t_col)

    def gmul(self, u: np.ndarray) -> np.ndarray:
        """G @ u using the selector pattern."""
        out = np.empty(self.num_cones * self.k)
        ov = out.reshape(self.num_cones, self.k)
        ov[self.pow_idx, 0] = 0.0 if self.t_col is None else self.betas * u[self.t_col]
        ov[self.pow_idx, 1:] = self.vals[:, None] * u[self.cols]
        for i in self.gen:
            ov[i] = self.G[i * self.k:(i + 1) * self.k] @ u
        return out

    def gtmul(self, t: np.ndarray) -> np.ndarray:
        """G' @ t using the selector pattern."""
        tv = t.reshape(self.num_cones, self.k)
        out = np.zeros(self.n)
        out[self.cols] = self.vals[:, None] * tv[self.pow_idx, 1:]
        if self.t_col is not None:
            out[self.t_col] = float(self.betas @ tv[self.pow_idx, 0])
        for i in self.gen:
            out += tv[i] @ self.G[i * self.k:(i + 1) * self.k]
        return out

    def factor(self, W: _Scaling):
        """Closed-form inverse of G' W^-2 G + delta I for the current scaling.

        Returns a ksolve_base callable, or None to signal the dense fallback.
        A selector cone with body coefficient a and scaling point v contributes
        (a^2/eta^2)(I + (4 v'v + 4) v1 v1') on its private columns, the
        shared column couples through rank-two border terms, and the dense
        cones enter as an explicit low-rank correction.
        """
        v = W.v[0][self.pow_idx]
        jv = W.jv[0][self.pow_idx]
        eta2 = W.eta[0][self.pow_idx] ** 2
        tau = np.einsum("pk,pk->p", v, v)
        v0 = v[:, 0]
        v1 = v[:, 1:]
        n1 = np.einsum("pk,pk->p", v1, v1)
        a2 = self.vals ** 2 / eta2
        gam = 4.0 * tau + 4.0
        trace = float(np.sum(a2 * (self.k - 1 + gam * n1)))

        ucols = []
        for i in self.gen:
            rows = self.G[i * self.k:(i + 1) * self.k]
            jvr = W.jv[0][i]
            jrows = rows.copy()
            jrows[1:] = -jrows[1:]
            R = (2.0 * np.outer(jvr, jvr @ rows) - jrows) / W.eta[0][i]
            trace += float(np.sum(R * R))
            ucols.append(R.T)

        d_t0 = 0.0
        if self.t_col is not None:
            lead_diag = (1.0 + 4.0 * v0 * v0 * (tau - 1.0)) / eta2
            d_t0 = float(np.sum(self.betas ** 2 * lead_diag))
            trace += d_t0

        delta = 1e-12 * (trace / self.n + 1.0)
        cm = a2 + delta
        rho = a2 * gam
        fac = rho / (cm + rho * n1)
        if not (np.all(np.isfinite(fac)) and np.all(cm > 0.0)):
            return None
        d_t = d_t0 + delta
        if self.t_col is not None:
            if not (np.isfinite(d_t) and d_t > 0.0):
                return None
            bvec = np.zeros(self.n)
            bvec[self.cols] = ((self.vals * self.betas * -4.0 * tau * v0 / eta2)[:, None]
                               * v1)
            e_t = np.zeros(self.n)
            e_t[self.t_col] = 1.0
            ucols += [bvec[:, None], e_t[:, None]]

        cols = self.cols
        t_col = self.t_col

        def di(x: np.ndarray) -> np.ndarray:
            """Apply the inverse of the block-diagonal part."""
            y = np.empty_like(x)
            xb = x[cols]
            if x.ndim == 1:
                t = np.einsum("pk,pk->p", v1, xb)
                y[cols] = (xb - fac[:, None] * t[:, None] * v1) / cm[:, None]
            else:
                t = np.einsum("pk,pkq->pq", v1, xb)
                y[cols] = ((xb - fac[:, None, None] * v1[:, :, None] * t[:, None, :])
                           / cm[:, None, None])
            if t_col is not None:
                y[t_col] = x[t_col] / d_t
            return y

        if ucols:
            U = np.hstack(ucols)
            # near convergence an active dense cone makes its correction rows
            # huge; normalizing the columns keeps the Woodbury core from
            # drowning the rest of the system in rounding error
            cn = np.sqrt(np.einsum("np,np->p", U, U))
            cn[cn < 1e-300] = 1.0
            U = U / cn
            DiU = di(U)
            core = np.diag(1.0 / cn ** 2)
            if t_col is not None:
                # border columns [b, e_t] enter as b e' + e b'
                cross = 1.0 / (cn[-2] * cn[-1])
                core[-2:, -2:] = [[0.0, cross], [cross, 0.0]]
            try:
                Minv = np.linalg.inv(core + U.T @ DiU)
            except np.linalg.LinAlgError:
                return None
            if not np.all(np.isfinite(Minv)):
                return None

            def kinv(r: np.ndarray) -> np.ndarray:
                yr = di(r)
                return yr - DiU @ (Minv @ (U.T @ yr))
        else:
            kinv = di

        def ksolve_base(a: np.ndarray, bb: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
            u = kinv(a + self.gtmul(W.apply_inv2(bb)))
            v_out = W.apply_inv2(self.gmul(u) - bb)
            return u, v_out

        return ksolve_base


# ---------------------------------------------------------------------------
# Core interior-point loop on the homogeneous self-dual embedding of
#     minimize c'y  s.t.  G y + s = h,  s in K.
# ---------------------------------------------------------------------------

def _ipm(G: np.ndarray, h: np.ndarray, c: np.ndarray, dims: list[int],
         tol: float, max_iter: int,
         struct: _BlockStructure | None = None) -> dict:
    m, ny = G.shape
    groups = _Groups(dims)
    # s and z take identical step-length computations; a doubled grouping lets
    # both run in one vectorized pass
    pair_groups = _Groups(dims + dims)
    e_cone = groups.identity()

    y = np.zeros(ny)
    s = e_cone.copy()
    z = e_cone.copy()
    tau = 1.0
    kappa = 1.0
    nu = groups.num_cones + 1.0

    norm_h = max(1.0, float(np.linalg.norm(h)))
    norm_c = max(1.0, float(np.linalg.norm(c)))

    out = {"status": ConeStatus.MAX_ITER, "iterations": 0,
           "pres": np.inf, "dres": np.inf, "gap": np.inf}

    for it in range(max_iter):
        res_p = G @ y + s - h * tau
        res_d = G.T @ z + c * tau
        res_g = -c @ y - h @ z - kappa
        mu = (s @ z + tau * kappa) / nu

        pres = np.linalg.norm(res_p) / (tau * norm_h)
        dres = np.linalg.norm(res_d) / (tau * norm_c)
        gap = (s @ z) / tau ** 2
        pobj = c @ y / tau
        relgap = gap / max(1.0, abs(pobj))
        out.update(iterations=it, pres=float(pres), dres=float(dres), gap=float(gap))

        if pres <= tol and dres <= tol and (gap <= tol or relgap <= tol):
            out.update(status=ConeStatus.OPTIMAL, y=y / tau, s=s / tau, z=z / tau)
            return out
        hz = h @ z
        if hz < -1e-14:
            zc = z / (-hz)
            if np.linalg.norm(G.T @ zc) <= tol * (1.0 + norm_c):
                out.update(status=ConeStatus.INFEASIBLE, z_cert=zc)
                return out
        cy = c @ y
        if cy < -1e-14:
            xc = y / (-cy)
            if groups.in_cone_residual(-G @ xc) <= tol * (1.0 + norm_h):
                out.update(status=ConeStatus.UNBOUNDED, ray=xc)
                return out

        W = _Scaling(groups, s, z)
        if not W.ok:
            out.update(status=ConeStatus.NUMERICAL)
            return out
        lam = W.lmbda(z)
        lam_g = groups.views(lam)

        def dense_base():
            WiG = W.apply_inv_mat(G)
            gram = WiG.T @ WiG
            delta = 1e-12 * (np.trace(gram) / ny + 1.0)
            try:
                L = np.linalg.cholesky(gram + delta * np.eye(ny))
            except np.linalg.LinAlgError:
                try:
                    L = np.linalg.cholesky(
                        gram + 1e-6 * np.trace(gram) / ny * np.eye(ny))
                except np.linalg.LinAlgError:
                    return None

            # np.linalg.solve would refactor L from scratch on every call, so
            # invert the (small, well-scaled) Cholesky factor once and reduce
            # the inner solves to matvecs
            Linv = np.linalg.inv(L)

            def base(a: np.ndarray, bb: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
                wibb = W.apply_inv(bb)
                u = Linv.T @ (Linv @ (a + WiG.T @ wibb))
                v = W.apply_inv(WiG @ u - wibb)
                return u, v

            return base

        ksolve_base = struct.factor(W) if struct is not None else None
        fast = ksolve_base is not None
        if not fast:
            ksolve_base = dense_base()
            if ksolve_base is None:
                out.update(status=ConeStatus.NUMERICAL)
                return out

        # The normal equations get badly conditioned once mu is small;
        # iterative refinement then recovers the lost digits at the cost of a
        # few matvecs per round.  The dense factorization only needs it in
        # the endgame.  The block factorization is verified on its first
        # solve of the iteration -- its accuracy depends on the scaling, not
        # the right-hand side -- and replaced by the dense one if degraded.
        trusted = False

        def ksolve(a: np.ndarray, bb: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
            nonlocal ksolve_base, fast, trusted
            u, v = ksolve_base(a, bb)
            if fast:
                rounds = 0 if trusted and mu >= 1e-5 else 4
            else:
                rounds = 2 if mu < 1e-5 else 0
            if rounds == 0:
                return u, v
            scale = 1.0 + max(np.max(np.abs(a)), np.max(np.abs(bb)))
            worst = np.inf
            for _ in range(rounds):
                ra = a - G.T @ v
                rb = bb - (G @ u - W.apply(W.apply(v)))
                prev = worst
                worst = max(np.max(np.abs(ra)), np.max(np.abs(rb)))
                # stop at convergence or at the regularization floor, where
                # further rounds just bounce around
                if worst < 1e-14 * scale or worst > 0.3 * prev:
                    break
                du, dv = ksolve_base(ra, rb)
                u = u + du
                v = v + dv
            if fast:
                if worst < 1e-5 * scale:
                    # dense-equivalent quality; remember the factorization is
                    # sound so later solves this iteration skip the check
                    trusted = worst < 1e-10 * scale
                else:
                    # refinement failed outright; redo this and all remaining
                    # solves of the iteration densely
                    fb = dense_base()
                    if fb is not None:
                        fast = False
                        ksolve_base = fb
                        return ksolve(a, bb)
            return u, v

        u1, v1 = ksolve(-c, h)
        denom = kappa / tau - c @ u1 - h @ v1

        def direction(ds_rhs: np.ndarray, dk_rhs: float, lin_scale: float):
            w_ds = W.apply(ds_rhs)
            a = -lin_scale * res_d
            bp = -lin_scale * res_p - w_ds
            bg = -lin_scale * res_g + dk_rhs / tau
            u2, v2 = ksolve(a, bp)
            dtau = (bg + c @ u2 + h @ v2) / denom
            dy = u2 + dtau * u1
            dz = v2 + dtau * v1
            ds = W.apply(ds_rhs - W.apply(dz))
            dkap = (dk_rhs - kappa * dtau) / tau
            return dy, dz, ds, dtau, dkap

        # predictor (affine direction)
        dy_a, dz_a, ds_a, dt_a, dk_a = direction(-lam, -tau * kappa, 1.0)
        alpha = _max_step(pair_groups.views(np.concatenate([s, z])),
                          pair_groups.views(np.concatenate([ds_a, dz_a])))
        if dt_a < 0.0:
            alpha = min(alpha, -tau / dt_a)
        if dk_a < 0.0:
            alpha = min(alpha, -kappa / dk_a)
        alpha_aff = min(1.0, alpha)
        sigma = (1.0 - alpha_aff) ** 3

        # corrector (combined direction)
        corr = _jmul_flat(groups, W.apply_inv(ds_a), W.apply(dz_a))
        d_comp = sigma * mu * e_cone - _jmul_flat(groups, lam, lam) - corr
        ds_rhs = _jsolve_flat(groups, lam_g, d_comp)
        dk_rhs = sigma * mu - tau * kappa - dt_a * dk_a
        dy, dz, ds, dtau, dkap = direction(ds_rhs, dk_rhs, 1.0 - sigma)

        alpha = _max_step(pair_groups.views(np.concatenate([s, z])),
                          pair_groups.views(np.concatenate([ds, dz])))
        if dtau < 0.0:
            alpha = min(alpha, -tau / dtau)
        if dkap < 0.0:
            alpha = min(alpha, -kappa / dkap)
        if not np.isfinite(alpha) or alpha <= 1e-13:
            out.update(status=ConeStatus.NUMERICAL)
            return out
        step = min(1.0, _STEP_FRAC * alpha)

        y = y + step * dy
        z = z + step * dz
        s = s + step * ds
        tau = tau + step * dtau
        kappa = kappa + step * dkap

    out.update(status=ConeStatus.MAX_ITER, y=y / tau, s=s / tau, z=z / tau,
               iterations=max_iter)
    return out


def _jmul_flat(groups: _Groups, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    out = np.empty_like(u)
    for (s0, g, k), uu, vv in zip(groups.blocks, groups.views(u), groups.views(v)):
        out[s0:s0 + g * k] = _jmul(uu, vv).reshape(-1)
    return out


def _jsolve_flat(groups: _Groups, lam_g: list[np.ndarray], rhs: np.ndarray) -> np.ndarray:
    out = np.empty_like(rhs)
    for (s0, g, k), lm, rr in zip(groups.blocks, lam_g, groups.views(rhs)):
        out[s0:s0 + g * k] = _jsolve(lm, rr).reshape(-1)
    return out


# ---------------------------------------------------------------------------
# Public solver entry points
# ---------------------------------------------------------------------------

def _eliminate_equalities(p: ConeProgram):
    """Particular solution x0 and orthonormal null basis Z for the equality rows.

    Returns (x0, Z, consistent); Z is None when there are no equalities
    (identity transform implied).
    """
    n = p.n
    if not p.eqs:
        return np.zeros(n), None, True
    A = np.vstack([a for a, _ in p.eqs])
    r = np.array([v for _, v in p.eqs])
    U, sv, Vt = np.linalg.svd(A, full_matrices=True)
    tol_r = sv[0] * max(A.shape) * np.finfo(float).eps if sv.size else 0.0
    rank = int(np.sum(sv > tol_r))
    x0 = Vt[:rank].T @ ((U[:, :rank].T @ r) / sv[:rank]) if rank else np.zeros(n)
    consistent = np.linalg.norm(A @ x0 - r) <= 1e-9 * (1.0 + np.linalg.norm(r))
    Z = Vt[rank:].T
    return x0, Z, consistent


def _prevalidated(c: np.ndarray, socs: list, eqs: list) -> ConeProgram:
    """Assemble a ConeProgram from data already known to be consistent.

    Skips the defensive copies/checks of __post_init__; for internal use on
    the hot path (feasibility probes and iteration subproblems), where the
    arrays come straight out of previously validated programs.
    """
    p = ConeProgram.__new__(ConeProgram)
    p.c = c
    p.socs = socs
    p.eqs = eqs
    return p


def _failed(status: ConeStatus, n: int, iterations: int = 0,
            residuals: dict | None = None) -> ConeSolution:
    return ConeSolution(status=status, x=np.zeros(n), objective_value=float("nan"),
                        iterations=iterations, residuals=residuals or {})


def solve(p: ConeProgram, tol: float = DEFAULT_TOL,
          max_iter: int = DEFAULT_MAX_ITER) -> ConeSolution:
    """Solve the cone program; deterministic for identical inputs."""
    sol = _solve_impl(p, tol, max_iter)
    counters.solves += 1
    counters.iterations += sol.iterations
    if sol.status in (ConeStatus.NUMERICAL, ConeStatus.MAX_ITER):
        counters.failures += 1
    return sol


def _solve_impl(p: ConeProgram, tol: float, max_iter: int) -> ConeSolution:
    n = p.n
    x0, Z, consistent = _eliminate_equalities(p)
    if not consistent:
        return _failed(ConeStatus.INFEASIBLE, n)

    ny = n if Z is None else Z.shape[1]
    if ny == 0:
        # fully determined by the equalities
        soc_v, eq_v = p.max_violation(x0)
        ok = soc_v <= 1e-9 * (1.0 + max(abs(s.e) for s in p.socs) if p.socs else 1.0)
        status = ConeStatus.OPTIMAL if ok else ConeStatus.INFEASIBLE
        if status is ConeStatus.OPTIMAL:
            return ConeSolution(status, x0, float(p.c @ x0), 0,
                                {"primal": 0.0, "dual": 0.0, "gap": 0.0,
                                 "cone": soc_v, "eq": eq_v})
        return _failed(status, n)

    if not p.socs:
        # unconstrained after elimination: bounded only for a vanishing objective
        cz = p.c if Z is None else Z.T @ p.c
        if np.linalg.norm(cz) <= tol:
            return ConeSolution(ConeStatus.OPTIMAL, x0, float(p.c @ x0), 0,
                                {"primal": 0.0, "dual": 0.0, "gap": 0.0,
                                 "cone": 0.0, "eq": 0.0})
        return _failed(ConeStatus.UNBOUNDED, n)

    # reduced cone data, one row block [ -d' ; -A ] per cone, rhs [e ; b]
    reduced = []
    for soc in p.socs:
        if Z is None:
            At, dt = soc.A, soc.d
            bt = soc.b
            et = soc.e
        else:
            At = soc.A @ Z
            dt = Z.T @ soc.d
            bt = soc.A @ x0 + soc.b
            et = float(soc.d @ x0 + soc.e)
        reduced.append((At, bt, dt, et))

    order = sorted(range(len(reduced)), key=lambda i: reduced[i][0].shape[0])
    dims = []
    g_rows = []
    h_rows = []
    for i in order:
        At, bt, dt, et = reduced[i]
        blk = np.vstack([-dt[None, :], -At])
        rhs = np.concatenate([[et], bt])
        scale = max(np.max(np.abs(blk)), np.max(np.abs(rhs)), 1e-12)
        g_rows.append(blk / scale)
        h_rows.append(rhs / scale)
        dims.append(At.shape[0] + 1)
    G = np.vstack(g_rows)
    h = np.concatenate(h_rows)

    c_red = -(p.c if Z is None else Z.T @ p.c)  # minimize internally
    rho_c = max(1.0, float(np.linalg.norm(c_red)))

    struct = _BlockStructure.detect(G, dims)
    info = _ipm(G, h, c_red / rho_c, dims, tol, max_iter, struct)
    status = info["status"]
    iters = info["iterations"]
    residuals = {"primal": info["pres"], "dual": info["dres"], "gap": info["gap"]}

    if status in (ConeStatus.OPTIMAL, ConeStatus.MAX_ITER) and "y" in info:
        y = info["y"]
        x = x0 + (y if Z is None else Z @ y)
        soc_v, eq_v = p.max_violation(x)
        residuals.update(cone=soc_v, eq=eq_v)
        if status is ConeStatus.OPTIMAL:
            scale = 1.0 + max((abs(s.margin(x)) + abs(s.e) for s in p.socs), default=1.0)
            if soc_v > 10.0 * tol * scale:
                status = ConeStatus.NUMERICAL
        return ConeSolution(status, x, float(p.c @ x), iters, residuals)
    return _failed(status, n, iters, residuals)


def solve_feasibility(p: ConeProgram, feas_tol: float = FEAS_TOL,
                      tol: float = DEFAULT_TOL,
                      max_iter: int = DEFAULT_MAX_ITER) -> FeasibilityResult:
    """Decide feasibility of the constraints of `p` by maximizing a shared slack.

    The objective of `p` is ignored (pass zeros); each cone becomes
    ||A x + b|| <= d'x + e - t and t is maximized.  The constraint system is
    declared feasible when the optimal slack clears feas_tol*(1 + max|e|);
    a slack inside the +/- threshold band is flagged `marginal` (and not
    feasible), keeping downstream bisection conservative.
    """
    n = p.n
    socs = []
    for soc in p.socs:
        A = np.hstack([soc.A, np.zeros((soc.A.shape[0], 1))])
        d = np.concatenate([soc.d, [-1.0]])
        socs.append(SocConstraint(A, soc.b, d, soc.e))
    eqs = [(np.concatenate([a, [0.0]]), r) for a, r in p.eqs]
    c = np.zeros(n + 1)
    c[-1] = 1.0
    slack_prog = _prevalidated(c, socs, eqs)
    sol = solve(slack_prog, tol=tol, max_iter=max_iter)

    e_scale = max((abs(s.e) for s in p.socs), default=0.0)
    threshold = feas_tol * (1.0 + e_scale)

    if sol.status is ConeStatus.UNBOUNDED:
        # slack can grow without bound => strictly feasible; keep the ray point
        x = sol.x[:n]
        return FeasibilityResult(True, False, float("inf"), x, sol)
    if sol.status is not ConeStatus.OPTIMAL:
        return FeasibilityResult(False, False, float("-inf"), np.zeros(n), sol)
    t = float(sol.x[-1])
    feasible = t >= threshold
    marginal = abs(t) < threshold
    return FeasibilityResult(feasible, marginal, t, sol.x[:n], sol)


def dump_program(p: ConeProgram, path) -> None:
    """Write the program to a plain-text canonical form for external cross-checks."""
    with open(path, "w") as fh:
        fh.write(f"# maximize c'x ; {len(p.socs)} SOCs ; {len(p.eqs)} equalities\n")
        fh.write(f"n {p.n}\n")
        fh.write("c " + " ".join(f"{v:.17g}" for v in p.c) + "\n")
        for i, soc in enumerate(p.socs):
            fh.write(f"soc {i} k {soc.A.shape[0]} e {soc.e:.17g}\n")
            for row in soc.A:
                fh.write("A " + " ".join(f"{v:.17g}" for v in row) + "\n")
            fh.write("b " + " ".join(f"{v:.17g}" for v in soc.b) + "\n")
            fh.write("d " + " ".join(f"{v:.17g}" for v in soc.d) + "\n")
        for a, r in p.eqs:
            fh.write("eq " + " ".join(f"{v:.17g}" for v in a) + f" = {r:.17g}\n")


# ---------------------------------------------------------------------------
# Complex -> real embedding
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ComplexEmbedding:
    """Bijection between w in C^{M*N} and x in R^{2*M*N}.

    Block m (one AP) occupies x[2N*m : 2N*(m+1)] as [Re w_m ; Im w_m], so the
    per-AP power constraint is a plain coordinate-selector cone and complex
    inner products become two real rows.
    """

    num_aps: int
    antennas_per_ap: int

    def __post_init__(self):
        if self.num_aps < 1 or self.antennas_per_ap < 1:
            raise ValueError("need at least one AP and one antenna")

    @property
    def n(self) -> int:
        return 2 * self.num_aps * self.antennas_per_ap

    def block(self, m: int) -> slice:
        w = 2 * self.antennas_per_ap
        return slice(w * m, w * (m + 1))

    def to_real(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=complex).ravel()
        N = self.antennas_per_ap
        x = np.empty(self.n)
        for m in range(self.num_aps):
            blk = w[m * N:(m + 1) * N]
            x[2 * N * m:2 * N * m + N] = blk.real
            x[2 * N * m + N:2 * N * (m + 1)] = blk.imag
        return x

    def to_complex(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float).ravel()
        N = self.antennas_per_ap
        w = np.empty(self.num_aps * N, dtype=complex)
        for m in range(self.num_aps):
            re = x[2 * N * m:2 * N * m + N]
            im = x[2 * N * m + N:2 * N * (m + 1)]
            w[m * N:(m + 1) * N] = re + 1j * im
        return w

    def functional_rows(self, a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Rows (re, im) with a^H w = re@x + 1j*(im@x)."""
        a = np.asarray(a, dtype=complex).ravel()
        N = self.antennas_per_ap
        re = np.empty(self.n)
        im = np.empty(self.n)
        for m in range(self.num_aps):
            blk = a[m * N:(m + 1) * N]
            re[2 * N * m:2 * N * m + N] = blk.real
            re[2 * N * m + N:2 * N * (m + 1)] = blk.imag
            im[2 * N * m:2 * N * m + N] = -blk.imag
            im[2 * N * m + N:2 * N * (m + 1)] = blk.real
        return re, im

    def power_soc(self, m: int, power: float) -> SocConstraint:
        """||w_m|| <= sqrt(power) as a selector cone on block m."""
        if power <= 0:
            raise ValueError("per-AP power must be positive")
        k = 2 * self.antennas_per_ap
        A = np.zeros((k, self.n))
        A[np.arange(k), np.arange(self.block(m).start, self.block(m).stop)] = 1.0
        return SocConstraint(A, np.zeros(k), np.zeros(self.n), float(np.sqrt(power)))

    def im_zero_eq(self, g: np.ndarray) -> tuple[np.ndarray, float]:
        """Equality row Im{g^H w} = 0."""
        _, im = self.functional_rows(g)
        return im, 0.0


def embed(num_aps: int, antennas_per_ap: int) -> ComplexEmbedding:
    return ComplexEmbedding(num_aps, antennas_per_ap)
