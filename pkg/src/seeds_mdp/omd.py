"""Mirror-descent step for occupancy measures.

The update is the unconstrained multiplicative step followed by the
unnormalized-KL projection onto the occupancy polytope. With known
transitions the projection is solved in the dual over one potential per
internal state (the objective is a sum of per-layer log-partition functions,
minimised by damped Newton). With confidence-set constraints it is solved by
Bregman-Dykstra alternation between the flow polytope (same dual solver, in
triple coordinates) and the per-row transition intervals (closed form).
"""
from __future__ import annotations

from dataclasses import dataclass

from functools import lru_cache

import numpy as np

from .occupancy import OccupancyMeasure, TripleOccupancy, validate_occupancy

DEFAULT_TOL = 1e-9
MAX_ITER = 10_000
CLIP_FLOOR = 1e-12


@dataclass(frozen=True)
class ProjectionReport:
    iterations: int
    residual: float
    gap_bound: float
    converged: bool = True


class ProjectionError(RuntimeError):
    def __init__(self, message: str, report: ProjectionReport):
        super().__init__(f"{message} (iterations={report.iterations}, residual={report.residual:.3e})")
        self.report = report


def multiplicative_update(q_prev, lhat, eta: float):
    """Unconstrained minimiser of eta <q, lhat> + KL(q || q_prev).

    Works on pair tables (``OccupancyMeasure`` or ``(N, A)`` arrays) and on
    triple occupancies, where the pair loss is broadcast over next states.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    lhat = np.asarray(lhat, dtype=float)
    if isinstance(q_prev, TripleOccupancy):
        blocks, off = [], 0
        for b in q_prev.q3:
            n = b.shape[0]
            blocks.append(b * np.exp(-eta * lhat[off : off + n])[:, :, None])
            off += n
        return tuple(blocks)
    q = q_prev.q if isinstance(q_prev, OccupancyMeasure) else np.asarray(q_prev, dtype=float)
    return q * np.exp(-eta * lhat)


def _logsumexp(w):
    m = w.max()
    if not np.isfinite(m):
        return m
    return m + np.log(np.exp(w - m).sum())


class _FlowDual:
    """Dual of the KL projection onto {per-layer normalization, flow balance}.

    Coordinates are grouped by layer; ``B`` maps potentials of internal
    states to additive shifts of the log-weights. The primal solution is
    ``softmax_layer(logw + B v)`` and the dual objective is the sum of the
    per-layer log-partition functions, whose gradient is the flow residual.
    """

    def __init__(self, layers, B):
        self.layers = layers  # slices of the flat coordinate vector, one per layer
        self.B = B

    def log_primal(self, logw, v):
        w = logw + self.B @ v
        out = np.full_like(w, -np.inf)
        for idx in self.layers:
            out[idx] = w[idx] - _logsumexp(w[idx])
        return out

    def primal(self, logw, v):
        w = logw + self.B @ v
        out = np.zeros_like(w)
        value = 0.0
        for idx in self.layers:
            lz = _logsumexp(w[idx])
            out[idx] = np.exp(w[idx] - lz)
            value += lz
        return out, value

    def _search(self, logw, v, phi, step, slope):
        t = 1.0
        while t >= 1e-20:
            q_new, phi_new = self.primal(logw, v + t * step)
            # slack: near the optimum phi changes below its rounding error
            if phi_new <= phi + 1e-4 * t * slope + 1e-15 * (1.0 + abs(phi)):
                return t, q_new, phi_new
            t *= 0.5
        return None

    def _coordinate_sweep(self, logw, v, tol):
        """Exact minimisation along each potential in turn (bisection on the
        monotone partial derivative). Handles saturated layers, where the
        Hessian is numerically zero and Newton stalls."""
        v = v.copy()
        for j in range(v.size):
            col = self.B[:, j]

            def deriv(t):
                w = v.copy()
                w[j] += t
                return col @ self.primal(logw, w)[0]

            g0 = deriv(0.0)
            if abs(g0) < tol:
                continue
            sign = -1.0 if g0 > 0 else 1.0
            lo, hi = 0.0, sign
            while np.sign(deriv(hi)) == np.sign(g0) and abs(hi) < 1e15:
                lo, hi = hi, 2 * hi
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                g = deriv(mid)
                if abs(g) < 0.1 * tol or mid in (lo, hi):
                    break
                if np.sign(g) == np.sign(g0):
                    lo = mid
                else:
                    hi = mid
            v[j] += mid
        return v

    def solve(self, logw, v0, tol, max_iter):
        """Minimise the dual from ``v0``; returns ``(q, v, residual, iterations)``.

        ``self.stalled`` is set when no descent step can be found before the
        residual drops below ``tol``.
        """
        v = v0.copy()
        q, phi = self.primal(logw, v)
        k = 0
        self.stalled = False
        if self.B.shape[1] == 0:
            return q, v, 0.0, 0
        grad = self.B.T @ q
        while np.abs(grad).max() >= tol and k < max_iter:
            k += 1
            hess = np.zeros((v.size, v.size))
            for idx in self.layers:
                Bh = self.B[idx]
                p = q[idx]
                mean = p @ Bh
                hess += (Bh * p[:, None]).T @ Bh - np.outer(mean, mean)
            newton = -np.linalg.lstsq(hess, grad, rcond=1e-12)[0]
            found = None
            for step in (newton, -grad):
                with np.errstate(invalid="ignore", over="ignore"):
                    slope = grad @ step
                if np.isfinite(slope) and slope < 0:
                    found = self._search(logw, v, phi, step, slope)
                    if found is not None:
                        break
            if found is None:
                self.stalled = True
                break
            t, q_new, phi_new = found
            if t == 1.0:
                # saturated softmax: the local model underestimates the step
                while t < 1e12:
                    q_try, phi_try = self.primal(logw, v + 2 * t * step)
                    if not phi_try < phi_new:
                        break
                    t, q_new, phi_new = 2 * t, q_try, phi_try
            v = v + t * step
            q, phi = q_new, phi_new
            prev = np.abs(grad).max()
            grad = self.B.T @ q
            if np.abs(grad).max() > 0.5 * prev:
                v = self._coordinate_sweep(logw, v, tol)
                q, phi = self.primal(logw, v)
                grad = self.B.T @ q
        return q, v, float(np.abs(grad).max()), k


def _prune(logw, src, dst, n_internal):
    """Zero out coordinates touching internal states that cannot carry flow.

    ``src``/``dst`` give, per coordinate, the internal index of its source
    and of each next state it can feed (``-1`` for s_0 / s_H). A state is dead
    if no live coordinate flows into it or none flows out of it.
    """
    live = np.isfinite(logw)
    if n_internal == 0:
        return live
    while True:
        has_out = np.zeros(n_internal, dtype=bool)
        has_in = np.zeros(n_internal, dtype=bool)
        s = src[live]
        has_out[s[s >= 0]] = True
        for col in range(dst.shape[1]):
            d = dst[live, col]
            has_in[d[d >= 0]] = True
        dead = ~(has_in & has_out)
        touch = ((src >= 0) & dead[np.maximum(src, 0)]) | ((dst >= 0) & dead[np.maximum(dst, 0)]).any(axis=1)
        newly = live & touch
        if not newly.any():
            return live
        live &= ~touch


def _flow_residual(q, st):
    norm = max(abs(q[idx].sum() - 1.0) for idx in st.layers)
    flow = float(np.abs(st.B.T @ q).max()) if st.B.shape[1] else 0.0
    return max(norm, flow)


def _clip_floor(q, layers, live):
    low = live & (q < CLIP_FLOOR)
    if not low.any():
        return q
    q = q.copy()
    q[low] = CLIP_FLOOR
    for idx in layers:
        q[idx] /= q[idx].sum()
    return q


def _kl(q, log_ref):
    live = q > 0
    return float(np.sum(q[live] * (np.log(q[live]) - log_ref[live])) - q.sum() + np.exp(log_ref).sum())


class _PairStructure:
    def __init__(self, mdp):
        N, A = mdp.shape
        internal = np.full(N + 1, -1)
        n_int = N - 1  # states of layers 1..H-1
        internal[1:N] = np.arange(n_int)
        B = np.zeros((N * A, n_int))
        max_next = max(mdp.layer_sizes[1:])
        dst = np.full((N * A, max_next), -1)
        for h in range(mdp.H):
            sl = mdp.layer_slice(h)
            for s in range(sl.start, sl.stop):
                for a in range(A):
                    x = s * A + a
                    if h >= 1:
                        B[x, internal[s]] += 1.0
                    if h + 1 < mdp.H:
                        nxt = mdp.offsets[h + 1] + np.arange(mdp.layer_sizes[h + 1])
                        B[x, internal[nxt]] -= mdp.P[h][s - sl.start, a]
                        reach = mdp.P[h][s - sl.start, a] > 0
                        dst[x, : reach.sum()] = internal[nxt[reach]]
        self.src = np.repeat(internal[:N], A)
        self.dst = dst
        self.B = B
        self.n_internal = n_int
        self.layers = [slice(int(mdp.offsets[h]) * A, int(mdp.offsets[h + 1]) * A) for h in range(mdp.H)]


@lru_cache(maxsize=64)
def _pair_structure(mdp):
    return _PairStructure(mdp)


def project_known(q_tilde, mdp, tol: float = DEFAULT_TOL, *, log_weights=None, max_iter: int = MAX_ITER):
    """KL projection of an unnormalized pair table onto C(P).

    Pass ``log_weights`` (log of the table) instead of ``q_tilde`` to avoid
    underflow when eta * lhat is large. Returns ``(OccupancyMeasure, report)``.
    """
    if log_weights is None:
        qt = q_tilde.q if isinstance(q_tilde, OccupancyMeasure) else np.asarray(q_tilde, dtype=float)
        if np.any(qt < 0):
            raise ValueError("q_tilde must be nonnegative")
        with np.errstate(divide="ignore"):
            logw = np.log(qt).ravel()
    else:
        logw = np.asarray(log_weights, dtype=float).ravel().copy()
    if logw.size != mdp.n_states * mdp.n_actions:
        raise ValueError(f"table size {logw.size} does not match mdp shape {mdp.shape}")
    st = _pair_structure(mdp)
    live = _prune(logw, st.src, st.dst, st.n_internal)
    logw = np.where(live, logw, -np.inf)
    dual = _FlowDual(st.layers, st.B)
    q, v, resid, iters = dual.solve(logw, np.zeros(st.n_internal), tol, max_iter)
    q = _clip_floor(q, st.layers, live)
    occ = OccupancyMeasure(q.reshape(mdp.shape), mdp.layer_sizes)
    report_resid = _flow_residual(q, st)
    gap = abs(float(v @ (st.B.T @ q))) if v.size else 0.0
    report = ProjectionReport(iters, report_resid, gap, report_resid < tol)
    if not report.converged:
        raise ProjectionError("known-transition projection did not converge", report)
    return occ, report


class _TripleStructure:
    def __init__(self, layer_sizes, A):
        H = len(layer_sizes) - 1
        offsets = np.concatenate([[0], np.cumsum(layer_sizes)])
        def internal(h, s):
            # layers 1..H-1 only; s_0 is dropped from the numbering
            return offsets[h] - 1 + s if 1 <= h <= H - 1 else -1

        n_int = int(sum(layer_sizes[1:H]))
        sizes = [layer_sizes[h] * A * layer_sizes[h + 1] for h in range(H)]
        starts = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        B = np.zeros((starts[-1], n_int))
        src = np.full(starts[-1], -1)
        dst = np.full((starts[-1], 1), -1)
        for h in range(H):
            S, Sn = layer_sizes[h], layer_sizes[h + 1]
            s_idx, a_idx, t_idx = np.meshgrid(np.arange(S), np.arange(A), np.arange(Sn), indexing="ij")
            flat = starts[h] + np.arange(sizes[h])
            if h >= 1:
                cols = internal(h, 0) + s_idx.ravel()
                B[flat, cols] += 1.0
                src[flat] = cols
            if h + 1 <= H - 1:
                cols = internal(h + 1, 0) + t_idx.ravel()
                B[flat, cols] -= 1.0
                dst[flat, 0] = cols
        self.B, self.src, self.dst = B, src, dst
        self.n_internal = n_int
        self.layers = [slice(int(starts[h]), int(starts[h + 1])) for h in range(H)]
        self.starts = starts
        self.shapes = [(layer_sizes[h], A, layer_sizes[h + 1]) for h in range(H)]

    def flatten(self, blocks):
        return np.concatenate([np.asarray(b, dtype=float).ravel() for b in blocks])

    def unflatten(self, flat):
        return tuple(flat[self.starts[h] : self.starts[h + 1]].reshape(shape) for h, shape in enumerate(self.shapes))


@lru_cache(maxsize=64)
def _triple_structure(layer_sizes, A):
    return _TripleStructure(layer_sizes, A)


def _logsumexp_rows(x):
    m = x.max(axis=1)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return safe + np.log(np.exp(x - safe[:, None]).sum(axis=1))


def _project_rows(y_log, lo, hi):
    """KL projection of each row onto {x >= 0 : lo * sum(x) <= x <= hi * sum(x)}, in log space.

    ``y_log``, ``lo``, ``hi`` have shape ``(R, K)``. The row direction is the
    KL projection of the normalised row y_hat onto the box-capped simplex,
    p = clip(c * y_hat, lo, hi) with c fixed by sum(p) = 1; the row mass is
    then sum(y) * exp(-KL(p || y_hat)). Returns the log of the projection.
    """
    R, K = y_log.shape
    log_mass = _logsumexp_rows(y_log)
    alive = np.isfinite(log_mass)
    log_yh = np.where(alive[:, None], y_log - np.where(alive, log_mass, 0.0)[:, None], -np.inf)
    with np.errstate(divide="ignore"):
        log_lo, log_hi = np.log(lo), np.log(hi)
    with np.errstate(invalid="ignore"):
        cand = np.concatenate([log_lo - log_yh, log_hi - log_yh], axis=1)
    cand = np.where(np.isnan(cand) | (cand == np.inf), -np.inf, cand)
    cand = np.sort(cand, axis=1)

    def clipped(log_c):
        # log of clip(c * y_hat, lo, hi) for each candidate c, shape (R, M, K)
        with np.errstate(invalid="ignore"):
            x = log_c[..., None] + log_yh[:, None, :]
        x = np.where(np.isnan(x), -np.inf, x)
        return np.clip(x, log_lo[:, None, :], log_hi[:, None, :])

    f = np.exp(clipped(cand)).sum(axis=2)
    reach = f >= 1.0 - 1e-15
    k = np.where(reach.any(axis=1), np.argmax(reach, axis=1), 2 * K - 1)
    rows = np.arange(R)
    c1 = cand[rows, k]
    c0 = np.where(k > 0, cand[rows, np.maximum(k - 1, 0)], -np.inf)
    mid = np.where(np.isfinite(c0), 0.5 * (c0 + c1), c1 - 1.0)
    with np.errstate(invalid="ignore"):
        x_mid = mid[:, None] + log_yh
    free = (x_mid > log_lo) & (x_mid < log_hi) & np.isfinite(log_yh)
    fixed = np.where(free, 0.0, np.exp(np.clip(np.where(np.isnan(x_mid), -np.inf, x_mid), log_lo, log_hi))).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_c = np.log1p(-np.minimum(fixed, 1.0)) - _logsumexp_rows(np.where(free, log_yh, -np.inf))
    ok = free.any(axis=1) & (fixed < 1.0) & (k > 0) & np.isfinite(log_c)
    log_c = np.where(ok, log_c, c1)
    log_p = clipped(log_c[:, None])[:, 0, :]
    log_p = log_p - _logsumexp_rows(log_p)[:, None]
    p = np.exp(log_p)
    with np.errstate(invalid="ignore"):
        terms = np.where(p > 0, p * (log_p - log_yh), 0.0)
    kl = terms.sum(axis=1)
    out = log_p + (log_mass - kl)[:, None]
    return np.where(alive[:, None] & np.isfinite(kl)[:, None], out, -np.inf)


def _repair_rows(q, st, live, lo, hi):
    """After the positivity floor, rows of tiny mass can leave their
    transition intervals; give them a feasible direction with the same mass."""
    q = q.copy()
    for h, shape in enumerate(st.shapes):
        rows = q[st.layers[h]].reshape(shape[0] * shape[1], shape[2])
        l = lo[h].reshape(rows.shape)
        u = hi[h].reshape(rows.shape)
        m = rows.sum(axis=1)
        safe = np.where(m > 0, m, 1.0)[:, None]
        bad = (m > 0) & ((rows > u * safe + 1e-15 * safe) | (rows < l * safe - 1e-15 * safe)).any(axis=1)
        if not bad.any():
            continue
        with np.errstate(divide="ignore"):
            z = np.exp(_project_rows(np.log(rows[bad]), l[bad], u[bad]))
        rows[bad] = z / z.sum(axis=1, keepdims=True) * m[bad, None]
        rows[~live[st.layers[h]].reshape(rows.shape)] = 0.0
        q[st.layers[h]] = rows.ravel()
    return q


def _interval_violation(blocks, lo, hi):
    worst = 0.0
    for b, l, u in zip(blocks, lo, hi):
        m = b.sum(axis=2, keepdims=True)
        live = m[..., 0] > CLIP_FLOOR
        if not live.any():
            continue
        r = b[live] / m[live]
        worst = max(worst, float(np.maximum(r - u[live], l[live] - r).max()))
    return max(worst, 0.0)


def project_confidence(q3_tilde, cset, tol: float = DEFAULT_TOL, *, log_weights=None, max_iter: int = MAX_ITER):
    """KL projection of a triple table onto C(confidence set).

    Returns ``(TripleOccupancy, report)``. The report residual is the worst of
    the normalization, flow and transition-interval residuals.
    """
    lo, hi = cset.bounds()
    layer_sizes = tuple(b.shape[0] for b in lo) + (lo[-1].shape[2],)
    A = lo[0].shape[1]
    for l, u in zip(lo, hi):
        if np.any(l.sum(axis=2) > 1 + 1e-12) or np.any(u.sum(axis=2) < 1 - 1e-12):
            raise ProjectionError("confidence set has a row with no feasible distribution", ProjectionReport(0, np.inf, np.inf, False))
    st = _triple_structure(layer_sizes, A)
    if log_weights is None:
        blocks = q3_tilde.q3 if isinstance(q3_tilde, TripleOccupancy) else q3_tilde
        flat = st.flatten(blocks)
        if np.any(flat < 0):
            raise ValueError("q3_tilde must be nonnegative")
        with np.errstate(divide="ignore"):
            logw = np.log(flat)
    else:
        logw = st.flatten(log_weights)
    logw = np.where(st.flatten(hi) > 0, logw, -np.inf)
    live = _prune(logw, st.src, st.dst, st.n_internal)
    logw = np.where(live, logw, -np.inf)

    dual = _FlowDual(st.layers, st.B)
    v = np.zeros(st.n_internal)
    corr = np.zeros_like(logw)  # Dykstra correction for the interval set, log domain
    x_log = logw.copy()
    inner_tol = tol * 0.1
    it = 0
    q = None
    while True:
        q, v, _, _ = dual.solve(x_log, v, inner_tol, max_iter)
        blocks = st.unflatten(q)
        viol = _interval_violation(blocks, lo, hi)
        if viol < 0.5 * tol or it >= max_iter:
            break
        it += 1
        y_log = dual.log_primal(x_log, v) + corr
        z_log = np.full_like(y_log, -np.inf)
        for h, shape in enumerate(st.shapes):
            yb = y_log[st.layers[h]].reshape(shape[0] * shape[1], shape[2])
            z_log[st.layers[h]] = _project_rows(yb, lo[h].reshape(yb.shape), hi[h].reshape(yb.shape)).ravel()
        with np.errstate(invalid="ignore"):
            corr = np.where(live & np.isfinite(z_log), y_log - z_log, 0.0)
        x_log = np.where(live, z_log, -np.inf)

    q = _repair_rows(_clip_floor(q, st.layers, live), st, live, lo, hi)
    occ = TripleOccupancy(st.unflatten(q))
    base = validate_occupancy(occ)
    viol = _interval_violation(occ.q3, lo, hi)
    resid = max(base.max, viol)
    # corr lies in the polar cone of the interval set, so the flow-only dual
    # evaluated at the shifted weights is a valid lower bound
    _, v_bound, _, _ = dual.solve(np.where(live, logw - corr, -np.inf), v, inner_tol, max_iter)
    dual_value = -dual.primal(np.where(live, logw - corr, -np.inf), v_bound)[1] - len(st.layers) + np.exp(logw).sum()
    primal = _kl(q, logw)
    report = ProjectionReport(it, resid, max(primal - dual_value, 0.0), resid < tol)
    if not report.converged:
        raise ProjectionError("confidence-set projection did not converge", report)
    return occ, report
