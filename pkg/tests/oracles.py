"""Independent reference computations used by unit and acceptance tests.

Everything here deliberately avoids the implementation's shortcuts: no
closed-form kernel weights, no recursion, no scipy solvers, so agreement
with the package is evidence rather than tautology.
"""

import numpy as np

from hjvi import action_cost, adversary, fvi


def dense_target_oracle(problem, ens, x0, substeps=10):
    """Direct double-integral evaluation of the n-step value target.

    Shares the rollout semantics with the implementation (explicit Euler at
    dt, zero-order hold of rewards and of the lookahead returns R over their
    intervals) but brute-forces both exponential kernel integrals with dense
    per-interval trapezoid sums and recomputes every reward prefix from
    scratch: O(N^2 * substeps) work, no recursion.
    """
    tc = problem.cfg.train
    dt, rho, beta = tc.dt, tc.rho, tc.beta
    n = tc.horizon_steps
    x = np.asarray(x0, dtype=float).reshape(1, -1).copy()

    states = [x.copy()]
    rewards = []
    for _ in range(n):
        _, grad_v = ens.value_and_grad(x)
        B = problem.model.control_matrix(x)
        w = adversary.action_costate(grad_v, B)
        u = action_cost.policy(problem.cost_spec, w)
        rewards.append(float(fvi.reward(problem, x, u)[0]))
        x = problem.model.step(x, u, dt)
        states.append(x.copy())

    def kernel_integral(rate, t_lo, t_hi):
        # dense trapezoid of exp(-rate * t) over [t_lo, t_hi], by hand
        ts = np.linspace(t_lo, t_hi, substeps + 1)
        ys = np.exp(-rate * ts)
        h = (t_hi - t_lo) / substeps
        return h * (0.5 * ys[0] + ys[1:-1].sum() + 0.5 * ys[-1])

    def lookahead(k):
        # R_{t_k}: reward integral recomputed from scratch, then bootstrap
        acc = 0.0
        for j in range(k):
            acc += kernel_integral(rho, j * dt, (j + 1) * dt) * rewards[j]
        v = float(ens.value(states[k])[0])
        return acc + np.exp(-rho * k * dt) * v

    target = 0.0
    for k in range(1, n + 1):
        # outer kernel beta * exp(-beta t) over ((k-1) dt, k dt], times R_{t_k}
        target += beta * kernel_integral(beta, (k - 1) * dt, k * dt) \
            * lookahead(k)
    target += np.exp(-beta * n * dt) * lookahead(n)
    return target


def riccati_oracle(a_mat, b_mat, q_mat, r_eff, rho, step=1e-3, tol=1e-12,
                   max_iter=500000):
    """Stationary P of the discounted CARE by plain Euler integration of the
    differential Riccati equation. V(x) = -x'Px; gain K = 2 R_eff^{-1} B'P.

    Discounting enters as A_tilde = A - (rho/2) I; the control weight enters
    the quadratic term as 2 P B R_eff^{-1} B' P (reward convention
    r = -x'Qx - (1/2) u' R_eff u).
    """
    a_t = a_mat - 0.5 * rho * np.eye(a_mat.shape[0])
    r_inv = np.linalg.inv(r_eff)
    p = np.zeros_like(a_mat)
    for _ in range(max_iter):
        dp = q_mat + a_t.T @ p + p @ a_t - 2.0 * p @ b_mat @ r_inv @ b_mat.T @ p
        p = p + step * dp
        if np.max(np.abs(dp)) < tol:
            return p, 2.0 * r_inv @ b_mat.T @ p
    raise RuntimeError("Riccati iteration did not converge")


def grid_argmax_policy(spec, w, n_points):
    """Brute-force per-dimension argmax_u [w u - g(u)] on a dense grid.

    Valid for separable families (everything except 'linear'); returns the
    grid maximizer and the grid spacing so callers can assert one-cell
    agreement.
    """
    lo, hi = spec.domain()
    mid = 0.5 * (lo + hi)  # interior filler for the non-scanned dims
    out = np.zeros(spec.dim)
    cells = np.zeros(spec.dim)
    for i in range(spec.dim):
        eps = (hi[i] - lo[i]) * 1e-9 if spec.domain_is_open else 0.0
        grid = np.linspace(lo[i] + eps, hi[i] - eps, n_points)
        u_full = np.tile(mid, (n_points, 1))
        u_full[:, i] = grid
        # separable: other dims contribute a constant, argmax unaffected
        vals = w[i] * grid - action_cost.cost(spec, u_full)
        out[i] = grid[np.argmax(vals)]
        cells[i] = grid[1] - grid[0]
    return out, cells


def grid_argmax_batch(spec, w, n_points, window=None):
    """Vectorized grid_argmax_policy for a batch of w vectors.

    Same separability argument: the cost of the non-scanned dimensions is a
    constant offset, so the per-dimension argmax is exact. `window` supplies
    the scan interval (lo, hi arrays) for families with unbounded domains;
    callers derive it by hand so the bracket stays independent of the
    implementation. Returns (argmax (n, dim), cell widths (dim,)).
    """
    lo, hi = spec.domain() if window is None else window
    mid = 0.5 * (lo + hi)
    w = np.asarray(w, dtype=float)
    out = np.zeros((w.shape[0], spec.dim))
    cells = np.zeros(spec.dim)
    for i in range(spec.dim):
        eps = (hi[i] - lo[i]) * 1e-9 if spec.domain_is_open else 0.0
        grid = np.linspace(lo[i] + eps, hi[i] - eps, n_points)
        u_full = np.tile(mid, (n_points, 1))
        u_full[:, i] = grid
        g_vals = action_cost.cost(spec, u_full)
        vals = w[:, i : i + 1] * grid[None, :] - g_vals[None, :]
        out[:, i] = grid[np.argmax(vals, axis=1)]
        cells[i] = grid[1] - grid[0]
    return out, cells


def constant_l_ensemble(feature_map, x_des, l_target, hidden=(8,),
                        eps_diag=1e-6):
    """Single-member ensemble whose factor L(x) is the given constant lower
    triangle: zero weights everywhere, final bias chosen so the softplus
    diagonal reproduces l_target exactly. Gives V(x) = -d^T L L^T d in
    closed form, which pins the network output independent of backprop.
    """
    from hjvi.value_net import NetConfig, ValueEnsemble

    l_target = np.asarray(l_target, dtype=float)
    n_f = feature_map.n_out
    if l_target.shape != (n_f, n_f):
        raise ValueError("l_target must be (n_f, n_f)")
    if np.min(np.diag(l_target)) <= eps_diag:
        raise ValueError("diagonal must exceed eps_diag")
    cfg = NetConfig(members=1, hidden=tuple(hidden), eps_diag=eps_diag)
    rows, cols = np.tril_indices(n_f)
    flat = l_target[rows, cols].copy()
    diag = rows == cols
    # invert softplus(b) + eps = d  ->  b = log(expm1(d - eps))
    flat[diag] = np.log(np.expm1(flat[diag] - eps_diag))
    sizes = (n_f,) + cfg.hidden + (n_f * (n_f + 1) // 2,)
    member = {}
    for layer in range(len(sizes) - 1):
        member[f"W{layer}"] = np.zeros((sizes[layer + 1], sizes[layer]))
        member[f"b{layer}"] = np.zeros(sizes[layer + 1])
    member[f"b{len(sizes) - 2}"] = flat
    return ValueEnsemble(feature_map, x_des, cfg, params=[member])
