"""Numba kernels shared by the per-step API and the fast simulation loops.

Conventions: step sizes arrive as ``a = (alpha1, alpha2, alpha3, alpha4)``;
``state`` scalars (eta, ...) travel in length-1 arrays so kernels can
update them in place. Status codes: 0 ok, 1 eta, 2 r, 3 theta, 4 s,
5 estimator bank non-finite.
"""

import math

import numpy as np
from numba import njit

from .basis import cosine_features, cosine_jacobian, cosine_jtr, rbf_features, rbf_jacobian, rbf_jtr
from .schedule import step_sizes

ALG_ABTD = 0
ALG_ABBE = 1
ALG_ABPBE = 2

STATUS_NAMES = ("ok", "eta", "r", "theta", "s", "bank")


@njit(cache=True)
def dot(a, b):
    acc = 0.0
    for i in range(a.shape[0]):
        acc += a[i] * b[i]
    return acc


@njit(cache=True)
def td_error(g, eta, r, phi, phi_next):
    return g - eta + dot(phi_next, r) - dot(phi, r)


@njit(cache=True)
def project(v, lo, hi):
    for i in range(v.shape[0]):
        if v[i] < lo[i]:
            v[i] = lo[i]
        elif v[i] > hi[i]:
            v[i] = hi[i]


@njit(cache=True)
def all_finite(v):
    for x in v.ravel():
        if not math.isfinite(x):
            return False
    return True


@njit(cache=True)
def softmax(prefs):
    m = prefs.max()
    e = np.exp(prefs - m)
    return e / e.sum()


@njit(cache=True)
def softmax_score(xi_x, theta, u):
    """Action probabilities at one state and the score xi(x,u) - sum_a mu(a) xi(x,a)."""
    n_act, k = xi_x.shape
    prefs = np.empty(n_act)
    for a in range(n_act):
        prefs[a] = dot(xi_x[a], theta)
    probs = softmax(prefs)
    psi = np.empty(k)
    for j in range(k):
        acc = 0.0
        for a in range(n_act):
            acc += probs[a] * xi_x[a, j]
        psi[j] = xi_x[u, j] - acc
    return probs, psi


@njit(cache=True)
def sample_index(probs, u):
    acc = 0.0
    for k in range(probs.shape[0]):
        acc += probs[k]
        if u < acc:
            return k
    # roundoff: the cumulative sum fell short of u
    for k in range(probs.shape[0] - 1, -1, -1):
        if probs[k] > 0:
            return k
    return probs.shape[0] - 1


@njit(cache=True)
def sample_cdf(cdf, u):
    """Index of the first cumulative probability above u."""
    n = cdf.shape[0]
    for k in range(n):
        if u < cdf[k]:
            return k
    # roundoff: the total fell short of u; take the last index with mass
    for k in range(n - 1, 0, -1):
        if cdf[k] > cdf[k - 1]:
            return k
    return 0


@njit(cache=True)
def box_muller(u1, u2):
    return math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(2.0 * math.pi * u2)


# ---------------------------------------------------------------------------
# expected-direction pieces (no step sizes, no projection)

@njit(cache=True)
def abtd_direction(eta, r, phi, phi_next, jtr, psi, g):
    d = td_error(g, eta, r, phi, phi_next)
    return d, g - eta, d * phi, psi * d, d * jtr


@njit(cache=True)
def abbe_direction(eta, r, phi, phi_next, jtr, jtr_next, psi, g):
    d = td_error(g, eta, r, phi, phi_next)
    return d, g - eta, -(d * (phi_next - phi)), psi * d, -(d * (jtr_next - jtr))


@njit(cache=True)
def abpbe_direction(eta, r, phi, phi_next, psi, g, A, As, bs, w, wr, ws, printed):
    d = td_error(g, eta, r, phi, phi_next)
    k = r.shape[0]
    ks = ws.shape[0]
    dr = np.empty(k)
    for i in range(k):
        wa = dot(w, A[:, i])
        if printed:
            # literal reading of the published r-update, scalar factor r_i kept
            dr[i] = -(d * dot(phi, wr[i]) + wa * r[i])
        else:
            dr[i] = -(d * dot(phi, wr[i]) + wa)
    ds = np.empty(ks)
    for i in range(ks):
        grad_e = As[i] @ r + bs[i]
        ds[i] = -(d * dot(phi, ws[i]) + dot(grad_e, w))
    return d, g - eta, dr, psi * d, ds


# ---------------------------------------------------------------------------
# updates

@njit(cache=True)
def _apply(eta_arr, r, theta, s, a, deta, dr, dth, ds, th_lo, th_hi, s_lo, s_hi):
    eta_arr[0] = eta_arr[0] + a[2] * deta
    for i in range(r.shape[0]):
        r[i] = r[i] + a[2] * dr[i]
    for i in range(theta.shape[0]):
        theta[i] = theta[i] + a[1] * dth[i]
    project(theta, th_lo, th_hi)
    for i in range(s.shape[0]):
        s[i] = s[i] + a[0] * ds[i]
    project(s, s_lo, s_hi)
    if not math.isfinite(eta_arr[0]):
        return 1
    if not all_finite(r):
        return 2
    if not all_finite(theta):
        return 3
    if not all_finite(s):
        return 4
    return 0


@njit(cache=True)
def abtd_update(eta_arr, r, theta, s, phi, phi_next, jtr, psi, g, a, th_lo, th_hi, s_lo, s_hi):
    d, deta, dr, dth, ds = abtd_direction(eta_arr[0], r, phi, phi_next, jtr, psi, g)
    return _apply(eta_arr, r, theta, s, a, deta, dr, dth, ds, th_lo, th_hi, s_lo, s_hi)


@njit(cache=True)
def abbe_update(eta_arr, r, theta, s, phi, phi_next, jtr, jtr_next, psi, g, a,
                th_lo, th_hi, s_lo, s_hi):
    d, deta, dr, dth, ds = abbe_direction(eta_arr[0], r, phi, phi_next, jtr, jtr_next, psi, g)
    return _apply(eta_arr, r, theta, s, a, deta, dr, dth, ds, th_lo, th_hi, s_lo, s_hi)


@njit(cache=True)
def abpbe_update(eta_arr, r, theta, s, phi, phi_next, psi, g, a, A, As, bs, w, wr, ws,
                 printed, th_lo, th_hi, s_lo, s_hi):
    d, deta, dr, dth, ds = abpbe_direction(eta_arr[0], r, phi, phi_next, psi, g,
                                           A, As, bs, w, wr, ws, printed)
    return _apply(eta_arr, r, theta, s, a, deta, dr, dth, ds, th_lo, th_hi, s_lo, s_hi)


@njit(cache=True)
def estimator_update(A, As, bs, w, wr, ws, phi, phi_next, J, J_next, g, eta, r, a4, printed):
    """Advance the six ABPBE estimators in place from their pre-step values."""
    k = phi.shape[0]
    ks = J.shape[1]
    d = td_error(g, eta, r, phi, phi_next)
    if printed:
        dphi = phi - phi_next
        drive = g
    else:
        dphi = phi_next - phi
        drive = g - eta
    A_old = A.copy()
    As_old = As.copy()
    bs_old = bs.copy()
    w_old = w.copy()
    pw = dot(phi, w_old)
    for i in range(k):
        for j in range(k):
            A[i, j] = A_old[i, j] + a4 * (phi[i] * dphi[j] - A_old[i, j])
    for m in range(ks):
        Ji = J[:, m]
        if printed:
            dJ = Ji - J_next[:, m]
        else:
            dJ = J_next[:, m] - Ji
        for i in range(k):
            for j in range(k):
                As[m, i, j] = As_old[m, i, j] + a4 * (Ji[i] * dphi[j] + phi[i] * dJ[j] - As_old[m, i, j])
            bs[m, i] = bs_old[m, i] + a4 * (drive * Ji[i] - bs_old[m, i])
    for i in range(k):
        w[i] = w_old[i] + a4 * (phi[i] * d - phi[i] * pw)
    for m in range(k):
        pwr = dot(phi, wr[m])
        for i in range(k):
            wr[m, i] = wr[m, i] + a4 * (A_old[i, m] - phi[i] * pwr)
    for m in range(ks):
        Ji = J[:, m]
        target = As_old[m] @ r + bs_old[m]
        jw = dot(Ji, w_old)
        pws = dot(phi, ws[m])
        for i in range(k):
            dC_w = Ji[i] * pw + phi[i] * jw
            ws[m, i] = ws[m, i] + a4 * (target[i] - dC_w - phi[i] * pws)
    if not (all_finite(A) and all_finite(As) and all_finite(bs)
            and all_finite(w) and all_finite(wr) and all_finite(ws)):
        return 5
    return 0


@njit(cache=True)
def abpbe_full_step(eta_arr, r, theta, s, phi, phi_next, J, J_next, psi, g, a,
                    A, As, bs, w, wr, ws, bank_count, burn_in, printed,
                    th_lo, th_hi, s_lo, s_hi):
    """Learner step (once the bank is warm) followed by the estimator step,
    both driven by the pre-step iterates."""
    eta_old = eta_arr[0]
    r_old = r.copy()
    if bank_count[0] >= burn_in:
        status = abpbe_update(eta_arr, r, theta, s, phi, phi_next, psi, g, a,
                              A, As, bs, w, wr, ws, printed, th_lo, th_hi, s_lo, s_hi)
    else:
        eta_arr[0] = eta_old + a[2] * (g - eta_old)
        status = 0 if math.isfinite(eta_arr[0]) else 1
    if status != 0:
        return status
    status = estimator_update(A, As, bs, w, wr, ws, phi, phi_next, J, J_next, g, eta_old,
                              r_old, a[3], printed)
    bank_count[0] += 1
    return status


# ---------------------------------------------------------------------------
# Garnet loop (cosine basis, tabular actor features)

@njit(cache=True)
def garnet_chunk(alg, x, n0, unif, cdf, g_state, g_sa, sigma, sa_mode, xi, phases,
                 eta_arr, r, theta, s, coef, off, pw, th_lo, th_hi, s_lo, s_hi,
                 A, As, bs, w, wr, ws, bank_count, burn_in, printed,
                 record, rec):
    """Run ``unif.shape[0]`` on-policy steps from state ``x``.

    Returns (next state, steps done, status). ``bank_count`` is a length-1
    array counting estimator updates. ``rec`` receives (x, u, g, y) rows when
    ``record`` is set.
    """
    steps = unif.shape[0]
    for t in range(steps):
        n = n0 + t
        a = step_sizes(coef, off, pw, float(n))
        xi_x = xi[x]
        probs, _ = softmax_score(xi_x, theta, 0)
        u = sample_index(probs, unif[t, 0])
        y = sample_cdf(cdf[u, x], unif[t, 1])
        z = box_muller(unif[t, 2], unif[t, 3])
        if sa_mode:
            g = g_sa[x, u] + sigma * z
        else:
            g = g_state[x] + sigma * z
        if record:
            rec[t, 0] = x
            rec[t, 1] = u
            rec[t, 2] = g
            rec[t, 3] = y
        _, psi = softmax_score(xi_x, theta, u)
        phi = cosine_features(x, s, phases)
        phi_next = cosine_features(y, s, phases)
        if alg == ALG_ABTD:
            jtr = cosine_jtr(x, s, phases, r)
            status = abtd_update(eta_arr, r, theta, s, phi, phi_next, jtr, psi, g, a,
                                 th_lo, th_hi, s_lo, s_hi)
        elif alg == ALG_ABBE:
            jtr = cosine_jtr(x, s, phases, r)
            jtr_next = cosine_jtr(y, s, phases, r)
            status = abbe_update(eta_arr, r, theta, s, phi, phi_next, jtr, jtr_next, psi, g, a,
                                 th_lo, th_hi, s_lo, s_hi)
        else:
            J = cosine_jacobian(x, s, phases)
            J_next = cosine_jacobian(y, s, phases)
            status = abpbe_full_step(eta_arr, r, theta, s, phi, phi_next, J, J_next, psi, g, a,
                                     A, As, bs, w, wr, ws, bank_count, burn_in, printed,
                                     th_lo, th_hi, s_lo, s_hi)
        if status != 0:
            return y, t + 1, status
        x = y
    return x, steps, 0


# ---------------------------------------------------------------------------
# mountain car (RBF critic, block-RBF actor)

@njit(cache=True)
def mc_dynamics(p, v, action, params):
    """One step of the car. ``params`` = (force, gravity, p_min, p_max, v_max, goal)."""
    force, gravity, p_min, p_max, v_max, goal = params[0], params[1], params[2], params[3], params[4], params[5]
    v2 = v + force * action - gravity * math.cos(3.0 * p)
    if v2 > v_max:
        v2 = v_max
    elif v2 < -v_max:
        v2 = -v_max
    p2 = p + v2
    if p2 < p_min:
        p2 = p_min
    elif p2 > p_max:
        p2 = p_max
    if p2 == p_min:
        v2 = 0.0
    at_goal = p2 >= goal
    reward = 0.0 if at_goal else -1.0
    return p2, v2, reward, at_goal


@njit(cache=True)
def block_policy(actor_phi, theta, n_actions):
    ka = actor_phi.shape[0]
    prefs = np.empty(n_actions)
    for u in range(n_actions):
        prefs[u] = dot(theta[u * ka:(u + 1) * ka], actor_phi)
    return softmax(prefs)


@njit(cache=True)
def block_score(actor_phi, probs, u):
    ka = actor_phi.shape[0]
    n_actions = probs.shape[0]
    psi = np.empty(ka * n_actions)
    for b in range(n_actions):
        c = (1.0 if b == u else 0.0) - probs[b]
        for k in range(ka):
            psi[b * ka + k] = c * actor_phi[k]
    return psi


@njit(cache=True)
def mc_chunk(alg, pos, ep_len, n0, unif, params, start, max_episode_steps, lo, span,
             actor_s, eta_arr, r, theta, s, coef, off, pw, th_lo, th_hi, s_lo, s_hi,
             A, As, bs, w, wr, ws, bank_count, burn_in, printed,
             lengths, max_episodes, record, rec):
    """Continuing-task run of the car; stops after ``max_episodes`` finished
    episodes or when the uniforms run out.

    ``pos`` = [p, v] and ``ep_len`` = [steps in current episode] are updated
    in place. Returns (steps done, episodes done, status).
    """
    steps = unif.shape[0]
    episodes = 0
    z = np.empty(2)
    zy = np.empty(2)
    for t in range(steps):
        if episodes >= max_episodes:
            return t, episodes, 0
        n = n0 + t
        a = step_sizes(coef, off, pw, float(n))
        p = pos[0]
        v = pos[1]
        z[0] = (p - lo[0]) / span[0]
        z[1] = (v - lo[1]) / span[1]
        actor_phi = rbf_features(z, actor_s)
        probs = block_policy(actor_phi, theta, 3)
        u = sample_index(probs, unif[t, 0])
        p2, v2, g, at_goal = mc_dynamics(p, v, u - 1.0, params)
        ep_len[0] += 1
        if at_goal or (max_episode_steps > 0 and ep_len[0] >= max_episode_steps):
            lengths[episodes] = ep_len[0]
            episodes += 1
            ep_len[0] = 0
            p2 = start[0] + unif[t, 1] * (start[1] - start[0])
            v2 = 0.0
        if record:
            rec[t, 0] = p
            rec[t, 1] = v
            rec[t, 2] = u
            rec[t, 3] = g
            rec[t, 4] = p2
            rec[t, 5] = v2
        zy[0] = (p2 - lo[0]) / span[0]
        zy[1] = (v2 - lo[1]) / span[1]
        psi = block_score(actor_phi, probs, u)
        phi = rbf_features(z, s)
        phi_next = rbf_features(zy, s)
        if alg == ALG_ABTD:
            jtr = rbf_jtr(z, s, r)
            status = abtd_update(eta_arr, r, theta, s, phi, phi_next, jtr, psi, g, a,
                                 th_lo, th_hi, s_lo, s_hi)
        elif alg == ALG_ABBE:
            jtr = rbf_jtr(z, s, r)
            jtr_next = rbf_jtr(zy, s, r)
            status = abbe_update(eta_arr, r, theta, s, phi, phi_next, jtr, jtr_next, psi, g, a,
                                 th_lo, th_hi, s_lo, s_hi)
        else:
            J = rbf_jacobian(z, s)
            J_next = rbf_jacobian(zy, s)
            status = abpbe_full_step(eta_arr, r, theta, s, phi, phi_next, J, J_next, psi, g, a,
                                     A, As, bs, w, wr, ws, bank_count, burn_in, printed,
                                     th_lo, th_hi, s_lo, s_hi)
        pos[0] = p2
        pos[1] = v2
        if status != 0:
            return t + 1, episodes, status
    return steps, episodes, 0


# ---------------------------------------------------------------------------
# SARSA baseline

@njit(cache=True)
def epsilon_greedy(q, epsilon, u_explore, u_pick):
    n = q.shape[0]
    if u_explore < epsilon:
        k = int(u_pick * n)
        return k if k < n else n - 1
    best = 0
    for k in range(1, n):
        if q[k] > q[best]:
            best = k
    return best


@njit(cache=True)
def sarsa_update(weights, phi, u, reward, phi_next, u_next, done, alpha, gamma):
    q = dot(weights[u], phi)
    target = reward
    if not done:
        target += gamma * dot(weights[u_next], phi_next)
    delta = target - q
    for k in range(phi.shape[0]):
        weights[u, k] = weights[u, k] + alpha * delta * phi[k]
    return delta


@njit(cache=True)
def sarsa_chunk(pos, ep_len, action, unif, params, start, max_episode_steps, lo, span,
                basis_s, weights, alpha, gamma, epsilon, lengths, max_episodes):
    """Episodic SARSA(0). ``action[0]`` holds the pending action (-1 when an
    episode has not chosen its first action yet). Uses three uniforms per
    step: explore flag, exploratory action, reset position."""
    steps = unif.shape[0]
    episodes = 0
    z = np.empty(2)
    for t in range(steps):
        if episodes >= max_episodes:
            return t, episodes
        z[0] = (pos[0] - lo[0]) / span[0]
        z[1] = (pos[1] - lo[1]) / span[1]
        phi = rbf_features(z, basis_s)
        if action[0] < 0:
            q = weights @ phi
            action[0] = epsilon_greedy(q, epsilon, unif[t, 0], unif[t, 1])
            # the first decision of an episode consumes this step's draws
            if t + 1 >= steps:
                return t + 1, episodes
            continue
        u = action[0]
        p2, v2, g, at_goal = mc_dynamics(pos[0], pos[1], u - 1.0, params)
        ep_len[0] += 1
        timeout = max_episode_steps > 0 and ep_len[0] >= max_episode_steps
        z[0] = (p2 - lo[0]) / span[0]
        z[1] = (v2 - lo[1]) / span[1]
        phi_next = rbf_features(z, basis_s)
        if at_goal or timeout:
            # a timeout is not terminal: bootstrap from the greedy action
            u_boot = epsilon_greedy(weights @ phi_next, 0.0, 1.0, 0.0)
            sarsa_update(weights, phi, u, g, phi_next, u_boot, at_goal, alpha, gamma)
            lengths[episodes] = ep_len[0]
            episodes += 1
            ep_len[0] = 0
            pos[0] = start[0] + unif[t, 2] * (start[1] - start[0])
            pos[1] = 0.0
            action[0] = -1
        else:
            q_next = weights @ phi_next
            u_next = epsilon_greedy(q_next, epsilon, unif[t, 0], unif[t, 1])
            sarsa_update(weights, phi, u, g, phi_next, u_next, False, alpha, gamma)
            pos[0] = p2
            pos[1] = v2
            action[0] = u_next
    return steps, episodes
