"""Independent checks: finite differences, exact expected updates and audits.

Expected update directions are computed by enumerating every transition
(x, u, y) with its stationary probability and feeding it through the same
per-sample kernels the learners use; the finite-difference side only ever
touches the closed-form objectives in :mod:`adaptive_ac.mdp`.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from . import _kernels as K
from .algorithms import EstimatorBank
from .basis import CosineBasis, RbfBasis, feature_matrix, jacobian_stack
from .environments import GarnetSpec, garnet_actor_features, generate_ergodic_garnet
from .errors import IdentityMismatch, SingularA
from .mdp import (
    SoftmaxPolicy,
    exact_objectives,
    exact_policy_gradient,
    induced_chain,
    mean_squared_td_error,
    td_matrices,
)
from .schedule import default_schedule, validate_schedule

DEFAULT_STEP = 1e-5
FAULTS = ("abbe-sign", "phase-table")


def finite_difference(f, x, h=DEFAULT_STEP):
    """Central-difference gradient of the scalar function ``f`` at ``x``."""
    x = np.array(x, dtype=float)
    grad = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        grad.flat[i] = (f(xp) - f(xm)) / (2 * h)
    return grad


def relative_error(a, b, floor=1e-8):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), floor))


def _close(a, b, rtol, atol=1e-9):
    return relative_error(a, b) <= rtol or float(np.linalg.norm(np.asarray(a) - np.asarray(b))) <= atol


# ---------------------------------------------------------------------------
# exact quantities on finite MDPs

def td_fixed_point(mdp, policy, features, chain=None):
    """r* solving A r + b = 0 (least-norm solution when A is singular but the system is consistent)."""
    chain = chain or induced_chain(mdp, policy)
    A, b, _ = td_matrices(mdp, chain, features)
    if np.linalg.cond(A) < 1e12:
        return np.linalg.solve(A, -b)
    r, *_ = np.linalg.lstsq(A, -b, rcond=None)
    if np.linalg.norm(A @ r + b) > 1e-8 * max(1.0, np.linalg.norm(b)):
        raise SingularA("A is singular and A r + b = 0 has no solution")
    return r


def mstde_minimizer(mdp, chain, features):
    """argmin_r 0.5 E[d^2]: the r-target of ABBE with frozen theta and s."""
    Phi = np.asarray(features, dtype=float)
    W = chain.stationary[:, None] * chain.transition
    c = mdp.rewards - chain.average_reward
    # E[Delta Delta'] and E[Delta c] with Delta = phi(y) - phi(x)
    wx = W.sum(axis=1)
    wy = W.sum(axis=0)
    M = Phi.T @ (wy[:, None] * Phi) + Phi.T @ (wx[:, None] * Phi) - Phi.T @ W.T @ Phi - Phi.T @ W @ Phi
    q = Phi.T @ (W.T @ c) - Phi.T @ (wx * c)
    return np.linalg.solve(M, -q)


def msbe_minimizer(mdp, chain, features):
    """argmin_r of 0.5 ||T(Phi r) - Phi r||_D^2."""
    Phi = np.asarray(features, dtype=float)
    B = chain.transition @ Phi - Phi
    D = chain.stationary
    return np.linalg.solve(B.T @ (D[:, None] * B), -B.T @ (D * (mdp.rewards - chain.average_reward)))


def exact_bank(mdp, chain, basis: CosineBasis, s, r) -> EstimatorBank:
    """Estimator bank at its exact target values for fixed (theta, r, s)."""
    N = mdp.num_states
    Phi = feature_matrix(basis, s, N).matrix
    Js = jacobian_stack(basis, s, N)  # (N, K, Ks)
    P, D = chain.transition, chain.stationary
    A, b, C = td_matrices(mdp, chain, Phi)
    DPhi = D[:, None] * Phi
    c = mdp.rewards - chain.average_reward
    ks = Js.shape[2]
    k = Phi.shape[1]
    A_s = np.empty((ks, k, k))
    b_s = np.empty((ks, k))
    w = np.linalg.solve(C, A @ r + b)
    w_r = np.linalg.solve(C, A).T  # row i solves C w_r[i] = A[:, i]
    w_s = np.empty((ks, k))
    for i in range(ks):
        Ji = Js[:, :, i]
        A_s[i] = (D[:, None] * Ji).T @ (P @ Phi - Phi) + DPhi.T @ (P @ Ji - Ji)
        b_s[i] = (D[:, None] * Ji).T @ c
        dC = (D[:, None] * Ji).T @ Phi + DPhi.T @ Ji
        w_s[i] = np.linalg.solve(C, A_s[i] @ r + b_s[i] - dC @ w)
    return EstimatorBank(A, A_s, b_s, w, w_r, w_s, 0)


def expected_direction(algorithm, mdp, policy, basis: CosineBasis, r, s, *, eta=None, bank=None,
                       chain=None, printed=False):
    """Mean per-step increment (before step sizes and projection) of each iterate.

    Returns a dict with keys ``eta``, ``r``, ``theta``, ``s`` and ``d``
    (the mean TD error).
    """
    chain = chain or induced_chain(mdp, policy)
    eta = chain.average_reward if eta is None else float(eta)
    r = np.asarray(r, dtype=float)
    s = np.asarray(s, dtype=float)
    mu = policy.action_probabilities()
    N, U = mu.shape
    feats = [basis.features(s, x) for x in range(N)]
    jtrs = [basis.jtr(s, x, r) for x in range(N)]
    if algorithm == "abpbe" and bank is None:
        bank = exact_bank(mdp, chain, basis, s, r)
    out = {"eta": 0.0, "r": np.zeros_like(r), "theta": np.zeros(len(policy.theta)),
           "s": np.zeros_like(s), "d": 0.0}
    for x in range(N):
        if chain.stationary[x] == 0:
            continue
        g = float(mdp.rewards[x])
        for u in range(U):
            psi = policy.likelihood_ratio(x, u)
            for y in np.flatnonzero(mdp.transitions[u, x]):
                wgt = chain.stationary[x] * mu[x, u] * mdp.transitions[u, x, y]
                if algorithm == "abtd":
                    d, de, dr, dth, ds = K.abtd_direction(eta, r, feats[x], feats[y], jtrs[x], psi, g)
                elif algorithm == "abbe":
                    d, de, dr, dth, ds = K.abbe_direction(eta, r, feats[x], feats[y], jtrs[x], jtrs[y], psi, g)
                elif algorithm == "abpbe":
                    d, de, dr, dth, ds = K.abpbe_direction(eta, r, feats[x], feats[y], psi, g,
                                                           *bank.arrays(), printed)
                else:
                    raise ValueError(f"unknown algorithm {algorithm!r}")
                out["d"] += wgt * d
                out["eta"] += wgt * de
                out["r"] += wgt * dr
                out["theta"] += wgt * dth
                out["s"] += wgt * ds
    return out


def _objective_fns(mdp, policy, basis, chain, r, s):
    N = mdp.num_states

    def phi_at(sv):
        return feature_matrix(basis, sv, N).matrix

    return {
        "mse_s": lambda sv: exact_objectives(mdp, policy, chain, phi_at(sv), r).mse,
        "msbe_s": lambda sv: exact_objectives(mdp, policy, chain, phi_at(sv), r).msbe,
        "mstde_s": lambda sv: mean_squared_td_error(mdp, chain, phi_at(sv), r),
        "mstde_r": lambda rv: mean_squared_td_error(mdp, chain, phi_at(s), rv),
        "mspbe_s": lambda sv: exact_objectives(mdp, policy, chain, phi_at(sv), r).mspbe,
        "mspbe_r": lambda rv: exact_objectives(mdp, policy, chain, phi_at(s), rv).mspbe,
    }


def msbe_gradient_s(mdp, chain, basis: CosineBasis, r, s):
    """Analytic d/ds of 0.5 ||T(Phi_s r) - Phi_s r||_D^2 from the feature Jacobians."""
    N = mdp.num_states
    Phi = feature_matrix(basis, s, N).matrix
    Js = jacobian_stack(basis, s, N)
    v = Phi @ r
    resid = mdp.rewards - chain.average_reward + chain.transition @ v - v
    grad = np.empty(Js.shape[2])
    for i in range(Js.shape[2]):
        dv = Js[:, :, i] @ r
        grad[i] = chain.stationary @ (resid * (chain.transition @ dv - dv))
    return grad


def audit_gradients(mdp, policy, basis: CosineBasis, r, s, *, h=DEFAULT_STEP, fault=None,
                    tol_abbe=1e-4, tol_abpbe=1e-2, tol_lemma=1e-4) -> dict:
    """Compare each algorithm's exact expected direction with finite differences.

    (a) ABBE r/s directions against -grad of 0.5 E[d^2] (asserted);
    (b) ABPBE directions at the exact estimator bank against -grad MSPBE (asserted);
    (c) ABTD s-direction against -grad MSE (reported only: bootstrapped);
    plus the policy-gradient identity E[psi d] = grad eta (asserted).
    """
    r = np.asarray(r, dtype=float)
    s = np.asarray(s, dtype=float)
    chain = induced_chain(mdp, policy)
    fns = _objective_fns(mdp, policy, basis, chain, r, s)
    checks = {}

    abbe = expected_direction("abbe", mdp, policy, basis, r, s, chain=chain)
    abbe_s = -abbe["s"] if fault == "abbe-sign" else abbe["s"]
    fd = -finite_difference(fns["mstde_s"], s, h)
    checks["abbe_s"] = _check(abbe_s, fd, tol_abbe, True)
    fd = -finite_difference(fns["mstde_r"], r, h)
    checks["abbe_r"] = _check(abbe["r"], fd, tol_abbe, True)

    abpbe = expected_direction("abpbe", mdp, policy, basis, r, s, chain=chain)
    fd = -finite_difference(fns["mspbe_r"], r, h)
    checks["abpbe_r"] = _check(abpbe["r"], fd, tol_abpbe, True)
    fd = -finite_difference(fns["mspbe_s"], s, h)
    checks["abpbe_s"] = _check(abpbe["s"], fd, tol_abpbe, True)

    abtd = expected_direction("abtd", mdp, policy, basis, r, s, chain=chain)
    fd = -finite_difference(fns["mse_s"], s, h)
    checks["abtd_s_vs_mse"] = _check(abtd["s"], fd, None, False)

    checks["policy_gradient"] = lemma_check(mdp, policy, chain=chain, h=h, tol=tol_lemma)
    ok = all(c["pass"] for c in checks.values() if c["asserted"])
    return {"ok": ok, "checks": checks}


def _check(value, reference, tol, asserted):
    err = relative_error(value, reference)
    passed = True if tol is None else _close(value, reference, tol)
    return {"value": np.atleast_1d(value).tolist(), "reference": np.atleast_1d(reference).tolist(),
            "rel_error": err, "tol": tol, "asserted": asserted, "pass": bool(passed)}


def lemma_check(mdp, policy, *, chain=None, h=DEFAULT_STEP, tol=1e-4) -> dict:
    """E[psi d] with the exact differential value versus finite-difference grad eta."""
    chain = chain or induced_chain(mdp, policy)
    grad = exact_policy_gradient(mdp, policy, chain.differential_value, chain)
    fd = finite_difference(lambda th: induced_chain(mdp, policy.with_theta(th)).average_reward,
                           policy.theta, h)
    return _check(grad, fd, tol, True)


# ---------------------------------------------------------------------------
# basis audits and assumption constants

def audit_basis_jacobian(basis, points, *, h=1e-6, rtol=1e-6, atol=1e-7, jacobian_basis=None) -> dict:
    """Analytic Jacobian versus central differences at (s, x) pairs.

    ``jacobian_basis`` lets a caller evaluate the analytic side on a different
    basis object (used to inject faults).
    """
    jb = jacobian_basis or basis
    worst = 0.0
    failures = 0
    for s, x in points:
        s = np.asarray(s, dtype=float)
        analytic = jb.jacobian(s, x)
        fd = np.column_stack([
            (basis.features(s + h * e, x) - basis.features(s - h * e, x)) / (2 * h)
            for e in np.eye(s.size)
        ])
        diff = np.abs(analytic - fd)
        bad = diff > atol + rtol * np.abs(fd)
        worst = max(worst, float(diff.max()))
        failures += int(bad.any())
    return {"points": len(points), "failures": failures, "max_abs_error": worst, "pass": failures == 0}


def random_basis_points(basis, rng, count=100):
    rng = np.random.default_rng(rng)
    lo, hi = basis.param_bounds()
    pts = []
    for _ in range(count):
        s = rng.uniform(lo, hi)
        if isinstance(basis, RbfBasis):
            m = basis.num_centers
            s[2 * m:] = rng.uniform(0.05, 1.0, size=2 * m)
            x = rng.uniform(basis.low, basis.high)
        else:
            x = int(rng.integers(basis.num_states))
        pts.append((s, x))
    return pts


@dataclass
class AssumptionBounds:
    B_psi: float
    B_phi: float
    L_phi: float
    B_g: float
    B_eta: float


def measure_bounds(mdp, policy, basis, rng, samples=200, radius=0.1) -> AssumptionBounds:
    """Empirical constants for the boundedness/Lipschitz assumptions."""
    rng = np.random.default_rng(rng)
    xi = policy.actor_features
    N, U, k = xi.shape
    b_psi = 0.0
    b_eta = 0.0
    for _ in range(samples // 20 or 1):
        th = rng.uniform(*policy.theta_bounds, size=k) * 0.2
        pol = policy.with_theta(th)
        mu = pol.action_probabilities()
        for x in range(N):
            mean = mu[x] @ xi[x]
            cov = (xi[x].T * mu[x]) @ xi[x] - np.outer(mean, mean)
            b_psi = max(b_psi, float(np.linalg.norm(cov, 2)))
            for u in range(U):
                b_psi = max(b_psi, float(np.linalg.norm(xi[x, u] - mean)))
        b_eta = max(b_eta, abs(induced_chain(mdp, pol).average_reward))
    lo, hi = basis.param_bounds()
    b_phi = 0.0
    l_phi = 0.0
    for s, x in random_basis_points(basis, rng, samples):
        phi = basis.features(s, x)
        b_phi = max(b_phi, float(np.abs(phi).max()), float(np.abs(basis.jacobian(s, x)).max()))
        step = rng.normal(size=s.size)
        s2 = np.clip(s + radius * rng.uniform() * step / np.linalg.norm(step), lo, hi)
        dist = np.linalg.norm(s2 - s)
        if dist > 0:
            l_phi = max(l_phi, float(np.linalg.norm(basis.features(s2, x) - phi) / dist))
    return AssumptionBounds(b_psi, b_phi, l_phi, float(np.abs(mdp.rewards).max()), b_eta)


# ---------------------------------------------------------------------------
# validation suite

def _garnet_case(spec, seed, k_r, theta_scale=0.5):
    inst = generate_ergodic_garnet(spec, seed)
    rng = np.random.default_rng([seed, 99])
    basis = CosineBasis.random(spec.num_states, k_r, rng)
    s0 = basis.initial_params()
    xi = garnet_actor_features(basis, s0, spec.num_actions)
    policy = SoftmaxPolicy(rng.normal(scale=theta_scale, size=xi.shape[2]), xi)
    return inst, basis, policy, rng


def run_validation(seed=0, *, instances=5, fault=None) -> dict:
    """Full oracle audit on freshly generated small Garnet instances."""
    if fault is not None and fault not in FAULTS:
        raise ValueError(f"unknown fault {fault!r}; expected one of {FAULTS}")
    t0 = time.perf_counter()
    sections = {}

    sched = validate_schedule(default_schedule())
    sections["schedule"] = {"pass": sched.ok, **sched.to_dict()}

    jac = []
    for i in range(instances):
        inst, basis, policy, rng = _garnet_case(GarnetSpec(8, 3, 2, 0.1), seed * 1000 + i, 3)
        jb = None
        if fault == "phase-table":
            jb = CosineBasis(np.roll(basis.phases, 1, axis=1))
        jac.append(audit_basis_jacobian(basis, random_basis_points(basis, rng, 100), jacobian_basis=jb))
    rbf = RbfBasis(9)
    jac.append(audit_basis_jacobian(rbf, random_basis_points(rbf, seed, 100)))
    sections["basis_jacobian"] = {"pass": all(j["pass"] for j in jac), "audits": jac}

    audits = []
    identities = []
    fixed_points = []
    for i in range(instances):
        inst, basis, policy, rng = _garnet_case(GarnetSpec(8, 3, 2, 0.1), seed * 1000 + i, 3)
        mdp = inst.mdp
        r = rng.normal(size=basis.num_features)
        s = rng.uniform(0.2, 2.0, size=1)
        audits.append(audit_gradients(mdp, policy, basis, r, s, fault=fault))
        chain = induced_chain(mdp, policy)
        Phi = feature_matrix(basis, s, mdp.num_states).matrix
        try:
            exact_objectives(mdp, policy, chain, Phi, r)
            identities.append(True)
        except IdentityMismatch:
            identities.append(False)
        r_star = td_fixed_point(mdp, policy, Phi, chain)
        A, b, _ = td_matrices(mdp, chain, Phi)
        fixed_points.append(float(np.abs(A @ r_star + b).max()))
    sections["gradient_audits"] = {"pass": all(a["ok"] for a in audits), "audits": audits}
    sections["mspbe_identity"] = {"pass": all(identities)}
    sections["td_fixed_point"] = {"pass": max(fixed_points) < 1e-10, "residuals": fixed_points}

    inst, basis, policy, rng = _garnet_case(GarnetSpec(8, 3, 2, 0.1), seed, 3)
    bounds = measure_bounds(inst.mdp, policy, basis, rng)
    finite = all(np.isfinite(v) for v in asdict(bounds).values())
    sections["assumption_bounds"] = {"pass": finite, **asdict(bounds)}

    elapsed = time.perf_counter() - t0
    return {"ok": all(sec["pass"] for sec in sections.values()), "fault": fault,
            "seconds": elapsed, "sections": sections}
