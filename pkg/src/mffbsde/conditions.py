"""Verification of the Lipschitz and domination-monotonicity assumptions.

LINEAR coefficient sets are checked exactly through matrix factorizations.
BLACKBOX sets are probed by random sampling; a pass there means only that no
violation was found in the drawn samples.

Margins are always reported as ``rhs - lhs`` oriented so that a nonnegative
margin means the inequality holds at that sample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (CASE_A, CASE_B, BlackBoxCoefficients, CoefficientSet, DomainError,
                   DominationWeights, LinearCoefficients, at, operator_norm)

TIE_TOL = 1e-12
ORIENTATIONS = ("iii", "iii_prime")


def _inf_if_zero(w):
    return np.inf if w == 0 else 1.0 / w


def _passes(margin, scale):
    return margin >= -TIE_TOL * (1.0 + scale)


def _rows(M):
    return np.atleast_2d(np.asarray(M, dtype=float))


# ---------------------------------------------------------------------------
# sampling helpers


def _box(rng, shape, radius):
    """Uniform samples in ``[-radius, radius]``; 10% of rows use radius 100."""
    out = rng.uniform(-radius, radius, shape)
    wide = rng.random(shape[0]) < 0.1
    out[wide] = rng.uniform(-100.0, 100.0, (int(wide.sum()),) + tuple(shape[1:]))
    return out


def _pair(rng, shape, radius):
    """First points in the box, second points either independent or nearby."""
    a = _box(rng, shape, radius)
    b = _box(rng, shape, radius)
    local = rng.random(shape[0]) < 0.5
    scale = 10.0 ** rng.uniform(-6, 0, (int(local.sum()),) + (1,) * (len(shape) - 1))
    b[local] = a[local] + scale * rng.standard_normal((int(local.sum()),) + tuple(shape[1:]))
    return a, b


def _axis_points(dim, radius, count=201):
    """Points along each coordinate axis, used for derivative probes."""
    grid = np.linspace(-radius, radius, count)
    pts = np.zeros((dim * count, dim))
    for i in range(dim):
        pts[i * count:(i + 1) * count, i] = grid
    return pts


# ---------------------------------------------------------------------------
# Lipschitz estimates


def _lin_lipschitz(coeffs: LinearCoefficients, times):
    n = coeffs.n
    out = {"psi": operator_norm(coeffs.psi_mat),
           "phi": max(operator_norm(coeffs.phi_mat), operator_norm(coeffs.phi_bar))}
    slices = {"g": slice(0, n), "b": slice(n, 2 * n), "sigma": slice(2 * n, None)}
    for name, sl in slices.items():
        out[name] = max(max(operator_norm(at(coeffs.gamma_mat, s)[sl]),
                            operator_norm(at(coeffs.gamma_bar, s)[sl])) for s in times)
    return out


def estimate_lipschitz(coeffs: CoefficientSet, sample_budget: int = 1000,
                       box_radius: float = 5.0, seed: int = 0, times=(0.0,)) -> dict:
    """Estimated Lipschitz constants of ``Psi``, ``Phi``, ``g``, ``b``, ``sigma``.

    Differences are measured against ``|arg - arg_bar| + |arg' - arg_bar'|``.
    LINEAR sets return exact operator norms.
    """
    if sample_budget < 100:
        raise DomainError("sample budget must be at least 100")
    if isinstance(coeffs, LinearCoefficients):
        return _lin_lipschitz(coeffs, times)
    rng = np.random.default_rng(seed)
    n, D = coeffs.n, coeffs.D
    S = sample_budget
    best = dict.fromkeys(("psi", "phi", "g", "b", "sigma"), 0.0)

    def upd(key, num, den):
        ok = den > 0
        if np.any(ok):
            val = np.max(num[ok] / den[ok])
            if not np.isfinite(val):
                raise DomainError(f"non-finite Lipschitz quotient for {key}")
            best[key] = max(best[key], float(val))

    eps = 1e-6
    # Psi
    y1, y2 = _pair(rng, (S, n), box_radius)
    ax = _axis_points(n, box_radius)
    for dirn in np.eye(n):
        y1 = np.concatenate([y1, ax]); y2 = np.concatenate([y2, ax + eps * dirn])
    upd("psi", np.linalg.norm(coeffs.psi(y1) - coeffs.psi(y2), axis=-1),
        np.linalg.norm(y1 - y2, axis=-1))
    # Phi
    u1, u2 = _pair(rng, (S, 2 * n), box_radius)
    ax = _axis_points(2 * n, box_radius)
    for dirn in np.eye(2 * n):
        u1 = np.concatenate([u1, ax]); u2 = np.concatenate([u2, ax + eps * dirn])
    num = np.linalg.norm(coeffs.phi(u1[:, :n], u1[:, n:]) - coeffs.phi(u2[:, :n], u2[:, n:]),
                         axis=-1)
    den = np.linalg.norm(u1[:, :n] - u2[:, :n], axis=-1) + np.linalg.norm(
        u1[:, n:] - u2[:, n:], axis=-1)
    upd("phi", num, den)
    # Gamma blocks
    for s in times:
        v1, v2 = _pair(rng, (S, 2 * D), box_radius)
        ax = _axis_points(2 * D, box_radius, count=41)
        for dirn in np.eye(2 * D):
            v1 = np.concatenate([v1, ax]); v2 = np.concatenate([v2, ax + eps * dirn])
        G1 = coeffs.gamma(s, v1[:, :D], v1[:, D:])
        G2 = coeffs.gamma(s, v2[:, :D], v2[:, D:])
        den = np.linalg.norm(v1[:, :D] - v2[:, :D], axis=-1) + np.linalg.norm(
            v1[:, D:] - v2[:, D:], axis=-1)
        for key, sl in (("g", slice(0, n)), ("b", slice(n, 2 * n)), ("sigma", slice(2 * n, None))):
            upd(key, np.linalg.norm(G1[:, sl] - G2[:, sl], axis=-1), den)
    return best


# ---------------------------------------------------------------------------
# reference system and normalization


def _block_diag(a, b):
    a, b = _rows(a), _rows(b)
    out = np.zeros((a.shape[0] + b.shape[0], a.shape[1] + b.shape[1]))
    out[:a.shape[0], :a.shape[1]] = a
    out[a.shape[0]:, a.shape[1]:] = b
    return out


def _reference_gamma(weights: DominationWeights, n: int, d: int, s: float):
    mu, nu = weights.mu, weights.nu
    W = weights.at(s)
    A, At, B, Bt, C, Ct = (_rows(W[k]) for k in ("A", "At", "B", "Bt", "C", "Ct"))
    D = n * (2 + d)
    Gm = np.zeros((D, D))
    Gb = np.zeros((D, D))
    x, y, z = slice(0, n), slice(n, 2 * n), slice(2 * n, D)
    AA, AtAt = A.T @ A, At.T @ At
    Gm[x, x] = -nu * AA
    Gb[x, x] = -nu * (AtAt - AA)
    # forward rows (b then sigma) share the factor (B; C)^T [...]
    lead = np.concatenate([B, C], axis=1)        # m3 x n(1+d), acts on (y, z)
    leadt = np.concatenate([Bt, Ct], axis=1)
    yz = slice(n, D)
    Gm[yz, yz] = -mu * lead.T @ lead
    Gb[yz, yz] = -mu * (leadt.T @ leadt - lead.T @ lead)
    return Gm, Gb


def reference_coefficients(weights: DominationWeights, n: int = None, d: int = 1) -> LinearCoefficients:
    """LINEAR decoupled reference system built from the domination weights.

    ``Psi0(y) = -mu H^T H y``, ``Phi0(x, x') = nu [P^T P (x - x') + Pt^T Pt x']``,
    ``g0 = -nu [A^T A (x - x') + At^T At x']``, and the forward block
    ``(b0; sigma0) = -mu (B, C)^T [B (y - y') + C (z - z')] - mu (Bt, Ct)^T [Bt y' + Ct z']``.
    """
    n = weights.n if n is None else n
    H, P, Pt = _rows(weights.H), _rows(weights.P), _rows(weights.Pt)
    mu, nu = weights.mu, weights.nu
    psi_mat = -mu * H.T @ H
    phi_mat = nu * P.T @ P
    phi_bar = nu * (Pt.T @ Pt - P.T @ P)
    tdep = any(callable(getattr(weights, k)) for k in ("A", "At", "B", "Bt", "C", "Ct"))
    if tdep:
        gm = lambda s: _reference_gamma(weights, n, d, s)[0]
        gb = lambda s: _reference_gamma(weights, n, d, s)[1]
    else:
        gm, gb = _reference_gamma(weights, n, d, 0.0)
    return LinearCoefficients(n, d, psi_mat=psi_mat, phi_mat=phi_mat, phi_bar=phi_bar,
                              gamma_mat=gm, gamma_bar=gb)


def _sup(fn, times):
    return max(fn(s) for s in times)


def check_wlog(weights: DominationWeights, L=None, times=(0.0,)) -> dict:
    """Evaluate the four normalization inequalities between weights and Lipschitz constant."""
    mu, nu = weights.mu, weights.nu
    W = lambda s: weights.at(s)
    nH = operator_norm(weights.H)
    nBB = _sup(lambda s: operator_norm(np.vstack([_rows(W(s)["B"]), _rows(W(s)["Bt"])])), times)
    nCC = _sup(lambda s: operator_norm(np.vstack([_rows(W(s)["C"]), _rows(W(s)["Ct"])])), times)
    nPP = operator_norm(np.vstack([_rows(weights.P), _rows(weights.Pt)]))
    nAA = _sup(lambda s: operator_norm(np.vstack([_rows(W(s)["A"]), _rows(W(s)["At"])])), times)
    w1_rhs = max(nH, nBB, nCC)
    w3_rhs = max(nPP, nAA)
    wlog1 = _inf_if_zero(mu) ** 2 >= w1_rhs
    wlog3 = _inf_if_zero(nu) ** 2 >= w3_rhs
    w2_rhs = mu * max(nH ** 2, _sup(lambda s: operator_norm(
        np.hstack([_rows(W(s)["B"]), _rows(W(s)["C"])])) ** 2 + operator_norm(
        np.hstack([_rows(W(s)["Bt"]), _rows(W(s)["Ct"])])) ** 2, times))
    w4_rhs = nu * max(operator_norm(weights.P) ** 2 + operator_norm(weights.Pt) ** 2,
                      _sup(lambda s: operator_norm(W(s)["A"]) ** 2
                           + operator_norm(W(s)["At"]) ** 2, times))
    wlog2 = True if L is None else L >= w2_rhs
    wlog4 = True if L is None else L >= w4_rhs
    return {"caseA_ok": bool(wlog1 and wlog2), "caseB_ok": bool(wlog3 and wlog4),
            "wlog1": bool(wlog1), "wlog2": bool(wlog2), "wlog3": bool(wlog3),
            "wlog4": bool(wlog4), "wlog1_rhs": w1_rhs, "wlog2_rhs": w2_rhs,
            "wlog3_rhs": w3_rhs, "wlog4_rhs": w4_rhs}


def _inward(rhs: float) -> float:
    """Largest weight ``w`` with ``1 / w^2 >= rhs`` after rounding."""
    w = 1.0 / np.sqrt(rhs)
    while (1.0 / w) ** 2 < rhs:
        w = np.nextafter(w, 0.0)
    return float(w)


def clamp_weights(weights: DominationWeights, times=(0.0,)):
    """Shrink ``mu`` / ``nu`` until the first and third normalization inequalities hold.

    Returns ``(weights, warnings)``.
    """
    rep = check_wlog(weights, times=times)
    warnings = []
    mu, nu = weights.mu, weights.nu
    if not rep["wlog1"]:
        new = _inward(rep["wlog1_rhs"])
        warnings.append(f"mu clamped from {mu} to {new} so that 1/mu^2 >= {rep['wlog1_rhs']:.6g}")
        mu = new
    if not rep["wlog3"]:
        new = _inward(rep["wlog3_rhs"])
        warnings.append(f"nu clamped from {nu} to {new} so that 1/nu^2 >= {rep['wlog3_rhs']:.6g}")
        nu = new
    return weights.with_scale(mu=mu, nu=nu), warnings


# ---------------------------------------------------------------------------
# domination


def _factor_margin(Nmat, Mmat, bound):
    """Exact check that ``|N w| <= bound |M w|`` for all ``w``.

    Holds iff ``N`` vanishes on the kernel of ``M`` and ``||N M^+|| <= bound``.
    """
    Nmat, Mmat = _rows(Nmat), _rows(Mmat)
    K = Nmat @ np.linalg.pinv(Mmat)
    resid = float(np.linalg.norm(K @ Mmat - Nmat)) if Nmat.size else 0.0
    factors = resid < 1e-10 * max(1.0, float(np.linalg.norm(Nmat)))
    kn = operator_norm(K)
    margin = (bound - kn) if factors else -np.inf
    ok = factors and _passes(margin, kn) if np.isfinite(bound) else True
    return {"factor_residual": resid, "factor_norm": kn, "margin": float(margin), "pass": bool(ok)}


def _exact_domination(coeffs: LinearCoefficients, weights: DominationWeights, times):
    n, d = coeffs.n, coeffs.d
    imu, inu = _inf_if_zero(weights.mu), _inf_if_zero(weights.nu)
    out = {"psi": _factor_margin(coeffs.psi_mat, weights.H, imu),
           "phi": _factor_margin(np.hstack([coeffs.phi_mat, coeffs.phi_mat + coeffs.phi_bar]),
                                 _block_diag(weights.P, weights.Pt), inu)}
    worst_g, worst_f = None, None
    for s in times:
        W = weights.at(s)
        blk = coeffs.blocks(s)
        gm, gb = blk["g"]
        rep = _factor_margin(np.hstack([gm[:, :n], gm[:, :n] + gb[:, :n]]),
                             _block_diag(W["A"], W["At"]), inu)
        if worst_g is None or rep["margin"] < worst_g["margin"]:
            worst_g = rep
        lead = np.hstack([_rows(W["B"]), _rows(W["C"])])
        leadt = np.hstack([_rows(W["Bt"]), _rows(W["Ct"])])
        for key in ("b", "sigma"):
            fm, fb = blk[key]
            rep = _factor_margin(np.hstack([fm[:, n:], fm[:, n:] + fb[:, n:]]),
                                 _block_diag(lead, leadt), imu)
            if worst_f is None or rep["margin"] < worst_f["margin"]:
                worst_f = rep
    out["g"], out["f"] = worst_g, worst_f
    return out


def check_domination(coeffs: CoefficientSet, weights: DominationWeights,
                     sample_budget: int = 10_000, seed: int = 0, box_radius: float = 5.0,
                     times=(0.0,)) -> dict:
    """Sampled (and, for LINEAR sets, exact) check of the four domination inequalities.

    Keys ``psi``, ``phi``, ``g`` and ``f`` (``f`` covers both ``b`` and ``sigma``).
    Conditions whose weight is zero are vacuous and pass automatically.
    """
    rng = np.random.default_rng(seed)
    n, d, D = coeffs.n, coeffs.d, coeffs.D
    imu, inu = _inf_if_zero(weights.mu), _inf_if_zero(weights.nu)
    S = int(sample_budget)
    report = {}

    def record(key, lhs, rhs, witness, vacuous):
        margin = rhs - lhs
        i = int(np.argmin(margin))
        ok = vacuous or bool(np.all(_passes(margin, np.abs(lhs) + np.abs(rhs))))
        report[key] = {"margin": float(margin[i]) if not vacuous else float("inf"),
                       "pass": ok, "vacuous": vacuous, "samples": int(len(margin)),
                       "violations": 0 if vacuous else int(np.sum(
                           ~_passes(margin, np.abs(lhs) + np.abs(rhs)))),
                       "witness": None if vacuous else np.asarray(witness[i]).tolist()}

    H = _rows(weights.H)
    y1, y2 = _pair(rng, (S, n), box_radius)
    lhs = np.linalg.norm(coeffs.psi(y1) - coeffs.psi(y2), axis=-1)
    rhs = imu * np.linalg.norm((y1 - y2) @ H.T, axis=-1) if np.isfinite(imu) else np.full(S, np.inf)
    record("psi", lhs, rhs, np.hstack([y1, y2]), not np.isfinite(imu))

    PP = _block_diag(weights.P, weights.Pt)
    u1, u2 = _pair(rng, (S, 2 * n), box_radius)
    lhs = np.linalg.norm(coeffs.phi(u1[:, :n], u1[:, n:]) - coeffs.phi(u2[:, :n], u2[:, n:]),
                         axis=-1)
    hx, hxp = u1[:, :n] - u2[:, :n], u1[:, n:] - u2[:, n:]
    rhs = inu * np.linalg.norm(np.hstack([hx - hxp, hxp]) @ PP.T, axis=-1) \
        if np.isfinite(inu) else np.full(S, np.inf)
    record("phi", lhs, rhs, np.hstack([u1, u2]), not np.isfinite(inu))

    per_t = max(S // len(times), 1)
    g_parts, f_parts = [], []
    for s in times:
        W = weights.at(s)
        th, thb = _box(rng, (per_t, D), box_radius), _box(rng, (per_t, D), box_radius)
        # g: move x and x' only
        x1, x2 = _pair(rng, (per_t, 2 * n), box_radius)
        t1, t2 = th.copy(), th.copy()
        b1, b2 = thb.copy(), thb.copy()
        t1[:, :n], b1[:, :n] = x1[:, :n], x1[:, n:]
        t2[:, :n], b2[:, :n] = x2[:, :n], x2[:, n:]
        G1, G2 = coeffs.gamma(s, t1, b1), coeffs.gamma(s, t2, b2)
        lhs = np.linalg.norm(G1[:, :n] - G2[:, :n], axis=-1)
        hx, hxp = x1[:, :n] - x2[:, :n], x1[:, n:] - x2[:, n:]
        AA = _block_diag(W["A"], W["At"])
        rhs = inu * np.linalg.norm(np.hstack([hx - hxp, hxp]) @ AA.T, axis=-1) \
            if np.isfinite(inu) else np.full(per_t, np.inf)
        g_parts.append((lhs, rhs, np.hstack([t1, b1, t2, b2])))
        # f = b, sigma: move (y, z) and (y', z') only
        m1, m2 = _pair(rng, (per_t, 2 * (D - n)), box_radius)
        k = D - n
        t1, t2 = th.copy(), th.copy()
        b1, b2 = thb.copy(), thb.copy()
        t1[:, n:], b1[:, n:] = m1[:, :k], m1[:, k:]
        t2[:, n:], b2[:, n:] = m2[:, :k], m2[:, k:]
        G1, G2 = coeffs.gamma(s, t1, b1), coeffs.gamma(s, t2, b2)
        hv, hvp = m1[:, :k] - m2[:, :k], m1[:, k:] - m2[:, k:]
        lead = np.hstack([_rows(W["B"]), _rows(W["C"])])
        leadt = np.hstack([_rows(W["Bt"]), _rows(W["Ct"])])
        rhs = imu * np.linalg.norm(np.hstack([hv - hvp, hvp]) @ _block_diag(lead, leadt).T,
                                   axis=-1) if np.isfinite(imu) else np.full(per_t, np.inf)
        wit = np.hstack([t1, b1, t2, b2])
        for sl in (slice(n, 2 * n), slice(2 * n, D)):
            f_parts.append((np.linalg.norm(G1[:, sl] - G2[:, sl], axis=-1), rhs, wit))
    for key, parts, vac in (("g", g_parts, not np.isfinite(inu)),
                            ("f", f_parts, not np.isfinite(imu))):
        record(key, np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]),
               np.concatenate([p[2] for p in parts]), vac)

    if isinstance(coeffs, LinearCoefficients):
        exact = _exact_domination(coeffs, weights, times)
        for key in report:
            report[key]["exact"] = exact[key]
            report[key]["pass"] = bool(report[key]["pass"] and exact[key]["pass"])
    report["pass"] = all(v["pass"] for v in report.values() if isinstance(v, dict))
    return report


# ---------------------------------------------------------------------------
# monotonicity


def _atom_samples(rng, S, K, dim, radius):
    v = rng.uniform(-radius, radius, (S, K, dim))
    wide = rng.random(S) < 0.1
    v[wide] *= 100.0 / radius
    return v


def _atom_pair(rng, S, K, dim, radius):
    a = _atom_samples(rng, S, K, dim, radius)
    b = _atom_samples(rng, S, K, dim, radius)
    local = rng.random(S) < 0.5
    scale = 10.0 ** rng.uniform(-6, 0, (int(local.sum()), 1, 1))
    b[local] = a[local] + scale * rng.standard_normal((int(local.sum()), K, dim))
    return a, b


def _split(v):
    """Decomposition over the atom axis (uniform weights)."""
    m = v.mean(axis=1, keepdims=True)
    return v - m, m


def _paired_inner(dF, dX):
    f1, f2 = _split(dF)
    x1, x2 = _split(dX)
    return np.mean(np.sum(f1 * x1, axis=-1) + np.sum(f2 * x2, axis=-1), axis=1)


def check_monotonicity(coeffs: CoefficientSet, weights: DominationWeights,
                       sample_budget: int = 10_000, seed: int = 0,
                       orientation: str = "iii", atoms=(1, 2, 4), box_radius: float = 5.0,
                       times=(0.0,)) -> dict:
    """Sampled check of the three monotonicity inequalities.

    Random variables are equiprobable ``K``-atom laws for ``K`` in ``atoms``; the
    expectation and the ``X = (X - E X) + E X`` split are taken over the atoms.
    ``orientation="iii_prime"`` checks the sign-reversed variant.
    """
    if orientation not in ORIENTATIONS:
        raise DomainError(f"orientation must be one of {ORIENTATIONS}")
    sgn = 1.0 if orientation == "iii" else -1.0
    rng = np.random.default_rng(seed)
    n, D = coeffs.n, coeffs.D
    mu, nu = weights.mu, weights.nu
    S = int(sample_budget)
    report = {}

    def record(key, margin, scale, witness):
        ok_mask = _passes(margin, scale)
        i = int(np.argmin(margin))
        report[key] = {"margin": float(margin[i]), "pass": bool(np.all(ok_mask)),
                       "violations": int(np.sum(~ok_mask)), "samples": int(len(margin)),
                       "witness": np.asarray(witness[i]).tolist()}

    H = _rows(weights.H)
    y1, y2 = _pair(rng, (S, n), box_radius)
    hy = y1 - y2
    inner = np.sum((coeffs.psi(y1) - coeffs.psi(y2)) * hy, axis=-1)
    wsq = mu * np.sum((hy @ H.T) ** 2, axis=-1)
    # (iii): inner <= -wsq ; (iii)': inner >= wsq
    record("psi", -sgn * inner - wsq, np.abs(inner) + wsq, np.hstack([y1, y2]))

    P, Pt = _rows(weights.P), _rows(weights.Pt)
    per_k = max(S // len(atoms), 1)
    margins, scales, wits = [], [], []
    for K in atoms:
        X, Xb = _atom_pair(rng, per_k, K, n, box_radius)
        F = coeffs.phi(X, X.mean(axis=1, keepdims=True))
        Fb = coeffs.phi(Xb, Xb.mean(axis=1, keepdims=True))
        hX = X - Xb
        inner = _paired_inner(F - Fb, hX)
        h1, h2 = _split(hX)
        wsq = nu * np.mean(np.sum((h1 @ P.T) ** 2, axis=-1)
                           + np.sum((h2 @ Pt.T) ** 2, axis=-1), axis=1)
        # (iii): inner >= wsq ; (iii)': inner <= -wsq
        margins.append(sgn * inner - wsq)
        scales.append(np.abs(inner) + wsq)
        wits.extend(list(np.concatenate([X, Xb], axis=1).reshape(per_k, -1)))
    record("phi", np.concatenate(margins), np.concatenate(scales), wits)

    margins, scales, wits = [], [], []
    per_kt = max(per_k // len(times), 1)
    for s in times:
        W = weights.at(s)
        A, At = _rows(W["A"]), _rows(W["At"])
        lead = np.hstack([_rows(W["B"]), _rows(W["C"])])
        leadt = np.hstack([_rows(W["Bt"]), _rows(W["Ct"])])
        for K in atoms:
            T1, T2 = _atom_pair(rng, per_kt, K, D, box_radius)
            G1 = coeffs.gamma(s, T1, np.broadcast_to(T1.mean(axis=1, keepdims=True), T1.shape))
            G2 = coeffs.gamma(s, T2, np.broadcast_to(T2.mean(axis=1, keepdims=True), T2.shape))
            hT = T1 - T2
            inner = _paired_inner(G1 - G2, hT)
            h1, h2 = _split(hT)
            ax = np.sum((h1[..., :n] @ A.T) ** 2, axis=-1) + np.sum((h2[..., :n] @ At.T) ** 2,
                                                                   axis=-1)
            bz = np.sum((h1[..., n:] @ lead.T) ** 2, axis=-1) + np.sum(
                (h2[..., n:] @ leadt.T) ** 2, axis=-1)
            wsq = np.mean(nu * ax + mu * bz, axis=1)
            # (iii): inner <= -wsq ; (iii)': inner >= wsq
            margins.append(-sgn * inner - wsq)
            scales.append(np.abs(inner) + wsq)
            wits.extend(list(np.concatenate([T1, T2], axis=1).reshape(per_kt, -1)))
    record("gamma", np.concatenate(margins), np.concatenate(scales), wits)
    report["pass"] = all(v["pass"] for v in report.values() if isinstance(v, dict))
    report["orientation"] = orientation
    return report


# ---------------------------------------------------------------------------
# examples and transforms


def scalar_example_admissible(k):
    """Admissible weight ``min{k - 1, 1 / (2 (k + 1))}`` (zero at ``k = 1``)."""
    if k <= 1:
        return 0.0
    return float(min(k - 1.0, 1.0 / (2.0 * (k + 1.0))))


def scalar_example(k1: float, k2: float, force: bool = False):
    """Scalar nonlinear example with sine perturbations of linear monotone maps.

    Returns ``(coeffs, admissible_mu, admissible_nu)``. Parameters below 1 are
    rejected unless ``force=True`` (useful to build violating instances).
    """
    if not force and (k1 < 1 or k2 < 1):
        raise DomainError("need k1 >= 1 and k2 >= 1")

    def psi(y):
        return -k1 * y + np.sin(y)

    def phi(x, xb):
        return k2 * x + np.sin(np.broadcast_to(xb, np.shape(x)))

    def gamma(s, th, tb):
        tb = np.broadcast_to(tb, np.shape(th))
        return np.stack([-k2 * th[..., 0] + np.sin(tb[..., 0]),
                         -k1 * th[..., 1] + np.sin(tb[..., 1]),
                         -k1 * th[..., 2] + np.sin(tb[..., 2])], axis=-1)

    coeffs = BlackBoxCoefficients(1, 1, psi, phi, gamma, name=f"scalar_example({k1},{k2})",
                                  time_invariant=True)
    return coeffs, scalar_example_admissible(k1), scalar_example_admissible(k2)


def scalar_example_weights(mu: float = 0.0, nu: float = 0.0) -> DominationWeights:
    """Domination weights of the scalar example: ``H = P = Pt = 1`` and unit selectors."""
    A = np.array([[1.0], [0.0], [0.0]])
    B = np.array([[0.0], [1.0], [0.0]])
    C = np.array([[0.0], [0.0], [1.0]])
    return DominationWeights.build(1, 1, mu=mu, nu=nu, H=[[1.0]], P=[[1.0]], Pt=[[1.0]],
                                   A=A, At=A, B=B, Bt=B, C=C, Ct=C)


def symmetrize(coeffs: CoefficientSet) -> CoefficientSet:
    """Coefficients solved by ``(x, -y, -z)`` whenever ``(x, y, z)`` solves ``coeffs``."""
    n, d, D = coeffs.n, coeffs.d, coeffs.D
    S = np.ones(D)
    S[n:] = -1.0
    R = np.ones(D)
    R[:n] = -1.0
    if isinstance(coeffs, LinearCoefficients):
        def conj(m):
            if callable(m):
                return lambda s: R[:, None] * at(m, s) * S[None, :]
            return R[:, None] * m * S[None, :]

        off = coeffs.gamma_off
        return LinearCoefficients(
            n, d, psi_mat=-coeffs.psi_mat, psi_off=coeffs.psi_off,
            phi_mat=-coeffs.phi_mat, phi_bar=-coeffs.phi_bar, phi_off=-coeffs.phi_off,
            gamma_mat=conj(coeffs.gamma_mat), gamma_bar=conj(coeffs.gamma_bar),
            gamma_off=(lambda s: R * at(off, s)) if callable(off) else R * off)
    return BlackBoxCoefficients(
        n, d,
        psi=lambda y: coeffs.psi(-y),
        phi=lambda x, xb: -coeffs.phi(x, xb),
        gamma=lambda s, th, tb: R * coeffs.gamma(s, th * S, np.asarray(tb) * S),
        name="symmetrized")
