"""Independent reference implementations used by the tests.

Nothing here imports the package: every quantity is recomputed from plain
scalars with ``math``/``mpmath`` so that agreement is a genuine cross-check.
"""
from __future__ import annotations

import math

import mpmath

ALICE = (0.0, math.pi / 2, math.pi, 3 * math.pi / 2)
BOB = (0.0, math.pi / 2)


def p_ph0_mp(eta, tc, tb, mus, eps, w, offset=0.0, dps=50):
    """Term-by-term sum of eps_k theta_i theta_j exp(-gamma_ijw mu_k) in mpmath."""
    with mpmath.workdps(dps):
        total = mpmath.mpf(0)
        for mu, e in zip(mus, eps):
            for a in ALICE:
                for b in BOB:
                    h = (mpmath.mpf(a) - b) / 2 + offset - w * mpmath.pi / 2
                    gamma = mpmath.mpf(eta) * tc * tb * mpmath.cos(h) ** 2
                    total += mpmath.mpf(e) * mpmath.mpf(1) / 4 * mpmath.mpf(1) / 2 * mpmath.exp(-gamma * mu)
        return float(total)


def beta_double_sum(n, rho):
    """(1 / (N_a N)) sum_{l=0}^{N-1} sum_{m=0}^{N-l-1} rho^m, summed literally."""
    total = math.fsum(rho**m for l in range(n) for m in range(n - l))
    return total / ((n + 1) / 2 * n)


def beta_linear(n, rho):
    """Same average, inner geometric sums closed: O(N) for long frames."""
    total = math.fsum((1.0 - rho ** (n - l)) / (1.0 - rho) for l in range(n))
    return total / ((n + 1) / 2 * n)


def h2(u):
    if u <= 0 or u >= 1:
        return 0.0
    return -u * math.log2(u) - (1 - u) * math.log2(1 - u)


def gates(t_s, dt, f):
    return math.floor((t_s - dt) * f + 1e-7)


def detector_chain(p_ph0, eta, pdc, q_amp, tau, dt, f, t_s, tol=1e-14, max_iter=100_000):
    """Scalar Picard iteration of the afterpulse / dead-time equations.

    Returns a dict with P_T, C, P_N, P_APC, P_af.
    """
    n = gates(t_s, dt, f)
    n_a = (n + 1) / 2
    k = 1.0 / tau
    rho = math.exp(-k / f)
    beta = beta_linear(n, rho) if n > 1 else 1.0
    p_af = beta * k * q_amp * math.exp(-k * dt)

    def c_of(p):
        return 1.0 / (p * max(f * dt - 1.0, 0.0) + 1.0)

    # Complements are carried as logs so that tiny p_dc and P_TC P_af keep
    # their digits.
    def parts(p):
        log_apc = n_a * math.log1p(-p * c_of(p) * p_af)
        return log_apc, -math.expm1(math.log1p(-pdc) + log_apc)

    log_ph0 = math.log(p_ph0)
    p = -math.expm1(math.log1p(-pdc) + log_ph0)
    for _ in range(max_iter):
        log_apc, pn = parts(p)
        nxt = -math.expm1(math.log1p(-pdc) + log_apc + log_ph0)
        done = abs(nxt - p) <= tol * p
        p = nxt
        if done:
            break
    log_apc, pn = parts(p)
    return {"P_T": p, "C": c_of(p), "P_N": pn, "P_APC": math.exp(log_apc), "P_af": p_af, "N": n}


def key_rate_chain(
    *,
    eta=9.32e-2,
    pdc=2.028e-5,
    q_amp=15.35e-9,
    tau=71.5e-6,
    dt=10e-6,
    f=5e6,
    t_s=500e-6,
    t_fr=1e-3,
    alpha=0.2,
    length=0.0,
    tb=0.5,
    mus=(1.0,),
    eps=(1.0,),
    q=1,
    ec=1.1,
):
    """Sifted rate, QBER, r_1, e_1 and raw S for symmetric detectors, from scratch."""
    tc = 10 ** (-alpha * length / 10)
    gamma = eta * tc * tb
    det = []
    for w in (0, 1):
        p0 = p_ph0_mp(eta, tc, tb, mus, eps, w)
        det.append(detector_chain(p0, eta, pdc, q_amp, tau, dt, f, t_s))
    mu1 = mus[0]

    def clicks(d):
        c, pn = d["C"], d["P_N"]
        full = c * (1 - (1 - pn) * math.exp(-gamma * mu1))
        half = c * (1 - (1 - pn) * math.exp(-gamma * mu1 / 2))
        return [full, c * pn, half, half]

    def protos(d, n):
        c, pn = d["C"], d["P_N"]
        return [c * (1 - (1 - pn) * (1 - gamma) ** n), c * pn, c * (1 - (1 - pn) * (1 - gamma / 2) ** n)]

    p = [clicks(d) for d in det]
    singles = []
    for w in (0, 1):
        o = p[1 - w]
        singles.append([p[w][0] * (1 - o[1]), p[w][1] * (1 - o[0]), p[w][2] * (1 - o[3])])
    rate = sum(s[q - 1] + s[1] for s in singles)
    qber = sum(s[1] for s in singles) / rate

    z1 = []
    for w in (0, 1):
        z = protos(det[w], 1)
        o = p[1 - w]
        z1.append([z[0] * (1 - o[1]), z[1] * (1 - o[0]), z[2] * (1 - o[3])])
    y1 = sum(s[q - 1] + s[1] for s in z1)
    e1 = sum(s[1] for s in z1) / y1
    r1 = y1 * mu1 * math.exp(-mu1)
    n_g = min(d["N"] for d in det)
    s_raw = eps[0] * n_g / (2 * t_fr) * (r1 * (1 - h2(e1)) - ec * rate * h2(qber))
    return {"R": rate, "E": qber, "r1": r1, "e1": e1, "S": s_raw, "P_TC": det[0]["P_T"] * det[0]["C"]}
