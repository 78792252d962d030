"""One-off tuner for the shipped contextual-DGP coefficients.

Solves for intercepts, outcome offsets and two selection dials so that the
default configuration hits its targets, then prints the frozen constant
blocks pasted into simlab.py. Everything runs on closed-form expectations
over one large covariate draw, so the solve is smooth and deterministic:

  share_j = E[pi_j(X)]                (no arm draw needed)
  rate_j  = E[pi_j(X) m_j(X)] / E[pi_j(X)]
  cate_jk = E[m_j(X)] - E[m_k(X)]

Targets:
  arm shares 1:1:1; observed event rates (0.38, 0.34, 0.51);
  true effects (0.05, -0.11, -0.16);
  a hidden-x4 confounding strong enough that an analysis adjusting for all
  measured covariates still carries a bias of at least ~0.13 per pair
  (checked against a quadrature version of the covariate-adjusted estimand);
  1:10:9 intercepts; overlap scales with strictly ordered minimum assignment
  probability mass.

The x4 selection pulls observed rates apart; the x5 dials (d1, d3) are free
parameters the solver uses to cancel that gap at the raw-rate level. An
analysis that adjusts for the measured x5 removes the cancellation but not
the hidden x4 part, which is exactly the point.
"""

import numpy as np
from scipy import optimize, special

from mtsens import simlab

rng = np.random.default_rng(20260817)
N = 1_000_000
print("drawing covariates ...", flush=True)
X = simlab._draw_covariates(rng, N)

# --- structure ---------------------------------------------------------------
TREAT_LINEAR = (1, 2, 4, 5, 6, 8, 9, 11, 12, 13, 14, 15)
TREAT_TRANSFORMS = (
    ("square", 1),
    ("product", 11, 13),
    ("product", 12, 13),
    ("product", 14, 15),
    ("product", 11, 14),
    ("product", 12, 15),
    ("product", 11, 15),
    ("product", 12, 14),
    ("expscale", 2, 0.5),
    ("gt", 12, 0.8392),
)
OUT_LINEAR = (1, 3, 4, 5, 7, 8, 10, 11, 12, 13, 14, 15)
OUT_TRANSFORMS = (
    ("square", 3),
    ("product", 11, 13),
    ("product", 12, 13),
    ("product", 14, 15),
    ("product", 11, 14),
    ("product", 12, 15),
    ("product", 11, 15),
    ("product", 12, 14),
    ("expscale", 1, 0.5),
    ("gt", 11, 0.0),
)

XA = X[:, [i - 1 for i in TREAT_LINEAR]]
QA = simlab.transform_columns(X, TREAT_TRANSFORMS)
XY = X[:, [i - 1 for i in OUT_LINEAR]]
QY = simlab.transform_columns(X, OUT_TRANSFORMS)

# per-column scale so a pattern entry of 0.3 contributes ~0.3 sd to the logit
sda = XA.std(axis=0)
sdqa = QA.std(axis=0)
sdy = XY.std(axis=0)
sdqy = QY.std(axis=0)

I4_T = TREAT_LINEAR.index(4)
I5_T = TREAT_LINEAR.index(5)
I4_Y = OUT_LINEAR.index(4)
I5_Y = OUT_LINEAR.index(5)

# hidden-confounder strength: x4 assignment pull (arm1 up, arm3 down) and a
# common outcome slope; raised until the adjusted-estimand bias target holds.
# Q4 is kept moderate so assignment probabilities stay off the floor; E4
# carries the bias instead (a common slope cancels in every true effect).
Q4 = 0.85
Q4_3 = 1.00
E4 = 2.00

TREAT_PATTERN = np.array(
    [
        # x1    x2    x4    x5    x6    x8    x9    x11   x12   x13   x14   x15
        [0.20, -0.15, Q4, 0.00, 0.15, -0.10, 0.10, 0.15, 0.20, -0.25, 0.15, -0.10],
        [-0.15, 0.20, 0.00, 0.00, -0.15, 0.15, -0.10, -0.20, 0.15, 0.30, -0.10, 0.15],
        [0.10, 0.10, -Q4_3, 0.00, 0.10, 0.10, 0.05, 0.10, -0.25, -0.15, -0.10, 0.10],
    ]
)
TREAT_NL_PATTERN = 0.7 * np.array(
    [
        [0.15, 0.30, -0.20, 0.15, -0.20, 0.15, 0.10, -0.10, 0.20, -0.20],
        [-0.10, -0.25, 0.30, -0.20, 0.15, -0.10, -0.15, 0.20, -0.15, 0.30],
        [0.05, 0.20, 0.15, 0.25, 0.10, -0.20, 0.10, 0.15, -0.10, -0.15],
    ]
)
OUT_PATTERN = np.array(
    [
        # x1    x3    x4   x5     x7    x8    x10   x11   x12   x13   x14   x15
        [0.25, 0.40, E4, -1.80, 0.30, -0.25, 0.10, 0.30, -0.30, 0.40, -1.10, -0.15],
        [-0.20, -0.30, E4, 0.00, -0.20, 0.20, -0.10, -0.25, 0.40, -0.35, 0.00, 0.25],
        [0.30, 0.20, E4, -1.60, 0.15, 0.30, 0.05, 0.20, 0.30, 0.30, -1.10, 0.20],
    ]
)
OUT_NL_PATTERN = np.array(
    [
        [0.15, 0.25, -0.20, 0.15, -0.15, 0.10, 0.10, -0.10, 0.10, -0.20],
        [-0.10, -0.20, 0.25, -0.15, 0.10, -0.15, -0.10, 0.15, -0.10, 0.25],
        [0.10, 0.15, 0.10, 0.20, 0.10, -0.10, 0.05, 0.10, 0.05, -0.10],
    ]
)

ETA_L = OUT_PATTERN / sdy[None, :]
ETA_NL = OUT_NL_PATTERN / sdqy[None, :]
XI_NL = TREAT_NL_PATTERN / sdqa[None, :]

TARGET_RATES = np.array([0.38, 0.34, 0.51])
# effects (1,2) and (2,3); (1,3) follows
TARGET_CATES = np.array([0.05, -0.16])
GAMMA_STRONG = 1.0


I14_T = TREAT_LINEAR.index(14)


def xi_matrix(d1: float, d3: float) -> np.ndarray:
    # each dial loads two measured outcome-relevant columns at once so the
    # cancellation capacity is reached before either column saturates; the
    # negative outcome slopes shared by arms 1 and 3 mean d1 > 0 selects the
    # high-x5/x14 units into arm 1 while d3 < 0 selects the low ones into
    # arm 3, so the two arms never compete for the same units
    pat = TREAT_PATTERN.copy()
    pat[0, I5_T] = 0.6 * d1
    pat[0, I14_T] += 0.6 * d1
    pat[2, I5_T] = 0.6 * d3
    pat[2, I14_T] += 0.6 * d3
    return pat / sda[None, :]


def model(alphas, taus, d1, d3, gamma=GAMMA_STRONG, xa=None, qa=None, xy=None, qy=None):
    xa, qa = (XA, QA) if xa is None else (xa, qa)
    xy, qy = (XY, QY) if xy is None else (xy, qy)
    logits = np.asarray(alphas)[None, :] + gamma * (xa @ xi_matrix(d1, d3).T + qa @ XI_NL.T)
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    pi = e / e.sum(axis=1, keepdims=True)
    m = special.expit(np.asarray(taus)[None, :] + xy @ ETA_L.T + qy @ ETA_NL.T)
    return pi, m


def summary(pi, m):
    shares = pi.mean(axis=0)
    pot = m.mean(axis=0)
    rates = (pi * m).sum(axis=0) / pi.sum(axis=0)
    return shares, pot, rates


def residual(theta):
    a2, a3, t1, t2, t3, d1, d3 = theta
    pi, m = model((0.0, a2, a3), (t1, t2, t3), d1, d3)
    shares, pot, rates = summary(pi, m)
    return np.array(
        [
            shares[0] - 1.0 / 3.0,
            shares[1] - 1.0 / 3.0,
            rates[0] - TARGET_RATES[0],
            rates[1] - TARGET_RATES[1],
            rates[2] - TARGET_RATES[2],
            (pot[0] - pot[1]) - TARGET_CATES[0],
            (pot[1] - pot[2]) - TARGET_CATES[1],
        ]
    )


print("solving for intercepts, offsets and selection dials ...", flush=True)
# bounded so the dials stay at observational-study scale instead of running
# off to a degenerate deterministic-assignment solution
theta0 = np.array([0.0, 0.0, -0.3, -0.6, 0.2, 1.2, -1.2])
lo = np.array([-4.0, -4.0, -5.0, -5.0, -5.0, -2.5, -2.5])
hi = np.array([4.0, 4.0, 5.0, 5.0, 5.0, 2.5, 2.5])
sol = optimize.least_squares(
    residual, theta0, bounds=(lo, hi), xtol=1e-14, ftol=1e-14, gtol=1e-14
)
print("converged:", sol.success, " max |resid|:", np.abs(sol.fun).max())
a2, a3, t1, t2, t3, d1, d3 = sol.x
ALPHAS = (0.0, float(a2), float(a3))
TAUS = (float(t1), float(t2), float(t3))
XI_L = xi_matrix(d1, d3)

pi, m = model(ALPHAS, TAUS, d1, d3)
shares, pot, rates = summary(pi, m)
cates = {(1, 2): pot[0] - pot[1], (1, 3): pot[0] - pot[2], (2, 3): pot[1] - pot[2]}
print("shares:", np.round(shares, 4))
print("rates :", np.round(rates, 4), " targets", TARGET_RATES)
print("pot   :", np.round(pot, 4))
print("cates :", {k: round(v, 4) for k, v in cates.items()})
print("dials d1, d3:", round(float(d1), 4), round(float(d3), 4))
gaps = rates - pot
sel4 = [(pi[:, j] * X[:, 3]).sum() / pi[:, j].sum() - X[:, 3].mean() for j in range(3)]
sel5 = [(pi[:, j] * X[:, 4]).sum() / pi[:, j].sum() - X[:, 4].mean() for j in range(3)]
print("raw gaps rate-pot:", np.round(gaps, 4))
print("x4 selection shift per arm:", np.round(sel4, 3))
print("x5 selection shift per arm:", np.round(sel5, 3))

# --- hidden-x4 residual bias of the covariate-adjusted estimand --------------
# E_x[ E[Y | A=j, X_{-4}] ]: integrate x4 out of pi_j*m_j and pi_j against
# its N(-1, 1) law on a subsample, then average the ratio over units.
print("checking adjusted-estimand bias from hiding x4 ...", flush=True)
SUB = 40_000
nodes, w = np.polynomial.hermite_e.hermegauss(21)
w = w / w.sum()
num = np.zeros((SUB, 3))
den = np.zeros((SUB, 3))
Xs = X[:SUB].copy()
for t, wt in zip(nodes, w):
    Xs[:, 3] = -1.0 + t
    xa_t = Xs[:, [i - 1 for i in TREAT_LINEAR]]
    qa_t = simlab.transform_columns(Xs, TREAT_TRANSFORMS)
    xy_t = Xs[:, [i - 1 for i in OUT_LINEAR]]
    qy_t = simlab.transform_columns(Xs, OUT_TRANSFORMS)
    pi_t, m_t = model(ALPHAS, TAUS, d1, d3, xa=xa_t, qa=qa_t, xy=xy_t, qy=qy_t)
    num += wt * pi_t * m_t
    den += wt * pi_t
adj = (num / den).mean(axis=0)
adj_bias = {
    (1, 2): (adj[0] - adj[1]) - cates[(1, 2)],
    (1, 3): (adj[0] - adj[2]) - cates[(1, 3)],
    (2, 3): (adj[1] - adj[2]) - cates[(2, 3)],
}
print("adjusted-estimand bias:", {k: round(v, 4) for k, v in adj_bias.items()})
if min(abs(v) for v in adj_bias.values()) < 0.14:
    print("WARNING: weakest pair bias below 0.14 — raise Q4/E4 and rerun")
print("Bernoulli noise E[m(1-m)] per arm:", np.round((m * (1 - m)).mean(axis=0), 4))

# --- 1:10:9 intercepts --------------------------------------------------------
print("solving 1:10:9 intercepts ...", flush=True)


def share_resid(ab):
    pi_r, _ = model((0.0, ab[0], ab[1]), TAUS, d1, d3)
    s = pi_r.mean(axis=0)
    return np.array([s[0] - 0.05, s[1] - 0.50])


sol_r = optimize.least_squares(
    share_resid, np.array([2.2, 2.1]), bounds=(-6.0, 6.0), xtol=1e-14, ftol=1e-14
)
AB_RATIO = (0.0, float(sol_r.x[0]), float(sol_r.x[1]))
pi_r, _ = model(AB_RATIO, TAUS, d1, d3)
print("1:10:9 shares:", np.round(pi_r.mean(axis=0), 4), " converged:", sol_r.success)

# --- overlap scales -----------------------------------------------------------
print("overlap sweep (min assignment probability at n=10^4) ...", flush=True)
Xo = simlab._draw_covariates(np.random.default_rng(7), 10_000)
xa_o = Xo[:, [i - 1 for i in TREAT_LINEAR]]
qa_o = simlab.transform_columns(Xo, TREAT_TRANSFORMS)
for g in (0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0):
    logits = np.asarray(AB_RATIO)[None, :] + g * (xa_o @ XI_L.T + qa_o @ XI_NL.T)
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    pi_o = e / e.sum(axis=1, keepdims=True)
    print(f"  gamma={g:4.2f}  min pi = {pi_o.min():.2e}")


def fmt_matrix(mat):
    rows = []
    for row in mat:
        rows.append("    (" + ", ".join(f"{v:.6f}" for v in row) + "),")
    return "(\n" + "\n".join(rows) + "\n)"


print("\n--- frozen constants ---------------------------------------------")
print("_CTX_TREAT_LINEAR =", TREAT_LINEAR)
print("_CTX_XI_L =", fmt_matrix(XI_L))
print("_CTX_XI_NL =", fmt_matrix(XI_NL))
print("_CTX_TAUS =", tuple(round(v, 6) for v in TAUS))
print("_CTX_ETA_L =", fmt_matrix(ETA_L))
print("_CTX_ETA_NL =", fmt_matrix(ETA_NL))
print("RATIO_ALPHAS:", {"1:1:1": tuple(round(v, 6) for v in ALPHAS),
                        "1:10:9": tuple(round(v, 6) for v in AB_RATIO)})
print("CONTEXTUAL_TRUE_CATES =", {k: round(float(v), 5) for k, v in cates.items()})
