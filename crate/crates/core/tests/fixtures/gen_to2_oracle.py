"""Regenerates to2_oracle.json: small tile-coefficient problems solved with cvxpy.

The MSE of every user is written straight from the received-signal model,
so the fixture does not share any algebra with the Rust quadratic forms.

    python3 gen_to2_oracle.py > to2_oracle.json
"""

import json
import sys

import cvxpy as cp
import numpy as np

K, NU, P, M = 2, 2, 2, 2
N = K * NU
COUNT = 20


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def composite(basis, alpha, k):
    return sum(alpha[k * NU + m] * basis[k][m] for m in range(NU))


def effective(hbar, htil, alpha):
    return hbar + alpha @ htil


def mse_value(g, h, v, noise, i):
    hv = h @ v
    return 1 + abs(g) ** 2 * (np.sum(abs(hv) ** 2) + noise) - 2 * np.real(np.conj(g) * hv[i])


def mse_expr(x, g, hbar, htil, v, noise, i):
    # alpha = conj(x)
    e = [hbar @ v[:, j] + (htil @ v[:, j]) @ cp.conj(x) for j in range(v.shape[1])]
    power = sum(cp.square(cp.abs(ej)) for ej in e) + noise
    return 1 + abs(g) ** 2 * power - 2 * cp.real(np.conj(g) * e[i])


def solve(inst, eps):
    x = cp.Variable(N, complex=True)
    es = [mse_expr(x, inst["g"][i], inst["direct"][i], inst["cascaded"][i], inst["v"], inst["noise"][i], i) for i in range(NU)]
    cons = []
    for k in range(K):
        b = np.stack(inst["basis"][k], axis=1)
        cons.append(cp.sum_squares(b @ cp.conj(x)[k * NU:(k + 1) * NU]) <= P)
    if eps is not None:
        cons += [es[i] <= eps[i] for i in range(NU)]
    prob = cp.Problem(cp.Minimize(sum(es)), cons)
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
    return prob, np.conj(x.value)


def single_user_min(inst, i):
    x = cp.Variable(N, complex=True)
    e = mse_expr(x, inst["g"][i], inst["direct"][i], inst["cascaded"][i], inst["v"], inst["noise"][i], i)
    cons = []
    for k in range(K):
        b = np.stack(inst["basis"][k], axis=1)
        cons.append(cp.sum_squares(b @ cp.conj(x)[k * NU:(k + 1) * NU]) <= P)
    prob = cp.Problem(cp.Minimize(e), cons)
    prob.solve(solver=cp.CLARABEL)
    return prob.value, np.conj(x.value)


def draw(rng):
    basis = [[np.exp(2j * np.pi * rng.random(P)) for _ in range(NU)] for _ in range(K)]
    inst = {
        "basis": basis,
        "cascaded": [0.6 * crandn(rng, N, M) for _ in range(NU)],
        "direct": [crandn(rng, M) for _ in range(NU)],
        "v": crandn(rng, M, NU),
        "noise": list(0.1 + 0.9 * rng.random(NU)),
    }
    alpha0 = crandn(rng, N)
    for k in range(K):
        q = np.sum(abs(composite(basis, alpha0, k)) ** 2)
        alpha0[k * NU:(k + 1) * NU] *= np.sqrt(P / q)
    h0 = [effective(inst["direct"][i], inst["cascaded"][i], alpha0) for i in range(NU)]
    hv = [h0[i] @ inst["v"] for i in range(NU)]
    inst["g"] = [hv[i][i] / (np.sum(abs(hv[i]) ** 2) + inst["noise"][i]) for i in range(NU)]
    return inst


def pack(z):
    z = np.asarray(z)
    return {"re": np.real(z).ravel(order="C").tolist(), "im": np.imag(z).ravel(order="C").tolist(), "shape": list(z.shape)}


def main():
    rng = np.random.default_rng(20240611)
    out = []
    while len(out) < COUNT:
        inst = draw(rng)
        _, alpha_u = solve(inst, None)
        mse_u = [mse_value(inst["g"][i], effective(inst["direct"][i], inst["cascaded"][i], alpha_u), inst["v"], inst["noise"][i], i) for i in range(NU)]
        # tighten user 0 halfway toward its own minimum so its cap binds
        m0, alpha_m0 = single_user_min(inst, 0)
        eps = [mse_u[i] + 0.5 for i in range(NU)]
        eps[0] = 0.5 * (m0 + mse_u[0])
        warm = 0.5 * (alpha_u + alpha_m0)
        warm_mse = [mse_value(inst["g"][i], effective(inst["direct"][i], inst["cascaded"][i], warm), inst["v"], inst["noise"][i], i) for i in range(NU)]
        if any(w > e for w, e in zip(warm_mse, eps)):
            continue
        prob, alpha = solve(inst, eps)
        if prob.status != cp.OPTIMAL:
            continue
        out.append({
            "basis": [[pack(b) for b in row] for row in inst["basis"]],
            "cascaded": [pack(h) for h in inst["cascaded"]],
            "direct": [pack(h) for h in inst["direct"]],
            "v": pack(inst["v"]),
            "g": pack(inst["g"]),
            "noise": inst["noise"],
            "eps": eps,
            "tile_size": float(P),
            "warm_alpha": pack(warm),
            "objective": prob.value,
            "alpha": pack(alpha),
        })
    json.dump({"k": K, "n_users": NU, "p": P, "m": M, "instances": out}, sys.stdout, indent=1)


if __name__ == "__main__":
    main()
