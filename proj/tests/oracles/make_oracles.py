"""Reference values for the unit tests, computed by quadrature.

Run from the repository root:  python3 tests/oracles/make_oracles.py > tests/unit/oracle_values.hpp
The output is committed; rerunning it should reproduce the file.
"""
import math

import numpy as np
from scipy import integrate, special

np.seterr(all="ignore")


def log_ratio(x, w, mu):
    # log sum_i w_i exp(<x, mu_i> - |mu_i|^2 / 2), x of shape (..., d)
    a = x @ mu.T - 0.5 * np.sum(mu * mu, axis=1)
    return special.logsumexp(a, b=w, axis=-1)


def memberships(x, w, mu):
    a = x @ mu.T - 0.5 * np.sum(mu * mu, axis=1) + np.log(w)
    return np.exp(a - special.logsumexp(a, axis=-1, keepdims=True))


def gauss_hermite_grid(d, order):
    # nodes/weights for E over N(0, I_d) with probabilists' Hermite rule
    t, wt = special.roots_hermitenorm(order)
    wt = wt / math.sqrt(2 * math.pi)
    grids = np.meshgrid(*([t] * d), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    wg = np.ones(pts.shape[0])
    for k, g in enumerate(np.meshgrid(*([wt] * d), indexing="ij")):
        wg *= g.ravel()
    return pts, wg


def population(w, mu, order):
    d = mu.shape[1]
    x, q = gauss_hermite_grid(d, order)
    loss = -np.sum(q * log_ratio(x, w, mu))
    psi = memberships(x, w, mu)
    grad = np.einsum("k,ki,kij->ij", q, psi, mu[None, :, :] - x[:, None, :])
    pt = psi @ mu
    sq = np.sum(q * np.sum(pt * pt, axis=1))
    return loss, grad, sq


def mgf(d, c):
    log_norm = (d / 2 - 1) * math.log(2) + math.lgamma(d / 2)
    f = lambda r: math.exp(c * r + (d - 1) * math.log(r) - r * r / 2 - log_norm) if r > 0 else 0.0
    v, _ = integrate.quad(f, 0, 60, epsabs=1e-14, epsrel=1e-13, limit=200)
    return v


def path_integral(w, mu, x, i, j):
    f = lambda t: float(np.prod(memberships(t * x[None, :], w, mu)[0, [i, j]]) if i != j
                        else memberships(t * x[None, :], w, mu)[0, i] ** 2)
    v, _ = integrate.quad(f, -1, 1, epsabs=1e-14, epsrel=1e-13, limit=200)
    return v


def arr(v):
    return "{" + ", ".join(repr(float(e)) for e in np.ravel(v)) + "}"


def main():
    out = ["#pragma once", "", "// Generated by tests/oracles/make_oracles.py; do not edit.", "",
           "#include <array>", "", "namespace oracle {", ""]

    # separation bound, d=1, n=2, pi=(1/2,1/2), mu=(0.1, -0.1)
    spread = 2 * 0.25 * 0.2 ** 2
    sep = math.exp(-8 * 0.02) / (40000 * 1 * (1 + 2 * 0.1) ** 2) * spread ** 2
    out.append(f"inline constexpr double kSeparationExample = {sep!r};")

    # two-component, d=1
    w1 = np.array([0.3, 0.7]); mu1 = np.array([[1.0], [-0.5]])
    loss1, grad1, sq1 = population(w1, mu1, 200)
    out.append(f"inline constexpr double kLoss1d = {float(loss1)!r};")
    out.append(f"inline constexpr std::array<double, 2> kGrad1d = {arr(grad1)};")
    out.append(f"inline constexpr double kPsiTildeSq1d = {float(sq1)!r};")

    # three-component, d=2
    w2 = np.array([0.2, 0.5, 0.3]); mu2 = np.array([[0.8, -0.4], [-0.3, 0.6], [0.1, 0.2]])
    loss2, grad2, sq2 = population(w2, mu2, 120)
    out.append(f"inline constexpr double kLoss2d = {float(loss2)!r};")
    out.append(f"inline constexpr std::array<double, 6> kGrad2d = {arr(grad2)};")
    out.append(f"inline constexpr double kPsiTildeSq2d = {float(sq2)!r};")

    # small means, where the loss is fourth order in the means
    w3 = np.array([0.25, 0.75]); mu3 = np.array([[0.09, -0.03], [-0.03, 0.01]])
    loss3, _, _ = population(w3, mu3, 60)
    out.append(f"inline constexpr double kLossSmall = {float(loss3)!r};")

    for d, c in [(1, 1 / 3), (9, 1 / 27), (5, 1 / 15)]:
        out.append(f"inline constexpr double kMgf_d{d} = {mgf(d, c)!r};")

    x = np.array([1.5, -2.0])
    out.append(f"inline constexpr double kPathIntegral = {path_integral(w2, mu2, x, 0, 2)!r};")

    out += ["", "}  // namespace oracle", ""]
    print("\n".join(out))


if __name__ == "__main__":
    main()
