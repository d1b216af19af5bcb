"""High-precision reference values for the constants table.

Writes crates/latkin/tests/golden/constants_reference.json. Run with
`python3 scripts/constants_reference.py`; needs mpmath.
"""

import json
from pathlib import Path

import mpmath as mp

mp.mp.dps = 50


def c9(beta):
    x = mp.mpf(16) ** (1 / (1 - beta)) / 2
    return mp.mpf(2) ** (mp.mpf(7) / 6) * mp.sqrt(3) * mp.sqrt(1 + x * x) ** (mp.mpf(1) / 3)


def c7(d, beta):
    q = d * (1 - beta) / 4
    return (c9(beta) * mp.sqrt(mp.pi) * mp.gamma(q - mp.mpf(1) / 2) / mp.gamma(q)) ** d / 4


def c8(d, beta):
    return max(2 * d * c9(beta) ** d, 2 * c7(d, beta) * (1 - mp.mpf(1) / d) ** (-d))


def cb6(d, beta):
    return 2 + mp.mpf(2) ** (d * (1 - beta) / 2 + 1) * (1 + 2 / (mp.pi * beta)) ** d * 2 / (d * (1 - beta) - 2)


def c6(d):
    """Infimum over 0 < beta < 1 - 2/d: root of the derivative."""
    hi = 1 - mp.mpf(2) / d
    grid = [hi * j / 2000 for j in range(1, 2000)]
    b0 = min(grid, key=lambda b: cb6(d, b))
    b = mp.findroot(lambda b: mp.diff(lambda x: cb6(d, x), b), b0)
    return cb6(d, b), b


def table(d, beta):
    beta = mp.mpf(beta)
    pre = 32 * (mp.mpf(2) ** (mp.mpf(2 * d) / 3) + 3)
    s6 = mp.mpf(2) ** (mp.mpf(d) / 6)
    inf6, _ = c6(d)
    c2 = pre * c8(d, beta)
    c3 = s6 * (s6 + 3) * inf6
    pt = (1 - beta) / 2
    dp = d * pt
    eta = (2 + 4 / (mp.pi * beta)) ** d * mp.mpf(2) ** (-dp) / (dp - 1)
    return {
        "c_beta1": max(c2, mp.sqrt(3) / 6 * c3),
        "c_beta2": c2,
        "c_3": c3,
        "c_beta4": pre * c9(beta) ** d,
        "c_5": s6 * (s6 + 3) * 8,
        "c_6": inf6,
        "c_beta6": cb6(d, beta),
        "c_beta7": c7(d, beta),
        "c_beta8": c8(d, beta),
        "c_beta9": c9(beta),
        "eta": eta,
        "alpha": 1 + eta * (1 + max(1 / abs(dp - 2), 1)),
        "p_d": 2 * dp - 2 if dp < 2 else mp.mpf(2),
    }


def main():
    rows = []
    for d in (3, 4):
        for beta in ("0.1", "0.2", "0.3"):
            values = {k: mp.nstr(v, 30) for k, v in table(d, beta).items()}
            rows.append({"d": d, "beta": float(beta), "values": values})
    out = Path(__file__).resolve().parent.parent / "crates/latkin/tests/golden/constants_reference.json"
    out.write_text(json.dumps({"digits": 30, "rows": rows}, indent=2) + "\n")


if __name__ == "__main__":
    main()
