"""Independent evaluation of the hierarchical bound recursion used to freeze
the reference values in bounds.rs (two hierarchies {6, 6} then {1, 1},
delta = 0.1, epsilon = 1, T = 5, C = 0.015, u_max = 1)."""
from math import exp, sqrt

DELTA, EPS, T, C = 0.1, 1.0, 5, 0.015


def lower(d, e, n, c):
    b = 2 * (n - (2 + c) * d)
    a1 = 2 * n - 4 * d - 2 * c * d
    return 1 - (4 * c * d * e + 8 * d * e + 3 * d) / (4 * e * n) + (a1 * e + 3 * d) / (4 * e * n) * exp(-2 * e * b / d)


def upper(d, e, n, norm):
    m = n * norm + 2 * d
    a2 = 4 * m * m - 8 * d * m - 4 * m * n * norm
    b2 = 6 * d * m - 8 * d * d - 4 * d * n * norm
    c2 = 3 * d * d
    return (1 + (a2 * e * e + b2 * e + c2) / (8 * d * e * n * norm) * exp(-2 * e * m / d)
            - (16 * d * e * e + 4 * d * e + 3 * d) / (16 * e * n * norm) * exp(-e))


hierarchies = [([6.0, 6.0], 1.0), ([1.0, 1.0], 0.0)]
carried = 0.0
for i, (powers, p_u) in enumerate(hierarchies, 1):
    n = len(powers)
    norm = sqrt(sum(p * p for p in powers))
    dp = p_u / 2 + carried
    m = 1 - (T - 1) * (1 - lower(DELTA + 2 * dp / (2 + C), EPS, n, C) * n) / 2
    big_m = 1 - (1 - upper(DELTA + dp, EPS, n, norm)) / T
    print(f"delta_prime_{i} = {dp!r}\nm_{i} = {m!r}\nM_{i} = {big_m!r}")
    carried += n * T * (1 - min(1.0, max(0.0, m))) * norm
