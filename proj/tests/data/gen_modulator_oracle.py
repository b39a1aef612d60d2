# Regenerates modulator_oracle.txt: "epoch value" for T = 1000, k = 6,
# m_min = 0.2, m_max = 1.0, evaluated with 40 significant digits.
import mpmath

mpmath.mp.dps = 40
T, k, lo, hi = 1000, 6, mpmath.mpf("0.2"), mpmath.mpf(1)
with open("modulator_oracle.txt", "w") as f:
    for t in range(T + 1):
        m = lo + (1 + mpmath.tanh(k * mpmath.mpf(t) / T - 3)) / 2 * (hi - lo)
        f.write(f"{t} {mpmath.nstr(m, 25)}\n")
