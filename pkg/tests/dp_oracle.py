"""High-precision reference values for the DP calibration (mpmath, 50 digits).

Independent of the package: only mpmath, no imports from anofel.
"""

import mpmath as mp

mp.mp.dps = 50


def sensitivity(clip, size):
    return 2 * mp.mpf(clip) / size


def c_factor(delta):
    return mp.sqrt(2 * mp.log(mp.mpf("1.25") / mp.mpf(delta)))


def sigma(epsilon, delta, clip, size, exposures=1):
    return c_factor(delta) * exposures * sensitivity(clip, size) / mp.mpf(epsilon)


def gamma(epsilon, delta):
    e = mp.mpf(epsilon)
    d = mp.mpf(delta)
    return (1 - mp.exp(-e) + 2 * d) / (mp.exp(e) + 1)


def alpha(s_f, k, delta, epsilon, constant=1):
    r = mp.mpf(s_f) * mp.sqrt(k * mp.log(1 / mp.mpf(delta))) / mp.mpf(epsilon)
    return constant * r * mp.sqrt(max(mp.log(k), 1))


if __name__ == "__main__":
    print("S_f", sensitivity(1, 100))
    print("c", c_factor("1e-5"))
    print("sigma", sigma("0.9", "1e-5", 1, 100))
    print("gamma", gamma("0.9", "1e-5"))
    print("alpha k=1", alpha(sensitivity(1, 100), 1, "1e-5", "0.9"))
    print("alpha ratio 16/4", alpha(1, 16, "1e-5", "0.9") / alpha(1, 4, "1e-5", "0.9"))
