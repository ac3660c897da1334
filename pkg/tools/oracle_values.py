"""Closed-form reference values at 50 significant digits.

Run ``python3 tools/oracle_values.py`` and paste the output into
``tests/_frozen.py`` whenever a default changes. The last block is the
golden network output computed by the numpy reference in
``reference_net.py``.
"""
import sys
from pathlib import Path

from mpmath import mp, mpf, exp, log, sqrt

mp.dps = 50

GAMMA = mpf("1.5")
SIGMA_MIN = mpf("0.05")
SIGMA_MAX = mpf("0.5")


def g(t):
    ratio = SIGMA_MAX / SIGMA_MIN
    return SIGMA_MIN * ratio**t * sqrt(2 * log(ratio))


def var(t, gamma=GAMMA):
    ratio = SIGMA_MAX / SIGMA_MIN
    lr = log(ratio)
    return SIGMA_MIN**2 * (ratio ** (2 * t) - exp(-2 * gamma * t)) * lr / (gamma + lr)


def main():
    t_eps = mpf("0.03")
    values = {
        "G0": g(0),
        "G1": g(1),
        "G1_SQ": g(1) ** 2,
        "VAR1": var(1),
        "STD1": sqrt(var(1)),
        "VAR_HALF": var(mpf("0.5")),
        "VAR_QUARTER": var(mpf("0.25")),
        "VAR_TEPS": var(t_eps),
        "EXP_NEG_GAMMA": exp(-GAMMA),
        "EXP_NEG_2GAMMA": exp(-2 * GAMMA),
        "EXP_NEG_1": exp(-1),
        "SCORE_ONE_SIGMA": -1 / sqrt(var(1)),
        # Gaussian marginal toy: m0=0, s0^2=1, y=0.5, t=0.5, x_t=0
        "TOY_MEAN_HALF": (1 - exp(-GAMMA / 2)) * mpf("0.5"),
        "TOY_VAR_HALF": exp(-GAMMA) + var(mpf("0.5")),
        # sampler toy at t_eps: prior N(0,1), y=0.5
        "PC_MEAN_TEPS": (1 - exp(-GAMMA * t_eps)) * mpf("0.5"),
        "PC_VAR_TEPS": exp(-2 * GAMMA * t_eps) + var(t_eps),
    }
    values["TOY_SCORE_HALF"] = values["TOY_MEAN_HALF"] / values["TOY_VAR_HALF"]
    for name, value in values.items():
        print(f"{name} = {mp.nstr(value, 20)}")
    golden()


def golden():
    sys.path.insert(0, str(Path(__file__).parent))
    import reference_net as ref

    config, params, freqs, x_t, y, t = ref.golden_case()
    out = ref.forward(params, freqs, config.to_dict(), x_t, y, t).ravel()
    print("GOLDEN_FORWARD = {")
    for i in ref.GOLDEN_INDICES:
        print(f"    {i}: complex({float(out[i].real)!r}, {float(out[i].imag)!r}),")
    print("}")


if __name__ == "__main__":
    main()
