"""Reference values frozen from ``tools/oracle_values.py``.

Closed forms were evaluated with mpmath at 50 digits and rounded to 20
significant digits. ``GOLDEN_FORWARD`` comes from the direct-summation numpy
network in ``tools/reference_net.py`` on ``reference_net.golden_case()``.
Regenerate with ``python3 tools/oracle_values.py`` if a default changes.
"""

# default SDE: gamma=1.5, sigma_min=0.05, sigma_max=0.5
G0 = 0.10729830131446736198
G1 = 1.0729830131446736198
G1_SQ = 1.151292546497022842
VAR1 = 0.15130750838553109966
STD1 = 0.38898265820667519786
VAR_HALF = 0.014800506891260617869
VAR_QUARTER = 0.0040720648361379439413
VAR_TEPS = 0.0003545726636674013581
EXP_NEG_GAMMA = 0.22313016014842982893
EXP_NEG_2GAMMA = 0.049787068367863942979
EXP_NEG_1 = 0.3678794411714423216
SCORE_ONE_SIGMA = -2.5708086952006935082

# Gaussian-marginal toy: prior N(0, 1), y = 0.5, t = 0.5, x_t = 0
TOY_MEAN_HALF = 0.26381672362949264643
TOY_VAR_HALF = 0.2379306670396904468
TOY_SCORE_HALF = 1.1087966377427253313

# same prior and y, at t_eps = 0.03
PC_MEAN_TEPS = 0.022001259083450046493
PC_VAR_TEPS = 0.91428575793489558811

GOLDEN_FORWARD = {
    0: complex(-0.4700614252113348, 0.12163349223332126),
    7: complex(-0.2847636745436975, 0.40727056012616136),
    20: complex(0.6352320849363655, 0.11233047140993999),
    33: complex(-0.11984432100516362, 0.08974432614992056),
    53: complex(-0.25090663753759046, 0.10914664925786247),
}
