"""Reference numbers for the bundled examples, in one place.

Every entry is ``name -> (value, tolerance, note)``.  Notes say how the value
arises so a drift in any of them can be traced to a formula.
"""
import math

GOLDEN = {
    # three-atom reward {-50: 0.2, 10: 0.5, 100: 0.3}
    "dist3.var@0.5": (10.0, 0.0, "largest atom with P(X < v) <= 0.5"),
    "dist3.q@0.9": (100.0, 0.0, "smallest atom with P(X <= v) >= 0.9"),
    "dist3.cvar@0.5": (-14.0, 1e-12, "(-50*0.2 + 10*0.3) / 0.5"),
    # fair coin {0, 1}
    "coin.var@0.5": (1.0, 0.0, "upper quantile of a fair coin"),
    "coin.q@0.5": (0.0, 0.0, "lower quantile of a fair coin"),
    "coin.cvar@0.75": (1.0 / 3.0, 1e-12, "(0.5 + 0.75 - 1) / 0.75"),
    "coin.kl(1/3,2/3 || 1/2,1/2)": ((1 / 3) * math.log(2 / 3) + (2 / 3) * math.log(4 / 3), 1e-15,
                                    "direct formula"),
    # MC at alpha = 0.5
    "mc.oracle_cvar@0.5": (0.0, 1e-9, "always-a2 policy returns {0, 10} evenly"),
    "mc.cvar_opt@0.5": (4.0, 1e-9, "crossing of 10 - 10z and 90z - 50"),
    "mc.cvar_opt_zeta_s1@0.5": (0.6, 1e-9, "solves 10 - 10z = 90z - 50"),
    "mc.theta_pi1(0)": (10.0, 1e-9, "max(10 - 60z, 90z - 50) at z = 0"),
    "mc.theta_pi1(0.4)": (-14.0, 1e-9, "kink of max(10 - 60z, 90z - 50)"),
    "mc.theta_pi1(1)": (40.0, 1e-9, "mean of {-50: 0.4, 100: 0.6}"),
    "mc.var_opt@0.5": (10.0, 0.0, "both policies have upper 0.5-quantile 10"),
    # ME at alpha = 0.75
    "me.cvar@0.75": (1.0 / 3.0, 1e-12, "coin CVaR"),
    "me.xi_star_s1": (1.0 / 3.0, 1e-12, "CVaR-optimal weight on the rewarding state"),
    "me.eval_cvar@1": (0.5, 1e-12, "mean of the coin"),
    # M3 with M = 600, uniform initial state
    "m3.oracle_cvar@0.5": (50.0, 1e-9, "a3 gives {-100: 0.25, 200: 0.5, 400: 0.25}"),
    "m3.cvar_opt@0.5": (100.0, 1e-9, "decomposition overestimate"),
    "m3.realized@0.5": (0.0, 1e-9, "greedy a1 gives {-600: 0.125, 200: 0.5, 600: 0.375}"),
    "m3.a3_region_lo": (0.375, 1e-4, "a3 starts to beat a2"),
    "m3.a3_region_hi": (0.6875, 1e-4, "a1 overtakes a3"),
}


def value(name: str) -> float:
    return GOLDEN[name][0]


def tol(name: str) -> float:
    return GOLDEN[name][1]
