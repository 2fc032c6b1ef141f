"""Simulate a tape with known impact, then recover the square-root law from it.

    python demos/closed_loop.py [n_sessions]
"""

import sys

from sqrtimpact.impact import metaorder_impact_curve
from sqrtimpact.metaorder import reconstruct_all
from sqrtimpact.simulator import ground_truth_curve, preset_paper_like, simulate, with_overrides
from sqrtimpact.tape import split_sessions


def main(n_sessions=40):
    cfg = with_overrides(preset_paper_like(seed=7), n_sessions=n_sessions)
    tape, ledger = simulate(cfg)
    ms = reconstruct_all(split_sessions(tape, cfg.stock_id))
    curve = metaorder_impact_curve(ms, min_bin_count=50)
    truth = ground_truth_curve(ledger, min_bin_count=50)
    print(f"{len(tape)} events, {len(ms)} metaorders")
    table = curve.to_frame()
    print(table[table["count"] > 0].to_string(index=False, float_format="%.5f"))
    print(f"estimated exponent {curve.fit.exponent:.3f} +- {curve.fit.exponent_se:.3f}")
    print(f"Y estimated {curve.sqrt_fit.Y:.3f}, Y from ledger {truth.sqrt_fit.Y:.3f}")


if __name__ == "__main__":
    main(*map(int, sys.argv[1:]))
