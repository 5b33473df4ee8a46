"""Emulator accuracy after adaptive ECD enrichment versus a static LHD.

Starts from a 10-point maximin LHD of the Bastos function, adds 10 points
chosen by expected calibration divergence, and prints the leave-one-out Q2
after every addition next to the Q2 of a 20-point LHD.

    python3 demos/bastos_q2.py [seed]
"""

import sys
import warnings

from adakrig.experiment import build_observations, load_config, run_adaptive


def main(seed: int = 0) -> None:
    base = load_config({
        "seed": seed,
        "design": {"initial_size": 10, "lhd_iterations": 1000},
        "budget": 20,
        "sa": {"iterations": 100},
        "ecd": {"n_fantasies": 20, "l1": 300, "l2": 300, "k": 50},
    })
    observations, _ = build_observations(base)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ecd = run_adaptive(base.with_overrides(strategy="ecd"), observations=observations,
                           final_calibration=False)
        lhd = run_adaptive(base.with_overrides(strategy="lhd"), observations=observations,
                           final_calibration=False)
    print("design size  Q2 (ECD enrichment)")
    for size, q2 in ecd.q2_history:
        print(f"{size:11d}  {q2:.4f}")
    print(f"20-point LHD Q2: {lhd.q2:.4f}")
    chosen = ecd.design.points[10:]
    print("points added by ECD:")
    for z in chosen:
        print(f"  ({z[0]:.3f}, {z[1]:.3f})")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 0)
