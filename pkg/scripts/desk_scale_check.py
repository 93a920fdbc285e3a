#!/usr/bin/env python3
"""
Run the desk-scale experiments and report whether each expected trend holds.

  1. white-box potency: MI-FGSM (eps 16/255, T=10) fools the surrogate on >= 95% of the
     images it classifies correctly
  2. ordering: mean transfer rate US-MM >= Admix >= SIM >= MI-FGSM over the seeds
  3. degradation: SIM's rate at m=12 is below its own peak while USM's holds

Examples::

    uv run python scripts/desk_scale_check.py
    uv run python scripts/desk_scale_check.py --only potency --attack-size 100
    uv run python scripts/desk_scale_check.py --seeds 3 --threads 4 -v

Exits 0 when every selected check passes, 1 otherwise.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

# Allow ``python scripts/...`` without PYTHONPATH.
_REPO_ROOT = Path(__file__).resolve().parents[1]
if str(_REPO_ROOT) not in sys.path:
    sys.path.insert(0, str(_REPO_ROOT))

from transfergrad import datasets as ds  # noqa: E402
from transfergrad import desk_scale  # noqa: E402
from transfergrad.evalharness import sweep_seeds  # noqa: E402

CHECKS = ("potency", "ordering", "degradation")


def _mark(ok: bool) -> str:
    return "✅" if ok else "❌"


def main() -> int:
    parser = argparse.ArgumentParser(description="Desk-scale transfer experiments")
    parser.add_argument("--seed", type=int, default=0, help="Dataset and training seed")
    parser.add_argument("--seeds", type=int, default=3, help="Attack seeds to average")
    parser.add_argument("--attack-size", type=int, default=200)
    parser.add_argument("--epochs", type=int, default=10)
    parser.add_argument("--contrast", type=float, default=ds.DEFAULT_CONTRAST)
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--only", choices=CHECKS, action="append", help="Run selected checks")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args()
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )

    selected = args.only or list(CHECKS)
    print("📋 Training the four-model roster...")
    setup = desk_scale.build_setup(
        args.seed,
        attack_size=args.attack_size,
        epochs=args.epochs,
        contrast=args.contrast,
        quiet=not args.verbose,
    )
    seeds = sweep_seeds(args.seed, args.seeds)
    passed = True

    if "potency" in selected:
        rate = desk_scale.white_box_potency(setup, threads=args.threads)
        ok = rate >= desk_scale.POTENCY_THRESHOLD
        passed &= ok
        print(f"\n{_mark(ok)} white-box potency on {setup.surrogate}: {100 * rate:.1f}%")

    if "ordering" in selected:
        rates = desk_scale.attack_ordering(setup, seeds, threads=args.threads)
        ok = desk_scale.ordering_holds(rates)
        passed &= ok
        print(f"\n{_mark(ok)} transfer ordering (mean over {len(seeds)} seeds):")
        for name in desk_scale.ORDERING:
            print(f"   • {name}: {100 * rates[name]:.1f}%")

    if "degradation" in selected:
        result = desk_scale.scale_degradation(setup, seeds, threads=args.threads)
        ok = result.sim_degrades and result.usm_holds
        passed &= ok
        print(f"\n{_mark(ok)} scale-copy degradation (m = 1..12):")
        print("   • sim: " + " ".join(f"{100 * v:.1f}" for v in result.sim_curve))
        print("   • usm: " + " ".join(f"{100 * v:.1f}" for v in result.usm_curve))

    return 0 if passed else 1


if __name__ == "__main__":
    raise SystemExit(main())
