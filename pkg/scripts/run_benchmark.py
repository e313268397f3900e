#!/usr/bin/env python3
"""50-tile benchmark: does pretraining help fusion, and does fusion beat
the best single tour?

For each seed: generate the dataset, pretrain, finetune twice (fresh init
vs pretrained init, same seeds), evaluate both on the test split, and
compare with the strongest no-fusion baseline.
"""

import argparse
import sys
import time

sys.path.insert(0, "src")

from gnmap.evalkit import best_single_tour_report, evaluate_model, fmt_metric, render_text
from gnmap.gnmap_net import NetConfig, TrainConfig, finetune_run, pretrain_run
from gnmap.synth import SynthConfig, gen_dataset


def run_seed(seed: int, pretrain_steps: int, finetune_steps: int, lr: float) -> dict:
    t0 = time.time()
    data = gen_dataset(SynthConfig(seed=seed))
    train, test = data.splits["train"], data.splits["test"]
    net = NetConfig()

    pre = pretrain_run(train, net, TrainConfig(steps=pretrain_steps, lr=lr, seed=seed, log_every=0))
    fresh = finetune_run(train, net, TrainConfig(steps=finetune_steps, lr=lr, seed=seed, log_every=0))
    warm = finetune_run(train, net, TrainConfig(steps=finetune_steps, lr=lr, seed=seed, log_every=0),
                        init=pre.params)

    rep_fresh = evaluate_model(fresh.params, test)
    rep_warm = evaluate_model(warm.params, test)
    rep_tour = best_single_tour_report(test)
    dt = time.time() - t0
    return {
        "seed": seed,
        "pretrain_loss": pre.final_loss,
        "fresh": rep_fresh,
        "warm": rep_warm,
        "single": rep_tour,
        "seconds": dt,
    }


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--pretrain-steps", type=int, default=1500)
    ap.add_argument("--finetune-steps", type=int, default=600)
    ap.add_argument("--lr", type=float, default=1e-3)
    args = ap.parse_args()

    for seed in args.seeds:
        out = run_seed(seed, args.pretrain_steps, args.finetune_steps, args.lr)
        print(f"== seed {seed} ({out['seconds']:.0f}s, pretrain loss {out['pretrain_loss']:.4f})")
        print(render_text([
            ("best single tour", out["single"]),
            ("fused w/o Pre.", out["fresh"]),
            ("fused w/ Pre.", out["warm"]),
        ]))
        gap = (out["warm"].F1 - out["fresh"].F1) * 100.0
        fusion_gain = (out["warm"].F1 - out["single"].F1) * 100.0
        print(f"   pretrain gap: {gap:+.1f} F1 points; fused vs single tour: {fusion_gain:+.1f}")
        sys.stdout.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
