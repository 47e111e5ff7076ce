#!/usr/bin/env python3
"""Optional long run: joint training over all 20 story tasks (10k samples).

This is the multi-day full-scale experiment; it is NOT part of the test
suite. Expects the official en-10k directory.

    python scripts/train_joint_story.py --data-dir data/tasks_1-20_v1-2/en-10k \
        --out runs/joint10k --epochs 200
"""

import argparse
import os
import sys

from rmn import training as tr
from rmn.cli import write_manifest
from rmn.checkpoint import Checkpoint, collect_arrays, save_checkpoint
from rmn.data import prepare_story_corpus, read_corpus
from rmn.report import error_table


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--data-dir", required=True)
    ap.add_argument("--out", required=True)
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    os.makedirs(args.out, exist_ok=True)
    corpus_path = os.path.join(args.out, "joint.rmnd")
    if os.path.exists(corpus_path):
        corpus = read_corpus(corpus_path)
    else:
        corpus = prepare_story_corpus(args.data_dir, "all", corpus_path)
    print(f"joint corpus: {len(corpus.split('train'))} training episodes, "
          f"{corpus.n_answer_classes} answer classes")

    cfg = tr.story_defaults(task=0, epochs=args.epochs, seed=args.seed,
                            patience=10)
    digest = write_manifest(os.path.join(args.out, "manifest.json"),
                            "train-joint", {"config": tr.format_config(cfg)},
                            {"corpus": corpus.digest}, seed=cfg.seed)
    network = tr.build_network(cfg, corpus)
    optimizer = tr.AdamState(network.named_parameters())
    result = tr.train(network, corpus, cfg, optimizer=optimizer, log=print)

    with open(os.path.join(args.out, "metrics.csv"), "w") as fh:
        fh.write(f"# manifest {digest}\n")
        fh.write(tr.metrics_csv(result.history))
    save_checkpoint(os.path.join(args.out, "checkpoint.rmn1"), Checkpoint(
        config=cfg, arrays=collect_arrays(network, optimizer),
        train_state={"seed": cfg.seed, "epochs_done": result.epochs_run,
                     "manifest": digest},
        metrics=result.history))
    print(error_table({"Test": tr.evaluate(network, corpus.split("test"))}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
