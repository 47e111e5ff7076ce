"""Command-line entry point.

Subcommands: prepare, train, eval, inspect, compare. Every run writes a
manifest recording the resolved configuration, input digests, and seed;
emitted CSV/HTML files carry the manifest digest. Exit codes: 0 success,
1 usage error, 2 data error, 3 training divergence.

The environment variable RMN_SEED overrides the configured seed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__
from . import feature_maps as fm
from . import report
from . import training as tr
from .autodiff import TensorError
from .checkpoint import (Checkpoint, CheckpointError, collect_arrays,
                         load_checkpoint, restore_arrays, save_checkpoint)
from .data import (ContainerError, DataError, DialogParseError,
                   StoryParseError, VocabError, prepare_dialog_corpus,
                   prepare_story_corpus, read_corpus)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGED = 3

_DATA_ERRORS = (DataError, StoryParseError, DialogParseError, ContainerError,
                CheckpointError, VocabError, FileNotFoundError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


class UsageError(Exception):
    pass


def _file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_path, command: str, settings: dict,
                   dataset_digests: dict, seed: int) -> str:
    """Persist the run manifest; returns the digest other outputs reference.

    The digest covers only the deterministic fields, so identical reruns
    produce identical references; timestamps are recorded but excluded.
    """
    stable = {
        "command": command,
        "settings": settings,
        "dataset_digests": dataset_digests,
        "seed": seed,
        "version": __version__,
    }
    digest = hashlib.sha256(
        json.dumps(stable, sort_keys=True).encode("utf-8")).hexdigest()
    manifest = dict(stable, digest=digest,
                    timestamp=time.strftime("%Y-%m-%dT%H:%M:%S"))
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return digest


def _seed_override(cfg_seed: int) -> int:
    env = os.environ.get("RMN_SEED")
    return int(env) if env else cfg_seed


# -- subcommands ---------------------------------------------------------------


def cmd_prepare(args) -> int:
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    if args.dataset == "story":
        corpus = prepare_story_corpus(args.data_dir, args.task, args.out)
    else:
        if args.task in ("all", "joint"):
            raise UsageError("dialog preparation is per task (1-5)")
        corpus = prepare_dialog_corpus(args.data_dir, int(args.task), args.out,
                                       double_silence=args.double_silence)
    digest = write_manifest(
        args.out + ".manifest.json", "prepare",
        {"dataset": args.dataset, "task": str(args.task),
         "double_silence": bool(args.double_silence)},
        {"corpus": corpus.digest}, seed=0)
    print(f"wrote {args.out} (digest {corpus.digest[:16]}..., "
          f"manifest {digest[:16]}...)")
    print(f"vocabulary: {len(corpus.vocab)} words, "
          f"{corpus.n_answer_classes} answer classes")
    for name, eps in corpus.splits.items():
        print(f"  split {name}: {len(eps)} episodes")
    return EXIT_OK


def cmd_train(args) -> int:
    with open(args.config, "r", encoding="utf-8") as fh:
        cfg = tr.parse_config_text(fh.read())
    cfg.seed = _seed_override(cfg.seed)
    corpus = read_corpus(args.corpus)
    os.makedirs(args.out, exist_ok=True)
    digest = write_manifest(
        os.path.join(args.out, "manifest.json"), "train",
        {"config": tr.format_config(cfg)},
        {"corpus": corpus.digest}, seed=cfg.seed)

    network = tr.build_network(cfg, corpus)
    optimizer = tr.AdamState(network.named_parameters())
    result = tr.train(network, corpus, cfg, optimizer=optimizer, log=print)

    metrics_path = os.path.join(args.out, "metrics.csv")
    with open(metrics_path, "w", encoding="utf-8") as fh:
        fh.write(f"# manifest {digest}\n")
        fh.write(tr.metrics_csv(result.history))
    ckpt = Checkpoint(
        config=cfg,
        arrays=collect_arrays(network, optimizer),
        train_state={"seed": cfg.seed, "epochs_done": result.epochs_run,
                     "adam_step": optimizer.step, "manifest": digest},
        metrics=result.history)
    ckpt_path = os.path.join(args.out, "checkpoint.rmn1")
    save_checkpoint(ckpt_path, ckpt)

    results = {}
    for split in ("test", "test_oov"):
        if split in corpus.splits:
            label = "OOV" if split == "test_oov" else "Plain"
            results[label] = tr.evaluate(network, corpus.split(split))
    if results:
        print()
        print(report.error_table(results, title="Test error (%)"))
    print(f"\nwrote {ckpt_path} and {metrics_path}")
    return EXIT_OK


def _load_network(checkpoint_path, corpus):
    ckpt = load_checkpoint(checkpoint_path)
    network = tr.build_network(ckpt.config, corpus)
    restore_arrays(network, ckpt.arrays)
    return ckpt, network


def cmd_eval(args) -> int:
    corpus = read_corpus(args.corpus)
    ckpt, network = _load_network(args.checkpoint, corpus)
    digest = write_manifest(
        (args.out or args.checkpoint) + ".eval-manifest.json", "eval",
        {"config": tr.format_config(ckpt.config)},
        {"corpus": corpus.digest,
         "checkpoint": _file_digest(args.checkpoint)},
        seed=ckpt.config.seed)
    results = {}
    for split in corpus.splits:
        if split.startswith("test") or args.all_splits:
            label = {"test": "Plain", "test_oov": "OOV"}.get(split, split)
            results[label] = tr.evaluate(network, corpus.split(split))
    print(report.error_table(results, title="Test error (%)"))
    csv_text = report.eval_csv(results,
                               epoch=ckpt.train_state.get("epochs_done", 0),
                               manifest_digest=digest)
    out = args.out or (args.checkpoint + ".eval.csv")
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(csv_text)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    corpus = read_corpus(args.corpus)
    ckpt, network = _load_network(args.checkpoint, corpus)
    episodes = corpus.split(args.split)
    if not (0 <= args.episode_id < len(episodes)):
        raise DataError(f"episode id {args.episode_id} out of range "
                        f"(split {args.split} has {len(episodes)} episodes)")
    ep = episodes[args.episode_id]
    os.makedirs(args.out, exist_ok=True)
    digest = write_manifest(
        os.path.join(args.out, "manifest.json"), "inspect",
        {"episode_id": args.episode_id, "split": args.split},
        {"corpus": corpus.digest,
         "checkpoint": _file_digest(args.checkpoint)},
        seed=ckpt.config.seed)

    dist, trace = network.forward_episode(ep)
    vocab = corpus.vocab
    sentences = [" ".join(vocab.decode(s)) for s in ep.sentences]
    question = " ".join(vocab.decode(ep.question))
    gold = vocab.answer_classes[ep.answer_id]
    predicted = vocab.answer_classes[int(dist.argmax())]

    csv_path = os.path.join(args.out, f"trace_{args.episode_id}.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(report.trace_csv(sentences, trace, manifest_digest=digest))
    html_path = os.path.join(args.out, f"trace_{args.episode_id}.html")
    with open(html_path, "w", encoding="utf-8") as fh:
        fh.write(report.trace_html(sentences, trace, question, gold, predicted,
                                   manifest_digest=digest))

    hops = len(trace.hops)
    print(f"episode {args.episode_id} ({len(sentences)} sentences, {hops} hops)")
    for i, s in enumerate(sentences):
        weights = "  ".join(f"a{t + 1}={trace.hops[t].alpha[i]:.2f}"
                            for t in range(hops))
        print(f"  {i + 1:>3} {s:<60} {weights}")
    sums = "  ".join(f"sum(a{t + 1})={trace.hops[t].alpha.sum():.2f}"
                     for t in range(hops))
    print(f"  {sums}")
    verdict = "Correct" if predicted == gold else "Incorrect"
    print(f"question: {question}")
    print(f"answer: {gold}  model: {predicted}  [{verdict}]")
    print(f"wrote {csv_path} and {html_path}")
    return EXIT_OK


def cmd_compare(args) -> int:
    models = [m.strip() for m in args.models.split(",") if m.strip()]
    n_list = [int(n) for n in args.n_list.split(",") if n.strip()]
    for m in models:
        if m not in ("rn", "rmn"):
            raise UsageError(f"unknown model {m!r} (expected rn or rmn)")
    seed = _seed_override(args.seed)
    os.makedirs(args.out, exist_ok=True)
    digest = write_manifest(
        os.path.join(args.out, "manifest.json"), "compare",
        {"models": models, "n_list": n_list, "hops": args.hops,
         "train_epochs": args.train_epochs if args.train_corpus else 0},
        {}, seed=seed)

    rows = []
    for m in models:
        rows.extend(fm.step_cost_profile(m, n_list, hops=args.hops, seed=seed))
    csv_path = os.path.join(args.out, "scaling.csv")
    fm.write_cost_profile_csv(rows, csv_path,
                              header_comment=f"manifest {digest}")
    width = 12
    print("model".ljust(8) + "n".rjust(6) + "pair_evals".rjust(width)
          + "wall_ms".rjust(width))
    for r in rows:
        print(r.model.ljust(8) + str(r.n).rjust(6)
              + str(r.pair_evals).rjust(width) + f"{r.wall_ms:.1f}".rjust(width))
    print(f"wrote {csv_path}")

    if args.train_corpus:
        _compare_training(args, models, n_list, seed, digest)
    return EXIT_OK


def _window_episodes(episodes, n: int):
    from .data.container import CorpusEpisode

    out = []
    for ep in episodes:
        sents = ep.sentences[-n:]
        out.append(CorpusEpisode(sentences=sents, question=ep.question,
                                 answer_id=ep.answer_id, task_id=ep.task_id,
                                 match_candidates=ep.match_candidates))
    return out


def _compare_training(args, models, n_list, seed, digest):
    """Short training runs at each memory cap: error and wall time."""
    corpus = read_corpus(args.train_corpus)
    results = []
    for model in models:
        for n in n_list:
            capped = type(corpus)(
                kind=corpus.kind, vocab=corpus.vocab,
                splits={k: _window_episodes(v, n)
                        for k, v in corpus.splits.items()},
                sentence_max_len=corpus.sentence_max_len,
                question_max_len=corpus.question_max_len,
                n_match_fields=corpus.n_match_fields)
            cfg = tr.story_defaults(task=0, model=model, seed=seed,
                                    epochs=args.train_epochs, patience=0)
            network = tr.build_network(cfg, capped)
            t0 = time.monotonic()
            tr.train(network, capped, cfg)
            secs = time.monotonic() - t0
            ev = tr.evaluate(network, capped.split("test"))
            results.append((model, n, ev.mean_error, secs))
            print(f"trained {model} at memory size {n}: "
                  f"error {ev.mean_error:.1f}%, {secs:.0f}s")
    path = os.path.join(args.out, "compare_training.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# manifest {digest}\n")
        fh.write("model,n,error_pct,train_seconds\n")
        for model, n, err, secs in results:
            fh.write(f"{model},{n},{err:.4f},{secs:.1f}\n")
    print(f"wrote {path}")


# -- parser ----------------------------------------------------------------------


def build_parser() -> _Parser:
    p = _Parser(prog="rmn",
                description="Multi-hop relation memory networks for story "
                            "and dialog question answering")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("prepare", help="preprocess raw task files")
    sp.add_argument("--data-dir", required=True)
    sp.add_argument("--dataset", required=True, choices=("story", "dialog"))
    sp.add_argument("--task", required=True,
                    help="task number, or 'all' for joint story preparation")
    sp.add_argument("--out", required=True)
    sp.add_argument("--double-silence", action="store_true",
                    help="rewrite recommendation-turn silences (dialog task 3)")
    sp.set_defaults(fn=cmd_prepare)

    st = sub.add_parser("train", help="train a model on a prepared corpus",
                        epilog="config file format:\n" + tr.config_schema(),
                        formatter_class=argparse.RawDescriptionHelpFormatter)
    st.add_argument("--config", required=True)
    st.add_argument("--corpus", required=True)
    st.add_argument("--out", required=True)
    st.set_defaults(fn=cmd_train)

    se = sub.add_parser("eval", help="evaluate a checkpoint")
    se.add_argument("--checkpoint", required=True)
    se.add_argument("--corpus", required=True)
    se.add_argument("--out")
    se.add_argument("--all-splits", action="store_true")
    se.set_defaults(fn=cmd_eval)

    si = sub.add_parser("inspect", help="export attention traces for one episode")
    si.add_argument("--checkpoint", required=True)
    si.add_argument("--corpus", required=True)
    si.add_argument("--episode-id", type=int, required=True)
    si.add_argument("--split", default="test")
    si.add_argument("--out", required=True)
    si.set_defaults(fn=cmd_inspect)

    sc = sub.add_parser("compare", help="profile scaling of rn vs rmn")
    sc.add_argument("--models", default="rn,rmn")
    sc.add_argument("--n-list", default="20,130")
    sc.add_argument("--hops", type=int, default=2)
    sc.add_argument("--seed", type=int, default=0)
    sc.add_argument("--train-corpus",
                    help="also run short trainings at each memory cap")
    sc.add_argument("--train-epochs", type=int, default=2)
    sc.add_argument("--out", required=True)
    sc.set_defaults(fn=cmd_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except tr.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except tr.DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TensorError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
