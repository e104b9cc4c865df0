"""
channel-forge command line

    python main.py verify net.netdsl
    python main.py mutate net.netdsl --rounds 2 --seed 7
    python main.py mutate net.netdsl --seed 7 --count 50 --out variants/
    python main.py analyze net.netdsl
    python main.py bootstrap --net alexnet_cifar --count 100 --out-dir runs/a
    python main.py search --config search.json --epochs 22 --proposer external
    python main.py stats --repo runs/a --early 0,5 --late 16,21 --window 3
    python main.py export-corpus --repo runs/a --out corpus.jsonl
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from database_files.database import ModelRepository, export_corpus
from src.dsl import parse
from src.errors import ChannelForgeError
from src.graph import analyze_net
from src.ir import width_vector
from src.log_config import configure_logging
from src.mutation import MutatorConfig, bootstrap, draw_rng, mutate
from src.search import SearchConfig, SearchOrchestrator, resolve_seed
from src.stats import analyze
from src.verify import verify
from src.verify.verifier import DEFAULT_MAX_PARAMS

logger = logging.getLogger(__name__)

RULE = "=" * 60


def epoch_range(text: str):
    low, high = (int(part) for part in text.split(","))
    if low > high:
        raise argparse.ArgumentTypeError(f"range {text} is empty")
    return low, high


def create_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="channel-forge",
                                     description="Channel-width mutation and closed-loop architecture search")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")
    parser.add_argument("--log-file", help="also write the log here")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="Three-stage verification of a network file")
    p.add_argument("file")
    p.add_argument("--max-params", type=int, default=DEFAULT_MAX_PARAMS)

    p = sub.add_parser("mutate", help="Apply random channel mutations to a network file")
    p.add_argument("file")
    p.add_argument("--rounds", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width-min", type=int, default=4)
    p.add_argument("--width-max", type=int, default=1024)
    p.add_argument("--count", type=int, help="write this many distinct verified variants to the --out directory")
    p.add_argument("--out", help="variant file (or directory with --count) instead of stdout")

    p = sub.add_parser("analyze", help="Shapes and mutation groups of a network file")
    p.add_argument("file")

    for name, help_text in (("bootstrap", "Build the epoch-0 population"), ("search", "Run the closed search loop")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON file mirroring SearchConfig")
        p.add_argument("--net", help="seed network name or .netdsl path")
        p.add_argument("--seed", type=int, help="rng seed")
        p.add_argument("--count", type=int, help="bootstrap population size")
        p.add_argument("--epochs", type=int)
        p.add_argument("--candidates", type=int, help="candidates per epoch")
        p.add_argument("--delta", type=float)
        p.add_argument("--policy", choices=["uniform", "topk"])
        p.add_argument("--proposer", choices=["random", "external", "replay", "anthropic"])
        p.add_argument("--endpoint", help="generator URL for --proposer external")
        p.add_argument("--replay", help="transcript for --proposer replay")
        p.add_argument("--evaluator", choices=["micro", "surrogate"])
        p.add_argument("--dataset", help="dataset file for the micro evaluator")
        p.add_argument("--ablate", help="comma list of prompt parts to drop: task,metric,dataset")
        p.add_argument("--workers", type=int)
        p.add_argument("--out-dir")

    p = sub.add_parser("stats", help="Trajectory statistics of a repository")
    p.add_argument("--repo", required=True)
    p.add_argument("--early", type=epoch_range, default=(0, 5))
    p.add_argument("--late", type=epoch_range, default=(16, 21))
    p.add_argument("--window", type=int, default=3)
    p.add_argument("--permutations", type=int, default=100_000)
    p.add_argument("--out", help="report directory (default <repo>/report)")

    p = sub.add_parser("export-corpus", help="Write improving pairs as a fine-tuning corpus")
    p.add_argument("--repo", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-pairs", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dataset-tag")
    return parser


def resolve_config(args) -> SearchConfig:
    """Config file first, then flags"""
    data = json.loads(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
    flags = {
        "seed_network": args.net, "rng_seed": args.seed, "bootstrap_count": args.count, "epochs": args.epochs,
        "candidates_per_epoch": args.candidates, "delta": args.delta, "policy": args.policy,
        "evaluator": args.evaluator, "dataset_path": args.dataset, "workers": args.workers, "out_dir": args.out_dir,
        "ablate": args.ablate.split(",") if args.ablate else None,
    }
    data.update({k: v for k, v in flags.items() if v is not None})
    proposer = dict(data.get("proposer") or {})
    for key, value in (("kind", args.proposer), ("endpoint", args.endpoint), ("replay_path", args.replay)):
        if value is not None:
            proposer[key] = value
    data["proposer"] = proposer
    return SearchConfig.model_validate(data)


# ---------------------------------------------------------------- commands

def cmd_verify(args) -> int:
    report = verify(Path(args.file).read_bytes(), args.max_params)
    print(report.to_text())
    return 0 if report.valid else 1


def cmd_mutate(args) -> int:
    cfg = MutatorConfig(width_min=args.width_min, width_max=args.width_max, rng_seed=args.seed)
    if args.count is not None:
        return _write_variants(args, cfg)
    _, src = mutate(resolve_seed(args.file), cfg, draw_rng(args.seed), args.rounds)
    if args.out:
        Path(args.out).write_text(src.text, encoding="utf-8")
        print(f"✓ wrote variant to {args.out}")
    else:
        print(src.text, end="")
    return 0


def _write_variants(args, cfg: MutatorConfig) -> int:
    if not args.out:
        raise ChannelForgeError("--count needs --out <directory>")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for index, (src, net) in enumerate(bootstrap(resolve_seed(args.file), args.count, cfg)):
        name = f"variant_{index:04d}.netdsl"
        (out_dir / name).write_text(src.text, encoding="utf-8")
        entries.append({"file": name, "widths": list(width_vector(net))})
    manifest = {"seed": args.file, "rng_seed": args.seed, "variants": entries}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    print(f"✓ wrote {len(entries)} variants to {out_dir}")
    return 0


def cmd_analyze(args) -> int:
    print(analyze_net(parse(resolve_seed(args.file))), end="")
    return 0


def cmd_bootstrap(args) -> int:
    cfg = resolve_config(args)
    seed_src = resolve_seed(cfg.seed_network)
    with SearchOrchestrator(cfg) as orch:
        orch.write_manifest(seed_src)
        summary = orch.run_bootstrap(seed_src)
    print(f"✓ bootstrap: {summary.valid_count} variants of {cfg.seed_network}, best {summary.best_so_far:.4f}")
    print(f"   repository: {Path(cfg.out_dir) / 'repository.jsonl'}")
    return 0


def cmd_search(args) -> int:
    cfg = resolve_config(args)
    seed_src = resolve_seed(cfg.seed_network)
    print(RULE)
    print(f"search: {cfg.seed_network}, {cfg.epochs} epochs x {cfg.candidates_per_epoch} candidates, "
          f"proposer {cfg.proposer.kind}, evaluator {cfg.evaluator}")
    print(RULE)
    with SearchOrchestrator(cfg) as orch:
        summaries, paths = orch.run_search(seed_src)
    for s in summaries:
        best = "n/a" if s.best_so_far is None else f"{s.best_so_far:.4f}"
        print(f"  epoch {s.epoch:2d} {s.phase:9s} {s.valid_count:3d}/{s.attempted:<3d} valid, best so far {best}")
    print(f"✓ report: {', '.join(str(p) for p in paths)}")
    return 0


def cmd_stats(args) -> int:
    out = Path(args.out) if args.out else Path(args.repo) / "report"
    report = analyze(args.repo, args.early, args.late, args.window, out_dir=out, n_perm=args.permutations)
    print(report.to_text(), end="")
    for path in report.paths:
        print(f"✓ {path}")
    return 0


def cmd_export_corpus(args) -> int:
    with ModelRepository(args.repo, readonly=True) as repo:
        pairs = repo.extract_pairs(max_pairs=args.max_pairs, rng_seed=args.seed, dataset_tag=args.dataset_tag)
    count = export_corpus(pairs, args.out)
    print(f"✓ exported {count} pairs to {args.out}")
    return 0


COMMANDS = {
    "verify": cmd_verify,
    "mutate": cmd_mutate,
    "analyze": cmd_analyze,
    "bootstrap": cmd_bootstrap,
    "search": cmd_search,
    "stats": cmd_stats,
    "export-corpus": cmd_export_corpus,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = create_parser().parse_args(argv)
    configure_logging({0: None, 1: "INFO"}.get(args.verbose, "DEBUG"), args.log_file)
    try:
        return COMMANDS[args.command](args)
    except (ChannelForgeError, ValidationError, OSError) as e:
        logger.debug("command %s failed", args.command, exc_info=True)
        print(f"✗ {args.command}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
