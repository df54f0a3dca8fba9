"""Command-line entry point. JSON goes to stdout, human-readable notes to stderr.

Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from pathlib import Path

from . import adabn, stain
from .cases import CaseRecord, CorpusError, GappComponents, StainStats, load_corpus, save_corpus
from .env import GeneratorConfig, RewardConfig, SimConfig, generate_corpus
from .gapp import load_rubric, score_components
from .knowledge import load_graph
from .orchestrator import GREEDY, SAMPLE, evaluate
from .policy import load_checkpoint, save_checkpoint
from .trainer import NonFiniteGradientError, TrainConfig, train, write_curve


def _read_json(path: str | None) -> dict:
    return json.loads(Path(path).read_text("utf-8")) if path else {}


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _note(msg: str) -> None:
    sys.stderr.write(msg + "\n")


def cmd_gen_corpus(args) -> int:
    config = GeneratorConfig.from_dict(_read_json(args.config))
    cases = generate_corpus(args.n, args.seed, config)
    save_corpus(cases, args.out)
    counts = Counter()
    for c in cases:
        for gene in ("sdhb", "vhl", "ret"):
            counts[gene] += getattr(c.genotype, gene)
    prevalence = {g: (counts[g] / len(cases) if cases else 0.0) for g in ("sdhb", "vhl", "ret")}
    _note(f"wrote {len(cases)} cases to {args.out}; " + ", ".join(f"{g.upper()} {v:.3f}" for g, v in prevalence.items()))
    _emit({"n": len(cases), "path": str(args.out), "genotype_prevalence": prevalence})
    return 0


def _configs(args) -> tuple[SimConfig, RewardConfig]:
    sim = SimConfig.from_dict(_read_json(args.sim_config))
    reward = RewardConfig.from_dict(_read_json(args.reward_config))
    return sim, reward


def cmd_train(args) -> int:
    corpus = load_corpus(args.corpus)
    if not corpus:
        raise ValueError(f"corpus {args.corpus} is empty")
    sim, reward = _configs(args)
    tc = TrainConfig.from_dict({**_read_json(args.config), "iterations": args.iters, "seed": args.seed})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params, curve = train(sim, reward, tc, corpus=corpus)
    save_checkpoint(params, out / "checkpoint.json", tc.to_dict())
    write_curve(curve, out / "learning_curve.jsonl")
    _note(f"trained {args.iters} iterations on {len(corpus)} cases; outputs in {out}")
    _emit({"checkpoint": str(out / "checkpoint.json"), "final": curve[-1] if curve else None})
    return 0


def cmd_score_case(args) -> int:
    d = _read_json(args.case_file)
    components = CaseRecord.from_dict(d).truth if "truth" in d else GappComponents(**d)
    _emit(score_components(components, load_rubric(args.rubric)).to_dict())
    return 0


def cmd_normalize(args) -> int:
    target = StainStats(**_read_json(args.target_stats))
    image = stain.read_image(args.input_png)
    out = stain.normalize(image, target, args.epsilon, args.threshold)
    stain.write_image(out, args.out_png)
    lab = stain.rgb_to_lab(image)
    src = stain.compute_stain_stats(lab, lab[..., 0] < args.threshold)
    _emit({"source_stats": src.__dict__, "target_stats": target.__dict__, "out": str(args.out_png)})
    return 0


def cmd_adapt_bn(args) -> int:
    state = adabn.load_state(args.state)
    if args.alpha is not None:
        state = adabn.BnLayerState(state.running_mean, state.running_var, args.alpha)
    data = _read_json(args.features)
    samples = data["samples"] if isinstance(data, dict) and "samples" in data else [data]
    maps = [adabn.as_feature_map(s["values"] if isinstance(s, dict) else s, state.channel_count) for s in samples]
    new = adabn.adapt_sequence(state, maps)
    if args.out:
        adabn.save_state(new, args.out)
    _emit(new.to_dict())
    return 0


def cmd_kg_query(args) -> int:
    graph = load_graph(args.graph)
    hit = graph.retrieve(args.entity)
    _emit(hit.to_dict())
    if not hit.found:
        _note(f"entity {args.entity!r} not found in graph")
    return 0


def cmd_evaluate(args) -> int:
    policy = load_checkpoint(args.checkpoint)
    corpus = load_corpus(args.corpus)
    sim, reward = _configs(args)
    metrics = evaluate(policy, corpus, load_rubric(args.rubric), reward, sim, mode=args.mode, seed=args.seed)
    if args.out:
        with open(args.out, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(metrics, sort_keys=True) + "\n")
    _emit(metrics)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ppgl-dispatch", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate a synthetic case corpus (JSONL)")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--config", help="generator config JSON")
    p.add_argument("--out", required=True, help="corpus file to write")
    p.set_defaults(func=cmd_gen_corpus)

    def env_flags(p):
        p.add_argument("--sim-config", help="simulator config JSON (noise, max_steps)")
        p.add_argument("--reward-config", help="reward config JSON (lambda1, lambda2, gamma, diag_weights)")

    p = sub.add_parser("train", help="train the dispatcher policy")
    p.add_argument("--corpus", required=True)
    p.add_argument("--iters", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="training config JSON")
    env_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score-case", help="GAPP score of a case or component file")
    p.add_argument("--case-file", required=True)
    p.add_argument("--rubric", help="rubric JSON (default: packaged rubric)")
    p.set_defaults(func=cmd_score_case)

    p = sub.add_parser("normalize", help="LAB stain normalisation of a PNG (or .json raw image)")
    p.add_argument("--input-png", required=True)
    p.add_argument("--target-stats", required=True, help="StainStats JSON")
    p.add_argument("--epsilon", type=float, default=stain.DEFAULT_EPSILON)
    p.add_argument("--threshold", type=float, default=stain.DEFAULT_TISSUE_THRESHOLD, help="tissue L* threshold")
    p.add_argument("--out-png", required=True)
    p.set_defaults(func=cmd_normalize)

    p = sub.add_parser("adapt-bn", help="fold feature maps into batch-norm running statistics")
    p.add_argument("--state", required=True, help="BN state JSON")
    p.add_argument("--features", required=True, help="feature map JSON (2-D array or {'samples': [...]})")
    p.add_argument("--alpha", type=float, help="override momentum")
    p.add_argument("--out", help="write the updated state here")
    p.set_defaults(func=cmd_adapt_bn)

    p = sub.add_parser("kg-query", help="look up an entity in the knowledge graph")
    p.add_argument("--graph", help="graph JSON (default: packaged graph)")
    p.add_argument("--entity", required=True)
    p.set_defaults(func=cmd_kg_query)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--rubric")
    p.add_argument("--mode", choices=[GREEDY, SAMPLE], default=GREEDY)
    p.add_argument("--seed", type=int, default=0, help="sampling seed (used in sample mode)")
    p.add_argument("--out", help="append the metrics record to this JSONL file")
    env_flags(p)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        return args.func(args)
    except NonFiniteGradientError as exc:
        _note(f"error: {exc}")
        return 1
    except (OSError, ValueError, KeyError, TypeError, CorpusError) as exc:
        _note(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
