"""Command-line pipelines over the library.

Every subcommand is a deterministic function of its inputs, flags, and seed;
each run writes its resolved configuration next to the primary output as
``<out>.run.json``.  Usage errors exit 2, data errors exit 1 with
per-record diagnostics on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import statistics
import sys

import numpy as np

from . import __version__
from .context import (
    build_polymer_tasks,
    build_tasks,
    pack_context,
    read_records_csv,
    Demonstration,
    DemoGroups,
    Task,
)
from .diffusion import (
    Marginals,
    OracleDenoiser,
    Schedule,
    UniformDenoiser,
    build_transitions,
    estimate_marginals,
    forward_sample,
    reverse_sample,
    NonDecodableFinalStateError,
)
from .metrics import consistency_score, evaluate_generation
from .molgraph import canonical_form, graphs_equal
from .smiles import iter_corpus_lines, parse_smiles, write_smiles
from .tokenizer import (
    ENCODED_VERSION,
    FeatureLayout,
    decode,
    encode,
    featurize,
    read_encoded_corpus,
    write_encoded_corpus,
)
from .vocab import MotifVocabulary, VOCAB_VERSION, train_vocabulary

USAGE_EXIT = 2
DATA_EXIT = 1


class DataError(Exception):
    """Carries per-record diagnostics for exit code 1."""

    def __init__(self, diagnostics: list[str]):
        super().__init__(f"{len(diagnostics)} data error(s)")
        self.diagnostics = diagnostics


def _path(value: str) -> str:
    return os.path.expanduser(os.path.expandvars(value))


def _write_config(out_path: str, command: str, args: argparse.Namespace) -> None:
    resolved = {
        key: value for key, value in sorted(vars(args).items()) if key != "func"
    }
    resolved["command"] = command
    resolved["version"] = __version__
    with open(out_path + ".run.json", "w", encoding="utf-8") as handle:
        json.dump(resolved, handle, sort_keys=True, separators=(",", ":"))
        handle.write("\n")


def _parse_corpus(path: str):
    graphs = []
    problems = []
    for line_number, smiles in iter_corpus_lines(path):
        try:
            graphs.append((line_number, smiles, parse_smiles(smiles)))
        except ValueError as exc:
            problems.append(f"line {line_number}: {exc}")
    if problems:
        raise DataError(problems)
    if not graphs:
        raise DataError([f"{path}: no molecules found"])
    return graphs


def _load_marginals(path: str) -> Marginals:
    with open(path, "r", encoding="utf-8") as handle:
        payload = json.load(handle)
    if payload.get("format") != "motifdiff-marginals":
        raise DataError([f"{path}: not a marginals file"])
    return Marginals(
        np.array(payload["m_v"]),
        np.array(payload["m_e"]),
        np.array(payload["m_ev"]),
        np.array(payload["m_ve"]),
    )


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_train_vocab(args) -> int:
    graphs = [g for _, _, g in _parse_corpus(args.corpus)]
    vocabulary = train_vocabulary(
        graphs, k=args.k, k_ring=args.k_ring, min_frequency=args.min_frequency
    )
    vocabulary.save(args.out)
    _write_config(args.out, "train-vocab", args)
    print(f"trained vocabulary: {len(vocabulary)} motifs, {len(vocabulary.merges)} merges")
    return 0


def cmd_encode(args) -> int:
    vocabulary = MotifVocabulary.load(args.vocab)
    rows = _parse_corpus(args.corpus)
    encoded = []
    problems = []
    for line_number, smiles, graph in rows:
        try:
            encoded.append(encode(graph, vocabulary))
        except ValueError as exc:
            problems.append(f"line {line_number} ({smiles}): {exc}")
    if problems:
        raise DataError(problems)
    write_encoded_corpus(args.out, encoded, vocab_hash=vocabulary.corpus_hash)
    _write_config(args.out, "encode", args)
    print(f"encoded {len(encoded)} molecules")
    return 0


def cmd_decode(args) -> int:
    vocabulary = MotifVocabulary.load(args.vocab)
    graphs = read_encoded_corpus(args.encoded)
    problems = []
    lines = []
    for index, h in enumerate(graphs):
        try:
            lines.append(write_smiles(decode(h, vocabulary)))
        except ValueError as exc:
            problems.append(f"record {index}: {exc}")
    if problems:
        raise DataError(problems)
    with open(args.out, "w", encoding="utf-8") as handle:
        handle.write("\n".join(lines) + "\n")
    _write_config(args.out, "decode", args)
    print(f"decoded {len(lines)} molecules")
    return 0


def cmd_roundtrip_check(args) -> int:
    vocabulary = MotifVocabulary.load(args.vocab)
    rows = _parse_corpus(args.corpus)
    failures = []
    report = []
    for line_number, smiles, graph in rows:
        try:
            ok = graphs_equal(decode(encode(graph, vocabulary), vocabulary), graph)
        except ValueError as exc:
            ok = False
            report.append(f"{line_number}\tERROR\t{smiles}\t{exc}")
        else:
            report.append(f"{line_number}\t{'OK' if ok else 'MISMATCH'}\t{smiles}")
        if not ok:
            failures.append(line_number)
    summary = f"# roundtrip {len(rows) - len(failures)}/{len(rows)} passed"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as handle:
            handle.write("\n".join(report + [summary]) + "\n")
        _write_config(args.out, "roundtrip-check", args)
    print(summary.lstrip("# "))
    return 0 if not failures else DATA_EXIT


def cmd_stats(args) -> int:
    vocabulary = MotifVocabulary.load(args.vocab)
    rows = _parse_corpus(args.corpus)
    atoms, motifs = [], []
    lines = ["index\tatoms\tmotifs\tratio"]
    for line_number, _, graph in rows:
        h = encode(graph, vocabulary)
        atoms.append(graph.n_atoms)
        motifs.append(h.n)
        lines.append(f"{line_number}\t{graph.n_atoms}\t{h.n}\t{graph.n_atoms / h.n:.6f}")
    ratios = [a / m for a, m in zip(atoms, motifs)]
    lines.append(f"# mean_ratio\t{statistics.fmean(ratios):.6f}")
    lines.append(f"# std_ratio\t{statistics.pstdev(ratios):.6f}")
    lines.append(f"# median_atoms\t{statistics.median(atoms):.1f}")
    lines.append(f"# median_motifs\t{statistics.median(motifs):.1f}")
    with open(args.out, "w", encoding="utf-8") as handle:
        handle.write("\n".join(lines) + "\n")
    _write_config(args.out, "stats", args)
    print(
        f"mean ratio {statistics.fmean(ratios):.3f}, "
        f"median atoms {statistics.median(atoms):.1f} -> motifs {statistics.median(motifs):.1f}"
    )
    return 0


def cmd_marginals(args) -> int:
    vocabulary = MotifVocabulary.load(args.vocab)
    encoded = read_encoded_corpus(args.encoded)
    marginals = estimate_marginals(encoded, len(vocabulary))
    payload = {
        "format": "motifdiff-marginals",
        "version": 1,
        "n_motif_types": len(vocabulary),
        "m_v": marginals.m_v.tolist(),
        "m_e": marginals.m_e.tolist(),
        "m_ev": marginals.m_ev.tolist(),
        "m_ve": marginals.m_ve.tolist(),
    }
    with open(args.out, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, separators=(",", ":"))
        handle.write("\n")
    _write_config(args.out, "marginals", args)
    print(f"marginals over {len(encoded)} encoded molecules")
    return 0


def _bond_triples(h) -> list[list[int]]:
    seen = set()
    out = []
    for edge in h.edges:
        key = (min(edge.source, edge.target), max(edge.source, edge.target))
        if key not in seen:
            seen.add(key)
            out.append([key[0], key[1], edge.bond_order])
    return sorted(out)


def cmd_diffuse(args) -> int:
    vocabulary = MotifVocabulary.load(args.vocab)
    encoded = read_encoded_corpus(args.encoded)
    marginals = estimate_marginals(encoded, len(vocabulary))
    sched = Schedule(args.t_max, args.s)
    if not 0 <= args.t <= args.t_max:
        raise DataError([f"step {args.t} outside [0, {args.t_max}]"])
    n_max = max(h.n for h in encoded)
    layout = FeatureLayout.for_vocabulary(vocabulary, n_max)
    ts = build_transitions(marginals, args.t, sched) if args.t > 0 else None
    rng = np.random.default_rng(args.seed)
    with open(args.out, "w", encoding="utf-8") as handle:
        for index, h in enumerate(encoded):
            noisy = forward_sample(featurize(h, layout), args.t, ts, rng)
            record = {
                "index": index,
                "t": args.t,
                "motifs": noisy.motif_ids().tolist(),
                "bonds": _matrix_bond_triples(noisy),
            }
            handle.write(json.dumps(record, separators=(",", ":")) + "\n")
    _write_config(args.out, "diffuse", args)
    print(f"corrupted {len(encoded)} molecules at step {args.t}/{args.t_max}")
    return 0


def _matrix_bond_triples(mat) -> list[list[int]]:
    cats = mat.bond_categories()
    out = []
    for i in range(mat.n):
        for j in range(i + 1, mat.n):
            if cats[i, j] != 0:
                out.append([i, j, int(cats[i, j])])
    return out


def cmd_sample(args) -> int:
    vocabulary = MotifVocabulary.load(args.vocab)
    marginals = _load_marginals(args.marginals)
    sched = Schedule(args.t_max, args.s)
    encoded = read_encoded_corpus(args.encoded) if args.encoded else None
    if args.denoiser == "oracle" and encoded is None:
        raise DataError(["oracle denoiser needs --encoded with the clean targets"])
    n_max = args.n_max
    if n_max is None:
        if encoded:
            n_max = max(h.n for h in encoded)
        elif args.n_nodes:
            n_max = args.n_nodes
        else:
            raise DataError(["provide --n-max, --n-nodes, or --encoded"])
    layout = FeatureLayout.for_vocabulary(vocabulary, n_max)
    task = Task(context=DemoGroups(), query_score=1.0)

    decoded_lines = []
    valid = 0
    with open(args.out, "w", encoding="utf-8") as handle:
        for sample_index in range(args.n_samples):
            rng = np.random.default_rng([args.seed, sample_index])
            if args.denoiser == "oracle":
                truth = encoded[sample_index % len(encoded)]
                denoiser = OracleDenoiser(featurize(truth, layout))
                n_nodes = truth.n
            else:
                denoiser = UniformDenoiser()
                n_nodes = args.n_nodes or (encoded[sample_index % len(encoded)].n if encoded else n_max)
            try:
                result = reverse_sample(
                    denoiser, task, layout, sched, marginals, rng,
                    n_nodes=n_nodes, x0_mixing=args.x0_mixing,
                )
            except NonDecodableFinalStateError as exc:
                handle.write(
                    json.dumps({"sample": sample_index, "error": str(exc)}) + "\n"
                )
                decoded_lines.append(f"# sample {sample_index}: not decodable")
                continue
            for step_index, state in enumerate(result.trajectory):
                record = {
                    "sample": sample_index,
                    "t": sched.t_max - step_index,
                    "motifs": state.motif_ids().tolist(),
                    "bonds": _matrix_bond_triples(state),
                }
                handle.write(json.dumps(record, separators=(",", ":")) + "\n")
            try:
                molecule = decode(result.motif_graph, vocabulary)
                decoded_lines.append(write_smiles(molecule))
                valid += 1
            except ValueError as exc:
                decoded_lines.append(f"# sample {sample_index}: invalid ({exc})")
        summary = {"summary": {"samples": args.n_samples, "decoded_valid": valid}}
        handle.write(json.dumps(summary, separators=(",", ":")) + "\n")
    if args.smiles_out:
        with open(args.smiles_out, "w", encoding="utf-8") as handle:
            handle.write("\n".join(decoded_lines) + "\n")
    _write_config(args.out, "sample", args)
    print(f"sampled {args.n_samples}, decoded valid {valid}")
    return 0


def cmd_build_tasks(args) -> int:
    records, kind = read_records_csv(args.records)
    rng = np.random.default_rng(args.seed)
    selection = "random" if args.random_selection else "top"
    if kind == "bioassay":
        tasks = build_tasks(
            records,
            anchor_threshold=args.anchor_threshold,
            limit_per_group=args.limit_per_group,
            rng=rng,
            selection=selection,
        )
    else:
        tasks = build_polymer_tasks(
            records, limit_per_group=args.limit_per_group, rng=rng, selection=selection
        )
    vocabulary = MotifVocabulary.load(args.vocab) if args.vocab else None
    with open(args.out, "w", encoding="utf-8") as handle:
        for task in tasks:
            record = {
                "assay_id": task.assay_id,
                "target": write_smiles(task.target),
                "query_score": task.query_score,
                "positive": [[write_smiles(d.molecule), d.score] for d in task.context.positive],
                "medium": [[write_smiles(d.molecule), d.score] for d in task.context.medium],
                "negative": [[write_smiles(d.molecule), d.score] for d in task.context.negative],
            }
            if vocabulary is not None:
                packed = pack_context(
                    task.context, task.target, args.budget_tokens, vocabulary
                )
                record["packed_tokens"] = sum(h.n for h, _ in packed)
                record["packed_demos"] = max(len(packed) - 1, 0)
            handle.write(json.dumps(record, separators=(",", ":")) + "\n")
    _write_config(args.out, "build-tasks", args)
    print(f"built {len(tasks)} tasks from {len(records)} {kind} records")
    return 0


def _load_task_groups(path: str, index: int) -> DemoGroups:
    with open(path, "r", encoding="utf-8") as handle:
        lines = [line for line in handle if line.strip()]
    if not 0 <= index < len(lines):
        raise DataError([f"task index {index} outside 0..{len(lines) - 1}"])
    payload = json.loads(lines[index])
    def _demos(items):
        return tuple(Demonstration(parse_smiles(s), score) for s, score in items)
    return DemoGroups(
        _demos(payload["positive"]), _demos(payload["medium"]), _demos(payload["negative"])
    )


def cmd_consistency(args) -> int:
    groups = _load_task_groups(args.tasks, args.task_index)
    rows = _parse_corpus(args.candidates)
    scored = []
    for line_number, smiles, graph in rows:
        score = consistency_score(graph, groups, args.radius, args.width)
        scored.append((line_number, smiles, graph, score))
    scored.sort(key=lambda r: (-r[3], canonical_form(r[2])))
    if args.keep is not None:
        scored = scored[: args.keep]
    with open(args.out, "w", encoding="utf-8") as handle:
        handle.write("line\tsmiles\tconsistency\n")
        for line_number, smiles, _, score in scored:
            handle.write(f"{line_number}\t{smiles}\t{score:.12f}\n")
    _write_config(args.out, "consistency", args)
    print(f"scored {len(rows)} candidates, kept {len(scored)}")
    return 0


def cmd_evaluate(args) -> int:
    import csv as _csv

    with open(args.scored, "r", encoding="utf-8", newline="") as handle:
        reader = _csv.DictReader(handle)
        fields = reader.fieldnames or []
        if "smiles" not in fields or "score" not in fields:
            raise DataError(["scored CSV needs 'smiles' and 'score' columns"])
        rows = list(reader)
    by_task: dict[str, list] = {}
    categories: dict[str, str] = {}
    problems = []
    for index, row in enumerate(rows):
        task_id = row.get("task_id") or "task0"
        try:
            graph = parse_smiles(row["smiles"])
            score = float(row["score"])
        except ValueError as exc:
            problems.append(f"row {index}: {exc}")
            continue
        by_task.setdefault(task_id, []).append((graph, score))
        categories[task_id] = row.get("category") or "all"
    if problems:
        raise DataError(problems)
    lines = ["task_id\ttop1\ttopk_mean\tint_div\tharmonic"]
    per_category: dict[str, list[float]] = {}
    for task_id in sorted(by_task):
        scored = by_task[task_id]
        result = evaluate_generation(
            scored, k=min(args.k, len(scored)), radius=args.radius, width=args.width
        )
        top1 = max(score for _, score in scored)
        lines.append(
            f"{task_id}\t{top1:.6f}\t{result.top_k_mean:.6f}"
            f"\t{result.diversity:.6f}\t{result.harmonic:.6f}"
        )
        per_category.setdefault(categories[task_id], []).append(result.harmonic)
    for category in sorted(per_category):
        values = per_category[category]
        spread = statistics.pstdev(values) if len(values) > 1 else 0.0
        lines.append(
            f"# category {category}\t{statistics.fmean(values):.6f}\t±{spread:.6f}\t({len(values)} tasks)"
        )
    with open(args.out, "w", encoding="utf-8") as handle:
        handle.write("\n".join(lines) + "\n")
    _write_config(args.out, "evaluate", args)
    print(f"evaluated {len(by_task)} tasks")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="motifdiff",
        description="Motif tokenizer, discrete graph diffusion, and context tools",
    )
    parser.add_argument(
        "--version",
        action="version",
        version=(
            f"motifdiff {__version__} "
            f"(vocab format v{VOCAB_VERSION}, encoded format v{ENCODED_VERSION})"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-vocab", help="train a motif vocabulary from a corpus")
    p.add_argument("--corpus", required=True, type=_path)
    p.add_argument("--k", type=int, default=3000)
    p.add_argument("--k-ring", type=int, default=300)
    p.add_argument("--min-frequency", type=int, default=2)
    p.add_argument("--out", required=True, type=_path)
    p.set_defaults(func=cmd_train_vocab)

    p = sub.add_parser("encode", help="encode a corpus to motif graphs")
    p.add_argument("--corpus", required=True, type=_path)
    p.add_argument("--vocab", required=True, type=_path)
    p.add_argument("--out", required=True, type=_path)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="decode motif graphs back to SMILES")
    p.add_argument("--encoded", required=True, type=_path)
    p.add_argument("--vocab", required=True, type=_path)
    p.add_argument("--out", required=True, type=_path)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("roundtrip-check", help="verify decode(encode(x)) == x per molecule")
    p.add_argument("--corpus", required=True, type=_path)
    p.add_argument("--vocab", required=True, type=_path)
    p.add_argument("--out", type=_path, default=None)
    p.set_defaults(func=cmd_roundtrip_check)

    p = sub.add_parser("stats", help="per-molecule compression statistics")
    p.add_argument("--corpus", required=True, type=_path)
    p.add_argument("--vocab", required=True, type=_path)
    p.add_argument("--out", required=True, type=_path)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("marginals", help="estimate motif/bond marginals from encodings")
    p.add_argument("--encoded", required=True, type=_path)
    p.add_argument("--vocab", required=True, type=_path)
    p.add_argument("--out", required=True, type=_path)
    p.set_defaults(func=cmd_marginals)

    p = sub.add_parser("diffuse", help="forward-corrupt encoded molecules at one step")
    p.add_argument("--encoded", required=True, type=_path)
    p.add_argument("--vocab", required=True, type=_path)
    p.add_argument("--t", type=int, required=True)
    p.add_argument("--t-max", type=int, default=32)
    p.add_argument("--s", type=float, default=0.008)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, type=_path)
    p.set_defaults(func=cmd_diffuse)

    p = sub.add_parser("sample", help="run reverse diffusion with a reference denoiser")
    p.add_argument("--vocab", required=True, type=_path)
    p.add_argument("--marginals", required=True, type=_path)
    p.add_argument("--denoiser", choices=["uniform", "oracle"], default="uniform")
    p.add_argument("--encoded", type=_path, default=None)
    p.add_argument("--t-max", type=int, default=32)
    p.add_argument("--s", type=float, default=0.008)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-samples", type=int, default=1)
    p.add_argument("--n-nodes", type=int, default=None)
    p.add_argument("--n-max", type=int, default=None)
    p.add_argument("--x0-mixing", choices=["expectation", "argmax"], default="expectation")
    p.add_argument("--out", required=True, type=_path)
    p.add_argument("--smiles-out", type=_path, default=None)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("build-tasks", help="build demonstration tasks from a record table")
    p.add_argument("--records", required=True, type=_path)
    p.add_argument("--anchor-threshold", type=float, default=6.0)
    p.add_argument("--limit-per-group", type=int, default=15)
    p.add_argument("--budget-tokens", type=int, default=150)
    p.add_argument("--vocab", type=_path, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--random-selection", action="store_true")
    p.add_argument("--out", required=True, type=_path)
    p.set_defaults(func=cmd_build_tasks)

    p = sub.add_parser("consistency", help="score candidates against one task context")
    p.add_argument("--candidates", required=True, type=_path)
    p.add_argument("--tasks", required=True, type=_path)
    p.add_argument("--task-index", type=int, default=0)
    p.add_argument("--keep", type=int, default=None)
    p.add_argument("--radius", type=int, default=2)
    p.add_argument("--width", type=int, default=2048)
    p.add_argument("--out", required=True, type=_path)
    p.set_defaults(func=cmd_consistency)

    p = sub.add_parser("evaluate", help="top-k / diversity / harmonic report")
    p.add_argument("--scored", required=True, type=_path)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--radius", type=int, default=2)
    p.add_argument("--width", type=int, default=2048)
    p.add_argument("--out", required=True, type=_path)
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        for line in exc.diagnostics:
            print(f"error: {line}", file=sys.stderr)
        print(f"failed: {exc}", file=sys.stderr)
        return DATA_EXIT
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_EXIT


if __name__ == "__main__":
    sys.exit(main())
