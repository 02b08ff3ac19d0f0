"""Command-line surface: validate, analyze, compile, resume, eval, inspect.

Exit codes: 0 for success or a justified rejection, 1 for usage errors,
2 for session/validation errors.
"""
from __future__ import annotations

import argparse
import json
import sys
import uuid
from pathlib import Path

from . import compiler, identity as identity_mod, memory as memory_mod, metrics, planning
from .config import build_providers, load_config
from .environment import (load_session_log, outcome_to_dict,
                          resume as resume_session, run_session)
from .errors import CineforgeError, ManifestError
from .manifest import inspect_manifest, load_manifest, manifest_hash, merge_sources

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_ERROR = 2


def _load_config_from_args(args) -> "EngineConfig":
    overrides = {}
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise CineforgeError(f"--set expects key=value, got {item!r}")
        overrides[key] = value
    if getattr(args, "dry_run", False):
        overrides["environment.dry_run"] = True
    if getattr(args, "memory_dir", None):
        overrides["paths.memory_dir"] = args.memory_dir
    if getattr(args, "media_root", None):
        overrides["paths.media_root"] = args.media_root
    if getattr(args, "out", None):
        overrides["paths.out_dir"] = args.out
    return load_config(getattr(args, "config", None), overrides=overrides)


def cmd_validate(args) -> int:
    worst = EXIT_OK
    for path in args.paths:
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            print(f"{path}: unreadable: {exc}")
            worst = EXIT_ERROR
            continue
        diags = inspect_manifest(data)
        errors = [d for d in diags if d.severity == "error"]
        for diag in diags:
            print(f"{path}: {diag}")
        if errors:
            print(f"{path}: INVALID ({len(errors)} error(s))")
            worst = EXIT_ERROR
        else:
            print(f"{path}: OK"
                  + (f" ({len(diags)} warning(s))" if diags else ""))
    return worst


def cmd_analyze(args) -> int:
    config = _load_config_from_args(args)
    providers = build_providers(config)
    manifest = load_manifest(args.manifest)
    ident = identity_mod.analyze(manifest,
                                 link_threshold=config.link_threshold,
                                 lip_threshold=config.lip_threshold,
                                 kmeans_seed=config.kmeans_seed)
    memory = memory_mod.build_memory(manifest, ident, providers.completion,
                                     providers.boundary)
    out_dir = Path(config.memory_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{manifest.source_id}.memory.json"
    memory_mod.save_memory(memory, path)
    print(f"memory written: {path}")
    print(f"  shots={len(memory.shot_summaries)} events={len(memory.events)} "
          f"profiles={len(memory.profiles)} manifest_hash={memory.manifest_hash[:12]}")
    return EXIT_OK


def _write_session_outputs(outcome, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "outcome.json", "w", encoding="utf-8") as fh:
        json.dump(outcome_to_dict(outcome), fh, indent=2, sort_keys=True)
        fh.write("\n")
    if outcome.script is not None:
        with open(out_dir / "script.json", "w", encoding="utf-8") as fh:
            json.dump(planning.script_to_dict(outcome.script), fh, indent=2, sort_keys=True)
            fh.write("\n")
    if outcome.edl is not None:
        with open(out_dir / "edl.json", "w", encoding="utf-8") as fh:
            json.dump(compiler.edl_to_dict(outcome.edl), fh, indent=2, sort_keys=True)
            fh.write("\n")
        (out_dir / "cutlist.csv").write_text(compiler.edl_to_csv(outcome.edl),
                                             encoding="utf-8")


def _print_outcome(outcome) -> int:
    print(f"session {outcome.session_id}: {outcome.status}")
    if outcome.status == "success":
        art = outcome.artifact
        if art and art.path:
            print(f"  rendered: {art.path} ({art.duration:.2f}s)")
        elif art:
            print(f"  dry-run plan ({len(art.commands)} command(s), "
                  f"timeline {art.duration:.2f}s):")
            for command in art.commands:
                print("    " + " ".join(command))
        return EXIT_OK
    if outcome.status == "rejected":
        print(f"  rejected: {outcome.rejection.reason} "
              f"(iterations used: {outcome.rejection.iterations_used})")
        return EXIT_OK
    print(f"  error: {outcome.error_detail}")
    return EXIT_ERROR


def _collection_from_args(args):
    manifests = [load_manifest(p) for p in args.manifest]
    return merge_sources(manifests)


def cmd_compile(args) -> int:
    config = _load_config_from_args(args)
    providers = build_providers(config)
    sources = _collection_from_args(args)
    session_id = args.session_id or uuid.uuid4().hex[:12]
    session_dir = Path(config.out_dir) / session_id
    outcome = run_session(args.instruction, sources, config, providers,
                          log_path=session_dir / "session.ndjson",
                          session_id=session_id)
    _write_session_outputs(outcome, session_dir)
    _write_run_record(args, outcome, session_dir)
    return _print_outcome(outcome)


def _write_run_record(args, outcome, session_dir: Path) -> None:
    record = {
        "instruction_id": args.session_id or outcome.session_id,
        "instruction": args.instruction,
        "status": outcome.status,
        "manifests": [str(Path(p).resolve()) for p in args.manifest],
        "memory_paths": {k: str(Path(v).resolve())
                         for k, v in outcome.memory_paths.items()},
        "script": planning.script_to_dict(outcome.script) if outcome.script else None,
    }
    with open(session_dir / "run.json", "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_resume(args) -> int:
    config = _load_config_from_args(args)
    providers = build_providers(config)
    sources = _collection_from_args(args)
    session_id = args.session_id or uuid.uuid4().hex[:12]
    session_dir = Path(config.out_dir) / session_id
    outcome = resume_session(args.session, args.checkpoint, sources, config, providers,
                             new_instruction=args.instruction,
                             log_path=session_dir / "session.ndjson",
                             session_id=session_id)
    _write_session_outputs(outcome, session_dir)
    if args.instruction:
        args_instruction = args.instruction
    else:
        original = load_session_log(args.session)
        parse_msg = original.find_stage("parse")
        args_instruction = (parse_msg.payload["instruction"]["raw_text"]
                            if parse_msg else "")
    record_args = argparse.Namespace(session_id=args.session_id,
                                     instruction=args_instruction,
                                     manifest=args.manifest)
    _write_run_record(record_args, outcome, session_dir)
    return _print_outcome(outcome)


def _load_run_record(run_dir: Path, embed_dim_check: bool = True) -> metrics.RunRecord:
    with open(run_dir / "run.json", encoding="utf-8") as fh:
        record = json.load(fh)
    manifests = {m.source_id: m for m in (load_manifest(p) for p in record["manifests"])}
    collection = merge_sources(list(manifests.values()))
    entries: list[tuple[str, float]] = []
    if record.get("script"):
        for entry in record["script"]["entries"]:
            ref = collection.parse_ref(entry["shot"])
            entries.append((ref.key, collection.shot(ref).duration))
    svc_pairs = []
    summaries_by_key = {}
    for sid, mem_path in (record.get("memory_paths") or {}).items():
        if sid not in manifests:
            continue
        mem = memory_mod.load_memory(mem_path,
                                     expected_hash=manifest_hash(manifests[sid]))
        for summary, shot in zip(mem.shot_summaries, manifests[sid].shots):
            svc_pairs.append((summary, shot))
            summaries_by_key[f"{sid}:{shot.shot_id}"] = summary.text
    rendered = " ".join(summaries_by_key.get(key, "") for key, _ in entries).strip()
    return metrics.RunRecord(
        instruction_id=record["instruction_id"],
        instruction_text=record.get("instruction", ""),
        status=record["status"],
        script_entries=entries,
        svc_pairs=svc_pairs,
        rendered_summary=rendered,
    )


def cmd_eval(args) -> int:
    config = _load_config_from_args(args)
    providers = build_providers(config)
    runs_root = Path(args.runs)
    run_dirs = sorted(p for p in runs_root.iterdir() if (p / "run.json").is_file())
    if not run_dirs:
        raise CineforgeError(f"no run records under {runs_root}")
    runs = [_load_run_record(d) for d in run_dirs]
    gts = metrics.load_ground_truth(args.gt)
    report = metrics.evaluate(runs, gts, embedder=providers.embedder,
                              judge=providers.judge, tcs_mode=config.tcs_mode)
    out_dir = Path(args.out or config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    (out_dir / "report.md").write_text(metrics.report_markdown(report), encoding="utf-8")
    (out_dir / "report.csv").write_text(metrics.report_csv(report), encoding="utf-8")
    print(f"report written: {out_dir / 'report.json'}")
    for key in ("P", "R", "F1", "TCS", "SVC"):
        value = report.aggregates.get(key)
        if value is not None:
            print(f"  {key}: {value:.4f}")
    for key in ("ESR", "ARR"):
        value = report.aggregates.get(key)
        if value is not None:
            print(f"  {key}: {value:.2f}%")
    return EXIT_OK


def cmd_inspect(args) -> int:
    log = load_session_log(args.session)
    shown = 0
    for message in log.messages:
        if args.role and message.sender != args.role:
            continue
        if args.kind and message.kind != args.kind:
            continue
        payload = json.dumps(message.payload, sort_keys=True)
        digest = payload if len(payload) <= 120 else payload[:117] + "..."
        print(f"{message.seq:5d}  {message.sender:<12} {message.kind:<18} {digest}")
        shown += 1
    print(f"-- {shown}/{len(log.messages)} message(s), "
          f"checkpoints: {sorted(log.checkpoints)} --")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cineforge",
                                     description="Instruction-driven cinematic "
                                                 "video compilation engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="validate manifest files")
    p.add_argument("paths", nargs="+")
    p.set_defaults(func=cmd_validate)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a dotted config key")
    common.add_argument("--memory-dir")
    common.add_argument("--media-root")
    common.add_argument("--out")

    p = sub.add_parser("analyze", parents=[common],
                       help="build and persist narrative memory for a manifest")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("compile", parents=[common],
                       help="compile a video from an instruction")
    p.add_argument("--manifest", action="append", required=True)
    p.add_argument("--instruction", required=True)
    p.add_argument("--dry-run", action="store_true")
    p.add_argument("--session-id")
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("resume", parents=[common],
                       help="resume a session from a checkpoint")
    p.add_argument("--manifest", action="append", required=True)
    p.add_argument("--session", required=True, help="session log path")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--instruction")
    p.add_argument("--dry-run", action="store_true")
    p.add_argument("--session-id")
    p.set_defaults(func=cmd_resume)

    p = sub.add_parser("eval", parents=[common],
                       help="evaluate run records against ground truth")
    p.add_argument("--runs", required=True)
    p.add_argument("--gt", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="render a session log timeline")
    p.add_argument("session")
    p.add_argument("--role")
    p.add_argument("--kind")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except ManifestError as exc:
        for diag in exc.diagnostics:
            print(diag, file=sys.stderr)
        return EXIT_ERROR
    except CineforgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
