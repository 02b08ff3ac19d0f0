from __future__ import annotations

import json
from pathlib import Path

import fixture_films as ff
from conftest import DATA_DIR
from cineforge.cli import main


def write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def write_config(tmp_path: Path, responses: list[str], name="config.json",
                 memory_dir=None, **extra) -> Path:
    queue_path = tmp_path / f"{name}.queue.json"
    write_json(queue_path, {"responses": responses})
    doc = {
        "provider": {"kind": "queue", "path": str(queue_path)},
        "paths": {"memory_dir": str(memory_dir or tmp_path / "memory"),
                  "out_dir": str(tmp_path / "out"),
                  "media_root": str(tmp_path / "media")},
        "environment": {"dry_run": True},
    }
    doc.update(extra)
    path = tmp_path / name
    write_json(path, doc)
    return path


def golden_session():
    return next(s for s in ff.feasible_sessions()
                if s.instruction_id == "feasible-golden")


def compile_responses(session) -> list[str]:
    # a fresh compile builds shawfix memory inside the session
    return [session.responses[0]] + ff.shawfix_memory_responses() + session.responses[1:]


def test_validate_ok_and_exit_codes(capsys):
    assert main(["validate", str(DATA_DIR / "shawfix.json")]) == 0
    out = capsys.readouterr().out
    assert "OK" in out


def test_validate_bad_manifest_names_invariant(tmp_path, capsys):
    data = ff.shawfix_manifest_dict()
    data["shots"][3]["end"] = 0.0
    bad = tmp_path / "bad.json"
    write_json(bad, data)
    assert main(["validate", str(bad)]) == 2
    out = capsys.readouterr().out
    assert "positive-duration" in out or "sorted-non-overlapping-shots" in out


def test_unknown_command_is_usage_error():
    assert main(["frobnicate"]) == 1


def test_missing_required_flag_is_usage_error():
    assert main(["compile"]) == 1


def test_analyze_writes_memory(tmp_path, capsys):
    config = write_config(tmp_path, ff.shawfix_memory_responses())
    code = main(["analyze", "--manifest", str(DATA_DIR / "shawfix.json"),
                 "--config", str(config)])
    assert code == 0
    memory_path = tmp_path / "memory" / "shawfix.memory.json"
    assert memory_path.is_file()
    assert json.loads(memory_path.read_text()) == json.loads(
        (DATA_DIR / "golden_memory_shawfix.json").read_text())


def run_compile(tmp_path, session_id="golden-run", extra_args=()):
    session = golden_session()
    config = write_config(tmp_path, compile_responses(session),
                          name=f"{session_id}.json",
                          memory_dir=tmp_path / "memory" / session_id)
    code = main(["compile", "--manifest", str(DATA_DIR / "shawfix.json"),
                 "--manifest", str(DATA_DIR / "roadfix.json"),
                 "--instruction", session.text,
                 "--config", str(config), "--dry-run",
                 "--session-id", session_id, *extra_args])
    return code, tmp_path / "out" / session_id


def test_compile_dry_run_golden(tmp_path, capsys):
    code, out_dir = run_compile(tmp_path)
    assert code == 0
    assert (out_dir / "outcome.json").is_file()
    assert (out_dir / "edl.json").is_file()
    assert (out_dir / "cutlist.csv").is_file()
    assert (out_dir / "session.ndjson").is_file()
    script = json.loads((out_dir / "script.json").read_text())
    golden = json.loads((DATA_DIR / "golden_script.json").read_text())
    assert script == golden
    assert "success" in capsys.readouterr().out


def test_compile_idempotent_outputs(tmp_path):
    _, first_dir = run_compile(tmp_path, "run-a")
    _, second_dir = run_compile(tmp_path, "run-b")
    for name in ("script.json", "edl.json", "cutlist.csv"):
        assert (first_dir / name).read_bytes() == (second_dir / name).read_bytes()


def test_compile_adversarial_exits_zero(tmp_path, capsys):
    session = next(s for s in ff.adversarial_sessions()
                   if s.instruction_id == "adv-absent-character")
    responses = [session.responses[0]] + ff.shawfix_memory_responses() \
        + session.responses[1:]
    config = write_config(tmp_path, responses)
    code = main(["compile", "--manifest", str(DATA_DIR / "shawfix.json"),
                 "--instruction", session.text, "--config", str(config),
                 "--session-id", "adv"])
    assert code == 0  # justified rejection is not an error
    assert "rejected" in capsys.readouterr().out


def test_compile_provider_fault_exits_two(tmp_path, capsys):
    config = write_config(tmp_path, ["garbage", "garbage"])
    code = main(["compile", "--manifest", str(DATA_DIR / "shawfix.json"),
                 "--instruction", "anything", "--config", str(config),
                 "--session-id", "broken"])
    assert code == 2


def test_resume_post_memory_zero_memory_calls(tmp_path, capsys):
    code, out_dir = run_compile(tmp_path)
    assert code == 0
    session = golden_session()
    # resumed run re-parses nothing and reuses memory: only planning responses
    config = write_config(tmp_path, session.responses[1:], name="resume.json")
    code = main(["resume", "--manifest", str(DATA_DIR / "shawfix.json"),
                 "--manifest", str(DATA_DIR / "roadfix.json"),
                 "--session", str(out_dir / "session.ndjson"),
                 "--checkpoint", "post-memory",
                 "--config", str(config), "--session-id", "resumed"])
    assert code == 0
    resumed_script = (tmp_path / "out" / "resumed" / "script.json").read_bytes()
    assert resumed_script == (out_dir / "script.json").read_bytes()
    resumed_records = [json.loads(l) for l in
                       (tmp_path / "out" / "resumed" / "session.ndjson")
                       .read_text().splitlines()]
    bound = next(r["payload"]["bound_seq"] for r in resumed_records
                 if r["kind"] == "integration"
                 and r["payload"].get("stage") == "resume")
    fresh_memory_calls = [r for r in resumed_records if r["seq"] > bound
                          and r["kind"] == "provider_request"
                          and r["payload"].get("role") == "script"]
    assert fresh_memory_calls == []


def test_resume_unknown_checkpoint_exits_two(tmp_path, capsys):
    code, out_dir = run_compile(tmp_path)
    config = write_config(tmp_path, [], name="resume-bad.json")
    code = main(["resume", "--manifest", str(DATA_DIR / "shawfix.json"),
                 "--session", str(out_dir / "session.ndjson"),
                 "--checkpoint", "nope", "--config", str(config)])
    assert code == 2


def test_inspect_full_and_filtered(tmp_path, capsys):
    _, out_dir = run_compile(tmp_path)
    assert main(["inspect", str(out_dir / "session.ndjson")]) == 0
    full = capsys.readouterr().out
    assert "grounding" in full and "proposal" in full
    assert main(["inspect", str(out_dir / "session.ndjson"),
                 "--kind", "grounding"]) == 0
    filtered = capsys.readouterr().out
    body = [l for l in filtered.splitlines() if l and not l.startswith("--")]
    assert body and all(" grounding " in l for l in body)


def test_inspect_corrupt_log_exits_two(tmp_path, capsys):
    path = tmp_path / "broken.ndjson"
    path.write_text('{"seq": 1, "timestamp": 0, "sender": "manager", '
                    '"kind": "integration", "payload": {}}\n{oops\n')
    assert main(["inspect", str(path)]) == 2
    assert ":2:" in capsys.readouterr().err


def test_eval_cli_reproduces_golden_report(tmp_path, capsys):
    runs_dir = tmp_path / "runs"
    build_golden_runs(tmp_path, runs_dir)
    out_dir = tmp_path / "report"
    config_doc = {
        "provider": {"kind": "constant", "text": "unused"},
        "embedder": {"kind": "hash", "dim": ff.DIM},
        "judge": {"kind": "constant", "text": "8"},
    }
    config = tmp_path / "eval-config.json"
    write_json(config, config_doc)
    code = main(["eval", "--runs", str(runs_dir), "--gt",
                 str(DATA_DIR / "ground_truth.json"), "--config", str(config),
                 "--out", str(out_dir)])
    assert code == 0
    report = json.loads((out_dir / "report.json").read_text())
    golden = json.loads((DATA_DIR / "golden_report.json").read_text())
    assert report == golden
    assert (out_dir / "report.md").is_file()
    assert (out_dir / "report.csv").is_file()


def build_golden_runs(tmp_path: Path, runs_dir: Path) -> None:
    """Execute the golden batch through the engine and lay out run records
    the way `cineforge compile` does."""
    from cineforge.config import EngineConfig
    from cineforge.environment import run_session
    from cineforge.manifest import merge_sources, parse_manifest
    from cineforge.planning import script_to_dict
    from cineforge.providers import ProviderBundle, QueueCompletionProvider
    from conftest import seed_memories

    shaw = parse_manifest(ff.shawfix_manifest_dict())
    road = parse_manifest(ff.roadfix_manifest_dict())
    collection = merge_sources([parse_manifest(ff.shawfix_manifest_dict()),
                                parse_manifest(ff.roadfix_manifest_dict())])
    config = EngineConfig(memory_dir=str(tmp_path / "memory"),
                          out_dir=str(tmp_path / "out"),
                          media_root=str(tmp_path / "media"), dry_run=True)
    seed_memories(config, (shaw, ff.shawfix_memory_responses()),
                  (road, ff.roadfix_memory_responses()))
    manifest_paths = {"shawfix": DATA_DIR / "shawfix.json",
                      "roadfix": DATA_DIR / "roadfix.json"}
    sessions = {s.instruction_id: s for s in ff.all_sessions()}
    for sid in sorted(ff.GOLDEN_BATCH_IDS):
        session = sessions[sid]
        providers = ProviderBundle(completion=QueueCompletionProvider(session.responses))
        outcome = run_session(session.text, collection, config, providers,
                              log_path=tmp_path / "logs" / f"{sid}.ndjson")
        assert outcome.status == session.expect_status
        run_dir = runs_dir / sid
        run_dir.mkdir(parents=True)
        write_json(run_dir / "run.json", {
            "instruction_id": sid,
            "instruction": session.text,
            "status": outcome.status,
            "manifests": [str(manifest_paths[s]) for s in session.sources],
            "memory_paths": {k: str(v) for k, v in outcome.memory_paths.items()},
            "script": script_to_dict(outcome.script) if outcome.script else None,
        })
