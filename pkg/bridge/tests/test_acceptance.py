"""Bridge acceptance: the 30-second sample clip yields a manifest that the
engine validates with zero diagnostics, and probe reports a deliberately
removed backend."""
from __future__ import annotations

import dataclasses
import json
import math
import subprocess
import sys
from contextlib import contextmanager
from pathlib import Path

from cineforge_bridge.extract import extract_manifest
from cineforge_bridge.probe import probe


@contextmanager
def criterion(number: int, description: str):
    try:
        yield
    except BaseException:
        print(f"\n[acceptance] criterion {number:2d}: FAIL - {description}")
        raise
    print(f"\n[acceptance] criterion {number:2d}: PASS - {description}")


def test_criterion_11_bridge_validity(sample_config):
    with criterion(11, "extract_manifest passes `cineforge validate` with zero "
                       "diagnostics and unit-norm embeddings; probe reports a "
                       "removed backend"):
        path = extract_manifest(sample_config)
        result = subprocess.run(
            [sys.executable, "-m", "cineforge.cli", "validate", str(path)],
            capture_output=True, text=True)
        assert result.returncode == 0, result.stdout + result.stderr
        # zero diagnostics: the validator prints nothing but the OK line
        lines = [l for l in result.stdout.splitlines() if l.strip()]
        assert len(lines) == 1 and lines[0].endswith("OK"), result.stdout

        manifest = json.loads(Path(path).read_text())

        def vectors():
            for shot in manifest["shots"]:
                yield shot["keyframe_embedding"]
                for det in shot["detections"]:
                    for key in ("face_embedding", "body_embedding"):
                        if det[key] is not None:
                            yield det[key]
            for char in manifest["characters"]:
                yield from char["face_anchor_embeddings"]
                yield from char["body_anchor_embeddings"]

        for vec in vectors():
            assert abs(math.sqrt(sum(x * x for x in vec)) - 1.0) <= 1e-6

        removed = dataclasses.replace(
            sample_config, models={**sample_config.models, "persons": "none"})
        task = probe(removed)["tasks"]["person_detection"]
        assert task["available"] is False
        assert "disabled" in task["detail"]
