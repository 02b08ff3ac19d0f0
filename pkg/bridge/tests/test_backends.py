from __future__ import annotations

import math

import numpy as np

from cineforge_bridge.backends import (FrameDiffPersonDetector,
                                       HistogramShotDetector, HsvHistogramEmbedder,
                                       SrtSidecarReader, decode_video, parse_srt)


def test_histogram_detector_finds_scene_changes(sample_tree):
    video = decode_video(sample_tree / "sample.mp4", sample_fps=4.0)
    cuts = HistogramShotDetector(0.6).boundaries(video)
    # scenes change at 10 s and 20 s (frames 80 and 160 at 8 fps)
    assert len(cuts) == 2
    assert abs(cuts[0] - 80) <= 4
    assert abs(cuts[1] - 160) <= 4


def test_embedder_unit_norm_and_deterministic():
    rng = np.random.default_rng(3)
    embedder = HsvHistogramEmbedder(16)
    for _ in range(10):
        image = rng.integers(0, 255, size=(40, 40, 3), dtype=np.uint8)
        vec = embedder.embed(image)
        assert len(vec) == 16
        assert abs(math.sqrt(sum(x * x for x in vec)) - 1.0) <= 1e-6
        assert embedder.embed(image) == vec


def test_framediff_detects_moving_square(sample_tree):
    video = decode_video(sample_tree / "sample.mp4", sample_fps=4.0)
    detections = FrameDiffPersonDetector().detect(video)
    assert detections
    assert all(d.modality == "body" for d in detections)


def test_parse_srt_handles_tags_and_ordering():
    lines = parse_srt("1\n00:00:01,000 --> 00:00:02,000\n<b>Hello</b>\nthere\n\n"
                      "2\n00:00:03,500 --> 00:00:03,400\nbackwards\n\n"
                      "3\n00:01:00,000 --> 00:01:02,250\nLater.\n")
    assert [(l.start, l.end, l.text) for l in lines] == [
        (1.0, 2.0, "Hello there"), (60.0, 62.25, "Later.")]


def test_srt_reader_sidecar_discovery(sample_tree, tmp_path):
    reader = SrtSidecarReader(str(sample_tree / "sample.mp4"), None)
    assert reader.available
    assert len(reader.read()) == 3
    lonely = tmp_path / "lonely.mp4"
    lonely.write_bytes(b"")
    assert not SrtSidecarReader(str(lonely), None).available
