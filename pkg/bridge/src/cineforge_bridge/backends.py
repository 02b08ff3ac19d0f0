"""Perception backends behind per-task adapter contracts.

Each task (shot boundaries, frame embeddings, person detection, face
analysis, dialogue extraction, speaker audio) is a small contract with a
reference implementation that works without any model downloads; heavier
backends (a cascade face detector, an OCR engine, an audio embedder) plug
into the same contracts and report themselves unavailable when their
prerequisites are missing.  Frame sampling is fixed by rule: the keyframe is
the temporal midpoint frame of each shot.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .config import BridgeConfig, BridgeError


@dataclass
class VideoFrames:
    """Decoded frames at the sampling rate plus stream metadata."""

    frames: list[np.ndarray]
    frame_indices: list[int]
    fps: float
    frame_count: int

    def timestamp(self, sample_index: int) -> float:
        return self.frame_indices[sample_index] / self.fps

    @property
    def duration(self) -> float:
        return self.frame_count / self.fps


def decode_video(path, sample_fps: float) -> VideoFrames:
    cap = cv2.VideoCapture(str(path))
    if not cap.isOpened():
        raise BridgeError(f"cannot decode video: {path}")
    fps = cap.get(cv2.CAP_PROP_FPS) or 25.0
    step = max(1, int(round(fps / sample_fps)))
    frames, indices = [], []
    index = 0
    while True:
        ok, frame = cap.read()
        if not ok:
            break
        if index % step == 0:
            frames.append(frame)
            indices.append(index)
        index += 1
    cap.release()
    if not frames:
        raise BridgeError(f"video has no decodable frames: {path}")
    return VideoFrames(frames, indices, fps, index)


def read_frame(path, frame_index: int) -> np.ndarray:
    cap = cv2.VideoCapture(str(path))
    cap.set(cv2.CAP_PROP_POS_FRAMES, frame_index)
    ok, frame = cap.read()
    cap.release()
    if not ok:
        raise BridgeError(f"cannot read frame {frame_index} of {path}")
    return frame


# ---------------------------------------------------------------------------
# shot boundaries


class HistogramShotDetector:
    """Cuts where the HSV-histogram correlation between consecutive sampled
    frames drops below the threshold."""

    name = "histogram"

    def __init__(self, threshold: float):
        self.threshold = threshold

    def _hist(self, frame):
        hsv = cv2.cvtColor(frame, cv2.COLOR_BGR2HSV)
        hist = cv2.calcHist([hsv], [0, 1], None, [18, 8], [0, 180, 0, 256])
        return cv2.normalize(hist, hist).flatten()

    def boundaries(self, video: VideoFrames) -> list[int]:
        """Frame indices (into the original stream) where a new shot starts."""
        cuts = []
        prev = self._hist(video.frames[0])
        for i in range(1, len(video.frames)):
            cur = self._hist(video.frames[i])
            corr = cv2.compareHist(prev.astype(np.float32), cur.astype(np.float32),
                                   cv2.HISTCMP_CORREL)
            if corr < self.threshold:
                cuts.append(video.frame_indices[i])
            prev = cur
        return cuts


# ---------------------------------------------------------------------------
# embeddings


class HsvHistogramEmbedder:
    """Deterministic appearance embedding: an HSV histogram folded down to
    the target dimension and L2-normalized."""

    name = "hsv"

    def __init__(self, dim: int):
        self.dim = dim

    def embed(self, image: np.ndarray) -> list[float]:
        hsv = cv2.cvtColor(image, cv2.COLOR_BGR2HSV)
        hist = cv2.calcHist([hsv], [0, 1, 2], None, [8, 4, 4],
                            [0, 180, 0, 256, 0, 256]).flatten()
        folded = np.zeros(self.dim)
        for i, value in enumerate(hist):
            folded[i % self.dim] += value
        norm = np.linalg.norm(folded)
        if norm == 0:
            folded[0] = 1.0
            norm = 1.0
        vec = folded / norm
        return (vec / np.linalg.norm(vec)).tolist()  # unit within 1e-12


# ---------------------------------------------------------------------------
# person / face detection


@dataclass
class RawDetection:
    sample_index: int
    box: tuple[int, int, int, int]  # x, y, w, h
    modality: str  # face | body
    lip_activity: float | None = None


class FrameDiffPersonDetector:
    """Toy reference detector: the largest moving region between consecutive
    sampled frames becomes one body detection."""

    name = "framediff"
    modality = "body"

    def __init__(self, min_area_fraction: float = 0.002):
        self.min_area_fraction = min_area_fraction

    def detect(self, video: VideoFrames) -> list[RawDetection]:
        out = []
        for i in range(1, len(video.frames)):
            prev = cv2.cvtColor(video.frames[i - 1], cv2.COLOR_BGR2GRAY)
            cur = cv2.cvtColor(video.frames[i], cv2.COLOR_BGR2GRAY)
            delta = cv2.absdiff(cur, prev)
            _, mask = cv2.threshold(delta, 25, 255, cv2.THRESH_BINARY)
            contours, _ = cv2.findContours(mask, cv2.RETR_EXTERNAL,
                                           cv2.CHAIN_APPROX_SIMPLE)
            if not contours:
                continue
            biggest = max(contours, key=cv2.contourArea)
            area = cv2.contourArea(biggest)
            h, w = cur.shape
            if area < self.min_area_fraction * h * w:
                continue
            out.append(RawDetection(i, cv2.boundingRect(biggest), "body"))
        return out


class CascadeFaceDetector:
    """Cascade-file face detector with mouth-region lip activity; unavailable
    unless a cascade XML is supplied."""

    name = "cascade"
    modality = "face"

    def __init__(self, cascade_path: str | None):
        self.cascade_path = cascade_path
        self._cascade = None
        if cascade_path and Path(cascade_path).is_file():
            cascade = cv2.CascadeClassifier(cascade_path)
            if not cascade.empty():
                self._cascade = cascade

    @property
    def available(self) -> bool:
        return self._cascade is not None

    def detect(self, video: VideoFrames) -> list[RawDetection]:
        if not self.available:
            raise BridgeError("cascade face detector has no cascade file")
        out = []
        prev_mouth = {}
        for i, frame in enumerate(video.frames):
            gray = cv2.cvtColor(frame, cv2.COLOR_BGR2GRAY)
            for j, (x, y, w, h) in enumerate(
                    self._cascade.detectMultiScale(gray, 1.1, 4)):
                mouth = gray[y + 2 * h // 3:y + h, x:x + w]
                lip = None
                key = j
                if key in prev_mouth and prev_mouth[key].shape == mouth.shape \
                        and mouth.size:
                    diff = cv2.absdiff(mouth, prev_mouth[key])
                    lip = float(np.clip(diff.mean() / 64.0, 0.0, 1.0))
                prev_mouth[key] = mouth
                out.append(RawDetection(i, (x, y, w, h), "face", lip))
        return out


# ---------------------------------------------------------------------------
# dialogue


@dataclass
class SubtitleLine:
    start: float
    end: float
    text: str
    confidence: float


_SRT_TIME = re.compile(
    r"(\d{2}):(\d{2}):(\d{2})[,.](\d{3})\s*-->\s*(\d{2}):(\d{2}):(\d{2})[,.](\d{3})")


def parse_srt(text: str) -> list[SubtitleLine]:
    lines = []
    for block in re.split(r"\n\s*\n", text.replace("\r", "")):
        match = _SRT_TIME.search(block)
        if not match:
            continue
        h1, m1, s1, ms1, h2, m2, s2, ms2 = (int(g) for g in match.groups())
        start = h1 * 3600 + m1 * 60 + s1 + ms1 / 1000.0
        end = h2 * 3600 + m2 * 60 + s2 + ms2 / 1000.0
        body = block[match.end():].strip()
        body = re.sub(r"<[^>]+>", "", body).replace("\n", " ").strip()
        if body and end > start:
            lines.append(SubtitleLine(start, end, body, 1.0))
    return lines


class SrtSidecarReader:
    """Reads dialogue from a sidecar .srt file next to the video (or an
    explicit path); confidence is 1.0 since the text is not recognized."""

    name = "srt"

    def __init__(self, video_path: str, subtitle_path: str | None):
        candidate = subtitle_path or str(Path(video_path).with_suffix(".srt"))
        self.path = candidate if Path(candidate).is_file() else None

    @property
    def available(self) -> bool:
        return self.path is not None

    def read(self) -> list[SubtitleLine]:
        if not self.available:
            raise BridgeError("no sidecar subtitle file found")
        return parse_srt(Path(self.path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# backend wiring


@dataclass
class BackendSuite:
    shots: HistogramShotDetector | None
    embedder: HsvHistogramEmbedder | None
    persons: FrameDiffPersonDetector | None
    faces: CascadeFaceDetector | None
    dialogue: SrtSidecarReader | None
    audio: None  # no reference audio embedder in this environment


def build_backends(config: BridgeConfig) -> BackendSuite:
    models = config.models
    shots = (HistogramShotDetector(config.shot_threshold)
             if models.get("shots") == "histogram" else None)
    embedder = (HsvHistogramEmbedder(config.embedder_dim or config.embedding_dim)
                if models.get("embedder") == "hsv" else None)
    persons = (FrameDiffPersonDetector()
               if models.get("persons") == "framediff" else None)
    faces = None
    if models.get("faces") == "cascade":
        candidate = CascadeFaceDetector(config.cascade_path)
        faces = candidate if candidate.available else None
    dialogue = None
    if models.get("dialogue") == "srt":
        candidate = SrtSidecarReader(config.input_video, config.subtitle_path)
        dialogue = candidate if candidate.available else None
    return BackendSuite(shots=shots, embedder=embedder, persons=persons,
                        faces=faces, dialogue=dialogue, audio=None)
