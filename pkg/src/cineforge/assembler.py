"""Reference media assembler, driven through the renderer command template.

A minimal OpenCV-backed stand-in for a full media toolkit: it cuts segments,
concatenates them with fade-to-black transitions, draws text overlays and a
cover card, and probes durations.  Video-only; the music track is recorded in
the assembly plan but not mixed.  Invoked as a subprocess
(`python -m cineforge.assembler ...`), never imported by the engine.
"""
from __future__ import annotations

import argparse
import json
import sys


def _cv2():
    try:
        import cv2
    except ImportError as exc:  # pragma: no cover
        raise SystemExit("the reference assembler needs opencv-python-headless "
                         f"(install the 'assembler' extra): {exc}")
    return cv2


def _open_video(cv2, path):
    cap = cv2.VideoCapture(path)
    if not cap.isOpened():
        raise SystemExit(f"cannot open video {path}")
    fps = cap.get(cv2.CAP_PROP_FPS) or 25.0
    width = int(cap.get(cv2.CAP_PROP_FRAME_WIDTH))
    height = int(cap.get(cv2.CAP_PROP_FRAME_HEIGHT))
    return cap, fps, (width, height)


def cmd_extract(args) -> int:
    cv2 = _cv2()
    cap, fps, size = _open_video(cv2, args.input)
    writer = cv2.VideoWriter(args.output, cv2.VideoWriter_fourcc(*"mp4v"), fps, size)
    first = int(round(args.start * fps))
    last = int(round(args.end * fps))
    cap.set(cv2.CAP_PROP_POS_FRAMES, first)
    for _ in range(first, last):
        ok, frame = cap.read()
        if not ok:
            break
        writer.write(frame)
    cap.release()
    writer.release()
    return 0


def cmd_concat(args) -> int:
    import numpy as np

    cv2 = _cv2()
    with open(args.plan, encoding="utf-8") as fh:
        plan = json.load(fh)
    segments = plan["segments"]
    if not segments:
        raise SystemExit("assembly plan lists no segments")

    cap0, fps, size = _open_video(cv2, segments[0])
    cap0.release()
    writer = cv2.VideoWriter(args.output, cv2.VideoWriter_fourcc(*"mp4v"), fps, size)
    fades = {t["position"]: t for t in plan.get("transitions", []) if t["kind"] == "fade"}
    overlays = plan.get("overlays", [])
    cover = plan.get("cover")

    cover_img = None
    if cover and cover.get("image"):
        cover_img = cv2.imread(cover["image"])
        if cover_img is not None:
            cover_img = cv2.resize(cover_img, size)

    elapsed_frames = 0

    def write_frame(frame):
        nonlocal elapsed_frames
        t = elapsed_frames / fps
        if cover_img is not None and t < cover.get("display_duration", 0.0):
            frame = cover_img.copy()
        for ov in overlays:
            if ov["start"] <= t < ov["start"] + ov["duration"]:
                scale = 1.2 if ov.get("kind") == "title" else 0.6
                cv2.putText(frame, ov["text"], (10, size[1] // 2),
                            cv2.FONT_HERSHEY_SIMPLEX, scale, (255, 255, 255), 2)
        writer.write(frame)
        elapsed_frames += 1

    black = np.zeros((size[1], size[0], 3), dtype=np.uint8)
    for i, seg in enumerate(segments):
        if i in fades:
            for _ in range(int(round(fades[i]["duration"] * fps))):
                write_frame(black.copy())
        cap, _, seg_size = _open_video(cv2, seg)
        while True:
            ok, frame = cap.read()
            if not ok:
                break
            if seg_size != size:
                frame = cv2.resize(frame, size)
            write_frame(frame)
        cap.release()
    writer.release()
    return 0


def cmd_probe(args) -> int:
    cv2 = _cv2()
    cap, fps, _ = _open_video(cv2, args.input)
    frames = cap.get(cv2.CAP_PROP_FRAME_COUNT)
    cap.release()
    print(json.dumps({"duration": frames / fps if fps else 0.0, "frames": frames,
                      "fps": fps}))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="cineforge-assembler",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="cut [start, end) seconds out of a clip")
    p.add_argument("--input", required=True)
    p.add_argument("--start", type=float, required=True)
    p.add_argument("--end", type=float, required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("concat", help="assemble segments per an assembly plan")
    p.add_argument("--plan", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_concat)

    p = sub.add_parser("probe", help="print {'duration': seconds} for a clip")
    p.add_argument("--input", required=True)
    p.set_defaults(func=cmd_probe)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
