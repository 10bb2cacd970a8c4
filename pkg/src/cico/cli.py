"""Command-line interface: ``cico {synth,infer,loss,eval,coherence,assemble}``.

Exit codes: 0 success, 1 validation or usage error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from cico import __version__
from cico.analytics import coherence_stats, evaluate
from cico.formats import EngineConfig, read_annotations, read_config, read_results, write_results
from cico.inference import run_clip
from cico.netout import FormatError, read_container
from cico.pipeline import container_losses, infer_container
from cico.primitives import rle_encode
from cico.synth import SynthParams, synth_generate, write_synth

log = logging.getLogger("cico")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _emit(obj, out):
    text = json.dumps(obj, indent=1, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def cmd_synth(args) -> None:
    params = SynthParams(
        videos=args.videos,
        frames=args.frames,
        shapes=args.shapes,
        height=args.height,
        width=args.width,
        velocity_range=(args.min_velocity, args.max_velocity),
        seed=args.seed,
        T=args.clip_len,
        T_o=args.overlap,
    )
    try:
        data = synth_generate(params)
    except ValueError as e:
        raise FormatError(str(e)) from None
    paths = write_synth(data, args.out)
    _emit({k: str(v) for k, v in paths.items()}, None)


def _config(path) -> EngineConfig:
    return read_config(path) if path else EngineConfig().validate()


def cmd_infer(args) -> None:
    cfg = _config(args.config)
    container = read_container(args.netout)
    decisions = [] if args.dump_track else None
    results = infer_container(container, cfg, workers=args.workers, log=decisions)
    write_results(results, args.out)
    if decisions is not None:
        with open(args.dump_track, "w", encoding="utf-8") as f:
            for d in decisions:
                f.write(json.dumps(d, sort_keys=True) + "\n")
    log.info("wrote %d tracks to %s", len(results), args.out)


def cmd_loss(args) -> None:
    cfg = _config(args.config)
    report = container_losses(read_container(args.netout), read_annotations(args.gt), cfg)
    _emit(report, args.out)


def cmd_eval(args) -> None:
    gt = read_annotations(args.gt)
    results = read_results(args.results, videos={v.id: v for v in gt.videos})
    _emit(evaluate(results, gt).to_json(), args.out)


def cmd_coherence(args) -> None:
    gt = read_annotations(args.gt)
    _emit(coherence_stats(gt, args.delta_max).to_json(), args.out)


def cmd_assemble(args) -> None:
    cfg = _config(args.config)
    container = read_container(args.netout)
    clips = [c for c in container.clips if args.video is None or c.video_id == args.video]
    if args.clip is not None:
        clips = [c for c in clips if c.clip_index == args.clip]
    if not clips:
        raise FormatError("no clip matches the given --video/--clip")
    out = []
    for clip in clips:
        for det in run_clip(clip, cfg.inference()):
            out.append(
                {
                    "video_id": clip.video_id,
                    "clip_index": clip.clip_index,
                    "frame_start": clip.frame_start,
                    "category_id": det.category_id,
                    "score": det.score,
                    "circumscribed_box": list(det.cbox),
                    "segmentations": [rle_encode(m).to_json() for m in det.masks],
                }
            )
    _emit(out, args.out)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cico", description="Clip-in clip-out video instance segmentation engine.")
    p.add_argument("--version", action="version", version=f"cico {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate synthetic videos, annotations and oracle netouts")
    s.add_argument("--out", required=True)
    s.add_argument("--videos", type=int, default=2)
    s.add_argument("--frames", type=int, default=12)
    s.add_argument("--shapes", type=int, default=3)
    s.add_argument("--height", type=int, default=128)
    s.add_argument("--width", type=int, default=128)
    s.add_argument("--min-velocity", type=float, default=1.0)
    s.add_argument("--max-velocity", type=float, default=4.0)
    s.add_argument("--clip-len", type=int, default=3)
    s.add_argument("--overlap", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("infer", help="run per-clip inference and tracking")
    s.add_argument("--netout", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--dump-track", metavar="FILE", help="write per-detection association decisions as JSON lines")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("loss", help="evaluate the four training losses on a netout container")
    s.add_argument("--netout", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--config")
    s.add_argument("--out")
    s.set_defaults(func=cmd_loss)

    s = sub.add_parser("eval", help="AP/AR of tracked results against ground truth")
    s.add_argument("--gt", required=True)
    s.add_argument("--results", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("coherence", help="temporal-coherence statistics of an annotation set")
    s.add_argument("--gt", required=True)
    s.add_argument("--delta-max", type=int, default=4)
    s.add_argument("--out")
    s.set_defaults(func=cmd_coherence)

    s = sub.add_parser("assemble", help="assemble clip masks for selected clips (no tracking)")
    s.add_argument("--netout", required=True)
    s.add_argument("--config")
    s.add_argument("--video", type=int)
    s.add_argument("--clip", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_assemble)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (FormatError, ValueError, KeyError) as e:
        print(f"cico {args.command}: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"cico {args.command}: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
