"""affordlab command line: query, rank-experiment and eval."""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
import tempfile
from pathlib import Path
from typing import Any, Callable, Sequence

from affordlab.config import DEFAULTS, RunConfig, coerce, load_config
from affordlab.domain import (
    ImageManifest,
    QualifiedObject,
    Requirements,
    RobotSpec,
    format_number,
)
from affordlab.errors import (
    AffordLabError,
    BackendUnavailable,
    DataError,
    InsufficientDistractors,
    ScriptGap,
)
from affordlab.evalkit import class_label, evaluate, load_predictions, write_ap_table
from affordlab.orchestrator import run_dialogue
from affordlab.ranking import parse_strategy, rank_curve, write_curves_csv, write_raw_jsonl
from affordlab.scenarios import LARGE_ROBOT, SMALL_ROBOT, fixture_path

EXIT_OK, EXIT_USAGE, EXIT_BACKEND, EXIT_DATA = 0, 2, 3, 4
ROBOT_PRESETS = {"small": SMALL_ROBOT, "large": LARGE_ROBOT}

log = logging.getLogger("affordlab")


def round_floats(obj: Any, ndigits: int = 6) -> Any:
    if isinstance(obj, float):
        return round(obj, ndigits)
    if isinstance(obj, dict):
        return {k: round_floats(v, ndigits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round_floats(v, ndigits) for v in obj]
    return obj


def dump_json(obj: Any, path: Path) -> None:
    path.write_text(json.dumps(round_floats(obj), indent=2, ensure_ascii=False) + "\n")


class Staging:
    """Collects output files in a scratch directory; ``commit`` moves them into place.

    Nothing reaches the output directory unless the command finishes.
    """

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self._tmp = tempfile.TemporaryDirectory(prefix="affordlab-")
        self.dir = Path(self._tmp.name)

    def path(self, name: str) -> Path:
        return self.dir / name

    def commit(self) -> list[Path]:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        for src in sorted(self.dir.iterdir()):
            dest = self.out_dir / src.name
            shutil.move(str(src), dest)
            written.append(dest)
        return written

    def close(self) -> None:
        self._tmp.cleanup()


def _split_list(raw: str | None) -> list[str]:
    if not raw:
        return []
    return [part.strip() for part in raw.split(",") if part.strip()]


def _parse_sets(items: Sequence[str]) -> dict[str, Any]:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep:
            raise argparse.ArgumentTypeError(f"--set expects key=value, got {item!r}")
        if key not in DEFAULTS:
            raise argparse.ArgumentTypeError(f"unknown config key {key!r}")
        out[key] = coerce(key, value)
    return out


def _load_robot(spec: str) -> RobotSpec:
    if spec in ROBOT_PRESETS:
        return ROBOT_PRESETS[spec]
    try:
        data = json.loads(Path(spec).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read robot file {spec}: {exc}") from exc
    return RobotSpec.from_dict(data)


def _manifest(cfg: RunConfig, flag: str | None, default: str | None = None) -> ImageManifest:
    path = flag or cfg["paths.manifest"] or default
    if path is None:
        raise DataError("no image manifest given; pass --images or set paths.manifest")
    if not Path(path).exists():
        raise DataError(f"image manifest {path} does not exist")
    return ImageManifest.load(path)


def cmd_query(args: argparse.Namespace, cfg: RunConfig, stage: Staging) -> int:
    robot = _load_robot(args.robot)
    req = Requirements(args.action, args.effect, tuple(_split_list(args.conditions)))
    images = _manifest(cfg, args.images)
    catalog = cfg.catalog()
    report = run_dialogue(
        robot,
        req,
        catalog,
        images,
        cfg.dialogue(),
        cfg.chat_backend(),
        cfg.detector(images),
        cfg.engine(),
        cfg.lexicon(),
    )
    body = report.to_dict()
    trace = body.pop("trace")
    dump_json(body, stage.path("report.json"))
    dump_json(trace, stage.path("trace.json"))
    if args.sidecar:
        per_image: dict[str, list] = {entry.image_id: [] for entry in images}
        for rank, det in enumerate(report.ranked, 1):
            per_image[det.image_id].append({"rank": rank, **det.to_dict()})
        dump_json(per_image, stage.path("detections_by_image.json"))

    print(f"outcome: {report.outcome.value}")
    print(f"{'rank':>4}  {'image':<12} {'phrase':<24} confidence")
    for rank, det in enumerate(report.ranked, 1):
        print(f"{rank:>4}  {det.image_id:<12} {det.phrase.text:<24} {det.confidence:.6f}")
    return EXIT_OK


def cmd_rank_experiment(args: argparse.Namespace, cfg: RunConfig, stage: Staging) -> int:
    dataset = _manifest(cfg, args.images, str(fixture_path("distractors.json")))
    catalog = cfg.catalog()
    targets = [QualifiedObject.parse(t, catalog) for t in args.target]
    curves = rank_curve(
        dataset,
        targets,
        args.ns,
        args.trials,
        args.strategies,
        cfg.noise(),
        cfg.threshold(),
        workers=args.workers,
    )
    write_curves_csv(curves, stage.path("curves.csv"))
    write_raw_jsonl(curves, stage.path("ranks.jsonl"))
    header = "n".rjust(4) + "".join(f"{s.value:>12}" for s in args.strategies)
    print(header)
    for n in args.ns:
        print(f"{n:>4}" + "".join(f"{curves.mean(s, n):>12.3f}" for s in args.strategies))
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, cfg: RunConfig, stage: Staging) -> int:
    if not Path(args.groundtruth).exists():
        raise DataError(f"ground truth manifest {args.groundtruth} does not exist")
    gt = ImageManifest.load(args.groundtruth)
    preds = load_predictions(args.predictions)
    iou_thr = args.iou if args.iou is not None else float(cfg["eval.iou"])
    result = evaluate(preds, gt, iou_thr, cfg["eval.dimension"])
    dump_json(result.to_dict(), stage.path("eval.json"))
    write_ap_table(result, stage.path("ap_table.csv"), args.label)
    print(f"IoU threshold {format_number(iou_thr)} ({result.to_dict()['protocol']})")
    for qo, ap in result.per_class_ap:
        print(f"{class_label(qo):<20} {ap:.2f}")
    print(f"{'Avg.':<20} {result.map_overall:.2f}  ({result.map_overall:.6f})")
    return EXIT_OK


def _ns(raw: str) -> list[int]:
    try:
        values = [int(v) for v in _split_list(raw)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--ns expects comma-separated integers, got {raw!r}") from None
    if not values or min(values) < 0:
        raise argparse.ArgumentTypeError("--ns needs at least one non-negative integer")
    return values


def _strategies(raw: str):
    try:
        out = [parse_strategy(s) for s in _split_list(raw)]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    if not out:
        raise argparse.ArgumentTypeError("--strategies needs at least one strategy")
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat JSON config with dotted keys")
    common.add_argument("--seed", type=int, help="overrides the seed config key")
    common.add_argument("--out", help="output directory (overrides paths.output)")
    common.add_argument("--backend", choices=("scripted", "http"), help="overrides backend.mode")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="affordlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    q = sub.add_parser("query", parents=[common], help="run the affordance dialogue on a manifest")
    q.add_argument("--robot", required=True, help="robot JSON file, or the preset 'small' / 'large'")
    q.add_argument("--action", required=True)
    q.add_argument("--effect", required=True)
    q.add_argument("--conditions", help="comma-separated manner conditions, e.g. safe,reliable")
    q.add_argument("--images", help="image manifest JSON (overrides paths.manifest)")
    q.add_argument("--n-candidates", type=int, help="overrides dialogue.n_candidates")
    q.add_argument("--threshold", type=float, help="overrides the detection threshold")
    q.add_argument("--sidecar", action="store_true", help="also write detections grouped by image")
    q.set_defaults(func=cmd_query)

    r = sub.add_parser("rank-experiment", parents=[common], help="rank target objects among distractors")
    r.add_argument("--target", action="append", required=True, help='qualified object, e.g. "paper box"')
    r.add_argument("--ns", type=_ns, default=[0, 1, 2, 4, 8], help="comma-separated distractor counts")
    r.add_argument("--trials", type=int, default=1000)
    r.add_argument("--strategies", type=_strategies, default=_strategies("object,property"))
    r.add_argument("--images", help="distractor dataset manifest (default: the shipped one)")
    r.add_argument("--p-conf", type=float, help="overrides noise.p_conf")
    r.add_argument("--p-miss", type=float, help="overrides noise.p_miss")
    r.add_argument("--workers", type=int, default=1)
    r.set_defaults(func=cmd_rank_experiment)

    e = sub.add_parser("eval", parents=[common], help="score predictions against a ground-truth manifest")
    e.add_argument("--predictions", required=True, help="JSON array of detections")
    e.add_argument("--groundtruth", required=True, help="ground-truth image manifest")
    e.add_argument("--iou", type=float, help="IoU threshold (default 0.5)")
    e.add_argument("--label", default="predictions", help="row label in the AP table")
    e.set_defaults(func=cmd_eval)
    return parser


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    out = _parse_sets(args.set)
    flags = {
        "seed": args.seed,
        "paths.output": args.out,
        "backend.mode": args.backend,
        "dialogue.n_candidates": getattr(args, "n_candidates", None),
        "dialogue.threshold": getattr(args, "threshold", None),
        "noise.p_conf": getattr(args, "p_conf", None),
        "noise.p_miss": getattr(args, "p_miss", None),
    }
    out.update({k: v for k, v in flags.items() if v is not None})
    return out


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        overrides = _overrides(args)
    except (argparse.ArgumentTypeError, ValueError) as exc:
        parser.error(str(exc))
    command: Callable[..., int] = args.func
    stage = None
    try:
        cfg = load_config(args.config, overrides)
        stage = Staging(Path(cfg["paths.output"]))
        code = command(args, cfg, stage)
        for path in stage.commit():
            log.info("wrote %s", path)
        return code
    except InsufficientDistractors as exc:
        print(f"error: {exc} (achievable max n = {exc.achievable_max_n})", file=sys.stderr)
        return EXIT_DATA
    except (BackendUnavailable, ScriptGap) as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (AffordLabError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    finally:
        if stage is not None:
            stage.close()


if __name__ == "__main__":
    sys.exit(main())
