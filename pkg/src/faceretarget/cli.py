"""Command-line entry point.

Every subcommand accepts ``--seed``, ``--tensor`` and ``--out``. Without
``--tensor`` the synthetic tensor for ``--seed`` is used. Output JSON goes to
``--out`` or stdout. Exit code 2 signals invalid input.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import detection_eval as de
from . import fitting
from . import grid_codec as gc
from . import landmark_metrics as lmm
from . import loss
from . import morphable_model as mm
from . import retarget
from . import scene
from .errors import InvalidInputError

DEFAULT_SEED = 42


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"cannot read JSON from {path}: {exc}") from None


def _emit(args, payload) -> None:
    text = json.dumps(payload, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)


def _tensor(args) -> mm.FaceTensor:
    if args.tensor:
        try:
            return mm.FaceTensor.load(args.tensor)
        except OSError as exc:
            raise InvalidInputError(f"cannot read tensor {args.tensor}: {exc}") from None
    return mm.generate_synthetic_tensor(args.seed)


def _landmarks(d) -> np.ndarray:
    return mm.check_landmarks(d["landmarks"] if isinstance(d, dict) else d)


def cmd_gen_tensor(args):
    tensor = mm.generate_synthetic_tensor(args.seed)
    if not args.out:
        raise InvalidInputError("gen-tensor needs --out")
    tensor.save(args.out)


def cmd_fit(args):
    tensor = _tensor(args)
    observed = _landmarks(_read_json(args.landmarks))
    init = mm.FaceParams.from_dict(_read_json(args.init)) if args.init else None
    cfg = fitting.FitConfig(max_iters=args.max_iters)
    result = fitting.fit_params(tensor, observed, init, cfg)
    out = result.to_dict()
    out["landmarks"] = mm.project_landmarks(tensor, result.params).tolist()
    _emit(args, out)


def _face_record(d, tensor):
    params = mm.FaceParams.from_dict(d)
    lm = _landmarks(d) if "landmarks" in d else mm.project_landmarks(tensor, params)
    return params, lm


def cmd_loss(args):
    tensor = _tensor(args)
    pred, pred_lm = _face_record(_read_json(args.pred), tensor)
    gt, gt_lm = _face_record(_read_json(args.gt), tensor)
    _emit(args, loss.sfn_loss(pred, pred_lm, gt, gt_lm, args.epoch).to_dict())


def _boxes(d):
    items = d["boxes"] if isinstance(d, dict) else d
    return [de.EvalBox.from_dict(b) for b in items]


def cmd_eval_det(args):
    preds = _boxes(_read_json(args.pred))
    gts = _boxes(_read_json(args.gt))
    if args.image_size:
        preds, gts = de.filter_small_faces(preds, gts, args.image_size, args.image_size)
    res = de.average_precision(preds, gts)
    _emit(args, {"AP": res["AP"], "AP50": res["AP50"], "AP75": res["AP75"]})


def cmd_eval_lm(args):
    d = _read_json(args.input)
    samples = d["samples"] if "samples" in d else [d]
    nmes, diag_errors = [], []
    for s in samples:
        box = de.EvalBox.from_dict(s["bbox"])
        nmes.append(lmm.nme(s["pred"], s["gt"], box))
        diag_errors.append(lmm.nme(s["pred"], s["gt"], box, normalizer="diagonal"))
    _emit(args, {"nme": float(np.mean(nmes)), "auc": lmm.ced_auc(diag_errors, args.cutoff)})


def cmd_eval_expr(args):
    d = _read_json(args.input)
    _emit(args, {"expression_metric": lmm.expression_metric(d["w_exp"], d["active"])})


def cmd_synth_scene(args):
    codec = gc.GridCodec(_tensor(args), args.image_size)
    sc = scene.synth_scene(args.n_faces, args.seed, codec=codec)
    if args.grid:
        gc.save_grid(args.grid, sc.grid)
    _emit(args, sc.to_dict())


def cmd_weak_gt(args):
    d = _read_json(args.scene)
    codec = gc.GridCodec(_tensor(args), d.get("image_size", args.image_size))
    lms = [_landmarks(f) for f in d["faces"]]
    weak = scene.weak_gt_generate(lms, codec=codec)
    if args.grid:
        gc.save_grid(args.grid, weak.grid)
    _emit(args, weak.to_dict())


def cmd_decode(args):
    codec = gc.GridCodec(_tensor(args), args.image_size)
    boxes = codec.decode_grid(gc.load_grid(args.grid), args.threshold)
    _emit(args, [b.to_dict() for b in boxes])


def cmd_retarget(args):
    d = _read_json(args.params)
    params = mm.FaceParams.from_dict(d.get("params", d))
    mapping = retarget.RigMapping.load(args.mapping) if args.mapping else retarget.RigMapping.identity()
    _emit(args, retarget.map_to_rig(params, mapping).to_dict())


def cmd_track(args):
    box = retarget.track_next_bbox(_landmarks(_read_json(args.landmarks)), args.margin)
    _emit(args, box.to_dict())


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=DEFAULT_SEED)
    common.add_argument("--tensor", help="face tensor blob (FT3D)")
    common.add_argument("--out", help="output path (default: stdout)")

    parser = argparse.ArgumentParser(prog="faceretarget", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, **kw):
        p = sub.add_parser(name, parents=[common], **kw)
        p.set_defaults(func=func)
        return p

    add("gen-tensor", cmd_gen_tensor, help="write the synthetic face tensor for --seed")

    p = add("fit", cmd_fit, help="fit face parameters to 68 landmarks")
    p.add_argument("--landmarks", required=True)
    p.add_argument("--init")
    p.add_argument("--max-iters", type=int, default=200)

    p = add("loss", cmd_loss, help="single-face loss between two parameter sets")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--epoch", type=int, required=True)

    p = add("eval-det", cmd_eval_det, help="AP, AP50, AP75 of box predictions")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--image-size", type=float, help="drop faces under 2%% of this size")

    p = add("eval-lm", cmd_eval_lm, help="NME and CED AUC of landmark predictions")
    p.add_argument("--input", required=True)
    p.add_argument("--cutoff", type=float, default=lmm.CED_CUTOFF)

    p = add("eval-expr", cmd_eval_expr, help="expression metric")
    p.add_argument("--input", required=True)

    p = add("synth-scene", cmd_synth_scene, help="generate a synthetic multi-face scene")
    p.add_argument("--n-faces", type=int, default=5)
    p.add_argument("--image-size", type=float, default=288.0)
    p.add_argument("--grid", help="also write the target grid (GRD1)")

    p = add("weak-gt", cmd_weak_gt, help="fit scene landmarks and encode grid ground truth")
    p.add_argument("--scene", required=True)
    p.add_argument("--image-size", type=float, default=288.0)
    p.add_argument("--grid", help="also write the target grid (GRD1)")

    p = add("decode", cmd_decode, help="decode a grid tensor into detections")
    p.add_argument("--grid", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--image-size", type=float, default=288.0)

    p = add("retarget", cmd_retarget, help="map expression and pose onto a rig")
    p.add_argument("--params", required=True)
    p.add_argument("--mapping")

    p = add("track", cmd_track, help="next-frame search box from landmarks")
    p.add_argument("--landmarks", required=True)
    p.add_argument("--margin", type=float, default=0.1)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (InvalidInputError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
