"""Command-line pipeline driver.

Subcommands: gen-model, gen-data, segment, train-dff, extract, match,
learn-cascade, align, eval, selftest.  Exit codes: 0 success, 1 usage error
(bad arguments, unknown command, missing required flags), 2 runtime failure.
Randomized commands (gen-model, gen-data, segment, train-dff) require
--seed; every output artifact carries a provenance record echoing the
command, seed, inputs and config.
"""

import argparse
import os
import sys

import numpy as np

# the package re-exports the align *function* at top level, which shadows
# the submodule as a package attribute, so pull the names straight from it
from .align import N_SPARSE, align as align_face
from . import cascade as cascade_mod
from . import dataio
from . import dffnet
from . import evaluation
from . import facemodel
from . import matching
from . import render
from . import segmentation
from .config import RunConfig, load_config, provenance_text
from .container import read_container, write_container


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits with status 2
        raise UsageError(message)


# ---------------------------------------------------------------------------
# helpers


def _box_arg(text):
    parts = text.split(",")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("box must be x,y,w,h")
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError("box must be four numbers x,y,w,h")
    if vals[2] <= 0 or vals[3] <= 0:
        raise argparse.ArgumentTypeError("box width/height must be positive")
    return vals


def _load_run_config(args):
    return load_config(getattr(args, "config", None))


def _save_segmentations(path, segs, provenance):
    tensors = {
        "meta/count": np.asarray([len(segs)], dtype=np.uint32),
        "meta/patches": np.asarray([segs[0].n_patches], dtype=np.uint32),
    }
    for i, s in enumerate(segs):
        tensors[f"seg{i}/patch_of"] = s.patch_of.astype(np.uint32)
        tensors[f"seg{i}/energy"] = np.asarray(s.energy_trace, dtype=np.float64)
    write_container(path, tensors, provenance=provenance)


def _load_segmentations(path):
    t = read_container(path)
    count = int(t["meta/count"][0])
    patches = int(t["meta/patches"][0])
    return [
        segmentation.Segmentation(
            patch_of=t[f"seg{i}/patch_of"].astype(np.int32),
            n_patches=patches,
            energy_trace=list(t[f"seg{i}/energy"]),
        )
        for i in range(count)
    ]


def _label_stacks(model, samples, segs, width, height):
    """Per image, one projected patch-label map per segmentation."""
    stacks = []
    for s in samples:
        per_image = [
            render.project_patch_labels(model, s.shape, s.camera, seg, width, height).labels
            for seg in segs
        ]
        stacks.append(per_image)
    return stacks


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_model(args):
    cfg = _load_run_config(args)
    model = facemodel.generate_synthetic_model(
        args.seed, n_vertices=cfg.n_vertices, m_id=cfg.m_id, m_exp=cfg.m_exp
    )
    prov = provenance_text("gen-model", args.seed, cfg)
    facemodel.save_model(args.out, model, provenance=prov)
    print(f"wrote model with {model.n_vertices} vertices to {args.out}")
    return 0


def cmd_gen_data(args):
    cfg = _load_run_config(args)
    if args.count is not None:
        cfg.dataset_count = args.count
    model = facemodel.load_model(args.model)
    samples = render.generate_dataset(
        model, cfg.dataset_count, args.seed, cfg.render_config()
    )
    prov = provenance_text(
        "gen-data", args.seed, cfg, inputs={"model": args.model}
    )
    dataio.save_dataset(args.out_dir, samples, provenance=prov)
    print(f"wrote {len(samples)} samples to {args.out_dir}")
    return 0


def cmd_segment(args):
    cfg = _load_run_config(args)
    if args.count is not None:
        cfg.segmentation_count = args.count
    if args.patches is not None:
        cfg.patches = args.patches
    model = facemodel.load_model(args.model)
    mesh = model.mean_mesh()
    segs = segmentation.generate_segmentation_bank(
        mesh, cfg.segmentation_count, cfg.patches, args.seed
    )
    prov = provenance_text("segment", args.seed, cfg, inputs={"model": args.model})
    _save_segmentations(args.out, segs, prov)
    print(f"wrote {len(segs)} segmentations ({cfg.patches} patches) to {args.out}")
    return 0


def cmd_train_dff(args):
    cfg = _load_run_config(args)
    if args.epochs is not None:
        cfg.epochs = args.epochs
    model = facemodel.load_model(args.model)
    samples = dataio.load_dataset(args.data)
    segs = _load_segmentations(args.segs)
    stacks = _label_stacks(model, samples, segs, cfg.image_width, cfg.image_height)
    images = [s.image for s in samples]
    net, layers, history = dffnet.train(
        cfg.net_config(seed=args.seed),
        images,
        stacks,
        n_classes=segs[0].n_patches,
        epochs=cfg.epochs,
        optim_config=cfg.optim_config(seed=args.seed),
    )
    prov = provenance_text(
        "train-dff",
        args.seed,
        cfg,
        inputs={"model": args.model, "data": args.data, "segs": args.segs},
    )
    dffnet.save_weights(args.out, net, layers, provenance=prov)
    with open(args.out + ".log.txt", "w") as fh:
        for line in prov.split("\n"):
            fh.write(f"# {line}\n")
        for e, (l, a) in enumerate(zip(history.epoch_loss, history.epoch_accuracy)):
            fh.write(f"epoch {e} loss {l:.6f} accuracy {a:.6f}\n")
    print(f"trained {cfg.epochs} epochs; final loss {history.epoch_loss[-1]:.5f}")
    return 0


def cmd_extract(args):
    net, _ = dffnet.load_weights(args.weights)
    image = dataio.load_image_png(args.image)
    fmap = net.extract(image)
    cfg = RunConfig()
    prov = provenance_text(
        "extract", None, cfg, inputs={"weights": args.weights, "image": args.image}
    )
    write_container(args.out, {"features": fmap.features}, provenance=prov)
    print(f"wrote {fmap.height}x{fmap.width}x{fmap.dim} feature map to {args.out}")
    return 0


def cmd_match(args):
    cfg = _load_run_config(args)
    net, _ = dffnet.load_weights(args.weights)
    src = net.extract(dataio.load_image_png(args.source))
    tgt = net.extract(dataio.load_image_png(args.target))
    if args.mode == "sparse":
        if args.points is None:
            raise UsageError("sparse mode requires --points")
        pts, _ = dataio.load_landmarks_txt(args.points)
        thr = args.threshold if args.threshold is not None else cfg.sparse_threshold_deg
        ms = matching.sparse_match(src, pts, tgt, threshold=thr)
    else:
        thr = args.threshold if args.threshold is not None else cfg.dense_threshold_deg
        ms = matching.dense_match(src, tgt, threshold=thr)
    prov = provenance_text(
        "match",
        None,
        cfg,
        inputs={
            "weights": args.weights,
            "source": args.source,
            "target": args.target,
            "mode": args.mode,
            "threshold_deg": thr,
        },
    )
    matching.save_matches(args.out, ms, provenance=prov)
    if args.viz and ms.mode == "dense":
        h, w = tgt.features.shape[:2]
        src_img, tgt_img = matching.correspondence_images(ms, (h, w))
        dataio.save_image_png(args.viz + "_source.png", src_img)
        dataio.save_image_png(args.viz + "_target.png", tgt_img)
        with open(args.viz + ".prov.txt", "w") as fh:
            fh.write(prov + "\n")
    print(f"{ms.pairs.shape[0]} matches at threshold {thr} deg -> {args.out}")
    return 0


def cmd_learn_cascade(args):
    cfg = _load_run_config(args)
    if args.stages is not None:
        cfg.stage_count = args.stages
    model = facemodel.load_model(args.model)
    net, _ = dffnet.load_weights(args.weights)
    samples = dataio.load_dataset(args.data)
    stages, diag = cascade_mod.learn_cascade(
        model, net, samples, cfg.regression_config(), cfg.align_config()
    )
    prov = provenance_text(
        "learn-cascade",
        args.seed,
        cfg,
        inputs={"model": args.model, "weights": args.weights, "data": args.data},
    )
    cascade_mod.save_cascade(args.out, stages, provenance=prov)
    errs = " ".join(f"{e:.3f}" for e in diag["train_error"])
    print(f"learned {len(stages)} stages; training error per stage: {errs}")
    return 0


def cmd_align(args):
    cfg = _load_run_config(args)
    model = facemodel.load_model(args.model)
    net, _ = dffnet.load_weights(args.weights)
    stages = cascade_mod.load_cascade(args.cascade)
    image = dataio.load_image_png(args.image)
    fmap = net.extract(image)
    state, _ = align_face(model, fmap, args.box, stages, cfg.align_config())
    prov = provenance_text(
        "align",
        None,
        cfg,
        inputs={
            "model": args.model,
            "weights": args.weights,
            "cascade": args.cascade,
            "image": args.image,
            "box": ",".join(str(v) for v in args.box),
        },
    )
    lm = state.landmarks68()
    vis68 = state.v[:N_SPARSE]
    dataio.save_landmarks_txt(args.out_prefix + ".landmarks.txt", lm, vis68, provenance=prov)
    write_container(
        args.out_prefix + ".params.dfft",
        {
            "p_id": state.shape.p_id,
            "p_exp": state.shape.p_exp,
            "camera": state.camera.as_vector(),
        },
        provenance=prov,
    )
    overlay = dataio.draw_landmarks(image, lm, vis68)
    dataio.save_image_png(args.out_prefix + ".overlay.png", overlay)
    print(f"aligned {args.image} -> {args.out_prefix}.landmarks.txt")
    return 0


def cmd_eval(args):
    samples = dataio.load_dataset(args.data)
    preds = []
    truths = []
    for i, s in enumerate(samples):
        name = f"sample_{i:04d}"
        path = os.path.join(args.pred, name + ".landmarks.txt")
        if not os.path.exists(path):
            raise FileNotFoundError(f"missing prediction file {path}")
        lm, _ = dataio.load_landmarks_txt(path)
        preds.append(lm)
        truths.append(
            evaluation.EvalItem(
                landmarks68=s.landmarks68,
                yaw=s.camera.yaw,
                box=cascade_mod.landmark_box(s.landmarks68, 0.0),
                visible=s.visibility160[:N_SPARSE],
            )
        )
    report = evaluation.evaluate(preds, truths, mode=args.mode)
    cfg = RunConfig()
    prov = provenance_text(
        "eval", None, cfg, inputs={"data": args.data, "pred": args.pred}
    )
    lines = report.lines()
    if args.out:
        with open(args.out, "w") as fh:
            for line in prov.split("\n"):
                fh.write(f"# {line}\n")
            for line in lines:
                fh.write(line + "\n")
    for line in lines:
        print(line)
    return 0


def cmd_selftest(args):
    checks = []

    def check(name, fn):
        checks.append((name, fn))

    def run_all():
        for name, fn in checks:
            fn()
            print(f"ok - {name}")

    def rotation_check():
        r = facemodel.rotation_from_angles(0.3, -0.5, 0.2)
        assert np.allclose(r @ r.T, np.eye(3), atol=1e-12)
        assert abs(np.linalg.det(r) - 1.0) < 1e-12

    def projection_check():
        cam = facemodel.CameraParams(1.0, 0.0, 0.0, 0.0, 0.0, 0.0)
        xy = facemodel.project_points(np.array([[3.0], [4.0], [5.0]]), cam)
        assert np.allclose(xy[:, 0], [3.0, 4.0])

    def raster_check():
        mesh = facemodel.FaceMesh(
            np.array([[2.0, 12.0, 2.0], [2.0, 2.0, 12.0], [0.0, 0.0, 0.0]]),
            np.array([[0, 1, 2]]),
        )
        cam = facemodel.CameraParams(1.0, 0.0, 0.0, 0.0, 0.0, 0.0)
        buf = render.rasterize(mesh, cam, 16, 16)
        inside = buf.triangle_id[4, 4] == 0
        outside = buf.triangle_id[14, 14] == -1
        assert inside and outside

    def visibility_check():
        # back triangle sits strictly inside the front one so its vertices
        # land on covered pixels (the front corners themselves fall on
        # fill-rule-excluded pixels and would test trivially visible)
        mesh = facemodel.FaceMesh(
            np.array(
                [
                    [2.0, 12.0, 2.0, 3.0, 10.0, 3.0],
                    [2.0, 2.0, 12.0, 3.0, 3.0, 10.0],
                    [1.0, 1.0, 1.0, 0.0, 0.0, 0.0],
                ]
            ),
            np.array([[0, 1, 2], [3, 4, 5]]),
        )
        cam = facemodel.CameraParams(1.0, 0.0, 0.0, 0.0, 0.0, 0.0)
        buf = render.rasterize(mesh, cam, 16, 16)
        vis = render.vertex_visibility(mesh, cam, np.arange(6), buf)
        assert vis[:3].all() and not vis[3:].any()

    def ridge_check():
        rng = np.random.default_rng(0)
        x = rng.standard_normal((50, 4))
        w = rng.standard_normal((2, 4))
        b = rng.standard_normal(2)
        y = x @ w.T + b
        rr, bb = cascade_mod.ridge_solve(x, y, 0.0)
        assert np.allclose(rr, w, atol=1e-8) and np.allclose(bb, b, atol=1e-8)

    def loss_check():
        f = np.zeros((1, 1, 4))
        f[0, 0, 0] = 1.0
        h = np.eye(2, 4)
        fmap = dffnet.FeatureMap(f)
        layer = dffnet.LossLayerParams(h)
        labels = np.zeros((1, 1), dtype=np.int64)
        val = dffnet.angular_softmax_loss(fmap, labels, layer)
        assert abs(val - np.log(1.0 + np.exp(-1.0))) < 1e-9

    def match_check():
        rng = np.random.default_rng(1)
        f = rng.standard_normal((4, 4, 8))
        f /= np.linalg.norm(f, axis=2, keepdims=True)
        fmap = dffnet.FeatureMap(f)
        ms = matching.dense_match(fmap, fmap, threshold=12.0)
        ok = 0
        for sx, sy, tx, ty, ang in ms.pairs:
            # self-dot can round a hair below 1, giving a ~1e-6 deg angle
            ok += int(sx == tx and sy == ty and ang < 1e-5)
        assert ok == 16

    def cvt_check():
        model = facemodel.generate_synthetic_model(7, n_vertices=220)
        mesh = model.mean_mesh()
        seg = segmentation.cvt_segment(mesh, 6, seed=3)
        assert seg.patch_of.shape[0] == mesh.triangles.shape[0]
        assert len(np.unique(seg.patch_of)) == 6
        e = seg.energy_trace
        assert all(e[i + 1] <= e[i] * (1 + 1e-12) for i in range(len(e) - 1))

    check("rotation orthogonality", rotation_check)
    check("projection example", projection_check)
    check("rasterizer coverage", raster_check)
    check("depth visibility", visibility_check)
    check("ridge recovery", ridge_check)
    check("loss closed form", loss_check)
    check("dense self match", match_check)
    check("cvt partition", cvt_check)
    run_all()
    print("selftest passed")
    return 0


# ---------------------------------------------------------------------------
# parser assembly


def build_parser():
    parser = _Parser(prog="dffalign", description=__doc__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-model", help="generate a synthetic morphable model")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_gen_model)

    p = sub.add_parser("gen-data", help="render a synthetic dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--count", type=int)
    p.add_argument("--config")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("segment", help="build a bank of surface segmentations")
    p.add_argument("--model", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int)
    p.add_argument("--patches", type=int)
    p.add_argument("--config")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("train-dff", help="train the descriptor network")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--segs", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--config")
    p.set_defaults(func=cmd_train_dff)

    p = sub.add_parser("extract", help="extract a per-pixel feature map")
    p.add_argument("--weights", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("match", help="match descriptors between two images")
    p.add_argument("--weights", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("sparse", "dense"), default="dense")
    p.add_argument("--points", help="source landmark file for sparse mode")
    p.add_argument("--threshold", type=float)
    p.add_argument("--viz", help="prefix for correspondence images (dense)")
    p.add_argument("--config")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("learn-cascade", help="learn the descent cascade")
    p.add_argument("--model", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stages", type=int)
    p.add_argument("--seed", type=int, help="recorded in provenance only")
    p.add_argument("--config")
    p.set_defaults(func=cmd_learn_cascade)

    p = sub.add_parser("align", help="align a face in one image")
    p.add_argument("--model", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--cascade", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--box", type=_box_arg, required=True, help="x,y,w,h")
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("eval", help="score predicted landmarks against a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--mode", choices=("bbox", "interpupil"), default="bbox")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("selftest", help="run quick built-in checks")
    p.set_defaults(func=cmd_selftest)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if getattr(args, "func", None) is None:
        print("usage error: no command given (try --help)", file=sys.stderr)
        return 1
    try:
        return args.func(args) or 0
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main(os.sys.argv[1:]))
