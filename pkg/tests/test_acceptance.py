"""Acceptance suite: one test per shipped guarantee.

Every test prints a single PASS/FAIL line with the measured numbers (run
with -s to watch them live); the assertions use the same values.  The two
training-based tests share a module fixture so the 20-epoch run happens
once.  The longest test (held-out descent) sits at the end of the file.
"""

import os
import time

import numpy as np
import pytest
import torch

from dffalign import cli, dataio, dffnet, evaluation, facemodel, matching, render, segmentation
from dffalign import cascade as cascade_mod
from dffalign import align as align_face  # package attr: the align() function
from dffalign.align import AlignConfig, DescentStage, fit_shape, state_from_params
from dffalign.cascade import RegressionConfig
from dffalign.dffnet import (
    FeatureMap,
    FeatureNet,
    LossLayerParams,
    NetConfig,
    OptimConfig,
    angular_softmax_loss,
    init_loss_layers,
    loss_and_gradients,
    loss_value,
    pixel_accuracy,
    sample_feature,
)
from dffalign.facemodel import (
    CameraParams,
    FaceMesh,
    ShapeParams,
    camera_depths,
    project_points,
    synthesize_shape,
)
from dffalign.render import rasterize, vertex_visibility, visibility_epsilon

from oracles import match_oracle, patch_components, raster_oracle, visibility_oracle


def _criterion(name, ok, detail):
    print(f"{'PASS' if ok else 'FAIL'} - {name}: {detail}", flush=True)
    assert ok, f"{name}: {detail}"


# ---------------------------------------------------------------------------
# shared 20-epoch desk training run (32 images, 64x64, 32 patches, 8 segs)


@pytest.fixture(scope="module")
def desk_training(model):
    samples = render.generate_dataset(model, 32, 21)
    segs = segmentation.generate_segmentation_bank(model.mean_mesh(), 8, 32, 5)
    stacks = [
        [
            render.project_patch_labels(model, s.shape, s.camera, seg, 64, 64).labels
            for seg in segs
        ]
        for s in samples
    ]
    images = [s.image for s in samples]
    net_cfg = NetConfig(input_size=(64, 64), feature_dim=32, depth=2,
                        channels=(16, 32), seed=4)
    opt_cfg = OptimConfig(learning_rate=0.05, momentum=0.9, batch_size=1,
                          weight_decay=5e-4, shuffle_seed=0)
    t0 = time.perf_counter()
    net, layers, history = dffnet.train(net_cfg, images, stacks, n_classes=32,
                                        epochs=20, optim_config=opt_cfg)
    train_seconds = time.perf_counter() - t0
    return {
        "samples": samples,
        "images": images,
        "stacks": stacks,
        "net": net,
        "layers": layers,
        "history": history,
        "train_seconds": train_seconds,
    }


# ---------------------------------------------------------------------------
# loss gradients vs. central finite differences


def _perturb(net, layers, kind, key, idx, h):
    if kind == "net":
        p = dict(net.named_parameters())[key]
        with torch.no_grad():
            p.view(-1)[idx] += h
    else:
        layers[key].class_vectors.flat[idx] += h


def test_loss_gradients_match_finite_differences(rng):
    t0 = time.perf_counter()
    net = FeatureNet(NetConfig(input_size=(16, 16), feature_dim=32, depth=2,
                               channels=(16, 32), seed=2))
    layers = init_loss_layers(2, 6, 32, seed=3)
    image = rng.uniform(0.0, 1.0, (16, 16, 3))
    stacks = []
    for _ in range(2):
        lab = rng.integers(0, 6, (16, 16))
        lab[rng.uniform(size=(16, 16)) < 0.25] = -1
        stacks.append(lab)
    images, labels = [image], [stacks]

    _, grads = loss_and_gradients(net, layers, images, labels)

    universe = [("net", name, i)
                for name, p in net.named_parameters()
                for i in range(p.numel())]
    class_universe = [("class", k, i)
                      for k in range(2)
                      for i in range(layers[k].class_vectors.size)]

    def central(kind, key, idx, h):
        _perturb(net, layers, kind, key, idx, +h)
        hi = loss_value(net, layers, images, labels)
        _perturb(net, layers, kind, key, idx, -2 * h)
        lo = loss_value(net, layers, images, labels)
        _perturb(net, layers, kind, key, idx, +h)
        return (hi - lo) / (2 * h)

    order = list(rng.permutation(len(universe)))
    class_order = list(rng.permutation(len(class_universe)))
    picks = [universe[i] for i in order[:320]]
    class_picks = [class_universe[i] for i in class_order[:60]]

    checked = 0
    kinks = 0
    max_rel = 0.0
    queue = class_picks + picks  # class vectors first, then net weights
    for kind, key, idx in queue:
        if checked >= 208:
            break
        fd1 = central(kind, key, idx, 1e-4)
        fd2 = central(kind, key, idx, 1e-5)
        if abs(fd1 - fd2) > 1e-3 * max(abs(fd1), abs(fd2), 1e-9):
            # shrinking the step changes the quotient at the percent level:
            # the interval straddles a relu kink, where the loss is not
            # differentiable, so this coordinate cannot be checked
            kinks += 1
            continue
        g = grads[key if kind == "net" else f"class_vectors.{key}"].flat[idx]
        rel = abs(fd1 - g) / max(abs(fd1), abs(g), 1e-6)
        max_rel = max(max_rel, rel)
        checked += 1
    elapsed = time.perf_counter() - t0
    _criterion(
        "gradient finite-difference check",
        checked >= 200 and max_rel < 1e-4 and elapsed < 60.0,
        f"{checked} coordinates (skipped {kinks} at relu kinks), "
        f"max rel err {max_rel:.2e} (< 1e-4), {elapsed:.1f}s (< 60s)",
    )


def test_loss_matches_closed_forms():
    layer = LossLayerParams(np.eye(2, 3))
    labels = np.zeros((1, 1), dtype=np.int64)

    f = np.zeros((1, 1, 3))
    f[0, 0, 2] = 1.0  # orthogonal to both class vectors: logits are (0, 0)
    symmetric = angular_softmax_loss(FeatureMap(f), labels, layer)
    err_sym = abs(symmetric - np.log(2.0))

    f = np.zeros((1, 1, 3))
    f[0, 0, 0] = 1.0  # aligned with its class vector: logits are (1, 0)
    separated = angular_softmax_loss(FeatureMap(f), labels, layer)
    err_sep = abs(separated - np.log(1.0 + np.exp(-1.0)))

    _criterion(
        "loss closed forms",
        err_sym < 1e-9 and err_sep < 1e-9,
        f"log2 case err {err_sym:.2e}, log(1+1/e) case err {err_sep:.2e} (< 1e-9)",
    )


def test_training_reduces_loss_and_beats_chance(desk_training):
    hist = desk_training["history"]
    acc = pixel_accuracy(desk_training["net"], desk_training["layers"],
                         desk_training["images"], desk_training["stacks"])
    chance = 1.0 / 32.0
    seconds = desk_training["train_seconds"]
    _criterion(
        "training makes progress",
        hist.epoch_loss[-1] < hist.epoch_loss[0] and acc > 5 * chance
        and seconds < 600.0,
        f"loss {hist.epoch_loss[0]:.3f} -> {hist.epoch_loss[-1]:.3f}, "
        f"pixel accuracy {acc:.4f} (> {5 * chance:.5f}), "
        f"{seconds:.0f}s (< 600s)",
    )


# ---------------------------------------------------------------------------
# rasterizer and visibility vs. exhaustive oracles


def _soup_mesh(rng, n_tris, width, height, z_span=4.0):
    n = 3 * n_tris
    verts = np.zeros((3, n))
    verts[0] = rng.uniform(-2, width + 1, size=n)
    verts[1] = rng.uniform(-2, height + 1, size=n)
    verts[2] = rng.uniform(-z_span / 2, z_span / 2, size=n)
    return FaceMesh(verts, np.arange(n).reshape(-1, 3))


def test_rasterizer_and_visibility_match_oracles(model, rng):
    cam = CameraParams(scale=1.0, pitch=0.0, yaw=0.0, roll=0.0, tx=0.0, ty=0.0)
    w = h = 32
    mismatched = 0
    for _ in range(20):
        mesh = _soup_mesh(rng, 200, w, h)
        buf = rasterize(mesh, cam, w, h)
        tri_map, _ = raster_oracle(mesh.vertices[:2], -mesh.vertices[2],
                                   mesh.triangles, w, h)
        mismatched += int(not np.array_equal(buf.triangle_id, tri_map))

    total = 0
    agree = 0
    out_of_band = 0
    # triangle soups under the identity camera plus posed face meshes
    cases = [("soup", None)] * 20 + [("face", i) for i in range(13)]
    for kind, i in cases:
        if kind == "soup":
            mesh = _soup_mesh(rng, 60, w, h)
            vcam = cam
            vw = vh = w
        else:
            shape = ShapeParams(
                rng.standard_normal(model.m_id) * np.sqrt(model.id_eigen),
                rng.standard_normal(model.m_exp) * np.sqrt(model.exp_eigen),
            )
            mesh = synthesize_shape(model, shape)
            vcam = CameraParams(scale=28.0, pitch=rng.uniform(-0.4, 0.4),
                                yaw=rng.uniform(-1.2, 1.2),
                                roll=rng.uniform(-0.3, 0.3), tx=40.0, ty=40.0)
            vw = vh = 80
        buf = rasterize(mesh, vcam, vw, vh)
        ids = np.arange(mesh.n_vertices)
        got = vertex_visibility(mesh, vcam, ids, buf)
        xy = project_points(mesh.vertices, vcam)
        depth = camera_depths(mesh.vertices, vcam)
        want = visibility_oracle(xy, depth, mesh.triangles, vw, vh)
        total += mesh.n_vertices
        agree += int((got == want).sum())
        if (got != want).any():
            eps = visibility_epsilon(depth)
            for v in np.nonzero(got != want)[0]:
                px = int(np.rint(xy[0, v]))
                py = int(np.rint(xy[1, v]))
                z = buf.depth[py, px]
                if not abs(depth[v] - (z + eps)) <= eps:
                    out_of_band += 1
    rate = agree / total
    _criterion(
        "rasterizer and visibility oracles",
        mismatched == 0 and total >= 10000 and rate >= 0.999 and out_of_band == 0,
        f"20/20 triangle-id maps exact ({mismatched} mismatched), "
        f"visibility agreement {agree}/{total} = {rate:.4f} (>= 0.999), "
        f"{out_of_band} disagreements outside the epsilon band",
    )


# ---------------------------------------------------------------------------
# ridge regression and shape fitting vs. direct solutions


def test_ridge_and_shape_fit_match_oracles(model, rng):
    # ridge vs. dense normal equations on the bias-augmented system
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(5, 40))
        f = int(rng.integers(1, 12))
        t = int(rng.integers(1, 5))
        lam = float(10.0 ** rng.uniform(-8, 1))
        phi = rng.standard_normal((n, f))
        y = rng.standard_normal((n, t))
        r, b = cascade_mod.ridge_solve(phi, y, lam)
        aug = np.hstack([phi, np.ones((n, 1))])
        sol = np.linalg.solve(aug.T @ aug + lam * np.eye(f + 1), aug.T @ y)
        want = np.hstack([sol[:-1].T, sol[-1][:, None]])
        got = np.hstack([r, b[:, None]])
        worst = max(worst, np.abs(got - want).max() / max(np.abs(want).max(), 1e-12))

    # fit_shape recovers forward-generated coefficients
    acfg = AlignConfig(omega_regular=1e-8)
    worst_fit = 0.0
    for _ in range(20):
        truth = ShapeParams(
            rng.standard_normal(model.m_id) * np.sqrt(model.id_eigen),
            rng.standard_normal(model.m_exp) * np.sqrt(model.exp_eigen),
        )
        camera = CameraParams(scale=rng.uniform(20, 35),
                              pitch=rng.uniform(-0.3, 0.3),
                              yaw=rng.uniform(-0.8, 0.8),
                              roll=rng.uniform(-0.3, 0.3),
                              tx=rng.uniform(25, 40), ty=rng.uniform(25, 40))
        x = state_from_params(model, truth, camera, acfg).x
        got = fit_shape(model, x, camera, acfg)
        p_true = np.concatenate([truth.p_id, truth.p_exp])
        p_got = np.concatenate([got.p_id, got.p_exp])
        worst_fit = max(worst_fit,
                        np.linalg.norm(p_got - p_true) / np.linalg.norm(p_true))

    # the multi-image shape update degenerates to fit_shape for one image
    truth = ShapeParams(
        rng.standard_normal(model.m_id) * np.sqrt(model.id_eigen),
        rng.standard_normal(model.m_exp) * np.sqrt(model.exp_eigen),
    )
    camera = CameraParams(28.0, 0.1, 0.4, -0.1, 32.0, 30.0)
    x = state_from_params(model, truth, camera, AlignConfig()).x
    x_noisy = x + rng.standard_normal(x.shape)
    single = fit_shape(model, x_noisy, camera, AlignConfig())
    multi = cascade_mod.update_generic_shape(model, [x_noisy], [camera], AlignConfig())
    gap = max(np.abs(single.p_id - multi.p_id).max(),
              np.abs(single.p_exp - multi.p_exp).max())

    _criterion(
        "ridge and shape-fit oracles",
        worst < 1e-8 and worst_fit < 1e-4 and gap < 1e-10,
        f"ridge max rel err {worst:.2e} (< 1e-8) on 50 instances, "
        f"shape recovery max rel err {worst_fit:.2e} (< 1e-4), "
        f"single-image update gap {gap:.2e} (< 1e-10)",
    )


# ---------------------------------------------------------------------------
# surface segmentations


def test_segmentations_are_valid_partitions(model):
    mesh = model.mean_mesh()
    bank = segmentation.generate_segmentation_bank(mesh, 4, 32, 9)
    bank_again = segmentation.generate_segmentation_bank(mesh, 4, 32, 9)
    problems = []
    for i, seg in enumerate(bank):
        if seg.patch_of.shape[0] != mesh.triangles.shape[0]:
            problems.append(f"seg {i}: not a full partition")
        counts = np.bincount(seg.patch_of, minlength=32)
        if (counts == 0).any():
            problems.append(f"seg {i}: empty patch")
        for p in range(32):
            if counts[p] and patch_components(mesh, seg.patch_of, p) != 1:
                problems.append(f"seg {i}: patch {p} disconnected")
        e = seg.energy_trace
        if any(e[k + 1] > e[k] * (1 + 1e-12) for k in range(len(e) - 1)):
            problems.append(f"seg {i}: energy increased")
        if not np.array_equal(seg.patch_of, bank_again[i].patch_of):
            problems.append(f"seg {i}: not deterministic under the seed")
    _criterion(
        "segmentation partitions",
        not problems,
        "4 segmentations x 32 patches: full partitions, non-empty, connected, "
        "energy non-increasing, seed-deterministic"
        + ("" if not problems else "; " + "; ".join(problems)),
    )


# ---------------------------------------------------------------------------
# matching


def test_matching_is_self_consistent_and_oracle_exact(model, desk_training, rng):
    # dense self-match over face pixels of real extracted maps
    net = desk_training["net"]
    worst_rate = 1.0
    for s in desk_training["samples"][:5]:
        fmap = net.extract(s.image)
        buf = rasterize(synthesize_shape(model, s.shape), s.camera, 64, 64)
        ys, xs = np.nonzero(buf.triangle_id >= 0)
        corr = matching.dense_match(fmap, fmap, threshold=12.0).correspondence
        ok = (corr[ys, xs, 0] == xs) & (corr[ys, xs, 1] == ys)
        worst_rate = min(worst_rate, ok.mean())

    # exhaustive-argmin agreement on 8x8 toy maps, bit for bit
    exact = True
    for _ in range(3):
        f = rng.standard_normal((8, 8, 6))
        src = FeatureMap(f / np.linalg.norm(f, axis=2, keepdims=True))
        f = rng.standard_normal((8, 8, 6))
        tgt = FeatureMap(f / np.linalg.norm(f, axis=2, keepdims=True))
        idx, ang = match_oracle(src.features.reshape(-1, 6),
                                tgt.features.reshape(-1, 6))
        ms = matching.dense_match(src, tgt, threshold=180.0)
        for row, j, a in zip(ms.pairs, idx, ang):
            exact &= row[2] == j % 8 and row[3] == j // 8 and row[4] == a
        pts = np.stack([np.tile(np.arange(8.0), 8), np.repeat(np.arange(8.0), 8)])
        vecs = np.stack([sample_feature(src, x, y) for x, y in pts.T])
        idx, ang = match_oracle(vecs, tgt.features.reshape(-1, 6))
        ms = matching.sparse_match(src, pts, tgt, threshold=180.0)
        for row, j, a in zip(ms.pairs, idx, ang):
            exact &= row[2] == j % 8 and row[3] == j // 8 and row[4] == a
    _criterion(
        "matching self-consistency",
        worst_rate >= 0.99 and exact,
        f"dense self-match rate {worst_rate:.4f} over face pixels (>= 0.99), "
        f"8x8 dense+sparse equal the exhaustive argmin oracle bitwise: {exact}",
    )


# ---------------------------------------------------------------------------
# unit-norm descriptor contract


def test_features_are_unit_norm(desk_training, rng):
    net = desk_training["net"]
    worst = 0.0
    for s in desk_training["samples"][:3]:
        fmap = net.extract(s.image)
        worst = max(worst, np.abs(np.linalg.norm(fmap.features, axis=2) - 1).max())
        for _ in range(100):
            v = sample_feature(fmap, rng.uniform(0, 63), rng.uniform(0, 63))
            worst = max(worst, abs(np.linalg.norm(v) - 1.0))
    # an untrained net obeys the same contract
    raw = FeatureNet(NetConfig(input_size=(16, 16), feature_dim=8, depth=2,
                               channels=(4, 6), seed=0))
    fmap = raw.extract(rng.uniform(0, 1, (16, 16, 3)))
    worst = max(worst, np.abs(np.linalg.norm(fmap.features, axis=2) - 1).max())
    _criterion(
        "unit-norm contract",
        worst < 1e-6,
        f"max |norm - 1| = {worst:.2e} (< 1e-6) over forward maps and "
        f"300 interpolated samples",
    )


# ---------------------------------------------------------------------------
# bit-identical artifacts across repeated runs


DET_CFG = """
n_vertices = 260
m_id = 4
m_exp = 3
image_width = 32
image_height = 32
dataset_count = 4
segmentation_count = 2
patches = 6
feature_dim = 8
net_depth = 2
channels = 4,6
epochs = 2
batch_size = 2
stage_count = 2
"""


def _run_pipeline(root, cfg, model_path, segs_path):
    data = os.path.join(root, "data")
    weights = os.path.join(root, "weights.dfft")
    casc = os.path.join(root, "cascade.dfft")
    pred = os.path.join(root, "pred")
    for argv in (
        ["gen-data", "--model", model_path, "--seed", "3", "--out-dir", data,
         "--config", cfg],
        ["train-dff", "--model", model_path, "--data", data, "--segs", segs_path,
         "--seed", "2", "--out", weights, "--config", cfg],
        ["learn-cascade", "--model", model_path, "--weights", weights,
         "--data", data, "--out", casc, "--config", cfg],
    ):
        assert cli.main(argv) == 0, f"{argv[0]} failed"
    samples = dataio.load_dataset(data)
    box = cascade_mod.landmark_box(samples[0].landmarks68, 0.1)
    argv = ["align", "--model", model_path, "--weights", weights,
            "--cascade", casc, "--image", os.path.join(data, "images", "sample_0000.png"),
            "--box", ",".join(f"{v:.3f}" for v in box), "--out-prefix", pred,
            "--config", cfg]
    assert cli.main(argv) == 0, "align failed"
    files = [os.path.join(data, "manifest.txt"), os.path.join(data, "tensors.dfft")]
    files += [os.path.join(data, "images", f"sample_{i:04d}.png") for i in range(4)]
    files += [weights, weights + ".log.txt", casc,
              pred + ".landmarks.txt", pred + ".params.dfft", pred + ".overlay.png"]
    return files


def test_pipeline_outputs_are_deterministic(tmp_path):
    # both runs use the *same* working directory (provenance echoes input
    # paths, so distinct directories would differ trivially): snapshot the
    # first run's bytes, wipe, rerun, compare
    import shutil

    cfg = tmp_path / "det.cfg"
    cfg.write_text(DET_CFG)
    model_path = str(tmp_path / "model.dfft")
    segs_path = str(tmp_path / "segs.dfft")
    assert cli.main(["gen-model", "--seed", "11", "--out", model_path,
                     "--config", str(cfg)]) == 0
    assert cli.main(["segment", "--model", model_path, "--seed", "5",
                     "--out", segs_path, "--config", str(cfg)]) == 0
    work = tmp_path / "work"
    snapshots = []
    for _ in range(2):
        work.mkdir()
        files = _run_pipeline(str(work), str(cfg), model_path, segs_path)
        blob = {}
        for f in files:
            with open(f, "rb") as fh:
                blob[os.path.relpath(f, str(work))] = fh.read()
        snapshots.append(blob)
        shutil.rmtree(work)
    differing = [k for k in snapshots[0] if snapshots[0][k] != snapshots[1][k]]
    _criterion(
        "repeat-run determinism",
        not differing,
        f"{len(snapshots[0])} artifacts from gen-data/train-dff/learn-cascade/"
        "align byte-identical across two same-path runs"
        + ("" if not differing else f"; differing: {differing}"),
    )


# ---------------------------------------------------------------------------
# speed smoke


def test_extraction_and_align_iteration_are_fast(model, desk_training, rng):
    net = desk_training["net"]
    image = desk_training["samples"][0].image
    net.extract(image)  # warm up
    times = []
    for s in desk_training["samples"][:5]:
        t0 = time.perf_counter()
        net.extract(s.image)
        times.append(time.perf_counter() - t0)
    extract_s = float(np.median(times))

    fmap = net.extract(image)
    stage = DescentStage(
        r_x=rng.standard_normal((136, 160 * 32)) * 1e-6,
        b_x=np.zeros(136),
        r_w=rng.standard_normal((6, 160 * 32)) * 1e-6,
        b_w=np.zeros(6),
    )
    box = cascade_mod.landmark_box(desk_training["samples"][0].landmarks68, 0.1)
    align_face(model, fmap, box, [stage], AlignConfig())  # warm up
    t0 = time.perf_counter()
    align_face(model, fmap, box, [stage], AlignConfig())
    iter_s = time.perf_counter() - t0
    _criterion(
        "speed smoke",
        extract_s < 1.0 and iter_s < 1.0,
        f"64x64 extraction {extract_s * 1e3:.0f}ms (< 1s), "
        f"initialization plus one descent iteration {iter_s * 1e3:.0f}ms (< 1s)",
    )


# ---------------------------------------------------------------------------
# held-out descent (the long test: full pipeline train + eval)


E2E_NET_IMAGES = 64    # net trained on this prefix of the training images
E2E_LAMBDA = 0.3       # ridge scale for both the landmark and camera maps
E2E_OMEGA = 1e-3       # shape-fit regularizer


def test_heldout_descent_halves_initial_error(model):
    t0 = time.perf_counter()
    train_samples = render.generate_dataset(model, 200, 100)
    test_samples = render.generate_dataset(model, 50, 200)
    segs = segmentation.generate_segmentation_bank(model.mean_mesh(), 8, 32, 5)
    stacks = [
        [
            render.project_patch_labels(model, s.shape, s.camera, seg, 64, 64).labels
            for seg in segs
        ]
        for s in train_samples[:E2E_NET_IMAGES]
    ]
    net_cfg = NetConfig(input_size=(64, 64), feature_dim=32, depth=2,
                        channels=(16, 32), seed=4)
    opt_cfg = OptimConfig(learning_rate=0.05, momentum=0.9, batch_size=1,
                          weight_decay=5e-4, shuffle_seed=0)
    net, _, _ = dffnet.train(net_cfg, [s.image for s in train_samples[:E2E_NET_IMAGES]],
                             stacks, n_classes=32, epochs=20, optim_config=opt_cfg)

    acfg = AlignConfig(omega_regular=E2E_OMEGA)
    rcfg = RegressionConfig(lambda_x_scale=E2E_LAMBDA, lambda_w_scale=E2E_LAMBDA)
    stages, _ = cascade_mod.learn_cascade(model, net, train_samples, rcfg, acfg)

    nmes = np.zeros((len(test_samples), 4))
    for i, s in enumerate(test_samples):
        fmap = net.extract(s.image)
        box = cascade_mod.landmark_box(s.landmarks68, 0.1)
        _, trace = align_face(model, fmap, box, stages, acfg)
        tight = cascade_mod.landmark_box(s.landmarks68, 0.0)
        vis = s.visibility160[:68]
        for k, x in enumerate(trace):
            nmes[i, k] = evaluation.nme_bbox(x.reshape(-1, 2).T, s.landmarks68,
                                             tight, vis)
    means = nmes.mean(axis=0)
    elapsed = time.perf_counter() - t0
    decreasing = bool(all(means[k + 1] < means[k] for k in range(3)))
    ratio = means[3] / means[0]
    curve = " -> ".join(f"{m:.4f}" for m in means)
    _criterion(
        "held-out descent",
        decreasing and ratio <= 0.5 and elapsed < 1800.0,
        f"mean NME over 50 held-out images: {curve} "
        f"(strictly decreasing: {decreasing}), final/init {ratio:.3f} (<= 0.5), "
        f"{elapsed:.0f}s (< 1800s)",
    )
