"""``drape`` command line: nodes, training, inference, benchmarks, metrics, oracle data."""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .errors import DrapeError, NumericFailure

EXIT_OK, EXIT_USER, EXIT_NUMERIC = 0, 1, 2


class UserError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USER, f"{self.prog}: error: {message}\n")


def _threads(args) -> int:
    value = args.threads if getattr(args, "threads", None) else os.environ.get("DRAPE_THREADS", "1")
    try:
        n = int(value)
    except ValueError:
        raise UserError(f"bad thread count {value!r}") from None
    if n < 1:
        raise UserError("thread count must be positive")
    return n


def _emit(args, doc, text=None):
    if args.json:
        print(json.dumps(doc, indent=2, default=float))
    elif text is not None:
        print(text)


def _scene(args):
    from .scenes import load_scene_file, make_test_scene
    if getattr(args, "scene_file", None):
        garment, body = load_scene_file(args.scene_file)
        name = str(args.scene_file)
    else:
        name = args.scene or "capsule-arm-sleeve"
        garment, body = make_test_scene(name)
    if getattr(args, "garment", None):
        from .mesh import load_obj
        garment = load_obj(args.garment)
    return garment, body, name


def _material(args):
    from .physics import MaterialParams
    if getattr(args, "material", None):
        return MaterialParams.from_dict(json.loads(Path(args.material).read_text(encoding="utf-8")))
    return MaterialParams()


def _nodes(args, garment, skeleton):
    from .nodes import NodeSet, build_nodes
    if getattr(args, "nodes_file", None):
        nodes = NodeSet.load(args.nodes_file)
        if nodes.n != garment.n_vertices:
            raise UserError("node file does not match the garment's vertex count")
        return nodes
    if args.nodes < 1 or args.nodes > garment.n_vertices:
        raise UserError(f"node count must be in [1, {garment.n_vertices}]")
    seed_vertex = int(np.random.default_rng(args.seed).integers(garment.n_vertices))
    return build_nodes(garment, skeleton, args.nodes, seed_vertex=seed_vertex)


def _read_poses(path, pose_dim, sequence):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    arr = np.asarray(doc, dtype=np.float64)
    if not sequence:
        arr = arr[None]
    if arr.ndim != 2 or arr.shape[1] != pose_dim:
        raise UserError(f"poses must be arrays of {pose_dim} radians, got shape {arr.shape[1:]}")
    return arr


# -- commands ------------------------------------------------------------------

def cmd_sample_nodes(args):
    garment, body, _ = _scene(args)
    nodes = _nodes(args, garment, body.skeleton)
    nodes.save(args.out)
    _emit(args, {"out": str(args.out), "m": nodes.m, "n": nodes.n}, f"wrote {nodes.m} nodes to {args.out}")


def cmd_train(args):
    from .neural import NetworkDims
    from .neural.train import TrainingConfig, train_self_supervised, train_supervised, write_checkpoint
    from .scenes import body_variants

    garment, body, name = _scene(args)
    params = _material(args)
    nodes = _nodes(args, garment, body.skeleton)
    config = TrainingConfig(epochs=args.epochs, batch_size=args.batch, lr=args.lr, seed=args.seed,
                            optimize_skin_weights=args.optimize_skin_weights, mode=args.mode,
                            body_mode="multi-body" if args.multi_body else "single-body",
                            steps_per_epoch=args.steps_per_epoch, held_out=args.held_out, threads=_threads(args))
    dims = NetworkDims(pose_hidden=(args.pose_width,) * args.pose_layers,
                       node_hidden=(args.node_width,) * args.node_layers)
    if args.mode == "supervised":
        if not args.dataset:
            raise UserError("--mode supervised needs --dataset")
        from .solver import read_dataset
        data = read_dataset(args.dataset)
        if data.vertices.shape[1:] != (garment.n_vertices, 3) or data.poses.shape[1] != body.skeleton.pose_dim:
            raise UserError("dataset does not match the scene")
        result = train_supervised(garment, body, nodes, data.as_pair(), config, dims)
    else:
        bodies = body_variants(garment, body) if args.multi_body else None
        result = train_self_supervised(garment, body, nodes, params, config, dims, bodies=bodies)
    sidecar = write_checkpoint(result, args.out, body.skeleton, garment, body, params, extra={"scene": name})
    doc = {"out": str(args.out), "sidecar": str(sidecar),
           "final_loss": result.loss_curve[-1] if result.loss_curve else None,
           "evaluation": result.evaluation, "baseline": result.baseline}
    text = f"wrote {args.out} and {sidecar}"
    if result.evaluation and result.baseline:
        text += (f"\nheld-out loss {result.evaluation['loss']:.5g} (skinning only {result.baseline['loss']:.5g}),"
                 f" eps_c {result.evaluation['eps_c']:.3f}% (skinning only {result.baseline['eps_c']:.3f}%)")
    _emit(args, doc, text)


def _load_model(path):
    from .runtime import FlatModel
    return FlatModel.load(path)


def cmd_infer(args):
    from .mesh import save_obj
    from .runtime import frame_inference, make_kernel, set_body

    flat = _load_model(args.model)
    garment = flat.garment()
    kernel = make_kernel(flat)
    if args.scene or args.scene_file:
        _, body, _ = _scene(args)
        set_body(flat, body, kernel)
    if bool(args.pose) == bool(args.pose_seq):
        raise UserError("give exactly one of --pose or --pose-seq")
    poses = _read_poses(args.pose or args.pose_seq, flat.pose_dim, bool(args.pose_seq))
    outs = []
    if args.pose_seq:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        for k, theta in enumerate(poses):
            path = out_dir / f"frame_{k:05d}.obj"
            save_obj(garment, path, frame_inference(kernel, theta).astype(np.float64))
            outs.append(str(path))
    else:
        save_obj(garment, args.out, frame_inference(kernel, poses[0]).astype(np.float64))
        outs.append(str(args.out))
    _emit(args, {"outputs": outs}, f"wrote {len(outs)} OBJ file(s)")


def cmd_bench(args):
    from .runtime import backends, benchmark
    if args.iters < 1000:
        raise UserError("--iters must be at least 1000")
    if args.model:
        flat = _load_model(args.model)
    else:
        from .runtime.bench import latency_model
        flat = latency_model(seed=args.seed)[0]
    names = list(backends()) if args.backend == "all" else [args.backend or None]
    reports = {}
    for name in names:
        rep = benchmark(flat, args.iters, args.warmup, backend=name, seed=args.seed)
        reports[rep["backend"]] = rep
    if args.out:
        Path(args.out).write_text(json.dumps(reports, indent=2), encoding="utf-8")
    lines = []
    for name, rep in reports.items():
        st = rep["stages_us"]
        lines.append(f"[{name}] median us: node skinning {st['skin_nodes']['median']:.2f}, "
                     f"pose network {st['pose_modulator']['median']:.2f}, "
                     f"node network {st['node_deformer']['median']:.2f}, lbs {st['lbs']['median']:.2f}; "
                     f"networks {rep['mlp_us']['median']:.2f} ({rep['fps_mlp']:.0f} fps)")
    _emit(args, reports, "\n".join(lines))


def cmd_metrics(args):
    from .mesh import compute_rest_state
    from .metrics import collision_metric, render_table, strain_metrics
    from .physics import CapsuleCollider
    from .rig import pose_limits
    from .runtime import frame_inference, make_kernel, set_body
    from .skinning import lbs_nodes_from_pose, lbs_vertices

    flat = _load_model(args.model)
    garment = flat.garment()
    _, body, _ = _scene(args)
    if body.skeleton.pose_dim != flat.pose_dim:
        raise UserError("scene skeleton does not match the model")
    kernel = make_kernel(flat)
    set_body(flat, body, kernel)
    nodes = flat.node_set()
    rest = compute_rest_state(garment)
    lo, hi = pose_limits(body.skeleton, 1.0)
    poses = np.random.default_rng(args.seed).uniform(lo, hi, size=(args.poses, body.skeleton.pose_dim))
    acc = {"model": [], "lbs": []}
    for theta in poses:
        collider = CapsuleCollider.from_body(body, theta)
        x_model = frame_inference(kernel, theta).astype(np.float64)
        x_lbs = lbs_vertices(garment, nodes, lbs_nodes_from_pose(nodes, body.skeleton, theta))
        for key, x in (("model", x_model), ("lbs", x_lbs)):
            acc[key].append((*strain_metrics(rest, garment, x), collision_metric(collider, x)))
    rows = []
    for key, vals in acc.items():
        e, a, c = np.mean(vals, axis=0)
        rows.append({"method": key, "eps_e": float(e), "eps_a": float(a), "eps_c": float(c)})
    _emit(args, {"poses": args.poses, "rows": rows}, render_table(rows))


def cmd_oracle(args):
    from .solver import generate_oracle_dataset, write_dataset
    garment, body, _ = _scene(args)
    nodes = _nodes(args, garment, body.skeleton)
    data = generate_oracle_dataset(garment, body, nodes, _material(args), args.count, args.steps, args.lr,
                                   args.seed, _threads(args))
    write_dataset(data, args.out)
    _emit(args, {"out": str(args.out), "count": len(data),
                 "mean_loss": float(np.mean(data.losses)) if len(data) else None},
          f"wrote {len(data)} records to {args.out}")


def cmd_config(args):
    from .neural.train import TrainingConfig
    doc = {"material": _material(args).to_dict(), "training": TrainingConfig().to_dict()}
    print(json.dumps(doc, indent=2))


# -- parser --------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="drape", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, scene=True, seed=True):
        sp.add_argument("--json", action="store_true", help="machine-readable output on stdout")
        if seed:
            sp.add_argument("--seed", type=int, default=0)
        if scene:
            sp.add_argument("--scene", help="built-in scene name")
            sp.add_argument("--scene-file", help="custom scene JSON")

    def node_opts(sp):
        sp.add_argument("--nodes", type=int, default=128, help="number of deformation nodes")
        sp.add_argument("--nodes-file", help="existing node set JSON")
        sp.add_argument("--material", help="material parameter JSON")

    sp = sub.add_parser("sample-nodes", help="farthest-point node sampling")
    common(sp)
    sp.add_argument("--garment", help="garment OBJ (defaults to the scene's)")
    sp.add_argument("--nodes", type=int, default=128)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_sample_nodes)

    sp = sub.add_parser("train", help="train a drape model")
    common(sp)
    node_opts(sp)
    sp.add_argument("--garment")
    sp.add_argument("--mode", choices=("self-supervised", "supervised"), default="self-supervised")
    sp.add_argument("--dataset", help="oracle dataset for supervised mode")
    sp.add_argument("--epochs", type=int, default=2000)
    sp.add_argument("--batch", type=int, default=8)
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--steps-per-epoch", type=int, default=1)
    sp.add_argument("--held-out", type=int, default=20)
    sp.add_argument("--optimize-skin-weights", action="store_true")
    sp.add_argument("--multi-body", action="store_true")
    sp.add_argument("--pose-width", type=int, default=512)
    sp.add_argument("--pose-layers", type=int, default=4)
    sp.add_argument("--node-width", type=int, default=128)
    sp.add_argument("--node-layers", type=int, default=4)
    sp.add_argument("--threads", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train)

    for name in ("infer", "drape"):
        sp = sub.add_parser(name, help="drape poses with a trained model")
        common(sp)
        sp.add_argument("--model", required=True)
        sp.add_argument("--pose", help="JSON array of pose radians")
        sp.add_argument("--pose-seq", help="JSON array of poses; writes numbered OBJs into --out")
        sp.add_argument("--out", required=True)
        sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("bench", help="per-frame latency report")
    common(sp, scene=False)
    sp.add_argument("--model", help="flat model (default: random full-size model)")
    sp.add_argument("--iters", type=int, default=10000)
    sp.add_argument("--warmup", type=int, default=100)
    sp.add_argument("--backend", choices=("cython", "python", "all"))
    sp.add_argument("--out", help="write the JSON report here")
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("metrics", help="strain and collision table over random poses")
    common(sp)
    sp.add_argument("--model", required=True)
    sp.add_argument("--poses", type=int, default=100)
    sp.set_defaults(func=cmd_metrics)

    sp = sub.add_parser("oracle", help="generate a full-vertex oracle dataset")
    common(sp)
    node_opts(sp)
    sp.add_argument("--count", type=int, default=1000)
    sp.add_argument("--steps", type=int, default=1000)
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--threads", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("config", help="print default parameters")
    sp.add_argument("--dump", action="store_true", help="print defaults as JSON")
    sp.add_argument("--material", help="material JSON to validate and print")
    sp.set_defaults(func=cmd_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except NumericFailure as exc:
        print(f"drape: numeric failure: {exc}", file=sys.stderr)
        if exc.diagnostics:
            print(json.dumps(exc.diagnostics, default=str), file=sys.stderr)
        return EXIT_NUMERIC
    except (UserError, DrapeError, OSError, ValueError, KeyError) as exc:
        print(f"drape: error: {exc}", file=sys.stderr)
        return EXIT_USER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
