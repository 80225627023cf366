"""Deployment path: flat f32 models, per-frame inference and latency benchmarks."""
from __future__ import annotations

import os
import platform
import sysconfig

import numpy as np

from ..errors import DimensionError
from . import _frame_py
from .flat import FlatModel, export_flat

try:
    from . import _frame as _frame_compiled
except ImportError:  # extension not built
    _frame_compiled = None

STAGES = ("skin_nodes", "pose_modulator", "node_deformer", "lbs")


def backends():
    out = {"python": _frame_py}
    if _frame_compiled is not None:
        out["cython"] = _frame_compiled
    return out


def default_backend() -> str:
    if _frame_compiled is not None and not os.environ.get("DRAPE_PURE_PYTHON"):
        return "cython"
    return "python"


def make_kernel(flat: FlatModel, backend: str | None = None):
    """Allocate a kernel (the reusable per-thread workspace) for ``flat``."""
    name = backend or default_backend()
    mods = backends()
    if name not in mods:
        raise ValueError(f"backend {name!r} is not available; have {sorted(mods)}")
    return mods[name].FrameKernel(flat)


def frame_inference(kernel, pose):
    """Posed garment vertices (n, 3) f32.

    The returned array is the kernel's own output buffer and is overwritten
    by the next call.  A contiguous float32 pose goes straight to the kernel;
    anything else is converted first.
    """
    try:
        kernel.frame(pose)
    except TypeError:
        kernel.frame(np.ascontiguousarray(pose, dtype=np.float32))
    return kernel.out


def hyper_from_flat(flat: FlatModel):
    """Rebuild the f64 body encoder stored alongside the runtime tensors."""
    from ..neural.hyper import HyperConfig, HyperModulator
    width, heads, layers, res_blocks, freqs, points = (int(v) for v in flat["hyper.config"])
    cfg = HyperConfig(width, heads, layers, res_blocks, freqs, points)
    size = flat["body.gamma"].size
    hyper = HyperModulator(size, cfg)
    for name in hyper.params:
        arr = flat["hyper." + name]
        if arr.shape != hyper.params[name].shape:
            raise DimensionError(f"stored encoder tensor {name} has shape {arr.shape}")
        hyper.params[name] = arr.astype(np.float64)
    return hyper


def set_body(flat: FlatModel, body, kernel=None, hyper=None):
    """Recompute and cache the body signal for ``body``; returns the Modulation."""
    from ..neural.hyper import body_point_sample
    hyper = hyper_from_flat(flat) if hyper is None else hyper
    if hyper.output_size != flat["body.gamma"].size:
        raise DimensionError("encoder output does not match the pose network")
    seed = int(flat["model.seed"][0]) if "model.seed" in flat else 0
    pts, nrm = body_point_sample(body, hyper.config.points, seed)
    signal, _ = hyper.forward(pts, nrm)
    flat["body.gamma"] = signal.gamma
    flat["body.beta"] = signal.beta
    if kernel is not None:
        kernel.set_body_signal(flat["body.gamma"], flat["body.beta"])
    return signal


def _hardware() -> str:
    try:
        with open("/proc/cpuinfo", encoding="utf-8") as fh:
            for line in fh:
                if line.startswith("model name"):
                    return line.split(":", 1)[1].strip()
    except OSError:
        pass
    return platform.processor() or platform.machine()


def _stats(ns):
    us = np.asarray(ns) / 1000.0
    return {"min": float(us.min()), "median": float(np.median(us)), "p99": float(np.percentile(us, 99))}


def benchmark(flat: FlatModel, iterations: int = 1000, warmup: int = 100, backend: str | None = None,
              seed: int = 0, pin: bool = True) -> dict:
    """Per-stage latency report in microseconds for random in-limit poses."""
    if iterations < 1:
        raise ValueError("iterations must be positive")
    kernel = make_kernel(flat, backend)
    rng = np.random.default_rng(seed)
    theta = rng.uniform(-0.5, 0.5, kernel.p).astype(np.float32)
    old = None
    if pin and hasattr(os, "sched_setaffinity"):
        old = os.sched_getaffinity(0)
        os.sched_setaffinity(0, {min(old)})
    try:
        kernel.time_stages(theta, warmup)
        times = kernel.time_stages(theta, iterations)
    finally:
        if old is not None:
            os.sched_setaffinity(0, old)
    mlp = times[:, 1] + times[:, 2]
    total = times.sum(axis=1)
    report = {
        "backend": kernel.__class__.__module__.rsplit(".", 1)[-1].lstrip("_").replace("frame_py", "python")
        .replace("frame", "cython"),
        "iterations": int(iterations),
        "warmup": int(warmup),
        "dims": {"m": int(kernel.m), "pose_dim": int(kernel.p), "vertices": int(kernel.n),
                 "pose_hidden": [int(w.shape[1]) for w, _ in flat.layers("pose")[:-1]],
                 "node_hidden": [int(w.shape[1]) for w, _ in flat.layers("node")[:-1]]},
        "stages_us": {name: _stats(times[:, k]) for k, name in enumerate(STAGES)},
        "mlp_us": _stats(mlp),
        "total_us": _stats(total),
        "fps_mlp": 1e6 / _stats(mlp)["median"],
        "fps_total": 1e6 / _stats(total)["median"],
        "reference_us": {"node_deformer": 12.5, "pose_modulator": 46.7, "lbs_overhead_m128": 9.03},
        "hardware": _hardware(),
        "build_flags": sysconfig.get_config_var("CFLAGS") or "",
        "native_build": os.environ.get("DRAPE_NATIVE", "1") == "1",
        "pinned": old is not None,
    }
    return report


def compare_backends(flat: FlatModel, iterations: int = 1000, warmup: int = 100, seed: int = 0) -> dict:
    """Benchmark every available backend on the same model."""
    return {name: benchmark(flat, iterations, warmup, backend=name, seed=seed) for name in backends()}


__all__ = [
    "FlatModel", "STAGES", "backends", "benchmark", "compare_backends", "default_backend", "export_flat",
    "frame_inference", "hyper_from_flat", "make_kernel", "set_body",
]
