"""Scaling benchmarks: measured forward time vs input size against the
analytic FLOP curves, and the compiled-vs-python kernel comparison."""

from __future__ import annotations

import resource
import time
from pathlib import Path

import numpy as np

from .. import _kernels
from ..model import ModelConfig, VIT_BASE, VIT_LARGE, decode, encode, flops_estimate, init_model
from ..ndgrad import Rng, Tensor, no_grad
from ..ssm import SsmCoeffs, scan_chunked, scan_sequential
from .svg import line_chart

BENCH_HEADER = ("size,tokens,satmamba_flops,vit_b_flops,vit_l_flops,"
                "seconds,peak_rss_bytes,failed")


def linear_fit_r2(xs, ys) -> float:
    """R^2 of the least-squares line through (xs, ys)."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    a, b = np.polyfit(xs, ys, 1)
    resid = ys - (a * xs + b)
    ss_res = float((resid ** 2).sum())
    ss_tot = float(((ys - ys.mean()) ** 2).sum())
    return 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0


def _timed_forward(cfg: ModelConfig, params, image, repeats: int) -> float:
    times = []
    rows = image.shape[1] // cfg.patch_size
    cols = image.shape[2] // cfg.patch_size
    with no_grad():
        for _ in range(repeats):
            t0 = time.perf_counter()
            latent, plan = encode(image, 0, cfg, params)
            decode(latent, plan, cfg, params, rows, cols)
            times.append(time.perf_counter() - t0)
    return float(np.median(times))


def benchmark_scaling(sizes, model_cfg: ModelConfig, out_dir,
                      repeats: int = 5, seed: int = 0) -> list:
    """Measured forward seconds per input size plus analytic curves;
    writes benchmark.csv and SVG plots, returns the rows as dicts."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    params = init_model(model_cfg, seed=seed)
    vit_b = ModelConfig(**VIT_BASE)
    vit_l = ModelConfig(**VIT_LARGE, head_dim=64)
    rng = Rng(seed).stream("bench")
    rows = []
    for size in sizes:
        if size % model_cfg.patch_size:
            raise ValueError(f"size {size} not divisible by patch "
                             f"{model_cfg.patch_size}")
        tokens = (size // model_cfg.patch_size) ** 2
        entry = {
            "size": size,
            "tokens": tokens,
            "satmamba_flops": flops_estimate(model_cfg, size, size, "satmamba"),
            "vit_b_flops": flops_estimate(vit_b, size, size, "vit-reference"),
            "vit_l_flops": flops_estimate(vit_l, size, size, "vit-reference"),
            "seconds": None,
            "peak_rss_bytes": None,
            "failed": 0,
        }
        try:
            image = rng.normal((model_cfg.channels, size, size),
                               dtype=np.float32)
            # warm-up once, then timed repeats
            _timed_forward(model_cfg, params, image, 1)
            entry["seconds"] = _timed_forward(model_cfg, params, image, repeats)
            entry["peak_rss_bytes"] = (
                resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024)
        except MemoryError:
            entry["failed"] = 1
        rows.append(entry)

    lines = [BENCH_HEADER]
    for e in rows:
        sec = "" if e["seconds"] is None else f"{e['seconds']:.9g}"
        rss = "" if e["peak_rss_bytes"] is None else str(e["peak_rss_bytes"])
        lines.append(f"{e['size']},{e['tokens']},{e['satmamba_flops']},"
                     f"{e['vit_b_flops']},{e['vit_l_flops']},{sec},{rss},"
                     f"{e['failed']}")
    (out / "benchmark.csv").write_text("\n".join(lines) + "\n")

    ok = [e for e in rows if not e["failed"]]
    xs = [e["size"] for e in rows]
    flops_svg = line_chart(
        {"this model": (xs, [e["satmamba_flops"] for e in rows]),
         "transformer-B ref": (xs, [e["vit_b_flops"] for e in rows]),
         "transformer-L ref": (xs, [e["vit_l_flops"] for e in rows])},
        "Analytic forward FLOPs vs input size", "input size (px)",
        "FLOPs (multiply-add)", log_y=True)
    (out / "benchmark_flops.svg").write_text(flops_svg)
    if ok:
        time_svg = line_chart(
            {"measured forward": ([e["tokens"] for e in ok],
                                  [e["seconds"] for e in ok])},
            "Measured forward time vs sequence length", "tokens",
            "seconds")
        (out / "benchmark_time.svg").write_text(time_svg)
    return rows


def bench_kernels(lengths, out_dir, heads=8, head_dim=64, state_dim=64,
                  chunk_size=64, repeats: int = 3, seed: int = 1) -> list:
    """Wall time of the chunked hot path on the active backend vs the
    pure-python chunked fallback vs the sequential oracle."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for length in lengths:
        r = Rng(seed)
        x = Tensor(r.normal((length, heads, head_dim), dtype=np.float32))
        co = SsmCoeffs(
            a_log=Tensor(r.uniform((heads,), dtype=np.float32) + 0.2),
            B=Tensor(r.normal((length, state_dim), dtype=np.float32)),
            C=Tensor(r.normal((length, state_dim), dtype=np.float32)),
            D=Tensor(r.normal((heads,), dtype=np.float32)),
            delta=Tensor(r.uniform((length, heads), dtype=np.float32) * 0.2 + 0.01),
        )
        a_eff = -np.exp(co.a_log.data)

        def time_it(fn):
            fn()
            best = np.inf
            for _ in range(repeats):
                t0 = time.perf_counter()
                fn()
                best = min(best, time.perf_counter() - t0)
            return best

        timings = {
            f"chunked[{_kernels.BACKEND}]":
                time_it(lambda: scan_chunked(x, co, chunk_size)),
            "chunked[python]":
                time_it(lambda: _kernels.chunk_ref.chunk_fwd(
                    x.data, a_eff, co.B.data, co.C.data, co.D.data,
                    co.delta.data, chunk_size)),
            "sequential": time_it(lambda: scan_sequential(x, co)),
        }
        for name, secs in timings.items():
            rows.append({"L": length, "impl": name, "seconds": secs})

    lines = ["L,impl,seconds"] + [f"{r['L']},{r['impl']},{r['seconds']:.9g}"
                                  for r in rows]
    (out / "kernels.csv").write_text("\n".join(lines) + "\n")
    impls = sorted({r["impl"] for r in rows})
    series = {impl: ([r["L"] for r in rows if r["impl"] == impl],
                     [r["seconds"] for r in rows if r["impl"] == impl])
              for impl in impls}
    (out / "kernels.svg").write_text(line_chart(
        series, "Selective-scan kernel timings", "sequence length",
        "seconds", log_y=True))
    return rows
