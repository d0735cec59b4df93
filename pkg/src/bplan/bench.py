"""Benchmark harness: goal-biased RRT* against bottleneck-guided RRT* per scene family."""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import astuple, dataclass

import numpy as np

from .errors import EmptyInput
from .labeling import select_bottleneck_labels
from .occupancy import build_map
from .planner import BASELINE, BOTTLENECK, plan
from .rng import child_seed
from .scene import FAMILIES, make_scene, sample_query

MODES = ("baseline", "bottleneck_oracle", "bottleneck_learned")
CSV_HEADER = ("family", "scene_seed", "planner", "run_seed", "tree_size", "planning_time_s", "success")
# no time limit in the benchmark protocol: the cap only guards against runaway runs
BENCH_MAX_ITERATIONS = 2_000_000


@dataclass(frozen=True)
class TrialRecord:
    family: str
    scene_seed: int
    planner: str
    run_seed: int
    tree_size: int
    planning_time: float
    success: bool

    def same_outcome(self, other):
        """Equality ignoring wall-clock time."""
        a, b = astuple(self), astuple(other)
        return a[:5] + a[6:] == b[:5] + b[6:]


def _cycle(args):
    family, cycle, modes, net, seed, fixed_scene, baseline_cfg, bottleneck_cfg = args
    fam_id = FAMILIES.index(family)
    scene_seed = child_seed(seed, fam_id, 0 if fixed_scene else cycle)
    run_seed = child_seed(seed, fam_id, cycle, 1)
    scene = make_scene(family, scene_seed)
    omap = build_map(scene)
    query = sample_query(scene, omap, scene_seed)
    out = []
    for mode in modes:
        if mode == "baseline":
            labels, cfg = (), baseline_cfg
        elif mode == "bottleneck_oracle":
            # labels from a baseline solution on an independent seed
            ref = plan(omap, query, (), baseline_cfg.with_(seed=child_seed(seed, fam_id, cycle, 2)))
            labels = select_bottleneck_labels(ref.path, omap) if ref.success else ()
            cfg = bottleneck_cfg
        elif mode == "bottleneck_learned":
            if net is None:
                raise ValueError("bottleneck_learned needs trained network weights")
            from .neuralnet.predict import predict_bottlenecks
            labels, cfg = list(predict_bottlenecks(net, omap, query, scene.bounds)), bottleneck_cfg
        else:
            raise ValueError(f"unknown planner mode {mode!r}")
        res = plan(omap, query, labels, cfg.with_(seed=run_seed))
        out.append(TrialRecord(family, scene_seed, mode, run_seed, res.tree_size, res.wall_time, res.success))
    return out


def run_benchmark(families=FAMILIES, n_cycles=20, modes=MODES[:2], net=None, seed=0,
                  fixed_scene=False, jobs=1, baseline_config=BASELINE, bottleneck_config=BOTTLENECK):
    """Records ordered by (family, cycle, mode); every mode in a cycle shares scene, query and run seed."""
    if n_cycles < 1:
        raise ValueError("n_cycles must be >= 1")
    base = baseline_config.with_(max_iterations=max(baseline_config.max_iterations, BENCH_MAX_ITERATIONS))
    bott = bottleneck_config.with_(max_iterations=max(bottleneck_config.max_iterations, BENCH_MAX_ITERATIONS))
    tasks = [(f, c, tuple(modes), net, seed, fixed_scene, base, bott) for f in families for c in range(n_cycles)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_cycle, tasks))
    else:
        chunks = [_cycle(t) for t in tasks]
    return [r for chunk in chunks for r in chunk]


# -- aggregation ---------------------------------------------------------

@dataclass(frozen=True)
class Stat:
    mean: float
    median: float
    std: float
    n: int


def _stat(values):
    v = np.asarray(values, dtype=float)
    if len(v) == 0:
        return Stat(math.nan, math.nan, math.nan, 0)
    return Stat(float(v.mean()), float(np.median(v)), float(v.std()), len(v))


def improvement(base, new):
    """Percentage reduction ``100 (base - new) / base``."""
    return 100.0 * (base - new) / base if base else math.nan


@dataclass
class Summary:
    tree_size: dict  # (family, planner) -> Stat
    planning_time: dict
    success_rate: dict
    improvements: dict  # (family, planner) -> {"tree_size": %, "planning_time": %} on means
    median_improvements: dict  # same, on medians

    @property
    def keys(self):
        return list(self.tree_size)


def summarize(records):
    if not records:
        raise EmptyInput("no benchmark records")
    groups = {}
    for r in records:
        groups.setdefault((r.family, r.planner), []).append(r)
    tree, time_, rate = {}, {}, {}
    for key, rs in groups.items():
        ok = [r for r in rs if r.success]
        tree[key] = _stat([r.tree_size for r in ok])
        time_[key] = _stat([r.planning_time for r in ok])
        rate[key] = len(ok) / len(rs)
    imp, med = {}, {}
    for (family, planner) in groups:
        if planner == "baseline" or (family, "baseline") not in groups:
            continue
        b = (family, "baseline")
        k = (family, planner)
        imp[k] = {"tree_size": improvement(tree[b].mean, tree[k].mean),
                  "planning_time": improvement(time_[b].mean, time_[k].mean)}
        med[k] = {"tree_size": improvement(tree[b].median, tree[k].median),
                  "planning_time": improvement(time_[b].median, time_[k].median)}
    return Summary(tree, time_, rate, imp, med)


# -- output --------------------------------------------------------------

def emit_csv(records):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in records:
        w.writerow([r.family, r.scene_seed, r.planner, r.run_seed, r.tree_size,
                    repr(float(r.planning_time)), str(r.success).lower()])
    return buf.getvalue()


def parse_csv(text):
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise ValueError("unexpected CSV header")
    return [TrialRecord(f, int(s), p, int(rs), int(t), float(pt), ok == "true")
            for f, s, p, rs, t, pt, ok in rows[1:]]


def summary_table(summary):
    lines = ["family,planner,n,tree_mean,tree_median,tree_std,time_mean_s,time_median_s,time_std_s,"
             "success_rate,tree_improvement_pct,time_improvement_pct"]
    for key in summary.keys:
        t, s = summary.tree_size[key], summary.planning_time[key]
        imp = summary.improvements.get(key, {})
        lines.append(",".join([key[0], key[1], str(t.n)] + [f"{v:.6g}" for v in (
            t.mean, t.median, t.std, s.mean, s.median, s.std, summary.success_rate[key],
            imp.get("tree_size", math.nan), imp.get("planning_time", math.nan))]))
    return "\n".join(lines) + "\n"


_COLORS = {"baseline": "#4c72b0", "bottleneck_oracle": "#dd8452", "bottleneck_learned": "#55a868"}


def emit_svg_bars(summary, width=720, panel_height=260):
    """Two grouped bar panels (mean tree size, mean planning time): one group per family."""
    families = list(dict.fromkeys(k[0] for k in summary.keys))
    planners = list(dict.fromkeys(k[1] for k in summary.keys))
    left, top, gap = 70, 30, 50
    height = 2 * (panel_height + gap) + 30
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="12">']
    for p, (metric, label) in enumerate((("tree_size", "mean tree size"),
                                          ("planning_time", "mean planning time (s)"))):
        table = getattr(summary, metric)
        y0 = top + p * (panel_height + gap)
        vmax = max((table[k].mean for k in table if not math.isnan(table[k].mean)), default=1.0) or 1.0
        out.append(f'<text x="{left}" y="{y0 - 8}" font-weight="bold">{label}</text>')
        out.append(f'<line x1="{left}" y1="{y0 + panel_height}" x2="{width - 10}" '
                   f'y2="{y0 + panel_height}" stroke="black"/>')
        out.append(f'<text x="{left - 6}" y="{y0 + 10}" text-anchor="end">{vmax:.3g}</text>')
        group_w = (width - left - 10) / max(len(families), 1)
        bar_w = group_w * 0.8 / max(len(planners), 1)
        for i, fam in enumerate(families):
            gx = left + i * group_w + group_w * 0.1
            for j, pl in enumerate(planners):
                st = table.get((fam, pl))
                if st is None or math.isnan(st.mean):
                    continue
                h = panel_height * st.mean / vmax
                out.append(f'<rect x="{gx + j * bar_w:.1f}" y="{y0 + panel_height - h:.1f}" '
                           f'width="{bar_w * 0.9:.1f}" height="{h:.1f}" fill="{_COLORS.get(pl, "#888")}">'
                           f'<title>{fam} {pl}: {st.mean:.4g}</title></rect>')
            out.append(f'<text x="{gx + group_w * 0.4:.1f}" y="{y0 + panel_height + 16}" '
                       f'text-anchor="middle">{fam}</text>')
    for j, pl in enumerate(planners):
        x = left + j * 170
        out.append(f'<rect x="{x}" y="{height - 22}" width="12" height="12" fill="{_COLORS.get(pl, "#888")}"/>')
        out.append(f'<text x="{x + 16}" y="{height - 12}">{pl}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


__all__ = [
    "MODES", "CSV_HEADER", "TrialRecord", "run_benchmark", "Stat", "Summary", "summarize",
    "improvement", "emit_csv", "parse_csv", "summary_table", "emit_svg_bars",
]
