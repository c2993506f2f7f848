"""Experiment orchestration: variants, ablations, metrics, closed-loop runs.

The suite trains five model variants on identical data and splits:

  affine_sym          control-affine model with the mirror prior
  affine              control-affine model, no mirror prior
  affine_no_ws        affine without the seven wing-tap inputs
  unstructured        plain net on (observation, control)
  unstructured_no_ws  plain net without the wing-tap inputs

and reports wrench RMSE per evaluation speed, per-channel RMSE, inflation
under airspeed shift, and flaperon mirror residuals. Reports are written as
JSON (for tooling), CSV (for plotting), and an aligned text table.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import plant as plant_mod
from .allocator import TrackingConfig, TrackingLog, track_sequence
from .dynamics import (
    CONTROL_DIM,
    Control,
    DEFAULT_SIGNS,
    DynamicsTrainConfig,
    SymmetryConfig,
    WRENCH_DIM,
    block_split,
    eval_rmse,
    per_channel_rmse,
    symmetry_residual_norm,
    train_dynamics,
    train_unstructured,
)
from .plant import PlantParams, TunnelCondition

log = logging.getLogger(__name__)

VARIANTS = ("affine_sym", "affine", "affine_no_ws", "unstructured", "unstructured_no_ws")
OUT_ROOT_ENV = "AEROALLOC_OUT"
DEFAULT_OUT_ROOT = "aeroalloc_out"


def resolve_out_root(explicit: str | os.PathLike | None = None) -> Path:
    """Output root: explicit flag, else the environment override, else ./aeroalloc_out."""
    if explicit:
        return Path(explicit)
    env = os.environ.get(OUT_ROOT_ENV)
    return Path(env) if env else Path(DEFAULT_OUT_ROOT)


@dataclass
class ExperimentConfig:
    seed: int = 0
    variant: str = "affine_sym"
    hidden: tuple = (64, 64)
    epochs: int = 300
    batch_size: int = 256
    lr: float = 1e-3
    lambda_sym: float = 0.1
    delta: tuple = (0.5,) * WRENCH_DIM
    signs: tuple = DEFAULT_SIGNS
    lambda0: float = 0.01
    lambda1: float = 0.1
    train_speeds: tuple = (10.0,)
    test_speeds: tuple = (10.0, 14.0)
    gust_mode: str = "shedding"
    gust_amplitude: float = 0.4
    gust_yaw_deg: float = 0.0
    duration_s: float = 120.0
    holdout_fraction: float = 0.25
    # When set, the ablation suite also runs closed-loop tracking at this
    # speed per variant and records RMSSD in the report.
    closed_loop_speed: float | None = None

    def __post_init__(self) -> None:
        self.train_speeds = tuple(float(v) for v in self.train_speeds)
        self.test_speeds = tuple(float(v) for v in self.test_speeds)
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not self.train_speeds or not self.test_speeds:
            raise ValueError("train and test speed lists must be non-empty")

    def train_config(self, variant: str | None = None) -> DynamicsTrainConfig:
        variant = variant or self.variant
        if variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
        lam = self.lambda_sym if variant == "affine_sym" else 0.0
        return DynamicsTrainConfig(
            seed=self.seed,
            hidden=self.hidden,
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            sym=SymmetryConfig(signs=self.signs, lambda_sym=lam, delta=self.delta),
            wing_sensors=not variant.endswith("_no_ws"),
        )


def train_variant(variant: str, dataset, cfg: ExperimentConfig, history: list | None = None):
    """Train one named variant; all variants share the seed and data."""
    train_cfg = cfg.train_config(variant)
    if variant.startswith("unstructured"):
        return train_unstructured(dataset, train_cfg, history=history)
    return train_dynamics(dataset, train_cfg, history=history)


def rmssd(u_series) -> tuple[np.ndarray, float]:
    """Root mean square of successive differences, per input and averaged.

    A smoothness metric: constant series score 0, oscillating ones score the
    typical step size. Translation-invariant by construction.
    """
    if len(u_series) and isinstance(u_series[0], Control):
        mat = np.asarray([u.as_array() for u in u_series])
    else:
        mat = np.asarray(u_series, dtype=float)
    if mat.ndim != 2 or mat.shape[1] != CONTROL_DIM:
        raise ValueError(f"control series must be (n, {CONTROL_DIM})")
    if mat.shape[0] < 2:
        raise ValueError("need at least 2 steps to difference")
    diffs = np.diff(mat, axis=0)
    per_input = np.sqrt(np.mean(diffs**2, axis=0))
    return per_input, float(np.mean(per_input))


def closed_loop_metrics(tlog: TrackingLog) -> dict:
    """Summary block for one tracking log: smoothness, accuracy, saturation."""
    per_input, avg = rmssd(tlog.controls)
    return {
        "rmssd": {"per_input": per_input.tolist(), "average": avg},
        "tracking_rmse": tlog.tracking_rmse(),
        "clamped_fraction": float(np.mean(tlog.clamped)),
    }


def dataset_hash(*splits) -> str:
    """SHA-256 over the raw bytes of every array in every split, in order."""
    digest = hashlib.sha256()
    for split in splits:
        for arr in split:
            arr = np.ascontiguousarray(np.asarray(arr, dtype=float))
            digest.update(str(arr.shape).encode())
            digest.update(arr.tobytes())
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# Dataset plumbing
# ---------------------------------------------------------------------------


def _gust_spec(cfg: ExperimentConfig) -> dict:
    if cfg.gust_mode == "off":
        return {"mode": "off"}
    spec = {"mode": cfg.gust_mode, "amplitude": cfg.gust_amplitude}
    if cfg.gust_mode == "shear":
        spec["yaw_deg"] = cfg.gust_yaw_deg
    return spec


def _dynamics_protocol(cfg: ExperimentConfig, speed: float, name_suffix: str = "") -> dict:
    return {
        "kind": "dynamics",
        "name": f"dyn_va{speed:g}{name_suffix}",
        "speed": speed,
        "stage": "I",
        "duration_s": cfg.duration_s,
        "gust": _gust_spec(cfg),
    }


def generate_speed_datasets(
    cfg: ExperimentConfig,
    speeds,
    params: PlantParams,
    out_dir: str | Path,
    seed_offset: int = 0,
    name_suffix: str = "",
) -> dict:
    """One dynamics CSV per speed; returns {speed: loaded arrays}."""
    from .dynamics import load_dynamics_csv

    out = {}
    for i, speed in enumerate(speeds):
        paths = plant_mod.generate_dataset(
            _dynamics_protocol(cfg, speed, name_suffix),
            params,
            cfg.seed + seed_offset + i,
            out_dir,
        )
        out[float(speed)] = load_dynamics_csv(paths[0])
    return out


def _concat_datasets(datasets) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    obs = np.concatenate([d[0] for d in datasets])
    u = np.concatenate([d[1] for d in datasets])
    y = np.concatenate([d[2] for d in datasets])
    return obs, u, y


# ---------------------------------------------------------------------------
# Ablation suite
# ---------------------------------------------------------------------------


@dataclass
class MetricsReport:
    """Per-variant metrics on a shared split.

    Each variant entry carries aggregate and per-channel wrench RMSE,
    shift-inflation percentages, the flaperon mirror residual (affine models
    only), and, when the suite ran closed loop, RMSSD per control input with
    its average.
    """

    seed: int
    train_speeds: tuple
    split_hash: str
    variants: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "train_speeds": list(self.train_speeds),
            "split_hash": self.split_hash,
            "variants": self.variants,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MetricsReport":
        return cls(
            seed=int(doc["seed"]),
            train_speeds=tuple(doc["train_speeds"]),
            split_hash=str(doc["split_hash"]),
            variants=dict(doc["variants"]),
        )


def run_ablation_suite(
    cfg: ExperimentConfig, out_dir: str | Path, params: PlantParams | None = None
) -> MetricsReport:
    """Train every variant on identical data and evaluate across speeds.

    Writes suite_report.{json,csv,txt} under out_dir/reports and the generated
    datasets under out_dir/datasets. Every evaluation set is an independently
    generated run (fresh schedule and noise, offset seeds): in-distribution
    RMSE comes from fresh runs at the training speeds, and inflation is the
    relative RMSE increase of each other evaluation speed over that number.
    """
    params = params or PlantParams()
    out_dir = Path(out_dir)
    data_dir = out_dir / "datasets"
    report_dir = out_dir / "reports"
    report_dir.mkdir(parents=True, exist_ok=True)

    train_sets = generate_speed_datasets(cfg, cfg.train_speeds, params, data_dir)
    full_train = _concat_datasets([train_sets[s] for s in cfg.train_speeds])
    train_split, _ = block_split(full_train, cfg.holdout_fraction)

    eval_speeds = list(cfg.train_speeds)
    eval_speeds += [s for s in cfg.test_speeds if s not in cfg.train_speeds]
    eval_sets = generate_speed_datasets(
        cfg, eval_speeds, params, data_dir, seed_offset=1000, name_suffix="_eval"
    )
    in_dist_split = _concat_datasets([eval_sets[s] for s in cfg.train_speeds])
    split_hash = dataset_hash(train_split, *eval_sets.values())

    report = MetricsReport(seed=cfg.seed, train_speeds=cfg.train_speeds, split_hash=split_hash)
    for variant in VARIANTS:
        model = train_variant(variant, train_split, cfg)
        rmse_in = eval_rmse(model, in_dist_split)
        entry = {
            "rmse": {"in_dist": rmse_in},
            "per_channel_in_dist": per_channel_rmse(model, in_dist_split).tolist(),
            "inflation_pct": {},
        }
        for speed, eval_set in eval_sets.items():
            rmse_s = eval_rmse(model, eval_set)
            entry["rmse"][f"va{speed:g}"] = rmse_s
            if speed not in cfg.train_speeds:
                entry["inflation_pct"][f"va{speed:g}"] = 100.0 * (rmse_s - rmse_in) / rmse_in
        if not variant.startswith("unstructured"):
            entry["sym_residual"] = symmetry_residual_norm(model, in_dist_split[0])
        else:
            entry["sym_residual"] = None
        if cfg.closed_loop_speed is not None:
            tlog = closed_loop_run(model, cfg, cfg.closed_loop_speed, params=params)
            entry["closed_loop"] = closed_loop_metrics(tlog)
        report.variants[variant] = entry
        log.info("variant %s: in-dist rmse %.4f", variant, rmse_in)

    write_report_json(report, report_dir / "suite_report.json")
    write_report_csv(report, report_dir / "suite_report.csv")
    (report_dir / "suite_report.txt").write_text(format_report_text(report))
    return report


def write_report_json(report: MetricsReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), sort_keys=True, indent=1))


def load_report_json(path: str | Path) -> MetricsReport:
    return MetricsReport.from_dict(json.loads(Path(path).read_text()))


def write_report_csv(report: MetricsReport, path: str | Path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "metric", "key", "value"])
        for variant in sorted(report.variants):
            entry = report.variants[variant]
            for key in sorted(entry["rmse"]):
                writer.writerow([variant, "rmse", key, str(entry["rmse"][key])])
            for key in sorted(entry["inflation_pct"]):
                writer.writerow([variant, "inflation_pct", key, str(entry["inflation_pct"][key])])
            for i, val in enumerate(entry["per_channel_in_dist"]):
                writer.writerow([variant, "per_channel_rmse", f"ch{i}", str(val)])
            if entry.get("sym_residual") is not None:
                writer.writerow([variant, "sym_residual", "in_dist", str(entry["sym_residual"])])
            loop = entry.get("closed_loop")
            if loop:
                for i, val in enumerate(loop["rmssd"]["per_input"]):
                    writer.writerow([variant, "rmssd", f"u{i}", str(val)])
                writer.writerow([variant, "rmssd", "average", str(loop["rmssd"]["average"])])
                writer.writerow([variant, "tracking_rmse", "", str(loop["tracking_rmse"])])


def format_report_text(report: MetricsReport, compare=None) -> str:
    """Aligned table of the aggregate RMSE numbers.

    The aggregate pools newtons with newton meters, so treat it as a
    comparative figure between variants, not a physical error.
    """
    variants = list(compare) if compare else sorted(report.variants)
    missing = [v for v in variants if v not in report.variants]
    if missing:
        raise ValueError(f"variants not in report: {missing}")
    speed_keys = sorted(
        {k for v in variants for k in report.variants[v]["rmse"] if k != "in_dist"}
    )
    lines = [
        f"seed {report.seed}  train speeds {list(report.train_speeds)}  "
        f"split {report.split_hash[:12]}",
        "comparative aggregate wrench RMSE (N and N m pooled)",
        "",
    ]
    header = f"{'variant':<20}{'in_dist':>10}"
    for key in speed_keys:
        header += f"{key:>10}{'infl%':>9}"
    lines.append(header)
    for variant in variants:
        entry = report.variants[variant]
        row = f"{variant:<20}{entry['rmse']['in_dist']:>10.4f}"
        for key in speed_keys:
            row += f"{entry['rmse'].get(key, float('nan')):>10.4f}"
            row += f"{entry['inflation_pct'].get(key, float('nan')):>9.1f}"
        lines.append(row)
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Closed-loop runs
# ---------------------------------------------------------------------------


def make_target_sequence(
    params: PlantParams,
    speed: float,
    t: np.ndarray,
    seed: int,
    alpha_deg: np.ndarray | None = None,
    beta_deg: np.ndarray | None = None,
) -> np.ndarray:
    """Demanded wrench: the scheduled condition's own gust-free baseline plus
    slow lift and roll modulation.

    Riding the schedule baseline keeps the demanded deflections modest, so the
    allocator works all four surfaces without living on the actuator limits.
    """
    rng = np.random.default_rng(seed)
    alpha_deg = np.zeros(t.size) if alpha_deg is None else np.asarray(alpha_deg, dtype=float)
    beta_deg = np.zeros(t.size) if beta_deg is None else np.asarray(beta_deg, dtype=float)
    targets = np.empty((t.size, 6))
    for k in range(t.size):
        cond = TunnelCondition(speed, float(alpha_deg[k]), float(beta_deg[k]))
        targets[k], _ = plant_mod.true_affine_terms(cond, params)
    ref = abs(plant_mod.dynamic_pressure(speed, params) * params.wing_area * params.cl0)
    f1, f2 = rng.uniform(0.05, 0.1), rng.uniform(0.1, 0.18)
    ph1, ph2 = rng.uniform(0.0, 2.0 * np.pi, size=2)
    targets[:, 2] += 0.2 * ref * np.sin(2.0 * np.pi * f1 * t + ph1)
    targets[:, 3] += 0.05 * ref * params.span * np.sin(2.0 * np.pi * f2 * t + ph2)
    return targets


def closed_loop_run(
    model,
    cfg: ExperimentConfig,
    speed: float,
    tracking: TrackingConfig | None = None,
    params: PlantParams | None = None,
    seed: int | None = None,
) -> TrackingLog:
    """Track a seeded target sequence against the plant at one speed.

    The observation stream is regenerated each step from the plant with the
    previously applied command, so wing-tap feedback is closed-loop. Two runs
    with the same seed see identical conditions, targets, and sensor noise
    regardless of the model, which makes paired comparisons meaningful.
    """
    params = params or PlantParams()
    tracking = tracking or TrackingConfig(lambda0=cfg.lambda0, lambda1=cfg.lambda1)
    seed = cfg.seed if seed is None else seed
    rng_sched, rng_targets, rng_noise = [
        np.random.default_rng(int(c.generate_state(1)[0]))
        for c in np.random.SeedSequence(seed).spawn(3)
    ]
    protocol = {"stage": "I", "duration_s": cfg.duration_s, "dt": tracking.dt}
    t, alpha, beta = plant_mod.stage_schedule(protocol, params, rng_sched)
    gust = plant_mod.gust_from_spec(_gust_spec(cfg), speed, params)
    conds = [
        TunnelCondition(speed, float(alpha[k]), float(beta[k]), gust=gust, time=float(t[k]))
        for k in range(t.size)
    ]
    targets = make_target_sequence(
        params, speed, t, int(rng_targets.integers(2**32)), alpha_deg=alpha, beta_deg=beta
    )

    def observe(k: int, u_prev: Control):
        return plant_mod.make_observation(conds[k], u_prev, params, rng_noise)

    def achieved(k: int, u: Control):
        return plant_mod.true_wrench(conds[k], u, params, rng_noise)

    return track_sequence(model, targets, observe, tracking, achieved_fn=achieved)
