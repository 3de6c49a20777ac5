"""Config-driven experiment runners that write plot-ready CSV/JSON artifacts.

Every experiment resolves a single JSON config, writes its data files plus a
manifest (config echo, content hashes, wall clock), and is byte-identical
when re-run from the echoed config.
"""

import csv
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fd_protocol, metrics
from .geometry import (DegeneratePartitionError, load_csv, make_circle_dataset,
                       make_schedule, partition_classes)
from .metrics import (GapCurve, IdentityFeatures, RandomLinearFeatures, gap_curve,
                      gap_grid, ladder_metric, recon_error_per_point, relative_gap,
                      save_truncation_csv, truncated_gap_comparison)
from .predictors import ConditionalDenoiser, PredictorSpec
from .sampling import heun_sample, memorization_check, save_trajectories_csv

EXPERIMENTS = ("gap-curve", "gap-grid", "flow-field", "delta-sweep", "density-sweep",
               "granularity-sweep", "guidance-sweep", "ladder", "truncation-compare",
               "fd-protocol")


class ConfigError(ValueError):
    """The experiment config is malformed or inconsistent."""


@dataclass
class ExperimentConfig:
    """Resolved experiment description (one JSON document)."""

    experiment: str
    seed: int
    dataset: dict = field(default_factory=dict)
    predictor: dict = field(default_factory=lambda: {"kind": "optimal"})
    schedule: dict = field(default_factory=dict)
    sigmas: list | None = None
    deltas: list = field(default_factory=list)
    n_values: list = field(default_factory=list)
    k_values: list = field(default_factory=list)
    weights: list = field(default_factory=list)
    stop_sigmas: list = field(default_factory=list)
    sigma: float | None = None
    bounds: list | None = None
    resolution: int = 200
    n_noise_draws: int = 64
    n_samples: int = 256
    n_replicates: int = 1
    n_trajectories: int = 0
    denominator: str = "train"
    partition: dict = field(default_factory=dict)
    feature: dict = field(default_factory=lambda: {"kind": "identity"})
    ladder_kinds: list = field(default_factory=lambda: list(metrics.LADDER_KINDS))
    fd: dict = field(default_factory=dict)
    out_dir: str | None = None

    KEYS = None  # filled in below

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(doc) - cls.KEYS
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        if "experiment" not in doc:
            raise ConfigError("config needs an 'experiment' field")
        if "seed" not in doc:
            raise ConfigError("config needs a 'seed' field")
        return cls(**doc)

    @classmethod
    def from_file(cls, path):
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
        # a manifest is also accepted: re-run its echoed config
        if "config" in doc and "outputs" in doc:
            doc = doc["config"]
        return cls.from_dict(doc)

    def to_dict(self):
        doc = {}
        for name in sorted(self.KEYS):
            doc[name] = getattr(self, name)
        return doc


ExperimentConfig.KEYS = frozenset(ExperimentConfig.__dataclass_fields__) - {"KEYS"}


def validate(config: ExperimentConfig):
    """Static feasibility report; returns a list of violation strings."""
    violations = []
    if config.experiment not in EXPERIMENTS:
        violations.append(f"unknown experiment {config.experiment!r}; "
                          f"expected one of {', '.join(EXPERIMENTS)}")
    sched = config.schedule
    sigma_min = sched.get("sigma_min", 0.002)
    sigma_max = sched.get("sigma_max", 28.0)
    if not 0 < sigma_min < sigma_max:
        violations.append(f"schedule violation: need 0 < sigma_min < sigma_max, "
                          f"got ({sigma_min}, {sigma_max})")
    if sched.get("n_steps", 32) < 2:
        violations.append("schedule violation: n_steps must be >= 2")
    ds = config.dataset
    n_per_split = ds.get("n_per_split", 16)
    if "csv" not in ds and n_per_split < 2:
        violations.append("dataset violation: n_per_split must be >= 2")
    if "csv" not in ds and ds.get("radius", 12.0) <= 0:
        violations.append("dataset violation: radius must be > 0")
    k = config.partition.get("k")
    if k is not None and k > n_per_split:
        violations.append(f"degenerate-partition: k={k} exceeds {n_per_split} train points")
    if config.experiment == "granularity-sweep":
        for kk in config.k_values:
            if kk > n_per_split:
                violations.append(f"degenerate-partition: k={kk} exceeds "
                                  f"{n_per_split} train points")
    sweep_field = {"delta-sweep": "deltas", "density-sweep": "n_values",
                   "granularity-sweep": "k_values", "guidance-sweep": "weights",
                   "truncation-compare": "stop_sigmas"}.get(config.experiment)
    if sweep_field and not getattr(config, sweep_field):
        violations.append(f"{config.experiment} needs a non-empty '{sweep_field}' list")
    if config.experiment in ("gap-grid",) and config.sigma is None:
        violations.append("gap-grid needs a 'sigma' value")
    if config.denominator not in ("train", "val"):
        violations.append(f"denominator must be 'train' or 'val', got {config.denominator!r}")
    if config.experiment == "fd-protocol":
        for key in ("generated", "train_pool"):
            if key not in config.fd:
                violations.append(f"fd-protocol needs fd.{key}")
    return violations


# --------------------------------------------------------------------------
# resolution helpers


def _resolve_dataset(config, n_per_split=None):
    ds = config.dataset
    if "csv" in ds:
        return load_csv(ds["csv"])
    return make_circle_dataset(
        n_per_split=n_per_split or ds.get("n_per_split", 16),
        radius=ds.get("radius", 12.0),
        mode=ds.get("mode", "symmetric"),
        seed=ds.get("seed", config.seed))


def _resolve_schedule(config):
    s = config.schedule
    return make_schedule(s.get("sigma_min", 0.002), s.get("sigma_max", 28.0),
                         s.get("rho", 7.0), s.get("n_steps", 32))


def _resolve_sigmas(config, schedule):
    return np.asarray(config.sigmas, dtype=float) if config.sigmas else schedule.sigmas


def _resolve_feature(config, dataset):
    f = config.feature
    kind = f.get("kind", "identity")
    if kind == "identity":
        return IdentityFeatures().fit(dataset.points)
    if kind == "random-linear":
        return RandomLinearFeatures(f.get("out_dim", 8), f.get("seed", 0)).fit(dataset.points)
    if kind == "external-file":
        return metrics.ExternalFeatures(fd_protocol.load_features(f["path"]).vectors).fit()
    raise ConfigError(f"unknown feature kind {kind!r}")


def _resolve_predictor(config, dataset, partition=None, **overrides):
    doc = dict(config.predictor)
    doc.update({k: v for k, v in overrides.items() if v is not None})
    spec = PredictorSpec.from_dict(doc)
    return spec, spec.build(dataset, partition)


def _float_tag(value):
    return repr(float(value))


class _Writer:
    """Collects written files and hashes them into the manifest."""

    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.files = []

    def path(self, name):
        self.files.append(name)
        return self.out_dir / name

    def write_json(self, name, payload):
        with open(self.path(name), "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def manifest(self, config, wall_clock):
        outputs = []
        for name in self.files:
            data = (self.out_dir / name).read_bytes()
            outputs.append({"path": name, "sha256": hashlib.sha256(data).hexdigest(),
                            "bytes": len(data)})
        return {"config": config.to_dict(), "outputs": outputs,
                "wall_clock_s": wall_clock}


# --------------------------------------------------------------------------
# experiment bodies


def _curve_with_replicates(build_curve, n_replicates, base_seed):
    """Run a gap-curve builder across replicate seeds; returns curves + peaks."""
    curves = [build_curve(base_seed + 1000 * r) for r in range(n_replicates)]
    peaks = np.array([c.peak_gap for c in curves])
    peak_sigmas = np.array([c.peak_sigma for c in curves])
    summary = {"peak_gap_mean": float(peaks.mean()),
               "peak_gap_stderr": float(peaks.std(ddof=1) / np.sqrt(len(peaks)))
               if len(peaks) > 1 else 0.0,
               "peak_sigma_mean": float(peak_sigmas.mean()),
               "peak_sigma_stderr": float(peak_sigmas.std(ddof=1) / np.sqrt(len(peak_sigmas)))
               if len(peak_sigmas) > 1 else 0.0,
               "peak_gaps": peaks.tolist(), "peak_sigmas": peak_sigmas.tolist()}
    return curves, summary


def class_conditional_gap_curve(dataset, partition, delta, sigmas, n_noise_draws=64,
                                seed=0, denominator="train"):
    """Gap curve of a class-conditional model: each point is denoised by the
    predictor restricted to its own class, errors averaged over all points."""
    labels = partition.labels_for(dataset)
    train_labels = labels[dataset.train_mask]
    val_labels = labels[~dataset.train_mask]
    denoisers = {c: ConditionalDenoiser(c, delta).fit(dataset.train_points, train_labels)
                 for c in range(partition.k)}
    sigmas = np.asarray(sigmas, dtype=float)
    children = np.random.SeedSequence(seed).spawn(len(sigmas) * partition.k)
    e_train = np.zeros(len(sigmas))
    e_val = np.zeros(len(sigmas))
    for i, sigma in enumerate(sigmas):
        for c in range(partition.k):
            child = children[i * partition.k + c]
            yt = dataset.train_points[train_labels == c]
            yv = dataset.val_points[val_labels == c]
            e_train[i] += recon_error_per_point(denoisers[c], yt, sigma,
                                                n_noise_draws, child).sum()
            if len(yv):
                e_val[i] += recon_error_per_point(denoisers[c], yv, sigma,
                                                  n_noise_draws, child).sum()
    e_train /= dataset.n_train
    e_val /= dataset.n_val
    gap = relative_gap(e_train, e_val, denominator)
    return GapCurve(sigmas, e_train, e_val, gap, denominator)


def _run_gap_curve(config, writer):
    dataset = _resolve_dataset(config)
    schedule = _resolve_schedule(config)
    sigmas = _resolve_sigmas(config, schedule)
    _, denoiser = _resolve_predictor(config, dataset)
    curve = gap_curve(denoiser, dataset, sigmas, config.n_noise_draws,
                      config.seed, config.denominator)
    curve.save_csv(writer.path("gap_curve.csv"))
    writer.write_json("gap_curve.json", {
        "peak_gap": curve.peak_gap, "peak_sigma": curve.peak_sigma,
        "denominator": curve.denominator})


def _run_gap_grid(config, writer):
    dataset = _resolve_dataset(config)
    _, denoiser = _resolve_predictor(config, dataset)
    radius = dataset.radius or float(np.abs(dataset.points).max())
    bounds = config.bounds or [[-1.5 * radius, 1.5 * radius], [-1.5 * radius, 1.5 * radius]]
    bounds = [[float(b) for b in side] for side in bounds]
    grid = gap_grid(denoiser, dataset, config.sigma, bounds, config.resolution,
                    config.n_noise_draws, config.seed)
    grid.save_csv(writer.path("gap_grid.csv"))
    writer.write_json("gap_grid.json", {
        "sigma": grid.sigma, "e_train": grid.e_train, "bounds": bounds,
        "resolution": grid.resolution, "area_le_half": grid.area_le_half})


def _run_flow_field(config, writer):
    dataset = _resolve_dataset(config)
    schedule = _resolve_schedule(config)
    _, denoiser = _resolve_predictor(config, dataset)
    sigmas = config.sigmas or [28.0, 2.8, 0.63]
    radius = dataset.radius or float(np.abs(dataset.points).max())
    bounds = config.bounds or [[-1.5 * radius, 1.5 * radius], [-1.5 * radius, 1.5 * radius]]
    res = config.resolution
    (x0, x1), (y0, y1) = bounds
    cx = x0 + (np.arange(res) + 0.5) * (x1 - x0) / res
    cy = y0 + (np.arange(res) + 0.5) * (y1 - y0) / res
    nodes = np.stack(np.meshgrid(cx, cy, indexing="ij"), axis=-1).reshape(-1, 2)
    for sigma in sigmas:
        pred = denoiser.predict(nodes, float(sigma))
        err = np.linalg.norm(pred - nodes, axis=1)
        path = writer.path(f"field_sigma_{_float_tag(sigma)}.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x0", "x1", "pred0", "pred1", "err_norm"])
            for node, p, e in zip(nodes, pred, err):
                w.writerow([repr(float(v)) for v in (*node, *p, e)])
    if config.n_trajectories:
        trajectories = [heun_sample(denoiser, schedule, config.seed + i, dim=dataset.dim)
                        for i in range(config.n_trajectories)]
        save_trajectories_csv(trajectories, writer.path("trajectories.csv"))
    writer.write_json("flow_field.json", {"sigmas": [float(s) for s in sigmas],
                                          "bounds": bounds, "resolution": res})


def _run_delta_sweep(config, writer):
    dataset = _resolve_dataset(config)
    schedule = _resolve_schedule(config)
    sigmas = _resolve_sigmas(config, schedule)
    summary = {}
    for delta in config.deltas:
        _, denoiser = _resolve_predictor(config, dataset, kind="error_prone", delta=delta)
        curves, stats = _curve_with_replicates(
            lambda s: gap_curve(denoiser, dataset, sigmas, config.n_noise_draws,
                                s, config.denominator),
            config.n_replicates, config.seed)
        curves[0].save_csv(writer.path(f"gap_curve_delta_{_float_tag(delta)}.csv"))
        summary[_float_tag(delta)] = {
            "peak_gap": curves[0].peak_gap, "peak_sigma": curves[0].peak_sigma, **stats}
    writer.write_json("summary.json", summary)


def _run_density_sweep(config, writer):
    schedule = _resolve_schedule(config)
    sigmas = _resolve_sigmas(config, schedule)
    summary = {}
    for n in config.n_values:
        dataset = _resolve_dataset(config, n_per_split=int(n))
        _, denoiser = _resolve_predictor(config, dataset)
        curves, stats = _curve_with_replicates(
            lambda s: gap_curve(denoiser, dataset, sigmas, config.n_noise_draws,
                                s, config.denominator),
            config.n_replicates, config.seed)
        curves[0].save_csv(writer.path(f"gap_curve_n_{int(n)}.csv"))
        summary[str(int(n))] = {
            "peak_gap": curves[0].peak_gap, "peak_sigma": curves[0].peak_sigma, **stats}
    writer.write_json("summary.json", summary)


def _run_granularity_sweep(config, writer):
    dataset = _resolve_dataset(config)
    schedule = _resolve_schedule(config)
    sigmas = _resolve_sigmas(config, schedule)
    delta = float(config.predictor.get("delta", 0.0))
    method = config.partition.get("method", "angular-sector")
    summary = {}
    for k in config.k_values:
        try:
            partition = partition_classes(dataset, int(k), method,
                                          config.partition.get("seed", config.seed))
        except DegeneratePartitionError as exc:
            raise ConfigError(f"granularity-sweep k={k}: {exc}") from exc
        curves, stats = _curve_with_replicates(
            lambda s: class_conditional_gap_curve(dataset, partition, delta, sigmas,
                                                  config.n_noise_draws, s,
                                                  config.denominator),
            config.n_replicates, config.seed)
        curves[0].save_csv(writer.path(f"gap_curve_k_{int(k)}.csv"))
        summary[str(int(k))] = {
            "peak_gap": curves[0].peak_gap, "peak_sigma": curves[0].peak_sigma, **stats}
    writer.write_json("summary.json", summary)


def _run_guidance_sweep(config, writer):
    dataset = _resolve_dataset(config)
    schedule = _resolve_schedule(config)
    sigmas = _resolve_sigmas(config, schedule)
    base = dict(config.predictor)
    if base.get("kind", "guided") != "guided":
        raise ConfigError("guidance-sweep needs a guided predictor spec")
    summary = {}
    for w in config.weights:
        doc = dict(base)
        doc["weight"] = float(w)
        spec = PredictorSpec.from_dict(doc)
        denoiser = spec.build(dataset)
        curves, stats = _curve_with_replicates(
            lambda s: gap_curve(denoiser, dataset, sigmas, config.n_noise_draws,
                                s, config.denominator),
            config.n_replicates, config.seed)
        curves[0].save_csv(writer.path(f"gap_curve_w_{_float_tag(w)}.csv"))
        summary[_float_tag(w)] = {
            "peak_gap": curves[0].peak_gap, "peak_sigma": curves[0].peak_sigma, **stats}
    writer.write_json("summary.json", summary)


def _run_ladder(config, writer):
    dataset = _resolve_dataset(config)
    schedule = _resolve_schedule(config)
    _, denoiser = _resolve_predictor(config, dataset)
    feature = _resolve_feature(config, dataset)
    sigma = config.sigma
    if sigma is None:
        curve = gap_curve(denoiser, dataset, schedule.sigmas, config.n_noise_draws,
                          config.seed, config.denominator)
        sigma = curve.peak_sigma  # reconstruction metrics sit at the gap peak
    table = {}
    for kind in config.ladder_kinds:
        result = ladder_metric(kind, denoiser, dataset, feature=feature, sigma=float(sigma),
                               schedule=schedule, n=config.n_samples, seed=config.seed,
                               denominator=config.denominator)
        table[kind] = {"m_train": result.m_train, "m_val": result.m_val, "gap": result.gap}
    writer.write_json("ladder.json", {"sigma": float(sigma),
                                      "denominator": config.denominator, "metrics": table})


def _run_truncation_compare(config, writer):
    dataset = _resolve_dataset(config)
    schedule = _resolve_schedule(config)
    _, denoiser = _resolve_predictor(config, dataset)
    feature = _resolve_feature(config, dataset)
    rows = truncated_gap_comparison(denoiser, dataset, schedule, config.stop_sigmas,
                                    n=config.n_samples, seed=config.seed, feature=feature,
                                    denominator=config.denominator)
    save_truncation_csv(rows, writer.path("truncation_compare.csv"))
    writer.write_json("truncation_compare.json", {
        "stop_sigmas": [r.sigma for r in rows],
        "truncated_gaps": [r.truncated_gap for r in rows],
        "rfd_gaps": [r.rfd_gap for r in rows]})


def _run_fd_protocol(config, writer):
    fd = config.fd
    generated = fd_protocol.load_features(fd["generated"])
    train_pool = fd_protocol.load_features(fd["train_pool"])
    val_set = fd_protocol.load_features(fd["val"]) if "val" in fd else None
    reference = val_set if val_set is not None else train_pool
    plan = fd_protocol.make_plan(reference, fd.get("n_subsets", 15), seed=config.seed,
                                 subset_size=fd.get("subset_size"),
                                 uniform=fd.get("uniform_prior", False))
    subsets = fd_protocol.draw_subsets(train_pool, plan)
    report = fd_protocol.protocol_fd(generated, subsets)
    payload = {"plan": {"n_subsets": plan.n_subsets, "subset_size": plan.subset_size,
                        "class_prior": {str(c): m for c, m in sorted(plan.class_prior.items())},
                        "seed": plan.seed},
               "pool_hashes": {"generated": generated.id, "train_pool": train_pool.id},
               "train": report.to_dict()}
    if val_set is not None:
        payload["pool_hashes"]["val"] = val_set.id
        payload["val"] = fd_protocol.protocol_fd(generated, [val_set]).to_dict()
        if plan.n_subsets >= 2:
            baseline = fd_protocol.baseline_mismatch(train_pool, val_set, plan)
            payload["baseline"] = baseline.to_dict()
    writer.write_json("fd_report.json", payload)


_RUNNERS = {
    "gap-curve": _run_gap_curve,
    "gap-grid": _run_gap_grid,
    "flow-field": _run_flow_field,
    "delta-sweep": _run_delta_sweep,
    "density-sweep": _run_density_sweep,
    "granularity-sweep": _run_granularity_sweep,
    "guidance-sweep": _run_guidance_sweep,
    "ladder": _run_ladder,
    "truncation-compare": _run_truncation_compare,
    "fd-protocol": _run_fd_protocol,
}


def run(config: ExperimentConfig, out_dir=None, threads=None):
    """Execute the experiment and write artifacts plus manifest.json.

    Returns the manifest dict. ``threads`` is accepted for interface
    stability and recorded; the numeric kernels are vectorized in-process.
    """
    violations = validate(config)
    if violations:
        raise ConfigError("; ".join(violations))
    writer = _Writer(out_dir or config.out_dir or ".")
    start = time.perf_counter()
    _RUNNERS[config.experiment](config, writer)
    manifest = writer.manifest(config, wall_clock=time.perf_counter() - start)
    if threads is not None:
        manifest["threads"] = int(threads)
    with open(writer.out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def run_memorization(dataset, schedule, spec, n_seeds=256, tol=None):
    """Convenience wrapper measuring the memorized-endpoint fraction."""
    denoiser = spec.build(dataset)
    if tol is None:
        if dataset.radius is None:
            raise ValueError("tol is required for datasets without a radius")
        tol = 1e-3 * dataset.radius
    return memorization_check(denoiser, schedule, n_seeds, dataset.train_points, tol)
