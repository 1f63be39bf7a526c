"""Phantoms, synthetic data, end-to-end experiments and noise studies.

Data are always generated on a fine mesh and inverted on a coarser one so the
discretization used for inversion never produced the data.
"""
from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .forward import ForwardModel, MeasurementSet, measure, pattern_set
from .inference import ChainConfig, LevelSetEvaluator, PosteriorSamples, run_chain, trace_extract
from .mesh import Mesh, generate_disk_mesh, project_field
from .prior import LevelSpec, MaternParams, build_covariance
from .reconstruct import ReconstructionBundle, accuracy_ratio, linf_error, reconstruct

__all__ = [
    "PhantomSpec",
    "ExperimentConfig",
    "ResultsBundle",
    "ExperimentError",
    "InverseCrimeError",
    "build_phantom",
    "synthesize_data",
    "prepare_data",
    "sample_posterior",
    "summarize",
    "run_experiment",
    "noise_study",
    "derive_seeds",
]

log = logging.getLogger(__name__)


class ExperimentError(RuntimeError):
    """A pipeline stage failed; ``stage`` names which one."""

    def __init__(self, stage, cause):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage


class InverseCrimeError(ValueError):
    pass


# -- phantoms -------------------------------------------------------------


def _inside(shape, pts):
    x, y = pts[:, 0], pts[:, 1]
    cx, cy = shape["center"]
    inside = (x - cx) ** 2 + (y - cy) ** 2 < shape["radius"] ** 2
    if shape.get("type", "disk") == "crescent":
        kx, ky = shape["cut_center"]
        inside &= (x - kx) ** 2 + (y - ky) ** 2 >= shape["cut_radius"] ** 2
    return inside


def _disk(x, y, r):
    return {"type": "disk", "center": [x, y], "radius": r}


_PRESETS = {
    # crescent: a disk with an offset disk removed
    "moon": dict(
        b_back=0.1,
        a_shapes=[{"type": "crescent", "center": [-0.1, 0.0], "radius": 0.5,
                   "cut_center": [0.15, 0.1], "cut_radius": 0.42}],
        b_shapes=None,
    ),
    "two_circles": dict(
        b_back=0.2, a_shapes=[_disk(-0.45, 0.0, 0.25), _disk(0.45, 0.0, 0.25)], b_shapes=None
    ),
    "separate": dict(
        b_back=0.1, a_shapes=[_disk(-0.4, 0.3, 0.25)], b_shapes=[_disk(0.35, -0.35, 0.25)]
    ),
}


@dataclass(frozen=True)
class PhantomSpec:
    """Bi-level phantom: foreground values inside the inclusion shapes.

    Shapes are dicts ``{"type": "disk", "center": [x, y], "radius": r}`` or
    ``{"type": "crescent", ..., "cut_center": [x, y], "cut_radius": r}``.
    """

    geometry: str = "two_circles"
    a_back: float = 1.0
    a_fore: float = 5.0
    b_back: float = 0.2
    b_fore: float = 1.0
    a_shapes: tuple = ()
    b_shapes: tuple = ()
    domain_radius: float = 1.0

    def __post_init__(self):
        for name in ("a_back", "a_fore", "b_back", "b_fore"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for s in tuple(self.a_shapes) + tuple(self.b_shapes):
            cx, cy = s["center"]
            if np.hypot(cx, cy) + s["radius"] >= self.domain_radius:
                raise ValueError(f"inclusion {s} is not inside the domain")
        object.__setattr__(self, "a_shapes", tuple(self.a_shapes))
        object.__setattr__(self, "b_shapes", tuple(self.b_shapes))

    @classmethod
    def preset(cls, geometry: str, a_back=1.0, fore_factor=5.0) -> "PhantomSpec":
        """The three reference geometries; ``b`` background follows the geometry."""
        if geometry not in _PRESETS:
            raise ValueError(f"unknown geometry {geometry!r}; choose from {sorted(_PRESETS)}")
        p = _PRESETS[geometry]
        b_shapes = p["b_shapes"] if p["b_shapes"] is not None else p["a_shapes"]
        return cls(geometry, a_back, fore_factor * a_back, p["b_back"],
                   fore_factor * p["b_back"], p["a_shapes"], b_shapes)

    def specs(self, eps=0.1) -> tuple[LevelSpec, LevelSpec]:
        return LevelSpec.bilevel(self.a_back, self.a_fore, eps), LevelSpec.bilevel(
            self.b_back, self.b_fore, eps
        )


def build_phantom(spec: PhantomSpec, mesh: Mesh):
    """Per-triangle ``(a, b)``: foreground where the centroid is in an inclusion."""
    c = mesh.centroids
    in_a = np.zeros(mesh.num_triangles, bool)
    for s in spec.a_shapes:
        in_a |= _inside(s, c)
    in_b = np.zeros(mesh.num_triangles, bool)
    for s in spec.b_shapes:
        in_b |= _inside(s, c)
    return np.where(in_a, spec.a_fore, spec.a_back), np.where(in_b, spec.b_fore, spec.b_back)


def synthesize_data(fine_mesh: Mesh, a, b, patterns, noise_level, seed) -> MeasurementSet:
    """Noisy element data with ``sigma = noise_level * RMS(clean data)``."""
    if noise_level < 0:
        raise ValueError("noise level must be non-negative")
    clean = measure(fine_mesh, a, b, patterns)
    sigma = noise_level * float(np.sqrt(np.mean(clean.data**2)))
    rng = np.random.default_rng(seed)
    y = clean.data + sigma * rng.standard_normal(clean.data.size) if sigma > 0 else clean.data.copy()
    return MeasurementSet(clean.patterns, y, sigma, clean.data)


# -- configuration --------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one experiment from a single seed.

    ``noise_level`` is relative: 0.02 means 2% of the RMS clean data.
    ``patterns`` names a pattern family (``"unit"`` or ``"adjacent"``) or is
    an explicit list of length-L rows. Unit patterns are the default because
    zero-sum patterns leave the absorption nearly invisible in the data.
    """

    phantom: PhantomSpec = field(default_factory=lambda: PhantomSpec.preset("two_circles"))
    radius: float = 1.0
    fine_elements: int = 2129
    coarse_elements: int = 549
    num_boundary_elements: int = 16
    gap_fraction: float = 0.25
    patterns: object = "unit"
    noise_level: float = 0.02
    matern_a: MaternParams = MaternParams(4.0, 0.3)
    matern_b: MaternParams = MaternParams(5.0, 0.3)
    mollify_eps: float = 0.1
    chain: ChainConfig = ChainConfig()
    quantiles: tuple = (0.15, 0.85)
    seed: int = 0
    output_dir: str | None = None
    allow_inverse_crime: bool = False

    def __post_init__(self):
        if self.noise_level < 0:
            raise ValueError("noise_level must be non-negative")
        if self.fine_elements == self.coarse_elements and not self.allow_inverse_crime:
            raise InverseCrimeError(
                "fine and coarse meshes coincide; set allow_inverse_crime to permit this"
            )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["phantom"]["a_shapes"] = list(d["phantom"]["a_shapes"])
        d["phantom"]["b_shapes"] = list(d["phantom"]["b_shapes"])
        d["quantiles"] = list(self.quantiles)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "phantom" in d:
            ph = d["phantom"]
            if isinstance(ph, str):
                d["phantom"] = PhantomSpec.preset(ph)
            elif set(ph) == {"geometry"}:
                d["phantom"] = PhantomSpec.preset(ph["geometry"])
            else:
                d["phantom"] = PhantomSpec(**ph)
        for key in ("matern_a", "matern_b"):
            if key in d and isinstance(d[key], dict):
                d[key] = MaternParams(**d[key])
        if "chain" in d and isinstance(d["chain"], dict):
            d["chain"] = ChainConfig(**d["chain"])
        if "quantiles" in d:
            d["quantiles"] = tuple(d["quantiles"])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def fine_mesh(self) -> Mesh:
        return generate_disk_mesh(self.radius, self.fine_elements,
                                  self.num_boundary_elements, self.gap_fraction)

    def coarse_mesh(self) -> Mesh:
        return generate_disk_mesh(self.radius, self.coarse_elements,
                                  self.num_boundary_elements, self.gap_fraction)

    def flux_patterns(self) -> np.ndarray:
        if isinstance(self.patterns, str):
            return pattern_set(self.patterns, self.num_boundary_elements)
        F = np.asarray(self.patterns, dtype=float)
        if F.ndim != 2 or F.shape[1] != self.num_boundary_elements:
            raise ValueError(f"patterns must have {self.num_boundary_elements} columns")
        return F


def derive_seeds(root: int, n: int) -> list[int]:
    """``n`` independent 32-bit seeds derived from one root seed."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(root).spawn(n)]


@dataclass
class ResultsBundle:
    reconstruction: ReconstructionBundle
    metrics: dict
    traces: dict
    timing: dict
    config: ExperimentConfig
    truth_a: np.ndarray = None
    truth_b: np.ndarray = None
    coarse_mesh: Mesh = None
    samples: PosteriorSamples = None
    data: MeasurementSet = None


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage name
        raise ExperimentError(name, exc) from exc


def prepare_data(config: ExperimentConfig):
    """Meshes, phantom on the fine mesh and noisy data generated there.

    Returns ``(fine, coarse, true_a, true_b, data)``.
    """
    noise_seed = derive_seeds(config.seed, 3)[0]
    fine = _stage("mesh", config.fine_mesh)
    coarse = _stage("mesh", config.coarse_mesh)
    if not config.allow_inverse_crime and (
        fine.num_triangles == coarse.num_triangles
        and np.array_equal(fine.vertices, coarse.vertices)
    ):
        raise InverseCrimeError("fine and coarse meshes are identical")
    patterns = _stage("synth", config.flux_patterns)
    true_a, true_b = _stage("phantom", build_phantom, config.phantom, fine)
    data = _stage("synth", synthesize_data, fine, true_a, true_b, patterns,
                  config.noise_level, noise_seed)
    return fine, coarse, true_a, true_b, data


def sample_posterior(config: ExperimentConfig, coarse: Mesh, data: MeasurementSet,
                     progress=None) -> PosteriorSamples:
    """Build both priors on the coarse mesh and run the chain."""
    chain_seed = derive_seeds(config.seed, 3)[1]
    specs = config.phantom.specs(config.mollify_eps)
    factors = _stage("prior", lambda: (build_covariance(coarse, config.matern_a),
                                       build_covariance(coarse, config.matern_b)))
    evaluator = LevelSetEvaluator(ForwardModel(coarse), specs[0], specs[1], data.patterns)
    return _stage("sample", run_chain, replace(config.chain, seed=chain_seed), data, coarse,
                  specs, factors, evaluator=evaluator, progress=progress)


def summarize(config: ExperimentConfig, fine: Mesh, coarse: Mesh, true_a, true_b,
              samples: PosteriorSamples, data: MeasurementSet, timing=None) -> ResultsBundle:
    """Reconstructions, metrics against the projected truth and two traces."""
    trace_seed = derive_seeds(config.seed, 3)[2]
    specs = config.phantom.specs(config.mollify_eps)
    recon = _stage("reconstruct", reconstruct, samples, specs, *config.quantiles)
    ta = project_field(fine, true_a, coarse)
    tb = project_field(fine, true_b, coarse)
    levels_a = (config.phantom.a_back, config.phantom.a_fore)
    levels_b = (config.phantom.b_back, config.phantom.b_fore)
    metrics = {
        "accuracy_a": accuracy_ratio(recon.method1_a, ta, levels_a),
        "accuracy_b": accuracy_ratio(recon.method1_b, tb, levels_b),
        "linf_a": linf_error(recon.method2_a, ta),
        "linf_b": linf_error(recon.method2_b, tb),
        "acceptance_rate": samples.acceptance_rate(),
        "final_delta": float(samples.delta_history[-1]),
        "noise_sigma": data.noise_sigma,
        "num_draws": len(samples),
    }
    rng = np.random.default_rng(trace_seed)
    tri = rng.integers(coarse.num_triangles, size=2)
    traces = {
        "u1": (int(tri[0]), trace_extract(samples, [tri[0]], "u1")[:, 0]),
        "u2": (int(tri[1]), trace_extract(samples, [tri[1]], "u2")[:, 0]),
    }
    return ResultsBundle(recon, metrics, traces, dict(timing or {}), config, ta, tb,
                         coarse, samples, data)


def run_experiment(config: ExperimentConfig, write=True, progress=None) -> ResultsBundle:
    """Fine-mesh data, coarse-mesh pCN inversion, reconstructions and metrics.

    Writes all outputs under ``config.output_dir`` when it is set and
    ``write`` is true.
    """
    timing = {}
    t0 = time.perf_counter()
    fine, coarse, true_a, true_b, data = prepare_data(config)
    timing["setup"] = time.perf_counter() - t0
    t1 = time.perf_counter()
    samples = sample_posterior(config, coarse, data, progress)
    timing["sample"] = time.perf_counter() - t1
    t2 = time.perf_counter()
    bundle = summarize(config, fine, coarse, true_a, true_b, samples, data)
    timing["reconstruct"] = time.perf_counter() - t2
    timing["total"] = time.perf_counter() - t0
    bundle.timing.update(timing)
    if write and config.output_dir:
        from .report import emit_report

        _stage("report", emit_report, bundle, config.output_dir)
    return bundle


# -- noise study ----------------------------------------------------------

STUDY_METRICS = (("a", "accuracy", "accuracy_a"), ("b", "accuracy", "accuracy_b"),
                 ("a", "linf", "linf_a"), ("b", "linf", "linf_b"))


def _study_job(args):
    cfg, = args
    try:
        bundle = run_experiment(cfg)
        return {"status": "ok", **{k: bundle.metrics[k] for _, _, k in STUDY_METRICS},
                "acceptance_rate": bundle.metrics["acceptance_rate"]}
    except Exception as exc:  # noqa: BLE001 - recorded as a failure marker
        log.exception("experiment failed")
        return {"status": f"failed: {exc}"}


def study_table(noise_levels, runs) -> list[dict]:
    """Mean and ``n - 1`` standard deviation per noise level, parameter and metric."""
    rows = []
    for p in noise_levels:
        ok = [r for r in runs if r["noise"] == p and r["status"] == "ok"]
        for param, metric, key in STUDY_METRICS:
            vals = np.array([r[key] for r in ok])
            n = vals.size
            rows.append({
                "noise": p, "param": param, "metric": metric,
                "mean": float(vals.mean()) if n else float("nan"),
                "sd": float(vals.std(ddof=1)) if n > 1 else 0.0,
                "n": n,
            })
    return rows


def noise_study(config: ExperimentConfig, noise_levels, repeats=10, workers=1):
    """Independent experiments per noise level with seeds derived from ``config.seed``.

    Returns ``(table_rows, per_run_rows)``; failed runs stay in the per-run
    list with a ``failed: ...`` status and are excluded from the table.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    noise_levels = [float(p) for p in noise_levels]
    level_seeds = derive_seeds(config.seed, len(noise_levels))
    jobs, meta = [], []
    for p, ls in zip(noise_levels, level_seeds):
        for r, s in enumerate(derive_seeds(ls, repeats)):
            out = None
            if config.output_dir:
                out = str(Path(config.output_dir) / f"noise_{p:g}" / f"rep_{r:02d}")
            jobs.append((replace(config, noise_level=p, seed=s, output_dir=out),))
            meta.append({"noise": p, "repeat": r, "seed": s})
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_study_job, jobs))
    else:
        results = [_study_job(j) for j in jobs]
    runs = [{**m, **r} for m, r in zip(meta, results)]
    table = study_table(noise_levels, runs)
    if config.output_dir:
        from .report import write_study

        write_study(Path(config.output_dir), table, runs)
    return table, runs
