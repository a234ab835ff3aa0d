"""Monte Carlo experiment driver: runs, summaries, PDF comparisons, outputs.

Every run simulates its own trajectory and feeds the identical measurement
sequence to each selected filter. Seeds for the trajectory and each filter
come from disjoint substreams of the master seed, so adding or removing a
filter never perturbs another filter's results. Results are emitted as CSV
and JSON data files; plotting is left to external tools.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import (
    ConfigError,
    ContractError,
    DegenerateUpdateError,
    DegenerateWeightsError,
    GridTooSmallError,
)
from .filters import (
    BootstrapParticleFilter,
    GaussianSumFilter,
    QuantizedNoiseKalmanFilter,
    UnscentedKalmanFilter,
)
from .gmm import GaussianMixture
from .indicator import UnitIntervalGMM, load_model, train_unit_gmm
from .system import InputSpec, StateSpaceModel, Trajectory, UniformQuantizer, simulate

FILTER_NAMES = ("gsf", "pf", "ukf", "qkf")

# Fixed stream ids so each consumer of randomness has its own substream.
_STREAMS = {"trajectory": 0, "gsf": 1, "pf": 2, "ukf": 3, "qkf": 4, "gt": 5}


@dataclass
class GsfParams:
    k1: int = 20
    cap: int = 20
    alpha: float | None = None
    pre_reduce: int | None = None
    prune_rel: float = 1e-4
    train_samples: int = 1_000_000
    train_seed: int = 20
    model_file: str | None = None


@dataclass
class PfParams:
    n_particles: int = 300
    resample_threshold: float = 0.5


@dataclass
class UkfParams:
    alpha: float = 1.0
    beta: float = 2.0
    kappa: float | None = None


@dataclass
class ExperimentConfig:
    model: StateSpaceModel
    quantizer: UniformQuantizer
    inputs: InputSpec
    horizon: int = 100
    runs: int = 100
    master_seed: int = 0
    filters: tuple[str, ...] = FILTER_NAMES
    gsf: GsfParams = field(default_factory=GsfParams)
    pf: PfParams = field(default_factory=PfParams)
    ukf: UkfParams = field(default_factory=UkfParams)
    gt_particles: int = 20_000
    pdf_steps: tuple[int, ...] = (10, 25, 50)
    workers: int = 1

    def __post_init__(self):
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        bad = [f for f in self.filters if f not in FILTER_NAMES]
        if bad:
            raise ConfigError(f"unknown filters {bad}; known: {FILTER_NAMES}")

    def echo(self) -> dict:
        """JSON-serializable copy of the configuration."""
        return {
            "model": {
                "A": self.model.A.tolist(),
                "B": self.model.B.tolist(),
                "C": self.model.C.tolist(),
                "D": self.model.D.tolist(),
                "Q": self.model.Q.tolist(),
                "R": self.model.R.tolist(),
                "mu1": self.model.mu1.tolist(),
                "P1": self.model.P1.tolist(),
            },
            "quantizer": {"step": self.quantizer.step.tolist()},
            "input": {"mean": self.inputs.mean.tolist(), "cov": self.inputs.cov.tolist()},
            "horizon": self.horizon,
            "runs": self.runs,
            "master_seed": self.master_seed,
            "filters": list(self.filters),
            "gsf": asdict(self.gsf),
            "pf": asdict(self.pf),
            "ukf": asdict(self.ukf),
            "gt_particles": self.gt_particles,
            "pdf_steps": list(self.pdf_steps),
            "workers": self.workers,
        }


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Build an ExperimentConfig from parsed JSON, with schema validation."""
    try:
        model = StateSpaceModel(
            A=raw["model"]["A"], B=raw["model"]["B"],
            C=raw["model"]["C"], D=raw["model"]["D"],
            Q=raw["model"]["Q"], R=raw["model"]["R"],
            mu1=raw["model"]["mu1"], P1=raw["model"]["P1"],
        )
        quantizer = UniformQuantizer(step=raw["quantizer"]["step"])
        inputs = InputSpec(mean=raw["input"]["mean"], cov=raw["input"]["cov"])
    except KeyError as exc:
        raise ConfigError(f"config is missing required field {exc}") from exc
    except (ContractError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid model/quantizer/input spec: {exc}") from exc
    kwargs = {}
    for key in ("horizon", "runs", "master_seed", "gt_particles", "workers"):
        if key in raw:
            kwargs[key] = int(raw[key])
    if "filters" in raw:
        kwargs["filters"] = tuple(raw["filters"])
    if "pdf_steps" in raw:
        kwargs["pdf_steps"] = tuple(int(s) for s in raw["pdf_steps"])
    for name, cls in (("gsf", GsfParams), ("pf", PfParams), ("ukf", UkfParams)):
        if name in raw:
            try:
                kwargs[name] = cls(**raw[name])
            except TypeError as exc:
                raise ConfigError(f"invalid '{name}' parameters: {exc}") from exc
    return ExperimentConfig(model=model, quantizer=quantizer, inputs=inputs, **kwargs)


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(raw)


def resolve_unit_gmm(cfg: ExperimentConfig) -> UnitIntervalGMM:
    """Load the indicator base model from file, or train it per the config."""
    if cfg.gsf.model_file:
        return load_model(cfg.gsf.model_file)
    return train_unit_gmm(cfg.gsf.train_samples, cfg.gsf.k1, cfg.gsf.train_seed)


def _seed(cfg: ExperimentConfig, run: int, stream: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([abs(int(cfg.master_seed)), run, _STREAMS[stream]])


def build_filter(name: str, cfg: ExperimentConfig, unit_gmm: UnitIntervalGMM | None, run: int):
    if name == "gsf":
        if unit_gmm is None:
            raise ConfigError("GSF requires a trained indicator base model")
        return GaussianSumFilter(
            cfg.model, cfg.quantizer, unit_gmm,
            alpha=cfg.gsf.alpha, pre_reduce=cfg.gsf.pre_reduce,
            cap=cfg.gsf.cap, prune_rel=cfg.gsf.prune_rel,
        )
    if name == "pf":
        return BootstrapParticleFilter(
            cfg.model, cfg.quantizer, cfg.pf.n_particles,
            seed=_seed(cfg, run, "pf"),
            resample_threshold=cfg.pf.resample_threshold,
        )
    if name == "ukf":
        return UnscentedKalmanFilter(
            cfg.model, cfg.quantizer,
            alpha=cfg.ukf.alpha, beta=cfg.ukf.beta, kappa=cfg.ukf.kappa,
        )
    if name == "qkf":
        return QuantizedNoiseKalmanFilter(cfg.model, cfg.quantizer)
    raise ConfigError(f"unknown filter '{name}'")


@dataclass
class FilterResult:
    mse: np.ndarray  # per state component
    seconds: float
    estimates: np.ndarray  # (T, n)
    failed: bool = False
    error: str = ""


@dataclass
class RunRecord:
    run: int
    truth: np.ndarray  # (T, n)
    results: dict[str, FilterResult]


@dataclass
class PdfComparison:
    step: int
    grid: np.ndarray  # cell centers, (G,) or (G, 2)
    cell: float
    gsf_density: np.ndarray
    gt_density: np.ndarray
    qkf_density: np.ndarray
    tv_gsf: float
    tv_qkf: float


@dataclass
class MCSummary:
    config: dict
    records: list[RunRecord]
    pdf_comparisons: list[PdfComparison] = field(default_factory=list)

    def successful(self, name: str) -> list[FilterResult]:
        return [r.results[name] for r in self.records
                if name in r.results and not r.results[name].failed]

    def failed_runs(self) -> list[dict]:
        out = []
        for rec in self.records:
            for name, res in rec.results.items():
                if res.failed:
                    out.append({"run": rec.run, "filter": name, "error": res.error})
        return out


def run_single(cfg: ExperimentConfig, run: int,
               unit_gmm: UnitIntervalGMM | None) -> RunRecord:
    """Simulate one trajectory and run every selected filter on it."""
    traj = simulate(cfg.model, cfg.quantizer, cfg.inputs, cfg.horizon,
                    _seed(cfg, run, "trajectory"))
    results: dict[str, FilterResult] = {}
    T, n = traj.x.shape
    for name in cfg.filters:
        filt = build_filter(name, cfg, unit_gmm, run)
        estimates = np.full((T, n), np.nan)
        failed = False
        err = ""
        t0 = time.perf_counter()
        try:
            for t in range(T):
                mean, _ = filt.step(traj.y[t], traj.u[t])
                estimates[t] = mean
        except (DegenerateUpdateError, DegenerateWeightsError, GridTooSmallError) as exc:
            failed = True
            err = str(exc)
        seconds = time.perf_counter() - t0
        if failed:
            mse = np.full(n, np.nan)
        else:
            mse = np.mean((estimates - traj.x) ** 2, axis=0)
        results[name] = FilterResult(mse=mse, seconds=seconds,
                                     estimates=estimates, failed=failed, error=err)
    return RunRecord(run=run, truth=traj.x, results=results)


def _run_single_args(args):
    return run_single(*args)


def run_experiment(cfg: ExperimentConfig,
                   unit_gmm: UnitIntervalGMM | None = None) -> MCSummary:
    """Full Monte Carlo experiment; deterministic given the master seed."""
    if unit_gmm is None and "gsf" in cfg.filters:
        unit_gmm = resolve_unit_gmm(cfg)
    if cfg.workers > 1:
        jobs = [(cfg, r, unit_gmm) for r in range(cfg.runs)]
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            records = list(pool.map(_run_single_args, jobs))
    else:
        records = [run_single(cfg, r, unit_gmm) for r in range(cfg.runs)]
    records.sort(key=lambda r: r.run)
    return MCSummary(config=cfg.echo(), records=records)


def _mixture_density_1d(mix: GaussianMixture, x: np.ndarray) -> np.ndarray:
    w = mix.weights()
    mu = mix.means()[:, 0]
    var = np.array([c.cov[0, 0] for c in mix.components])
    d = x[:, None] - mu
    return np.sum(w * np.exp(-0.5 * d * d / var) / np.sqrt(2 * np.pi * var), axis=1)


def _gaussian_density_1d(mean: float, var: float, x: np.ndarray) -> np.ndarray:
    return np.exp(-0.5 * (x - mean) ** 2 / var) / np.sqrt(2 * np.pi * var)


def _tv(p: np.ndarray, q: np.ndarray, cell: float) -> float:
    return 0.5 * float(np.sum(np.abs(p - q))) * cell


def compare_pdfs(cfg: ExperimentConfig, time_steps=None,
                 unit_gmm: UnitIntervalGMM | None = None,
                 n_bins: int = 120) -> list[PdfComparison]:
    """Compare filtering PDFs against a 20,000-particle ground truth.

    One shared trajectory is simulated; the GSF, the ground-truth PF, and the
    QKF (as a single Gaussian) run on it. At each requested step the GSF
    mixture density and a histogram density of the GT particles are evaluated
    on a common grid and their total-variation distance recorded.
    """
    if time_steps is None:
        time_steps = cfg.pdf_steps
    if cfg.model.n > 2:
        raise ConfigError("compare_pdfs supports scalar or 2-D states only")
    if unit_gmm is None:
        unit_gmm = resolve_unit_gmm(cfg)
    wanted = {int(s) for s in time_steps}
    if any(s < 1 or s > cfg.horizon for s in wanted):
        raise ConfigError("pdf steps must lie in [1, horizon]")
    traj = simulate(cfg.model, cfg.quantizer, cfg.inputs, cfg.horizon,
                    _seed(cfg, 0, "trajectory"))
    gsf = build_filter("gsf", cfg, unit_gmm, 0)
    qkf = build_filter("qkf", cfg, unit_gmm, 0)
    gt = BootstrapParticleFilter(
        cfg.model, cfg.quantizer, cfg.gt_particles,
        seed=_seed(cfg, 0, "gt"),
        resample_threshold=cfg.pf.resample_threshold,
    )
    captures = {}
    for t in range(max(wanted)):
        gsf.step(traj.y[t], traj.u[t])
        qm, qc = qkf.step(traj.y[t], traj.u[t])
        gt.step(traj.y[t], traj.u[t])
        if t + 1 in wanted:
            captures[t + 1] = (gsf.posterior, gt.last, (qm.copy(), qc.copy()))
    out = []
    for step in sorted(wanted):
        mix, snap, (qm, qc) = captures[step]
        if cfg.model.n == 1:
            out.append(_compare_1d(step, mix, snap, qm, qc, n_bins))
        else:
            out.append(_compare_2d(step, mix, snap, qm, qc, n_bins=60))
    return out


def _compare_1d(step, mix, snap, qm, qc, n_bins) -> PdfComparison:
    from .gmm import mixture_moments

    mean, cov = mixture_moments(mix)
    sd = float(np.sqrt(cov[0, 0]))
    pmin = float(snap.particles[:, 0].min())
    pmax = float(snap.particles[:, 0].max())
    lo = min(float(mean[0]) - 6 * sd, pmin) - 0.5 * sd
    hi = max(float(mean[0]) + 6 * sd, pmax) + 0.5 * sd
    edges = np.linspace(lo, hi, n_bins + 1)
    cell = edges[1] - edges[0]
    centers = 0.5 * (edges[:-1] + edges[1:])
    gt_counts, _ = np.histogram(snap.particles[:, 0], bins=edges, weights=snap.weights)
    gt_density = gt_counts / cell
    gsf_density = _mixture_density_1d(mix, centers)
    qkf_density = _gaussian_density_1d(float(qm[0]), float(qc[0, 0]), centers)
    return PdfComparison(
        step=step, grid=centers, cell=float(cell),
        gsf_density=gsf_density, gt_density=gt_density, qkf_density=qkf_density,
        tv_gsf=_tv(gsf_density, gt_density, cell),
        tv_qkf=_tv(qkf_density, gt_density, cell),
    )


def _compare_2d(step, mix, snap, qm, qc, n_bins) -> PdfComparison:
    from .gmm import gaussian_logpdf, mixture_moments

    mean, cov = mixture_moments(mix)
    sds = np.sqrt(np.diag(cov))
    lo = np.minimum(mean - 6 * sds, snap.particles.min(axis=0)) - 0.5 * sds
    hi = np.maximum(mean + 6 * sds, snap.particles.max(axis=0)) + 0.5 * sds
    edges = [np.linspace(lo[i], hi[i], n_bins + 1) for i in range(2)]
    cells = [e[1] - e[0] for e in edges]
    cell_area = float(cells[0] * cells[1])
    centers = [0.5 * (e[:-1] + e[1:]) for e in edges]
    gx, gy = np.meshgrid(centers[0], centers[1], indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    counts, _, _ = np.histogram2d(
        snap.particles[:, 0], snap.particles[:, 1],
        bins=edges, weights=snap.weights,
    )
    gt_density = (counts / cell_area).ravel()
    gsf_density = np.zeros(pts.shape[0])
    for c in mix.components:
        inv = np.linalg.inv(c.cov)
        d = pts - c.mean
        quad = np.einsum("ki,ij,kj->k", d, inv, d)
        det = np.linalg.det(c.cov)
        gsf_density += c.weight * np.exp(-0.5 * quad) / (2 * np.pi * np.sqrt(det))
    invq = np.linalg.inv(qc)
    dq = pts - qm
    quadq = np.einsum("ki,ij,kj->k", dq, invq, dq)
    qkf_density = np.exp(-0.5 * quadq) / (2 * np.pi * np.sqrt(np.linalg.det(qc)))
    return PdfComparison(
        step=step, grid=pts, cell=cell_area,
        gsf_density=gsf_density, gt_density=gt_density, qkf_density=qkf_density,
        tv_gsf=_tv(gsf_density, gt_density, cell_area),
        tv_qkf=_tv(qkf_density, gt_density, cell_area),
    )


def _median_quartiles(values: list[float]) -> dict:
    if not values:
        return {"median": None, "q1": None, "q3": None}
    arr = np.asarray(values)
    return {
        "median": float(np.median(arr)),
        "q1": float(np.percentile(arr, 25)),
        "q3": float(np.percentile(arr, 75)),
    }


def summarize(summary: MCSummary) -> dict:
    """Medians/quartiles per filter plus failure flags, for summary.json."""
    filters = {}
    for name in summary.config["filters"]:
        ok = summary.successful(name)
        total_mse = [float(r.mse.sum()) for r in ok]
        per_comp = {}
        if ok:
            n = ok[0].mse.shape[0]
            for i in range(n):
                per_comp[f"x{i + 1}"] = _median_quartiles([float(r.mse[i]) for r in ok])
        filters[name] = {
            "runs_succeeded": len(ok),
            "mse_total": _median_quartiles(total_mse),
            "mse_per_component": per_comp,
            "seconds": _median_quartiles([r.seconds for r in ok]),
        }
    return {
        "config": summary.config,
        "filters": filters,
        "failed_runs": summary.failed_runs(),
        "pdf_comparisons": [
            {"step": c.step, "tv_gsf": c.tv_gsf, "tv_qkf": c.tv_qkf}
            for c in summary.pdf_comparisons
        ],
    }


def emit_outputs(summary: MCSummary, outdir) -> list[Path]:
    """Write mse.csv, timing.csv, envelope.csv, pdfs.csv (if any), summary.json."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []

    mse_path = outdir / "mse.csv"
    with open(mse_path, "w") as fh:
        fh.write("run,filter,state_component,mse\n")
        for rec in summary.records:
            for name in summary.config["filters"]:
                res = rec.results.get(name)
                if res is None or res.failed:
                    continue
                for i, v in enumerate(res.mse):
                    fh.write(f"{rec.run},{name},{i + 1},{float(v)!r}\n")
    written.append(mse_path)

    timing_path = outdir / "timing.csv"
    with open(timing_path, "w") as fh:
        fh.write("run,filter,seconds\n")
        for rec in summary.records:
            for name in summary.config["filters"]:
                res = rec.results.get(name)
                if res is None:
                    continue
                fh.write(f"{rec.run},{name},{float(res.seconds)!r}\n")
    written.append(timing_path)

    env_path = outdir / "envelope.csv"
    with open(env_path, "w") as fh:
        fh.write("t,filter,state_component,min,mean,max,truth\n")
        if summary.records:
            truth_mean = np.mean([r.truth for r in summary.records], axis=0)
            T, n = truth_mean.shape
            for name in summary.config["filters"]:
                ok = summary.successful(name)
                if not ok:
                    continue
                stack = np.stack([r.estimates for r in ok])  # (runs, T, n)
                emin = stack.min(axis=0)
                emean = stack.mean(axis=0)
                emax = stack.max(axis=0)
                for t in range(T):
                    for i in range(n):
                        fh.write(
                            f"{t + 1},{name},{i + 1},{float(emin[t, i])!r},"
                            f"{float(emean[t, i])!r},{float(emax[t, i])!r},{float(truth_mean[t, i])!r}\n"
                        )
    written.append(env_path)

    if summary.pdf_comparisons:
        pdf_path = outdir / "pdfs.csv"
        two_d = summary.pdf_comparisons[0].grid.ndim == 2
        with open(pdf_path, "w") as fh:
            if two_d:
                fh.write("step,grid_x,grid_y,gsf_density,gt_density\n")
            else:
                fh.write("step,grid_x,gsf_density,gt_density\n")
            for comp in summary.pdf_comparisons:
                for i in range(comp.gsf_density.shape[0]):
                    if two_d:
                        fh.write(
                            f"{comp.step},{float(comp.grid[i, 0])!r},{float(comp.grid[i, 1])!r},"
                            f"{float(comp.gsf_density[i])!r},{float(comp.gt_density[i])!r}\n"
                        )
                    else:
                        fh.write(
                            f"{comp.step},{float(comp.grid[i])!r},"
                            f"{float(comp.gsf_density[i])!r},{float(comp.gt_density[i])!r}\n"
                        )
        written.append(pdf_path)

    summary_path = outdir / "summary.json"
    summary_path.write_text(json.dumps(summarize(summary), indent=1))
    written.append(summary_path)
    return written


def example1_config(**overrides) -> ExperimentConfig:
    """Scalar benchmark system: A=0.8, B=1.5, C=2.8, D=1.8, step 10."""
    base = dict(
        model=StateSpaceModel(A=0.8, B=1.5, C=2.8, D=1.8, Q=1.0, R=0.1,
                              mu1=[1.0], P1=2.0),
        quantizer=UniformQuantizer(step=[10.0]),
        inputs=InputSpec(mean=[0.0], cov=[[2.0]]),
        horizon=100, runs=100, master_seed=42,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


def example2_config(**overrides) -> ExperimentConfig:
    """Two-state, two-output benchmark system with step 7."""
    base = dict(
        model=StateSpaceModel(
            A=[[0.7362, 0.1636], [0.1636, 0.7362]],
            B=[[0.8, 0.4], [1.2, 0.4]],
            C=[[1.05, 0.35], [1.40, 0.70]],
            D=[[0.40, 0.80], [1.20, 0.16]],
            Q=[[0.5, 0.0], [0.0, 0.5]],
            R=[[0.1, 0.0], [0.0, 0.1]],
            mu1=[1.0, 2.0],
            P1=[[0.01, 0.0], [0.0, 0.01]],
        ),
        quantizer=UniformQuantizer(step=[7.0, 7.0]),
        inputs=InputSpec(mean=[1.0, 2.0], cov=[[2.0, 0.0], [0.0, 2.0]]),
        horizon=100, runs=100, master_seed=42,
    )
    base.update(overrides)
    return ExperimentConfig(**base)
