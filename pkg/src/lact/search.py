"""Random hyperparameter search and the ablation table.

Both harnesses score configurations by total MCC over a suite of generated
(sinogram, truth) pairs at a limited arc. Trials are independent and may run in
worker processes; results are always ordered by trial index so the written
files do not depend on the worker count.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .metrics import mcc
from .neural import PatchAutoencoder, train_autoencoder
from .phantoms import PhantomSpec, ScanSpec, disk_mask, generate_phantom, generate_phantoms, simulate_scan
from .radon import Sinogram, fbp_reconstruct
from .reconstruct import ReconConfig, binarize, reconstruct

logger = logging.getLogger(__name__)

FAILED_SCORE_PER_IMAGE = -1.0
THREADS_ENV = "LACT_THREADS"


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

@dataclass
class Suite:
    """Sinograms, ground truths and the support mask shared by all of them."""
    sinograms: list[Sinogram]
    truths: list[np.ndarray]
    mask: np.ndarray

    def __post_init__(self):
        if len(self.sinograms) != len(self.truths) or not self.truths:
            raise ValueError("suite needs matching, non-empty sinogram and truth lists")

    @property
    def side(self) -> int:
        return self.truths[0].shape[0]

    def __len__(self) -> int:
        return len(self.truths)


def make_suite(count: int = 4, side: int = 128, arc_deg: float = 30.0, noise_sigma: float = 0.01,
               seed: int = 0, hole_count: tuple[int, int] = (2, 6)) -> Suite:
    """Generated phantoms with their simulated limited-arc scans."""
    ss = np.random.SeedSequence(seed)
    ph_seeds = ss.spawn(count)
    sinos, truths = [], []
    for k, child in enumerate(ph_seeds):
        ph_seed, noise_seed = (int(v) for v in child.generate_state(2))
        truth = generate_phantom(PhantomSpec(side=side, hole_count=hole_count, seed=ph_seed))
        sino = simulate_scan(truth, ScanSpec(arc_deg=arc_deg, noise_sigma=noise_sigma, seed=noise_seed))
        truths.append(truth)
        sinos.append(sino)
    return Suite(sinos, truths, disk_mask(side))


def fbp_scores(suite: Suite) -> list[float]:
    """MCC of masked FBP followed by Otsu thresholding, per image."""
    out = []
    for sino, truth in zip(suite.sinograms, suite.truths):
        rec = fbp_reconstruct(sino) * suite.mask
        out.append(mcc(binarize(rec), truth))
    return out


def train_priors(patch_sizes, side: int, seed: int = 0, epochs: int = 100,
                 count: int = 8) -> dict[int, PatchAutoencoder]:
    """One autoencoder per patch size, trained on ``count`` generated phantoms."""
    images = generate_phantoms(count, side=side, seed=seed)
    models = {}
    for p in sorted(set(patch_sizes)):
        logger.info("training %dx%d patch autoencoder for %d epochs", p, p, epochs)
        models[p] = train_autoencoder(images, p, seed=seed, epochs=epochs).model
    return models


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def evaluate_config(cfg: ReconConfig, suite: Suite, ae_model: PatchAutoencoder | None = None) -> list[float]:
    cfg = replace(cfg, mask=suite.mask)
    scores = []
    for sino, truth in zip(suite.sinograms, suite.truths):
        result = reconstruct(sino, cfg, ae_model=ae_model)
        scores.append(mcc(binarize(result.image), truth))
    return scores


def _evaluate_job(job):
    cfg, suite, ae_state = job
    model = None
    if ae_state is not None:
        model = PatchAutoencoder(cfg.patch_size)
        model.load_state_dict(ae_state)
    start = time.perf_counter()
    try:
        scores, note = evaluate_config(cfg, suite, model), ""
    except Exception as exc:  # recorded, never fatal
        scores, note = [FAILED_SCORE_PER_IMAGE] * len(suite), f"{type(exc).__name__}: {exc}"
    return scores, note, time.perf_counter() - start


def worker_count(requested: int | None = None) -> int:
    """Resolve a worker count from the argument or ``LACT_THREADS`` (0 means all CPUs)."""
    if requested is None:
        requested = int(os.environ.get(THREADS_ENV, "0") or 0)
    if requested < 0:
        raise ValueError(f"worker count must be >= 0, got {requested}")
    return requested or (os.cpu_count() or 1)


def _run_jobs(jobs: list, workers: int) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return [_evaluate_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(_evaluate_job, jobs))


def _ae_state(cfg: ReconConfig, priors: dict[int, PatchAutoencoder]):
    if cfg.lambda_psr <= 0:
        return None
    model = priors.get(cfg.patch_size)
    return model.state_dict() if model is not None else None


# ---------------------------------------------------------------------------
# random search
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SearchSpace:
    """Distributions the random search draws from.

    Regularization weights are exactly zero with probability ``p_zero`` and
    log-uniform on their range otherwise.
    """
    use_dip: tuple[bool, ...] = (True, False)
    alpha: tuple[float, float] = (0.0, 8.0)
    lambda_tv: tuple[float, float] = (1e-3, 1.0)
    lambda_psr: tuple[float, float] = (1e-2, 1.0)
    patch_size: tuple[int, ...] = (20, 30, 40)
    lr: tuple[float, float] = (1e-4, 0.5)
    n_iter: tuple[int, ...] = (300, 400, 800, 1200)
    p_zero: float = 0.5

    def __post_init__(self):
        for name in ("alpha", "lambda_tv", "lambda_psr", "lr"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"{name} range is empty: {lo} > {hi}")
        for name in ("lambda_tv", "lambda_psr", "lr"):
            if getattr(self, name)[0] <= 0:
                raise ValueError(f"{name} range must be positive for log-uniform sampling")
        if not self.use_dip or not self.patch_size or not self.n_iter:
            raise ValueError("categorical choices must be non-empty")
        if min(self.patch_size) < 4 or min(self.n_iter) < 1:
            raise ValueError("patch sizes must be >= 4 and iteration counts >= 1")
        if not 0 <= self.p_zero <= 1:
            raise ValueError("p_zero must lie in [0, 1]")

    @staticmethod
    def _log_uniform(rng, bounds) -> float:
        lo, hi = bounds
        return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))

    def sample(self, rng: np.random.Generator) -> ReconConfig:
        # every draw is taken unconditionally so the stream position never depends on outcomes
        use_dip = bool(self.use_dip[rng.integers(len(self.use_dip))])
        alpha = float(rng.uniform(*self.alpha))
        tv_zero, tv = rng.random() < self.p_zero, self._log_uniform(rng, self.lambda_tv)
        psr_zero, psr = rng.random() < self.p_zero, self._log_uniform(rng, self.lambda_psr)
        patch = int(self.patch_size[rng.integers(len(self.patch_size))])
        lr = self._log_uniform(rng, self.lr)
        n_iter = int(self.n_iter[rng.integers(len(self.n_iter))])
        seed = int(rng.integers(2**31 - 1))
        cfg = ReconConfig(
            use_dip=use_dip, alpha=alpha,
            lambda_tv=0.0 if tv_zero else tv,
            lambda_psr=0.0 if psr_zero else psr,
            patch_size=patch, lr=lr, n_iter=n_iter, seed=seed,
        )
        cfg.validate()
        return cfg


@dataclass
class TrialRecord:
    trial: int
    config: ReconConfig
    scores: list[float]
    wall_time: float = 0.0
    note: str = ""

    @property
    def seed(self) -> int:
        return self.config.seed

    @property
    def total(self) -> float:
        return float(math.fsum(self.scores))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)  # shortest string that round-trips exactly
    return str(v)


def trials_csv(records: Sequence[TrialRecord]) -> str:
    """Ranked trial table; wall times are deliberately excluded."""
    n_img = max((len(r.scores) for r in records), default=0)
    header = (["rank", "trial", "use_dip", "alpha", "lambda_tv", "lambda_psr", "patch_size", "lr", "n_iter",
               "seed"] + [f"mcc_{k}" for k in range(n_img)] + ["total", "note"])
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for rank, r in enumerate(rank_trials(records), start=1):
        c = r.config
        writer.writerow([_fmt(v) for v in (
            rank, r.trial, c.use_dip, c.alpha, c.lambda_tv, c.lambda_psr, c.patch_size, c.lr, c.n_iter, c.seed,
            *r.scores, r.total, r.note)])
    return buf.getvalue()


def timings_csv(records: Sequence[TrialRecord]) -> str:
    lines = ["trial,wall_time_s"] + [f"{r.trial},{r.wall_time:.3f}" for r in sorted(records, key=lambda r: r.trial)]
    return "\n".join(lines) + "\n"


def rank_trials(records: Sequence[TrialRecord]) -> list[TrialRecord]:
    """Descending total MCC; ties keep trial order."""
    return sorted(records, key=lambda r: (-r.total, r.trial))


def hparam_search(suite: Suite, trials: int, seed: int = 0, space: SearchSpace = SearchSpace(),
                  priors: dict[int, PatchAutoencoder] | None = None, ae_epochs: int = 100,
                  workers: int | None = None) -> list[TrialRecord]:
    """Evaluate ``trials`` configurations drawn i.i.d. from ``space``.

    Autoencoders for the sampled patch sizes are taken from ``priors`` or
    trained once per size. Records come back in trial order; use
    :func:`rank_trials` for the ranking.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    rng = np.random.default_rng(seed)
    configs = [space.sample(rng) for _ in range(trials)]
    priors = dict(priors or {})
    needed = {c.patch_size for c in configs if c.lambda_psr > 0 and c.patch_size <= suite.side} - set(priors)
    if needed:
        priors.update(train_priors(needed, suite.side, seed=seed, epochs=ae_epochs))
    jobs = [(c, suite, _ae_state(c, priors)) for c in configs]
    outcomes = _run_jobs(jobs, worker_count(workers))
    records = []
    for k, (cfg, (scores, note, wall)) in enumerate(zip(configs, outcomes)):
        if note:
            logger.warning("trial %d failed: %s", k, note)
        records.append(TrialRecord(k, cfg, scores, wall, note))
    return records


# ---------------------------------------------------------------------------
# ablation
# ---------------------------------------------------------------------------

class AblationError(ValueError):
    pass


ABLATION_ROWS = ("No DIP", "No Filter", "No TV", "No PSR", "Full")

TABLE1_CONFIGS = {
    "No DIP": ReconConfig(use_dip=False, alpha=5.5, lambda_tv=0.1, lambda_psr=0.1, patch_size=30, lr=0.2, n_iter=300),
    "No Filter": ReconConfig(use_dip=True, alpha=0.0, lambda_tv=0.5, lambda_psr=0.1, patch_size=30, lr=0.01,
                             n_iter=1200),
    "No TV": ReconConfig(use_dip=True, alpha=5.5, lambda_tv=0.0, lambda_psr=0.2, patch_size=20, lr=0.001, n_iter=1200),
    "No PSR": ReconConfig(use_dip=True, alpha=5.0, lambda_tv=0.5, lambda_psr=0.0, patch_size=None, lr=0.001,
                          n_iter=1200),
    "Full": ReconConfig(use_dip=True, alpha=6.0, lambda_tv=0.01, lambda_psr=0.2, patch_size=40, lr=0.001, n_iter=400),
}


def enforce_exclusion(name: str, cfg: ReconConfig) -> ReconConfig:
    """Force the component a row excludes to its off value."""
    if name == "No DIP":
        return replace(cfg, use_dip=False)
    if name == "No Filter":
        return replace(cfg, alpha=0.0)
    if name == "No TV":
        return replace(cfg, lambda_tv=0.0)
    if name == "No PSR":
        return replace(cfg, lambda_psr=0.0, patch_size=None)
    if name == "Full":
        return cfg
    raise KeyError(f"unknown ablation row {name!r}")


def excluded_component(cfg: ReconConfig) -> str:
    """Row name a configuration belongs to; the first disabled component wins."""
    if not cfg.use_dip:
        return "No DIP"
    if cfg.alpha == 0:
        return "No Filter"
    if cfg.lambda_tv == 0:
        return "No TV"
    if cfg.lambda_psr == 0:
        return "No PSR"
    return "Full"


def best_per_exclusion(records: Sequence[TrialRecord]) -> dict[str, ReconConfig]:
    """Best-scoring successful trial for each ablation row."""
    best: dict[str, ReconConfig] = {}
    for r in rank_trials(records):
        if r.note:
            continue
        best.setdefault(excluded_component(r.config), r.config)
    return best


@dataclass
class AblationRow:
    name: str
    config: ReconConfig
    scores: list[float] = field(default_factory=list)

    @property
    def mcc(self) -> float:
        return float(math.fsum(self.scores))


def ablate(configs: dict[str, ReconConfig], suite: Suite, priors: dict[int, PatchAutoencoder] | None = None,
           ae_epochs: int = 100, seed: int = 0, workers: int | None = None) -> list[AblationRow]:
    """Score one configuration per ablation row on ``suite``.

    Raises
    ------
    AblationError
        If any of the five rows is missing from ``configs``.
    """
    missing = [name for name in ABLATION_ROWS if name not in configs]
    if missing:
        raise AblationError(f"ablation is missing rows: {', '.join(missing)}")
    rows = [AblationRow(name, enforce_exclusion(name, configs[name])) for name in ABLATION_ROWS]
    priors = dict(priors or {})
    needed = {r.config.patch_size for r in rows if r.config.lambda_psr > 0} - set(priors)
    if needed:
        priors.update(train_priors(needed, suite.side, seed=seed, epochs=ae_epochs))
    outcomes = _run_jobs([(r.config, suite, _ae_state(r.config, priors)) for r in rows], worker_count(workers))
    for row, (scores, note, _) in zip(rows, outcomes):
        if note:
            raise RuntimeError(f"ablation row {row.name!r} failed: {note}")
        row.scores = scores
    return rows


def ablation_table(rows: Sequence[AblationRow]) -> str:
    """CSV with the columns name, DIP, alpha, lambda_TV, lambda_PSR, patch, lr, N_iter, MCC."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["name", "DIP", "alpha", "lambda_TV", "lambda_PSR", "patch", "lr", "N_iter", "MCC"])
    for r in rows:
        c = r.config
        patch = "-" if c.lambda_psr == 0 else str(c.patch_size)
        writer.writerow([r.name, "True" if c.use_dip else "False", _fmt(float(c.alpha)), _fmt(float(c.lambda_tv)),
                         _fmt(float(c.lambda_psr)), patch, _fmt(float(c.lr)), c.n_iter, f"{r.mcc:.4f}"])
    return buf.getvalue()


def write_text(path, text: str) -> None:
    Path(path).write_text(text)


def read_trials_csv(path) -> list[TrialRecord]:
    """Parse a table written by :func:`trials_csv` back into records."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        records = []
        for row in reader:
            try:
                psr = float(row["lambda_psr"])
                cfg = ReconConfig(
                    use_dip=row["use_dip"] == "true", alpha=float(row["alpha"]),
                    lambda_tv=float(row["lambda_tv"]), lambda_psr=psr,
                    patch_size=int(row["patch_size"]), lr=float(row["lr"]),
                    n_iter=int(row["n_iter"]), seed=int(row["seed"]),
                )
                scores = [float(row[k]) for k in reader.fieldnames if k.startswith("mcc_")]
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{reader.line_num}: bad trial row ({exc})") from None
            records.append(TrialRecord(int(row["trial"]), cfg, scores, note=row.get("note", "")))
    return sorted(records, key=lambda r: r.trial)
