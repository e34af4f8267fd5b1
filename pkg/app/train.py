# ───────────────────────────────────────────────────────────────────────────────
# app/train.py
"""
Alternating GAN training on 2D Gaussian mixtures.

One cycle is `d_steps` discriminator updates followed by `g_steps` generator
updates. The softmax variant minimizes the batch-softmax cross-entropies; the
baseline variant uses the logistic loss with the non-saturating generator.
Metrics are computed every `metrics_every` cycles (and on the last one) from a
fixed latent batch, so two runs with the same config log the same numbers.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from app.autodiff import Graph, Var, backward
from app.core import ConfigError
from app.losses import (
    Batch,
    d_loss_gan_baseline,
    d_loss_softmax,
    g_loss_gan_nonsaturating,
    g_loss_softmax,
    log_partition,
)
from app.nn import (
    ADAM_LR,
    AdamState,
    LatentSampler,
    MlpParams,
    MlpSpec,
    adam_step,
    forward,
    init_params,
    save_checkpoint,
)
from app.plotting import write_scatter_svg
from app.synth import GaussianMixture2D, SampleSet, histogram_js, mode_report, sample_mixture

logger = logging.getLogger(__name__)

LOSS_VARIANTS = ("softmax", "baseline")
DATA_SCALINGS = ("centered", "positive")
VERDICTS = ("converged", "collapsed", "diverged")

# name -> (n_modes, radius, std)
MIXTURES: Dict[str, Tuple[int, float, float]] = {
    "ring8": (8, 2.0, 0.02),
    "ring4": (4, 2.0, 0.02),
}

SATURATION_TOL = 1e-3

LOG_HEADER = ["cycle", "d_loss", "g_loss", "ln_zb", "coverage", "hq_fraction", "hist_js", "ms"]

# Defaults that a preset starts from. The learning rates and widths are the
# calibration pinned in scripts/acceptance_runs.py; rerun its sweep before
# changing them.
BASE_CONFIG: Dict[str, Any] = {
    "loss_variant": "softmax",
    "d_steps": 1,
    "g_steps": 1,
    "batch_real": 64,
    "batch_fake": 64,
    "total_cycles": 20000,
    "hidden_activation": "leaky_relu",
    "data_scaling": "centered",
    "lr_d": ADAM_LR,
    "lr_g": ADAM_LR,
    "latent_dim": 2,
    "mixture": "ring8",
    "d_hidden": [128, 128],
    "g_hidden": [128, 128],
    "metrics_every": 100,
    "metric_samples": 2048,
}

# Fields a config without a preset may omit; they take the BASE_CONFIG value.
OPTIONAL_FIELDS = ("d_hidden", "g_hidden", "metrics_every", "metric_samples")

PRESETS: Dict[str, Dict[str, Any]] = {
    "default": {},
    # architecture unfavorable to the baseline: plain relu and off-center data
    "relu-positive": {"hidden_activation": "relu", "data_scaling": "positive"},
    "ratio-5-1": {"d_steps": 5, "g_steps": 1},
    "ratio-1-5": {"d_steps": 1, "g_steps": 5},
    # deep constant-width generator, no normalization anywhere
    "stability": {"g_hidden": [16, 16, 16, 16]},
    "small-batch": {"batch_real": 5, "batch_fake": 5},
}


@dataclass(frozen=True)
class TrainConfig:
    seed: int
    loss_variant: str
    d_steps: int
    g_steps: int
    batch_real: int
    batch_fake: int
    total_cycles: int
    hidden_activation: str
    data_scaling: str
    lr_d: float
    lr_g: float
    latent_dim: int
    mixture: str
    d_hidden: Tuple[int, ...]
    g_hidden: Tuple[int, ...]
    metrics_every: int
    metric_samples: int
    preset: Optional[str] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "d_hidden", tuple(self.d_hidden))
        object.__setattr__(self, "g_hidden", tuple(self.g_hidden))
        self._validate()

    def _validate(self) -> None:
        choices = {
            "loss_variant": LOSS_VARIANTS,
            "hidden_activation": ("relu", "leaky_relu"),
            "data_scaling": DATA_SCALINGS,
            "mixture": tuple(MIXTURES),
        }
        for name, allowed in choices.items():
            value = getattr(self, name)
            if value not in allowed:
                raise ConfigError(f"'{value}' is not one of {list(allowed)}", field=name)
        if self.seed < 0:
            raise ConfigError(f"must be >= 0, got {self.seed}", field="seed")
        for name in ("d_steps", "g_steps", "batch_real", "batch_fake", "total_cycles",
                     "latent_dim", "metrics_every", "metric_samples"):
            if getattr(self, name) < 1:
                raise ConfigError(f"must be >= 1, got {getattr(self, name)}", field=name)
        for name in ("lr_d", "lr_g"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ConfigError(f"must be a finite number >= 0, got {value}", field=name)
        for name in ("d_hidden", "g_hidden"):
            if any(w < 1 for w in getattr(self, name)):
                raise ConfigError("layer widths must be >= 1", field=name)

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "TrainConfig":
        """Validate a config document.

        `seed` is always required. With a `preset`, missing fields come from that
        preset. Without one, only OPTIONAL_FIELDS may be left out (they take the
        BASE_CONFIG value) and everything else is required.
        Unknown fields are rejected.
        """
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        for key in doc:
            if key not in known:
                raise ConfigError("unknown field", field=key)

        preset = doc.get("preset")
        if preset is not None:
            if preset not in PRESETS:
                raise ConfigError(f"unknown preset '{preset}', choose from {sorted(PRESETS)}", field="preset")
            merged = {**BASE_CONFIG, **PRESETS[preset], **doc}
        else:
            merged = {**{k: BASE_CONFIG[k] for k in OPTIONAL_FIELDS}, **doc}

        if "seed" not in doc:
            raise ConfigError("missing required field", field="seed")
        for f in fields(cls):
            if f.name != "preset" and f.name not in merged:
                raise ConfigError("missing required field", field=f.name)

        values: Dict[str, Any] = {"preset": preset}
        for f in fields(cls):
            if f.name == "preset":
                continue
            values[f.name] = _coerce(f.name, merged[f.name])
        return cls(**values)

    @classmethod
    def from_preset(cls, preset: str, seed: int, **overrides: Any) -> "TrainConfig":
        return cls.from_dict({"preset": preset, "seed": seed, **overrides})

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["d_hidden"] = list(self.d_hidden)
        d["g_hidden"] = list(self.g_hidden)
        if d["preset"] is None:
            del d["preset"]
        return d

    @property
    def d_spec(self) -> MlpSpec:
        return MlpSpec((2, *self.d_hidden, 1), hidden_activation=self.hidden_activation)

    @property
    def g_spec(self) -> MlpSpec:
        return MlpSpec((self.latent_dim, *self.g_hidden, 2), hidden_activation=self.hidden_activation)

    def data_mixture(self) -> GaussianMixture2D:
        """The target distribution, translated into the positive quadrant for
        data_scaling = positive."""
        n_modes, radius, std = MIXTURES[self.mixture]
        mix = GaussianMixture2D.ring(n_modes, radius, std)
        if self.data_scaling == "positive":
            mix = mix.shifted(1.0 - mix.centers.min(axis=0))
        return mix


_INT_FIELDS = {"seed", "d_steps", "g_steps", "batch_real", "batch_fake", "total_cycles",
               "latent_dim", "metrics_every", "metric_samples"}
_FLOAT_FIELDS = {"lr_d", "lr_g"}
_LIST_FIELDS = {"d_hidden", "g_hidden"}


def _coerce(name: str, value: Any) -> Any:
    if name in _INT_FIELDS:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", field=name)
        return value
    if name in _FLOAT_FIELDS:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", field=name)
        return float(value)
    if name in _LIST_FIELDS:
        if not isinstance(value, list) or any(isinstance(w, bool) or not isinstance(w, int) for w in value):
            raise ConfigError(f"expected a list of integers, got {value!r}", field=name)
        return tuple(value)
    if not isinstance(value, str):
        raise ConfigError(f"expected a string, got {value!r}", field=name)
    return value


def load_config(path: Union[str, os.PathLike]) -> TrainConfig:
    """Read and validate a JSON config; syntax errors carry line and column."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(e.msg, line=e.lineno, column=e.colno) from e
    return TrainConfig.from_dict(doc)


# ── Run records ───────────────────────────────────────────────────────────────

@dataclass
class TrainLogRecord:
    cycle: int
    d_loss: float
    g_loss: float
    ln_zb: float
    coverage: int
    hq_fraction: float
    hist_js: float
    ms: float

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in (self.d_loss, self.g_loss, self.ln_zb, self.hist_js))

    def row(self, include_timing: bool = False) -> List[str]:
        ms = self.ms if include_timing else 0.0
        return [
            str(self.cycle),
            f"{self.d_loss:.17g}",
            f"{self.g_loss:.17g}",
            f"{self.ln_zb:.17g}",
            str(self.coverage),
            f"{self.hq_fraction:.17g}",
            f"{self.hist_js:.17g}",
            f"{ms:.17g}",
        ]


def _json_float(value: float) -> Optional[float]:
    """JSON has no NaN or inf; a diverged run reports null."""
    return value if math.isfinite(value) else None


@dataclass
class RunArtifacts:
    config: TrainConfig
    d_params: MlpParams
    g_params: MlpParams
    log: List[TrainLogRecord]
    samples: SampleSet
    reference: SampleSet
    verdict: str
    saturated_at: Optional[int] = None
    n_modes: int = 0

    @property
    def final(self) -> Optional[TrainLogRecord]:
        return self.log[-1] if self.log else None

    def summary(self) -> Dict[str, Any]:
        last = self.final
        return {
            "verdict": self.verdict,
            "saturated_at": self.saturated_at,
            "cycles_logged": last.cycle if last else 0,
            "n_modes": self.n_modes,
            "final_coverage": last.coverage if last else 0,
            "final_hq_fraction": last.hq_fraction if last else 0.0,
            "final_hist_js": _json_float(last.hist_js) if last else None,
            "final_d_loss": _json_float(last.d_loss) if last else None,
            "final_g_loss": _json_float(last.g_loss) if last else None,
            "d_digest": self.d_params.digest(),
            "g_digest": self.g_params.digest(),
        }


def write_log_csv(path: Union[str, os.PathLike], log: List[TrainLogRecord], include_timing: bool = False) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_HEADER)
        for rec in log:
            writer.writerow(rec.row(include_timing))


def read_log_csv(path: Union[str, os.PathLike]) -> List[TrainLogRecord]:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return [
            TrainLogRecord(
                cycle=int(r["cycle"]),
                d_loss=float(r["d_loss"]),
                g_loss=float(r["g_loss"]),
                ln_zb=float(r["ln_zb"]),
                coverage=int(r["coverage"]),
                hq_fraction=float(r["hq_fraction"]),
                hist_js=float(r["hist_js"]),
                ms=float(r["ms"]),
            )
            for r in reader
        ]


def decide_verdict(log: List[TrainLogRecord], n_modes: int) -> str:
    """diverged: any non-finite loss. collapsed: final coverage < ⌈modes/2⌉."""
    if not log or any(not rec.is_finite() for rec in log):
        return "diverged"
    if log[-1].coverage < math.ceil(n_modes / 2):
        return "collapsed"
    return "converged"


def saturation_floor(config: TrainConfig) -> float:
    """Infimum of the discriminator loss: ln|B₊| for softmax, 0 for logistic."""
    return math.log(config.batch_real) if config.loss_variant == "softmax" else 0.0


def find_saturation(log: List[TrainLogRecord], config: TrainConfig) -> Optional[int]:
    floor = saturation_floor(config)
    for rec in log:
        if math.isfinite(rec.d_loss) and rec.d_loss - floor < SATURATION_TOL:
            return rec.cycle
    return None


# ── Trainer ───────────────────────────────────────────────────────────────────

def _scores_finite(*scores: Var) -> bool:
    return all(np.all(np.isfinite(s.value)) for s in scores)


class Trainer:
    """
    Holds the two networks, their Adam states and the random streams of one run.

    Streams are split from the config seed: discriminator init, generator init,
    real-data batches, training latents, metric samples. Nothing else draws
    random numbers, so (config, seed) fixes every logged value except `ms`.
    """

    def __init__(self, config: TrainConfig):
        self.config = config
        self.mixture = config.data_mixture()
        self.d_spec = config.d_spec
        self.g_spec = config.g_spec

        d_seed, g_seed, data_seed, latent_seed, metric_seed = (
            int(s) for s in np.random.SeedSequence(config.seed).generate_state(5)
        )
        self.d_params = init_params(self.d_spec, d_seed)
        self.g_params = init_params(self.g_spec, g_seed)
        self.d_opt = AdamState.for_params(self.d_params, lr=config.lr_d)
        self.g_opt = AdamState.for_params(self.g_params, lr=config.lr_g)
        self.data_rng = np.random.default_rng(data_seed)
        self.latent = LatentSampler(config.latent_dim, latent_seed)

        metric_rng = np.random.default_rng(metric_seed)
        self.metric_z = metric_rng.standard_normal((config.metric_samples, config.latent_dim))
        self.reference = sample_mixture(self.mixture, config.metric_samples, metric_rng)
        self.bounds = self.mixture.bounds()

    @property
    def softmax(self) -> bool:
        return self.config.loss_variant == "softmax"

    def _real_batch(self) -> np.ndarray:
        return sample_mixture(self.mixture, self.config.batch_real, self.data_rng).points

    def d_step(self) -> Tuple[float, float]:
        """One discriminator update. Returns (d_loss, ln Z_B) before the update;
        NaN loss means the scores were no longer finite and nothing changed."""
        graph = Graph()
        handles = self.d_params.bind(graph, trainable=True)
        real = graph.constant(self._real_batch())
        fake = graph.constant(forward(self.g_spec, self.g_params, self.latent.sample(self.config.batch_fake)))
        real_scores = forward(self.d_spec, handles, real)
        fake_scores = forward(self.d_spec, handles, fake)
        if not _scores_finite(real_scores, fake_scores):
            return math.nan, math.nan

        if self.softmax:
            batch = Batch(real_scores, fake_scores)
            loss = d_loss_softmax(batch)
            ln_zb = log_partition(batch)
        else:
            loss = d_loss_gan_baseline(real_scores, fake_scores)
            # −logit plays the role of μ so the column means the same thing in both variants
            ln_zb = log_partition(Batch(-real_scores, -fake_scores))

        value = float(loss.value)
        if not math.isfinite(value):
            return math.nan, ln_zb
        backward(loss)
        self.d_params, self.d_opt = adam_step(self.d_params, [h.grad for h in handles], self.d_opt)
        return value, ln_zb

    def g_step(self) -> float:
        """One generator update; the discriminator enters as constants."""
        graph = Graph()
        handles = self.g_params.bind(graph, trainable=True)
        z = graph.constant(self.latent.sample(self.config.batch_fake))
        fake = forward(self.g_spec, handles, z)
        fake_scores = forward(self.d_spec, self.d_params, fake)
        if self.softmax:
            real_scores = forward(self.d_spec, self.d_params, graph.constant(self._real_batch()))
            if not _scores_finite(real_scores, fake_scores):
                return math.nan
            loss = g_loss_softmax(Batch(real_scores, fake_scores))
        else:
            if not _scores_finite(fake_scores):
                return math.nan
            loss = g_loss_gan_nonsaturating(fake_scores)

        value = float(loss.value)
        if not math.isfinite(value):
            return math.nan
        backward(loss)
        self.g_params, self.g_opt = adam_step(self.g_params, [h.grad for h in handles], self.g_opt)
        return value

    def generate(self) -> Optional[SampleSet]:
        points = forward(self.g_spec, self.g_params, self.metric_z)
        if not np.all(np.isfinite(points)):
            return None
        return SampleSet(points, seed=self.config.seed)

    def _metrics(self, cycle: int, d_loss: float, g_loss: float, ln_zb: float, ms: float) -> TrainLogRecord:
        samples = self.generate()
        if samples is None:
            return TrainLogRecord(cycle, d_loss, g_loss, ln_zb, 0, 0.0, math.nan, ms)
        report = mode_report(samples, self.mixture)
        js = histogram_js(samples, self.reference, bounds=self.bounds)
        return TrainLogRecord(cycle, d_loss, g_loss, ln_zb, report.covered, report.hq_fraction, js, ms)

    def run(self) -> RunArtifacts:
        cfg = self.config
        log: List[TrainLogRecord] = []
        logger.info(
            f"[Trainer] start variant={cfg.loss_variant} seed={cfg.seed} "
            f"ratio={cfg.d_steps}:{cfg.g_steps} cycles={cfg.total_cycles}"
        )
        last_tick = time.perf_counter()
        diverged = False

        for cycle in range(1, cfg.total_cycles + 1):
            d_loss = ln_zb = g_loss = math.nan
            for _ in range(cfg.d_steps):
                d_loss, ln_zb = self.d_step()
                if not math.isfinite(d_loss):
                    break
            if math.isfinite(d_loss):
                for _ in range(cfg.g_steps):
                    g_loss = self.g_step()
                    if not math.isfinite(g_loss):
                        break
            diverged = not (math.isfinite(d_loss) and math.isfinite(g_loss))

            if diverged or cycle % cfg.metrics_every == 0 or cycle == cfg.total_cycles:
                now = time.perf_counter()
                rec = self._metrics(cycle, d_loss, g_loss, ln_zb, (now - last_tick) * 1000.0)
                last_tick = now
                log.append(rec)
                logger.debug(
                    f"[Trainer] cycle {cycle}: d={rec.d_loss:.5f} g={rec.g_loss:.5f} "
                    f"coverage={rec.coverage}/{self.mixture.n_modes} js={rec.hist_js:.4f}"
                )
            if diverged:
                logger.warning(f"[Trainer] non-finite loss at cycle {cycle}, halting run")
                break

        samples = self.generate() or SampleSet(np.zeros((0, 2)), seed=cfg.seed)
        verdict = decide_verdict(log, self.mixture.n_modes)
        artifacts = RunArtifacts(
            config=cfg,
            d_params=self.d_params,
            g_params=self.g_params,
            log=log,
            samples=samples,
            reference=self.reference,
            verdict=verdict,
            saturated_at=find_saturation(log, cfg),
            n_modes=self.mixture.n_modes,
        )
        logger.info(
            f"[Trainer] done variant={cfg.loss_variant} seed={cfg.seed} verdict={verdict} "
            f"coverage={log[-1].coverage if log else 0}/{self.mixture.n_modes}"
        )
        return artifacts


def train(config: TrainConfig) -> RunArtifacts:
    return Trainer(config).run()


def write_artifacts(
    artifacts: RunArtifacts,
    out_dir: Union[str, os.PathLike],
    include_timing: bool = False,
) -> str:
    """config.json, checkpoint.json, log.csv, samples.csv, scatter.svg, summary.json."""
    os.makedirs(out_dir, exist_ok=True)
    cfg = artifacts.config
    with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2)
    save_checkpoint(
        os.path.join(out_dir, "checkpoint.json"),
        {"discriminator": (cfg.d_spec, artifacts.d_params), "generator": (cfg.g_spec, artifacts.g_params)},
    )
    write_log_csv(os.path.join(out_dir, "log.csv"), artifacts.log, include_timing=include_timing)
    artifacts.samples.to_csv(os.path.join(out_dir, "samples.csv"))
    write_scatter_svg(
        os.path.join(out_dir, "scatter.svg"),
        artifacts.reference,
        artifacts.samples,
        title=f"{cfg.loss_variant} seed={cfg.seed} verdict={artifacts.verdict}",
    )
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(artifacts.summary(), fh, indent=2)
    return str(out_dir)
