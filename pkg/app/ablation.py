# ───────────────────────────────────────────────────────────────────────────────
# app/ablation.py
"""
Side-by-side comparison of the softmax and baseline variants.

A preset fixes everything except the loss variant; both variants are trained
on the same seeds and the results are keyed by (variant, seed), so the order in
which parallel workers finish does not matter. Finished runs go to the run
registry (app.storage) and a report can be rebuilt from it later.
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

from app.core import ConfigError
from app.storage import Storage, store
from app.train import LOSS_VARIANTS, PRESETS, RunArtifacts, TrainConfig, train, write_artifacts

logger = logging.getLogger(__name__)

DEFAULT_SEEDS = (0, 1, 2)


@dataclass
class AblationEntry:
    """Final metrics of one (variant, seed) run."""
    variant: str
    seed: int
    verdict: str
    coverage: int
    n_modes: int
    hq_fraction: Optional[float]
    hist_js: Optional[float]
    d_loss: Optional[float]
    g_loss: Optional[float]
    saturated_at: Optional[int]

    @classmethod
    def from_artifacts(cls, artifacts: RunArtifacts) -> "AblationEntry":
        summary = artifacts.summary()
        return cls(
            variant=artifacts.config.loss_variant,
            seed=artifacts.config.seed,
            verdict=artifacts.verdict,
            coverage=summary["final_coverage"],
            n_modes=artifacts.n_modes,
            hq_fraction=summary["final_hq_fraction"],
            hist_js=summary["final_hist_js"],
            d_loss=summary["final_d_loss"],
            g_loss=summary["final_g_loss"],
            saturated_at=artifacts.saturated_at,
        )


@dataclass
class AblationReport:
    preset: str
    entries: Dict[Tuple[str, int], AblationEntry] = field(default_factory=dict)

    def add(self, entry: AblationEntry) -> None:
        self.entries[(entry.variant, entry.seed)] = entry

    @property
    def seeds(self) -> List[int]:
        return sorted({seed for _, seed in self.entries})

    def variant_entries(self, variant: str) -> List[AblationEntry]:
        return [self.entries[k] for k in sorted(self.entries) if k[0] == variant]

    def mean_coverage(self, variant: str) -> float:
        entries = self.variant_entries(variant)
        if not entries:
            return 0.0
        return sum(e.coverage for e in entries) / len(entries)

    def verdict_counts(self, variant: str) -> Dict[str, int]:
        counts: Dict[str, int] = {}
        for e in self.variant_entries(variant):
            counts[e.verdict] = counts.get(e.verdict, 0) + 1
        return counts

    def to_dict(self) -> Dict[str, Any]:
        return {
            "preset": self.preset,
            "seeds": self.seeds,
            "runs": [asdict(self.entries[k]) for k in sorted(self.entries)],
            "mean_coverage": {v: self.mean_coverage(v) for v in LOSS_VARIANTS},
            "verdicts": {v: self.verdict_counts(v) for v in LOSS_VARIANTS},
        }

    def format_table(self) -> str:
        """Seeds as rows, one coverage/verdict column pair per variant."""
        lines = [f"preset: {self.preset}"]
        header = f"{'seed':>6}"
        for v in LOSS_VARIANTS:
            header += f" | {v + ' cov':>14} {v + ' verdict':>18}"
        lines.append(header)
        lines.append("-" * len(header))
        for seed in self.seeds:
            row = f"{seed:>6}"
            for v in LOSS_VARIANTS:
                e = self.entries.get((v, seed))
                if e is None:
                    row += f" | {'-':>14} {'-':>18}"
                else:
                    row += f" | {f'{e.coverage}/{e.n_modes}':>14} {e.verdict:>18}"
            lines.append(row)
        lines.append("-" * len(header))
        mean = f"{'mean':>6}"
        for v in LOSS_VARIANTS:
            mean += f" | {self.mean_coverage(v):>14.2f} {'':>18}"
        lines.append(mean)
        return "\n".join(lines)


def preset_configs(preset: str, seeds: Sequence[int], **overrides: Any) -> List[TrainConfig]:
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset '{preset}', choose from {sorted(PRESETS)}", field="preset")
    return [
        TrainConfig.from_preset(preset, seed, **{**overrides, "loss_variant": variant})
        for variant in LOSS_VARIANTS
        for seed in seeds
    ]


def _run_one(config: TrainConfig, out_dir: Optional[str]) -> AblationEntry:
    artifacts = train(config)
    if out_dir is not None:
        write_artifacts(artifacts, os.path.join(out_dir, f"{config.loss_variant}-seed{config.seed}"))
    return AblationEntry.from_artifacts(artifacts)


def run_ablation(
    preset: str,
    seeds: Sequence[int] = DEFAULT_SEEDS,
    workers: Optional[int] = None,
    out_dir: Optional[str] = None,
    storage: Optional[Storage] = None,
    record: bool = True,
    **overrides: Any,
) -> AblationReport:
    """Train both variants under `preset` for every seed.

    `overrides` replace preset fields (e.g. total_cycles for short runs).
    `workers` defaults to GAN_WORKERS; each run is single-threaded either way.
    """
    configs = preset_configs(preset, seeds, **overrides)
    workers = workers if workers is not None else int(os.getenv("GAN_WORKERS", "1"))
    logger.info(f"[Ablation] preset={preset} runs={len(configs)} workers={workers}")

    report = AblationReport(preset=preset)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for entry in pool.map(_run_one, configs, [out_dir] * len(configs)):
                report.add(entry)
    else:
        for config in configs:
            report.add(_run_one(config, out_dir))

    if record:
        db = storage or store
        by_key = {(c.loss_variant, c.seed): c for c in configs}
        for key, entry in report.entries.items():
            db.record_run(
                preset=preset,
                variant=entry.variant,
                seed=entry.seed,
                config=by_key[key].to_dict(),
                verdict=entry.verdict,
                coverage=entry.coverage,
                n_modes=entry.n_modes,
                hq_fraction=entry.hq_fraction,
                hist_js=entry.hist_js,
                d_loss=entry.d_loss,
                g_loss=entry.g_loss,
                saturated_at=entry.saturated_at,
            )

    for v in LOSS_VARIANTS:
        logger.info(f"[Ablation] {preset} {v}: mean coverage {report.mean_coverage(v):.2f}")
    return report


def report_from_storage(preset: str, storage: Optional[Storage] = None) -> AblationReport:
    """Rebuild a report from the registry (the latest row per variant/seed wins)."""
    report = AblationReport(preset=preset)
    for row in (storage or store).list_runs(preset=preset):
        report.add(
            AblationEntry(
                variant=row["variant"],
                seed=row["seed"],
                verdict=row["verdict"],
                coverage=row["coverage"],
                n_modes=row["n_modes"],
                hq_fraction=row["hq_fraction"],
                hist_js=row["hist_js"],
                d_loss=row["d_loss"],
                g_loss=row["g_loss"],
                saturated_at=row["saturated_at"],
            )
        )
    return report


def coverage_drop(report_ratio_5_1: AblationReport, report_ratio_1_5: AblationReport) -> Dict[str, float]:
    """Per variant: mean coverage at 5:1 minus mean coverage at 1:5."""
    return {
        v: report_ratio_5_1.mean_coverage(v) - report_ratio_1_5.mean_coverage(v)
        for v in LOSS_VARIANTS
    }
