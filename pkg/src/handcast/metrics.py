"""ADE / FDE on wrists, wrist-relative MPJPE / MPJPE-F, strata and reports."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import JOINTS_PER_HAND, WRISTS

REPORT_VERSION = 1


@dataclass
class SampleMetrics:
    """Per-sample error sums and eligible-term counts (for exact pooling)."""

    sample_id: str
    ade_sum: float = 0.0
    ade_n: int = 0
    fde_sum: float = 0.0
    fde_n: int = 0
    mpjpe_sum: float = 0.0
    mpjpe_n: int = 0
    mpjpe_f_sum: float = 0.0
    mpjpe_f_n: int = 0
    egomotion: float = 0.0


def _mean(s: float, n: int) -> float | None:
    return s / n if n else None


def _check(pred, gt, mask):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if pred.shape != gt.shape or pred.ndim != 3 or mask.shape != pred.shape[:2]:
        raise ValueError(f"shape mismatch: pred {pred.shape}, gt {gt.shape}, mask {mask.shape}")
    return pred, gt, mask


def _wrist_terms(pred, gt, mask):
    w = list(WRISTS)
    disp = np.linalg.norm(pred[:, w] - gt[:, w], axis=-1)  # (T, 2)
    return np.where(mask[:, w], disp, 0.0), mask[:, w]


def trajectory_errors(pred, gt, mask):
    """Wrist ADE and FDE, each None when no wrist-frame is valid.

    ADE averages every valid (wrist, frame) displacement jointly; FDE
    averages the wrists valid at the last frame.
    """
    pred, gt, mask = _check(pred, gt, mask)
    disp, valid = _wrist_terms(pred, gt, mask)
    n, nf = int(valid.sum()), int(valid[-1].sum())
    counts = {"wrist_frames": n, "final_wrists": nf}
    return _mean(float(disp.sum()), n), _mean(float(disp[-1].sum()), nf), counts


def _pose_terms(pred, gt, mask):
    errs, elig = [], []
    for w in WRISTS:
        fingers = slice(w + 1, w + JOINTS_PER_HAND)
        r = (pred[:, fingers] - pred[:, w:w + 1]) - (gt[:, fingers] - gt[:, w:w + 1])
        e = mask[:, fingers] & mask[:, w:w + 1]
        errs.append(np.where(e, np.linalg.norm(np.where(e[..., None], r, 0.0), axis=-1), 0.0))
        elig.append(e)
    return np.concatenate(errs, axis=1), np.concatenate(elig, axis=1)  # (T, 40)


def pose_errors(pred, gt, mask):
    """Wrist-relative MPJPE over all frames and at the final frame.

    Wrist joints are excluded (their wrist-relative error is identically 0).
    """
    pred, gt, mask = _check(pred, gt, mask)
    err, elig = _pose_terms(pred, gt, mask)
    n, nf = int(elig.sum()), int(elig[-1].sum())
    counts = {"joint_frames": n, "final_joints": nf}
    return _mean(float(err.sum()), n), _mean(float(err[-1].sum()), nf), counts


def sample_metrics(sample_id: str, pred, gt, mask, egomotion: float = 0.0) -> SampleMetrics:
    pred, gt, mask = _check(pred, gt, mask)
    disp, valid = _wrist_terms(pred, gt, mask)
    err, elig = _pose_terms(pred, gt, mask)
    return SampleMetrics(
        sample_id,
        ade_sum=float(disp.sum()), ade_n=int(valid.sum()),
        fde_sum=float(disp[-1].sum()), fde_n=int(valid[-1].sum()),
        mpjpe_sum=float(err.sum()), mpjpe_n=int(elig.sum()),
        mpjpe_f_sum=float(err[-1].sum()), mpjpe_f_n=int(elig[-1].sum()),
        egomotion=float(egomotion),
    )


def stratify_top_fraction(scores: dict[str, float], fraction: float) -> list[str]:
    """The ceil(fraction * N) highest-scoring ids; ties go to the smaller id."""
    if not scores:
        raise ValueError("cannot stratify an empty score map")
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    k = math.ceil(fraction * len(scores) - 1e-12)
    ranked = sorted(scores, key=lambda sid: (-scores[sid], sid))
    return ranked[:k]


@dataclass
class Report:
    ade: float | None
    fde: float | None
    mpjpe: float | None
    mpjpe_f: float | None
    n_samples: int
    n_valid_wrist_frames: int
    n_valid_joint_frames: int
    strata: dict[str, "Report"] = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("strata", "config")}
        d["strata"] = {name: r.to_dict() for name, r in self.strata.items()}
        d["config"] = self.config
        d["report_version"] = REPORT_VERSION
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "Report":
        strata = {k: cls.from_dict(v) for k, v in d.get("strata", {}).items()}
        fields = ("ade", "fde", "mpjpe", "mpjpe_f", "n_samples", "n_valid_wrist_frames", "n_valid_joint_frames")
        return cls(**{k: d[k] for k in fields}, strata=strata, config=d.get("config", {}))


def _pool(items: list[SampleMetrics], averaging: str) -> dict:
    out = {}
    for name in ("ade", "fde", "mpjpe", "mpjpe_f"):
        if averaging == "micro":
            s = sum(getattr(m, f"{name}_sum") for m in items)
            n = sum(getattr(m, f"{name}_n") for m in items)
            out[name] = _mean(s, n)
        elif averaging == "macro":
            vals = [getattr(m, f"{name}_sum") / getattr(m, f"{name}_n") for m in items if getattr(m, f"{name}_n")]
            out[name] = float(np.mean(vals)) if vals else None
        else:
            raise ValueError(f"unknown averaging {averaging!r}")
    return out


def aggregate_report(per_sample: list[SampleMetrics], strata: dict[str, list[str]] | None = None,
                     averaging: str = "micro", config: dict | None = None) -> Report:
    """Pool per-sample sums (micro: every eligible term weighs equally).

    ``strata`` maps a stratum name to member sample ids; each stratum is the
    same aggregation restricted to its members.
    """
    items = sorted(per_sample, key=lambda m: m.sample_id)
    pooled = _pool(items, averaging)
    report = Report(
        **pooled, n_samples=len(items),
        n_valid_wrist_frames=sum(m.ade_n for m in items),
        n_valid_joint_frames=sum(m.mpjpe_n for m in items),
        config=dict(config or {}, averaging=averaging, wrists_in_mpjpe=False),
    )
    for name, members in (strata or {}).items():
        keep = set(members)
        report.strata[name] = aggregate_report([m for m in items if m.sample_id in keep],
                                               averaging=averaging, config={"stratum": name})
    return report


def egomotion_strata(per_sample: list[SampleMetrics], fraction: float) -> dict[str, list[str]]:
    """{"top<percent>": highest-egomotion ids, "all": every id}; 0.1 gives "top10"."""
    scores = {m.sample_id: m.egomotion for m in per_sample}
    return {f"top{fraction * 100:g}": stratify_top_fraction(scores, fraction), "all": sorted(scores)}
