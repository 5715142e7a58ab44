"""FGSM, PGD and smooth adversarial perturbation (SAP) attacks.

All attacks are white-box and use the classifier's analytic input gradient.
``sign(0)`` is 0 throughout, so coordinates with a vanishing gradient are
left untouched by a step.

Internally every attack works on a ``(batch, length)`` array of signals and
their perturbations; the single-signal functions are thin wrappers.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from smoothadv.data import Dataset, RhythmClass, fit_length
from smoothadv.kernels import KernelBank, bank_smooth, bank_smooth_adjoint, second_difference
from smoothadv.metrics import smoothness_stats, success_rate
from smoothadv.nn import Classifier

logger = logging.getLogger(__name__)

METHODS = ("fgsm", "pgd", "sap")


@dataclass(frozen=True)
class AttackConfig:
    """Budget and schedule of an iterative attack.

    ``steps`` is T of the main loop.  For SAP the perturbation parameter is
    first initialized by ``init_steps`` PGD iterations on the input, then
    ``steps`` iterations run on the parameter itself.  ``target`` switches to
    a targeted attack that descends the loss of that class.
    """

    epsilon: float = 10.0
    alpha: float = 1.0
    steps: int = 20
    init_steps: int = 20
    target: Optional[RhythmClass] = None

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not 0 < self.alpha <= self.epsilon:
            raise ValueError(f"need 0 < alpha <= epsilon, got alpha={self.alpha}, epsilon={self.epsilon}")
        if self.steps < 1 or self.init_steps < 0:
            raise ValueError("steps must be >= 1 and init_steps >= 0")

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "alpha": self.alpha,
            "steps": self.steps,
            "init_steps": self.init_steps,
            "target": None if self.target is None else self.target.value,
        }


PGD_DEFAULTS = AttackConfig(epsilon=10.0, alpha=1.0, steps=20)
SAP_DEFAULTS = AttackConfig(epsilon=10.0, alpha=1.0, steps=40, init_steps=20)


@dataclass
class AttackResult:
    original: np.ndarray
    adversarial: np.ndarray
    perturbation: np.ndarray
    label: RhythmClass
    pred_before: tuple
    pred_after: tuple
    success: bool
    linf_norm: float
    max_second_diff: float
    method: str = ""
    id: str = ""
    target: Optional[RhythmClass] = None
    theta: Optional[np.ndarray] = None  # SAP only: the unsmoothed parameter
    error: Optional[str] = None
    trajectory: Optional[list] = field(default=None, repr=False)

    @property
    def eligible(self) -> bool:
        """Counts toward the success rate: the model was right before the attack."""
        return self.error is None and self.pred_before[0] is self.label

    def to_record(self) -> dict:
        def pred(p):
            conf = p[1] if np.isfinite(p[1]) else None
            return {"label": p[0].value, "confidence": conf}

        return {
            "id": self.id,
            "method": self.method,
            "label": self.label.value,
            "target": None if self.target is None else self.target.value,
            "pred_before": pred(self.pred_before),
            "pred_after": pred(self.pred_after),
            "eligible": self.eligible,
            "success": self.success,
            "linf_norm": self.linf_norm,
            "max_second_diff": self.max_second_diff,
            "error": self.error,
            "original": self.original.tolist(),
            "adversarial": self.adversarial.tolist(),
            "perturbation": self.perturbation.tolist(),
            "theta": None if self.theta is None else self.theta.tolist(),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "AttackResult":
        def pred(p):
            conf = p["confidence"]
            return (RhythmClass.parse(p["label"]), float("nan") if conf is None else float(conf))

        return cls(
            original=np.asarray(rec["original"], dtype=np.float64),
            adversarial=np.asarray(rec["adversarial"], dtype=np.float64),
            perturbation=np.asarray(rec["perturbation"], dtype=np.float64),
            label=RhythmClass.parse(rec["label"]),
            pred_before=pred(rec["pred_before"]),
            pred_after=pred(rec["pred_after"]),
            success=bool(rec["success"]),
            linf_norm=float(rec["linf_norm"]),
            max_second_diff=float(rec["max_second_diff"]),
            method=rec.get("method", ""),
            id=rec.get("id", ""),
            target=None if rec.get("target") is None else RhythmClass.parse(rec["target"]),
            theta=None if rec.get("theta") is None else np.asarray(rec["theta"], dtype=np.float64),
            error=rec.get("error"),
        )


def clip_inf(value, center, epsilon) -> np.ndarray:
    """Project ``value`` onto the infinity-norm ball of radius ``epsilon`` around ``center``."""
    value = np.asarray(value, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    if value.shape != center.shape and center.ndim != 0:
        raise ValueError(f"length mismatch: {value.shape} vs {center.shape}")
    return np.clip(value, center - epsilon, center + epsilon)


# -- batched cores -----------------------------------------------------------


def _goal(labels: np.ndarray, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Class whose loss drives each example and the step direction (+1 ascend, -1 descend)."""
    targeted = targets >= 0
    return np.where(targeted, targets, labels), np.where(targeted, -1.0, 1.0)[:, None]


def _pgd_core(model: Classifier, x: np.ndarray, labels, targets, cfg: AttackConfig, steps: int,
              delta: np.ndarray | None = None, record: list | None = None) -> np.ndarray:
    cls, direction = _goal(labels, targets)
    delta = np.zeros_like(x) if delta is None else delta.copy()
    for _ in range(steps):
        g = model.grad_input(x + delta, cls)
        delta = clip_inf(delta + direction * cfg.alpha * np.sign(g), 0.0, cfg.epsilon)
        if record is not None:
            record.append(delta.copy())
    return delta


def _sap_core(model: Classifier, x: np.ndarray, labels, targets, cfg: AttackConfig, bank: KernelBank,
              record: list | None = None) -> np.ndarray:
    cls, direction = _goal(labels, targets)
    theta = _pgd_core(model, x, labels, targets, cfg, cfg.init_steps, record=record)
    for _ in range(cfg.steps):
        g_x = model.grad_input(x + bank_smooth(theta, bank), cls)
        g_theta = bank_smooth_adjoint(g_x, bank)
        theta = clip_inf(theta + direction * cfg.alpha * np.sign(g_theta), 0.0, cfg.epsilon)
        if record is not None:
            record.append(theta.copy())
    return theta


def sap_theta_gradient(model: Classifier, x, y, theta, bank: KernelBank) -> np.ndarray:
    """Gradient of ``loss(f(x + bank_smooth(theta)), y)`` with respect to ``theta``."""
    x = np.asarray(x, dtype=np.float64)
    g_x = model.grad_input(x + bank_smooth(theta, bank), y)
    return bank_smooth_adjoint(g_x, bank)


def _results(model: Classifier, method: str, x: np.ndarray, pert: np.ndarray, labels, targets,
             ids: Sequence[str], theta: np.ndarray | None = None) -> list[AttackResult]:
    adv = x + pert
    k0, c0 = model.predict_batch(x)
    k1, c1 = model.predict_batch(adv)
    out = []
    for b in range(len(x)):
        label = RhythmClass.from_index(labels[b])
        target = RhythmClass.from_index(targets[b]) if targets[b] >= 0 else None
        after = RhythmClass.from_index(k1[b])
        success = after is target if target is not None else after is not label
        out.append(
            AttackResult(
                original=x[b].copy(),
                adversarial=adv[b].copy(),
                perturbation=pert[b].copy(),
                label=label,
                pred_before=(RhythmClass.from_index(k0[b]), float(c0[b])),
                pred_after=(after, float(c1[b])),
                success=bool(success),
                linf_norm=float(np.max(np.abs(adv[b] - x[b]))),
                max_second_diff=float(np.max(np.abs(second_difference(pert[b])), initial=0.0)),
                method=method,
                id=ids[b],
                target=target,
                theta=None if theta is None else theta[b].copy(),
            )
        )
    return out


def _prepare(model: Classifier, x, y, target):
    x = fit_length(np.asarray(getattr(x, "samples", x), dtype=np.float64), model.input_length)[None, :]
    labels = np.array([RhythmClass.parse(y).index])
    targets = np.array([-1 if target is None else RhythmClass.parse(target).index])
    return x, labels, targets


# -- single-signal API -------------------------------------------------------


def fgsm(model: Classifier, x, y, epsilon: float, target: RhythmClass | None = None) -> AttackResult:
    """One signed-gradient step of size ``epsilon``; no projection needed."""
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    xb, labels, targets = _prepare(model, x, y, target)
    cls, direction = _goal(labels, targets)
    pert = direction * epsilon * np.sign(model.grad_input(xb, cls))
    return _results(model, "fgsm", xb, pert, labels, targets, [""])[0]


def pgd(model: Classifier, x, y, cfg: AttackConfig = PGD_DEFAULTS, record: bool = False) -> AttackResult:
    """``cfg.steps`` projected signed-gradient steps starting from ``x``."""
    xb, labels, targets = _prepare(model, x, y, cfg.target)
    traj: list | None = [] if record else None
    delta = _pgd_core(model, xb, labels, targets, cfg, cfg.steps, record=traj)
    res = _results(model, "pgd", xb, delta, labels, targets, [""])[0]
    if record:
        res.trajectory = [d[0] for d in traj]
    return res


def sap(model: Classifier, x, y, cfg: AttackConfig = SAP_DEFAULTS, bank: KernelBank | None = None,
        record: bool = False) -> AttackResult:
    """Smooth adversarial perturbation.

    The optimized variable is ``theta``; the signal seen by the model is
    ``x + bank_smooth(theta)``, and ``theta`` is clipped to the ball around 0.
    With ``record=True`` the result carries the list of iterates: the
    ``init_steps`` PGD perturbations followed by the ``steps`` theta values.
    """
    bank = bank or KernelBank.default()
    xb, labels, targets = _prepare(model, x, y, cfg.target)
    traj: list | None = [] if record else None
    theta = _sap_core(model, xb, labels, targets, cfg, bank, record=traj)
    res = _results(model, "sap", xb, bank_smooth(theta, bank), labels, targets, [""], theta=theta)[0]
    if record:
        res.trajectory = [d[0] for d in traj]
    return res


# -- campaigns ---------------------------------------------------------------


def campaign_target(label: RhythmClass) -> RhythmClass | None:
    """AF is pushed to Normal; every other class is attacked untargeted."""
    return RhythmClass.NORMAL if label is RhythmClass.AF else None


def _run_batch(model, method, x, labels, targets, ids, cfg, bank) -> list[AttackResult]:
    if method == "fgsm":
        cls, direction = _goal(labels, targets)
        pert = direction * cfg.epsilon * np.sign(model.grad_input(x, cls))
        return _results(model, method, x, pert, labels, targets, ids)
    if method == "pgd":
        delta = _pgd_core(model, x, labels, targets, cfg, cfg.steps)
        return _results(model, method, x, delta, labels, targets, ids)
    theta = _sap_core(model, x, labels, targets, cfg, bank)
    return _results(model, method, x, bank_smooth(theta, bank), labels, targets, ids, theta=theta)


def _failed(x: np.ndarray, label: RhythmClass, ex_id: str, method: str, err: Exception) -> AttackResult:
    nan_pred = (label, float("nan"))
    return AttackResult(
        original=x, adversarial=x.copy(), perturbation=np.zeros_like(x), label=label,
        pred_before=nan_pred, pred_after=nan_pred, success=False, linf_norm=0.0,
        max_second_diff=0.0, method=method, id=ex_id, error=f"{type(err).__name__}: {err}",
    )


def attack_campaign(model: Classifier, dataset: Dataset, method: str, cfg: AttackConfig | None = None,
                    bank: KernelBank | None = None, chunk_size: int = 64,
                    progress: Callable[[int, int], None] | None = None) -> tuple[list[AttackResult], dict]:
    """Attack every example of ``dataset`` and summarize.

    Targets follow :func:`campaign_target`; ``cfg.target`` is ignored.  Only
    examples the model classifies correctly beforehand count toward the
    success rate.  An example whose attack raises is recorded with ``error``
    set instead of aborting the campaign.
    """
    if method not in METHODS:
        raise ValueError(f"unknown attack method {method!r}; choose from {METHODS}")
    if cfg is None:
        cfg = SAP_DEFAULTS if method == "sap" else PGD_DEFAULTS
    cfg = replace(cfg, target=None)
    if method == "sap" and bank is None:
        bank = KernelBank.default()
    x, labels = dataset.arrays(model.input_length)
    targets = np.array([-1 if (t := campaign_target(ex.label)) is None else t.index for ex in dataset])
    ids = [ex.id for ex in dataset]
    results: list[AttackResult] = []
    for start in range(0, len(ids), chunk_size):
        sl = slice(start, start + chunk_size)
        try:
            results += _run_batch(model, method, x[sl], labels[sl], targets[sl], ids[sl], cfg, bank)
        except (FloatingPointError, ValueError, ArithmeticError) as err:
            logger.warning("batch at %d failed (%s); retrying per example", start, err)
            for b in range(*sl.indices(len(ids))):
                try:
                    results += _run_batch(model, method, x[b : b + 1], labels[b : b + 1], targets[b : b + 1],
                                          ids[b : b + 1], cfg, bank)
                except (FloatingPointError, ValueError, ArithmeticError) as err1:
                    results.append(_failed(x[b], RhythmClass.from_index(labels[b]), ids[b], method, err1))
        if progress is not None:
            progress(len(results), len(ids))
    return results, summarize(method, cfg, bank, results)


def summarize(method: str, cfg: AttackConfig, bank: KernelBank | None, results: Sequence[AttackResult]) -> dict:
    rate = success_rate(results)
    config = cfg.to_dict()
    if method == "sap" and bank is not None:
        config["kernel_sizes"] = bank.sizes
        config["kernel_sigmas"] = bank.sigmas
    return {
        "method": method,
        "config": config,
        "n_examples": len(results),
        "n_eligible": rate.n_eligible,
        "n_success": rate.n_success,
        "success_rate": rate.rate,
        "smoothness_stats": smoothness_stats(results),
    }
