"""
Empirical audit of the standing assumptions and of the case arithmetic of
the exponential-law theorem.

Every assumption is probed numerically on a finite realisation ensemble and
graded pass/warn/fail. The fitted exponents then feed ``theorem_case_check``,
which evaluates the inequalities of cases A, B and C.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from quench.core.driving import DrivingConfig, Realisation, sample_realisations
from quench.core.law import centered_tent, correlation_decay
from quench.core.maps import (
    MapSystem,
    diameter_envelope,
    distortion_exponent,
    distortion_profile,
)
from quench.core.measures import annulus_ratio, k_ratio_audit, scaling_audit
from quench.core.report import (
    ASSUMPTION_IDS,
    AssumptionEntry,
    AssumptionReport,
    Status,
    grade,
)
from quench.core.transfer import DensityGrid, quenched_density
from quench.utils.counter import counter_uniform
from quench.utils.fitting import is_superpolynomial, loglog_fit

logger = logging.getLogger(__name__)

STREAM_AUDIT_CENTERS = 0x41554443

# Allowed shortfall of the fitted xi below the fitted beta
FIT_TOLERANCE = 0.1

# Upper end of the parameter range in which the intermittent family is covered
PM_ALPHA_LIMIT = 1.0 / 3.0


class AuditError(RuntimeError):
    """Raised when a sub-audit fails; carries the assumption id and the original error as __cause__."""

    def __init__(self, assumption_id: str, message: str):
        super().__init__(f"Assumption {assumption_id}: {message}")
        self.assumption_id = assumption_id


@dataclass(frozen=True)
class AuditBudgets:
    """Ensemble sizes, grids and fit ranges of one audit run."""

    n_omega: int = 32
    bins: int = 2 ** 12
    n_pull: int = 100
    lags: Tuple[int, ...] = (1, 2, 4, 8, 16, 32, 64, 128)
    rhos: Tuple[float, ...] = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3)
    n_centers: int = 16
    margin: float = 0.05
    diameter_depth: int = 14
    diameter_fit: Tuple[int, int] = (2, 14)
    diameter_omega: int = 4
    distortion_depth: int = 10
    distortion_omega: int = 4
    annulus_rhos: Tuple[float, ...] = (1e-2, 1e-3)
    annulus_fractions: Tuple[float, ...] = (0.5, 0.25, 0.125, 0.0625)
    k_ratio_rho: float = 1e-3
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        for name in ("lags", "rhos", "diameter_fit", "annulus_rhos", "annulus_fractions"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(self, "lags", tuple(int(k) for k in self.lags))
        object.__setattr__(self, "diameter_fit", tuple(int(n) for n in self.diameter_fit))
        counts = ("n_omega", "bins", "n_pull", "n_centers", "diameter_depth", "diameter_omega",
                  "distortion_depth", "distortion_omega", "threads")
        for name in counts:
            if getattr(self, name) < 1:
                raise ValueError(f"audit.{name} must be >= 1, got {getattr(self, name)}")
        lo, hi = self.diameter_fit
        if not 1 <= lo < hi <= self.diameter_depth:
            raise ValueError(f"audit.diameter_fit must satisfy 1 <= lo < hi <= diameter_depth, got {self.diameter_fit}")
        if not 0 <= self.margin < 0.5:
            raise ValueError(f"audit.margin must lie in [0, 1/2), got {self.margin}")
        if any(not 0 < f < 1 for f in self.annulus_fractions):
            raise ValueError("audit.annulus_fractions must lie in (0, 1)")

    def to_dict(self) -> Dict[str, Any]:
        """Budgets as recorded in reports; the worker count is left out since it never changes results."""
        data = asdict(self)
        data.pop("threads")
        return data


@dataclass(frozen=True)
class SubAudit:
    """Entry plus the exponents one sub-audit contributes."""

    entry: AssumptionEntry
    exponents: Dict[str, float] = field(default_factory=dict)


@dataclass
class AuditContext:
    """Shared read-only inputs of the sub-audits."""

    system: MapSystem
    driving: DrivingConfig
    budgets: AuditBudgets
    realisations: List[Realisation]
    quenched: List[DensityGrid]
    marginal: DensityGrid
    centers: np.ndarray


def constant_realisations(alphabet_size: int) -> List[Realisation]:
    """The constant driving sequences 000..., 111..., and so on."""
    out = []
    for symbol in range(alphabet_size):
        weights = tuple(1.0 if k == symbol else 0.0 for k in range(alphabet_size))
        out.append(Realisation(DrivingConfig(weights)))
    return out


def _decay_exponent(lags: np.ndarray, values: np.ndarray) -> Tuple[float, Optional[Tuple[float, float]], bool]:
    if is_superpolynomial(lags, values):
        return math.inf, (float(lags[0]), float(lags[-1])), True
    fit = loglog_fit(lags, values)
    if fit is None:
        return 0.0, None, False
    return -fit.slope, fit.fit_range, False


def _audit_correlations(ctx: AuditContext, annealed: bool) -> SubAudit:
    b = ctx.budgets
    profile = correlation_decay(ctx.system, ctx.driving, centered_tent, centered_tent, b.lags,
                                b.n_omega if annealed else min(b.n_omega, 4), b.bins, b.n_pull,
                                annealed=annealed)
    p, fit_range, superpoly = _decay_exponent(profile.lags, profile.values)
    key = "p_annealed" if annealed else "p_quenched"
    entry = AssumptionEntry(
        id="I" if annealed else "II",
        status=grade(1.0, p),
        quantities={"p": p, "lambda_first": float(profile.values[0]), "lambda_last": float(profile.values[-1])},
        fit_range=fit_range,
        evidence="correlation decay of centered tent functions, log-log fit over lags",
        note="super-polynomial decay" if superpoly else "",
    )
    return SubAudit(entry, {key: p, f"{key}_superpolynomial": float(superpoly)})


def _audit_scaling(ctx: AuditContext, quenched: bool) -> SubAudit:
    b = ctx.budgets
    if quenched:
        summaries = [scaling_audit(f, ctx.centers, b.rhos) for f in ctx.quenched]
        u0 = min(s.minimum for s in summaries)
        excluded = sum(s.excluded for s in summaries)
        entry = AssumptionEntry(
            id="IV",
            status=grade(0.0, u0),
            quantities={"u0": u0, "excluded": float(excluded)},
            fit_range=summaries[0].rho_range,
            evidence="log-log slope of quenched ball masses, minimum over centers and realisations",
            note="leaf measure identified with the quenched measure on the interval",
        )
        return SubAudit(entry, {"u0": u0})
    summary = scaling_audit(ctx.marginal, ctx.centers, b.rhos)
    entry = AssumptionEntry(
        id="III",
        status=grade(0.0, summary.minimum),
        quantities={"d0": summary.minimum, "d": summary.median, "d1": summary.maximum,
                    "excluded": float(summary.excluded)},
        fit_range=summary.rho_range,
        evidence="log-log slope of marginal ball masses over centers",
    )
    return SubAudit(entry, {"d0": summary.minimum, "d": summary.median, "d1": summary.maximum})


def _audit_distortion(ctx: AuditContext) -> SubAudit:
    b = ctx.budgets
    profiles = [distortion_profile(ctx.system, omega, b.distortion_depth)
                for omega in ctx.realisations[: b.distortion_omega]]
    worst = np.max(profiles, axis=0)
    kappa_prime = distortion_exponent(worst)
    finite = bool(np.isfinite(worst).all())
    entry = AssumptionEntry(
        id="V",
        status=Status.PASS if finite else Status.FAIL,
        quantities={"kappa_prime": kappa_prime, "theta_max": float(worst.max())},
        fit_range=(1.0, float(b.distortion_depth)),
        evidence="derivative ratio over cylinders, endpoints and Chebyshev points",
    )
    return SubAudit(entry, {"kappa_prime": kappa_prime})


def _audit_diameters(ctx: AuditContext) -> SubAudit:
    b = ctx.budgets
    ensemble = constant_realisations(ctx.system.alphabet_size) + ctx.realisations[: b.diameter_omega]
    envelope = diameter_envelope(ctx.system, ensemble, b.diameter_depth)
    lo, hi = b.diameter_fit
    depths = np.arange(lo, hi + 1)
    values = envelope[lo - 1: hi]
    kappa, fit_range, superpoly = _decay_exponent(depths, values)
    if fit_range is None:
        fit_range = (float(lo), float(hi))
    entry = AssumptionEntry(
        id="VI",
        status=grade(1.0, kappa),
        quantities={"kappa": kappa, "delta_last": float(envelope[-1])},
        fit_range=fit_range,
        evidence="maximal cylinder length over constant and sampled realisations",
        note="super-polynomial decay" if superpoly else "",
    )
    return SubAudit(entry, {"kappa": kappa})


def _annulus_fit(ctx: AuditContext, numerators: Sequence[DensityGrid], same_denominator: bool) -> Tuple[float, float]:
    b = ctx.budgets
    rows, targets = [], []
    for rho in b.annulus_rhos:
        for fraction in b.annulus_fractions:
            r = rho * fraction
            worst = 0.0
            for f in numerators:
                denom = f if same_denominator else ctx.marginal
                for x in ctx.centers:
                    worst = max(worst, annulus_ratio(f, denom, float(x), rho, r))
            if worst <= 0:
                continue
            rows.append([1.0, math.log(r), math.log(rho)])
            targets.append(math.log(worst))
    coef, _, _, _ = np.linalg.lstsq(np.array(rows), np.array(targets), rcond=None)
    return float(coef[1]), float(-coef[2])


def _audit_annulus(ctx: AuditContext, conditional: bool) -> SubAudit:
    xi, beta = _annulus_fit(ctx, ctx.quenched, same_denominator=conditional)
    status = grade(0.0, beta)
    if xi < beta - FIT_TOLERANCE:
        status = Status.FAIL
    entry = AssumptionEntry(
        id="IX" if conditional else "VII",
        status=status,
        quantities={"xi": xi, "beta": beta},
        fit_range=(float(min(ctx.budgets.annulus_rhos)), float(max(ctx.budgets.annulus_rhos))),
        evidence="sup of annulus mass ratios, fit log R = c + xi log r - beta log rho",
    )
    suffix = "_conditional" if conditional else ""
    return SubAudit(entry, {f"xi{suffix}": xi, f"beta{suffix}": beta})


def _audit_k_ratio(ctx: AuditContext) -> SubAudit:
    lows, highs = [], []
    for x in ctx.centers:
        low, high = k_ratio_audit(ctx.marginal, ctx.quenched, float(x), ctx.budgets.k_ratio_rho)
        lows.append(low)
        highs.append(high)
    k_hat = max(max(highs), 1.0 / min(lows))
    entry = AssumptionEntry(
        id="VIII",
        status=Status.PASS if math.isfinite(k_hat) else Status.FAIL,
        quantities={"K": k_hat, "min_ratio": min(lows), "max_ratio": max(highs)},
        fit_range=(ctx.budgets.k_ratio_rho, ctx.budgets.k_ratio_rho),
        evidence="marginal over quenched ball masses across the ensemble",
    )
    return SubAudit(entry, {"K": k_hat})


def _audit_centers(budgets: AuditBudgets) -> np.ndarray:
    u = counter_uniform(budgets.seed, STREAM_AUDIT_CENTERS, np.arange(budgets.n_centers, dtype=np.int64))
    return budgets.margin + (1.0 - 2.0 * budgets.margin) * np.atleast_1d(u)


def _build_context(system: MapSystem, driving: DrivingConfig, budgets: AuditBudgets) -> AuditContext:
    realisations = sample_realisations(driving, budgets.n_omega)

    def build(omega: Realisation) -> DensityGrid:
        return quenched_density(system, omega, budgets.n_pull, budgets.bins)

    if budgets.threads > 1:
        with ThreadPoolExecutor(max_workers=budgets.threads) as pool:
            quenched = list(pool.map(build, realisations))
    else:
        quenched = [build(omega) for omega in realisations]
    total = np.zeros(budgets.bins)
    for density in quenched:
        total += density.values
    marginal = DensityGrid.from_values(total / len(quenched))
    return AuditContext(system, driving, budgets, realisations, quenched, marginal, _audit_centers(budgets))


def run_audit(system: MapSystem, driving: DrivingConfig, budgets: AuditBudgets,
              system_info: Optional[Dict[str, Any]] = None) -> AssumptionReport:
    """
    Audit all nine assumptions for a system.

    Sub-audits run concurrently on ``budgets.threads`` workers; the report
    lists them in fixed order.

    Raises:
        AuditError: If a sub-audit fails, with the assumption id attached
    """
    ctx = _build_context(system, driving, budgets)
    tasks: Dict[str, Callable[[], SubAudit]] = {
        "I": lambda: _audit_correlations(ctx, annealed=True),
        "II": lambda: _audit_correlations(ctx, annealed=False),
        "III": lambda: _audit_scaling(ctx, quenched=False),
        "IV": lambda: _audit_scaling(ctx, quenched=True),
        "V": lambda: _audit_distortion(ctx),
        "VI": lambda: _audit_diameters(ctx),
        "VII": lambda: _audit_annulus(ctx, conditional=False),
        "VIII": lambda: _audit_k_ratio(ctx),
        "IX": lambda: _audit_annulus(ctx, conditional=True),
    }
    with ThreadPoolExecutor(max_workers=budgets.threads) as pool:
        futures = {aid: pool.submit(task) for aid, task in tasks.items()}
        results = {}
        for aid in ASSUMPTION_IDS:
            try:
                results[aid] = futures[aid].result()
            except Exception as e:
                logger.error(f"Sub-audit for assumption {aid} failed: {e}")
                raise AuditError(aid, str(e)) from e
    exponents: Dict[str, float] = {}
    for aid in ASSUMPTION_IDS:
        exponents.update(results[aid].exponents)
    exponents["p"] = min(exponents["p_annealed"], exponents["p_quenched"])
    annealed_super = exponents.pop("p_annealed_superpolynomial")
    quenched_super = exponents.pop("p_quenched_superpolynomial")
    exponents["lambda_superpolynomial"] = float(bool(annealed_super and quenched_super))
    exponents["delta_superpolynomial"] = float(math.isinf(exponents["kappa"]))
    info = dict(system_info or {})
    info.setdefault("alphabet_size", system.alphabet_size)
    info.setdefault("weights", tuple(driving.weights))
    return AssumptionReport(
        system=info,
        entries=tuple(results[aid].entry for aid in ASSUMPTION_IDS),
        exponents=exponents,
        budgets=budgets.to_dict(),
    )


@dataclass(frozen=True)
class LedgerLine:
    """One inequality lhs < rhs of the case check, with both sides."""

    case: str
    label: str
    lhs: float
    rhs: float

    @property
    def holds(self) -> bool:
        return self.lhs < self.rhs

    def to_dict(self) -> Dict[str, Any]:
        return {"case": self.case, "label": self.label, "lhs": self.lhs, "rhs": self.rhs, "holds": self.holds}


@dataclass(frozen=True)
class CaseVerdict:
    """Strongest satisfied case, every satisfied case and the full ledger."""

    verdict: str
    satisfied: Tuple[str, ...]
    ledger: Tuple[LedgerLine, ...]
    precondition_ok: bool = True

    def to_dict(self) -> Dict[str, Any]:
        return {
            "verdict": self.verdict,
            "satisfied": list(self.satisfied),
            "precondition_ok": self.precondition_ok,
            "ledger": [line.to_dict() for line in self.ledger],
        }


def _ratio(num: float, den: float) -> float:
    if math.isinf(den):
        return 0.0
    return num / den if den > 0 else math.inf


def theorem_case_check(report: AssumptionReport) -> CaseVerdict:
    """
    Evaluate the case A/B/C inequalities on the fitted exponents.

    Infinite kappa or p stands for super-polynomial decay. Case A needs both
    decays polynomial, case B a super-polynomial delta with polynomial lambda
    and case C both super-polynomial. The verdict is the
    first satisfied case in the order C, B, A; ``satisfied`` lists all of
    them. For the intermittent family the parameter range alpha_0 < alpha_1
    < 1/3 is a precondition: outside it the verdict is "none".

    Raises:
        ReportError: If an exponent the ledger needs is missing
    """
    kappa = report.exponent("kappa")
    p = report.exponent("p")
    xi = report.exponent("xi")
    beta = report.exponent("beta")
    d1 = report.exponent("d1")
    u0 = report.exponent("u0")
    kappa_prime = report.exponent("kappa_prime")
    cap = min(1.0, u0)
    delta_super = math.isinf(kappa)
    lambda_super = math.isinf(p)

    gamma = math.inf if delta_super else kappa * u0 - 2.0 - kappa_prime
    tail = _ratio(beta / xi + d1, p)
    ledger: List[LedgerLine] = [
        LedgerLine("A", "delta polynomial", 0.0, 0.0 if delta_super else 1.0),
        LedgerLine("A", "lambda polynomial", 0.0, 0.0 if lambda_super else 1.0),
        LedgerLine("A", "1 < kappa", 1.0, kappa),
        LedgerLine("A", "1 < p", 1.0, p),
        LedgerLine("A", "1 < kappa xi", 1.0, kappa * xi),
        LedgerLine("A", "d1 beta / (kappa xi - 1) < min(1, u0)", _ratio(d1 * beta, kappa * xi - 1.0), cap),
        LedgerLine("A", "(beta / xi + d1) / p < min(1, u0)", tail, cap),
        LedgerLine("A", "1 < gamma = kappa u0 - 2 - kappa'", 1.0, gamma),
        LedgerLine("B", "delta super-polynomial", 0.0, 1.0 if delta_super else 0.0),
        LedgerLine("B", "lambda polynomial", 0.0, 0.0 if lambda_super else 1.0),
        LedgerLine("B", "(beta / xi + d1) / p < min(1, u0)", tail, cap),
        LedgerLine("C", "delta super-polynomial", 0.0, 1.0 if delta_super else 0.0),
        LedgerLine("C", "lambda super-polynomial", 0.0, 1.0 if lambda_super else 0.0),
    ]
    if "d" in report.exponents:
        d = report.exponents["d"]
        simplified = max(_ratio(d * beta, kappa * xi - 1.0), _ratio(beta / xi + d, p))
        ledger.append(LedgerLine("A (dimension d)", "max(d beta / (kappa xi - 1), (beta / xi + d) / p) < min(1, u0)",
                                 simplified, cap))

    precondition_ok = True
    if report.system.get("family") == "pm":
        alphas = tuple(report.system.get("parameters", ()))
        if alphas:
            line = LedgerLine("precondition", "alpha_1 < 1/3", max(alphas), PM_ALPHA_LIMIT)
            ledger.append(line)
            precondition_ok = line.holds

    satisfied = tuple(
        case for case in ("C", "B", "A")
        if all(line.holds for line in ledger if line.case == case)
    )
    verdict = satisfied[0] if satisfied and precondition_ok else "none"
    logger.debug(f"Case check verdict {verdict}, satisfied {satisfied}")
    return CaseVerdict(verdict, satisfied, tuple(ledger), precondition_ok)
