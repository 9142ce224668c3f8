"""Postselection, success probability, entanglement time and qubit mismatch.

Heralding works on the detector count ``n`` at the end of the first half
cycle.  Counts at or below a small cutoff are attributed to ``|++>``, counts
above the E/MM threshold to ``|-->``, and the window in between heralds the
entangled branch.  Priors follow the uniform superposition of the two
``|x+>`` qubits: 1/4 for PP and MM, 1/2 for the PM+MP pair.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import optimize
from scipy import stats as sps

from .counting import CountingStats, counting_stats, mean_general
from .dynamics import DriveParams
from .errors import Indistinguishable, InvalidParameters, ValidationError
from .network import DetectionModel, JointSpinState

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

METHODS = ("gaussian", "poisson", "empirical")
DEFAULT_KAPPA = 130.0
# probability mass of the PP distribution allowed above the PP cutoff
PP_TAIL = 1e-3
PRIORS = {"PP": 0.25, "E": 0.5, "MM": 0.25}


def ideal_success_probability() -> float:
    """Weight of the PM and MP branches in the initial product state."""
    return 0.5


def single_photon_success_probability() -> float:
    """Reference value for heralding on one photon from each of two emitters."""
    return 0.25


@dataclass(frozen=True)
class ClassificationReport:
    """Outcome of the E versus MM postselection.

    ``confidence`` is ``1 - max(error_e, error_mm)`` with PP ignored;
    ``confidence_with_pp`` also counts PP misattributed to the window.
    ``fidelity`` is the posterior probability that a herald came from E.
    """

    threshold: float
    confidence: float
    p_success: float
    method: str
    error_e: float
    error_mm: float
    pp_cutoff: float
    acceptance_e: float
    confidence_with_pp: float
    fidelity: float

    def to_dict(self) -> dict:
        return asdict(self)


def _check_separation(stats_e: CountingStats, stats_mm: CountingStats) -> None:
    gap = stats_mm.mean - stats_e.mean
    spread = math.hypot(stats_e.sd, stats_mm.sd)
    if not gap > spread:
        raise Indistinguishable(
            f"E and MM counts overlap: mean gap {gap:.4g} does not exceed combined sd {spread:.4g}"
        )


def _pp_cutoff(stats_pp: CountingStats) -> float:
    """Largest count still attributed to PP."""
    if stats_pp.samples is not None and len(stats_pp.samples):
        return float(np.quantile(stats_pp.samples, 1.0 - PP_TAIL, method="higher"))
    if stats_pp.mean <= 0:
        return 0.0
    return float(sps.poisson.ppf(1.0 - PP_TAIL, stats_pp.mean))


class _Law:
    """Cumulative distribution ``P(n <= k)`` of one branch under a method."""

    def __init__(self, stats: CountingStats, method: str):
        self.stats = stats
        self.method = method
        if method == "empirical":
            if stats.samples is None or not len(stats.samples):
                raise InvalidParameters(f"empirical classification needs samples for {stats.state.name}")
            self.sorted = np.sort(np.asarray(stats.samples))

    def cdf(self, k: float) -> float:
        s = self.stats
        if self.method == "gaussian":
            if s.sd == 0:
                return float(k >= s.mean)
            return float(sps.norm.cdf((k - s.mean) / s.sd))
        if self.method == "poisson":
            return float(sps.poisson.cdf(math.floor(k), s.mean)) if s.mean > 0 else float(k >= 0)
        return float(np.searchsorted(self.sorted, k, side="right") / self.sorted.size)


def _integer_threshold(law_e: _Law, law_mm: _Law) -> tuple[float, float, float]:
    """Integer cut ``k`` minimising the larger error; E heralds when ``n <= k``."""
    lo = int(math.floor(law_e.stats.mean))
    hi = int(math.ceil(law_mm.stats.mean))
    ks = np.arange(lo, hi + 1)
    err_e = np.array([1.0 - law_e.cdf(k) for k in ks])
    err_mm = np.array([law_mm.cdf(k) for k in ks])
    worst = np.maximum(err_e, err_mm)
    best = np.flatnonzero(np.isclose(worst, worst.min(), rtol=0, atol=1e-15))
    i = best[np.argmin((err_e + err_mm)[best])]
    return float(ks[i]), float(err_e[i]), float(err_mm[i])


def classify(
    stats_e: CountingStats,
    stats_mm: CountingStats,
    stats_pp: CountingStats | None = None,
    method: str = "gaussian",
) -> ClassificationReport:
    """Choose the E/MM count threshold and report the postselection quality.

    ``gaussian`` balances the two z-scores, ``poisson`` uses Poisson laws with
    the given means, ``empirical`` uses the ``samples`` attached to each
    :class:`CountingStats` (for instance from a trajectory ensemble).
    """
    if method not in METHODS:
        raise InvalidParameters(f"unknown method {method!r}; expected one of {METHODS}")
    if stats_pp is None:
        stats_pp = CountingStats(0.0, 0.0, stats_e.t, JointSpinState.PP)
    _check_separation(stats_e, stats_mm)

    law_e = _Law(stats_e, method)
    law_mm = _Law(stats_mm, method)
    cutoff = _pp_cutoff(stats_pp)
    if method == "gaussian":
        se, sm = stats_e.sd, stats_mm.sd
        threshold = (stats_e.mean * sm + stats_mm.mean * se) / (se + sm)
        z = (stats_mm.mean - stats_e.mean) / (se + sm)
        err_e = err_mm = float(sps.norm.sf(z))
        low = cutoff + 0.5  # continuity correction for integer counts
    else:
        k, err_e, err_mm = _integer_threshold(law_e, law_mm)
        threshold = k + 0.5
        low = cutoff
    e_below = law_e.cdf(low)
    mm_below = law_mm.cdf(low)

    pp_law = _Law(stats_pp, "empirical" if method == "empirical" and stats_pp.samples is not None else "poisson")
    pp_in_window = max(pp_law.cdf(threshold) - pp_law.cdf(cutoff), 0.0)
    pp_above = 1.0 - pp_law.cdf(cutoff)

    accept_e = max(1.0 - err_e - e_below, 0.0)
    mm_in_window = max(err_mm - mm_below, 0.0)
    confidence = 1.0 - max(err_e, err_mm)
    confidence_with_pp = 1.0 - max(err_e + e_below, err_mm, pp_above)
    heralds = PRIORS["E"] * accept_e + PRIORS["MM"] * mm_in_window + PRIORS["PP"] * pp_in_window
    fidelity = PRIORS["E"] * accept_e / heralds if heralds > 0 else 0.0
    return ClassificationReport(
        threshold=float(threshold),
        confidence=float(confidence),
        p_success=ideal_success_probability() * accept_e,
        method=method,
        error_e=float(err_e),
        error_mm=float(err_mm),
        pp_cutoff=float(cutoff),
        acceptance_e=float(accept_e),
        confidence_with_pp=float(confidence_with_pp),
        fidelity=float(fidelity),
    )


# --- presets and entanglement time ------------------------------------------


@dataclass(frozen=True)
class ExperimentPreset:
    """Physical parameters of one qubit platform (times in seconds)."""

    name: str
    t1: float
    collection_eff: float
    detection_eff: float
    coherence_time: float
    rabi: float = 3.0
    description: str = ""
    # fields whose values are placeholders rather than quoted figures
    placeholders: tuple[str, ...] = field(default=())

    def __post_init__(self):
        for key in ("t1", "collection_eff", "detection_eff", "coherence_time", "rabi"):
            value = getattr(self, key)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ValidationError(f"must be a positive number, got {value!r}", field=f"preset.{key}")
        if self.eta > 1:
            raise ValidationError("collection_eff * detection_eff exceeds 1", field="preset")

    @property
    def eta(self) -> float:
        return self.collection_eff * self.detection_eff

    def drive(self) -> DriveParams:
        """Drive parameters in units of this preset's T1."""
        return DriveParams(rabi=self.rabi, t1=1.0, efficiency=self.eta)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["placeholders"] = list(self.placeholders)
        out["eta"] = self.eta
        return out


def available_presets() -> list[str]:
    root = resources.files("mpentangle") / "data" / "presets"
    return sorted(p.name[: -len(".toml")] for p in root.iterdir() if p.name.endswith(".toml"))


def preset_from_dict(data: dict, name: str | None = None) -> ExperimentPreset:
    known = {"name", "t1", "collection_eff", "detection_eff", "coherence_time", "rabi", "description", "placeholders"}
    extra = set(data) - known
    if extra:
        raise ValidationError(f"unknown keys {sorted(extra)}", field="preset")
    missing = {"t1", "collection_eff", "detection_eff", "coherence_time"} - set(data)
    if missing:
        raise ValidationError(f"missing keys {sorted(missing)}", field="preset")
    kwargs = dict(data)
    kwargs.setdefault("name", name or "custom")
    kwargs["placeholders"] = tuple(kwargs.get("placeholders", ()))
    return ExperimentPreset(**kwargs)


def load_preset(name_or_path) -> ExperimentPreset:
    """Load a shipped preset by name or a TOML preset file by path."""
    path = Path(name_or_path)
    if path.suffix == ".toml" and path.exists():
        with open(path, "rb") as fh:
            return preset_from_dict(tomllib.load(fh), path.stem)
    res = resources.files("mpentangle") / "data" / "presets" / f"{name_or_path}.toml"
    if not res.is_file():
        raise ValidationError(f"unknown preset {name_or_path!r}; shipped: {available_presets()}", field="preset")
    return preset_from_dict(tomllib.loads(res.read_text()), str(name_or_path))


@dataclass(frozen=True)
class EntanglementTime:
    """Average time per successful herald and its ratio to the coherence time."""

    kappa: float
    eta: float
    tau_t1: float
    t1_units: float
    seconds: float
    coherence_ratio: float

    @property
    def ms(self) -> float:
        return self.seconds * 1e3

    @property
    def us(self) -> float:
        return self.seconds * 1e6

    @property
    def ns(self) -> float:
        return self.seconds * 1e9

    def to_dict(self) -> dict:
        return {
            "kappa": self.kappa,
            "eta": self.eta,
            "tau_t1": self.tau_t1,
            "avg_entanglement_time_t1": self.t1_units,
            "avg_entanglement_time_s": self.seconds,
            "avg_entanglement_time_ms": self.ms,
            "avg_entanglement_time_us": self.us,
            "avg_entanglement_time_ns": self.ns,
            "coherence_ratio": self.coherence_ratio,
        }


def avg_entanglement_time(preset: ExperimentPreset, kappa: float = DEFAULT_KAPPA) -> EntanglementTime:
    """Mean time to herald, ``(1 / p_ideal) * 2 tau`` with ``tau = kappa T1 / eta``."""
    if not kappa > 0:
        raise InvalidParameters("kappa must be positive")
    tau = kappa / preset.eta
    total = 2.0 * tau / ideal_success_probability()
    seconds = total * preset.t1
    return EntanglementTime(
        kappa=float(kappa),
        eta=preset.eta,
        tau_t1=tau,
        t1_units=total,
        seconds=seconds,
        coherence_ratio=seconds / preset.coherence_time,
    )


def _longtime_stats(x: float, kappa: float) -> tuple[CountingStats, CountingStats]:
    # small-efficiency limit: Poissonian counts with the closed-form means
    x2 = x * x
    m_e = 0.25 * x2 / (1 + 2 * x2) * kappa
    m_mm = (x2 + x2 * x2) / (1 + 2 * x2) ** 2 * kappa
    return (
        CountingStats(m_e, m_e, kappa, JointSpinState.PM),
        CountingStats(m_mm, m_mm, kappa, JointSpinState.MM),
    )


def confidence_at(
    x: float,
    kappa: float,
    eta: float | None = None,
    method: str = "gaussian",
    model: DetectionModel | None = None,
) -> float:
    """Postselection confidence at ``eta * t / T1 = kappa``.

    With ``eta=None`` the counts are Poissonian with the closed-form means
    (the small-efficiency limit); otherwise the full counting statistics at
    ``t = kappa / eta`` are used.
    """
    if eta is None:
        stats_e, stats_mm = _longtime_stats(x, kappa)
    else:
        p = DriveParams(rabi=x, efficiency=eta)
        t = kappa / eta
        stats_e = counting_stats(JointSpinState.PM, p, p, t, model)
        stats_mm = counting_stats(JointSpinState.MM, p, p, t, model)
    try:
        return classify(stats_e, stats_mm, method=method).confidence
    except Indistinguishable:
        return 0.5


def calibrate_kappa(
    x: float,
    target: float = 0.9,
    eta: float | None = None,
    method: str = "gaussian",
    model: DetectionModel | None = None,
    kappa_max: float = 1e5,
) -> float:
    """Smallest ``eta * t / T1`` reaching ``target`` confidence at drive ``x``."""
    if not 0.5 < target < 1:
        raise InvalidParameters("target confidence must lie in (0.5, 1)")
    f = lambda k: confidence_at(x, k, eta, method, model) - target  # noqa: E731
    lo, hi = 1e-3, 1.0
    while f(hi) < 0:
        lo, hi = hi, hi * 2
        if hi > kappa_max:
            raise Indistinguishable(f"target {target} not reached below kappa = {kappa_max:g}")
    if method == "gaussian":
        return float(optimize.brentq(f, lo, hi, xtol=1e-10, rtol=1e-12))
    # discrete methods: confidence is a step function, bisect on the indicator
    while hi - lo > 1e-6 * hi:
        mid = 0.5 * (lo + hi)
        lo, hi = (lo, mid) if f(mid) >= 0 else (mid, hi)
    return float(hi)


# --- qubit mismatch ----------------------------------------------------------


@dataclass(frozen=True)
class MismatchReport:
    means: dict
    sd_pm: float
    sd_mp: float
    signal_difference: float
    tolerance: float
    criterion_passes: bool
    large_field: bool
    kappa: float
    max_t1_increase: float | None
    max_t1_decrease: float | None

    @property
    def max_t1_discrepancy(self) -> float | None:
        vals = [v for v in (self.max_t1_increase, self.max_t1_decrease) if v is not None]
        return min(vals) if vals else None

    def to_dict(self) -> dict:
        out = asdict(self)
        out["max_t1_discrepancy"] = self.max_t1_discrepancy
        return out


def _branch_gap(params1, params2, t, model):
    pm = counting_stats(JointSpinState.PM, params1, params2, t, model)
    mp = counting_stats(JointSpinState.MP, params1, params2, t, model)
    return pm, mp, abs(pm.mean - mp.mean) - min(pm.sd, mp.sd)


def mismatch_analysis(
    params1: DriveParams,
    params2: DriveParams,
    t: float,
    model: DetectionModel | None = None,
    search: bool = True,
) -> MismatchReport:
    """Check ``|n_PM - n_MP| < Delta n`` and find the tolerable T1 spread.

    ``Delta n`` is the smaller of the two branch standard deviations.  The
    search keeps qubit 1 fixed and rescales qubit 2's T1 by ``1 +/- delta``
    (same drive ``x``, same efficiency), returning the boundary values of
    ``delta`` or ``None`` if the criterion holds over the whole bracket.
    """
    means = {s.name: mean_general(s, params1, params2, t, model) for s in JointSpinState}
    pm, mp, excess = _branch_gap(params1, params2, t, model)

    def boundary(sign: int) -> float | None:
        def g(delta):
            p2 = replace(params2, t1=params1.t1 * (1.0 + sign * delta))
            return _branch_gap(params1, p2, t, model)[2]

        top = 0.95 if sign < 0 else 3.0
        if g(0.0) >= 0:
            return 0.0
        if g(top) < 0:
            return None
        return float(optimize.brentq(g, 0.0, top, xtol=1e-8))

    return MismatchReport(
        means=means,
        sd_pm=pm.sd,
        sd_mp=mp.sd,
        signal_difference=abs(pm.mean - mp.mean),
        tolerance=min(pm.sd, mp.sd),
        criterion_passes=bool(excess < 0),
        large_field=bool(min(params1.rabi, params2.rabi) >= 3.0),
        kappa=params1.efficiency * t,
        max_t1_increase=boundary(+1) if search else None,
        max_t1_decrease=boundary(-1) if search else None,
    )


__all__ = [
    "ClassificationReport",
    "EntanglementTime",
    "ExperimentPreset",
    "MismatchReport",
    "avg_entanglement_time",
    "available_presets",
    "calibrate_kappa",
    "classify",
    "confidence_at",
    "ideal_success_probability",
    "load_preset",
    "mismatch_analysis",
    "preset_from_dict",
    "single_photon_success_probability",
]
