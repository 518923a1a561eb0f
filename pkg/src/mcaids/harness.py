"""Monte-Carlo evaluation of the detectors over random attack and normal events.

Every event owns an rng seeded from (seed, experiment, event), so results
do not depend on how events are split across workers. Drawing an event is
separate from scoring it: one draw can be scored under several scenarios
(target lines, thresholds), which pairs the sweep rows on identical events.
"""
from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from typing import Optional, Sequence

import numpy as np

from .attack import GridContext, goal_achieved, random_mca
from .case_io import case_digest, load_case, load_case39, partition_digest
from .cig import DEFAULT_BUDGET, PseudoMeasurements, induce
from .ckb import RULE3, KnowledgeBase, build_kb, kb_from_dict, kb_to_dict, scan
from .errors import ValidationError
from .idsbench import EBlockModel, adversary_rates, bayes_posterior

log = logging.getLogger(__name__)

IDS1 = "IDS1"
IDS2 = "IDS2"
CKBCIG = "CKBCIG"
DETECTORS = (IDS1, IDS2, CKBCIG)

TARGET_LINES = (3, 4, 13, 18, 25, 29, 30, 42, 43, 44, 45, 46)
SENSITIVITY_SWEEP = (
    (0.10, (3, 4, 13, 18, 25, 30, 42, 44, 45, 46)),
    (0.20, (3, 4, 13, 18, 25, 30, 36, 42, 43, 44, 45, 46)),
    (0.20, (3, 4, 25, 30, 45, 46)),
    (0.30, (4, 13, 18, 25, 42, 45, 46)),
    (0.30, (25, 46)),
    (0.40, (13,)),
)

RULE3_POLICIES = ("benign", "threat", "cig")


@dataclass(frozen=True)
class Scenario:
    lines: tuple  # 1-based line numbers
    tau: float = 0.15
    abar_frac: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "lines", tuple(int(l) for l in self.lines))
        if not self.tau > 0 or self.abar_frac < 0:
            raise ValidationError("scenario needs tau > 0 and abar_frac >= 0")


@dataclass(frozen=True)
class ExperimentConfig:
    M: int = 100
    N: int = 1000
    eblock: EBlockModel = field(default_factory=EBlockModel)
    scenario: Scenario = field(default_factory=lambda: Scenario(TARGET_LINES))
    seed: int = 0
    detectors: tuple = DETECTORS
    ids2_threshold: float = 0.5
    p0_values: tuple = (0.25, 0.05)
    sweep: Optional[tuple] = None  # None means the default sensitivity sweep
    subset_distribution: str = "cardinality_uniform"
    pseudo_range: tuple = (0.9, 1.1)
    infeasible_is_threat: bool = True
    rule3_policy: str = "benign"
    budget: int = DEFAULT_BUDGET
    case: Optional[str] = None
    partition: Optional[str] = None

    def __post_init__(self):
        if self.M < 1 or self.N < 1:
            raise ValidationError("M and N must be at least 1")
        if CKBCIG in self.detectors and not self.scenario.lines:
            raise ValidationError("CKB/CIG runs need at least one target line")
        unknown = set(self.detectors) - set(DETECTORS)
        if unknown:
            raise ValidationError(f"unknown detectors {sorted(unknown)}")
        if self.rule3_policy not in RULE3_POLICIES:
            raise ValidationError(f"rule3_policy must be one of {RULE3_POLICIES}")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        known = {f for f in cls.__dataclass_fields__}
        extra = set(data) - known
        if extra:
            raise ValidationError(f"unknown config keys {sorted(extra)}")
        if "eblock" in data:
            data["eblock"] = EBlockModel(**data["eblock"])
        if "scenario" in data:
            data["scenario"] = Scenario(**data["scenario"])
        if data.get("sweep") is not None:
            data["sweep"] = tuple(Scenario(**row) for row in data["sweep"])
        for key in ("detectors", "p0_values", "pseudo_range"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)

    def to_dict(self) -> dict:
        out = asdict(self)
        if self.sweep is not None:
            out["sweep"] = [asdict(s) for s in self.sweep]
        return out


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return ExperimentConfig.from_dict(json.load(fh))


def config_digest(cfg: ExperimentConfig) -> str:
    import hashlib

    text = json.dumps(cfg.to_dict(), sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()


# ------------------------------------------------------------------ events

@dataclass(frozen=True, eq=False)
class EventDraw:
    attack: bool
    zero_day: bool
    forced_fa: bool
    alarm: bool
    attacked: frozenset
    a: np.ndarray  # corruption, applied only to attack events
    pseudo: np.ndarray


def event_rng(seed: int, experiment: int, event: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream, experiment, event]))


def alarm_probability(model: EBlockModel, attack: bool, zero_day: bool, forced_fa: bool) -> float:
    """A zero-day attack silences the sensor; a forced false alarm always fires."""
    if attack:
        return min(1.0 - float(zero_day), model.p_D)
    return max(float(forced_fa), model.p_FA)


def draw_event(ctx: GridContext, model: EBlockModel, rng: np.random.Generator,
               abar_frac: float = 0.1, distribution: str = "cardinality_uniform",
               pseudo_range=(0.9, 1.1)) -> EventDraw:
    """Draw everything an event could need, in a fixed order, whatever branch it takes."""
    p1, p2, p3 = adversary_rates(model, rng)
    attack = bool(rng.random() < p1)
    subset, atk = random_mca(ctx.case, rng, abar_frac, distribution, pd=ctx.pd)
    zd = bool(rng.random() < p2)
    fa = bool(rng.random() < p3)
    u_alarm = rng.random()
    pseudo = rng.uniform(*pseudo_range, size=ctx.case.n) * ctx.pd
    alarm = bool(u_alarm < alarm_probability(model, attack, zd, fa))
    return EventDraw(attack, zd, fa, alarm, subset.members, atk.a, pseudo)


@dataclass(frozen=True)
class ScoringContext:
    """What a scenario needs to score events: the goal, the knowledge base and the policies."""

    ctx: GridContext
    goal: object
    kb: KnowledgeBase
    ids2_posterior: float
    ids2_threshold: float = 0.5
    infeasible_is_threat: bool = True
    rule3_policy: str = "benign"


@dataclass
class EventRecord:
    attack: bool
    zero_day: bool
    alarm: bool
    threat_truth: bool
    intrusion: dict  # detector -> labeled intrusion
    threat: bool  # CKB/CIG threat label
    rule: str = ""
    records: tuple = ()
    opf_infeasible: bool = False


def _cig_threat(sc: ScoringContext, detected, observed, pseudo) -> tuple[bool, bool]:
    ind = induce(sc.ctx, detected, observed, PseudoMeasurements(pseudo), sc.goal)
    if ind.opf_infeasible:
        return sc.infeasible_is_threat, True
    return bool(len(ind.con)), False


def evaluate_event(draw: EventDraw, sc: ScoringContext) -> EventRecord:
    ctx = sc.ctx
    observed = ctx.pd + draw.a if draw.attack else ctx.pd
    infeasible = False
    truth = False
    if draw.attack:
        res = ctx.dispatch(observed)
        if res.optimal:
            truth = goal_achieved(sc.goal, ctx.shift, ctx.case, res.pg, ctx.pd)[1]
        else:
            truth = sc.infeasible_is_threat
            infeasible = True

    rule, recs = "", ()
    if draw.alarm:
        verdict = scan(sc.kb, draw.attacked)
        rule, recs = verdict.matched_rule, tuple(verdict.record_ids)
        if verdict.is_existing and not (verdict.matched_rule == RULE3 and sc.rule3_policy == "cig"):
            if verdict.matched_rule == RULE3 and sc.rule3_policy == "benign":
                threat = any(sc.kb.records[r].kappa_star == 0 for r in recs)
            else:
                threat = True
        else:
            threat, bad = _cig_threat(sc, draw.attacked, observed, draw.pseudo)
            infeasible |= bad
    else:
        threat, bad = _cig_threat(sc, (), observed, draw.pseudo)
        infeasible |= bad

    intrusion = {
        IDS1: draw.alarm,
        IDS2: draw.alarm and sc.ids2_posterior >= sc.ids2_threshold,
        CKBCIG: threat,
    }
    return EventRecord(draw.attack, draw.zero_day, draw.alarm, bool(truth), intrusion,
                       bool(threat), rule, recs, infeasible)


# ------------------------------------------------------------------- rates

@dataclass(frozen=True)
class Rate:
    num: int
    den: int

    @property
    def value(self) -> Optional[float]:
        return self.num / self.den if self.den else None

    def cell(self) -> str:
        v = self.value
        return "NA" if v is None else f"{v:.6f}"


@dataclass
class RateReport:
    """Counts and rates for one detector over one experiment."""

    detector: str
    tp: int = 0
    fn: int = 0
    fp: int = 0
    tn: int = 0
    tp_t: int = 0
    fn_t: int = 0
    fp_t: int = 0
    tn_t: int = 0
    threat_rates: bool = False

    @property
    def fnr(self) -> Rate:
        return Rate(self.fn, self.tp + self.fn)

    @property
    def fpr(self) -> Rate:
        return Rate(self.fp, self.tn + self.fp)

    @property
    def fnr_t(self) -> Rate:
        return Rate(self.fn_t, self.tp_t + self.fn_t) if self.threat_rates else Rate(0, 0)

    @property
    def fpr_t(self) -> Rate:
        return Rate(self.fp_t, self.tn_t + self.fp_t) if self.threat_rates else Rate(0, 0)


def compute_rates(log_: Sequence[EventRecord], detectors=DETECTORS) -> dict:
    """Per-detector counts; intrusion rates against Attack, threat rates against the oracle."""
    out = {}
    for det in detectors:
        r = RateReport(det, threat_rates=det == CKBCIG)
        for ev in log_:
            said = ev.intrusion[det]
            if ev.attack:
                r.tp += said
                r.fn += not said
            else:
                r.fp += said
                r.tn += not said
            if det == CKBCIG:
                if ev.threat_truth:
                    r.tp_t += ev.threat
                    r.fn_t += not ev.threat
                else:
                    r.fp_t += ev.threat
                    r.tn_t += not ev.threat
        out[det] = r
    return out


METRICS = ("fnr", "fpr", "fnr_t", "fpr_t")


def box_stats(values: Sequence[Optional[float]]) -> dict:
    """Box-plot summary over the defined values; undefined cells are counted, not averaged."""
    vals = np.array([v for v in values if v is not None], dtype=float)
    out = {"n": int(vals.size), "undefined": int(len(values) - vals.size)}
    if vals.size:
        q = np.percentile(vals, [0, 25, 50, 75, 100])
        out.update(mean=float(vals.mean()), min=float(q[0]), q1=float(q[1]), median=float(q[2]),
                   q3=float(q[3]), max=float(q[4]))
    return out


# -------------------------------------------------------------- contexts

def bundled_kb_name(tau: float) -> str:
    return f"ckb_tau{int(round(tau * 100)):02d}.json"


def kb_meta(ctx: GridContext, tau: float, abar_frac: float, budget: int) -> dict:
    case = ctx.case
    return {
        "tau": tau,
        "abar_frac": abar_frac,
        "budget": budget,
        "case_digest": case_digest(case),
        "partition_digest": partition_digest(case.partition),
    }


def _load_matching(text: str, ctx, meta, lines) -> Optional[KnowledgeBase]:
    data = json.loads(text)
    if data.get("meta", {}) != meta:
        return None
    kb = kb_from_dict(data, ctx.case.substation_names)
    have = {rec.con.lines[0] for rec in kb.records}
    if not set(lines) <= have:
        return None
    return kb


def knowledge_base(ctx: GridContext, lines: Sequence[int], tau: float, abar_frac: float,
                   budget: int = DEFAULT_BUDGET, cache_dir=None) -> KnowledgeBase:
    """Knowledge base with one record per 1-based target line.

    Uses a bundled or cached snapshot when its metadata matches this case and
    settings, otherwise deduces the records (and caches them if asked).
    """
    idx = [l - 1 for l in lines]
    meta = kb_meta(ctx, tau, abar_frac, budget)
    name = bundled_kb_name(tau)
    kb = None
    sources = []
    if cache_dir is not None:
        from pathlib import Path

        p = Path(cache_dir) / name
        if p.exists():
            sources.append(p.read_text())
    res = resources.files("mcaids").joinpath("data", name)
    if res.is_file():
        sources.append(res.read_text())
    for text in sources:
        kb = _load_matching(text, ctx, meta, idx)
        if kb is not None:
            break
    if kb is None:
        log.info("deducing CI tuples for %d lines at tau=%g", len(idx), tau)
        kb = build_kb(ctx, idx, tau, ctx.abar(abar_frac), budget)
        if cache_dir is not None:
            from pathlib import Path

            Path(cache_dir).mkdir(parents=True, exist_ok=True)
            with open(Path(cache_dir) / name, "w") as fh:
                json.dump(kb_to_dict(kb, ctx.case.substation_names, meta), fh, indent=1)
    keep = [r for r in kb.records if r.con.lines[0] in set(idx)]
    keep.sort(key=lambda r: idx.index(r.con.lines[0]))
    return KnowledgeBase(keep, kb.version)


def make_context(cfg: ExperimentConfig) -> GridContext:
    if cfg.case is None:
        case = load_case39()
    else:
        case = load_case(cfg.case, cfg.partition)
    return GridContext(case)


def scoring_context(ctx: GridContext, cfg: ExperimentConfig, scenario: Scenario,
                    model: EBlockModel, cache_dir=None) -> ScoringContext:
    kb = knowledge_base(ctx, scenario.lines, scenario.tau, scenario.abar_frac, cfg.budget, cache_dir)
    goal = ctx.goal([l - 1 for l in scenario.lines], scenario.tau)
    return ScoringContext(ctx, goal, kb, bayes_posterior(model), cfg.ids2_threshold,
                          cfg.infeasible_is_threat, cfg.rule3_policy)


# ------------------------------------------------------------ experiments

_WORKER: dict = {}


def _worker_init(cfg_dict, cache_dir):
    cfg = ExperimentConfig.from_dict(cfg_dict)
    _WORKER["cfg"] = cfg
    _WORKER["ctx"] = make_context(cfg)
    _WORKER["cache_dir"] = cache_dir
    _WORKER["scoring"] = {}


def _scoring(ctx, cfg, scenario, model, cache_dir):
    key = (scenario, model)
    table = _WORKER.setdefault("scoring", {})
    if key not in table:
        table[key] = scoring_context(ctx, cfg, scenario, model, cache_dir)
    return table[key]


def run_experiment(ctx: GridContext, cfg: ExperimentConfig, model: EBlockModel,
                   scenarios: Sequence[Scenario], k: int, stream: int = 0, cache_dir=None) -> list:
    """Run experiment ``k``: N events scored under each scenario. Returns one rate dict per scenario."""
    scs = [_scoring(ctx, cfg, s, model, cache_dir) for s in scenarios]
    logs = [[] for _ in scs]
    draw_frac = scenarios[0].abar_frac
    for i in range(cfg.N):
        rng = event_rng(cfg.seed, k, i, stream)
        draw = draw_event(ctx, model, rng, draw_frac, cfg.subset_distribution, cfg.pseudo_range)
        for sc, lg in zip(scs, logs):
            lg.append(evaluate_event(draw, sc))
    return [compute_rates(lg, cfg.detectors) for lg in logs]


def _task(args):
    model_dict, scenario_dicts, k, stream = args
    cfg = _WORKER["cfg"]
    model = EBlockModel(**model_dict)
    scenarios = [Scenario(**s) for s in scenario_dicts]
    return run_experiment(_WORKER["ctx"], cfg, model, scenarios, k, stream, _WORKER["cache_dir"])


def _run_grid(cfg: ExperimentConfig, jobs: int, units, cache_dir=None) -> list:
    """Evaluate (model, scenarios, experiment, stream) units in order, possibly in worker processes."""
    payload = [(asdict(m), [asdict(s) for s in sc], k, stream) for m, sc, k, stream in units]
    if jobs <= 1:
        _worker_init(cfg.to_dict(), cache_dir)
        return [_task(p) for p in payload]
    # warm the knowledge-base cache once so workers do not all deduce it
    ctx = make_context(cfg)
    seen = set()
    for m, sc, _, _ in units:
        for s in sc:
            if (s.tau, s.abar_frac, s.lines) not in seen:
                seen.add((s.tau, s.abar_frac, s.lines))
                knowledge_base(ctx, s.lines, s.tau, s.abar_frac, cfg.budget, cache_dir)
    with ProcessPoolExecutor(jobs, initializer=_worker_init,
                             initargs=(cfg.to_dict(), cache_dir)) as pool:
        return list(pool.map(_task, payload, chunksize=max(1, len(payload) // (4 * jobs))))


RATE_HEADER = ["experiment", "detector", "p0_hat", "tp", "fn", "fp", "tn", "fnr", "fpr",
               "tp_t", "fn_t", "fp_t", "tn_t", "fnr_t", "fpr_t"]


def _rate_row(k, det, p0, r: RateReport) -> list:
    row = [k, det, f"{p0:g}", r.tp, r.fn, r.fp, r.tn, r.fnr.cell(), r.fpr.cell()]
    if r.threat_rates:
        row += [r.tp_t, r.fn_t, r.fp_t, r.tn_t, r.fnr_t.cell(), r.fpr_t.cell()]
    else:
        row += ["NA"] * 6
    return row


@dataclass
class RateTable:
    """Per-experiment reports for each attack rate, with CSV and box-plot views."""

    detectors: tuple
    reports: dict  # p0_hat -> list of {detector: RateReport}, one per experiment

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RATE_HEADER)
        for p0, per_exp in self.reports.items():
            for k, rates in enumerate(per_exp):
                for det in self.detectors:
                    w.writerow(_rate_row(k, det, p0, rates[det]))
        return buf.getvalue()

    def box(self) -> dict:
        out = {}
        for p0, per_exp in self.reports.items():
            cell = {}
            for det in self.detectors:
                cell[det] = {m: box_stats([getattr(r[det], m).value for r in per_exp])
                             for m in METRICS
                             if det == CKBCIG or m in ("fnr", "fpr")}
            out[f"{p0:g}"] = cell
        return out

    def mean(self, p0, det, metric) -> Optional[float]:
        return self.box()[f"{p0:g}"][det][metric].get("mean")


def experiment_rates(cfg: ExperimentConfig, p0_values=None, jobs: int = 1, cache_dir=None) -> RateTable:
    p0_values = tuple(cfg.p0_values if p0_values is None else p0_values)
    units = []
    for j, p0 in enumerate(p0_values):
        model = replace(cfg.eblock, p0_hat=p0)
        units += [(model, [cfg.scenario], k, j) for k in range(cfg.M)]
    results = _run_grid(cfg, jobs, units, cache_dir)
    reports = {p0: [] for p0 in p0_values}
    for (model, _, _, _), res in zip(units, results):
        reports[model.p0_hat].append(res[0])
    return RateTable(tuple(cfg.detectors), reports)


def experiment_I(cfg: ExperimentConfig, jobs: int = 1, cache_dir=None) -> RateTable:
    """FNR and FPR of every detector at each attack rate."""
    return experiment_rates(cfg, cfg.p0_values, jobs, cache_dir)


def experiment_II(cfg: ExperimentConfig, jobs: int = 1, cache_dir=None) -> RateTable:
    """Threat-relative miss rate of CKB/CIG next to the intrusion rates of the benchmarks."""
    return experiment_rates(cfg, cfg.p0_values, jobs, cache_dir)


@dataclass
class SweepTable:
    rows: tuple  # Scenario per row
    fpr_t: list  # per row, list over replications (None when undefined)

    def means(self) -> list:
        out = []
        for vals in self.fpr_t:
            v = [x for x in vals if x is not None]
            out.append(float(np.mean(v)) if v else None)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row", "tau", "lines", "n_lines", "mean_fpr_t", "std_fpr_t", "replications"])
        for r, (sc, vals, mu) in enumerate(zip(self.rows, self.fpr_t, self.means())):
            v = np.array([x for x in vals if x is not None])
            std = f"{v.std(ddof=1):.6f}" if v.size > 1 else "NA"
            w.writerow([r + 1, f"{sc.tau:g}", " ".join(map(str, sc.lines)), len(sc.lines),
                        "NA" if mu is None else f"{mu:.6f}", std, v.size])
        return buf.getvalue()

    def replications_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["replication"] + [f"row{r + 1}" for r in range(len(self.rows))])
        for k in range(len(self.fpr_t[0]) if self.fpr_t else 0):
            w.writerow([k] + [("NA" if v[k] is None else f"{v[k]:.6f}") for v in self.fpr_t])
        return buf.getvalue()


def experiment_III(cfg: ExperimentConfig, sweep=None, jobs: int = 1, cache_dir=None) -> SweepTable:
    """Mean threat false-positive rate per (tau, lines) row; every row sees the same events.

    Each of the M experiments is one replication at the first configured attack rate.
    """
    if sweep is None:
        sweep = default_sweep() if cfg.sweep is None else cfg.sweep
    rows = tuple(sweep)
    if not rows:
        return SweepTable((), [])
    model = replace(cfg.eblock, p0_hat=cfg.p0_values[0])
    units = [(model, list(rows), k, 0) for k in range(cfg.M)]
    results = _run_grid(cfg, jobs, units, cache_dir)
    fpr = [[res[r][CKBCIG].fpr_t.value for res in results] for r in range(len(rows))]
    return SweepTable(rows, fpr)


def default_sweep() -> tuple:
    return tuple(Scenario(lines, tau) for tau, lines in SENSITIVITY_SWEEP)


def one_sided_decrease(a, b, n_boot: int = 10000, seed: int = 0, level: float = 0.95) -> tuple[bool, float]:
    """Paired bootstrap: is mean(b) <= mean(a) at one-sided ``level``?

    Returns (accepted, upper bound of the mean difference b - a). The
    hypothesis is accepted when that bound is not above zero.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = b - a
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, d.size, size=(n_boot, d.size))
    boots = d[idx].mean(axis=1)
    upper = float(np.quantile(boots, level))
    return upper <= 0.0, upper
