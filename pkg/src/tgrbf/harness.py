"""Scenario configuration, the closed-loop run engine, metrics, controller
comparison and CSV export.

A scenario wires the benchmark plant, the identified network with its
event-triggered optimizer, and one of three controllers (adaptive nonlinear,
fixed-gain nonlinear, PID) into a deterministic seeded run.  Every run
produces a per-step trace from which all metrics and plot data derive.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from . import control as ctl
from . import plant as pl
from .network import TgrbfNet
from .offline import Sample, deploy_input
from .online import ExperienceBuffer, OnlineOptimizer, TriggerConfig

__all__ = [
    "ScenarioConfig", "RunTrace", "MetricsReport", "RunAborted",
    "load_config", "run_scenario", "compute_metrics", "compare_controllers",
    "export_trace_csv", "export_metrics_csv", "export_events_csv",
]

TRACE_COLUMNS = ["t", "r", "y", "e", "u", "y_pred", "k1", "k2", "dym_du",
                 "g", "triggered", "eta"]

CONTROLLER_TYPES = ("tgrbf_nc", "nc_fixed", "pid")


class RunAborted(RuntimeError):
    """Raised when the divergence guard trips (|y| > 1e6)."""


@dataclass
class ScenarioConfig:
    plant: pl.PlantParams = field(default_factory=lambda: pl.TRUE_PLANT)
    disturbance: pl.DisturbanceSpec = field(default_factory=pl.DisturbanceSpec)
    reference: pl.ReferenceSpec = field(default_factory=pl.ReferenceSpec)
    controller: str = "tgrbf_nc"
    gains: ctl.GainState = field(default_factory=ctl.GainState)
    nc_gains: ctl.GainState | None = None   # fixed-gain baseline tuning
    pid: ctl.PidState = field(default_factory=ctl.PidState)
    u_limit: float = 10.0
    control_sign: float = 1.0       # -1 restores the destabilizing textbook sign
    checkpoint: str | None = None
    trigger: TriggerConfig = field(default_factory=TriggerConfig)
    buffer_capacity: int = 1000
    duration_s: float = 3.0
    seed: int = 0
    raw: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.controller not in CONTROLLER_TYPES:
            raise ValueError(f"unknown controller type: {self.controller}")
        steps = self.duration_s / self.plant.Ts
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError("duration_s must be an integer number of samples")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration_s / self.plant.Ts))

    def config_hash(self) -> str:
        doc = self.raw if self.raw else {"controller": self.controller,
                                         "seed": self.seed}
        return hashlib.sha256(
            json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


_SCHEMA = {
    "plant": {"T", "K", "Ts", "input_delay"},
    "disturbance": {"noise_std", "sine_amp", "sine_freq_hz", "seed"},
    "reference": {"kind", "amplitude", "freq_hz", "step_time_s"},
    "controller": {"type", "u_limit", "control_sign"},
    "gains": {"k1", "k2", "alpha_pow", "eta1", "eta2",
              "k1_min", "k1_max", "k2_min", "k2_max"},
    "pid": {"kp", "ki", "kd", "integral_limit"},
    "network": {"checkpoint", "buffer_capacity", "trigger"},
    "trigger": {"delta", "batch_s", "momentum_alpha", "eta_max",
                "cooldown_steps"},
    "top": {"plant", "disturbance", "reference", "controller", "gains",
            "nc_gains", "pid", "network", "duration_s", "seed"},
}


def _check_keys(section: str, d: dict) -> None:
    unknown = set(d) - _SCHEMA[section]
    if unknown:
        raise ValueError(f"unknown keys in '{section}' config: {sorted(unknown)}")


def config_from_dict(doc: dict) -> ScenarioConfig:
    """Build a ScenarioConfig from a parsed JSON document, rejecting
    unknown keys."""
    _check_keys("top", doc)
    kw: dict = {"raw": doc}
    if "plant" in doc:
        _check_keys("plant", doc["plant"])
        kw["plant"] = pl.PlantParams(**doc["plant"])
    if "disturbance" in doc:
        _check_keys("disturbance", doc["disturbance"])
        kw["disturbance"] = pl.DisturbanceSpec(**doc["disturbance"])
    if "reference" in doc:
        _check_keys("reference", doc["reference"])
        kw["reference"] = pl.ReferenceSpec(**doc["reference"])
    if "controller" in doc:
        _check_keys("controller", doc["controller"])
        c = doc["controller"]
        if "type" in c:
            kw["controller"] = c["type"]
        if "u_limit" in c:
            kw["u_limit"] = float(c["u_limit"])
        if "control_sign" in c:
            kw["control_sign"] = float(c["control_sign"])
    if "gains" in doc:
        _check_keys("gains", doc["gains"])
        kw["gains"] = ctl.GainState(**doc["gains"])
    if "nc_gains" in doc:
        _check_keys("gains", doc["nc_gains"])
        kw["nc_gains"] = ctl.GainState(**doc["nc_gains"])
    if "pid" in doc:
        _check_keys("pid", doc["pid"])
        kw["pid"] = ctl.PidState(**doc["pid"])
    if "network" in doc:
        _check_keys("network", doc["network"])
        n = doc["network"]
        kw["checkpoint"] = n.get("checkpoint")
        if "buffer_capacity" in n:
            kw["buffer_capacity"] = int(n["buffer_capacity"])
        if "trigger" in n:
            _check_keys("trigger", n["trigger"])
            kw["trigger"] = TriggerConfig(**n["trigger"])
    if "duration_s" in doc:
        kw["duration_s"] = float(doc["duration_s"])
    if "seed" in doc:
        kw["seed"] = int(doc["seed"])
    return ScenarioConfig(**kw)


def load_config(path) -> ScenarioConfig:
    with open(path) as fh:
        return config_from_dict(json.load(fh))


@dataclass
class RunTrace:
    data: np.ndarray                # (n_steps, len(TRACE_COLUMNS))
    metadata: dict
    events: list = field(default_factory=list)

    def col(self, name: str) -> np.ndarray:
        return self.data[:, TRACE_COLUMNS.index(name)]


@dataclass
class MetricsReport:
    iae: float = 0.0
    ise: float = 0.0
    itae: float = 0.0
    overshoot_pct: float = math.nan
    settling_time_s: float = math.nan
    settled: bool = False
    update_count: int = 0
    fit_mse_online: float = 0.0

    def as_rows(self) -> list[tuple[str, float]]:
        return [("iae", self.iae), ("ise", self.ise), ("itae", self.itae),
                ("overshoot_pct", self.overshoot_pct),
                ("settling_time_s", self.settling_time_s),
                ("settled", float(self.settled)),
                ("update_count", float(self.update_count)),
                ("fit_mse_online", self.fit_mse_online)]


def run_scenario(cfg: ScenarioConfig,
                 net: TgrbfNet | None = None) -> tuple[RunTrace, MetricsReport]:
    """Execute one closed-loop scenario.  Returns (trace, metrics).

    The network (when present) predicts the current output each step from
    the deploy-mode input; its prediction error drives the experience buffer
    and, for the adaptive controller, the event-triggered optimizer and the
    gain adaptation.
    """
    if net is None and cfg.checkpoint:
        net = TgrbfNet.load(cfg.checkpoint)
    if net is not None:
        net = net.copy()
        net.reset()
    adaptive = cfg.controller == "tgrbf_nc"
    if adaptive and net is None:
        raise ValueError("tgrbf_nc controller requires a network checkpoint")

    noise = pl.make_noise_stream(
        pl.DisturbanceSpec(**{**cfg.disturbance.__dict__, "seed": cfg.seed}))
    opt_rng = np.random.Generator(np.random.PCG64(cfg.seed + 1))
    opt = None
    if adaptive:
        buf = ExperienceBuffer(cfg.buffer_capacity)
        opt = OnlineOptimizer(net, buf, cfg.trigger, opt_rng)

    state = pl.make_state(cfg.plant)
    gains = cfg.gains
    if cfg.controller == "nc_fixed" and cfg.nc_gains is not None:
        gains = cfg.nc_gains
    pid = cfg.pid
    u_prev, y_last = 0.0, 0.0
    n = cfg.n_steps
    data = np.zeros((n, len(TRACE_COLUMNS)))

    for k in range(n):
        t = k * cfg.plant.Ts
        r = pl.reference_at(cfg.reference, t)
        y = pl.output(state, cfg.plant)
        if abs(y) > 1e6:
            raise RunAborted(f"output diverged at step {k}: y = {y}")
        e = r - y

        y_pred, g_val, dym_du, e_pred = 0.0, 0.0, 0.0, 0.0
        if net is not None:
            x_dep = deploy_input(u_prev, y_last)
            y_pred, trace = net.advance(x_dep)
            g_val = trace.g
            dym_du = float(net.jacobian_input(trace)[0])
            e_pred = y - y_pred

        if cfg.controller == "pid":
            u, pid = ctl.pid_step(pid, e, cfg.plant.Ts, cfg.u_limit)
        else:
            u = cfg.control_sign * ctl.control_law(e, gains, cfg.u_limit)
            u = min(max(u, -cfg.u_limit), cfg.u_limit)

        triggered, eta = 0.0, 0.0
        if opt is not None:
            opt.buf.push(Sample(x=x_dep, target=y, err_priority=abs(e_pred)))
            event = opt.maybe_update(k, e_pred)
            if event is not None:
                triggered, eta = 1.0, event.eta
            gains = ctl.adapt_gains(gains, e, dym_du)

        d = pl.disturbance_at(cfg.disturbance, k, cfg.plant.Ts, noise)
        state = pl.plant_step(state, u, d, cfg.plant)
        data[k] = (t, r, y, e, u, y_pred, gains.k1, gains.k2, dym_du,
                   g_val, triggered, eta)
        u_prev, y_last = u, y

    trace = RunTrace(
        data=data,
        metadata={"config_hash": cfg.config_hash(), "seed": cfg.seed,
                  "version": __version__, "rng": "numpy.PCG64",
                  "controller": cfg.controller},
        events=opt.events if opt is not None else [],
    )
    return trace, compute_metrics(trace, cfg.reference)


def compute_metrics(trace: RunTrace, ref: pl.ReferenceSpec) -> MetricsReport:
    """IAE/ISE/ITAE for every run; overshoot and 2%-criterion settling time
    for step references only."""
    if trace.data.shape[0] == 0:
        return MetricsReport()
    Ts = float(trace.col("t")[1] - trace.col("t")[0]) if trace.data.shape[0] > 1 else 1.0
    t = trace.col("t")
    e = trace.col("e")
    y = trace.col("y")
    rep = MetricsReport(
        iae=float(np.sum(np.abs(e)) * Ts),
        ise=float(np.sum(e ** 2) * Ts),
        itae=float(np.sum(t * np.abs(e)) * Ts),
        update_count=int(np.sum(trace.col("triggered"))),
    )
    half = trace.data.shape[0] // 2
    resid = y[half:] - trace.col("y_pred")[half:]
    rep.fit_mse_online = float(np.mean(resid ** 2)) if resid.size else 0.0

    if ref.kind == "step":
        r_final = ref.amplitude
        if r_final == 0.0:
            return rep   # overshoot undefined, left as nan
        rep.overshoot_pct = max(0.0, 100.0 * float(np.max(y - r_final)) / abs(r_final))
        band = 0.02 * abs(r_final)
        outside = np.nonzero(np.abs(e) > band)[0]
        if outside.size == 0:
            rep.settling_time_s, rep.settled = float(t[0]), True
        elif outside[-1] + 1 < len(t):
            rep.settling_time_s, rep.settled = float(t[outside[-1] + 1]), True
        # else: never settles, flagged by settled=False / nan time
    return rep


def compare_controllers(cfg: ScenarioConfig,
                        net: TgrbfNet | None = None) -> dict:
    """Run the three controllers on the identical plant, reference and seed.
    Returns {name: (trace, metrics)}; an aborted run maps to (None, None)."""
    out = {}
    for name in CONTROLLER_TYPES:
        sub = ScenarioConfig(**{**cfg.__dict__, "controller": name})
        try:
            out[name] = run_scenario(sub, net=net)
        except RunAborted:
            out[name] = (None, None)
    return out


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def export_trace_csv(trace: RunTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for row in trace.data:
            w.writerow([_fmt(v) for v in row])


def export_metrics_csv(rep: MetricsReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        for name, val in rep.as_rows():
            w.writerow([name, _fmt(val)])


def export_events_csv(events: list, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "eta", "eta_explicit", "sigma_min", "sigma_max",
                    "loss_before", "loss_after", "grad_norm", "safeguard",
                    "rejected"])
        for ev in events:
            w.writerow([ev.k, _fmt(ev.eta), _fmt(ev.eta_explicit),
                        _fmt(ev.sigma_min), _fmt(ev.sigma_max),
                        _fmt(ev.loss_before), _fmt(ev.loss_after),
                        _fmt(ev.grad_norm), int(ev.safeguard_hit),
                        int(ev.rejected)])
