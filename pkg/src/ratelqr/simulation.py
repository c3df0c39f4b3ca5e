"""Closed-loop episode execution, dataset collection, and L1/L2/L3 metrics.

Each simulated round owns an independent random stream derived from
(root_seed, purpose, round index), with training-data collection and
evaluation living in disjoint purpose namespaces. Within a round the stream
is consumed in a fixed order (initial state, process noise, then each
sensor's observation noise), so rounds can be executed one at a time or as a
vectorized batch with identical results.

The per-step loop is: observe -> encode -> decode -> Kalman predict (with the
previous control) and update -> LQR control -> cost on the true state ->
advance the plant. At t = 0 the filter starts from the configured prior and
consumes the first observation directly in an update.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .codecs import CodecDescriptor, IdentityCodec, codec_roundtrip_batch
from .controller import LqrSolution, LqrWeights, solve_dare
from .errors import ConfigError
from .estimator import _gain_and_posterior_cov, stack_sensors
from .mathkernel import RngStream, psd_sqrt
from .plant import PlantModel, SensorModel, make_double_integrator, make_random_sensor

# Stream-id namespaces: training collection and evaluation never share seeds.
PURPOSE_TRAIN = 0
PURPOSE_EVAL = 1

DIVERGENCE_NORM = 1e6


def _take(doc: dict, allowed: set[str], what: str) -> None:
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {what}: {sorted(unknown)}")


@dataclass(frozen=True)
class SensorSpec:
    obs_dim: int
    r_scale: float = 1.0
    c_seed: int | None = None  # defaults to 1000 + sensor index
    elem_variance: float = 1.0 / 50.0

    def __post_init__(self):
        if self.obs_dim < 1:
            raise ConfigError("obs_dim must be >= 1")
        if self.r_scale <= 0:
            raise ConfigError("r_scale must be positive")

    @staticmethod
    def from_dict(doc: dict) -> "SensorSpec":
        _take(doc, {"obs_dim", "r_scale", "c_seed", "elem_variance"}, "sensor spec")
        return SensorSpec(**doc)

    def to_dict(self) -> dict:
        return {
            "obs_dim": self.obs_dim,
            "r_scale": self.r_scale,
            "c_seed": self.c_seed,
            "elem_variance": self.elem_variance,
        }


@dataclass(frozen=True)
class CodecSpec:
    kind: str = "identity"
    latent_dim: int | None = None  # None: identity uses obs_dim
    checkpoint: str | None = None

    @staticmethod
    def from_dict(doc: dict) -> "CodecSpec":
        _take(doc, {"kind", "latent_dim", "checkpoint"}, "codec spec")
        return CodecSpec(**doc)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "latent_dim": self.latent_dim, "checkpoint": self.checkpoint}


@dataclass(frozen=True)
class X0Spec:
    kind: str = "gaussian"  # "gaussian" (around x_desired) | "fixed"
    std: float = 1.0
    value: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("gaussian", "fixed"):
            raise ConfigError(f"unknown x0 kind {self.kind!r}")
        if self.kind == "fixed" and self.value is None:
            raise ConfigError("fixed x0 requires a value")

    @staticmethod
    def from_dict(doc: dict) -> "X0Spec":
        _take(doc, {"kind", "std", "value"}, "x0 spec")
        value = doc.get("value")
        if value is not None:
            doc = dict(doc, value=tuple(value))
        return X0Spec(**doc)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "std": self.std, "value": list(self.value) if self.value else None}


@dataclass(frozen=True)
class WeightsSpec:
    q_goal_scale: float = 0.1
    r_goal_scale: float = 1.0
    x_desired: tuple | None = None  # None: origin

    @staticmethod
    def from_dict(doc: dict) -> "WeightsSpec":
        _take(doc, {"q_goal_scale", "r_goal_scale", "x_desired"}, "weights spec")
        xd = doc.get("x_desired")
        if xd is not None:
            doc = dict(doc, x_desired=tuple(xd))
        return WeightsSpec(**doc)

    def to_dict(self) -> dict:
        return {
            "q_goal_scale": self.q_goal_scale,
            "r_goal_scale": self.r_goal_scale,
            "x_desired": list(self.x_desired) if self.x_desired else None,
        }


@dataclass(frozen=True)
class ScenarioConfig:
    """Declarative description of one closed-loop experiment."""

    sensors: tuple[SensorSpec, ...]
    codecs: tuple[CodecSpec, ...] | None = None
    dt: float = 0.1
    horizon_t: int = 200
    rounds: int = 1000
    mode: str = "online"
    root_seed: int = 0
    sigma0scale: float = 1e-4
    x0: X0Spec = field(default_factory=X0Spec)
    weights: WeightsSpec = field(default_factory=WeightsSpec)
    budget: int | None = None

    def __post_init__(self):
        if self.horizon_t < 1 or self.rounds < 1:
            raise ConfigError("horizon_t and rounds must be >= 1")
        if self.mode not in ("online", "offline"):
            raise ConfigError(f"mode must be online or offline, got {self.mode!r}")
        if not self.sensors:
            raise ConfigError("at least one sensor required")
        if self.codecs is not None:
            if len(self.codecs) != len(self.sensors):
                raise ConfigError("codecs list must match sensors list")
            if self.budget is not None:
                total = sum(
                    c.latent_dim if c.latent_dim is not None else s.obs_dim
                    for c, s in zip(self.codecs, self.sensors)
                )
                if total > self.budget:
                    raise ConfigError(
                        f"total latent dimension {total} exceeds transmission budget {self.budget}"
                    )

    @staticmethod
    def from_dict(doc: dict) -> "ScenarioConfig":
        _take(
            doc,
            {
                "sensors", "codecs", "dt", "horizon_t", "rounds", "mode",
                "root_seed", "sigma0scale", "x0", "weights", "budget",
            },
            "scenario config",
        )
        kw = dict(doc)
        kw["sensors"] = tuple(SensorSpec.from_dict(s) for s in doc["sensors"])
        if doc.get("codecs") is not None:
            kw["codecs"] = tuple(CodecSpec.from_dict(c) for c in doc["codecs"])
        if "x0" in doc:
            kw["x0"] = X0Spec.from_dict(doc["x0"])
        if "weights" in doc:
            kw["weights"] = WeightsSpec.from_dict(doc["weights"])
        return ScenarioConfig(**kw)

    def to_dict(self) -> dict:
        return {
            "sensors": [s.to_dict() for s in self.sensors],
            "codecs": [c.to_dict() for c in self.codecs] if self.codecs else None,
            "dt": self.dt,
            "horizon_t": self.horizon_t,
            "rounds": self.rounds,
            "mode": self.mode,
            "root_seed": self.root_seed,
            "sigma0scale": self.sigma0scale,
            "x0": self.x0.to_dict(),
            "weights": self.weights.to_dict(),
            "budget": self.budget,
        }


def scenario_hash(cfg: ScenarioConfig) -> str:
    """Content hash of everything that determines collected data and baselines.

    Codec choices are excluded: the uncompressed loop (and hence training
    data) does not depend on them.
    """
    doc = cfg.to_dict()
    doc.pop("codecs")
    doc.pop("mode")
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def build_plant(cfg: ScenarioConfig) -> PlantModel:
    return make_double_integrator(cfg.dt)


def sensor_c_stream(spec: SensorSpec, index: int) -> RngStream:
    """Stream for the fixed observation matrix, derived from (c_seed, obs_dim)."""
    c_seed = spec.c_seed if spec.c_seed is not None else 1000 + index
    return RngStream(c_seed, ids=(spec.obs_dim,))


def build_sensors(cfg: ScenarioConfig) -> list[SensorModel]:
    plant = build_plant(cfg)
    out = []
    for i, spec in enumerate(cfg.sensors):
        out.append(
            make_random_sensor(
                spec.obs_dim,
                plant.n_x,
                spec.elem_variance,
                sensor_c_stream(spec, i),
                index=i,
                r_scale=spec.r_scale,
            )
        )
    return out


def build_weights(cfg: ScenarioConfig, n_x: int, n_u: int) -> LqrWeights:
    xd = np.asarray(cfg.weights.x_desired, dtype=float) if cfg.weights.x_desired else np.zeros(n_x)
    return LqrWeights(
        q_goal=cfg.weights.q_goal_scale * np.eye(n_x),
        r_goal=cfg.weights.r_goal_scale * np.eye(n_u),
        x_desired=xd,
    )


def identity_codecs(sensors: list[SensorModel]) -> list[IdentityCodec]:
    return [IdentityCodec(s.n_y) for s in sensors]


def _check_codecs(sensors, codecs) -> None:
    if len(codecs) != len(sensors):
        raise ConfigError(f"{len(sensors)} sensors but {len(codecs)} codecs")
    for s, c in zip(sensors, codecs):
        if c.input_dim != s.n_y:
            raise ConfigError(
                f"sensor {s.index} has obs dim {s.n_y} but codec expects {c.input_dim}"
            )


@dataclass
class EpisodeLog:
    """Per-step trace of one round."""

    t: np.ndarray
    x: np.ndarray  # (T, n_x) true states
    u: np.ndarray  # (T, n_u)
    y: list[np.ndarray]  # per sensor (T, n_y)
    y_hat: list[np.ndarray]
    x_hat: np.ndarray  # (T, n_x) posterior means
    step_cost: np.ndarray  # (T,)
    diverged: bool


@dataclass
class MeanStderr:
    mean: float
    stderr: float


@dataclass
class MetricsSummary:
    """L1/L2/L3 aggregates across rounds (means with standard errors)."""

    l1_per_sensor: list[MeanStderr]
    l2: MeanStderr | None
    l3_total: MeanStderr | None
    l3_per_step: MeanStderr | None
    rounds: int
    diverged_rounds: int

    @property
    def unstable(self) -> bool:
        return self.diverged_rounds == self.rounds


def _mean_stderr(values: np.ndarray) -> MeanStderr:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return MeanStderr(mean=float("nan"), stderr=float("nan"))
    if values.size == 1:
        return MeanStderr(mean=float(values[0]), stderr=0.0)
    return MeanStderr(
        mean=float(values.mean()),
        stderr=float(values.std(ddof=1) / math.sqrt(values.size)),
    )


class _LoopMatrices:
    """Everything fixed across rounds: plant, sensors, gains, noise factors."""

    def __init__(self, cfg: ScenarioConfig):
        self.plant = build_plant(cfg)
        self.sensors = build_sensors(cfg)
        self.weights = build_weights(cfg, self.plant.n_x, self.plant.n_u)
        self.lqr: LqrSolution = solve_dare(
            self.plant.A, self.plant.B, self.weights.q_goal, self.weights.r_goal
        )
        self.c_stack, self.r_stack = stack_sensors(self.sensors)
        self.chol_q = psd_sqrt(self.plant.Q)
        self.chol_r = [psd_sqrt(s.R) for s in self.sensors]
        self.sigma0 = cfg.sigma0scale * np.eye(self.plant.n_x)


def _draw_round_noise(cfg: ScenarioConfig, mats: _LoopMatrices, purpose: int, round_id: int):
    """All randomness for one round, in the fixed consumption order."""
    rs = RngStream(cfg.root_seed, ids=(purpose, round_id))
    n_x = mats.plant.n_x
    T = cfg.horizon_t
    xi0 = rs.standard_normal(n_x)
    if cfg.x0.kind == "fixed":
        x0 = np.asarray(cfg.x0.value, dtype=float)
        if x0.shape != (n_x,):
            raise ConfigError(f"fixed x0 must have shape ({n_x},), got {x0.shape}")
    else:
        x0 = mats.weights.x_desired + cfg.x0.std * xi0
    v = rs.standard_normal((T, n_x)) @ mats.chol_q.T
    w = [rs.standard_normal((T, s.n_y)) @ lr.T for s, lr in zip(mats.sensors, mats.chol_r)]
    return x0, v, w


def run_rounds(
    cfg: ScenarioConfig,
    codecs,
    round_ids,
    purpose: int = PURPOSE_EVAL,
    record: bool = False,
    collect_observations: bool = False,
    mats: _LoopMatrices | None = None,
):
    """Execute a batch of rounds of the closed loop.

    Returns a dict with per-round L1/L2/cost aggregates and divergence flags,
    plus optional full logs and raw per-sensor observations. Rounds are
    mutually independent; batching is purely an execution strategy.
    """
    mats = mats or _LoopMatrices(cfg)
    sensors, plant, weights, lqr = mats.sensors, mats.plant, mats.weights, mats.lqr
    _check_codecs(sensors, codecs)
    round_ids = list(round_ids)
    R, T = len(round_ids), cfg.horizon_t
    n_x, n_u, S = plant.n_x, plant.n_u, len(sensors)

    x0s = np.empty((R, n_x))
    vs = np.empty((R, T, n_x))
    ws = [np.empty((R, T, s.n_y)) for s in sensors]
    for j, rid in enumerate(round_ids):
        x0, v, w = _draw_round_noise(cfg, mats, purpose, rid)
        x0s[j] = x0
        vs[j] = v
        for s in range(S):
            ws[s][j] = w[s]

    x = x0s.copy()
    x_hat = x0s.copy()  # filter prior mean starts at the true state
    sigma = mats.sigma0.copy()
    u = np.zeros((R, n_u))
    alive = np.ones(R, dtype=bool)
    diverged = np.zeros(R, dtype=bool)

    l1_sums = np.zeros((S, R))
    l2_sums = np.zeros(R)
    cost_sums = np.zeros(R)
    steps_alive = np.zeros(R)

    if record:
        log_x = np.zeros((R, T, n_x))
        log_u = np.zeros((R, T, n_u))
        log_xh = np.zeros((R, T, n_x))
        log_cost = np.zeros((R, T))
        log_y = [np.zeros((R, T, s.n_y)) for s in sensors]
        log_yh = [np.zeros((R, T, s.n_y)) for s in sensors]
    obs_out = [np.zeros((R, T, s.n_y)) for s in sensors] if collect_observations else None

    a_t, b_t, k_t = plant.A.T, plant.B.T, lqr.k.T
    xd = weights.x_desired
    for t in range(T):
        ys = [x @ s.C.T + ws[i][:, t, :] for i, s in enumerate(sensors)]
        yhats = [codec_roundtrip_batch(codecs[i], ys[i]) for i in range(S)]
        if collect_observations:
            for i in range(S):
                obs_out[i][:, t, :] = ys[i]

        if t > 0:
            x_hat = x_hat @ a_t + u @ b_t
            sigma = plant.A @ sigma @ plant.A.T + plant.Q
            sigma = 0.5 * (sigma + sigma.T)
        gain, sigma = _gain_and_posterior_cov(sigma, mats.c_stack, mats.r_stack)
        y_stack = np.concatenate(yhats, axis=1)
        x_hat = x_hat + (y_stack - x_hat @ mats.c_stack.T) @ gain.T

        u = -(x_hat - xd) @ k_t
        dx = x - xd
        cost = np.einsum("ri,ij,rj->r", dx, weights.q_goal, dx) + np.einsum(
            "ri,ij,rj->r", u, weights.r_goal, u
        )
        err = x_hat - x
        l2_step = np.einsum("ri,ri->r", err, err)

        cost_sums[alive] += cost[alive]
        l2_sums[alive] += l2_step[alive]
        for i in range(S):
            d = yhats[i] - ys[i]
            l1_sums[i][alive] += np.einsum("rj,rj->r", d, d)[alive]
        steps_alive[alive] += 1

        if record:
            log_x[:, t], log_u[:, t] = x, u
            log_xh[:, t], log_cost[:, t] = x_hat, cost
            for i in range(S):
                log_y[i][:, t], log_yh[i][:, t] = ys[i], yhats[i]

        x = x @ a_t + u @ b_t + vs[:, t, :]
        blown = alive & (np.linalg.norm(x, axis=1) > DIVERGENCE_NORM)
        if np.any(blown):
            diverged |= blown
            alive &= ~blown
            # Freeze exploded rounds so later-step arithmetic stays finite.
            x[blown] = xd
            x_hat[blown] = xd
            u[blown] = 0.0

    result = {
        "round_ids": round_ids,
        "diverged": diverged,
        "l1_means": l1_sums / np.maximum(steps_alive, 1),
        "l2_means": l2_sums / np.maximum(steps_alive, 1),
        "cost_totals": cost_sums,
        "horizon_t": T,
    }
    if record:
        result["logs"] = [
            EpisodeLog(
                t=np.arange(T),
                x=log_x[j],
                u=log_u[j],
                y=[log_y[i][j] for i in range(S)],
                y_hat=[log_yh[i][j] for i in range(S)],
                x_hat=log_xh[j],
                step_cost=log_cost[j],
                diverged=bool(diverged[j]),
            )
            for j in range(R)
        ]
    if collect_observations:
        result["observations"] = obs_out
    return result


def run_episode(cfg: ScenarioConfig, codecs, round_id: int, purpose: int = PURPOSE_EVAL) -> EpisodeLog:
    """One fully logged round."""
    return run_rounds(cfg, codecs, [round_id], purpose=purpose, record=True)["logs"][0]


def _summarize(result: dict) -> MetricsSummary:
    ok = ~result["diverged"]
    rounds = len(result["round_ids"])
    n_div = int(result["diverged"].sum())
    T = result["horizon_t"]
    if not np.any(ok):
        S = result["l1_means"].shape[0]
        nan = MeanStderr(float("nan"), float("nan"))
        return MetricsSummary(
            l1_per_sensor=[nan] * S, l2=nan, l3_total=nan, l3_per_step=nan,
            rounds=rounds, diverged_rounds=n_div,
        )
    l3 = _mean_stderr(result["cost_totals"][ok])
    return MetricsSummary(
        l1_per_sensor=[_mean_stderr(m[ok]) for m in result["l1_means"]],
        l2=_mean_stderr(result["l2_means"][ok]),
        l3_total=l3,
        l3_per_step=MeanStderr(l3.mean / T, l3.stderr / T),
        rounds=rounds,
        diverged_rounds=n_div,
    )


def evaluate_online(
    cfg: ScenarioConfig,
    codecs,
    mats: _LoopMatrices | None = None,
    rounds: int | None = None,
) -> MetricsSummary:
    """Closed-loop test over fresh rounds (evaluation seed range).

    `rounds` overrides cfg.rounds for tighter standard errors; round ids and
    hence noise realizations are shared across methods, so method comparisons
    at equal rounds are paired.
    """
    result = run_rounds(cfg, codecs, range(rounds or cfg.rounds), purpose=PURPOSE_EVAL, mats=mats)
    return _summarize(result)


def collect_dataset(cfg: ScenarioConfig, purpose: int = PURPOSE_TRAIN, mats: _LoopMatrices | None = None):
    """Per-sensor observation matrices from the uncompressed closed loop.

    Rows are ordered round-major then step; shape (rounds * horizon_t, n_y).
    """
    mats = mats or _LoopMatrices(cfg)
    result = run_rounds(
        cfg,
        identity_codecs(mats.sensors),
        range(cfg.rounds),
        purpose=purpose,
        collect_observations=True,
        mats=mats,
    )
    if np.any(result["diverged"]):
        raise ConfigError(
            f"{int(result['diverged'].sum())} rounds diverged under identity codecs; "
            "the uncompressed loop must be stable"
        )
    return [obs.reshape(-1, obs.shape[2]) for obs in result["observations"]]


def evaluate_offline(samples: np.ndarray, codec, chunk: int = 8192) -> MeanStderr:
    """Reconstruction error |yhat - y|^2 over recorded samples (no feedback)."""
    samples = np.asarray(samples, dtype=float)
    per_sample = np.empty(samples.shape[0])
    for start in range(0, samples.shape[0], chunk):
        block = samples[start : start + chunk]
        yhat = codec_roundtrip_batch(codec, block)
        per_sample[start : start + block.shape[0]] = np.sum((yhat - block) ** 2, axis=1)
    return _mean_stderr(per_sample)


def compute_metrics(logs: list[EpisodeLog], weights: LqrWeights) -> MetricsSummary:
    """Aggregate L1/L2/L3 across fully logged rounds.

    Step costs are recomputed from the logged states and controls with the
    given weights, so the summary is self-contained.
    """
    if not logs:
        raise ConfigError("compute_metrics needs at least one episode log")
    S = len(logs[0].y)
    T = logs[0].t.shape[0]
    ok = [log for log in logs if not log.diverged]
    n_div = len(logs) - len(ok)
    if not ok:
        nan = MeanStderr(float("nan"), float("nan"))
        return MetricsSummary([nan] * S, nan, nan, nan, len(logs), n_div)
    l1 = []
    for i in range(S):
        per_round = [np.mean(np.sum((log.y_hat[i] - log.y[i]) ** 2, axis=1)) for log in ok]
        l1.append(_mean_stderr(np.array(per_round)))
    l2 = _mean_stderr(np.array([np.mean(np.sum((log.x_hat - log.x) ** 2, axis=1)) for log in ok]))
    totals = []
    for log in ok:
        dx = log.x - weights.x_desired
        cost = np.einsum("ti,ij,tj->t", dx, weights.q_goal, dx) + np.einsum(
            "ti,ij,tj->t", log.u, weights.r_goal, log.u
        )
        totals.append(cost.sum())
    l3 = _mean_stderr(np.array(totals))
    return MetricsSummary(
        l1_per_sensor=l1,
        l2=l2,
        l3_total=l3,
        l3_per_step=MeanStderr(l3.mean / T, l3.stderr / T),
        rounds=len(logs),
        diverged_rounds=n_div,
    )


def episode_to_csv(log: EpisodeLog, path: str) -> None:
    """One row per step: t, true state, control, per-sensor y/yhat, estimate, cost."""
    n_x, n_u = log.x.shape[1], log.u.shape[1]
    header = ["t"]
    header += [f"x{i}" for i in range(n_x)]
    header += [f"u{i}" for i in range(n_u)]
    for s, y in enumerate(log.y):
        header += [f"y{s}_{i}" for i in range(y.shape[1])]
        header += [f"yhat{s}_{i}" for i in range(y.shape[1])]
    header += [f"xhat{i}" for i in range(n_x)]
    header.append("step_cost")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t in range(log.t.shape[0]):
            row = [int(log.t[t])]
            row += [repr(float(v)) for v in log.x[t]]
            row += [repr(float(v)) for v in log.u[t]]
            for s in range(len(log.y)):
                row += [repr(float(v)) for v in log.y[s][t]]
                row += [repr(float(v)) for v in log.y_hat[s][t]]
            row += [repr(float(v)) for v in log.x_hat[t]]
            row.append(repr(float(log.step_cost[t])))
            writer.writerow(row)
