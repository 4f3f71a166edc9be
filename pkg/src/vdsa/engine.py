"""Discrete-time platoon simulation.

One run lasts ``run_duration_s``: every CACC tick each vehicle broadcasts one
message, and every VDSA epoch each platoon leader observes its state, picks a
band and later receives the reward earned over that epoch.

Random streams are split per run into geometry, shadowing, collision and
agent streams, so two agents evaluated with the same (seed, run index) face
the same channel realisation.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, fields, replace
from typing import Protocol, Sequence

import numpy as np

from vdsa.baseline import select_band_baseline
from vdsa.config import SimulationConfig
from vdsa.learning.policy import select_epsilon_greedy, select_softmax, temperature_for
from vdsa.learning.qtable import LearningParams, QTable, fuse_average, q_update
from vdsa.learning.reward import shannon_mbps, vehicle_throughput
from vdsa.learning.state import PlatoonStateTuple
from vdsa.radio import (
    AcirMatrix,
    ShadowField,
    compute_power_control,
    db_to_lin,
    dtt_to_vdsa_capture,
    protected_leakage,
    protection_budget_dbm,
    protection_limits,
    link_sinr,
    other_platoon_interference,
    path_gain,
    vdsa_to_dtt_leakage,
    vehicle_sinr,
)
from vdsa.rem import DttPowerMap, PlatoonAnnouncement, Rem, dtt_power_from_transmitters
from vdsa.scenario import World, build_scenario, pair_distances, ring_gap

LOG = logging.getLogger(__name__)

EVALUATION_PHASE = 0
TRAINING_PHASE = 1


def run_streams(master_seed: int, run_index: int, phase: int = EVALUATION_PHASE) -> list[np.random.Generator]:
    """Independent generators for geometry, shadowing, collisions and the agent."""
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(phase, run_index))
    return [np.random.default_rng(s) for s in seq.spawn(4)]


def packet_success(sinr_db, threshold_db: float):
    """Reception succeeds iff the SINR reaches the decoding threshold."""
    return np.asarray(sinr_db) >= threshold_db


# ---------------------------------------------------------------------------
# metrics


@dataclass
class MetricsLog:
    """Counters of one or more runs, stacked along the leading run axis."""

    leader_attempts: np.ndarray  # (runs, platoons, positions)
    leader_successes: np.ndarray
    band_history: np.ndarray  # (runs, platoons, epochs), applied band per epoch
    dtt_sir_samples_db: dict[int, np.ndarray]  # per DTT channel
    floor_events: int = 0

    @property
    def runs(self) -> int:
        return self.leader_attempts.shape[0]

    @property
    def band_switches(self) -> np.ndarray:
        """(runs, platoons) number of epochs whose band differs from the previous one."""
        return np.count_nonzero(np.diff(self.band_history, axis=2), axis=2)

    @classmethod
    def merge(cls, logs: Sequence["MetricsLog"]) -> "MetricsLog":
        if not logs:
            raise ValueError("nothing to merge")
        bands = sorted({b for log in logs for b in log.dtt_sir_samples_db})
        return cls(
            leader_attempts=np.concatenate([m.leader_attempts for m in logs]),
            leader_successes=np.concatenate([m.leader_successes for m in logs]),
            band_history=np.concatenate([m.band_history for m in logs]),
            dtt_sir_samples_db={
                b: np.concatenate([m.dtt_sir_samples_db.get(b, np.empty(0)) for m in logs]) for b in bands
            },
            floor_events=sum(m.floor_events for m in logs),
        )


def reception_rate_by_position(metrics: MetricsLog) -> dict[int, float]:
    """Pooled leader-message delivery ratio for each follower position.

    Counters are summed over runs and platoons before dividing. Positions
    without attempts are left out.
    """
    att = metrics.leader_attempts.sum(axis=(0, 1))
    ok = metrics.leader_successes.sum(axis=(0, 1))
    return {int(p): float(ok[p] / att[p]) for p in range(1, att.size) if att[p] > 0}


def per_run_reception(metrics: MetricsLog, position: int) -> np.ndarray:
    att = metrics.leader_attempts[:, :, position].sum(axis=1)
    ok = metrics.leader_successes[:, :, position].sum(axis=1)
    return ok / np.where(att > 0, att, 1)


def band_switch_stats(metrics: MetricsLog) -> float:
    """Average band changes per platoon per run."""
    return float(metrics.band_switches.mean())


@dataclass
class SirCdf:
    samples_db: np.ndarray
    fractions: np.ndarray
    violation_fraction: float
    empty: bool


def dtt_sir_cdf(metrics: MetricsLog, sir_min_db: float = 39.5) -> dict[int, SirCdf]:
    """Empirical CDF of detectable-DTT SIR samples, one per DTT channel.

    The violation fraction counts samples strictly below ``sir_min_db``.
    """
    out = {}
    for band, samples in sorted(metrics.dtt_sir_samples_db.items()):
        s = np.sort(np.asarray(samples, dtype=float))
        if s.size == 0:
            out[band] = SirCdf(s, s.copy(), float("nan"), True)
            continue
        frac = np.arange(1, s.size + 1) / s.size
        viol = float(np.count_nonzero(s < sir_min_db) / s.size)
        out[band] = SirCdf(s, frac, viol, False)
    return out


def violation_fraction(metrics: MetricsLog, sir_min_db: float = 39.5) -> float:
    """Share of all detectable-DTT samples (every channel pooled) below ``sir_min_db``."""
    allv = np.concatenate([np.asarray(v) for v in metrics.dtt_sir_samples_db.values()] or [np.empty(0)])
    if allv.size == 0:
        return float("nan")
    return float(np.count_nonzero(allv < sir_min_db) / allv.size)


# ---------------------------------------------------------------------------
# agents


@dataclass
class Observation:
    band_sinr_db: np.ndarray  # estimated platoon-minimum SINR per band
    state: PlatoonStateTuple
    current_band: int


class Agent(Protocol):
    kind: str

    def decide(self, m: int, obs: Observation, rng: np.random.Generator) -> tuple[int, int]: ...

    def learn(self, m: int, s: int, a: int, r: float, s_next: int) -> None: ...

    def end_run(self) -> None: ...


class BaselineAgent:
    kind = "baseline"

    def __init__(self, config):
        self.config = config

    def decide(self, m, obs, rng):
        band = select_band_baseline(obs.band_sinr_db, obs.current_band, self.config)
        return band, band

    def learn(self, m, s, a, r, s_next):
        pass

    def end_run(self):
        pass


def action_to_band(action: int, band_sinr_db: np.ndarray, mapping: str = "rank") -> int:
    """Band chosen by ``action``.

    With ``rank`` mapping actions index the bands ordered by ascending
    estimated SINR (equal estimates put the lower band index higher), which
    matches the sorted state tuple.
    """
    if mapping == "band":
        return int(action)
    est = np.asarray(band_sinr_db, dtype=float)
    order = np.lexsort((-np.arange(est.size), est))
    return int(order[action])


class QLearningAgent:
    """Tabular Q-learning over every platoon.

    ``fusion="ideal"`` shares one table between platoons; ``"federated"``
    gives each platoon its own copy and averages them at every run end.
    """

    kind = "q_learning"

    def __init__(
        self,
        table: QTable,
        num_platoons: int,
        params: LearningParams,
        policy: str = "epsilon_greedy",
        fusion: str = "ideal",
        learn: bool = True,
        action_mapping: str = "rank",
        epsilon: float | None = None,
    ):
        if policy not in ("epsilon_greedy", "softmax"):
            raise ValueError(f"unknown policy {policy!r}")
        if fusion not in ("ideal", "federated"):
            raise ValueError(f"unknown fusion {fusion!r}")
        self.params = params
        self.policy = policy
        self.fusion = fusion
        self.learning = learn
        self.action_mapping = action_mapping
        self.epsilon = params.epsilon if epsilon is None else epsilon
        self.table = table
        self.tables = self._fork(num_platoons)

    def _fork(self, M: int) -> list[QTable]:
        if self.fusion == "ideal":
            return [self.table] * M
        return [self.table.copy() for _ in range(M)]

    def decide(self, m, obs, rng):
        t = self.tables[m]
        s = obs.state.index
        if self.policy == "epsilon_greedy":
            a = select_epsilon_greedy(t, s, self.epsilon, rng)
        else:
            a = select_softmax(t, s, temperature_for(int(t.visit_counts[s]), self.params), rng)
        return action_to_band(a, obs.band_sinr_db, self.action_mapping), a

    def learn(self, m, s, a, r, s_next):
        if self.learning:
            q_update(self.tables[m], s, a, r, s_next, self.params)

    def end_run(self):
        if self.fusion == "federated":
            self.table = fuse_average(self.tables, base=self.table)
            self.tables = self._fork(len(self.tables))


# ---------------------------------------------------------------------------
# simulation


@dataclass
class Transitions:
    """(s, a, r, s') tuples in the order the engine produced them."""

    run: np.ndarray
    platoon: np.ndarray
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray

    def __len__(self):
        return self.s.size

    @classmethod
    def concat(cls, parts: Sequence["Transitions"]) -> "Transitions":
        names = [f.name for f in fields(cls)]
        return cls(**{n: np.concatenate([getattr(p, n) for p in parts]) for n in names})

    def save(self, path) -> None:
        np.savez(path, **asdict(self))

    @classmethod
    def load(cls, path) -> "Transitions":
        with np.load(path) as data:
            return cls(**{f.name: data[f.name] for f in fields(cls)})


@dataclass(frozen=True)
class LinkTerms:
    """Expected per-band link budget of every member; rows of member arrays follow ``Simulation.members``."""

    p_tx_mw: np.ndarray  # (N, K) allowed transmit power
    p_dtt_mw: np.ndarray  # (N, K) DTT power captured at each vehicle
    p_other_mw: np.ndarray  # (N, K) weighted foreign-platoon interference
    leader_sinr: np.ndarray  # (members, K)
    preceding_sinr: np.ndarray  # (members, K)
    vehicle_sinr: np.ndarray  # (members, K)
    platoon_min: np.ndarray  # (M, K)


@dataclass
class RunResult:
    metrics: MetricsLog
    final_tables: list[QTable] | None
    seed: int
    run_index: int
    config_digest: str
    transitions: Transitions


class Simulation:
    """Precomputed radio context for one configuration; runs are independent."""

    def __init__(self, config: SimulationConfig):
        self.config = config
        sc, plan = config.scenario, config.bands
        self.plan = plan
        self.K = plan.num_bands
        self.M = sc.num_platoons
        self.n = sc.vehicles_per_platoon
        self.N = self.M * self.n
        self.freqs = np.asarray(plan.vdsa_centers_mhz)
        self.acir = AcirMatrix(np.asarray(config.acir)) if config.acir is not None else AcirMatrix.from_plan(plan)
        self.noise_mw = config.v2v_propagation.noise_mw
        self.weight = config.tx_weights.weight(self.n, sc.cacc_message_bytes, sc.cacc_period_s)

        if config.dtt_profile_file:
            power_map = DttPowerMap.load(config.dtt_profile_file, plan)
        else:
            power_map = DttPowerMap.from_transmitters(
                config.dtt_transmitters,
                plan,
                sc.road_length_m,
                config.broadcast_propagation,
                config.engine.dtt_knot_spacing_m,
            )
        self.power_map = power_map
        self._capture = dtt_to_vdsa_capture(plan)

        prot = config.protection
        rx = prot.receivers
        self.rx_x = np.array([r.position_m for r in rx], dtype=float)
        self.rx_y = np.array([r.lateral_offset_m for r in rx], dtype=float)
        self.rx_band = np.array([r.band for r in rx], dtype=np.int64)
        self.rx_p_dtt_dbm = np.array(
            [
                float(
                    dtt_power_from_transmitters(
                        r.position_m, r.lateral_offset_m, r.band, config.dtt_transmitters, plan, config.broadcast_propagation
                    )
                )
                for r in rx
            ]
        )
        self.rx_protected = self.rx_p_dtt_dbm >= prot.gamma_pu_dbm
        # (K, receivers) leakage of each VDSA band into each receiver's channel
        self.rx_leakage = vdsa_to_dtt_leakage(plan)[:, self.rx_band] if len(rx) else np.zeros((self.K, 0))
        self.interferer_count = {"per_platoon": self.M, "all_vehicles": self.N, "single": 1}[config.engine.power_split]
        self._budget = protection_budget_dbm(self.rx_p_dtt_dbm, prot, self.interferer_count)
        self._leak_protected = protected_leakage(self.rx_leakage, self.rx_p_dtt_dbm, prot)
        # only receivers some band can leak into constrain power
        self._pc_cols = np.flatnonzero(self._leak_protected.any(axis=0))
        v2d = config.v2dtt_propagation
        self._pl0_v2v = config.v2v_propagation.reference_loss_db(self.freqs)
        self._pl0_v2d = v2d.reference_loss_db(self.freqs)

        self.platoon_of = np.repeat(np.arange(self.M), self.n)
        self.index_in_platoon = np.tile(np.arange(self.n), self.M)
        self.foreign = self.platoon_of[:, None] != self.platoon_of[None, :]
        self.leader_of = self.platoon_of * self.n
        members = np.flatnonzero(self.index_in_platoon > 0)
        self.members = members
        prev = members[self.index_in_platoon[members] >= 2]
        # leader packets first, then predecessor packets for members beyond position 1
        self.pkt_tx = np.concatenate([self.leader_of[members], prev - 1])
        self.pkt_rx = np.concatenate([members, prev])
        self.n_leader_pkts = members.size
        self.leader_cell = self.platoon_of[members] * self.n + self.index_in_platoon[members]
        self.static_spacing = bool(np.all(sc.speeds() == sc.speeds()[0]))

    # -- helpers -----------------------------------------------------------

    def make_rem(self) -> Rem:
        return Rem(self.power_map, self.plan, self.config.rem_latency_s)

    def power_control(self, x, y):
        """Power allocation for vehicles at ``(x, y)``; see :func:`compute_power_control`."""
        return compute_power_control(
            x,
            y,
            self.rx_x,
            self.rx_y,
            self.rx_p_dtt_dbm,
            self.rx_leakage,
            self.freqs,
            self.config.v2dtt_propagation,
            self.config.protection,
            self.interferer_count,
        )

    def _power_limits(self, logd_rx: np.ndarray):
        """Fast path of :meth:`power_control` given ``log10(d / ref)`` toward every receiver."""
        cols = self._pc_cols
        exp10 = 10.0 * self.config.v2dtt_propagation.exponent
        loss = self._pl0_v2d[:, None] + exp10 * logd_rx[..., None, cols]
        return protection_limits(loss, self._budget[cols], self._leak_protected[:, cols], self.config.protection)

    def _log_ratio(self, d, prop):
        return np.log10(np.maximum(d, prop.ref_distance_m) / prop.ref_distance_m)

    def dtt_at_vehicles_mw(self, x) -> np.ndarray:
        """(..., K) DTT power captured in each VDSA band at road positions ``x``."""
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape + (self.K,))
        for b in range(len(self.plan.dtt_centers_mhz)):
            cap = self._capture[b]
            if np.any(cap > 0):
                out += db_to_lin(self.power_map.power_dbm(b, x))[..., None] * cap
        return out

    def reconstruct(self, ann: PlatoonAnnouncement):
        """Member positions implied by an announcement and the known spacing."""
        sc = self.config.scenario
        x = ann.leader_position_m - np.arange(ann.member_count) * sc.car_pitch_m
        if sc.wrap:
            x = np.mod(x, sc.road_length_m)
        y = np.full(ann.member_count, ann.lane * sc.lane_width_m)
        return x, y

    def link_terms(self, world: World, visible: dict[int, PlatoonAnnouncement]) -> "LinkTerms":
        """Expected SINR breakdown for every member and band from context data.

        Own positions are current; foreign platoons are placed where they last
        announced, on the band they announced. Median propagation throughout.
        """
        sc, prop = self.config.scenario, self.config.v2v_propagation
        ox, oy = world.positions, world.lateral_m
        fx, fy, fband, fplat = [], [], [], []
        for pid in sorted(visible):
            ann = visible[pid]
            x, y = self.reconstruct(ann)
            fx.append(x)
            fy.append(y)
            fband.append(np.full(x.size, ann.chosen_band, dtype=np.int64))
            fplat.append(np.full(x.size, ann.platoon_id, dtype=np.int64))
        nf = sum(a.size for a in fx)

        alloc = self.power_control(np.concatenate([ox] + fx), np.concatenate([oy] + fy))
        p_own = alloc.p_max_mw[: self.N]
        p_dtt = self.dtt_at_vehicles_mw(ox)
        v = self.members
        lead, prev = self.leader_of[v], v - 1
        d_lead = np.hypot(ring_gap(ox[lead], ox[v], sc.road_length_m, sc.wrap), oy[lead] - oy[v])
        d_prev = np.hypot(ring_gap(ox[prev], ox[v], sc.road_length_m, sc.wrap), oy[prev] - oy[v])
        g_lead = path_gain(d_lead[:, None], self.freqs[None, :], prop)
        g_prev = path_gain(d_prev[:, None], self.freqs[None, :], prop)
        p_other = np.zeros((self.N, self.K))
        if nf:
            fx, fy = np.concatenate(fx), np.concatenate(fy)
            fband, fplat = np.concatenate(fband), np.concatenate(fplat)
            p_f = alloc.p_max_mw[self.N:][np.arange(nf), fband]
            d_f = pair_distances(fx, fy, ox, oy, sc.road_length_m, sc.wrap)
            for k in range(self.K):
                g_f = path_gain(d_f, self.freqs[k], prop)
                p_other[:, k] = other_platoon_interference(
                    k, self.platoon_of, fplat, fband, p_f, g_f, self.acir, self.weight
                )
        sinr_lead = link_sinr(p_own[lead], g_lead, self.noise_mw, p_dtt[v], p_other[v])
        sinr_prev = link_sinr(p_own[prev], g_prev, self.noise_mw, p_dtt[v], p_other[v])
        per_vehicle = vehicle_sinr(sinr_lead, sinr_prev)
        return LinkTerms(
            p_tx_mw=p_own,
            p_dtt_mw=p_dtt,
            p_other_mw=p_other,
            leader_sinr=sinr_lead,
            preceding_sinr=sinr_prev,
            vehicle_sinr=per_vehicle,
            platoon_min=per_vehicle.reshape(self.M, self.n - 1, self.K).min(axis=1),
        )

    def estimate_all(self, world: World, visible: dict[int, PlatoonAnnouncement]) -> np.ndarray:
        """(platoons, K) platoon-minimum SINR estimates (linear) from context data."""
        return self.link_terms(world, visible).platoon_min

    def packet_rates(self, sinr: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-vehicle summed Shannon rate and packet count for (ticks, packets) linear SINRs.

        Packets below the decoding threshold contribute zero rate.
        """
        sinr = np.atleast_2d(sinr)
        with np.errstate(divide="ignore"):
            ok = packet_success(10.0 * np.log10(sinr), self.config.engine.decode_threshold_db)
        rate = np.where(ok, shannon_mbps(sinr, self.plan.vdsa_bandwidth_mhz), 0.0).sum(axis=0)
        tput = np.bincount(self.pkt_rx, weights=rate, minlength=self.N)
        pkts = sinr.shape[0] * np.bincount(self.pkt_rx, minlength=self.N)
        return tput, pkts

    def platoon_rewards(self, tput: np.ndarray, pkts: np.ndarray) -> np.ndarray:
        """(platoons,) mean capped throughput over each platoon's non-leader members."""
        tv = vehicle_throughput(tput, pkts, mode=self.config.engine.reward_mode)
        return tv.reshape(self.M, self.n)[:, 1:].mean(axis=1)

    def estimate_band_sinr(self, m: int, world: World, rem: Rem, now_s: float) -> np.ndarray:
        """Per-band platoon-minimum SINR (linear) as platoon ``m`` sees it at ``now_s``."""
        visible = {a.platoon_id: a for a in rem.snapshot_other_platoons(m, now_s)}
        return self.estimate_all(world, visible)[m]

    def observe_all(self, world: World, rem: Rem, now_s: float) -> list[Observation]:
        # own-platoon announcements never count as interference, so a single
        # estimate over every visible announcement serves all platoons
        est = self.estimate_all(world, rem.visible(now_s))
        with np.errstate(divide="ignore"):
            est_db = 10.0 * np.log10(est)
        q = self.config.quantizer
        return [
            Observation(est_db[m], PlatoonStateTuple.from_sinr_db(est_db[m], q), int(world.bands[m]))
            for m in range(self.M)
        ]

    # -- main loop ---------------------------------------------------------

    def run_episode(
        self, agent: Agent, run_index: int = 0, master_seed: int | None = None, phase: int = EVALUATION_PHASE
    ) -> RunResult:
        cfg, sc = self.config, self.config.scenario
        seed = sc.rng_seed if master_seed is None else master_seed
        g_geom, g_shadow, g_coll, g_agent = run_streams(seed, run_index, phase)
        M, n, N = self.M, self.n, self.N
        E, T = sc.epochs, sc.ticks_per_epoch
        dt = sc.cacc_period_s
        shadow_on = cfg.engine.shadowing
        v2v, v2d = cfg.v2v_propagation, cfg.v2dtt_propagation

        world = build_scenario(sc, self.plan, g_geom, initial_bands=np.zeros(M, dtype=np.int64))
        rem = self.make_rem()
        n_rx = self.rx_x.size
        sh_v2v = ShadowField.draw(
            (N, N), v2v.shadowing_sigma_db if shadow_on else 0.0, v2v.shadowing_correlation_m, g_shadow, symmetric=True
        )
        sh_dtt = ShadowField.draw(
            (N, n_rx), v2d.shadowing_sigma_db if shadow_on else 0.0, v2d.shadowing_correlation_m, g_shadow
        )
        speeds = world.vehicle_speeds()
        moved = speeds * dt
        moved_pair = (moved[:, None] + moved[None, :]) / 2.0
        tick_offsets = np.arange(T)[:, None] * moved[None, :]  # (T, N)

        attempts = np.zeros(M * n, dtype=np.int64)
        successes = np.zeros(M * n, dtype=np.int64)
        history = np.zeros((M, E), dtype=np.int64)
        prot_rx = np.flatnonzero(self.rx_protected)
        sir_buf = np.empty((E * T, prot_rx.size))
        floor_events = 0

        tput = np.zeros(N)
        pkts = np.zeros(N, dtype=np.int64)
        thr = cfg.engine.decode_threshold_db
        npk = self.pkt_tx.size
        pkt_cells = self.leader_cell
        rec: dict[str, list] = {k: [] for k in ("platoon", "s", "a", "r", "s_next")}
        pending: list[tuple[int, int] | None] = [None] * M
        order = cfg.baseline.order(M)
        exp10_v2v = 10.0 * v2v.exponent
        exp10_v2d = 10.0 * v2d.exponent
        y = world.lateral_m
        ar_N = np.arange(N)
        if self.static_spacing:
            d_static = pair_distances(world.positions, y, world.positions, y, sc.road_length_m, sc.wrap)
            logd_v2v_static = self._log_ratio(d_static, v2v)

        def settle(now_s: float) -> list[Observation]:
            obs = self.observe_all(world, rem, now_s)
            rewards = self.platoon_rewards(tput, pkts)
            for m in range(M):
                if pending[m] is None:
                    continue
                s, a = pending[m]
                r = float(rewards[m])
                s_next = obs[m].state.index
                agent.learn(m, s, a, r, s_next)
                for key, val in zip(("platoon", "s", "a", "r", "s_next"), (m, s, a, r, s_next)):
                    rec[key].append(val)
            return obs

        for e in range(E):
            now = e * sc.vdsa_period_s
            obs = settle(now)
            tput[:] = 0.0
            pkts[:] = 0
            bands = world.bands.copy()
            for m in order:
                band, action = agent.decide(m, obs[m], g_agent)
                bands[m] = band
                pending[m] = (obs[m].state.index, action)
            world = world.with_bands(bands)
            history[:, e] = bands
            for m in range(M):
                lead = m * n
                rem.announce(
                    PlatoonAnnouncement(m, float(world.positions[lead]), n, int(bands[m]), now, int(world.lanes[lead])),
                    now,
                )
            rem.prune(now)

            # all ticks of the epoch at once; leading axis is the tick
            vband = np.repeat(bands, n)
            X = world.positions[None, :] + tick_offsets
            if sc.wrap:
                X = np.mod(X, sc.road_length_m)
            else:
                X = np.clip(X, 0.0, sc.road_length_m)
            S = sh_v2v.trajectory(moved_pair, T, g_shadow)
            SD = sh_dtt.trajectory(moved[:, None], T, g_shadow)

            d_rx = np.hypot(X[:, :, None] - self.rx_x, y[None, :, None] - self.rx_y)
            logd_rx = self._log_ratio(d_rx, v2d)
            alloc = self._power_limits(logd_rx)
            floor_events += int(alloc.floor_bound[:, ar_N, vband].sum())
            p_tx = db_to_lin(alloc.p_max_dbm[:, ar_N, vband])  # (T, N)

            if self.static_spacing:
                logd = logd_v2v_static[None]
            else:
                d = pair_distances(X.reshape(-1), np.tile(y, T), X.reshape(-1), np.tile(y, T), sc.road_length_m, sc.wrap)
                logd = np.stack([self._log_ratio(d[j * N:(j + 1) * N, j * N:(j + 1) * N], v2v) for j in range(T)])
            # gain toward each receiver evaluated at the receiver's band
            g = db_to_lin(S - self._pl0_v2v[vband][None, None, :] - exp10_v2v * logd)
            p_dtt = np.take_along_axis(self.dtt_at_vehicles_mw(X), vband[None, :, None], axis=2)[..., 0]
            interf = p_tx[:, :, None] * (self.acir.factors[vband[:, None], vband[None, :]] * self.foreign) * g
            on_air = g_coll.random((T, npk, N)) < self.weight
            i_pkt = np.einsum("tpu,tup->tp", on_air, interf[:, :, self.pkt_rx])
            sig = p_tx[:, self.pkt_tx] * g[:, self.pkt_tx, self.pkt_rx]
            sinr = link_sinr(sig, 1.0, self.noise_mw, p_dtt[:, self.pkt_rx], i_pkt)
            with np.errstate(divide="ignore"):
                sinr_db = 10.0 * np.log10(sinr)
            ok = packet_success(sinr_db, thr)

            attempts += T * np.bincount(pkt_cells, minlength=M * n)
            successes += np.bincount(pkt_cells, weights=ok[:, : self.n_leader_pkts].sum(axis=0), minlength=M * n).astype(np.int64)
            t_add, p_add = self.packet_rates(sinr)
            tput += t_add
            pkts += p_add

            if prot_rx.size:
                # intra-platoon CSMA: one random member of each platoon on air
                on = self.leader_of[::n][None, :] + g_coll.integers(0, n, size=(T, M))  # (T, M)
                tt = np.arange(T)[:, None]
                gd = db_to_lin(
                    SD[tt, on][:, :, prot_rx]
                    - self._pl0_v2d[bands][None, :, None]
                    - exp10_v2d * logd_rx[tt, on][:, :, prot_rx]
                )
                leak = self.rx_leakage[bands][:, prot_rx]  # (M, rx)
                total = (p_tx[tt, on][:, :, None] * leak[None] * gd).sum(axis=1)  # (T, rx)
                with np.errstate(divide="ignore"):
                    sir_buf[e * T:(e + 1) * T] = np.where(
                        total > 0, self.rx_p_dtt_dbm[prot_rx] - 10.0 * np.log10(np.where(total > 0, total, 1.0)), np.inf
                    )

            end = X[-1] + moved
            end = np.mod(end, sc.road_length_m) if sc.wrap else np.clip(end, 0.0, sc.road_length_m)
            world = replace(world, positions=end, time_s=now + sc.vdsa_period_s)

        settle(E * sc.vdsa_period_s)

        samples = {}
        for b in range(len(self.plan.dtt_centers_mhz)):
            cols = np.flatnonzero(self.rx_band[prot_rx] == b)
            samples[b] = sir_buf[:, cols].ravel(order="F") if cols.size else np.empty(0)
        metrics = MetricsLog(
            leader_attempts=attempts.reshape(1, M, n),
            leader_successes=successes.reshape(1, M, n),
            band_history=history[None],
            dtt_sir_samples_db=samples,
            floor_events=floor_events,
        )
        trans = Transitions(
            run=np.full(len(rec["s"]), run_index, dtype=np.int64),
            platoon=np.asarray(rec["platoon"], dtype=np.int64),
            s=np.asarray(rec["s"], dtype=np.int64),
            a=np.asarray(rec["a"], dtype=np.int64),
            r=np.asarray(rec["r"], dtype=float),
            s_next=np.asarray(rec["s_next"], dtype=np.int64),
        )
        tables = getattr(agent, "tables", None)
        return RunResult(
            metrics=metrics,
            final_tables=[t.copy() for t in tables] if tables is not None else None,
            seed=seed,
            run_index=run_index,
            config_digest=cfg.digest(),
            transitions=trans,
        )

    def run(
        self,
        agent: Agent,
        episodes: int,
        master_seed: int | None = None,
        first_run: int = 0,
        phase: int = EVALUATION_PHASE,
    ) -> list[RunResult]:
        results = []
        for i in range(episodes):
            results.append(self.run_episode(agent, first_run + i, master_seed, phase))
            agent.end_run()
        return results


def run(config: SimulationConfig, agent: Agent, episodes: int, master_seed: int | None = None) -> list[RunResult]:
    return Simulation(config).run(agent, episodes, master_seed)


# ---------------------------------------------------------------------------
# offline training


def training_runs_needed(sim: Simulation, target_samples: int) -> int:
    """Runs of pure exploration required to gather ``target_samples`` rewards."""
    per_run = sim.M * sim.config.scenario.epochs
    return -(-max(target_samples, 0) // per_run)


def _explorer(sim: Simulation) -> QLearningAgent:
    q = sim.config.quantizer
    return QLearningAgent(
        QTable.zeros(q.levels, sim.K),
        sim.M,
        sim.config.learning,
        "epsilon_greedy",
        "ideal",
        learn=False,
        action_mapping=sim.config.engine.action_mapping,
        epsilon=1.0,
    )


def _training_run(sim: Simulation, run_index: int, master_seed: int) -> Transitions:
    return sim.run_episode(_explorer(sim), run_index, master_seed, TRAINING_PHASE).transitions


_WORKER_SIM: Simulation | None = None


def _init_worker(config: SimulationConfig) -> None:
    global _WORKER_SIM
    _WORKER_SIM = Simulation(config)


def _worker_training_run(args: tuple[int, int]) -> Transitions:
    return _training_run(_WORKER_SIM, *args)


def collect_training_transitions(sim: Simulation, target_samples: int, master_seed: int, workers: int = 1) -> Transitions:
    """Pure-exploration runs until at least ``target_samples`` rewards exist.

    With exploration probability 1 the chosen actions never consult the
    table, so the transitions can be gathered once and replayed into any
    fusion scheme. Runs are independent, so ``workers > 1`` spreads them over
    processes without changing the result.
    """
    n_runs = training_runs_needed(sim, target_samples)
    if n_runs == 0:
        return Transitions(*(np.empty(0, dtype=np.int64) for _ in range(4)), np.empty(0), np.empty(0, dtype=np.int64))
    jobs = [(i, master_seed) for i in range(n_runs)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(sim.config,)) as pool:
            parts = list(pool.map(_worker_training_run, jobs, chunksize=16))
    else:
        parts = []
        for i, seed in jobs:
            parts.append(_training_run(sim, i, seed))
            if (i + 1) % 200 == 0:
                LOG.info("training: %d/%d runs", i + 1, n_runs)
    return Transitions.concat(parts)


def replay_transitions(
    transitions: Transitions,
    table: QTable,
    num_platoons: int,
    params: LearningParams,
    fusion: str = "ideal",
    limit: int | None = None,
) -> QTable:
    """Apply recorded transitions in order; ``limit`` stops after the first run reaching that many samples."""
    t = transitions
    n_use = len(t)
    if limit is not None and limit < n_use:
        # extend to the end of the run that crosses the limit
        crossing_run = t.run[limit - 1] if limit > 0 else -1
        n_use = int(np.searchsorted(t.run, crossing_run, side="right")) if limit > 0 else 0
    shared = table.copy()
    if fusion == "ideal":
        for i in range(n_use):
            q_update(shared, int(t.s[i]), int(t.a[i]), float(t.r[i]), int(t.s_next[i]), params)
        return shared
    start = 0
    while start < n_use:
        stop = int(np.searchsorted(t.run, t.run[start], side="right"))
        local = [shared.copy() for _ in range(num_platoons)]
        for i in range(start, stop):
            q_update(local[int(t.platoon[i])], int(t.s[i]), int(t.a[i]), float(t.r[i]), int(t.s_next[i]), params)
        shared = fuse_average(local, base=shared)
        start = stop
    return shared


def offline_train(
    sim: Simulation,
    target_samples: int,
    master_seed: int = 0,
    fusion: str = "ideal",
    table: QTable | None = None,
    workers: int = 1,
) -> QTable:
    """Train a table with exploration probability 1 until ``target_samples`` rewards."""
    if table is None:
        table = QTable.zeros(sim.config.quantizer.levels, sim.K)
    if target_samples <= 0:
        return table.copy()
    trans = collect_training_transitions(sim, target_samples, master_seed, workers)
    return replay_transitions(trans, table, sim.M, sim.config.learning, fusion)
