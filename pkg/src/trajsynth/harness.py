"""Experiment runner: offline pretraining, online RL, multi-seed aggregation.

Every stochastic draw of a seed's run flows from one root SeedSequence
split into fixed named streams, in spawn order:

    pretrain  - diffuser bank pretraining (init + batches + noise)
    prelim    - preliminary generation run measuring the expected length L
    env       - environment resets and transition noise during training
    agent     - epsilon-greedy exploration draws
    sample    - replay-buffer batch sampling
    gen       - generation coin flips and reverse-process noise
    eval      - evaluation episodes
    adapt     - fine-tune batches and pool dropping

Streams that a configuration never touches (e.g. gen when rho = 0) leave
the others unchanged, which is what makes a rho = 0 run bit-identical to a
control run with no diffuser attached.

Per-seed CSV columns: step, return, success, ds_size, do_size, gen_count.
Aggregate CSV columns: step, median_return, p25_return, p75_return,
median_success, p25_success, p75_success, ds_size, do_size, gen_count
(the last three are medians across seeds).
"""

from __future__ import annotations

import copy
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from .adapt import AdaptConfig, ImportancePool, adapt_step, importance_td_batch
from .agent import QAgent, QAgentConfig
from .bank import BankTrainConfig, DiffuserBank, train_bank
from .envs import Trajectory, Transition, collect_offline, load_dataset, make_env, make_policy, trajectory_to_transitions
from .replay import AugmentedReplayBuffer

STREAM_NAMES = ("pretrain", "prelim", "env", "agent", "sample", "gen", "eval", "adapt")

MODES = ("online", "offline_to_online", "offline_aug")

PER_SEED_COLUMNS = ("step", "return", "success", "ds_size", "do_size", "gen_count")
AGGREGATE_COLUMNS = (
    "step",
    "median_return",
    "p25_return",
    "p75_return",
    "median_success",
    "p25_success",
    "p75_success",
    "ds_size",
    "do_size",
    "gen_count",
)

_ENV_KEYS = {
    "pointgoal": {"goal", "noise", "horizon", "goal_radius"},
    "chain": {"n_states", "horizon"},
}
_OFFLINE_KEYS = {"path", "tier", "episodes", "seed", "flip_prob", "goal", "noise", "horizon", "goal_radius", "n_states"}
_DIFFUSION_KEYS = {
    "train_steps",
    "batch",
    "hidden",
    "n_steps",
    "beta_start",
    "beta_end",
    "lr",
    "estimator_steps",
    "estimator_hidden",
    "estimator_lr",
}
_ADAPT_KEYS = {
    "enabled",
    "indicator",
    "period",
    "fine_tune_steps",
    "fine_tune_lr",
    "select_m",
    "pool_capacity",
    "pool_update_every",
    "drop_prob",
    "usage_cap",
    "batch",
}
_AGENT_KEYS = {
    "gamma",
    "hidden",
    "lr",
    "batch",
    "eps_start",
    "eps_end",
    "eps_decay_steps",
    "target_sync",
    "updates_per_step",
}
_TOP_KEYS = {
    "env",
    "seeds",
    "mode",
    "rho",
    "L",
    "offline_data",
    "presets",
    "diffusion",
    "adaptation",
    "agent",
    "total_steps",
    "eval_every",
    "eval_episodes",
    "p_orig",
    "attach_diffuser",
    "capacity_real",
    "output_dir",
    "max_workers",
}


@dataclass
class RunConfig:
    env: dict
    seeds: list[int]
    mode: str = "online"
    rho: float = 0.0
    L: int | str = "auto"
    offline_data: dict | None = None
    presets: list[int] = field(default_factory=lambda: [5, 10, 15, 20, 25])
    bank: BankTrainConfig = field(default_factory=BankTrainConfig)
    adaptation_enabled: bool = False
    adaptation_indicator: str = "td_error"
    adapt: AdaptConfig = field(default_factory=AdaptConfig)
    pool_capacity: int = 5000
    pool_update_every: int = 500
    drop_prob: float = 0.2
    usage_cap: int = 3
    agent: QAgentConfig = field(default_factory=QAgentConfig)
    total_steps: int = 50000
    eval_every: int = 500
    eval_episodes: int = 10
    attach_diffuser: bool | None = None
    capacity_real: int = 200000
    output_dir: str = "runs/out"
    max_workers: int = 1
    raw: dict = field(default_factory=dict)

    @property
    def diffuser_attached(self) -> bool:
        if self.attach_diffuser is not None:
            return self.attach_diffuser
        return self.rho > 0.0 or self.adaptation_enabled


def _check_keys(d: dict, allowed, where: str) -> None:
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ValueError(f"unknown config key(s) {unknown} in {where}")


def parse_config(doc: dict) -> RunConfig:
    """Validate a single JSON document into a RunConfig; unknown keys are fatal."""
    if not isinstance(doc, dict):
        raise ValueError("config must be a JSON object")
    _check_keys(doc, _TOP_KEYS, "top level")

    env = doc.get("env")
    if not isinstance(env, dict) or "name" not in env:
        raise ValueError("config needs an env object with a name")
    name = env["name"]
    if name not in _ENV_KEYS:
        raise ValueError(f"unknown environment {name!r}")
    _check_keys({k: v for k, v in env.items() if k != "name"}, _ENV_KEYS[name], "env")

    seeds = doc.get("seeds")
    if not isinstance(seeds, list) or not seeds:
        raise ValueError("seed list must be nonempty")
    mode = doc.get("mode", "online")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    rho = float(doc.get("rho", 0.0))
    if not 0.0 <= rho < 1.0:
        raise ValueError("rho must lie in [0, 1)")
    length = doc.get("L", "auto")
    if length != "auto" and (not isinstance(length, int) or length < 1):
        raise ValueError("L must be 'auto' or a positive integer")

    offline = doc.get("offline_data")
    if offline is not None:
        _check_keys(offline, _OFFLINE_KEYS, "offline_data")
        if "path" not in offline and "tier" not in offline:
            raise ValueError("offline_data needs a path or a tier")

    diff = doc.get("diffusion", {})
    _check_keys(diff, _DIFFUSION_KEYS, "diffusion")
    bank = BankTrainConfig(
        train_steps=int(diff.get("train_steps", 20000)),
        batch=int(diff.get("batch", 64)),
        hidden=tuple(diff.get("hidden", (256, 256, 256))),
        diffusion_steps=int(diff.get("n_steps", 100)),
        beta_start=float(diff.get("beta_start", 1e-4)),
        beta_end=float(diff.get("beta_end", 2e-2)),
        lr=float(diff.get("lr", 1e-3)),
        estimator_hidden=tuple(diff.get("estimator_hidden", (64, 64))),
        estimator_steps=int(diff.get("estimator_steps", 4000)),
        estimator_lr=float(diff.get("estimator_lr", 1e-3)),
        p_orig=float(doc.get("p_orig", 0.25)),
    )

    ad = doc.get("adaptation", {})
    _check_keys(ad, _ADAPT_KEYS, "adaptation")
    adapt_cfg = AdaptConfig(
        period=int(ad.get("period", 2500)),
        fine_tune_steps=int(ad.get("fine_tune_steps", 200)),
        fine_tune_lr=float(ad.get("fine_tune_lr", 1e-4)),
        select_m=int(ad.get("select_m", 500)),
        batch=int(ad.get("batch", 64)),
    )
    indicator = ad.get("indicator", "td_error")
    if indicator not in ("td_error", "reward"):
        raise ValueError(f"unknown adaptation indicator {indicator!r}")

    ag = doc.get("agent", {})
    _check_keys(ag, _AGENT_KEYS, "agent")
    agent_cfg = QAgentConfig(
        gamma=float(ag.get("gamma", 0.99)),
        hidden=tuple(ag.get("hidden", (64, 64))),
        lr=float(ag.get("lr", 1e-3)),
        batch=int(ag.get("batch", 64)),
        eps_start=float(ag.get("eps_start", 1.0)),
        eps_end=float(ag.get("eps_end", 0.05)),
        eps_decay_steps=int(ag.get("eps_decay_steps", 20000)),
        target_sync=int(ag.get("target_sync", 500)),
        updates_per_step=int(ag.get("updates_per_step", 1)),
    )

    presets = [int(k) for k in doc.get("presets", [5, 10, 15, 20, 25])]
    cfg = RunConfig(
        env=dict(env),
        seeds=[int(s) for s in seeds],
        mode=mode,
        rho=rho,
        L=length,
        offline_data=dict(offline) if offline is not None else None,
        presets=presets,
        bank=bank,
        adaptation_enabled=bool(ad.get("enabled", False)),
        adaptation_indicator=indicator,
        adapt=adapt_cfg,
        pool_capacity=int(ad.get("pool_capacity", 5000)),
        pool_update_every=int(ad.get("pool_update_every", 500)),
        drop_prob=float(ad.get("drop_prob", 0.2)),
        usage_cap=int(ad.get("usage_cap", 3)),
        agent=agent_cfg,
        total_steps=int(doc.get("total_steps", 50000)),
        eval_every=int(doc.get("eval_every", 500)),
        eval_episodes=int(doc.get("eval_episodes", 10)),
        attach_diffuser=doc.get("attach_diffuser"),
        capacity_real=int(doc.get("capacity_real", 200000)),
        output_dir=str(doc.get("output_dir", "runs/out")),
        max_workers=int(doc.get("max_workers", 1)),
        raw=copy.deepcopy(doc),
    )
    if cfg.diffuser_attached and cfg.offline_data is None:
        raise ValueError("a diffuser needs offline_data to pretrain on")
    if cfg.mode in ("offline_to_online", "offline_aug") and cfg.offline_data is None:
        raise ValueError(f"mode {cfg.mode} needs offline_data")
    return cfg


def load_config(path) -> RunConfig:
    return parse_config(json.loads(Path(path).read_text()))


def _build_env(env_section: dict):
    kwargs = {k: v for k, v in env_section.items() if k != "name"}
    if "goal" in kwargs:
        kwargs["goal"] = tuple(kwargs["goal"])
    return make_env(env_section["name"], **kwargs)


def _offline_trajectories(cfg: RunConfig) -> list[Trajectory] | None:
    """Load or synthesize the offline dataset; shared by every seed."""
    od = cfg.offline_data
    if od is None:
        return None
    if "path" in od:
        return load_dataset(od["path"])
    section = dict(cfg.env)
    for key in ("goal", "noise", "horizon", "goal_radius", "n_states"):
        if key in od:
            section[key] = od[key]
    env = _build_env(section)
    policy = make_policy(env, od["tier"], od.get("flip_prob", 0.3))
    return collect_offline(env, policy, int(od.get("episodes", 200)), int(od.get("seed", 0)))


def measure_expected_length(bank, env, n: int = 500, rng: np.random.Generator | None = None) -> int:
    """Mean pruned generation length over n draws, rounded half-up (>= 1).

    Conditions come from short random-policy rollouts (0-10 steps) so the
    measurement covers the state region online training starts from.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if rng is None:
        rng = np.random.default_rng()
    lengths = []
    for _ in range(n):
        state = env.reset(rng)
        for _ in range(int(rng.integers(0, 11))):
            nxt, _, done = env.step(int(rng.integers(env.spec.n_actions)))
            if done:
                break
            state = nxt
        traj = bank.generate(state, 0, rng)
        lengths.append(len(traj))
    return max(1, int(np.floor(np.mean(lengths) + 0.5)))


def evaluate(agent: QAgent, env, n_episodes: int, rng: np.random.Generator) -> tuple[float, float]:
    """Greedy evaluation: mean episode return and goal-reaching fraction."""
    total, successes = 0.0, 0
    for _ in range(n_episodes):
        state = env.reset(rng)
        done = False
        ret = 0.0
        while not done:
            state, r, done = env.step(agent.greedy_action(state))
            ret += r
        total += ret
        successes += ret > 0.0
    return total / n_episodes, successes / n_episodes


def run_seed(cfg: RunConfig, seed: int, offline_trajs: list[Trajectory] | None):
    """Execute one seed end to end; returns (rows, adaptation events)."""
    streams = {
        name: np.random.default_rng(ss)
        for name, ss in zip(STREAM_NAMES, np.random.SeedSequence(seed).spawn(len(STREAM_NAMES)))
    }
    env = _build_env(cfg.env)
    eval_env = _build_env(cfg.env)
    d_s, n_actions = env.spec.state_dim, env.spec.n_actions

    bank: DiffuserBank | None = None
    if cfg.diffuser_attached:
        bank_cfg = copy.deepcopy(cfg.bank)
        bank_cfg.n_actions = n_actions
        bank = train_bank(offline_trajs, cfg.presets, bank_cfg, streams["pretrain"])
        expected_l = cfg.L if isinstance(cfg.L, int) else measure_expected_length(bank, env, 500, streams["prelim"])
    else:
        expected_l = cfg.L if isinstance(cfg.L, int) else 1

    buffer = AugmentedReplayBuffer(cfg.rho, expected_l, cfg.capacity_real)
    agent = QAgent(d_s, n_actions, cfg.agent, streams["agent"])

    episodes: dict[int, Trajectory] = {}
    next_ep = 0
    if cfg.mode in ("offline_to_online", "offline_aug") and offline_trajs:
        for traj in offline_trajs:
            episodes[next_ep] = traj
            buffer.preload(trajectory_to_transitions(traj, ep_id=next_ep))
            next_ep += 1

    pool: ImportancePool | None = None
    if cfg.adaptation_enabled and bank is not None:
        scorer = None
        if cfg.adaptation_indicator == "td_error":
            scorer = lambda zs: importance_td_batch(zs, agent.q_values, cfg.agent.gamma)
        pool = ImportancePool(cfg.pool_capacity, cfg.adaptation_indicator, scorer, cfg.drop_prob, cfg.usage_cap)

    rows: list[dict] = []
    events: list[dict] = []

    if cfg.mode == "offline_aug":
        _augment_offline(cfg, bank, buffer, offline_trajs, streams["gen"])
        for step in range(1, cfg.total_steps + 1):
            agent.update(buffer, streams["sample"])
            if step % cfg.eval_every == 0:
                rows.append(_eval_row(step, agent, eval_env, cfg, buffer, streams["eval"]))
        return rows, events

    store_diffuser = bank if cfg.rho > 0.0 else None
    state = env.reset(streams["env"])
    ep_states, ep_actions, ep_rewards, ep_dones, ep_transitions = [state], [], [], [], []
    pending: list[Transition] = []
    pending_scores: list[float] = []

    def flush_pool():
        if pool is None or not pending:
            return
        if cfg.adaptation_indicator == "reward":
            pool.update(pending, pending_scores)
        else:
            pool.update(pending)
        pending.clear()
        pending_scores.clear()

    for step in range(1, cfg.total_steps + 1):
        action = agent.act(state, streams["agent"])
        nxt, reward, done = env.step(action)
        z = Transition(
            s=state, a=action, s2=nxt, r=reward, done=done, task=0, ep_id=next_ep, t=len(ep_actions)
        )
        buffer.store(z, store_diffuser, streams["gen"])
        ep_actions.append(action)
        ep_rewards.append(reward)
        ep_dones.append(done)
        ep_transitions.append(z)
        if done:
            traj = Trajectory(
                states=np.asarray(ep_states[: len(ep_actions)]),
                actions=np.asarray(ep_actions, dtype=np.int64),
                rewards=np.asarray(ep_rewards),
                dones=np.asarray(ep_dones, dtype=bool),
            )
            episodes[next_ep] = traj
            if pool is not None:
                pending.extend(ep_transitions)
                if cfg.adaptation_indicator == "reward":
                    pending_scores.extend([traj.total_reward] * len(ep_transitions))
            next_ep += 1
            state = env.reset(streams["env"])
            ep_states, ep_actions, ep_rewards, ep_dones, ep_transitions = [state], [], [], [], []
        else:
            state = nxt
            ep_states.append(nxt)

        if len(buffer.real) >= cfg.agent.batch:
            for _ in range(cfg.agent.updates_per_step):
                agent.update(buffer, streams["sample"])

        if pool is not None and step % cfg.pool_update_every == 0:
            flush_pool()

        if pool is not None and step % cfg.adapt.period == 0:
            flush_pool()
            if len(pool) > 0:
                event = adapt_step(bank, pool, episodes, cfg.adapt, streams["adapt"])
                if event is not None:
                    event["step"] = step
                    events.append(event)

        if step % cfg.eval_every == 0:
            rows.append(_eval_row(step, agent, eval_env, cfg, buffer, streams["eval"]))
    return rows, events


def _augment_offline(cfg, bank, buffer, offline_trajs, rng) -> None:
    """Upsample a static offline buffer to the target synthetic/real ratio."""
    if bank is None or cfg.rho <= 0.0:
        return
    target = int(cfg.rho / (1.0 - cfg.rho) * len(buffer.real))
    while buffer.n_synth_added < target:
        traj = offline_trajs[int(rng.integers(len(offline_trajs)))]
        state = traj.states[int(rng.integers(len(traj)))]
        buffer.add_synthetic(bank.generate(state, 0, rng))


def _eval_row(step, agent, eval_env, cfg, buffer, rng) -> dict:
    ret, success = evaluate(agent, eval_env, cfg.eval_episodes, rng)
    stats = buffer.stats()
    return {
        "step": step,
        "return": ret,
        "success": success,
        "ds_size": stats["ds_size"],
        "do_size": stats["do_size"],
        "gen_count": stats["generations"],
    }


def _seed_job(args):
    cfg, seed, offline_trajs = args
    rows, events = run_seed(cfg, seed, offline_trajs)
    return seed, rows, events


def _format_cell(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _write_csv(path, columns, rows) -> None:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_format_cell(row[c]) for c in columns))
    Path(path).write_text("\n".join(lines) + "\n")


def read_csv(path) -> dict[str, np.ndarray]:
    text = Path(path).read_text().strip().splitlines()
    if not text:
        raise ValueError(f"empty CSV {path}")
    columns = text[0].split(",")
    data = {c: [] for c in columns}
    for line in text[1:]:
        cells = line.split(",")
        if len(cells) != len(columns):
            raise ValueError(f"malformed CSV row in {path}: {line!r}")
        for c, cell in zip(columns, cells):
            data[c].append(float(cell))
    return {c: np.asarray(v) for c, v in data.items()}


def aggregate_rows(per_seed_rows: dict[int, list[dict]]) -> list[dict]:
    """Median and quartiles across seeds at every eval point."""
    seeds = sorted(per_seed_rows)
    n_points = len(per_seed_rows[seeds[0]])
    for s in seeds:
        if len(per_seed_rows[s]) != n_points:
            raise ValueError("seeds produced differing numbers of eval points")
    out = []
    for i in range(n_points):
        step = per_seed_rows[seeds[0]][i]["step"]
        rets = np.array([per_seed_rows[s][i]["return"] for s in seeds])
        succ = np.array([per_seed_rows[s][i]["success"] for s in seeds])
        out.append(
            {
                "step": step,
                "median_return": float(np.median(rets)),
                "p25_return": float(np.percentile(rets, 25)),
                "p75_return": float(np.percentile(rets, 75)),
                "median_success": float(np.median(succ)),
                "p25_success": float(np.percentile(succ, 25)),
                "p75_success": float(np.percentile(succ, 75)),
                "ds_size": float(np.median([per_seed_rows[s][i]["ds_size"] for s in seeds])),
                "do_size": float(np.median([per_seed_rows[s][i]["do_size"] for s in seeds])),
                "gen_count": float(np.median([per_seed_rows[s][i]["gen_count"] for s in seeds])),
            }
        )
    return out


def run_experiment(cfg: RunConfig) -> dict:
    """Run every seed (optionally process-parallel), write CSVs, aggregate.

    A failing seed is recorded in failures.json and excluded from the
    aggregate; the other seeds still complete.
    """
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    offline_trajs = _offline_trajectories(cfg)
    jobs = [(cfg, seed, offline_trajs) for seed in cfg.seeds]

    results: dict[int, tuple[list[dict], list[dict]]] = {}
    failures: dict[int, str] = {}
    if cfg.max_workers > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=cfg.max_workers, mp_context=get_context("spawn")) as pool:
            futures = {pool.submit(_seed_job, job): job[1] for job in jobs}
            for fut, seed in futures.items():
                try:
                    s, rows, events = fut.result()
                    results[s] = (rows, events)
                except Exception as exc:  # seed failure: record, keep going
                    failures[seed] = f"{type(exc).__name__}: {exc}"
    else:
        for job in jobs:
            try:
                s, rows, events = _seed_job(job)
                results[s] = (rows, events)
            except Exception as exc:
                failures[job[1]] = f"{type(exc).__name__}: {exc}"

    if not results:
        raise RuntimeError(f"all seeds failed: {failures}")

    per_seed_rows = {}
    per_seed_paths = {}
    for seed in sorted(results):
        rows, events = results[seed]
        path = out_dir / f"seed_{seed}.csv"
        _write_csv(path, PER_SEED_COLUMNS, rows)
        if events:
            with open(out_dir / f"seed_{seed}_adapt.jsonl", "w") as f:
                for ev in events:
                    f.write(json.dumps(ev) + "\n")
        per_seed_rows[seed] = rows
        per_seed_paths[seed] = str(path)

    agg = aggregate_rows(per_seed_rows)
    agg_path = out_dir / "aggregate.csv"
    _write_csv(agg_path, AGGREGATE_COLUMNS, agg)
    (out_dir / "config.json").write_text(json.dumps(cfg.raw, indent=2, sort_keys=True) + "\n")
    if failures:
        (out_dir / "failures.json").write_text(json.dumps(failures, indent=2, sort_keys=True) + "\n")
    return {
        "output_dir": str(out_dir),
        "aggregate_csv": str(agg_path),
        "per_seed_csv": per_seed_paths,
        "per_seed_rows": per_seed_rows,
        "aggregate_rows": agg,
        "failures": failures,
    }


def success_auc(rows) -> float:
    """Area under the success-rate curve of one seed's eval rows."""
    steps = np.array([r["step"] for r in rows], dtype=np.float64)
    succ = np.array([r["success"] for r in rows], dtype=np.float64)
    return float(np.trapezoid(succ, steps))


def steps_to_success(rows, threshold: float = 0.8):
    """First eval step reaching the success threshold, or None."""
    for r in rows:
        if r["success"] >= threshold:
            return r["step"]
    return None


def plot_learning_curves(csv_paths, out_path, labels=None) -> None:
    """Median success/return lines with 25-75% bands; one curve per CSV."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = [Path(p) for p in csv_paths]
    if labels is None:
        labels = [p.stem if p.stem != "aggregate" else p.parent.name for p in paths]
    if len(labels) != len(paths):
        raise ValueError("need one label per CSV")

    fig, axes = plt.subplots(1, 2, figsize=(11, 4))
    for path, label in zip(paths, labels):
        data = read_csv(path)
        for col in ("step", "median_success", "p25_success", "p75_success"):
            if col not in data:
                raise ValueError(f"CSV {path} lacks required column {col}")
        steps = data["step"]
        axes[0].plot(steps, data["median_success"], label=label)
        axes[0].fill_between(steps, data["p25_success"], data["p75_success"], alpha=0.25)
        axes[1].plot(steps, data["median_return"], label=label)
        axes[1].fill_between(steps, data["p25_return"], data["p75_return"], alpha=0.25)
    axes[0].set_xlabel("environment step")
    axes[0].set_ylabel("success rate")
    axes[1].set_xlabel("environment step")
    axes[1].set_ylabel("episode return")
    axes[0].legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
