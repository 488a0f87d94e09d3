"""Experiment matrix runner: methods x lambdas x seeds on one environment.

A run spec is a JSON file (the documented tree format):

    {
      "env": {"name": "bar_lift", "n_agents": 2},
      "methods": ["r2", "r1", "extrinsic_only", "random"],
      "seeds": [0, 1, 2, 3, 4],
      "lambdas": [10.0],
      "joint_pretrain_samples": 0,
      "total_env_steps": 50000,
      "workers": 8,
      "singles": ["models/bar_lift.agent0.npz", "models/bar_lift.agent1.npz"],
      "out_dir": "runs/bar_lift"
    }

``env`` takes the EnvConfig fields (name, n_agents, optional horizon,
frozen_agents, overrides).  ``seeds`` defaults to [0..4] and ``lambdas``
to [10.0].  ``singles`` lists one pretrained checkpoint per agent, in
agent order, produced by the ``pretrain`` subcommand; it is required
before anything starts whenever a method consumes single-agent models.

Each (method, lambda, seed) cell writes into
``<out_dir>/<method>/lam<value>/seed<k>/``: a ``metrics.csv`` learning
curve, a ``record.json`` snapshot, and checkpoints (none for ``random``).
A rerun of the same spec file reproduces every CSV byte for byte.
"""

from __future__ import annotations

import dataclasses
import json
import time
from pathlib import Path

import numpy as np

from .. import dynamics as dyn
from .. import policy as pol
from .. import trainer as tr
from ..envs import make_env
from ..envs.base import EnvConfig
from ..errors import ConfigurationError

# column order of metrics.csv, schema v1
CSV_FIELDS = (
    "env_steps",
    "success_rate",
    "mean_intrinsic",
    "mean_extrinsic",
    "policy_loss",
    "value_loss",
    "joint_model_loss",
)
CSV_HEADER = "# synergy-rl metrics csv v1"


@dataclasses.dataclass(frozen=True)
class ExperimentSpec:
    env: EnvConfig
    methods: tuple[str, ...]
    seeds: tuple[int, ...]
    lambdas: tuple[float, ...] = (10.0,)
    joint_pretrain_samples: int = 0
    total_env_steps: int = 50_000
    workers: int = 8
    singles: tuple[str, ...] = ()
    out_dir: str = "runs"

    def __post_init__(self) -> None:
        if not self.methods:
            raise ConfigurationError("spec needs at least one method")
        for m in self.methods:
            if m not in tr.METHODS:
                raise ConfigurationError(f"unknown method {m!r}; choose from {tr.METHODS}")
        if not self.seeds:
            raise ConfigurationError("spec needs at least one seed")
        if not self.lambdas:
            raise ConfigurationError("spec needs at least one lambda")
        for lam in self.lambdas:
            if lam < 0 or not np.isfinite(lam):
                raise ConfigurationError(f"lambda must be finite and >= 0, got {lam}")

    @property
    def needs_singles(self) -> bool:
        return any(m in tr._NEEDS_SINGLES for m in self.methods)


def parse_spec(path: str | Path) -> ExperimentSpec:
    """Read and validate a spec file; every failure is a ConfigurationError."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigurationError(f"cannot read spec file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path} is not valid JSON: {exc}") from exc
    return spec_from_dict(raw)


def spec_from_dict(raw: dict) -> ExperimentSpec:
    if not isinstance(raw, dict):
        raise ConfigurationError("spec root must be an object")
    known = {f.name for f in dataclasses.fields(ExperimentSpec)}
    extra = set(raw) - known
    if extra:
        raise ConfigurationError(f"unknown spec keys: {sorted(extra)}")
    if "env" not in raw or "methods" not in raw:
        raise ConfigurationError("spec requires 'env' and 'methods'")
    try:
        env = EnvConfig(**{**raw["env"], "frozen_agents": tuple(raw["env"].get("frozen_agents", ()))})
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"bad env block: {exc}") from exc
    try:
        make_env(env)
    except (KeyError, ValueError) as exc:
        raise ConfigurationError(f"environment not usable: {exc}") from exc
    try:
        return ExperimentSpec(
            env=env,
            methods=tuple(raw["methods"]),
            seeds=tuple(int(s) for s in raw.get("seeds", range(5))),
            lambdas=tuple(float(l) for l in raw.get("lambdas", (10.0,))),
            joint_pretrain_samples=int(raw.get("joint_pretrain_samples", 0)),
            total_env_steps=int(raw.get("total_env_steps", 50_000)),
            workers=int(raw.get("workers", 8)),
            singles=tuple(raw.get("singles", ())),
            out_dir=str(raw.get("out_dir", "runs")),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"bad spec value: {exc}") from exc


def load_singles(spec: ExperimentSpec) -> list[dyn.ForwardModel] | None:
    """Load and check the referenced single-agent models, or explain why not.

    Runs before any training so a half-finished matrix cannot be the
    first symptom of a bad path.
    """
    if not spec.needs_singles:
        return None
    schema = make_env(spec.env).schema
    if len(spec.singles) != schema.n_agents:
        raise ConfigurationError(
            f"methods {spec.methods} need {schema.n_agents} single-agent "
            f"checkpoints in 'singles', got {len(spec.singles)}"
        )
    models = []
    for agent, p in enumerate(spec.singles):
        if not Path(p).is_file():
            raise ConfigurationError(f"pretrained model {p} does not exist")
        model = dyn.load_model(p)
        want = dyn.single_model_spec(schema, agent)
        if model.spec != want:
            raise ConfigurationError(
                f"{p}: model was trained for {model.spec.env_name!r} agent "
                f"{model.spec.agent_ids}, spec slot expects {want.env_name!r} agent ({agent},)"
            )
        models.append(model)
    return models


@dataclasses.dataclass
class RunRecord:
    """What one training run left behind, enough to reproduce it."""

    config: dict
    csv_path: str
    checkpoint_paths: tuple[str, ...]
    wall_clock_s: float
    env_steps: int
    episodes: int
    final_success_rate: float

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_metrics_csv(rows: list[tr.MetricsRow], path: str | Path) -> None:
    """Schema-versioned CSV, floats via repr so reruns match byte for byte."""
    lines = [CSV_HEADER, ",".join(CSV_FIELDS)]
    for row in rows:
        lines.append(",".join(_fmt(getattr(row, f)) for f in CSV_FIELDS))
    Path(path).write_text("\n".join(lines) + "\n")


def run_dir(spec: ExperimentSpec, method: str, lam: float, seed: int) -> Path:
    return Path(spec.out_dir) / method / f"lam{lam:g}" / f"seed{seed}"


def _train_config(spec: ExperimentSpec, method: str, lam: float, seed: int) -> tr.TrainConfig:
    return tr.TrainConfig(
        env=spec.env,
        method=method,
        lam=lam,
        workers=spec.workers,
        joint_pretrain_samples=spec.joint_pretrain_samples,
        total_env_steps=spec.total_env_steps,
        seed=seed,
    )


def run_one(
    spec: ExperimentSpec,
    method: str,
    lam: float,
    seed: int,
    singles: list[dyn.ForwardModel] | None,
) -> RunRecord:
    cfg = _train_config(spec, method, lam, seed)
    out = run_dir(spec, method, lam, seed)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    result = tr.train(cfg, singles=singles if method in tr._NEEDS_SINGLES else None)
    wall = time.perf_counter() - t0

    csv_path = out / "metrics.csv"
    write_metrics_csv(result.rows, csv_path)

    checkpoints: list[str] = []
    if method != "random":
        for k, policy in enumerate(result.policies):
            name = "policy.npz" if len(result.policies) == 1 else f"policy_agent{k}.npz"
            pol.save_policy(out / name, policy)
            checkpoints.append(str(out / name))
        if result.joint is not None:
            dyn.save_model(out / "joint_model.npz", result.joint)
            checkpoints.append(str(out / "joint_model.npz"))

    record = RunRecord(
        config={
            "env": dataclasses.asdict(spec.env),
            "method": method,
            "lam": lam,
            "seed": seed,
            "workers": spec.workers,
            "joint_pretrain_samples": spec.joint_pretrain_samples,
            "total_env_steps": spec.total_env_steps,
            "singles": list(spec.singles),
        },
        csv_path=str(csv_path),
        checkpoint_paths=tuple(checkpoints),
        wall_clock_s=wall,
        env_steps=result.rows[-1].env_steps,
        episodes=result.episodes,
        final_success_rate=result.final_success_rate,
    )
    (out / "record.json").write_text(json.dumps(record.to_dict(), indent=2) + "\n")
    return record


def run_experiment(spec: ExperimentSpec) -> list[RunRecord]:
    """The full matrix, in deterministic order; fails fast on bad references."""
    singles = load_singles(spec)
    records = []
    for method in spec.methods:
        for lam in spec.lambdas:
            for seed in spec.seeds:
                records.append(run_one(spec, method, lam, seed, singles))
    Path(spec.out_dir).mkdir(parents=True, exist_ok=True)
    (Path(spec.out_dir) / "records.json").write_text(
        json.dumps([r.to_dict() for r in records], indent=2) + "\n"
    )
    return records


def read_metrics_csv(path: str | Path) -> dict[str, np.ndarray]:
    """Columns back as arrays; tolerates leading # comment lines."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    header = lines[0].split(",")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    if data.size == 0:
        data = np.zeros((0, len(header)))
    return {name: data[:, i] for i, name in enumerate(header)}


def final_success_from_csv(path: str | Path) -> float:
    cols = read_metrics_csv(path)
    if cols["success_rate"].shape[0] == 0:
        raise ConfigurationError(f"{path} has no metric rows")
    return float(cols["success_rate"][-1])


def lambda_sweep_table(spec: ExperimentSpec, records: list[RunRecord]) -> list[dict]:
    """Final success per (method, lambda), recomputed from the run CSVs."""
    table = []
    for method in spec.methods:
        for lam in spec.lambdas:
            finals = [
                final_success_from_csv(r.csv_path)
                for r in records
                if r.config["method"] == method and r.config["lam"] == lam
            ]
            table.append(
                {
                    "method": method,
                    "lambda": lam,
                    "mean_final_success": float(np.mean(finals)),
                    "std_final_success": float(np.std(finals)),
                    "n_seeds": len(finals),
                }
            )
    return table


def write_sweep_table(table: list[dict], path: str | Path) -> None:
    lines = ["# synergy-rl lambda sweep csv v1", "method,lambda,mean_final_success,std_final_success,n_seeds"]
    for row in table:
        lines.append(
            ",".join(
                [
                    row["method"],
                    _fmt(row["lambda"]),
                    _fmt(row["mean_final_success"]),
                    _fmt(row["std_final_success"]),
                    str(row["n_seeds"]),
                ]
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")
