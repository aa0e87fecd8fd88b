"""JSON run configuration.

A config is one JSON object with the keys ``dataset``, ``objective``,
``federation``, ``schedule`` and (optionally) ``experiment``::

    {
      "dataset": {"generator": "logistic", "params": {"n": 4096, "d": 30, "seed": 0}},
      "objective": {"kind": "reg_logistic", "lambda": null},
      "federation": {"N": 8, "E": 4, "T": 2000, "batch_size": 4},
      "schedule": {"kind": "experiment_decay", "params": {"eta0": 1, "n": "auto", "c": 0.125}},
      "experiment": {"epsilon": 0.01, "device_counts": [1, 2, 4, 8]}
    }

``dataset`` is either ``{"path": ...}`` (libsvm, resolved against the config
directory, then ``$FEDSIM_DATA_DIR``) or ``{"generator": ..., "params": ...}``.
Schedule parameters given as the string ``"auto"`` are filled in from the
problem: ``N``, ``E``, ``T``, ``n`` from the setup and ``mu``, ``L``, ``l``,
``kappa``, ``kappa1``, ``kappa_tilde``, ``nu_max``, ``nu_min``, ``L_or_mu``
from :func:`fedsim.objectives.spectral_report`.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .dataio import (
    Dataset,
    DevicePartition,
    find_dataset,
    gen_counterexample,
    gen_gaussian_quadratic,
    gen_logistic_classification,
    gen_overparam_regression,
    load_libsvm,
    partition_even,
)
from .errors import ConfigError
from .federation import FederationConfig
from .objectives import DISTANCE, KINDS as OBJECTIVE_KINDS, LEAST_SQUARES, Objective, spectral_report
from .schedules import Schedule, experiment_grid

TOP_KEYS = {"dataset", "objective", "federation", "schedule", "experiment"}
DATASET_KEYS = {"path", "generator", "params", "n_features"}
OBJECTIVE_KEYS = {"kind", "lambda"}
FEDERATION_KEYS = {
    "N", "E", "T", "K", "batch_size", "rule", "sampling", "master_seed", "eval_stride",
    "mass_grad_at", "mass_broadcast",
}
EXPERIMENT_KEYS = {
    "epsilon", "fstar_path", "seeds", "grid", "device_counts", "active", "participation", "jobs",
}
GRID_KEYS = {"eta0s", "c0", "exponents"}
GENERATORS = {
    "logistic": {"n", "d", "seed", "scale", "flip"},
    "gaussian_quadratic": {"n", "d", "spectrum", "seed"},
    "overparam_regression": {"features", "seed"},
    "counterexample": {"N_devices", "n_per_device", "radius", "d"},
}
AUTO = "auto"


def _check_keys(section: str, obj: Any, allowed: set[str], required: set[str] = frozenset()) -> dict:
    if not isinstance(obj, dict):
        raise ConfigError(f"{section} must be a JSON object")
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {section}: {sorted(unknown)}")
    missing = set(required) - set(obj)
    if missing:
        raise ConfigError(f"{section} is missing {sorted(missing)}")
    return obj


@dataclass
class RunConfig:
    dataset: dict
    objective: dict
    federation: dict
    schedule: dict
    experiment: dict = field(default_factory=dict)
    base_dir: Path = field(default_factory=Path.cwd)

    # ------------------------------------------------------------ loading

    @classmethod
    def from_dict(cls, doc: Any, base_dir: str | os.PathLike | None = None) -> "RunConfig":
        _check_keys("config", doc, TOP_KEYS, {"dataset", "objective", "federation", "schedule"})
        base = Path(base_dir) if base_dir is not None else Path.cwd()
        ds = _check_keys("dataset", doc["dataset"], DATASET_KEYS)
        if ("path" in ds) == ("generator" in ds):
            raise ConfigError("dataset needs exactly one of 'path' or 'generator'")
        if "generator" in ds:
            gen = ds["generator"]
            if gen not in GENERATORS:
                raise ConfigError(f"unknown generator {gen!r}; expected one of {sorted(GENERATORS)}")
            _check_keys(f"dataset.params ({gen})", ds.get("params", {}), GENERATORS[gen])
        obj = _check_keys("objective", doc["objective"], OBJECTIVE_KEYS, {"kind"})
        if obj["kind"] not in OBJECTIVE_KINDS:
            raise ConfigError(f"unknown objective kind {obj['kind']!r}")
        fed = _check_keys("federation", doc["federation"], FEDERATION_KEYS, {"N", "E", "T"})
        sch = _check_keys("schedule", doc["schedule"], {"kind", "params"}, {"kind"})
        exp = _check_keys("experiment", doc.get("experiment", {}), EXPERIMENT_KEYS)
        if isinstance(exp.get("grid"), dict):
            _check_keys("experiment.grid", exp["grid"], GRID_KEYS)
        cfg = cls(ds, obj, fed, sch, exp, base)
        cfg._check_files()
        return cfg

    @classmethod
    def load(cls, path: str | os.PathLike) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(doc, path.parent)

    def _resolve(self, name: str) -> Path:
        p = Path(name)
        if p.is_absolute():
            if p.is_file():
                return p
        else:
            local = self.base_dir / p
            if local.is_file():
                return local
            found = find_dataset(name)
            if found is not None:
                return found
        raise ConfigError(f"file not found: {name}")

    def _check_files(self) -> None:
        if "path" in self.dataset:
            self._resolve(self.dataset["path"])
        feats = self.dataset.get("params", {}).get("features")
        if feats is not None:
            self._resolve(feats)
        if self.experiment.get("fstar_path") is not None:
            self._resolve(self.experiment["fstar_path"])

    # ------------------------------------------------------------ building

    def build_dataset(self) -> tuple[Dataset, DevicePartition | None]:
        ds = self.dataset
        if "path" in ds:
            return load_libsvm(self._resolve(ds["path"]), ds.get("n_features")), None
        gen, p = ds["generator"], dict(ds.get("params", {}))
        try:
            if gen == "logistic":
                return gen_logistic_classification(**p), None
            if gen == "gaussian_quadratic":
                p["spectrum"] = p.get("spectrum") or [1.0] * int(p["d"])
                return gen_gaussian_quadratic(**p), None
            if gen == "overparam_regression":
                feats = load_libsvm(self._resolve(p["features"]))
                return gen_overparam_regression(feats, p.get("seed", 0)), None
            data, part = gen_counterexample(**p)
            return data, part
        except TypeError as exc:
            raise ConfigError(f"bad generator parameters for {gen}: {exc}") from exc

    def build_objective(self, N: int | None = None) -> Objective:
        data, part = self.build_dataset()
        N = int(self.federation["N"]) if N is None else N
        if part is None or part.N != N:
            part = partition_even(data, N)
        kind = self.objective["kind"]
        lam = self.objective.get("lambda")
        if lam is None:
            lam = 0.0 if kind in (LEAST_SQUARES, DISTANCE, "logistic") else 1.0 / data.n
        return Objective(kind, data, part, float(lam))

    def build_schedule(self, objective: Objective, fed: dict | None = None) -> Schedule:
        fed = self.federation if fed is None else fed
        params = dict(self.schedule.get("params", {}))
        if any(v == AUTO for v in params.values()):
            known: dict[str, Any] = {
                "N": int(fed["N"]), "E": int(fed["E"]), "T": int(fed["T"]), "n": objective.dataset.n,
            }
            if any(v == AUTO and k not in known for k, v in params.items()):
                rep = spectral_report(objective, sample_count=1)
                known.update(
                    mu=rep.mu, L=rep.L, l=rep.l, kappa=rep.kappa, kappa1=rep.kappa1,
                    kappa_tilde=rep.kappa_tilde, nu_max=rep.nu_max, nu_min=rep.nu_min,
                    L_or_mu=rep.mu if objective.kind == LEAST_SQUARES else rep.L,
                )
            for k, v in params.items():
                if v == AUTO:
                    if known.get(k) is None:
                        raise ConfigError(f"schedule parameter {k!r} cannot be derived automatically")
                    params[k] = known[k]
        return Schedule(self.schedule["kind"], params)

    def build_federation(self, objective: Objective, seed: int | None = None) -> FederationConfig:
        fed = dict(self.federation)
        if seed is not None:
            fed["master_seed"] = seed
        return FederationConfig(schedule=self.build_schedule(objective, fed), **fed)

    def grid(self) -> list[tuple[float, float]] | None:
        g = self.experiment.get("grid")
        if g is None:
            return None
        if isinstance(g, dict):
            kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in g.items()}
            return experiment_grid(**kw)
        try:
            return [(float(a), float(b)) for a, b in g]
        except (TypeError, ValueError) as exc:
            raise ConfigError("experiment.grid must be a list of [eta0, c] pairs or an object") from exc

    def fstar(self) -> float | None:
        path = self.experiment.get("fstar_path")
        if path is None:
            return None
        doc = json.loads(self._resolve(path).read_text(encoding="utf-8"))
        return float(doc["f_star"])
