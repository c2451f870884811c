"""Repair-mode table, Weibull repair times and scenario sampling.

Random numbers come from ``numpy.random.Generator(PCG64(seed))``. Only
``Generator.random`` is consumed; Weibull draws use the inverse CDF
``scale * (-log(1 - u)) ** (1 / shape)`` and normal draws use
``scipy.special.ndtri(u)``, so a scenario file is reproducible across numpy
releases that keep the PCG64 stream (stable since numpy 1.17).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtri

from .netgraph import NetworkModel

SCHEMA = 1


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class RepairMode:
    mu_rs: float
    scale: float


@dataclass
class RepairModeTable:
    """Per damaged line, an ordered list of (mean resource, Weibull scale) modes."""

    modes: dict[tuple[int, int], list[RepairMode]]
    shape: float = 2.0
    sigma: float = 1.0
    saturation: tuple[float, float] = (1.0, 15.0)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.shape <= 0:
            raise ScenarioError("Weibull shape must be positive")
        if self.sigma < 0:
            raise ScenarioError("sigma must be non-negative")
        lo, hi = self.saturation
        if lo <= 0 or hi < lo:
            raise ScenarioError("saturation must satisfy 0 < min <= max")
        for line, modes in self.modes.items():
            if not modes:
                raise ScenarioError(f"line {line} has no repair modes")
            for md in modes:
                if md.scale <= 0:
                    raise ScenarioError(f"line {line}: scale must be positive")
            for a, b in zip(modes, modes[1:]):
                if not (b.mu_rs > a.mu_rs and b.scale < a.scale):
                    raise ScenarioError(
                        f"line {line}: modes must trade more resource for a strictly smaller scale"
                    )

    @property
    def lines(self) -> list[tuple[int, int]]:
        return sorted(self.modes)

    def keys(self) -> list[tuple[tuple[int, int], int]]:
        return [(line, r + 1) for line in self.lines for r in range(len(self.modes[line]))]

    def mode(self, line, r) -> RepairMode:
        return self.modes[tuple(line)][r - 1]

    @classmethod
    def default(cls, lines, mu_rs=(5.0, 10.0), scales=(3.0, 1.0), **kw) -> "RepairModeTable":
        modes = [RepairMode(m, s) for m, s in zip(mu_rs, scales)]
        return cls({tuple(k): list(modes) for k in lines}, **kw)

    def to_dict(self) -> dict:
        return {
            "shape": self.shape,
            "sigma": self.sigma,
            "saturation": list(self.saturation),
            "lines": [
                {"line": list(line), "modes": [{"mu_rs": m.mu_rs, "scale": m.scale} for m in self.modes[line]]}
                for line in self.lines
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RepairModeTable":
        modes = {
            tuple(rec["line"]): [RepairMode(float(m["mu_rs"]), float(m["scale"])) for m in rec["modes"]]
            for rec in data["lines"]
        }
        return cls(
            modes,
            shape=float(data.get("shape", 2.0)),
            sigma=float(data.get("sigma", 1.0)),
            saturation=tuple(data.get("saturation", (1.0, 15.0))),
        )


def load_mode_table(path, net: NetworkModel | None = None) -> RepairModeTable:
    data = json.loads(Path(path).read_text())
    if "lines" not in data and net is not None:
        lines = [e.key for e in net.damaged]
        kw = {k: data[k] for k in ("shape", "sigma") if k in data}
        if "saturation" in data:
            kw["saturation"] = tuple(data["saturation"])
        return RepairModeTable.default(lines, tuple(data.get("mu_rs", (5.0, 10.0))),
                                       tuple(data.get("scales", (3.0, 1.0))), **kw)
    return RepairModeTable.from_dict(data)


@dataclass
class Scenario:
    id: int
    probability: float
    trepair: dict[tuple[tuple[int, int], int], int]
    rs: dict[tuple[tuple[int, int], int], float]
    budget: tuple[float, ...]

    def budget_at(self, t: int) -> float:
        """Resource budget at step ``t`` (1-based)."""
        return self.budget[t - 1] if len(self.budget) > 1 else self.budget[0]

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "probability": self.probability,
            "budget": list(self.budget),
            "repairs": [
                {"line": list(line), "mode": r, "trepair": self.trepair[(line, r)], "rs": self.rs[(line, r)]}
                for (line, r) in sorted(self.trepair)
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        trepair, rs = {}, {}
        for rec in data["repairs"]:
            key = (tuple(rec["line"]), int(rec["mode"]))
            trepair[key] = int(rec["trepair"])
            rs[key] = float(rec["rs"])
        return cls(int(data["id"]), float(data["probability"]), trepair, rs, tuple(float(b) for b in data["budget"]))


@dataclass
class ScenarioSet:
    scenarios: list[Scenario]
    seed: int | None
    horizon: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.scenarios:
            raise ScenarioError("scenario set is empty")
        total = sum(s.probability for s in self.scenarios)
        if abs(total - 1.0) > 1e-12:
            raise ScenarioError(f"probabilities sum to {total!r}, not 1")
        keys = set(self.scenarios[0].trepair)
        for s in self.scenarios:
            if set(s.trepair) != keys or set(s.rs) != keys:
                raise ScenarioError(f"scenario {s.id} has a different (line, mode) key set")

    def __len__(self):
        return len(self.scenarios)

    def __iter__(self):
        return iter(self.scenarios)

    def __getitem__(self, i) -> Scenario:
        return self.scenarios[i]

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([s.probability for s in self.scenarios])

    @property
    def keys(self):
        return sorted(self.scenarios[0].trepair)

    @property
    def lines(self):
        return sorted({k[0] for k in self.keys})

    def modes_of(self, line) -> list[int]:
        return sorted(r for (ln, r) in self.keys if ln == tuple(line))

    def subset(self, idx) -> "ScenarioSet":
        """Scenarios ``idx`` renormalised to probability one."""
        chosen = [self.scenarios[i] for i in idx]
        tot = sum(s.probability for s in chosen)
        out = [Scenario(s.id, s.probability / tot, s.trepair, s.rs, s.budget) for s in chosen]
        _fix_sum(out)
        return ScenarioSet(out, self.seed, self.horizon, dict(self.meta))

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "seed": self.seed,
            "horizon": self.horizon,
            "meta": self.meta,
            "scenarios": [s.to_dict() for s in self.scenarios],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioSet":
        return cls(
            [Scenario.from_dict(s) for s in data["scenarios"]],
            data.get("seed"),
            int(data["horizon"]),
            data.get("meta", {}),
        )


def load_scenarios(path) -> ScenarioSet:
    return ScenarioSet.from_dict(json.loads(Path(path).read_text()))


def mttr(scale: float, shape: float) -> float:
    """Mean of a Weibull(scale, shape) repair time."""
    if scale <= 0 or shape <= 0:
        raise ValueError("scale and shape must be positive")
    return scale * math.gamma(1.0 + 1.0 / shape)


def weibull_from_uniform(u, scale, shape):
    return scale * (-np.log1p(-np.asarray(u))) ** (1.0 / shape)


def sample_repair_times(scale: float, shape: float, size: int, seed=None) -> np.ndarray:
    """Un-rounded Weibull repair-time draws."""
    rng = np.random.default_rng(seed)
    return weibull_from_uniform(rng.random(size), scale, shape)


def _budget_tuple(budget, horizon) -> tuple[float, ...]:
    if np.isscalar(budget):
        return (float(budget),)
    b = tuple(float(v) for v in budget)
    if len(b) not in (1, horizon):
        raise ScenarioError(f"budget needs 1 or {horizon} entries, got {len(b)}")
    return b


def _fix_sum(scens):
    # make the probabilities sum to one exactly in floating point
    total = math.fsum(s.probability for s in scens)
    scens[-1].probability += 1.0 - total


def sample_scenarios(table: RepairModeTable, count: int, horizon: int, budget=30.0, seed=0) -> ScenarioSet:
    if count < 1:
        raise ScenarioError("need at least one scenario")
    if horizon < 1:
        raise ScenarioError("horizon must be at least one step")
    table.validate()
    rng = np.random.default_rng(seed)
    lo, hi = table.saturation
    btup = _budget_tuple(budget, horizon)
    keys = table.keys()
    scens = []
    for s in range(count):
        u = rng.random((len(keys), 2))
        trepair, rs = {}, {}
        for k, (line, r) in enumerate(keys):
            md = table.mode(line, r)
            draw = float(weibull_from_uniform(u[k, 0], md.scale, table.shape))
            trepair[(line, r)] = int(min(max(math.ceil(draw), 1), horizon))
            val = md.mu_rs + table.sigma * float(ndtri(u[k, 1]))
            rs[(line, r)] = float(min(max(val, lo), hi))
        scens.append(Scenario(s, 1.0 / count, trepair, rs, btup))
    _fix_sum(scens)
    return ScenarioSet(scens, seed, horizon, {"table": table.to_dict(), "budget": list(btup)})


def expected_scenario(table: RepairModeTable, horizon: int, budget=30.0) -> Scenario:
    """The mean-value scenario: ceil(MTTR) repair times, mean resources."""
    trepair, rs = {}, {}
    for line, r in table.keys():
        md = table.mode(line, r)
        trepair[(line, r)] = int(min(max(math.ceil(mttr(md.scale, table.shape) - 1e-12), 1), horizon))
        rs[(line, r)] = float(md.mu_rs)
    return Scenario(0, 1.0, trepair, rs, _budget_tuple(budget, horizon))


def expected_set(table: RepairModeTable, horizon: int, budget=30.0) -> ScenarioSet:
    return ScenarioSet([expected_scenario(table, horizon, budget)], None, horizon, {"expected": True})
