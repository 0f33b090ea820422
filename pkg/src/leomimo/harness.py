"""Experiment configuration, presets, and deterministic CSV output.

A configuration file is TOML with these sections (all optional except where
a preset does not already supply the value)::

    [experiment]
    seed = 1
    trials = 2000
    mode = "dl"            # dl | ul | both
    baseline = "none"      # none | fr4
    kappa_db = 10.0
    snr_db = [-10, -5, 0, 5, 10, 15, 20]
    strategies = ["scsi", "icsi"]
    estimate_samples = 50

    [array]
    m_x = 16
    m_y = 16

    [grouping]
    g = 4                  # or a list such as [1, 2, 4, 8], or g_x/g_y

    [users]
    count = 4096           # or angles = [[theta_x, theta_y], ...],
                           # or per_group_cell = true for G_x G_y M users
    gamma = 256.0          # defaults to the antenna count

    [output]
    path = "results.csv"
"""

from __future__ import annotations

import copy
import csv
import io
import math
import os
import sys
import tempfile
from dataclasses import dataclass
from typing import Sequence

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

from .channel import SpaceAngles, UpaConfig, UserChannelStats, substream
from .grouping import GroupingConfig, epsilon_of, fr4_schedule, saug_assign
from .rate import (
    DL_STRATEGIES,
    RateEstimate,
    bound_constants,
    estimate_population,
    evaluate_rates,
    rate_lower_bound_mc,
    rate_upper_bound_mc,
)
from .txrx import LinkBudget

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "PRESETS",
    "CSV_COLUMNS",
    "STRATEGY_TAGS",
    "preset_configs",
    "load_config",
    "configs_from_dict",
    "generate_users",
    "intf_upper",
    "run_experiment",
    "run_all",
    "records_to_csv",
    "write_csv",
]

CSV_COLUMNS = (
    "strategy",
    "mode",
    "M_x",
    "M_y",
    "G",
    "snr_db",
    "kappa_db",
    "trials",
    "seed",
    "rate",
    "stderr",
    "r_ub",
    "r_lb",
    "epsilon",
    "delta",
)

STRATEGY_TAGS = DL_STRATEGIES + ("intf",)
MODES = ("dl", "ul", "both")
BASELINES = ("none", "fr4")
FR4_STRATEGIES = ("dft", "scsi")
USER_STREAM = 2
ESTIMATE_STREAM_SEED_OFFSET = 3

SNR_SWEEP = [-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0]

PRESETS = {
    "fig2": {
        "experiment": {
            "seed": 1,
            "trials": 2000,
            "mode": "both",
            "baseline": "none",
            "kappa_db": 10.0,
            "snr_db": SNR_SWEEP,
            "strategies": ["icsi", "scsi", "scsi-est"],
            "estimate_samples": 50,
        },
        "array": {"m_x": 16, "m_y": 16},
        "grouping": {"g": [1]},
        "users": {"per_group_cell": True},
    },
    "fig3": {
        "experiment": {
            "seed": 1,
            "trials": 2000,
            "mode": "dl",
            "baseline": "none",
            "kappa_db": 10.0,
            "snr_db": SNR_SWEEP,
            "strategies": ["scsi", "dft", "intf"],
            "estimate_samples": 50,
        },
        "array": {"m_x": 16, "m_y": 16},
        "grouping": {"g": [1, 2, 4, 8]},
        "users": {"per_group_cell": True},
    },
    "fig4": {
        "experiment": {
            "seed": 1,
            "trials": 2000,
            "mode": "dl",
            "baseline": "fr4",
            "kappa_db": 10.0,
            "snr_db": SNR_SWEEP,
            "strategies": ["scsi"],
            "estimate_samples": 50,
        },
        "array": {"m_x": 16, "m_y": 16},
        "grouping": {"g": [4]},
        "users": {"per_group_cell": True},
    },
}


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: a user population, a grouping, and an SNR sweep.

    ``user_model`` is either an integer user count (angles i.i.d. uniform on
    ``[-1, 1)^2``) or an explicit tuple of :class:`SpaceAngles`. ``gamma``
    defaults to the antenna count.
    """

    upa: UpaConfig
    grouping: GroupingConfig
    kappa_db: float
    snr_db_list: tuple
    strategies: tuple
    user_model: object
    trials: int = 2000
    seed: int = 0
    output_path: str | None = None
    mode: str = "dl"
    baseline: str = "none"
    estimate_samples: int = 50
    gamma: float | None = None

    def __post_init__(self):
        if int(self.trials) != self.trials or self.trials < 1:
            raise ConfigError("trials must be a positive integer")
        if not self.snr_db_list:
            raise ConfigError("the SNR list is empty")
        if not all(math.isfinite(s) for s in self.snr_db_list):
            raise ConfigError("SNR values must be finite")
        if not self.strategies:
            raise ConfigError("no strategies requested")
        for s in self.strategies:
            if s not in STRATEGY_TAGS:
                raise ConfigError(f"unknown strategy {s!r}; choose from {', '.join(STRATEGY_TAGS)}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.baseline not in BASELINES:
            raise ConfigError(f"baseline must be one of {BASELINES}, got {self.baseline!r}")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        if not math.isfinite(self.kappa_db):
            raise ConfigError("kappa_db must be finite")
        if self.estimate_samples < 1:
            raise ConfigError("estimate_samples must be at least 1")
        if self.gamma is not None and not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise ConfigError("gamma must be positive and finite")
        if isinstance(self.user_model, (int, np.integer)):
            if self.user_model < 1:
                raise ConfigError("user count must be positive")
        elif not self.user_model:
            raise ConfigError("the explicit user list is empty")

    @property
    def kappa(self) -> float:
        return 10.0 ** (self.kappa_db / 10.0)

    @property
    def channel_power(self) -> float:
        return float(self.upa.m) if self.gamma is None else float(self.gamma)

    @property
    def modes(self) -> tuple:
        return ("dl", "ul") if self.mode == "both" else (self.mode,)


# -- loading --------------------------------------------------------------------

def _layer(preset: dict, override: dict) -> dict:
    """Config values over a preset; grouping and user-model choices replace the preset's."""
    base = copy.deepcopy(preset)
    if "grouping" in override:
        base.pop("grouping", None)
    users = override.get("users", {})
    if isinstance(users, dict) and ({"count", "angles", "per_group_cell"} & set(users)):
        for key in ("count", "angles", "per_group_cell"):
            base.get("users", {}).pop(key, None)
    return _merge(base, override)


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


_KNOWN = {
    "experiment": {"seed", "trials", "mode", "baseline", "kappa_db", "snr_db", "strategies", "estimate_samples"},
    "array": {"m_x", "m_y"},
    "grouping": {"g", "g_x", "g_y"},
    "users": {"count", "angles", "gamma", "per_group_cell"},
    "output": {"path"},
}


def _check_keys(data: dict) -> None:
    for section, value in data.items():
        if section not in _KNOWN:
            raise ConfigError(f"unknown section [{section}]")
        if not isinstance(value, dict):
            raise ConfigError(f"[{section}] must be a table")
        extra = set(value) - _KNOWN[section]
        if extra:
            raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(extra))}")


def _group_pairs(grouping: dict) -> list[tuple[int, int]]:
    if "g" in grouping:
        if "g_x" in grouping or "g_y" in grouping:
            raise ConfigError("give either g or g_x/g_y, not both")
        values = grouping["g"]
        values = values if isinstance(values, list) else [values]
        return [(v, v) for v in values]
    if "g_x" in grouping or "g_y" in grouping:
        return [(grouping.get("g_x", 1), grouping.get("g_y", 1))]
    return [(1, 1)]


def _as_int(value, name) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    return int(value)


def _as_float(value, name) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name} must be a number, got {value!r}")
    return float(value)


def configs_from_dict(data: dict) -> list[ExperimentConfig]:
    """Validate a parsed configuration and expand grouping lists into configs."""
    _check_keys(data)
    exp = data.get("experiment", {})
    arr = data.get("array", {})
    users = data.get("users", {})
    try:
        upa = UpaConfig(_as_int(arr.get("m_x", 16), "m_x"), _as_int(arr.get("m_y", 16), "m_y"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    snr = exp.get("snr_db")
    if snr is None:
        raise ConfigError("experiment.snr_db is required")
    snr = snr if isinstance(snr, list) else [snr]
    snr = tuple(_as_float(s, "snr_db") for s in snr)
    strategies = exp.get("strategies")
    if strategies is None:
        raise ConfigError("experiment.strategies is required")
    if not isinstance(strategies, list) or not all(isinstance(s, str) for s in strategies):
        raise ConfigError("experiment.strategies must be a list of names")
    strategies = tuple(s.lower() for s in strategies)

    gamma = users.get("gamma")
    gamma = None if gamma is None else _as_float(gamma, "gamma")
    out = []
    for g_x, g_y in _group_pairs(data.get("grouping", {})):
        try:
            gcfg = GroupingConfig(_as_int(g_x, "g_x"), _as_int(g_y, "g_y"))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if "angles" in users:
            if "count" in users or users.get("per_group_cell"):
                raise ConfigError("give either users.angles or a user count, not both")
            try:
                model = tuple(SpaceAngles(float(a[0]), float(a[1])) for a in users["angles"])
            except (TypeError, IndexError, ValueError) as exc:
                raise ConfigError(f"bad users.angles entry: {exc}") from exc
        elif "count" in users:
            model = _as_int(users["count"], "users.count")
        elif users.get("per_group_cell"):
            model = gcfg.g_x * gcfg.g_y * upa.m
        else:
            raise ConfigError("users need a count, angles, or per_group_cell = true")
        out.append(
            ExperimentConfig(
                upa=upa,
                grouping=gcfg,
                kappa_db=_as_float(exp.get("kappa_db", 10.0), "kappa_db"),
                snr_db_list=snr,
                strategies=strategies,
                user_model=model,
                trials=_as_int(exp.get("trials", 2000), "trials"),
                seed=_as_int(exp.get("seed", 0), "seed"),
                output_path=data.get("output", {}).get("path"),
                mode=exp.get("mode", "dl"),
                baseline=exp.get("baseline", "none"),
                estimate_samples=_as_int(exp.get("estimate_samples", 50), "estimate_samples"),
                gamma=gamma,
            )
        )
    if not out:
        raise ConfigError("grouping list is empty")
    return out


def preset_configs(name: str, overrides: dict | None = None) -> list[ExperimentConfig]:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return configs_from_dict(_layer(PRESETS[name], overrides or {}))


def load_config(path, preset: str | None = None) -> list[ExperimentConfig]:
    """Read a TOML configuration, layered over ``preset`` when one is given."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
        data = _layer(PRESETS[preset], data)
    return configs_from_dict(data)


# -- running ----------------------------------------------------------------------

def generate_users(config: ExperimentConfig) -> list[UserChannelStats]:
    """User statistics in id order; random angles come from a seeded substream."""
    if isinstance(config.user_model, (int, np.integer)):
        rng = substream(config.seed, USER_STREAM)
        raw = rng.uniform(-1.0, 1.0, size=(int(config.user_model), 2))
        angles = [SpaceAngles(float(x), float(y)) for x, y in raw]
    else:
        angles = list(config.user_model)
    return [UserChannelStats(a, config.channel_power, config.kappa) for a in angles]


def intf_upper(assignment, stats, budget, trials, seed) -> RateEstimate:
    """Interference-eliminated baseline; the same quantity as the rate upper bound."""
    return rate_upper_bound_mc(assignment, stats, budget, trials, seed)


def _fmt(value) -> str:
    if isinstance(value, float):
        return "nan" if math.isnan(value) else repr(value)
    return str(value)


def _record(strategy, mode, config, g, snr, rate, stderr, r_ub, r_lb, eps, delta) -> dict:
    return {
        "strategy": strategy,
        "mode": mode,
        "M_x": config.upa.m_x,
        "M_y": config.upa.m_y,
        "G": g,
        "snr_db": float(snr),
        "kappa_db": float(config.kappa_db),
        "trials": config.trials,
        "seed": config.seed,
        "rate": float(rate),
        "stderr": float(stderr),
        "r_ub": float(r_ub),
        "r_lb": float(r_lb),
        "epsilon": float(eps),
        "delta": float(delta),
    }


def _g_label(gcfg: GroupingConfig):
    return gcfg.g_x if gcfg.g_x == gcfg.g_y else f"{gcfg.g_x}x{gcfg.g_y}"


def _evaluate_scheme(config, assignment, stats, design, strategies, prefix, records):
    g = _g_label(config.grouping)
    eps = epsilon_of(assignment, config.upa)
    n = len(stats)
    evaluated = [s for s in strategies if s != "intf"]
    for snr in config.snr_db_list:
        budget = LinkBudget.uniform(n, snr)
        constants = bound_constants(assignment, stats, budget, config.upa)
        for mode in config.modes:
            if evaluated:
                reports = evaluate_rates(
                    assignment,
                    stats,
                    budget,
                    config.upa,
                    evaluated,
                    config.trials,
                    config.seed,
                    mode=mode,
                    design_stats=design,
                    constants=constants,
                    lower_bound=(mode == "dl"),
                )
                any_report = next(iter(reports.values()))
                r_ub, ub_se, r_lb = any_report.r_ub, any_report.r_ub_stderr, any_report.r_lb
            else:
                est = intf_upper(assignment, stats, budget, config.trials, config.seed)
                reports, r_ub, ub_se = {}, est.mean, est.stderr
                r_lb = math.nan
                if mode == "dl":
                    r_lb = rate_lower_bound_mc(assignment, stats, budget, constants, config.trials, config.seed).mean
            delta = constants.delta_dl if mode == "dl" else math.nan
            for s in strategies:
                if s == "intf":
                    rate, se = r_ub, ub_se
                else:
                    rate, se = reports[s].r_mc, reports[s].stderr
                records.append(_record(prefix + s, mode, config, g, snr, rate, se, r_ub, r_lb, eps, delta))


def run_experiment(config: ExperimentConfig) -> list[dict]:
    """Evaluate every strategy at every SNR; one record per (strategy, SNR, mode).

    Users are grouped by SAUG; with ``baseline = "fr4"`` the same users are
    also scheduled by four-color reuse and evaluated with DFT beams
    (``fr4-dft``) and ASLNR precoders (``fr4-scsi``).
    """
    stats = generate_users(config)
    ids = range(len(stats))
    design = None
    if "scsi-est" in config.strategies:
        design = estimate_population(stats, config.estimate_samples, config.seed + ESTIMATE_STREAM_SEED_OFFSET)
    records: list[dict] = []
    assignment = saug_assign(zip(ids, (s.angles for s in stats)), config.upa, config.grouping)
    _evaluate_scheme(config, assignment, stats, design, config.strategies, "", records)
    if config.baseline == "fr4":
        fr4 = fr4_schedule(zip(ids, (s.angles for s in stats)), config.upa)
        _evaluate_scheme(config, fr4, stats, design, FR4_STRATEGIES, "fr4-", records)
    return records


def run_all(configs: Sequence[ExperimentConfig]) -> list[dict]:
    records = []
    for config in configs:
        records.extend(run_experiment(config))
    return records


def records_to_csv(records: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for rec in records:
        writer.writerow([_fmt(rec[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def write_csv(records: Sequence[dict], path) -> None:
    """Write records as UTF-8 CSV atomically (a temporary file renamed into place)."""
    text = records_to_csv(records)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".simulate-", suffix=".csv", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
