"""Named experiments, their runners, and the seeded replicate harness.

An experiment is a JSON-serialisable :class:`ExperimentSpec`.  Each replicate
gets its own 64-bit seed derived from the spec's root seed and the spec name,
so presets never share random streams.  Results are written as CSV (or JSON)
tables together with a ``manifest.json`` from which every table can be
regenerated.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import platform
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from ._accel import USE_NUMBA
from .amp import AmpRunConfig, PolicyFromSe, SureTuned, amp_run
from .lasso import lasso_path, path_rows
from .problem_gen import GenConfig, SignalPrior, generate, streamed_first_pseudo_data
from .shrinkage import optimal_tau, scalar_risk
from .state_evolution import (
    FixedChi,
    SeConfig,
    admissible_chi_grid,
    greedy_optimal_taus,
    joint_grid_search,
    lambda_path,
    maximin_chi,
)
from .sure import TunerConfig, modified_bisection, sure_curve

log = logging.getLogger(__name__)

__all__ = [
    "ConfigError",
    "ExperimentIOError",
    "ExperimentSpec",
    "KINDS",
    "builtin_experiments",
    "get_preset",
    "load_spec",
    "replicate_seeds",
    "run_experiment",
    "risk_curves",
    "effective_sigma",
    "threshold_gap",
    "bisection_gaps",
    "first_iteration_gaps",
    "mse_compare",
]


class ConfigError(ValueError):
    """An experiment or config file failed validation."""


class ExperimentIOError(OSError):
    """Reading or writing an experiment file failed."""


# ------------------------------------------------------------ measurements


def effective_sigma(pseudo_data: np.ndarray, beta_o: np.ndarray) -> float:
    """Realised noise level of the pseudo-data, ``||x - beta_o|| / sqrt(p)``."""
    return float(np.linalg.norm(pseudo_data - beta_o)) / math.sqrt(beta_o.size)


def threshold_gap(prior: SignalPrior, sigma: float, tau: float, floor: float = 1e-3) -> tuple[float, float]:
    """``(gamma_opt, relative excess risk)`` of threshold ``tau`` at noise level ``sigma``.

    Excess is ``(R(tau) - min R) / max(min R, floor)``.
    """
    t_opt = optimal_tau(prior, sigma)
    r_opt = scalar_risk(prior, sigma, t_opt)
    r = scalar_risk(prior, sigma, tau)
    return t_opt / sigma, (r - r_opt) / max(r_opt, floor)


def risk_curves(
    gen: GenConfig,
    iterations: Sequence[int],
    gammas: Sequence[float],
    tuner: TunerConfig | None = None,
) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """SURE estimate and Bayes risk along ``gammas`` at the given AMP iterations.

    Iteration ``k`` is the ``k``-th pseudo-data (``k = 1`` is ``X^T y``).  AMP is
    SURE-tuned between snapshots.  The Bayes risk uses the instance's
    empirical prior at the realised noise level of the pseudo-data.
    """
    inst = generate(gen)
    T = max(iterations)
    traj = amp_run(inst, AmpRunConfig(max_iters=max(T - 1, 1), threshold_source=SureTuned(tuner or TunerConfig())))
    prior = gen.empirical_prior()
    gammas = np.asarray(gammas, dtype=float)
    out = {}
    for k in iterations:
        s = traj[min(k - 1, len(traj) - 1)]
        sig = effective_sigma(s.pseudo_data, inst.beta_o)
        est = sure_curve(s.pseudo_data, s.sigma_hat, gammas).estimates
        bayes = scalar_risk(prior, sig, gammas * sig)
        out[k] = (est, np.asarray(bayes))
    return out


def bisection_gaps(
    gen: GenConfig,
    iterations: Sequence[int] = (1, 5, 10, 50),
    tuner: TunerConfig | None = None,
) -> list[dict]:
    """Excess Bayes risk of the SURE-tuned threshold at each listed AMP iteration."""
    inst = generate(gen)
    diags: list = []
    traj = amp_run(
        inst,
        AmpRunConfig(max_iters=max(iterations), threshold_source=SureTuned(tuner or TunerConfig())),
        diagnostics=diags,
    )
    prior = gen.empirical_prior()
    rows = []
    for k in iterations:
        if k - 1 >= len(diags):
            break
        s, d = traj[k - 1], diags[k - 1]
        sig = effective_sigma(s.pseudo_data, inst.beta_o)
        g_opt, gap = threshold_gap(prior, sig, d.tau)
        rows.append(
            {
                "iteration": k,
                "gamma_hat": d.gamma_hat,
                "gamma_opt": g_opt,
                "sigma_hat": s.sigma_hat,
                "sigma_eff": sig,
                "delta_star": d.delta_star,
                "rel_gap": gap,
            }
        )
    return rows


def first_iteration_gaps(gen: GenConfig, deltas: Sequence[float], config: TunerConfig | None = None) -> list[dict]:
    """Bisection at the first pseudo-data for each fixed ``Delta``.

    Uses the streamed ``X^T y`` so it scales to ``p`` where ``X`` does not fit in memory.
    """
    config = config or TunerConfig()
    x, beta_o, sigma_hat = streamed_first_pseudo_data(gen)
    sig = effective_sigma(x, beta_o)
    prior = gen.empirical_prior()
    rows = []
    for d in deltas:
        g = modified_bisection(x, sigma_hat, d, config)
        g_opt, gap = threshold_gap(prior, sig, g * sigma_hat)
        rows.append({"delta": d, "gamma_hat": g, "gamma_opt": g_opt, "rel_gap": gap})
    return rows


def mse_compare(gen: GenConfig, max_iters: int = 30, chi_grid: Sequence[float] | None = None) -> dict[str, list[float]]:
    """MSE-per-iteration for SURE tuning, maximin ``chi`` and the best constant ``chi``.

    The constant is picked by grid search on final MSE, which needs the true
    signal; it is a benchmark, not a usable tuner.
    """
    inst = generate(gen)

    def run(source) -> list[float]:
        traj = amp_run(inst, AmpRunConfig(max_iters=max_iters, threshold_source=source))
        m = [s.mse for s in traj]
        return m + [m[-1]] * (max_iters + 1 - len(m))

    sure = run(SureTuned(TunerConfig()))
    chi_mm = maximin_chi(gen.delta)
    maximin = run(PolicyFromSe(FixedChi(chi_mm)))
    grid = np.linspace(0.5, 3.0, 26) if chi_grid is None else np.asarray(chi_grid)
    best, best_chi = None, float("nan")
    for c in grid:
        m = run(PolicyFromSe(FixedChi(float(c))))
        if best is None or m[-1] < best[-1]:
            best, best_chi = m, float(c)
    return {"sure": sure, "maximin": maximin, "grid_constant": best, "chi_maximin": chi_mm, "chi_grid_best": best_chi}


# ------------------------------------------------------------------ runners


def _run_risk_vs_p(gen: GenConfig, params: dict) -> dict[str, list[dict]]:
    lo, hi, num = params.get("gammas", [0.05, 4.0, 50])
    gammas = np.linspace(lo, hi, int(num))
    iterations = params.get("iterations", [1, 10])
    out: dict[str, list[dict]] = {"sup_deviation": []}
    for p in params.get("p_list", [200, 600, 4000, 10000]):
        curves = risk_curves(gen.replace(p=int(p)), iterations, gammas)
        rows = []
        for k, (est, bayes) in curves.items():
            rows += [
                {"iteration": k, "gamma": float(g), "sure": float(e), "bayes": float(b)}
                for g, e, b in zip(gammas, est, bayes)
            ]
            out["sup_deviation"].append({"p": int(p), "iteration": k, "sup_dev": float(np.max(np.abs(est - bayes)))})
        out[f"curve_p{int(p)}"] = rows
    return out


def _run_bisection_snapshots(gen: GenConfig, params: dict) -> dict[str, list[dict]]:
    return {"snapshots": bisection_gaps(gen, params.get("iterations", [1, 5, 10, 50]))}


def _run_delta_sensitivity(gen: GenConfig, params: dict) -> dict[str, list[dict]]:
    return {"delta_gaps": first_iteration_gaps(gen, params.get("deltas", [1e-3, 1e-2, 1e-1, 1.0]))}


def _run_mse_compare(gen: GenConfig, params: dict) -> dict[str, list[dict]]:
    res = mse_compare(gen, int(params.get("max_iters", 30)))
    rows = [
        {"t": t, "mse_sure": a, "mse_maximin": b, "mse_grid_constant": c}
        for t, (a, b, c) in enumerate(zip(res["sure"], res["maximin"], res["grid_constant"]))
    ]
    return {"mse": rows, "thresholds": [{"chi_maximin": res["chi_maximin"], "chi_grid_best": res["chi_grid_best"]}]}


def _run_lasso_path(gen: GenConfig, params: dict) -> dict[str, list[dict]]:
    inst = generate(gen)
    num = int(params.get("num", 100))
    grid = np.linspace(0.0, float(params.get("lambda_max", 0.25)), num + 1)[1:]
    return {"path": path_rows(lasso_path(inst, grid), inst.beta_o)}


def _run_se_lambda_path(gen: GenConfig, params: dict) -> dict[str, list[dict]]:
    cfg = SeConfig(gen.asymptotic_prior(), gen.delta, gen.sigma_w)
    grid = admissible_chi_grid(cfg, int(params.get("num", 200)), float(params.get("chi_max", 10.0)))
    return {"lambda_path": lambda_path(cfg, grid).rows()}


def _run_greedy_vs_joint(gen: GenConfig, params: dict) -> dict[str, list[dict]]:
    cfg = SeConfig(gen.asymptotic_prior(), gen.delta, gen.sigma_w)
    T = int(params.get("T", 3))
    size = int(params.get("grid_size", 20))
    greedy = greedy_optimal_taus(cfg, T)
    grids = [np.linspace(0.0, 3.0 * s, size) for s in greedy.sigmas[:T]]
    joint_sigma, joint_taus = joint_grid_search(cfg, grids)
    return {
        "greedy_vs_joint": [
            {"T": T, "greedy_sigma": greedy.sigmas[-1], "joint_sigma": joint_sigma, "joint_taus": " ".join(map(str, joint_taus))}
        ]
    }


def _run_amp(gen: GenConfig, params: dict) -> dict[str, list[dict]]:
    from .amp import trajectory_rows

    inst = generate(gen)
    policy = params.get("policy", "sure")
    if policy == "sure":
        source = SureTuned(TunerConfig.from_dict(params.get("tuner", {})))
    elif policy == "chi":
        source = PolicyFromSe(FixedChi(float(params["chi"])))
    else:
        raise ConfigError(f"unknown amp policy {policy!r}")
    return {"trajectory": trajectory_rows(amp_run(inst, AmpRunConfig(max_iters=int(params.get("max_iters", 200)), threshold_source=source)))}


# kind -> (runner, per-table key columns used to group summary rows)
KINDS: dict[str, tuple[Callable, dict[str, tuple[str, ...]]]] = {
    "risk_vs_p": (_run_risk_vs_p, {"sup_deviation": ("p", "iteration"), "*": ("iteration", "gamma")}),
    "bisection_snapshots": (_run_bisection_snapshots, {"snapshots": ("iteration",)}),
    "delta_sensitivity": (_run_delta_sensitivity, {"delta_gaps": ("delta",)}),
    "mse_compare": (_run_mse_compare, {"mse": ("t",), "thresholds": ()}),
    "lasso_path": (_run_lasso_path, {"path": ("lambda",)}),
    "se_lambda_path": (_run_se_lambda_path, {"lambda_path": ("chi",)}),
    "greedy_vs_joint": (_run_greedy_vs_joint, {"greedy_vs_joint": ("T",)}),
    "amp": (_run_amp, {"trajectory": ("t",)}),
}


# --------------------------------------------------------------------- specs


_SPEC_KEYS = {"name", "kind", "gen", "params", "replicates", "output_path"}


@dataclass
class ExperimentSpec:
    name: str
    kind: str
    gen: GenConfig
    params: dict = field(default_factory=dict)
    replicates: int = 1
    output_path: str = ""

    def __post_init__(self):
        if not self.name or not all(c.isalnum() or c in "-_" for c in self.name):
            raise ConfigError(f"invalid experiment name {self.name!r}")
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; choose from {sorted(KINDS)}")
        if int(self.replicates) < 1:
            raise ConfigError("replicates must be >= 1")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "gen": self.gen.to_dict(),
            "params": self.params,
            "replicates": int(self.replicates),
            "output_path": self.output_path,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        if not isinstance(d, dict):
            raise ConfigError("experiment config must be a JSON object")
        unknown = set(d) - _SPEC_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key in ("name", "kind", "gen"):
            if key not in d:
                raise ConfigError(f"missing config key {key!r}")
        try:
            gen = GenConfig.from_dict(d["gen"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid gen section: {exc}") from exc
        params = d.get("params", {})
        if not isinstance(params, dict):
            raise ConfigError("params must be an object")
        return cls(
            name=str(d["name"]),
            kind=str(d["kind"]),
            gen=gen,
            params=params,
            replicates=int(d.get("replicates", 1)),
            output_path=str(d.get("output_path", "")),
        )

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def load_spec(path: str | Path) -> ExperimentSpec:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ExperimentIOError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return ExperimentSpec.from_dict(data)


def _point(p, delta, rho, sigma_w, seed=0) -> GenConfig:
    return GenConfig(p=p, delta=delta, rho=rho, prior=SignalPrior(((1.0, 1.0),)), sigma_w=sigma_w, seed=seed)


def builtin_experiments() -> list[ExperimentSpec]:
    risk = {"p_list": [200, 600, 4000, 10000], "iterations": [1, 10], "gammas": [0.05, 4.0, 50]}
    # the path configs use N(0,1) entries in their original form; with N(0,1/n)
    # entries the same problem has noise sigma_w / sqrt(n)
    n_path = 1000
    return [
        ExperimentSpec("risk-vs-p-case1", "risk_vs_p", _point(10000, 0.85, 0.25, 0.0), dict(risk), 20),
        ExperimentSpec("risk-vs-p-case2", "risk_vs_p", _point(10000, 0.85, 0.25, 0.5), dict(risk), 20),
        ExperimentSpec("risk-vs-p-case3", "risk_vs_p", _point(10000, 0.2, 0.1, 0.1), dict(risk), 20),
        ExperimentSpec("bisection-snapshots-noiseless", "bisection_snapshots", _point(2000, 0.85, 0.25, 0.0), {"iterations": [1, 5, 10, 50]}, 10),
        ExperimentSpec("bisection-snapshots-noisy", "bisection_snapshots", _point(2000, 0.85, 0.25, 0.2), {"iterations": [1, 5, 10, 50]}, 10),
        ExperimentSpec("delta-sensitivity-p4000", "delta_sensitivity", _point(4000, 0.85, 0.25, 0.2), {"deltas": [1e-3, 1e-2, 1e-1, 1.0]}, 10),
        ExperimentSpec("delta-sensitivity-p40000", "delta_sensitivity", _point(40000, 0.85, 0.25, 0.2), {"deltas": [1e-3, 1e-2, 1e-1, 1.0]}, 10),
        ExperimentSpec("mse-compare", "mse_compare", _point(2000, 0.85, 0.25, 0.0), {"max_iters": 30}, 10),
        ExperimentSpec("lasso-path-active-set", "lasso_path", _point(2000, 0.5, 0.1, math.sqrt(0.7 / n_path)), {"lambda_max": 0.25, "num": 100}, 1),
        ExperimentSpec("lasso-path-mse-low-noise", "lasso_path", _point(2000, 0.5, 0.1, math.sqrt(0.4 / n_path)), {"lambda_max": 1.0, "num": 100}, 1),
        ExperimentSpec("lasso-path-mse-high-noise", "lasso_path", _point(2000, 0.5, 0.1, math.sqrt(2.0 / n_path)), {"lambda_max": 1.0, "num": 100}, 1),
        ExperimentSpec("se-lambda-path", "se_lambda_path", _point(10000, 0.85, 0.25, 0.2), {"num": 200}, 1),
        ExperimentSpec("greedy-vs-joint", "greedy_vs_joint", _point(10000, 0.85, 0.25, 0.2), {"T": 3, "grid_size": 20}, 1),
    ]


def get_preset(name: str) -> ExperimentSpec:
    for spec in builtin_experiments():
        if spec.name == name:
            return spec
    raise ConfigError(f"no preset named {name!r}")


# --------------------------------------------------------------------- harness


def replicate_seeds(spec: ExperimentSpec) -> list[int]:
    """Per-replicate seeds from the root seed, salted by the experiment name."""
    ss = np.random.SeedSequence(int(spec.gen.seed), spawn_key=(zlib.crc32(spec.name.encode()),))
    return [int(c.generate_state(1, np.uint64)[0]) for c in ss.spawn(int(spec.replicates))]


def _summaries(rows: list[dict], keys: tuple[str, ...]) -> list[dict]:
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault(tuple(r.get(k) for k in keys), []).append(r)
    out = []
    for key, grp in groups.items():
        numeric = [c for c, v in grp[0].items() if c not in keys and c not in ("kind", "replicate", "seed") and isinstance(v, (int, float))]
        for label, q in (("median", 0.5), ("q25", 0.25), ("q75", 0.75)):
            row = {"kind": label, "replicate": "", "seed": ""}
            row.update(dict(zip(keys, key)))
            for c in numeric:
                vals = [float(g[c]) for g in grp if g.get(c) is not None]
                row[c] = float(np.quantile(vals, q)) if vals else float("nan")
            out.append(row)
    return out


def _write_table(rows: list[dict], path: Path, fmt: str) -> None:
    try:
        if fmt == "json":
            path.write_text(json.dumps(rows, indent=1))
            return
        fields: list[str] = []
        for r in rows:
            for k in r:
                if k not in fields:
                    fields.append(k)
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=fields, restval="")
            w.writeheader()
            w.writerows(rows)
    except OSError as exc:
        raise ExperimentIOError(f"cannot write {path}: {exc}") from exc


def run_experiment(
    spec: ExperimentSpec,
    out_dir: str | Path | None = None,
    *,
    threads: int = 1,
    fmt: str = "csv",
) -> dict:
    """Run all replicates, write one table per result kind plus ``manifest.json``.

    Replicates run in a thread pool; results are gathered in replicate order
    so the written tables do not depend on scheduling.  A failing replicate
    is recorded in the manifest and the rest continue.
    """
    if fmt not in ("csv", "json"):
        raise ConfigError("format must be csv or json")
    out = Path(out_dir or spec.output_path or spec.name)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ExperimentIOError(f"cannot create output directory {out}: {exc}") from exc
    runner, key_map = KINDS[spec.kind]
    seeds = replicate_seeds(spec)
    start = time.perf_counter()

    def one(seed: int):
        try:
            return runner(spec.gen.replace(seed=seed), spec.params), None
        except Exception as exc:  # recorded per replicate, the run continues
            log.exception("replicate with seed %d failed", seed)
            return None, f"{type(exc).__name__}: {exc}"

    with ThreadPoolExecutor(max_workers=max(1, int(threads))) as pool:
        results = list(pool.map(one, seeds))

    tables: dict[str, list[dict]] = {}
    failures = []
    for i, (seed, (res, err)) in enumerate(zip(seeds, results)):
        if err is not None:
            failures.append({"replicate": i, "seed": seed, "error": err})
            continue
        for table, rows in res.items():
            tables.setdefault(table, []).extend({"kind": "replicate", "replicate": i, "seed": seed, **r} for r in rows)
    files = []
    for table, rows in tables.items():
        keys = key_map.get(table, key_map.get("*", ()))
        if spec.replicates > 1:
            rows = rows + _summaries(rows, keys)
        path = out / f"{table}.{fmt}"
        _write_table(rows, path, fmt)
        files.append(path.name)
    manifest = {
        "experiment": spec.to_dict(),
        "config_hash": spec.config_hash(),
        "seeds": seeds,
        "files": sorted(files),
        "failures": failures,
        "software": {
            "amptune": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
            "numba_kernels": USE_NUMBA,
        },
        "format": fmt,
        "wall_time_s": time.perf_counter() - start,
    }
    _write_table_json(manifest, out / "manifest.json")
    return manifest


def _write_table_json(obj: dict, path: Path) -> None:
    try:
        path.write_text(json.dumps(obj, indent=2, sort_keys=True))
    except OSError as exc:
        raise ExperimentIOError(f"cannot write {path}: {exc}") from exc
