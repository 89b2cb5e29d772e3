"""Bayesian-optimization driver with the lower-confidence-bound acquisition.

One run produces a :class:`RunArchive`: the evaluated configurations in
order, the surrogate fitted on the complete archive, and the incumbent. The
exploration factor tau controls how strongly the run concentrates around
promising regions, which is exactly the sampling bias the rest of the
package quantifies and explains.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import space as sp
from . import surrogate as sg
from .errors import ContractError
from .objective import Objective

INCUMBENT_SURROGATE = "surrogate"
INCUMBENT_OBSERVED = "observed"


@dataclass(frozen=True)
class BoConfig:
    """Settings for one optimization run."""

    tau: float
    budget: int
    init_design_size: int
    kernel_family: str = sg.MATERN32
    nugget: float = 1e-8
    estimate_nugget: bool = False
    seed: int = 0
    n_candidates: int | None = None  # default 1000 * d
    fit_starts: int = 10
    ard: bool = True
    incumbent_rule: str = INCUMBENT_SURROGATE

    def __post_init__(self):
        if self.tau <= 0:
            raise ContractError("tau must be > 0")
        if not self.budget >= self.init_design_size >= 2:
            raise ContractError("need budget >= init_design_size >= 2")
        if self.incumbent_rule not in (INCUMBENT_SURROGATE, INCUMBENT_OBSERVED):
            raise ContractError(f"unknown incumbent rule {self.incumbent_rule!r}")


@dataclass
class Dataset:
    """Evaluated configurations with observed costs, in evaluation order."""

    configs: list[sp.Config]
    costs: np.ndarray

    def __len__(self) -> int:
        return len(self.configs)


@dataclass
class RunArchive:
    """Everything one BO run produced."""

    space: sp.SearchSpace
    bo_config: BoConfig
    dataset: Dataset
    surrogate: sg.GpSurrogate
    incumbent_index: int
    objective_info: dict | None = field(default=None)

    @property
    def incumbent(self) -> sp.Config:
        return self.dataset.configs[self.incumbent_index]


def lcb(gp: sg.GpSurrogate, config: sp.Config, tau: float) -> float:
    """m(x) - tau * s(x): optimistic value under minimization."""
    if tau <= 0:
        raise ContractError("tau must be > 0")
    means, variances = sg.predict_config_mean_var(gp, [config])
    return float(means[0] - tau * math.sqrt(max(variances[0], 0.0)))


def _lcb_batch(gp: sg.GpSurrogate, x: np.ndarray, tau: float) -> np.ndarray:
    means, variances = sg.predict_mean_var(gp, x)
    return means - tau * np.sqrt(np.maximum(variances, 0.0))


_REFINE_STEPS = 20
_REFINE_SIGMA = 0.05  # fraction of the model-scale range


def propose(
    gp: sg.GpSurrogate,
    space: sp.SearchSpace,
    tau: float,
    n_candidates: int,
    seed,
) -> sp.Config:
    """Pick the best of ``n_candidates`` uniform draws, then refine it with
    hill-climbing Gaussian perturbation steps (sigma = 5% of each numeric
    parameter's model-scale range). Ties go to the lowest candidate index."""
    if n_candidates < 1:
        raise ContractError("n_candidates must be >= 1")
    seeds = np.random.SeedSequence(seed).generate_state(2)
    if space.is_hierarchical:
        return _propose_configs(gp, space, tau, n_candidates, seeds)

    rng = np.random.default_rng(int(seeds[0]))
    lo, hi = sg.encoder_bounds(space)
    x = np.empty((n_candidates, len(space)))
    for j, p in enumerate(space.params):
        if p.kind == sp.CATEGORICAL:
            x[:, j] = rng.integers(0, len(p.levels), size=n_candidates)
        else:
            x[:, j] = rng.uniform(lo[j], hi[j], size=n_candidates)
    values = _lcb_batch(gp, x, tau)
    best = x[int(np.argmin(values))].copy()
    best_value = float(values.min())

    rng = np.random.default_rng(int(seeds[1]))
    numeric = np.array([p.kind != sp.CATEGORICAL for p in space.params])
    sigma = _REFINE_SIGMA * (hi - lo) * numeric
    for _ in range(_REFINE_STEPS):
        cand = np.clip(best + rng.normal(0.0, 1.0, len(best)) * sigma, lo, hi)
        value = float(_lcb_batch(gp, cand[None, :], tau)[0])
        if value < best_value:
            best, best_value = cand, value
    return sp.Config(
        {p.name: p.from_model(best[j]) for j, p in enumerate(space.params)}
    )


def _propose_configs(gp, space, tau, n_candidates, seeds) -> sp.Config:
    candidates = sp.sample_uniform(space, n_candidates, int(seeds[0]))
    x = sg.encode_configs(space, candidates)
    values = _lcb_batch(gp, x, tau)
    best_idx = int(np.argmin(values))
    best = candidates[best_idx]
    best_value = float(values[best_idx])

    rng = np.random.default_rng(int(seeds[1]))
    numeric = [p for p in space.params if p.kind != sp.CATEGORICAL]
    for _ in range(_REFINE_STEPS):
        values_dict = dict(best.values)
        for p in numeric:
            v = values_dict[p.name]
            if v is sp.INACTIVE:
                continue
            lo, hi = p.model_bounds()
            step = rng.normal(0.0, _REFINE_SIGMA * (hi - lo))
            values_dict[p.name] = p.from_model(min(max(p.to_model(v) + step, lo), hi))
        cand = sp.Config(values_dict)
        cand_value = lcb(gp, cand, tau)
        if cand_value < best_value:
            best, best_value = cand, cand_value
    return best


def run_bo(obj: Objective, space: sp.SearchSpace, cfg: BoConfig) -> RunArchive:
    """Run the full loop: seeded init design, then fit -> propose -> evaluate
    until the budget is spent; the archived surrogate is refit on all data."""
    n_iters = cfg.budget - cfg.init_design_size
    words = np.random.SeedSequence(cfg.seed).generate_state(2 * n_iters + 2)
    init_seed = int(words[0])
    final_fit_seed = int(words[1])
    n_candidates = cfg.n_candidates or 1000 * len(space)

    configs = sp.sample_uniform(space, cfg.init_design_size, init_seed)
    costs = [_evaluate(obj, c, i) for i, c in enumerate(configs)]

    for it in range(n_iters):
        fit_seed = int(words[2 + 2 * it])
        propose_seed = int(words[3 + 2 * it])
        gp = sg.fit_on_configs(
            space, configs, np.array(costs),
            family=cfg.kernel_family, nugget=cfg.nugget, seed=fit_seed,
            n_starts=cfg.fit_starts, ard=cfg.ard,
            estimate_nugget=cfg.estimate_nugget,
        )
        candidate = propose(gp, space, cfg.tau, n_candidates, propose_seed)
        costs.append(_evaluate(obj, candidate, len(configs)))
        configs.append(candidate)

    final_gp = sg.fit_on_configs(
        space, configs, np.array(costs),
        family=cfg.kernel_family, nugget=cfg.nugget, seed=final_fit_seed,
        n_starts=cfg.fit_starts, ard=cfg.ard,
        estimate_nugget=cfg.estimate_nugget,
    )
    dataset = Dataset(configs=configs, costs=np.array(costs))
    incumbent = _incumbent_index(final_gp, dataset, cfg.incumbent_rule)
    return RunArchive(space=space, bo_config=cfg, dataset=dataset,
                      surrogate=final_gp, incumbent_index=incumbent)


def _evaluate(obj: Objective, config: sp.Config, iteration: int) -> float:
    try:
        return float(obj(config))
    except Exception as exc:
        raise RuntimeError(f"objective evaluation failed at iteration {iteration}") from exc


def _incumbent_index(gp: sg.GpSurrogate, dataset: Dataset, rule: str) -> int:
    if rule == INCUMBENT_OBSERVED:
        return int(np.argmin(dataset.costs))
    means, _ = sg.predict_config_mean_var(gp, dataset.configs)
    return int(np.argmin(means))


# ---------------------------------------------------------------------------
# Archive JSON round trip
# ---------------------------------------------------------------------------

def archive_to_json(archive: RunArchive) -> dict:
    cfg = archive.bo_config
    gp = archive.surrogate
    return {
        "space": sp.space_to_json(archive.space),
        "bo_config": {
            "tau": cfg.tau,
            "budget": cfg.budget,
            "init_design_size": cfg.init_design_size,
            "kernel_family": cfg.kernel_family,
            "nugget": cfg.nugget,
            "estimate_nugget": cfg.estimate_nugget,
            "seed": cfg.seed,
            "n_candidates": cfg.n_candidates,
            "fit_starts": cfg.fit_starts,
            "ard": cfg.ard,
            "incumbent_rule": cfg.incumbent_rule,
        },
        "evaluations": [
            {"config": sp.config_to_json(c), "cost": float(y), "iteration": i}
            for i, (c, y) in enumerate(zip(archive.dataset.configs, archive.dataset.costs))
        ],
        "incumbent_index": archive.incumbent_index,
        "surrogate": {
            "kernel": {
                "family": gp.kernel.family,
                "lengthscales": list(gp.kernel.lengthscales),
                "signal_variance": gp.kernel.signal_variance,
                "nugget": gp.kernel.nugget,
            },
            "x": gp.x_train.tolist(),
            "y": (gp.y_mean + gp.y_scale * gp.y_std).tolist(),
            "fit_seed": gp.fit_seed,
        },
        "objective": archive.objective_info,
    }


def archive_from_json(doc: dict) -> RunArchive:
    space = sp.space_from_json(doc["space"])
    cfg = BoConfig(**doc["bo_config"])
    configs = [sp.config_from_json(e["config"]) for e in doc["evaluations"]]
    costs = np.array([e["cost"] for e in doc["evaluations"]], dtype=float)
    k = doc["surrogate"]["kernel"]
    kernel = sg.KernelSpec(
        family=k["family"],
        lengthscales=tuple(k["lengthscales"]),
        signal_variance=k["signal_variance"],
        nugget=k["nugget"],
    )
    gp = sg.GpSurrogate.from_kernel(
        kernel,
        np.array(doc["surrogate"]["x"], dtype=float),
        np.array(doc["surrogate"]["y"], dtype=float),
    )
    gp = replace_encoder(gp, space, doc["surrogate"].get("fit_seed"))
    return RunArchive(
        space=space,
        bo_config=cfg,
        dataset=Dataset(configs=configs, costs=costs),
        surrogate=gp,
        incumbent_index=int(doc["incumbent_index"]),
        objective_info=doc.get("objective"),
    )


def replace_encoder(gp: sg.GpSurrogate, space: sp.SearchSpace, fit_seed) -> sg.GpSurrogate:
    gp.encoder_space = space
    gp.fit_seed = None if fit_seed is None else int(fit_seed)
    return gp


def save_archive(archive: RunArchive, path) -> None:
    with open(Path(path), "w", encoding="utf-8") as fh:
        json.dump(archive_to_json(archive), fh, indent=1)
        fh.write("\n")


def load_archive(path) -> RunArchive:
    with open(Path(path), encoding="utf-8") as fh:
        return archive_from_json(json.load(fh))
