"""
Scenario registry, scenario runner and the property suite
"""

import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from collections import Counter
from pathlib import Path
from typing import Callable, Dict, List, Optional, Union

import numpy as np
import pydantic
import scipy

from app.core.errors import TonelliError
from app.schemas.analysis import PropertyVerdict, SampleSpec, Verdict
from app.schemas.records import IndexStatus, RunManifest
from app.schemas.scenario import ModelSpec, ScenarioConfig
from app.services.families import build_family
from app.services.geometry import build_manifold
from app.services.models import (
    build_hamiltonian, build_lagrangian, check_radial_identity, check_tonelli, fiber_sample, legendre_batch
)
from app.services.modification import (
    LagrangianModification, build_hamiltonian_modification, build_lagrangian_modification,
    modification_properties, verify_modification
)
from app.services.pathspace import (
    action, build_boundary, full_hessian, holder_bound_check, path_from_function, raw_gradient
)
from app.services.solver import PipelineResult, solve_pipeline

logger = logging.getLogger(__name__)

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "fixtures" / "scenarios"
__version__ = "1.0.0"


# --------------------------------------------------------------- scenarios
def list_scenarios() -> List[str]:
    return sorted(p.stem for p in SCENARIO_DIR.glob("*.toml"))


def load_scenario(name_or_path: Union[str, Path]) -> ScenarioConfig:
    """Load a builtin scenario by name or a TOML config file by path"""
    path = Path(name_or_path)
    if not path.is_file():
        path = SCENARIO_DIR / f"{name_or_path}.toml"
    if not path.is_file():
        raise FileNotFoundError(f"unknown scenario '{name_or_path}' (builtin: {', '.join(list_scenarios())})")
    with path.open("rb") as fh:
        return ScenarioConfig.model_validate(tomllib.load(fh))


def apply_overrides(config: ScenarioConfig, **overrides) -> ScenarioConfig:
    """Command-line values win over config values; None leaves a field alone"""
    update = {k: v for k, v in overrides.items() if v is not None}
    if not update:
        return config
    return ScenarioConfig.model_validate({**config.model_dump(), **update})


def _tolerance(value: float, expected: float, rel: float, abs_: float) -> bool:
    return abs(value - expected) <= max(abs_, rel * abs(expected))


def compare_expectations(config: ScenarioConfig, result: PipelineResult, n: int) -> List[PropertyVerdict]:
    """Scenario acceptance table against the pipeline output"""
    exp = config.expectations
    records = result.records
    certified = result.certified
    out: List[PropertyVerdict] = []

    def verdict(name, ok, value=None, detail=""):
        out.append(PropertyVerdict(name=name, verdict=Verdict.PASS if ok else Verdict.FAIL, value=value,
                                   detail=detail))

    verdict("all_certified", len(certified) == len(records), float(len(records) - len(certified)),
            "uncertified records are excluded from the multiplicity count")
    verdict("min_certified", len(certified) >= exp.min_certified, float(len(certified)),
            f"need {exp.min_certified} [{exp.provenance}]")
    if config.cuplength is not None:
        verdict("multiplicity_bound", len(certified) >= config.cuplength + 1, float(len(certified)),
                f"cuplength + 1 = {config.cuplength + 1}")
    gaps = [r.large_morse_index - r.morse_index for r in records if r.morse_index is not None]
    if gaps:
        verdict("index_gap", all(0 <= g <= 2 * n for g in gaps), float(max(gaps)), f"0 <= m* - m <= {2 * n}")
        verdict("index_stable", all(r.index_status == IndexStatus.STABLE for r in records),
                detail="indices equal at N and 2N")
    if exp.actions is not None:
        remaining = sorted(r.action for r in certified)
        missing = []
        for target in sorted(exp.actions):
            hit = next((a for a in remaining if _tolerance(a, target, exp.action_rel_tol, exp.action_abs_tol)), None)
            if hit is None:
                missing.append(target)
            else:
                remaining.remove(hit)
        verdict("actions", not missing, float(len(missing)),
                f"expected {exp.actions} [{exp.provenance}]" + (f", missing {missing}" if missing else ""))
    if exp.indices is not None:
        found = Counter(r.morse_index for r in certified)
        wanted = Counter(exp.indices)
        ok = all(found[k] >= c for k, c in wanted.items())
        verdict("indices", ok, detail=f"expected {sorted(exp.indices)}, found {sorted(found.elements())}")
    if exp.strictly_increasing:
        by_degree = [r.action for r in sorted(records, key=lambda r: r.degree)]
        ok = all(b > a for a, b in zip(by_degree, by_degree[1:]))
        verdict("strictly_increasing", ok, detail="actions ordered by family degree")
    if exp.max_conormal is not None:
        worst = max((r.conormal_residual for r in records), default=0.0)
        verdict("conormal_residual", worst < exp.max_conormal, worst)
    return out


def build_manifest(config: ScenarioConfig, result: PipelineResult, n: int) -> RunManifest:
    expectations = compare_expectations(config, result, n)
    return RunManifest(
        scenario=config.name,
        config_hash=config.config_hash(),
        seed=config.seed,
        mesh=config.mesh,
        grid_density=config.grid_density,
        tonelli=result.tonelli,
        A=result.A,
        R_A=result.reachable.R_A,
        R=result.R,
        reachable=result.reachable,
        modification=result.modification_report,
        minimax=result.minimax,
        records=result.records,
        certified_count=len(result.certified),
        multiplicity_bound=None if config.cuplength is None else config.cuplength + 1,
        levels_nondecreasing=result.levels_nondecreasing,
        expectations=expectations,
        passed=all(e.verdict == Verdict.PASS for e in expectations),
        versions={"tonellicrit": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                  "pydantic": pydantic.VERSION},
    )


def run_scenario(scenario: Union[str, ScenarioConfig], timings: Optional[Dict[str, float]] = None,
                 **overrides) -> RunManifest:
    """Run the solve pipeline for a scenario and compare against its expectation table"""
    config = scenario if isinstance(scenario, ScenarioConfig) else load_scenario(scenario)
    config = apply_overrides(config, **overrides)
    logger.info(f"Running scenario '{config.name}' (hash {config.config_hash()[:12]})")
    sample = config.sample.model_copy(update={"seed": config.seed})
    manifold = build_manifold(config.manifold)
    L = build_lagrangian(config.model, manifold)
    bc = build_boundary(config.boundary, manifold)
    families = [build_family(spec, manifold, bc, config.mesh) for spec in config.families]
    result = solve_pipeline(L, bc, families, config.tolerances, sample, config.grid_density)
    if timings is not None:
        timings.update(result.timings)
    manifest = build_manifest(config, result, manifold.dim)
    failed = [e.name for e in manifest.expectations if e.verdict != Verdict.PASS]
    if failed:
        logger.warning(f"Scenario '{config.name}' failed expectations: {failed}")
    else:
        logger.info(f"Scenario '{config.name}' passed ({manifest.certified_count} certified solutions)")
    return manifest


# ---------------------------------------------------------- property suite
def _remainder_order(value_at: Callable[[float], float], h: float = 1e-2) -> float:
    """Observed order of a Taylor remainder r(h) from r(h) / r(h / 2)"""
    r1, r2 = value_at(h), value_at(0.5 * h)
    if r1 < 1e-13:
        return np.inf
    return float(np.log2(r1 / max(r2, 1e-300)))


def derivative_orders(L, path, rng) -> List[float]:
    """Remainder orders of the gradient and the Hessian along a random direction"""
    xi = rng.standard_normal(path.nodes.shape)
    xi /= np.linalg.norm(xi)
    a0 = action(L, path)
    g0 = raw_gradient(L, path).ravel()
    Hxi = full_hessian(L, path) @ xi.ravel()

    def first(h):
        return abs(action(L, path.displaced(h * xi)) - a0 - h * g0 @ xi.ravel())

    def second(h):
        moved = path.displaced(h * xi)
        if tuple(moved.charts) != tuple(path.charts):
            return np.nan
        return float(np.linalg.norm(raw_gradient(L, moved).ravel() - g0 - h * Hxi))

    return [_remainder_order(first), _remainder_order(second)]


def _zoo():
    torus = build_manifold("torus2")
    sphere = build_manifold("sphere2")
    return [
        ("mechanical_torus", build_lagrangian(ModelSpec(kind="mechanical", potential="cos2"), torus), torus),
        ("quartic_torus", build_lagrangian(ModelSpec(kind="quartic", potential="cos2"), torus), torus),
        ("free_sphere", build_lagrangian(ModelSpec(kind="mechanical"), sphere), sphere),
    ]


def _random_path(manifold, rng, N: int = 16):
    coef = rng.uniform(-0.3, 0.3, size=(3, manifold.dim))

    def curve(t):
        modes = np.stack([np.ones_like(t), np.sin(2 * np.pi * t), np.cos(2 * np.pi * t)], axis=1)
        return 0.2 + modes @ coef

    return path_from_function(manifold, curve, N)


def _verdict(name, ok, value=None, detail="") -> PropertyVerdict:
    return PropertyVerdict(name=name, verdict=Verdict.PASS if ok else Verdict.FAIL, value=value, detail=detail)


def property_suite(psi_profile: Optional[Callable] = None, seed: int = 0,
                   sample_spec: Optional[SampleSpec] = None) -> List[PropertyVerdict]:
    """Invariant checks of every module on the builtin model zoo; failures are verdicts, never exceptions"""
    rng = np.random.default_rng(seed)
    out: List[PropertyVerdict] = []
    zoo = _zoo()

    def guarded(name, check):
        try:
            out.extend(check())
        except TonelliError as exc:
            logger.warning(f"property '{name}' raised {exc}")
            out.append(PropertyVerdict(name=name, verdict=Verdict.FAIL, detail=str(exc)))

    def orders():
        rows = []
        for name, L, manifold in zoo:
            found = np.array([derivative_orders(L, _random_path(manifold, rng), rng) for _ in range(5)])
            found = np.where(np.isnan(found), np.inf, found)
            rows.append(_verdict(f"gradient_order:{name}", found[:, 0].min() >= 0.9, float(found[:, 0].min())))
            rows.append(_verdict(f"hessian_order:{name}", found[:, 1].min() >= 0.9, float(found[:, 1].min())))
        return rows

    def tonelli():
        rows = []
        for name, L, _ in zoo:
            report = check_tonelli(L, sample_spec)
            ok = report.l1_verdict in (Verdict.PASS, Verdict.FAIL_AT_ZERO) and report.l2_verdict == Verdict.PASS
            rows.append(_verdict(f"tonelli:{name}", ok, report.C(1.0), f"L1 {report.l1_verdict.value}"))
        return rows

    def modifications():
        rows = []
        for name, L, _ in zoo[:2]:
            C1 = check_tonelli(L, sample_spec).C(1.0)
            for R in (1.0, 5.0, 20.0):
                mod = build_lagrangian_modification(L, R, C1, sample_spec)
                report = mod.report
                rows.append(_verdict(f"modification:{name}:R={R:g}", report.passed,
                                     min(c.margin for c in report.clauses)))
                if R == 5.0:
                    rows += [p.model_copy(update={"name": f"{p.name}:{name}"})
                             for p in modification_properties(mod, sample_spec)]
                    if psi_profile is not None:
                        corrupted = LagrangianModification(mod.base, mod.R, mod.lam, mod.mu, mod.C1, psi=psi_profile)
                        for clause in verify_modification(corrupted, sample_spec).clauses:
                            rows.append(PropertyVerdict(name=f"custom_psi:{name}:{clause.clause}",
                                                        verdict=clause.verdict, value=clause.margin,
                                                        detail=clause.detail))
                        rows += [p.model_copy(update={"name": f"custom_psi:{name}:{p.name}"})
                                 for p in modification_properties(corrupted, sample_spec)]
        return rows

    def holder():
        return [holder_bound_check(_random_path(m, rng, 32)).model_copy(update={"name": f"holder_bound:{name}"})
                for name, _, m in zoo]

    def duality():
        _, L, manifold = zoo[1]
        S = fiber_sample(manifold, (sample_spec or SampleSpec()).model_copy(update={"v_max": 10.0}))
        pick = rng.choice(len(S.t), size=min(1000, len(S.t)), replace=False)
        worst = 0.0
        for cid in np.unique(S.charts[pick]):
            idx = pick[S.charts[pick] == cid]
            p = L.d_v(S.t[idx], cid, S.q[idx], S.x[idx])
            v, _ = legendre_batch(L, S.t[idx], cid, S.q[idx], p)
            worst = max(worst, float(np.max(np.abs(v - S.x[idx]) / (1.0 + np.abs(S.x[idx])))))
        H = build_hamiltonian(ModelSpec(kind="mechanical", potential="cos2"), manifold)
        identity = max(check_radial_identity(H, t, "T", rng.uniform(0, 1, 2), d, np.linspace(0.0, 10.0, 21))
                       for t in (0.0, 0.5) for d in (np.array([1.0, 0.0]), np.array([0.6, 0.8])))
        return [_verdict("legendre_roundtrip", worst < 1e-8, worst),
                _verdict("radial_identity", identity < 1e-5, identity)]

    def hamiltonian_modification():
        torus1 = build_manifold("torus1")
        H = build_hamiltonian(ModelSpec(kind="mechanical", potential="cos2", epsilon=1.0), torus1)
        mod = build_hamiltonian_modification(H, 5.0, sample_spec=sample_spec)
        return [PropertyVerdict(name=f"hamiltonian_modification:{c.clause}", verdict=c.verdict, value=c.margin,
                                detail=c.detail) for c in mod.report.clauses]

    for name, check in [("derivative_orders", orders), ("tonelli", tonelli), ("modification", modifications),
                        ("holder_bound", holder), ("duality", duality),
                        ("hamiltonian_modification", hamiltonian_modification)]:
        guarded(name, check)
    failed = [p.name for p in out if p.verdict != Verdict.PASS]
    logger.info(f"Property suite: {len(out) - len(failed)}/{len(out)} pass" + (f", failing {failed}" if failed else ""))
    return out

