"""Prebuilt geometry-lab check suites emitted by the `geometry` subcommand.

Each suite returns a list of GeometryReport objects; the CLI serializes
them one JSON object per line.
"""

from __future__ import annotations

import math

import numpy as np

from . import geometry as geo
from .corpus import SynthSpec, split_dataset, synth_block_dataset
from .model import TrainConfig, fit, init_params
from .numerics import GaussianPosterior, kl_diag_gaussian
from .pia import AnchorTable, alignment_closed_form, alignment_mc_standard_error

SUITE_NAMES = ("thm3", "t1", "eq3", "prop1", "prop2", "eq4", "probe")

MASK_GRID_H = range(0, 11)
MASK_GRID_S = range(0, 11)
MASK_GRID_RHO = (0.1, 0.3, 0.5, 0.7, 0.9)
MASK_GRID_DELTA = (1, 2, 3, 4, 5)


def _pair_vectors(h: int, s: int) -> tuple[np.ndarray, np.ndarray]:
    """Canonical binary pair with s shared positives and h disagreements."""
    x_u = np.zeros(h + s)
    x_v = np.zeros(h + s)
    x_u[:s + h] = 1.0
    x_v[:s] = 1.0
    return x_u, x_v


def mask_bound_report(h: int, s: int, rho: float, delta: float) -> geo.GeometryReport:
    x_u, x_v = _pair_vectors(h, s)
    table = geo.masked_distance_exact(x_u, x_v, rho)
    exact_lt = float(np.sum(table[:math.ceil(delta)]))
    exact_ge = float(np.sum(table[math.ceil(delta):]))
    lower_lt = geo.contraction_bound(geo.PairStats(h=h, s=s), rho, delta)
    lower_ge = geo.expansion_bound(s, rho, delta)
    values = {
        "h": float(h), "s": float(s), "rho": rho, "delta": float(delta),
        "contraction_bound": lower_lt, "exact_lt": exact_lt,
        "expansion_bound": lower_ge, "exact_ge": exact_ge,
        "contraction_slack": lower_lt - exact_lt,
        "expansion_slack": lower_ge - exact_ge,
    }
    return geo.GeometryReport.check(
        f"mask-bounds h={h} s={s} rho={rho} delta={delta}", values,
        {"contraction_slack": 1e-12, "expansion_slack": 1e-12})


def suite_thm3(seed: int = 0) -> list[geo.GeometryReport]:
    """Masked-distance bound sweep plus enumeration agreement spot checks."""
    reports = [
        mask_bound_report(h, s, rho, delta)
        for h in MASK_GRID_H for s in MASK_GRID_S
        for rho in MASK_GRID_RHO for delta in MASK_GRID_DELTA
    ]
    for h in range(0, 5):
        for s in range(0, 5 - h):
            for rho in (0.1, 0.5, 0.9):
                x_u, x_v = _pair_vectors(h, s)
                conv = geo.masked_distance_exact(x_u, x_v, rho)
                enum = geo.masked_distance_enumerate(x_u, x_v, rho)
                diff = float(np.max(np.abs(conv - enum)))
                reports.append(geo.GeometryReport.check(
                    f"mask-distribution-enumeration h={h} s={s} rho={rho}",
                    {"max_abs_diff": diff, "total_mass_err": abs(float(conv.sum()) - 1.0)},
                    {"max_abs_diff": 1e-12, "total_mass_err": 1e-12}))
    return reports


def _random_gaussian(rng: np.random.Generator, dim: int) -> GaussianPosterior:
    return GaussianPosterior(mean=2.0 * rng.standard_normal(dim),
                             logvar=rng.uniform(-2.0, 2.0, dim))


def suite_t1(seed: int = 0) -> list[geo.GeometryReport]:
    """Transport-entropy bound: the tight unit-shift case plus random pairs."""
    reports = []
    tight = geo.t1_bound_check(
        GaussianPosterior(mean=[1.0], logvar=[0.0]),
        GaussianPosterior(mean=[0.0], logvar=[0.0]), prior_var=1.0)
    tight.name = "transport-entropy-tight-case"
    tight.values["abs_w1_minus_1"] = abs(tight.values["w1"] - 1.0)
    tight.values["abs_bound_minus_1"] = abs(tight.values["bound"] - 1.0)
    tight.tolerances.update({"abs_w1_minus_1": 1e-6, "abs_bound_minus_1": 1e-6})
    tight.passed = all(tight.values[k] <= t for k, t in tight.tolerances.items())
    reports.append(tight)
    rng = np.random.default_rng(seed)
    for j in range(200):
        r = geo.t1_bound_check(_random_gaussian(rng, 1), _random_gaussian(rng, 1),
                               prior_var=float(rng.uniform(0.5, 2.0)))
        r.name = f"transport-entropy-1d #{j}"
        reports.append(r)
    for j in range(200):
        r = geo.t1_bound_check(_random_gaussian(rng, 8), _random_gaussian(rng, 8),
                               prior_var=float(rng.uniform(0.5, 2.0)))
        r.name = f"transport-entropy-mean-gap #{j}"
        reports.append(r)
    return reports


def suite_eq3(seed: int = 0) -> list[geo.GeometryReport]:
    """Pairwise-objective decomposition on special and random instances."""
    reports = []
    x = np.array([1.0, 0.0, 1.0])
    q_u = GaussianPosterior(mean=[0.0], logvar=[0.0])
    q_v = GaussianPosterior(mean=[1.0], logvar=[math.log(2.0)])
    grid = geo.PairGrid.for_pair(q_u, q_v)
    same = geo.pairwise_decomposition_check(x, x, q_u, q_v, beta=0.2, grid=grid)
    same.name = "pairwise-decomposition-equal-inputs"
    same.values["gap_integral_abs"] = abs(same.values["gap_integral"])
    same.tolerances["gap_integral_abs"] = 1e-8
    same.passed = all(same.values[k] <= t for k, t in same.tolerances.items())
    reports.append(same)

    far_u = GaussianPosterior(mean=[-40.0], logvar=[0.0])
    far_v = GaussianPosterior(mean=[40.0], logvar=[0.0])
    x_u = np.array([1.0, 1.0, 0.0])
    x_v = np.array([0.0, 1.0, 1.0])
    grid = geo.PairGrid.for_pair(far_u, far_v)
    disjoint = geo.pairwise_decomposition_check(x_u, x_v, far_u, far_v,
                                                beta=0.2, grid=grid)
    disjoint.name = "pairwise-decomposition-disjoint-posteriors"
    disjoint.values["gap_integral_abs"] = abs(disjoint.values["gap_integral"])
    disjoint.tolerances["gap_integral_abs"] = 1e-8
    disjoint.passed = all(disjoint.values[k] <= t
                          for k, t in disjoint.tolerances.items())
    reports.append(disjoint)

    near_u = GaussianPosterior(mean=[0.0], logvar=[0.0])
    near_v = GaussianPosterior(mean=[1.0], logvar=[0.0])
    grid = geo.PairGrid.for_pair(near_u, near_v)
    generic = geo.pairwise_decomposition_check(x_u, x_v, near_u, near_v,
                                               beta=0.2, grid=grid)
    generic.name = "pairwise-decomposition-generic-overlap"
    reports.append(generic)

    rng = np.random.default_rng(seed)
    for j in range(20):
        n = int(rng.integers(2, 6))
        xu = (rng.random(n) < 0.5).astype(np.float64)
        xv = (rng.random(n) < 0.5).astype(np.float64)
        qu = _random_gaussian(rng, 1)
        qv = _random_gaussian(rng, 1)
        grid = geo.PairGrid.for_pair(qu, qv)
        r = geo.pairwise_decomposition_check(xu, xv, qu, qv,
                                             beta=float(rng.uniform(0.0, 1.0)),
                                             grid=grid)
        r.name = f"pairwise-decomposition #{j}"
        reports.append(r)
    return reports


def suite_prop1(seed: int = 0) -> list[geo.GeometryReport]:
    """Closed-form alignment loss versus its Monte-Carlo oracle."""
    reports = []
    table = AnchorTable(anchors=np.array([[0.5, -1.0]]))
    degenerate = GaussianPosterior(mean=[0.5, -1.0], logvar=[-np.inf, -np.inf])
    closed = alignment_closed_form(degenerate, table, [0])
    reports.append(geo.GeometryReport.check(
        "alignment-degenerate-exact-zero", {"closed": closed, "abs": abs(closed)},
        {"abs": 0.0}))
    rng = np.random.default_rng(seed)
    for j in range(100):
        d = int(rng.integers(1, 6))
        n_anchors = int(rng.integers(1, 8))
        table = AnchorTable(anchors=rng.standard_normal((n_anchors, d)))
        q = GaussianPosterior(mean=rng.standard_normal(d),
                              logvar=rng.uniform(-2.0, 1.0, d))
        positives = rng.choice(n_anchors, size=int(rng.integers(1, n_anchors + 1)),
                               replace=False)
        closed = alignment_closed_form(q, table, positives)
        mc, se = alignment_mc_standard_error(q, table, positives, 100_000, rng)
        slack = abs(closed - mc) - 3.0 * se
        reports.append(geo.GeometryReport.check(
            f"alignment-closed-vs-mc #{j}",
            {"closed": closed, "mc": mc, "se": se, "abs_diff_minus_3se": slack},
            {"abs_diff_minus_3se": 0.0}))
    return reports


def suite_prop2(seed: int = 0) -> list[geo.GeometryReport]:
    """Quadratic shrinkage: exact identities plus a random sweep."""
    reports = []
    offsets = np.array([[1.0, 2.0], [-1.0, 0.5], [0.3, -2.0]])
    identity = geo.quadratic_toy(np.array([1.0, 3.0]), offsets, 0.0,
                                 np.array([0.0, 0.0]))
    identity.name = "quadratic-shrinkage-lambda-zero"
    identity.values["trace_ratio_err"] = abs(identity.values["trace_ratio"] - 1.0)
    identity.values["drift_ratio_err"] = abs(identity.values["drift_ratio"] - 1.0)
    identity.tolerances.update({"trace_ratio_err": 1e-12, "drift_ratio_err": 1e-12})
    identity.passed = all(identity.values[k] <= t
                          for k, t in identity.tolerances.items())
    reports.append(identity)

    exact = geo.quadratic_toy(np.array([1.0, 1.0]), offsets, 0.5,
                              np.array([0.4, -0.2]))
    exact.name = "quadratic-shrinkage-identity-hessian"
    exact.values["trace_ratio_err"] = abs(exact.values["trace_ratio"] - 0.25)
    exact.values["drift_ratio_err"] = abs(exact.values["drift_ratio"] - 0.5)
    exact.tolerances.update({"trace_ratio_err": 1e-12, "drift_ratio_err": 1e-12})
    exact.passed = all(exact.values[k] <= t for k, t in exact.tolerances.items())
    reports.append(exact)

    rng = np.random.default_rng(seed)
    for j in range(100):
        d = int(rng.integers(2, 8))
        eigs = rng.uniform(0.5, 4.0, d)
        offs = rng.standard_normal((50, d))
        lam = float(rng.uniform(0.0, 3.0))
        center = rng.standard_normal(d)
        r = geo.quadratic_toy(eigs, offs, lam, center)
        r.name = f"quadratic-shrinkage #{j}"
        reports.append(r)
    return reports


def _tiny_split(seed: int):
    spec = SynthSpec(cohort_sizes=(30, 30), cohort_support_sizes=(4, 12),
                     n_items=24, noise_rate=0.02, seed=seed)
    m = synth_block_dataset(spec)
    return split_dataset(m, n_val_users=8, n_test_users=8,
                         fold_in_fraction=0.8, seed=seed)


def _mean_masked_kl(params, matrix, keep_prob: float, seed: int) -> float:
    rng = np.random.default_rng(seed)
    rows = [matrix.row(u) for u in range(matrix.n_users)]
    kls = []
    for row in rows:
        x = np.zeros(matrix.n_items)
        x[row] = 1.0
        from .model import apply_mask, encode

        x_h = apply_mask(x, keep_prob, rng)
        kls.append(kl_diag_gaussian(encode(params, x_h)))
    return float(np.mean(kls))


def beta_kl_direction(seeds=(0, 1, 2, 3, 4), betas=(0.0, 0.2, 1.0),
                      epochs: int = 4) -> geo.GeometryReport:
    """Median masked-posterior KL after short trainings must not grow
    with the KL weight."""
    medians = []
    for beta in betas:
        kls = []
        for seed in seeds:
            split = _tiny_split(seed)
            cfg = TrainConfig(beta=beta, keep_prob=0.5, batch_size=32,
                              epochs=epochs, lr=1e-2, seed=seed,
                              hidden_dim=16, latent_dim=8)
            params, _ = fit(split, cfg)
            kls.append(_mean_masked_kl(params, split.train, 0.5, seed=seed + 99))
        medians.append(float(np.median(kls)))
    worst_increase = max(b - a for a, b in zip(medians, medians[1:]))
    values = {f"median_kl_beta_{beta}": med for beta, med in zip(betas, medians)}
    values["worst_increase"] = worst_increase
    return geo.GeometryReport.check("kl-direction-in-beta", values,
                                    {"worst_increase": 1e-9})


def suite_eq4(seed: int = 0) -> list[geo.GeometryReport]:
    """Dataset-average bound on random models, then the beta direction."""
    reports = []
    rng = np.random.default_rng(seed)
    for j in range(20):
        model_rng = np.random.default_rng(seed * 1000 + j)
        params = init_params(n_items=30, hidden_dim=12, latent_dim=6,
                             rng=model_rng)
        rows = [np.sort(model_rng.choice(30, size=int(model_rng.integers(2, 10)),
                                         replace=False)) for _ in range(40)]
        r = geo.dataset_bound_report(params, rows, keep_prob=0.5, prior_var=1.0,
                                     n_pairs=30, rng=rng)
        r.name = f"dataset-average-bound #{j}"
        reports.append(r)
    reports.append(beta_kl_direction())
    return reports


def suite_probe(seed: int = 0) -> list[geo.GeometryReport]:
    """Sharing diagnostics on an identical and a distinct user pair."""
    rng = np.random.default_rng(seed)
    params = init_params(n_items=20, hidden_dim=10, latent_dim=4, rng=rng)
    x_u = np.zeros(20)
    x_u[[0, 3, 5]] = 1.0
    x_v = np.zeros(20)
    x_v[[0, 7, 9, 11]] = 1.0
    reports = []
    same = geo.sharing_probe(params, x_u, x_u, n_samples=400,
                             perturb_scale=0.1, rng=rng)
    reports.append(geo.GeometryReport.check(
        "sharing-probe-identical-pair",
        {"w2_latent": same.w2_latent, "grad_norm_u": same.grad_norm_u,
         "delta_x": same.delta_x, "lipschitz_probe": same.lipschitz_probe,
         "r_share_estimate": same.r_share_estimate},
        {"w2_latent": 1e-12, "delta_x": 1e-12}))
    diff = geo.sharing_probe(params, x_u, x_v, n_samples=400,
                             perturb_scale=0.1, rng=rng)
    reports.append(geo.GeometryReport(
        name="sharing-probe-distinct-pair",
        values={"w2_latent": diff.w2_latent, "grad_norm_u": diff.grad_norm_u,
                "delta_x": diff.delta_x, "lipschitz_probe": diff.lipschitz_probe,
                "r_share_estimate": diff.r_share_estimate}))
    return reports


def run_suite(name: str, seed: int = 0) -> list[geo.GeometryReport]:
    runners = {
        "thm3": suite_thm3,
        "t1": suite_t1,
        "eq3": suite_eq3,
        "prop1": suite_prop1,
        "prop2": suite_prop2,
        "eq4": suite_eq4,
        "probe": suite_probe,
    }
    if name not in runners:
        raise ValueError(f"unknown suite {name!r}; choose from {SUITE_NAMES}")
    return runners[name](seed=seed)
