"""End-to-end calibration checks used by ``spos validate``.

Each check returns a record ``{"name", "passed", "measured", "tolerances",
"runtime"}``. Tolerances can be overridden for failure-path testing through
the ``SAMPLER_VALIDATE_OVERRIDES`` environment variable, a JSON object keyed
``"<check>.<tolerance>"``, e.g. ``{"gaussian_calibration.mean_tol": 0.0}``.
"""

from __future__ import annotations

import json
import os
import time

import numpy as np

from .diagnostics import DiagnosticsConfig, sample_moments
from .kernel import KernelConfig
from .samplers import Kind, SamplerConfig, init_ensemble, run
from .targets import analytic_posterior, make_bayes_linreg, standard_gaussian, synthetic_regression

OVERRIDE_ENV = "SAMPLER_VALIDATE_OVERRIDES"

TOLERANCES = {
    "gaussian_calibration": {"mean_tol": 0.10, "var_lo": 0.85, "var_hi": 1.15, "max_seconds": 10.0},
    "spos_ensemble_calibration": {"mean_tol": 0.15, "var_lo": 0.75, "var_hi": 1.25, "max_seconds": 30.0},
    "conjugate_posterior": {"mean_tol": 0.05, "cov_rel_tol": 0.20, "max_seconds": 60.0},
}


def tolerances(name: str) -> dict:
    tol = dict(TOLERANCES[name])
    raw = os.environ.get(OVERRIDE_ENV)
    if raw:
        try:
            overrides = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{OVERRIDE_ENV} is not valid JSON: {exc}") from None
        for key, value in overrides.items():
            check, _, field = key.partition(".")
            if check == name and field in tol:
                tol[field] = float(value)
    return tol


def gaussian_calibration(seed: int = 0, threads=None) -> dict:
    """Single SGLD chain on N(0, 1): h = 0.01, 5k burn-in, 50k kept steps."""
    name = "gaussian_calibration"
    tol = tolerances(name)
    burn, keep = 5_000, 50_000
    cfg = SamplerConfig(kind=Kind.SGLD, step_size=0.01, total_steps=burn + keep, seed=seed)
    t0 = time.perf_counter()
    trace = run(init_ensemble(1, 1, seed), standard_gaussian(1), cfg, diagnostics=DiagnosticsConfig(1), threads=threads)
    elapsed = time.perf_counter() - t0
    chain = np.array([pos[0, 0] for step, pos in trace.snapshots if step > burn])
    mean, var = float(chain.mean()), float(chain.var(ddof=1))
    passed = abs(mean) <= tol["mean_tol"] and tol["var_lo"] <= var <= tol["var_hi"] and elapsed < tol["max_seconds"]
    return {"name": name, "passed": bool(passed), "measured": {"mean": mean, "variance": var}, "tolerances": tol, "runtime": elapsed}


def spos_ensemble_calibration(seed: int = 0, threads=None) -> dict:
    """SPOS, 100 particles on N(0, I_2): h = 0.05, 2000 steps, median bandwidth."""
    name = "spos_ensemble_calibration"
    tol = tolerances(name)
    cfg = SamplerConfig(kind=Kind.SPOS, step_size=0.05, total_steps=2000, seed=seed)
    t0 = time.perf_counter()
    trace = run(init_ensemble(100, 2, seed), standard_gaussian(2), cfg, KernelConfig(), DiagnosticsConfig(2000), threads=threads)
    elapsed = time.perf_counter() - t0
    mean, cov = sample_moments(trace.final)
    var = np.diag(cov)
    passed = (
        np.all(np.abs(mean) <= tol["mean_tol"])
        and np.all((var >= tol["var_lo"]) & (var <= tol["var_hi"]))
        and elapsed < tol["max_seconds"]
    )
    return {
        "name": name,
        "passed": bool(passed),
        "measured": {"mean": mean.tolist(), "variance": var.tolist()},
        "tolerances": tol,
        "runtime": elapsed,
    }


def conjugate_posterior(seed: int = 0, threads=None) -> dict:
    """SPOS on a 3-D Bayesian linear regression (100 points) against the closed form.

    Full-batch gradients (B = N) and h = 2e-4: minibatch noise would inflate
    the stationary variance by roughly ``h * Var(G) / 2`` (about 10% at B = 10),
    and the step keeps discretization bias near 1% on the stiffest direction.
    """
    name = "conjugate_posterior"
    tol = tolerances(name)
    data = synthetic_regression(100, 3, seed=seed)
    model = make_bayes_linreg(data)
    post_mean, post_cov = analytic_posterior(data)
    cfg = SamplerConfig(kind=Kind.SPOS, step_size=2e-4, batch_size=100, total_steps=5000, seed=seed)
    t0 = time.perf_counter()
    trace = run(init_ensemble(200, 3, seed), model, cfg, KernelConfig(), DiagnosticsConfig(5000), threads=threads)
    elapsed = time.perf_counter() - t0
    mean, cov = sample_moments(trace.final)
    mean_err = np.abs(mean - post_mean)
    cov_rel = np.abs(np.diag(cov) - np.diag(post_cov)) / np.diag(post_cov)
    passed = np.all(mean_err <= tol["mean_tol"]) and np.all(cov_rel <= tol["cov_rel_tol"]) and elapsed < tol["max_seconds"]
    return {
        "name": name,
        "passed": bool(passed),
        "measured": {
            "mean": mean.tolist(),
            "posterior_mean": post_mean.tolist(),
            "variance": np.diag(cov).tolist(),
            "posterior_variance": np.diag(post_cov).tolist(),
            "max_mean_error": float(mean_err.max()),
            "max_variance_rel_error": float(cov_rel.max()),
        },
        "tolerances": tol,
        "runtime": elapsed,
    }


SUITE = (gaussian_calibration, spos_ensemble_calibration, conjugate_posterior)


def run_suite(threads=None) -> list[dict]:
    return [check(threads=threads) for check in SUITE]
