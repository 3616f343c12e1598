"""Acceptance criteria, one test each; every test prints a single PASS/FAIL line."""
import json
import math
import time

import numpy as np
import pytest

from misspec.bvm import run_bvm
from misspec.cli import main
from misspec.experiments import ExperimentConfig, pooled_standard_error, run_experiment, two_point_demo
from misspec.families import GlmFamily, kl_mixture_expansion_check
from misspec.learners import LabeledDataset, adversarial_labels, theta_grid, vovk_online_run
from misspec.losses import (
    FAMILIES,
    HELLINGER_PROOF_ETA,
    ScalarLoss,
    ScoringRule,
    check_exp_concavity,
    mixability_constant,
)
from misspec.minimax import (
    Radii,
    atom_kl,
    build_hard_instance,
    linearity_constant,
    perturb_instance,
    polar_grid,
    separation_bruteforce,
)

from test_minimax import CONFIGS, gaussian_lambda_oracle


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail=""):
        with capsys.disabled():
            print(f"\n[criterion {number:2d}] {'PASS' if ok else 'FAIL'}  {title}  {detail}")
        assert ok, f"criterion {number} failed: {detail}"
    return emit


@pytest.fixture(scope="module")
def instances():
    unit = Radii(1.0, 1.0, 1.0, 100)
    return [build_hard_instance(ScalarLoss(f), unit, t, y, 0.5) for f, t, y in CONFIGS]


def test_c01_mixability(report):
    start = time.perf_counter()
    checks = {}
    for rule in ScoringRule:
        for k in (2, 3, 4):
            checks[(rule.value, k)] = check_exp_concavity(rule, mixability_constant(rule), k, 21).holds
    for k in (2, 3, 4):
        checks[("hellinger@27/8", k)] = check_exp_concavity("hellinger", HELLINGER_PROOF_ETA, k, 21).holds
    violated = not check_exp_concavity("log", 2.0, 2, 21).holds
    elapsed = time.perf_counter() - start
    ok = all(checks.values()) and violated and elapsed < 10
    failing = [key for key, v in checks.items() if not v]
    report(1, "mixability constants", ok, f"failing={failing} log@2 violated={violated} time={elapsed:.1f}s")


def test_c02_lecam_identities(report):
    start = time.perf_counter()
    unit = Radii(1.0, 1.0, 1.0, 100)
    bad = []
    for family, t, y in CONFIGS:
        inst = build_hard_instance(ScalarLoss(family), unit, t, y, 0.5)
        kl = atom_kl(inst.P_plus.atoms(), inst.P_minus.atoms())
        formula = inst.q * 0.5 * math.log(1.5 / 0.5)
        grid = np.vstack([polar_grid(unit.B, 200, 200), inst.theta0, inst.theta_delta(1), inst.theta_delta(-1)])
        sep = separation_bruteforce(lambda th: inst.P_plus.risk(inst.loss, th),
                                    lambda th: inst.P_minus.risk(inst.loss, th), grid, 1e-4)
        if abs(kl - formula) > 1e-12 or sep < inst.sep_lower:
            bad.append((family, t, y, kl - formula, sep, inst.sep_lower))
    elapsed = time.perf_counter() - start
    ok = not bad and len(CONFIGS) >= 12 and elapsed < 120
    report(2, "Le Cam KL and separation", ok, f"configs={len(CONFIGS)} bad={bad} time={elapsed:.1f}s")


def test_c03_perturbation_scaling(report, instances):
    tol = 1e-4
    bad = []
    for inst in instances:
        grid = np.vstack([polar_grid(1.0, 200, 200), inst.theta0, inst.theta_delta(1), inst.theta_delta(-1)])
        sep_p = separation_bruteforce(lambda th: inst.P_plus.risk(inst.loss, th),
                                      lambda th: inst.P_minus.risk(inst.loss, th), grid, tol)
        kl_p = atom_kl(inst.P_plus.atoms(), inst.P_minus.atoms())
        for gamma in (0.0, 0.3, 1.0):
            pert = perturb_instance(inst, gamma)
            sep_q = separation_bruteforce(lambda th: pert.Q_plus.risk(inst.loss, th),
                                          lambda th: pert.Q_minus.risk(inst.loss, th), grid, tol)
            kl_q = atom_kl(pert.Q_plus.atoms(), pert.Q_minus.atoms())
            if abs(sep_q - gamma * sep_p) > 2 * tol or kl_q > gamma * kl_p + 1e-15:
                bad.append((inst.loss.id, inst.t, gamma, sep_q, gamma * sep_p, kl_q, gamma * kl_p))
    report(3, "perturbation scaling", not bad, f"bad={bad}")


def test_c04_stationarity(report, instances):
    norms = []
    for inst in instances:
        for gamma in (1.0, 0.3):
            p = perturb_instance(inst, gamma)
            norms.append(float(np.linalg.norm(p.base_distribution().risk_gradient(p.loss, p.theta0))))
    worst = max(norms)
    report(4, "stationarity of theta0", worst <= 1e-9, f"max grad norm={worst:.2e} over {len(norms)} instances")


def test_c05_linearity_constant(report):
    loss = ScalarLoss("gaussian")
    lams = [linearity_constant(loss, Radii(1, 1, g, 100)).lam for g in (0.0, 0.25, 0.5, 1.0)]
    oracle = gaussian_lambda_oracle(0.25, 100)
    rel = abs(lams[1] - oracle) / oracle
    monotone = all(a <= b for a, b in zip(lams, lams[1:]))
    ok = rel <= 0.01 and lams[0] == 0.0 and monotone
    report(5, "linearity constant", ok, f"lambda={lams[1]:.6f} oracle={oracle:.6f} rel={rel:.2e} lams={lams}")


def test_c06_kl_expansion(report):
    ratios = {}
    for family in ("logistic", "poisson"):
        r = [abs(kl_mixture_expansion_check(family, 0.0, h)["residual"]) for h in (0.2, 0.1, 0.05)]
        ratios[family] = (r[0] / r[1], r[1] / r[2])
    ok = all(6 <= x <= 10 for pair in ratios.values() for x in pair)
    detail = " ".join(f"{f}=({a:.2f}, {b:.2f})" for f, (a, b) in ratios.items())
    report(6, "KL expansion cubic decay", ok, detail)


def test_c07_vovk_regret(report):
    start = time.perf_counter()
    family = GlmFamily("logistic", 2)
    grid = theta_grid(2, 1.0, 512)
    results = []
    for s in range(10):
        rng = np.random.default_rng(np.random.SeedSequence(0, spawn_key=(s,)))
        X = rng.standard_normal((500, 2))
        X /= np.linalg.norm(X, axis=1, keepdims=True)
        y = adversarial_labels(family, "log", 1.0, X, grid)
        rep = vovk_online_run(family, "log", 1.0, LabeledDataset(X, y), grid, R=1.0, B=1.0)
        results.append((rep.regret, rep.regret_bound))
    elapsed = time.perf_counter() - start
    ok = all(r <= b for r, b in results) and elapsed < 60
    report(7, "Vovk regret bound", ok,
           f"max regret={max(r for r, _ in results):.3f} bound={results[0][1]:.3f} time={elapsed:.1f}s")


def test_c08_derivatives(report):
    worst = 0.0
    for family in FAMILIES:
        for rule in ScoringRule:
            loss = ScalarLoss(family, rule)
            t = np.linspace(-3.0, 3.0, 100)[:, None]
            y = loss.label_set.candidates(7)[None, :]
            h = 1e-5
            d1, d2 = loss.d1(t, y), loss.d2(t, y)
            fd1 = (loss.value(t + h, y) - loss.value(t - h, y)) / (2 * h)
            fd2 = (loss.d1(t + h, y) - loss.d1(t - h, y)) / (2 * h)
            worst = max(worst, float(np.max(np.abs(d1 - fd1) / (1 + np.abs(d1)))),
                        float(np.max(np.abs(d2 - fd2) / (1 + np.abs(d2)))))
    report(8, "derivatives vs finite differences", worst <= 1e-6, f"worst relative error={worst:.2e}")


def test_c09_experiment_direction(report):
    start = time.perf_counter()
    curves = {tau: run_experiment(ExperimentConfig(task="linreg_misspec", d=10, tau=tau, n_grid=(100, 1000),
                                                   K=20, replications=20, seed=0))
              for tau in (0.0, 5.0)}
    elapsed = time.perf_counter() - start
    m0, a0 = curves[0.0].summary(1000, "mle"), curves[0.0].summary(1000, "aha")
    m5, a5 = curves[5.0].summary(1000, "mle"), curves[5.0].summary(1000, "aha")
    gap = abs(m0.mean_risk - a0.mean_risk)
    se = pooled_standard_error(m0, a0)
    ok = gap <= 2 * se and a5.mean_risk <= m5.mean_risk and elapsed < 600
    report(9, "MLE vs AHA direction", ok,
           f"tau0 gap={gap:.4f} 2se={2 * se:.4f}; tau5 aha={a5.mean_risk:.4f} mle={m5.mean_risk:.4f} "
           f"schedule={m5.schedule} time={elapsed:.0f}s")


def test_c10_two_point_demo(report):
    rows = two_point_demo([10, 100, 1000])
    mix = [r.risk_mixture for r in rows]
    ok = (all(r.risk_best_theta == math.log(2) for r in rows)
          and all(abs(r.derivative_at_zero) <= 1e-10 for r in rows)
          and mix[0] > mix[1] > mix[2] and mix[2] < 0.2)
    report(10, "two-point mixture demo", ok, f"mixture risks={[round(m, 5) for m in mix]}")


def test_c11_bvm_trends(report):
    start = time.perf_counter()
    n_list = (200, 2000, 20000)
    rows = run_bvm(range(20), n_list)
    elapsed = time.perf_counter() - start
    med_param = [float(np.median([r.tv_param for r in rows if r.n == n])) for n in n_list]
    # one median per query point x
    med_pred = np.array([[np.median([r.tv_predictive[i] for r in rows if r.n == n]) for i in range(3)]
                         for n in n_list])
    ok = (med_param[0] > med_param[1] > med_param[2] and bool(np.all(np.diff(med_pred, axis=0) < 0))
          and elapsed < 300)
    report(11, "BvM trends", ok, f"param TV={[f'{v:.4f}' for v in med_param]} "
                                 f"predictive TV by n={[[float(f'{v:.2e}') for v in row] for row in med_pred]} time={elapsed:.0f}s")


def test_c12_determinism(report, tmp_path):
    configs = {
        "bound": {"grids": {"t_delta": 61, "delta_sup": 31, "alpha": 401}},
        "construct": {},
        "verify": {},
        "regret": {"sequences": 2},
        "aha": {"n": 200, "test_size": 500},
        "experiment": {"n_grid": [50], "replications": 2, "schedules": [["const", 1.0], ["log_n", 0.2]],
                       "test_size": 500},
        "bvm": {"seeds": 2, "n_list": [200], "grid_size": 1001},
        "demo": {},
        "mixability": {"k_list": [2]},
    }
    differing = []
    for command, cfg in configs.items():
        path = tmp_path / f"{command}.json"
        path.write_text(json.dumps(cfg))
        outputs = []
        for run in ("a", "b"):
            out = tmp_path / command / run
            code = main([command, "--config", str(path), "--out", str(out), "--seed", "7"])
            outputs.append((code, {p.name: p.read_bytes() for p in sorted(out.iterdir())}))
        if outputs[0] != outputs[1] or not outputs[0][1]:
            differing.append(command)
    report(12, "byte-identical CLI reruns", not differing, f"commands={len(configs)} differing={differing}")
