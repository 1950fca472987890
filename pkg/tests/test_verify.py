import csv
import json
import math
import os

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from carpetks.exceptions import BudgetExceededError, ConfigError, SubcriticalError
from carpetks.functionals import GeometryConstants, MCQuadrature
from carpetks.functions import constant_function, face_indicator
from carpetks.penergy import min_k
from carpetks.verify import (
    MEMBER,
    NEGATIVE,
    FunctionSuite,
    HarnessConfig,
    InequalityReport,
    QuantityCache,
    SuiteEntry,
    growth_flag,
    run_suite,
    top_half,
    verify_propositions,
    verify_theorem_main,
    verify_weak_monotonicity,
)

SMALL = dict(member_levels=(3, 4, 5), n_range=(2, 3), rho_levels=(3, 4, 5), samples=20_000, holder_pairs=5_000)


@pytest.fixture(scope="module")
def small_run(carpet):
    return run_suite(carpet, 2.0, HarnessConfig(p=2.0, **SMALL))


@pytest.fixture(scope="module")
def k(carpet, rho_est):
    return min_k(2.0, carpet.a, carpet.alpha, rho_est.beta_hat)


def _cfg(**kw):
    return HarnessConfig(**{**SMALL, **kw})


def test_top_half_and_growth_flag():
    assert top_half([2, 3, 4, 5]) == [4, 5]
    assert top_half([5, 2, 3]) == [3, 5]
    assert growth_flag([1, 2, 4], [0, 0, 0])
    assert not growth_flag([1, 1.5, 1.9], [0, 0, 0])  # total growth below the factor
    assert not growth_flag([1, 3, 2.9], [0, 0, 0])  # not monotone
    assert not growth_flag([1, 2, 4], [0.5, 0.5, 0.5])  # steps within noise
    assert not growth_flag([0, 1, 2], [0, 0, 0])


def test_report_pass_rule():
    base = dict(inequality="x", function="f", role=MEMBER, rows=[], threshold=0.1)
    assert InequalityReport(C_hat=2.0, C_hat_doubled=2.1, **base).passed
    assert not InequalityReport(C_hat=2.0, C_hat_doubled=2.5, **base).passed
    assert not InequalityReport(C_hat=2.0, C_hat_doubled=2.0, growth_flag=True, **base).passed
    assert not InequalityReport(C_hat=math.inf, C_hat_doubled=2.0, **base).passed
    assert InequalityReport(C_hat=0.0, C_hat_doubled=0.0, trivial=True, **base).passed


def test_harness_config_validation():
    with pytest.raises(ConfigError):
        HarnessConfig(n_range=(4, 2))
    with pytest.raises(ConfigError):
        HarnessConfig(n_range=())
    with pytest.raises(ConfigError):
        HarnessConfig(tail_policy="sometimes")
    with pytest.raises(ConfigError):
        HarnessConfig(member_levels=())
    assert HarnessConfig(n_range=(2, 4)).levels == [2, 3, 4]


def test_constant_is_trivial(carpet, consts, rho_est, k):
    f = constant_function(carpet, 1.25).refine(4)
    wm = verify_weak_monotonicity(f, 2.0, rho_est.rho_hat, [2, 3], carpet, config=_cfg())
    tm = verify_theorem_main(f, 2.0, consts, [2, 3], config=_cfg())
    props = verify_propositions(f, 2.0, consts, k, [2, 3], config=_cfg(), holder=False)
    for r in [wm, tm, *props]:
        assert r.trivial and r.passed and r.C_hat == 0.0, r.inequality


def test_empty_range_rejected(carpet, consts, harmonic):
    with pytest.raises(ConfigError):
        verify_theorem_main(harmonic(5), 2.0, consts, [], config=_cfg())
    with pytest.raises(ConfigError):
        verify_weak_monotonicity(harmonic(5), 2.0, 1.25, [], carpet, config=_cfg())


def test_inconsistent_k_rejected(consts, harmonic, k):
    for bad in (k - 1, k + 1):
        with pytest.raises(ConfigError):
            verify_propositions(harmonic(5), 2.0, consts, bad, [2, 3], config=_cfg(), holder=False)


@settings(max_examples=6, deadline=None)
@given(
    lam=st.floats(0.1, 50.0) | st.floats(-50.0, -0.1),
    mu=st.floats(-10.0, 10.0),
)
def test_ratio_invariance(carpet, consts, rho_est, harmonic, lam, mu):
    f = harmonic(5)
    g = lam * f + mu
    cfg = _cfg(samples=5_000)
    for verify in (
        lambda h: verify_theorem_main(h, 2.0, consts, [2, 3], config=cfg),
        lambda h: verify_weak_monotonicity(h, 2.0, rho_est.rho_hat, [2, 3, 4], carpet, config=cfg),
    ):
        r0, r1 = verify(f), verify(g)
        assert r1.C_hat == pytest.approx(r0.C_hat, rel=1e-9)
        assert r1.C_hat_doubled == pytest.approx(r0.C_hat_doubled, rel=1e-9)


def test_series_and_liminf_ratios_invariant(consts, harmonic, k):
    f = harmonic(5)
    cfg = _cfg(samples=5_000)
    r0 = verify_propositions(f, 2.0, consts, k, [2, 3], config=cfg, holder=False)
    r1 = verify_propositions(-3.0 * f + 7.0, 2.0, consts, k, [2, 3], config=cfg, holder=False)
    assert [r.inequality for r in r0] == [r.inequality for r in r1]
    for a, b in zip(r0, r1):
        assert b.C_hat == pytest.approx(a.C_hat, rel=1e-9), a.inequality


def test_negative_control_flagged(carpet, consts, rho_est):
    ctrl = SuiteEntry("coarse_indicator", face_indicator(carpet, 1, 1), NEGATIVE, "control")
    cfg = _cfg(n_range=(2, 5))
    wm = verify_weak_monotonicity(ctrl, 2.0, rho_est.rho_hat, [2, 3, 4, 5], carpet, config=cfg)
    tm = verify_theorem_main(ctrl, 2.0, consts, [2, 3, 4, 5], config=cfg)
    assert wm.growth_flag and not wm.passed
    assert tm.growth_flag and not tm.passed


def test_reports_deterministic_and_thread_independent(consts, harmonic):
    f = harmonic(5)
    runs = [verify_theorem_main(f, 2.0, consts, [2, 3], config=_cfg(samples=8_000, chunk=2_000, threads=t)) for t in (1, 1, 3)]
    rows = [json.dumps(r.to_dict()["rows"], sort_keys=True) for r in runs]
    assert rows[0] == rows[1] == rows[2]
    assert runs[0].config["seed"] == 0 and runs[0].config["samples"] == 8_000


def test_strict_tail_policy(consts, harmonic, k):
    with pytest.raises(BudgetExceededError):
        verify_propositions(harmonic(5), 2.0, consts, k, [2, 3], config=_cfg(tail_policy="strict"), holder=False)
    reps = verify_propositions(harmonic(5), 2.0, consts, k, [2, 3], config=_cfg(), holder=False)
    series = [r for r in reps if r.inequality.endswith("annulus_series")]
    assert len(series) == 2
    for r in series:
        assert 0 < r.extra["tail_ratio"] < 1
        assert r.extra["tail_certified"] is False


def test_suite_roles(carpet):
    suite = FunctionSuite.harmonic(carpet, 2.0, [3, 4])
    names = [e.name for e in suite]
    assert names == ["harmonic_3", "harmonic_4", "affine_4", "sum_4_3", "x1", "coarse_indicator"]
    assert suite.get("x1").role == "probe"
    assert suite.get("coarse_indicator").role == NEGATIVE
    assert all(d["provenance"] for d in suite.describe())


def test_subcritical_refused(carpet):
    with pytest.raises(SubcriticalError, match="is equivalent to the bound"):
        run_suite(carpet, 1.1, HarnessConfig(p=1.1, **{**SMALL, "rho_levels": (2, 3, 4)}))


def test_small_run(small_run):
    run = small_run
    assert run.rho["supercritical"] and run.k == 4
    members = run.member_reports()
    assert members and all(r.passed for r in members)
    assert all(not r.growth_flag for r in members)
    negatives = [r for r in run.reports if r.role == NEGATIVE]
    assert negatives and not any(r.passed for r in negatives)
    assert run.passed


def test_bundle(small_run, tmp_path):
    paths = small_run.write_bundle(str(tmp_path), {"command": "test"})
    assert all(os.path.exists(p) for p in paths)
    with open(tmp_path / "index.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(small_run.reports)
    assert set(rows[0]) >= {"inequality", "function", "C_hat", "stability", "pass"}
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["summary"]["passed"] is True
    one = json.loads((tmp_path / f"{rows[0]['inequality']}__{rows[0]['function']}.json").read_text())
    assert "seed" in one["report"]["config"]
    # a second bundle from the same run is byte-identical
    other = tmp_path / "again"
    small_run.write_bundle(str(other), {"command": "test"})
    for p in paths:
        rel = os.path.relpath(p, tmp_path)
        assert (other / rel).read_bytes() == (tmp_path / rel).read_bytes()


def test_cache_reuses_values(carpet, consts, harmonic):
    cache = QuantityCache(carpet, consts, 1.25, _cfg())
    f = harmonic(4)
    e1 = cache.energy(f, 3)
    assert cache.energy(f, 3) == e1
    assert cache.A(f, 2) is cache.A(f, 2)
