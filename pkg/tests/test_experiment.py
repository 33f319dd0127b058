import math

import numpy as np
import pytest

from retroconf import experiment
from retroconf.datagen import Stream, SyntheticConfig, generate, lag_embed
from retroconf.errors import NumericalError, UsageError
from retroconf.experiment import ExperimentConfig, initial_slice, resolve_kernel, run_experiment
from retroconf.online_krr import factorization_count


def _stream(T=320, seed=0, setting="linear"):
    return generate(SyntheticConfig(setting, T=T, t_init=250, seed=seed))


FIXED = dict(ridge=0.1, bandwidth_sq=20.0)


def test_one_row_for_minimal_stream():
    s = _stream(T=251)
    res = run_experiment(ExperimentConfig(controller="aci", **FIXED), s)
    assert len(res.rows) == 1 and res.rows[0].t == 251


def test_rejects_short_stream():
    with pytest.raises(UsageError):
        run_experiment(ExperimentConfig(**FIXED), _stream(T=300).__class__(np.zeros((5, 1)), np.zeros(5)))


def test_initial_slice():
    assert initial_slice(250, 250) == slice(0, 250)
    assert initial_slice(250, 100) == slice(149, 250)
    assert initial_slice(10, math.inf) == slice(0, 10)


@pytest.mark.parametrize("controller", ["aci", "agaci", "dtaci", "sfogd", "saocp"])
def test_all_controllers_run(controller):
    res = run_experiment(ExperimentConfig(controller=controller, **FIXED), _stream())
    assert len(res.rows) == 70
    assert 0.5 < res.summary.mean_coverage <= 1.0
    needs_beta = controller in ("dtaci", "sfogd", "saocp")
    assert all((r.beta_t is not None) == needs_beta for r in res.rows)


def test_saocp_first_step_is_full_line():
    res = run_experiment(ExperimentConfig(controller="saocp", **FIXED), _stream())
    assert res.rows[0].alpha_t == 0.0
    assert res.rows[0].kind == "full" and res.rows[0].width == math.inf


def test_strategy_isolation_of_fitted_values():
    s = _stream()
    a = run_experiment(ExperimentConfig(strategy="retro_adj", **FIXED), s)
    b = run_experiment(ExperimentConfig(strategy="fw_krr", **FIXED), s)
    np.testing.assert_array_equal(a.fitted, b.fitted)


def test_fw_residual_multiset_evolves_by_one_insert_and_eviction(monkeypatch):
    seen = []
    real = experiment.ForwardCalibration

    def spy(fhat, residuals, *args):
        seen.append(list(residuals))
        return real(fhat, residuals, *args)

    monkeypatch.setattr(experiment, "ForwardCalibration", spy)
    cfg = ExperimentConfig(strategy="fw_krr", window=20, **FIXED)
    run_experiment(cfg, _stream())
    for prev, cur in zip(seen, seen[1:]):
        # the newest entry is appended; at most the oldest one leaves; nothing else changes
        assert cur[:-1] == prev[len(prev) - len(cur) + 1 :]
        assert len(prev) - len(cur) + 1 in (0, 1)


def test_window_cardinality_in_run():
    s = _stream(T=300)
    cfg = ExperimentConfig(window=30, **FIXED)
    res = run_experiment(cfg, s)
    assert len(res.rows) == 50


def test_determinism():
    s = _stream(seed=5)
    a = run_experiment(ExperimentConfig(controller="dtaci"), s)
    b = run_experiment(ExperimentConfig(controller="dtaci"), s)
    assert a.rows == b.rows


def test_no_factorizations_while_streaming():
    s = _stream(T=400)
    cfg = ExperimentConfig(**FIXED)
    before = factorization_count()
    run_experiment(cfg, s)
    # exactly one: the initial fit
    assert factorization_count() - before == 1


def test_resolve_kernel_tunes_missing_values():
    s = _stream()
    spec, ridge = resolve_kernel(ExperimentConfig(), s.X[:250], s.y[:250])
    assert spec.kind == "rbf" and ridge in experiment.DEFAULT_RIDGE_GRID
    spec, ridge = resolve_kernel(ExperimentConfig(kernel="ntk", ridge=0.5), s.X[:250], s.y[:250])
    assert spec.kind == "ntk" and ridge == 0.5
    spec, ridge = resolve_kernel(ExperimentConfig(bandwidth_sq=3.0), s.X[:250], s.y[:250])
    assert spec.bandwidth_sq == 3.0


def test_numerical_failure_reports_step():
    X = np.zeros((260, 1))
    X[:, 0] = np.arange(260) * 1e3
    s = Stream(X, np.arange(260.0))
    cfg = ExperimentConfig(ridge=1e-300, bandwidth_sq=1e-6, t_init=250, controller="aci")
    with pytest.raises(NumericalError) as info:
        run_experiment(cfg, s)
    assert info.value.step == 251
    assert str(info.value).startswith("step 251:")


def test_univariate_pipeline_arithmetic():
    s = lag_embed(np.sin(np.arange(20.0)), 10)
    assert len(s) == 10
    res = run_experiment(ExperimentConfig(t_init=5, window=10, controller="aci", **FIXED), s)
    assert len(res.rows) == 5 and res.rows[0].t == 16


def test_config_validation():
    with pytest.raises(UsageError):
        ExperimentConfig(alpha=1.0)
    with pytest.raises(UsageError):
        ExperimentConfig(window=1)
    with pytest.raises(UsageError):
        ExperimentConfig(strategy="other")
    with pytest.raises(UsageError):
        ExperimentConfig(controller="pid")
    assert ExperimentConfig().with_(alpha=0.2).alpha == 0.2


def test_timed_run_records_step_seconds():
    res = run_experiment(ExperimentConfig(**FIXED), _stream(T=260), timed=True)
    assert res.step_seconds.shape == (10,) and np.all(res.step_seconds > 0)
