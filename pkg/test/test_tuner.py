import numpy as np
import pytest

from OpenTuneUtils.DynamicsUtils import ControlSignal, ControlledModel, EulerFlow, ReadoutMap, linear_field
from OpenTuneUtils.EnsembleUtils import BallDataset, Ensemble, Sample, average_error
from OpenTuneUtils.OptimizeUtils import (ConvergenceError, TunerConfig, TuningReport, TuningState, phase1, phase2,
                                         phase3, refinement_rounds, sample_cost_and_gradient, total_cost,
                                         tune_without_forgetting)


def problem(seed=0, q=4, nbar=3, N=5, std=0.5):
    model = ControlledModel.two_layer_tanh(nbar)
    ensemble = BallDataset.generate(q, seed)
    readout = ReadoutMap.canonical(ensemble.n_o, nbar)
    u = ControlSignal.random_normal(N=N, p=model.p, std=std, seed=seed)
    return model, ensemble, readout, u


def single_step(step_size):
    return TunerConfig(step_size=step_size, armijo=False, max_inner_iterations=1, convergence_cost_threshold=1e-12)


def memorized_problem(seed=0, q=4, j=2, nbar=3, N=5, std=0.5):
    """前 j 个样本的标签取 u0 的端点, u0 恰好记住 X^j"""
    rng = np.random.default_rng(seed)
    model = ControlledModel.two_layer_tanh(nbar)
    readout = ReadoutMap.canonical(1, nbar)
    u0 = ControlSignal.random_normal(N=N, p=model.p, std=std, seed=seed)
    samples = []
    for index in range(1, q + 1):
        x = rng.uniform(-2, 2, size=2)
        y = EulerFlow.endpoint(model, u0, x, readout) if index <= j else [rng.choice([-1.0, 1.0])]
        samples.append(Sample(x=x, y=y, index=index))
    return model, Ensemble(samples), readout, u0


def test_empty_memory_phase1_is_plain_gradient_step():
    model, ensemble, readout, u0 = problem()
    state = TuningState(u0, ensemble, model, readout, single_step(2.0), memorized=())
    iterations = phase1(state, [1])
    _, gradient, _ = sample_cost_and_gradient(model, u0, ensemble.sample(1), readout)
    assert iterations == 1
    assert np.array_equal(state.u.flat, u0.flat - 2.0 * gradient)
    assert state.memorized == [1]
    assert list(state.report.non_converged) == [1]


def test_phase1_without_new_samples_keeps_control():
    model, ensemble, readout, u0 = problem()
    state = TuningState(u0, ensemble, model, readout, TunerConfig(), memorized=[1, 2])
    assert phase1(state, []) == 0
    assert np.array_equal(state.u.flat, u0.flat)
    assert state.history == []
    with pytest.raises(ValueError):
        phase1(state, [2])


def drift_after_step(seed, step_size, memorize):
    rng = np.random.default_rng(seed)
    model = ControlledModel.two_layer_tanh(3)
    readout = ReadoutMap.canonical(1, 3)
    u0 = ControlSignal.random_normal(N=5, p=model.p, std=0.5, seed=seed)
    x1, x2 = rng.uniform(-2, 2, size=2), rng.uniform(-2, 2, size=2)
    y1 = EulerFlow.endpoint(model, u0, x1, readout)
    ensemble = Ensemble([Sample(x=x1, y=y1, index=1), Sample(x=x2, y=[rng.choice([-1.0, 1.0])], index=2)])
    state = TuningState(u0, ensemble, model, readout, single_step(step_size), memorized=[1] if memorize else ())
    phase1(state, [2])
    return float(np.linalg.norm(EulerFlow.endpoint(model, state.u, x1, readout) - y1))


def test_projected_step_drift_is_second_order():
    for alpha in (1e-2, 1e-3):
        ratios = [drift_after_step(seed, alpha / 2, True) / drift_after_step(seed, alpha, True) for seed in range(10)]
        assert 0.15 <= float(np.mean(ratios)) <= 0.40

    projected = np.mean([drift_after_step(seed, 1e-2, True) for seed in range(10)])
    unprojected = np.mean([drift_after_step(seed, 1e-2, False) for seed in range(10)])
    assert projected < unprojected


def test_every_step_stays_in_kernel():
    model, ensemble, readout, u0 = problem(seed=2)
    config = TunerConfig(max_inner_iterations=20, rounds=1)
    state = TuningState(u0, ensemble, model, readout, config, memorized=[1, 2])
    phase1(state, [3, 4])
    refinement_rounds(state, 1)
    assert {record.phase for record in state.history} <= {"phase1", "phase2", "phase3"}
    assert state.history
    for record in state.history:
        assert record.kernel_residual <= 1e-9


def test_phase1_costs_decrease_per_sample():
    model, ensemble, readout, u0 = problem(seed=3)
    state = TuningState(u0, ensemble, model, readout, TunerConfig(max_inner_iterations=30), memorized=[1])
    initial = {index: state.sample_cost(index) for index in (2, 3, 4)}
    phase1(state, [2, 3, 4])
    for index in (2, 3, 4):
        costs = [record.cost for record in state.history if record.sample_index == index]
        assert costs
        assert costs[0] < initial[index]
        assert all(later < earlier for earlier, later in zip(costs, costs[1:]))


def test_phase2_without_memory_shrinks_geometrically():
    model, ensemble, readout, u0 = problem()
    config = TunerConfig(regularization_step_size=0.1, phase2_max_iterations=3)
    state = TuningState(u0, ensemble, model, readout, config, memorized=())
    assert phase2(state) == 3
    assert state.u.flat == pytest.approx(0.9 ** 3 * u0.flat, rel=1e-12)


def test_phase2_with_full_rank_constraints_is_identity():
    model = ControlledModel.control_affine([linear_field([[1.0]])], nbar=1)
    u0 = ControlSignal(values=[[0.5]])
    ensemble = Ensemble.from_arrays([[1.0]], [1.5])
    state = TuningState(u0, ensemble, model, ReadoutMap.identity(1), TunerConfig(), memorized=[1])
    assert state.stacked.projector().rank == 1
    phase2(state)
    assert np.array_equal(state.u.flat, u0.flat)


def test_phase2_norm_is_non_increasing():
    model, ensemble, readout, u0 = problem(seed=4)
    config = TunerConfig(regularization_step_size=0.2, phase2_max_iterations=20, regularization_target_tolerance=1e-8)
    state = TuningState(u0, ensemble, model, readout, config, memorized=[1, 2])
    phase2(state)
    norms = [u0.norm_sq()] + [record.cost for record in state.history if record.phase == "phase2"]
    assert len(norms) > 1
    assert all(later <= earlier + 1e-12 for earlier, later in zip(norms, norms[1:]))


def test_phase2_shrinks_norm_on_memorized_samples():
    model, ensemble, readout, u0 = memorized_problem(seed=1, q=4, j=4)
    state = TuningState(u0, ensemble, model, readout, TunerConfig(phase2_max_iterations=20), memorized=[1, 2, 3, 4])
    assert all(budget == 1e-4 for budget in state.drift_budget.values())
    assert phase2(state) >= 1
    assert state.u.norm_sq() < u0.norm_sq()
    for index in (1, 2, 3, 4):
        assert state.sample_cost(index) <= state.drift_budget[index]
    step_sizes = [record.step_size for record in state.history]
    assert all(later <= earlier for earlier, later in zip(step_sizes, step_sizes[1:]))


def test_phase3_pass_does_not_increase_total_cost():
    model, ensemble, readout, u0 = problem(seed=6)
    state = TuningState(u0, ensemble, model, readout, TunerConfig(), memorized=[1, 2, 3, 4])
    before = total_cost(model, u0, ensemble.view(), readout)
    assert phase3(state) == 4
    assert total_cost(model, state.u, ensemble.view(), readout) <= before + 1e-9
    costs = [before] + [record.cost for record in state.history]
    assert all(later <= earlier + 1e-9 for earlier, later in zip(costs, costs[1:]))


def test_refinement_rounds_do_not_increase_total_cost():
    model, ensemble, readout, u0 = problem(seed=7)
    config = TunerConfig(regularization_step_size=0.01, phase2_max_iterations=1, refinement_passes=2)
    state = TuningState(u0, ensemble, model, readout, config, memorized=[1, 2, 3, 4])
    refinement_rounds(state, 2)
    totals = [total_cost(model, u0, ensemble.view(), readout)]
    totals += [state.report.value(round_, "phase3", "all", "cost_sum") for round_ in (1, 2)]
    assert all(later <= 1.05 * earlier for earlier, later in zip(totals, totals[1:]))


def test_tuning_keeps_memorized_costs_within_budget():
    model, ensemble, readout, u0 = memorized_problem(seed=8, q=6, j=3)
    config = TunerConfig(step_size=2.0, max_inner_iterations=200, rounds=2)
    u, report = tune_without_forgetting(u0, ensemble, 3, model, readout, config)
    assert report.drift_exceeded == {}
    memorized = ensemble.view(3)
    assert max(np.linalg.norm(EulerFlow.endpoint(model, u, sample.x, readout) - sample.y)
               for sample in memorized) <= np.sqrt(2e-4)

    # 不做回溯时没有预算检查, 大步长会让 X^j 漂移
    unguarded = TunerConfig(step_size=2.0, armijo=False, max_inner_iterations=3, convergence_cost_threshold=1e-12,
                            rounds=0)
    _, report = tune_without_forgetting(u0, ensemble, 3, model, readout, unguarded)
    assert report.drift_exceeded
    assert set(report.drift_exceeded) <= {1, 2, 3}


def test_phase3_zero_passes_is_noop():
    model, ensemble, readout, u0 = problem()
    state = TuningState(u0, ensemble, model, readout, TunerConfig(refinement_passes=0), memorized=[1, 2, 3])
    assert phase3(state) == 0
    assert np.array_equal(state.u.flat, u0.flat)


def test_phase3_single_sample_is_plain_gradient_step():
    model, ensemble, readout, u0 = problem(q=1)
    state = TuningState(u0, ensemble, model, readout, single_step(0.5), memorized=[1])
    assert phase3(state) == 1
    _, gradient, _ = sample_cost_and_gradient(model, u0, ensemble.sample(1), readout)
    assert np.array_equal(state.u.flat, u0.flat - 0.5 * gradient)


def test_refinement_rounds_log_two_phases_per_round():
    model, ensemble, readout, u0 = problem()
    state = TuningState(u0, ensemble, model, readout, TunerConfig(phase2_max_iterations=5), memorized=[1, 2])
    refinement_rounds(state, 0)
    assert state.phase_history == []
    refinement_rounds(state, 2)
    assert [(record.round, record.phase) for record in state.phase_history] == [
        (1, "phase2"), (1, "phase3"), (2, "phase2"), (2, "phase3")]
    with pytest.raises(ValueError):
        refinement_rounds(state, -1)


def test_tune_report_layout():
    model, ensemble, readout, u0 = problem()
    u, report = tune_without_forgetting(u0, ensemble, 2, model, readout,
                                        TunerConfig(max_inner_iterations=10, rounds=1))
    assert report.phases() == [(0, "initial"), (0, "phase1"), (1, "phase2"), (1, "phase3")]
    assert report.value(0, "initial", "memorized", "avg_error") == pytest.approx(
        average_error(u0, ensemble.view(2), model, readout))
    assert report.value(0, "initial", "all", "iterations") == 0
    assert report.value(1, "phase3", "all", "u_norm_sq") == pytest.approx(u.norm_sq())

    text = report.to_csv_string()
    assert text.splitlines()[0] == "round,phase,set,metric,value"
    assert "0,initial,all,iterations,0" in text.splitlines()
    frame = report.to_frame()
    assert set(frame["set"]) == {"memorized", "new", "all"}


def test_report_csv_round_trip(tmp_path):
    model, ensemble, readout, u0 = problem()
    _, report = tune_without_forgetting(u0, ensemble, 1, model, readout, TunerConfig(max_inner_iterations=5, rounds=1))
    filename = tmp_path / "report.csv"
    report.to_csv(filename)
    assert TuningReport.read_csv(filename).to_csv_string() == filename.read_text()


def test_tune_with_nothing_new():
    model, ensemble, readout, u0 = problem()
    _, report = tune_without_forgetting(u0, ensemble, ensemble.q, model, readout, TunerConfig(rounds=1))
    assert all(row.set != "new" for row in report.rows)
    assert report.value(0, "phase1", "all", "iterations") == 0


def test_tune_is_deterministic_and_thread_independent():
    model, ensemble, readout, u0 = problem(seed=5)
    config = TunerConfig(max_inner_iterations=10, rounds=1)
    first, report_first = tune_without_forgetting(u0, ensemble, 2, model, readout, config)
    second, report_second = tune_without_forgetting(u0, ensemble, 2, model, readout, config)
    threaded, report_threaded = tune_without_forgetting(u0, ensemble, 2, model, readout,
                                                        TunerConfig(max_inner_iterations=10, rounds=1, workers=2))
    assert np.array_equal(first.flat, second.flat)
    assert np.array_equal(first.flat, threaded.flat)
    assert report_first.to_csv_string() == report_second.to_csv_string() == report_threaded.to_csv_string()


def test_non_convergence_recorded_or_raised():
    model, ensemble, readout, u0 = problem()
    config = TunerConfig(max_inner_iterations=0, convergence_cost_threshold=1e-12, rounds=0)
    _, report = tune_without_forgetting(u0, ensemble, 2, model, readout, config)
    assert sorted(report.non_converged) == [3, 4]

    strict = TunerConfig(max_inner_iterations=0, convergence_cost_threshold=1e-12, rounds=0, strict=True)
    with pytest.raises(ConvergenceError) as info:
        tune_without_forgetting(u0, ensemble, 2, model, readout, strict)
    assert info.value.sample_index == 3
    assert info.value.iterations == 0


def test_warns_when_initial_control_does_not_memorize(capsys):
    model, ensemble, readout, u0 = problem()
    tune_without_forgetting(u0, ensemble, 2, model, readout, TunerConfig(max_inner_iterations=0, rounds=0))
    assert "does not memorize" in capsys.readouterr().out


def test_invalid_arguments():
    model, ensemble, readout, u0 = problem()
    with pytest.raises(ValueError):
        tune_without_forgetting(u0, ensemble, ensemble.q + 1, model, readout)
    with pytest.raises(ValueError):
        TunerConfig(step_size=0.0).validate()
    with pytest.raises(ValueError):
        TunerConfig(armijo_contraction=1.0).validate()
    with pytest.raises(ValueError):
        TuningState(ControlSignal.zeros(5, 3), ensemble, model, readout, TunerConfig())
