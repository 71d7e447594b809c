from typing import Optional

from ..DynamicsUtils import ControlSignal, ControlledModel, ReadoutMap
from ..EnsembleUtils import Ensemble
from ..OptimizeUtils import TunerConfig, TuningState, phase1, refinement_rounds
from .QFolded import TrainingResult, initial_control


def scratch_phase1_train(ensemble, model: ControlledModel, readout: ReadoutMap, N: int,
                         config: Optional[TunerConfig] = None, T: float = 1.0, seed: int = 0,
                         init_std: Optional[float] = None, u_init: Optional[ControlSignal] = None) -> TrainingResult:
    """
    以空记忆逐个样本做 Phase I, 再做 config.rounds 轮细化

    空记忆时投影为恒等映射, Phase I 退化为逐样本梯度下降, 可替代 q-folded 训练。
    u_init 缺省时使用与 q-folded 相同的带种子高斯初始化; TwoLayerTanh 在 u = 0 处只有 b2 方向的梯度,
    各样本的梯度互相平行, 第二个样本起投影梯度为零。
    """
    config = TunerConfig() if config is None else config
    working = Ensemble(list(ensemble))
    if u_init is None:
        u_init = initial_control(model.nbar, model.p, N, seed, init_std, T)
    state = TuningState(u_init, working, model, readout, config, memorized=(), j=working.q)
    state.log_phase("phase1", phase1(state, range(1, working.q + 1)))
    refinement_rounds(state, config.rounds)

    curve = [
        (record.step, state.report.value(record.round, record.phase, "all", "cost_sum"),
         state.report.value(record.round, record.phase, "all", "avg_error"))
        for record in state.phase_history
    ]
    return TrainingResult(control=state.u, iterations=sum(record.iterations for record in state.phase_history),
                          converged=not state.report.non_converged, curve=curve, final_cost=curve[-1][1])
