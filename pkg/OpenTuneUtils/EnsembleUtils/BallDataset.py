import numpy as np

from .EnsembleObject import Ensemble, Sample

MIN_PAIRWISE_DISTANCE = 1e-9


class DatasetGenerationError(RuntimeError):
    """
    拒绝采样在尝试次数上限内没有得到足够的样本

    Parameters:
        message: 错误信息
        accepted: 已接受的样本数
        attempts: 已尝试的次数
    """

    def __init__(self, message: str, accepted: int, attempts: int):
        self.accepted = accepted
        self.attempts = attempts
        super().__init__(f"{message} (accepted={accepted}, attempts={attempts})")


class BallDataset:
    """单位球分类数据集: 球内 (||x||^2 <= 1) 标签为 -1, 球外为 +1"""

    @staticmethod
    def label(x) -> float:
        x = np.asarray(x, dtype=float)
        return -1.0 if float(np.dot(x, x)) <= 1.0 else 1.0

    @staticmethod
    def generate(q: int, seed: int, margin: float = 0.1, box_halfwidth: float = 2.0,
                 n: int = 2, max_attempts_per_sample: int = 1000) -> Ensemble:
        """
        在 [-box_halfwidth, box_halfwidth]^n 中均匀拒绝采样 q 个点

        参数:
            q: 样本数
            seed: 随机种子, 结果只依赖于 (q, seed, margin, box_halfwidth)
            margin: 排除单位圆附近 | ||x|| - 1 | < margin 的点
            box_halfwidth: 采样区域半宽
            n: 输入维数

        返回:
            Ensemble: 标签满足单位球规则, 点两两不同
        """
        if q < 1:
            raise ValueError(f"q must be >= 1, got {q}")
        if margin < 0:
            raise ValueError(f"margin must be non-negative, got {margin}")
        if box_halfwidth <= 0:
            raise ValueError(f"box_halfwidth must be positive, got {box_halfwidth}")
        if not margin < box_halfwidth - 1:
            raise ValueError(f"margin ({margin}) must be smaller than box_halfwidth - 1 ({box_halfwidth - 1})")

        rng = np.random.default_rng(seed)
        points = []
        attempts = 0
        max_attempts = max_attempts_per_sample * q
        while len(points) < q:
            if attempts >= max_attempts:
                raise DatasetGenerationError("margin/box too restrictive for rejection sampling",
                                             accepted=len(points), attempts=attempts)
            attempts += 1
            x = rng.uniform(-box_halfwidth, box_halfwidth, size=n)
            if abs(float(np.linalg.norm(x)) - 1.0) < margin:
                continue
            if points and float(np.min(np.linalg.norm(np.array(points) - x, axis=1))) < MIN_PAIRWISE_DISTANCE:
                continue
            points.append(x)

        samples = [
            Sample(x=x, y=np.array([BallDataset.label(x)]), index=i)
            for i, x in enumerate(points, start=1)
        ]
        return Ensemble(samples)

    @staticmethod
    def label_balance(ensemble: Ensemble) -> dict:
        labels = [float(sample.y[0]) for sample in ensemble]
        return {"inside": labels.count(-1.0), "outside": labels.count(1.0)}
