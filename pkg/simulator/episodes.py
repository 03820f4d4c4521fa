from dataclasses import dataclass, field
from typing import List, Optional, Sequence


def discounted_return(rewards: Sequence[float], discount: float) -> float:
    """시작 상태 보상을 포함한 Σ γ^i r_i"""
    total = 0.0
    weight = 1.0
    for reward in rewards:
        total += weight * reward
        weight *= discount
    return total


@dataclass
class EpisodeTracker:
    """에피소드별 할인 누적 보상 기록"""

    discount: float
    index: int = -1
    steps: int = 0
    value: float = 0.0
    returns: List[float] = field(default_factory=list)
    cutoffs: List[bool] = field(default_factory=list)
    _weight: float = 1.0

    @property
    def active(self) -> bool:
        return self.index >= len(self.returns)

    def begin(self, start_reward: float) -> None:
        if self.active:
            raise ValueError("이전 에피소드가 끝나지 않았습니다.")
        self.index += 1
        self.steps = 0
        self.value = start_reward
        self._weight = 1.0

    def record(self, reward: float) -> None:
        self.steps += 1
        self._weight *= self.discount
        self.value += self._weight * reward

    def finish(self, cutoff: bool = False) -> float:
        self.returns.append(self.value)
        self.cutoffs.append(cutoff)
        return self.value

    def partial_return(self, state_value: float, state_reward: float) -> float:
        """진행 중 에피소드의 G 추정 (현재 상태 이후는 최적 정책을 따른다고 가정)

        현재 상태 보상은 state_value에 이미 포함되므로 누적값에서 한 번 뺀다.
        """
        return self.value + self._weight * (state_value - state_reward)

    def completed_since(self, episode: int) -> List[float]:
        return self.returns[max(episode, 0) :]

    def recent(self, window: int) -> Optional[float]:
        if not self.returns:
            return None
        tail = self.returns[-window:]
        return sum(tail) / len(tail)
