
from dataclasses import dataclass, field
from typing import List, Optional, Set

from ..bayes.network import VariationalParams
from ..bayes.snapshot import PosteriorSnapshot
from ..data.dataset import Dataset
from ..errors import AlignmentError
from ..objectives.fisher import FisherDiag


@dataclass(frozen=True)
class CoresetChunk:
    task_index: int
    head: int
    data: Dataset


@dataclass
class ContinualState:
    params: VariationalParams
    prior: PosteriorSnapshot
    anchor: Optional[PosteriorSnapshot] = None
    fisher: Optional[FisherDiag] = None
    coreset: List[CoresetChunk] = field(default_factory=list)
    completed_tasks: int = 0
    # Task-0 prior; heads not yet trained are held at it.
    base_prior: Optional[PosteriorSnapshot] = None
    trained_heads: Set[int] = field(default_factory=set)

    def __post_init__(self):
        if self.base_prior is None:
            self.base_prior = self.prior
        self._check_pair(self.anchor, self.fisher)

    @staticmethod
    def _check_pair(anchor, fisher):
        if (anchor is None) != (fisher is None):
            raise AlignmentError("EWC anchor and Fisher estimate must be present together")

    def update_prior(self, prior: PosteriorSnapshot):
        self.prior = prior

    def update_anchor(self, anchor: PosteriorSnapshot, fisher: FisherDiag):
        self._check_pair(anchor, fisher)
        self.anchor = anchor
        self.fisher = fisher

    def add_coreset(self, chunk: CoresetChunk):
        self.coreset.append(chunk)

    @property
    def coreset_points(self) -> int:
        return sum(len(chunk.data) for chunk in self.coreset)

    def clone(self) -> "ContinualState":
        # Snapshots, Fisher and coreset chunks are immutable, only the live params are copied.
        return ContinualState(
            params=self.params.copy(),
            prior=self.prior,
            anchor=self.anchor,
            fisher=self.fisher,
            coreset=list(self.coreset),
            completed_tasks=self.completed_tasks,
            base_prior=self.base_prior,
            trained_heads=set(self.trained_heads),
        )

    def untrained_head_layers(self) -> List[str]:
        return [layer.name for k, layer in enumerate(self.params.heads) if k not in self.trained_heads]
