from __future__ import annotations

from dataclasses import asdict, dataclass, field


@dataclass
class SolveReport:
    """Outcome of an iterative solve.

    ``residual_history[0]`` is the initial relative residual; for BiCGSTAB
    the history has one entry per preconditioner application.
    """

    converged: bool
    iterations: int
    residual_history: list[float] = field(default_factory=list)
    preconditioner_applications: int = 0
    wall_time: float = 0.0
    status: str = ""
    true_residual: float | None = None

    @property
    def final_residual(self) -> float:
        return self.residual_history[-1]

    def to_dict(self) -> dict:
        return asdict(self)
