import math
from typing import Any, Dict, List, Optional, Tuple


class LossTrace:
    def __init__(self, label: str, seq_len: int = 0):
        self.label = label
        self.seq_len = seq_len
        self._steps: List[int] = []
        self._losses: List[float] = []
        self._wall_ms: List[float] = []
        self._eval_steps: List[int] = []
        self._eval_losses: List[float] = []
        self._layer_schemes: List[str] = []
        self.diverged = False

    def record_step(self, step: int, loss: float, wall_ms: float) -> None:
        if not math.isfinite(loss):
            self.diverged = True
            raise ValueError(f"non-finite loss {loss} at step {step}")
        self._steps.append(step)
        self._losses.append(float(loss))
        self._wall_ms.append(float(wall_ms))

    def record_eval(self, step: int, loss: float) -> None:
        if not math.isfinite(loss):
            self.diverged = True
            raise ValueError(f"non-finite validation loss {loss} at step {step}")
        self._eval_steps.append(step)
        self._eval_losses.append(float(loss))

    def set_layer_schemes(self, schemes: List[str]) -> None:
        self._layer_schemes = list(schemes)

    @property
    def steps(self) -> List[int]:
        return self._steps.copy()

    @property
    def losses(self) -> List[float]:
        return self._losses.copy()

    @property
    def wall_ms(self) -> List[float]:
        return self._wall_ms.copy()

    @property
    def eval_losses(self) -> List[Tuple[int, float]]:
        return list(zip(self._eval_steps, self._eval_losses))

    @property
    def layer_schemes(self) -> List[str]:
        return self._layer_schemes.copy()

    @property
    def initial_loss(self) -> Optional[float]:
        return self._losses[0] if self._losses else None

    @property
    def final_loss(self) -> Optional[float]:
        return self._losses[-1] if self._losses else None

    def __len__(self) -> int:
        return len(self._losses)

    def rows(self) -> List[Dict[str, Any]]:
        return [
            {"step": step, "loss": loss, "wall_ms": wall}
            for step, loss, wall in zip(self._steps, self._losses, self._wall_ms)
        ]

    def eval_rows(self) -> List[Dict[str, Any]]:
        return [{"step": step, "val_loss": loss} for step, loss in self.eval_losses]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "label": self.label,
            "seq_len": self.seq_len,
            "steps": len(self._losses),
            "initial_loss": self.initial_loss,
            "final_loss": self.final_loss,
            "final_val_loss": self._eval_losses[-1] if self._eval_losses else None,
            "layer_schemes": self.layer_schemes,
            "diverged": self.diverged,
        }
