from __future__ import annotations

from dataclasses import dataclass

from ..exceptions import LabelError

BEGINNING, FINISHING = 0, 1
PHASES = {"beginning": BEGINNING, "finishing": FINISHING}

DEFAULT_CLASSES = ("expand_contract", "sweep_left_right", "brighten_dim")


@dataclass(frozen=True)
class LabelSpace:
    """The K action classes and the label sets derived from them.

    PR labels are ``{0: background, 1: action}``; AR labels encode class ``k``
    and phase as ``2k + phase``; detection labels are ``0..K-1`` for actions
    and ``K`` for background.
    """

    class_names: tuple[str, ...] = DEFAULT_CLASSES

    def __post_init__(self):
        object.__setattr__(self, "class_names", tuple(self.class_names))
        if not self.class_names:
            raise LabelError("a label space needs at least one class")

    @property
    def K(self) -> int:
        return len(self.class_names)

    @property
    def pr_size(self) -> int:
        return 2

    @property
    def ar_size(self) -> int:
        return 2 * self.K

    @property
    def det_size(self) -> int:
        return self.K + 1

    @property
    def background(self) -> int:
        return self.K

    def ar_label(self, class_id: int, phase) -> int:
        if isinstance(phase, str):
            phase = PHASES[phase]
        if not 0 <= class_id < self.K or phase not in (BEGINNING, FINISHING):
            raise LabelError(f"no AR label for class {class_id}, phase {phase}")
        return 2 * class_id + phase

    @staticmethod
    def ar_decode(label: int) -> tuple[int, int]:
        return label // 2, label % 2
