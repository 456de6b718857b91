"""Training traces, delimited-text emission, and early stopping.

Kept free of model imports so both training loops and the experiment
harness can use it without cycles.
"""

from __future__ import annotations

import numpy as np

from sdgmlab.errors import InputError


def format_cell(value) -> str:
    """Stable cell rendering: floats as %.6g, missing values blank."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.6g" % float(value)
    return str(value)


class MetricsTrace:
    """Append-only measurement table with a fixed column set.

    Every row carries (epoch, split); metric cells not supplied for a row
    stay blank in the emitted text.  Epochs must strictly increase within
    a split so traces stay replayable.
    """

    def __init__(self, columns: list[str], key_col: str = "epoch", group_col: str = "split"):
        if len(set(columns)) != len(columns):
            raise InputError("duplicate metric columns")
        reserved = {"epoch", "split", key_col, group_col} & set(columns)
        if reserved:
            raise InputError(f"reserved column names: {sorted(reserved)}")
        self.columns = list(columns)
        # key_col/group_col rename the two leading columns in the emitted
        # text only (e.g. iteration/language for pretraining traces); rows
        # are always keyed epoch/split internally.
        self.key_col = key_col
        self.group_col = group_col
        self.rows: list[dict] = []
        self._last_epoch: dict[str, int] = {}

    def add(self, epoch: int, split: str, **values) -> None:
        unknown = set(values) - set(self.columns)
        if unknown:
            raise InputError(f"unknown metric columns: {sorted(unknown)}")
        last = self._last_epoch.get(split)
        if last is not None and epoch <= last:
            raise InputError(f"epoch {epoch} does not advance past {last} for split {split!r}")
        self._last_epoch[split] = int(epoch)
        self.rows.append({"epoch": int(epoch), "split": split, **values})

    def last(self, split: str, column: str):
        for row in reversed(self.rows):
            if row["split"] == split and column in row:
                return row[column]
        return None

    def series(self, split: str, column: str) -> list[tuple[int, float]]:
        return [(r["epoch"], r[column]) for r in self.rows if r["split"] == split and column in r]

    def format_csv(self) -> str:
        lines = [",".join([self.key_col, self.group_col, *self.columns])]
        for row in self.rows:
            cells = [format_cell(row.get(c)) for c in ("epoch", "split", *self.columns)]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def write_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.format_csv())


class EarlyStopper:
    """Stop after `patience` consecutive validations without strict improvement."""

    def __init__(self, patience: int, mode: str = "max"):
        if patience < 1:
            raise InputError("patience must be at least 1")
        if mode not in ("max", "min"):
            raise InputError(f"mode must be 'max' or 'min', got {mode!r}")
        self.patience = patience
        self.mode = mode
        self.best_value: float | None = None
        self.best_epoch: int | None = None
        self._stale = 0

    def update(self, value: float, epoch: int) -> bool:
        """Record one validation; True when it strictly improved the best."""
        if self.best_value is None:
            improved = True
        elif self.mode == "max":
            improved = value > self.best_value
        else:
            improved = value < self.best_value
        if improved:
            self.best_value = float(value)
            self.best_epoch = int(epoch)
            self._stale = 0
        else:
            self._stale += 1
        return improved

    @property
    def should_stop(self) -> bool:
        return self._stale >= self.patience
