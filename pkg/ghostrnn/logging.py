"""Logging setup and the per-epoch metrics recorder.

Diagnostics go to stderr through the standard ``logging`` tree rooted at
``ghostrnn``; stdout is left to command results.
"""

import json
import logging
import sys
from threading import Lock
from typing import IO, Any, Dict, List, Optional

from ghostrnn.models import EpochRecord


LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def setup_logging(log_level: str = "INFO") -> logging.Logger:
    """Configure stderr logging for the kit.

    Args:
        log_level: Logging level (DEBUG, INFO, WARNING, ERROR)

    Returns:
        The ``ghostrnn`` package logger
    """
    logging.basicConfig(
        level=getattr(logging, log_level.upper(), logging.INFO),
        format=LOG_FORMAT,
        stream=sys.stderr,
    )
    root = logging.getLogger("ghostrnn")
    root.setLevel(getattr(logging, log_level.upper(), logging.INFO))
    return root


class MetricsLogger:
    """Thread-safe recorder of epoch records.

    Keeps the most recent ``max_entries`` records in memory and, when a
    path is given, streams each record as one JSON line. Records carry no
    wall-clock value unless the trainer was asked for one, so two identical
    runs write identical files.
    """

    def __init__(self, path: Optional[str] = None, max_entries: int = 10000):
        self._records: List[EpochRecord] = []
        self._lock = Lock()
        self._max_entries = max_entries
        self._path = path
        self._stream: Optional[IO[str]] = open(path, "w", encoding="utf-8") if path else None

    def log(self, record: EpochRecord) -> EpochRecord:
        line = json.dumps(record.to_dict(), sort_keys=True)
        with self._lock:
            self._records.append(record)
            if len(self._records) > self._max_entries:
                self._records = self._records[-self._max_entries:]
            if self._stream is not None:
                self._stream.write(line)
                self._stream.write("\n")
                self._stream.flush()
        return record

    def get_records(self) -> List[EpochRecord]:
        """Records in epoch order."""
        with self._lock:
            return list(self._records)

    def get_stats(self) -> Dict[str, Any]:
        """Epoch count, best epoch and loss, and the last training loss."""
        records = self.get_records()
        if not records:
            return {"epochs": 0, "best_epoch": None, "best_val_loss": None, "final_train_loss": None}
        best = min(records, key=lambda r: r.val_loss)
        return {
            "epochs": len(records),
            "best_epoch": best.epoch,
            "best_val_loss": best.val_loss,
            "final_train_loss": records[-1].train_loss,
        }

    def close(self) -> None:
        with self._lock:
            if self._stream is not None:
                self._stream.close()
                self._stream = None

    def __enter__(self) -> "MetricsLogger":
        return self

    def __exit__(self, *exc: Any) -> None:
        self.close()


__all__ = [
    "LOG_FORMAT",
    "setup_logging",
    "MetricsLogger",
]
