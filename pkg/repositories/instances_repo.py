import json
import logging
import os
import time
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from channel_model import CUSTOM, InvalidParameterError, NetworkInstance
from config import instance_from_config


logger = logging.getLogger("te-powerctl.repo")

GAINS_COLUMNS = ["rx", "tx", "channel", "gain"]


def read_gains_csv(path: str, num_players: int, num_channels: int) -> np.ndarray:
    """Long-format gains file -> (K, K, C) array; every (rx, tx, channel) must be present once."""
    df = pd.read_csv(path)
    missing = [c for c in GAINS_COLUMNS if c not in df.columns]
    if missing:
        raise InvalidParameterError(f"{path}: missing columns {missing}")
    if df.duplicated(subset=["rx", "tx", "channel"]).any():
        raise InvalidParameterError(f"{path}: duplicate (rx, tx, channel) rows")
    K, C = num_players, num_channels
    idx = df[["rx", "tx", "channel"]].to_numpy(dtype=int)
    if len(df) != K * K * C or idx.min() < 0 or np.any(idx.max(axis=0) >= (K, K, C)):
        raise InvalidParameterError(f"{path}: expected {K * K * C} rows indexing a {K}x{K}x{C} gain array")
    gains = np.zeros((K, K, C))
    gains[idx[:, 0], idx[:, 1], idx[:, 2]] = df["gain"].to_numpy(dtype=float)
    return gains


def gains_frame(instance: NetworkInstance) -> pd.DataFrame:
    K, C = instance.num_players, instance.num_channels
    rx, tx, ch = np.meshgrid(np.arange(K), np.arange(K), np.arange(C), indexing="ij")
    return pd.DataFrame({
        "rx": rx.ravel(),
        "tx": tx.ravel(),
        "channel": ch.ravel(),
        "gain": instance.gains.ravel(),
    })


class InstancesRepository:
    """Instance configs stored as JSON files under TE_DATA_DIR."""

    def __init__(self, root: Optional[str] = None):
        self.root = Path(root or os.getenv("TE_DATA_DIR", "data"))
        self._cache: Optional[List[Dict[str, Any]]] = None
        self._cache_ts = 0.0
        self._cache_ttl = 30.0

    def _path(self, name: str) -> Path:
        if not name or "/" in name or name.startswith("."):
            raise InvalidParameterError(f"invalid instance name {name!r}")
        return self.root / f"{name}.json"

    def _read_all(self) -> List[Dict[str, Any]]:
        now = time.time()
        if self._cache is not None and now - self._cache_ts < self._cache_ttl:
            return self._cache
        rows = []
        if self.root.is_dir():
            for p in sorted(self.root.glob("*.json")):
                try:
                    rows.append({"name": p.stem, **json.loads(p.read_text())})
                except json.JSONDecodeError:
                    logger.warning("skipping unreadable instance file %s", p)
        self._cache = rows
        self._cache_ts = now
        return rows

    def list_all(self) -> List[Dict[str, Any]]:
        return list(self._read_all())

    def get(self, name: str) -> Optional[Dict[str, Any]]:
        for r in self._read_all():
            if r["name"] == name:
                return {k: v for k, v in r.items() if k != "name"}
        return None

    def save(self, name: str, instance: NetworkInstance, with_gains: bool = False) -> Path:
        """Write the flat config; custom gains always go next to it as CSV."""
        self.root.mkdir(parents=True, exist_ok=True)
        path = self._path(name)
        config = {k: v for k, v in instance.to_config().items() if v is not None}
        if with_gains or instance.channel == CUSTOM:
            gains_path = self.root / f"{name}_gains.csv"
            self.dump_gains(instance, str(gains_path))
            config.update(channel="custom", gains_csv=str(gains_path))
        path.write_text(json.dumps(config, indent=2))
        self._cache = None
        logger.info("instance %s written to %s", name, path)
        return path

    def load(self, name: str) -> NetworkInstance:
        data = self.get(name)
        if data is None:
            raise FileNotFoundError(f"no instance named {name!r} under {self.root}")
        return instance_from_config(data)

    def dump_gains(self, instance: NetworkInstance, path: str) -> str:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        gains_frame(instance).to_csv(path, index=False)
        logger.info("gains (%d rows) written to %s", instance.gains.size, path)
        return path
