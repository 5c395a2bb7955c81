import logging
import os
import time
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import pandas as pd

from channel_model import InvalidParameterError


logger = logging.getLogger("te-powerctl.repo")

SCHEMAS: Dict[str, List[str]] = {
    "occupancy": ["K", "C", "Q", "eps", "channel", "target", "sim_occupancy", "dtmc_occupancy", "chain_occupancy"],
    "passage": ["K", "C", "Q", "eps", "target", "sim_mean", "dtmc_exact", "bound_lo", "bound_hi"],
    "curves": ["iteration", "mean_frac_satisfied", "mean_power_ratio"],
    "analyze": [
        "K", "C", "Q", "Q_S", "eps", "du", "target",
        "p_eq_d", "p_d_eq", "t_lower", "t_upper", "t_exact", "occupancy", "chain_occupancy",
    ],
    "trace": ["iteration", "player", "mood", "channel", "power_index", "utility", "benchmark_utility"],
    "sweep": [
        "K", "C", "Q", "eps", "channel", "target",
        "metric", "simulated", "predicted", "chain_predicted", "bound_lo", "bound_hi",
    ],
}

JOIN_KEYS = ["K", "C", "Q", "eps", "target"]


def _conform(kind: str, df: pd.DataFrame) -> pd.DataFrame:
    if kind not in SCHEMAS:
        raise InvalidParameterError(f"unknown result kind {kind!r}, expected one of {sorted(SCHEMAS)}")
    missing = [c for c in SCHEMAS[kind] if c not in df.columns]
    if missing:
        raise InvalidParameterError(f"{kind} rows are missing columns {missing}")
    return df[SCHEMAS[kind]]


def compare(sim: pd.DataFrame, analysis: pd.DataFrame) -> pd.DataFrame:
    """Join simulated occupancy with analysis rows on (K, C, Q, eps, target)."""
    for name, df in (("simulation", sim), ("analysis", analysis)):
        missing = [k for k in JOIN_KEYS if k not in df.columns]
        if missing:
            raise InvalidParameterError(f"{name} table lacks join keys {missing}")
    sim = sim.assign(eps=sim["eps"].round(12))
    analysis = analysis.assign(eps=analysis["eps"].round(12))
    merged = sim.merge(analysis, on=JOIN_KEYS, how="inner", suffixes=("", "_analyze"))
    if "sim_occupancy" in merged and "occupancy" in merged:
        merged["occupancy_gap"] = merged["sim_occupancy"] - merged["occupancy"]
    # the analysis copy of chain_occupancy wins when both tables carry it
    chain = "chain_occupancy_analyze" if "chain_occupancy_analyze" in merged else "chain_occupancy"
    if "sim_occupancy" in merged and chain in merged:
        merged["chain_gap"] = merged["sim_occupancy"] - merged[chain]
    if merged.empty:
        logger.warning("compare: no rows share %s", ", ".join(JOIN_KEYS))
    return merged


class ResultsRepository:
    """CSV datasets under TE_RESULTS_DIR, one file per kind unless a name is given."""

    def __init__(self, root: Optional[str] = None):
        self.root = Path(root or os.getenv("TE_RESULTS_DIR", "results"))
        self._cache: Dict[Path, Tuple[float, pd.DataFrame]] = {}
        self._cache_ttl = 15.0

    def path(self, kind: str, name: Optional[str] = None) -> Path:
        if kind not in SCHEMAS:
            raise InvalidParameterError(f"unknown result kind {kind!r}, expected one of {sorted(SCHEMAS)}")
        return self.root / f"{name or kind}.csv"

    def write(self, kind: str, df: pd.DataFrame, name: Optional[str] = None) -> Path:
        path = self.path(kind, name)
        path.parent.mkdir(parents=True, exist_ok=True)
        _conform(kind, df).to_csv(path, index=False)
        self._cache.pop(path, None)
        logger.info("%d %s row(s) written to %s", len(df), kind, path)
        return path

    def append(self, kind: str, rows: List[dict], name: Optional[str] = None) -> Path:
        path = self.path(kind, name)
        df = _conform(kind, pd.DataFrame(rows))
        path.parent.mkdir(parents=True, exist_ok=True)
        df.to_csv(path, mode="a", header=not path.exists(), index=False)
        self._cache.pop(path, None)
        logger.info("%d %s row(s) appended to %s", len(df), kind, path)
        return path

    def _read_all(self, path: Path) -> pd.DataFrame:
        now = time.time()
        hit = self._cache.get(path)
        if hit is not None and now - hit[0] < self._cache_ttl:
            return hit[1]
        df = pd.read_csv(path)
        self._cache[path] = (now, df)
        return df

    def read(self, kind: str, name: Optional[str] = None) -> pd.DataFrame:
        path = self.path(kind, name)
        if not path.exists():
            return pd.DataFrame(columns=SCHEMAS[kind])
        return self._read_all(path)

    def compare(self, sim_path: str, analyze_path: str) -> pd.DataFrame:
        return compare(pd.read_csv(sim_path), pd.read_csv(analyze_path))
