"""
Hardware probe. Source order: OS topology files, then generic APIs, then defaults.
Overrides always win, but an override that breaks an invariant is rejected with a warning.
"""
import logging
import os
from pathlib import Path
from typing import Dict, Mapping, Optional

from querysynth.models.profile import HardwareProfile

logger = logging.getLogger(__name__)

DEFAULTS = HardwareProfile()

_SYS_CPU = Path("/sys/devices/system/cpu")

_OVERRIDE_KEYS = {
    "cores": "core_count", "core_count": "core_count",
    "l1": "l1_bytes", "l1_bytes": "l1_bytes",
    "l2": "l2_bytes", "l2_bytes": "l2_bytes",
    "l3": "l3_bytes", "l3_bytes": "l3_bytes",
    "cache_line": "cache_line_bytes", "cache_line_bytes": "cache_line_bytes",
}


def _parse_size(text: str) -> Optional[int]:
    text = text.strip().upper()
    if not text:
        return None
    mult = 1
    if text.endswith("K"):
        mult, text = 1024, text[:-1]
    elif text.endswith("M"):
        mult, text = 1024 * 1024, text[:-1]
    try:
        return int(text) * mult
    except ValueError:
        return None


def _probe_sysfs(root: Path = _SYS_CPU) -> Dict[str, int]:
    found: Dict[str, int] = {}
    cache_dir = root / "cpu0" / "cache"
    if not cache_dir.is_dir():
        return found
    for entry in sorted(cache_dir.glob("index*")):
        try:
            level = int((entry / "level").read_text())
            kind = (entry / "type").read_text().strip()
            size = _parse_size((entry / "size").read_text())
            line = _parse_size((entry / "coherency_line_size").read_text())
        except (OSError, ValueError):
            continue
        if kind == "Instruction" or size is None:
            continue
        found[{1: "l1_bytes", 2: "l2_bytes", 3: "l3_bytes"}.get(level, f"l{level}")] = size
        if line:
            found["cache_line_bytes"] = line
    return found


def _probe_simd() -> Optional[str]:
    try:
        text = Path("/proc/cpuinfo").read_text()
    except OSError:
        return None
    for line in text.splitlines():
        if line.startswith(("flags", "Features")):
            flags = set(line.split(":", 1)[1].split())
            for name in ("avx512f", "avx2", "sse4_2", "asimd", "neon"):
                if name in flags:
                    return name
            return None
    return None


def _valid(field: str, value: int) -> bool:
    if value <= 0:
        return False
    if field == "cache_line_bytes" and value & (value - 1):
        return False
    return True


def probe_hardware(overrides: Optional[Mapping[str, int]] = None, probe: bool = True) -> HardwareProfile:
    values = DEFAULTS.model_dump(exclude={"warnings", "source", "simd"})
    sources = []
    warnings = []

    if probe:
        sysfs = {k: v for k, v in _probe_sysfs().items() if k in values and _valid(k, v)}
        if sysfs:
            values.update(sysfs)
            sources.append("sysfs")
        cores = os.cpu_count()
        if cores:
            values["core_count"] = cores
            sources.append("os")

    for key, raw in (overrides or {}).items():
        field = _OVERRIDE_KEYS.get(key)
        if field is None:
            warnings.append(f"unknown hardware override '{key}' ignored")
            continue
        try:
            value = int(raw)
        except (TypeError, ValueError):
            value = -1
        if not _valid(field, value):
            warnings.append(f"override {key}={raw} rejected; keeping {values[field]}")
            continue
        values[field] = value
        sources.append("override")

    for w in warnings:
        logger.warning(w)
    return HardwareProfile(
        **values,
        simd=_probe_simd() if probe else None,
        source="+".join(dict.fromkeys(sources)) or "defaults",
        warnings=warnings,
    )
