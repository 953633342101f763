"""Data files, benchmark settings and the ``key = value`` config format."""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .engine import EngineConfig
from .errors import DataError, InvalidInputError
from .model import HyperParams
from .tmcmc import TmcmcConfig

DATA_DIR_ENV = "DPIID_DATA_DIR"

# built-in name -> expected size; only the galaxy velocities ship with the package
BUILTIN_SIZES = {"enzyme": 245, "acidity": 155, "galaxy": 82}
BUNDLED_SHA256 = {"galaxy": "af6d3d95d8917d2bd97b485924802af3477d3e2303eaa7c7d457a7026759d827"}


@dataclass(frozen=True)
class Dataset:
    name: str
    y: np.ndarray

    @property
    def n(self) -> int:
        return self.y.size


def parse_values(text: str, source: str = "<string>") -> np.ndarray:
    """One number per line; ``#`` starts a comment, blank lines are skipped."""
    vals = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        try:
            v = float(body)
        except ValueError:
            raise DataError(f"{source}: line {lineno}: cannot parse {body!r} as a number") from None
        if not np.isfinite(v):
            raise DataError(f"{source}: line {lineno}: non-finite value {body!r}")
        vals.append(v)
    if not vals:
        raise DataError(f"{source}: no data values")
    return np.array(vals)


def _builtin_text(name: str) -> tuple[str, str]:
    env = os.environ.get(DATA_DIR_ENV)
    if env:
        p = Path(env) / f"{name}.txt"
        if p.is_file():
            return p.read_text(), str(p)
    if name in BUNDLED_SHA256:
        raw = resources.files("dpiid.data").joinpath(f"{name}.txt").read_bytes()
        if hashlib.sha256(raw).hexdigest() != BUNDLED_SHA256[name]:
            raise DataError(f"bundled {name} data failed its checksum")
        return raw.decode(), f"<bundled {name}>"
    raise DataError(f"dataset {name!r} is not bundled; place {name}.txt "
                    f"(one value per line) in the directory named by {DATA_DIR_ENV}")


def load_dataset(source: str | os.PathLike) -> Dataset:
    """Load a built-in dataset by name or any file of one value per line."""
    name = str(source)
    if name in BUILTIN_SIZES:
        text, where = _builtin_text(name)
        y = parse_values(text, where)
        if y.size != BUILTIN_SIZES[name]:
            raise DataError(f"{where}: expected {BUILTIN_SIZES[name]} values for {name}, got {y.size}")
        return Dataset(name, y)
    p = Path(source)
    if not p.is_file():
        raise DataError(f"no such dataset or file: {name}")
    return Dataset("custom", parse_values(p.read_text(), str(p)))


# ---------------------------------------------------------------------------- benchmarks

@dataclass(frozen=True)
class BenchmarkConfig:
    name: str
    hp: HyperParams
    tmcmc: TmcmcConfig
    engine: EngineConfig


def _bench(name, S, nu0, c1, b, scale, burn_in, thin):
    hp = HyperParams(M=30, N=50, s=4.0, S=S, nu0=nu0, c=33.3, a_alpha=2.0, b_alpha=4.0)
    tm = TmcmcConfig(scale=scale, burn_in=burn_in, thin=thin, keep=10_000)
    eng = EngineConfig(n_mc=5000, eta=1e-10, c1=c1, step=0.0005, shells=10_000, b=b, draws=10_000)
    return BenchmarkConfig(name, hp, tm, eng)


def benchmark_config(name: str) -> BenchmarkConfig:
    if name == "enzyme":
        return _bench("enzyme", 2 * (0.2 / 1.22), 1.45, 8.0, 0.01, 0.5 ** 0.5, 1_000_000, 100)
    if name == "acidity":
        return _bench("acidity", 2 * (0.2 / 0.573), 5.02, 7.0, 0.01, 0.05 ** 0.5, 1_500_000, 150)
    if name == "galaxy":
        return _bench("galaxy", 2.0, 20.0, 9.0, 0.001, 1.0, 1_500_000, 150)
    raise InvalidInputError(f"no benchmark configuration named {name!r}; "
                            f"choose from {sorted(BUILTIN_SIZES)}")


# ---------------------------------------------------------------------------- config files

def parse_config(text: str, source: str = "<config>") -> dict[str, str]:
    """``key = value`` lines; ``#`` comments; keys are flag names without dashes."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        key, sep, val = body.partition("=")
        if not sep or not key.strip():
            raise InvalidInputError(f"{source}: line {lineno}: expected 'key = value'")
        out[key.strip().replace("-", "_")] = val.strip()
    return out


def read_config(path) -> dict[str, str]:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"config file not found: {p}")
    return parse_config(p.read_text(), str(p))
