"""Accuracy experiments: AARE of each sketch with and without privacy noise.

Every trial draws a fresh hash key, a fresh block of distinct elements and
fresh noise from its own child of ``SeedSequence(seed)``, so results do not
depend on trial order or on how trials are spread over workers.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from fractions import Fraction
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence

import numpy as np

from .dpnoise import (Sensitivity, Statistic, calibrate_sigma, central_gaussian_sigma,
                      discrete_gaussian_variance, sample_discrete_gaussian_exact)
from .errors import ConfigurationError
from .hashing import HashKey
from .sketch import (FmSketch, FmsSketch, HllSketch, _fms_probs, default_w, fm_estimate,
                     fms_estimate, hll_estimate, loglog_estimate, loglog_from_zsharp)

FM_HASH_BUDGET = 10_000_000  # above n*m hashes per trial, "auto" FM trials use the model


class Kind(str, enum.Enum):
    FMS = "fms"
    FM = "fm"
    HLL = "hll"
    LOGLOG = "loglog"


class Privacy(str, enum.Enum):
    NONE = "none"
    CENTRAL = "central"
    DISTRIBUTED = "distributed"


@dataclass(frozen=True)
class ExperimentSpec:
    kind: Kind = Kind.FMS
    n: int = 1_000_000
    m: int = 4096
    w: Optional[int] = None
    privacy: Privacy = Privacy.NONE
    eps: float = 0.1
    delta: float = 1e-12
    d: int = 20
    trials: int = 100
    seed: int = 0
    fm_source: str = "auto"  # "hash", "model" or "auto"

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "privacy", Privacy(self.privacy))
        if self.trials < 1:
            raise ConfigurationError("trials must be >= 1")
        if self.n < 1:
            raise ConfigurationError("n must be >= 1")
        if self.m < 1 or self.m & (self.m - 1):
            raise ConfigurationError(f"m must be a power of two, got {self.m}")
        if self.fm_source not in ("hash", "model", "auto"):
            raise ConfigurationError("fm_source must be hash, model or auto")
        if self.w is None:
            object.__setattr__(self, "w", default_w(self.n, self.m,
                                                    "fm" if self.kind is Kind.FM else "fms"))

    @property
    def statistic(self) -> Statistic:
        return {Kind.FMS: Statistic.FMS_Z, Kind.FM: Statistic.FM_ZSTAR}.get(
            self.kind, Statistic.HLL_ZSHARP)

    @property
    def sensitivity(self) -> float:
        return Sensitivity.of(self.statistic, self.m, self.w).value

    def noise_scale(self) -> float:
        """Standard deviation of the total noise added to the released statistic."""
        if self.privacy is Privacy.NONE:
            return 0.0
        if self.privacy is Privacy.CENTRAL:
            return central_gaussian_sigma(self.sensitivity, self.eps, self.delta)
        sigma = calibrate_sigma(self.eps, self.delta, self.d).sigma
        return self.sensitivity * math.sqrt(self.d * discrete_gaussian_variance(sigma))

    def use_fm_model(self) -> bool:
        if self.fm_source == "auto":
            return self.n * self.m > FM_HASH_BUDGET
        return self.fm_source == "model"


@dataclass
class AareResult:
    spec: ExperimentSpec
    estimates: np.ndarray
    sigma_noise: float
    theory: Optional["TheoryError"] = None

    @property
    def trials(self) -> int:
        return len(self.estimates)

    @property
    def rel_errors(self) -> np.ndarray:
        return self.estimates / self.spec.n - 1.0

    @property
    def aare(self) -> float:
        return float(np.mean(np.abs(self.rel_errors)))

    @property
    def stddev(self) -> float:
        """Sample standard deviation of n_hat / n."""
        if self.trials < 2:
            return 0.0
        return float(np.std(self.estimates / self.spec.n, ddof=1))

    @property
    def bias(self) -> float:
        return float(np.mean(self.rel_errors))

    def row(self) -> dict:
        s = self.spec
        th = self.theory
        return {
            "kind": s.kind.value, "n": s.n, "m": s.m, "w": s.w, "privacy": s.privacy.value,
            "eps": s.eps, "delta": s.delta, "d": s.d, "trials": s.trials, "seed": s.seed,
            "sigma_noise": _fmt(self.sigma_noise), "aare": _fmt(self.aare),
            "stddev": _fmt(self.stddev), "bias": _fmt(self.bias),
            "theory_plain": _fmt(th.stderr_plain) if th else "",
            "theory_noisy": _fmt(th.stderr_noisy) if th else "",
        }


CSV_COLUMNS = ["kind", "n", "m", "w", "privacy", "eps", "delta", "d", "trials", "seed",
               "sigma_noise", "aare", "stddev", "bias", "theory_plain", "theory_noisy"]


def _fmt(x: float) -> str:
    return f"{x:.6g}"


# ---------------------------------------------------------------- theory

@dataclass(frozen=True)
class TheoryError:
    mu_pois: float
    sigma2_pois: float
    stderr_plain: float
    stderr_noisy: float
    approx_plain: float
    approx_noisy: float


def theory_error(n: float, m: int, w: int, sigma_noise: float = 0.0) -> TheoryError:
    """Poisson-model moments of the FMS zero fraction and relative standard errors.

    ``stderr_plain`` and ``stderr_noisy`` apply the delta method to the exact
    sums over bit positions; ``approx_plain`` is ln 2 / sqrt(m (1 - e^{-n/m}))
    and ``approx_noisy`` the closed form 0.69/sqrt(m) * sqrt(1 + s^2/(m w^2)).
    """
    if n < 0:
        raise ConfigurationError("n must be >= 0")
    p = _fms_probs(m, w)
    e1 = np.exp(-n * p)
    mu = float(e1.mean())
    s2 = float((e1 - np.exp(-2 * n * p)).sum() / w ** 2)
    slope = float((p * e1).sum() / w)  # |f'(n)|
    if n == 0 or slope == 0:
        inf = math.inf
        return TheoryError(mu, s2, inf, inf, inf, inf)
    extra = sigma_noise ** 2 / (m * w * w)
    plain = math.sqrt(s2 / m) / slope / n
    noisy = math.sqrt((s2 + extra) / m) / slope / n
    approx_plain = math.log(2) / math.sqrt(m * -math.expm1(-n / m))
    approx_noisy = 0.69 / math.sqrt(m) * math.sqrt(1 + extra)
    return TheoryError(mu, s2, plain, noisy, approx_plain, approx_noisy)


# ---------------------------------------------------------------- data

def gen_union_partition(n: int, d: int, overlap: float = 0.0, seed=None) -> List[np.ndarray]:
    """Split n distinct elements among d holders.

    Every element gets one random owner; a random floor(overlap * n) of them
    (when d >= 2) are instead held by a random subset of 2..d holders.
    """
    if not 0.0 <= overlap <= 1.0:
        raise ConfigurationError("overlap must be in [0, 1]")
    if d < 1 or n < 0:
        raise ConfigurationError("need d >= 1 and n >= 0")
    rng = np.random.default_rng(seed)
    start = int(rng.integers(0, 1 << 62))
    elems = (np.arange(n, dtype=np.uint64) + np.uint64(start))
    owner = rng.integers(0, d, size=n)
    member = np.zeros((d, n), dtype=bool)
    member[owner, np.arange(n)] = True
    k = int(math.floor(overlap * n)) if d >= 2 else 0
    if k:
        shared = rng.choice(n, size=k, replace=False)
        sizes = rng.integers(2, d + 1, size=k)
        for idx, size in zip(shared, sizes):
            member[rng.choice(d, size=size, replace=False), idx] = True
    return [elems[member[j]] for j in range(d)]


# ---------------------------------------------------------------- trials

def _noise(spec: ExperimentSpec, rng, central_sigma: float, ddp_sigma: float) -> float:
    if spec.privacy is Privacy.NONE:
        return 0.0
    if spec.privacy is Privacy.CENTRAL:
        return float(rng.normal(0.0, central_sigma))
    var = Fraction(ddp_sigma) ** 2
    total = sum(sample_discrete_gaussian_exact(var, rng) for _ in range(spec.d))
    return spec.sensitivity * total


def _trial(spec: ExperimentSpec, seed_seq, central_sigma: float, ddp_sigma: float) -> float:
    rng = np.random.default_rng(seed_seq)
    key = HashKey.random(rng)
    start = int(rng.integers(0, 1 << 62))
    elems = np.arange(spec.n, dtype=np.uint64) + np.uint64(start)
    m, w = spec.m, spec.w
    if spec.kind is Kind.FMS:
        z = FmsSketch(m, w, key).update(elems).zero_count()
        z = z + _noise(spec, rng, central_sigma, ddp_sigma)
        return fms_estimate(min(max(z, 0.0), m * w), m, w).n_hat
    if spec.kind is Kind.FM:
        if spec.use_fm_model():
            sk = FmSketch.from_model(spec.n, m, w, rng)
        else:
            sk = FmSketch(m, w, key).update(elems)
        zs = sk.zstar() + _noise(spec, rng, central_sigma, ddp_sigma)
        return fm_estimate(min(max(zs, 0.0), m * w), m).n_hat
    sk = HllSketch(m, w, key).update(elems)
    if spec.privacy is Privacy.NONE:
        est = hll_estimate(sk) if spec.kind is Kind.HLL else loglog_estimate(sk)
        return est.n_hat
    zs = sk.zsharp() + _noise(spec, rng, central_sigma, ddp_sigma)
    return loglog_from_zsharp(min(max(zs, 0.0), w - 1), m).n_hat


def _trial_batch(args):
    spec, seqs, cs, ds = args
    return [_trial(spec, s, cs, ds) for s in seqs]


def run_experiment(spec: ExperimentSpec, workers: int = 1) -> AareResult:
    """T independent trials of ``spec``; returns per-trial estimates and AARE."""
    seqs = np.random.SeedSequence(spec.seed).spawn(spec.trials)
    central_sigma = ddp_sigma = 0.0
    if spec.privacy is Privacy.CENTRAL:
        central_sigma = central_gaussian_sigma(spec.sensitivity, spec.eps, spec.delta)
    elif spec.privacy is Privacy.DISTRIBUTED:
        ddp_sigma = calibrate_sigma(spec.eps, spec.delta, spec.d).sigma
    if workers > 1:
        chunks = [seqs[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_trial_batch,
                                  [(spec, c, central_sigma, ddp_sigma) for c in chunks]))
        est = np.empty(spec.trials)
        for i, part in enumerate(parts):
            est[i::workers] = part
    else:
        est = np.array([_trial(spec, s, central_sigma, ddp_sigma) for s in seqs])
    sigma_noise = spec.noise_scale()
    theory = theory_error(spec.n, spec.m, spec.w, sigma_noise) if spec.kind is Kind.FMS else None
    return AareResult(spec, est, sigma_noise, theory)


def write_csv(results: Iterable[AareResult], out=None) -> str:
    """CSV with a fixed column order; returns the text and writes it to ``out`` if given."""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in results:
        writer.writerow(r.row())
    text = buf.getvalue()
    if out is not None:
        out.write(text)
    return text


def grid(fixed: Optional[dict] = None, **axes: Sequence) -> List[ExperimentSpec]:
    """Specs for the Cartesian product of ``axes``; w is derived per spec unless fixed."""
    combos = [dict(fixed or {})]
    for name, values in axes.items():
        combos = [{**c, name: v} for c in combos for v in values]
    return [ExperimentSpec(**c) for c in combos]
