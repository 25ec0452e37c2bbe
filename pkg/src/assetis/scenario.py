"""Scenario execution: dispatch estimators over thresholds and build records."""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .conditional import ConditionalProblem, is_pvalue_conditional, mc_pvalue_conditional, \
    range_pvalues_conditional
from .dlm import dlm_pvalue
from .errors import ConfigurationError
from .fileio import ResultRecord, read_design, read_expression
from .gaussian import is_pvalue_normal, is_pvalue_range, mc_pvalue_normal
from .mc import Estimate, efficiency
from .model import GenotypeModel, StudyDesign

MODES = ("normal-independent", "normal-overlapping", "conditional-independent",
         "conditional-correlated")
ESTIMATORS = ("is", "mc", "dlm")
# naive MC is skipped when 100/p exceeds this many simulations
DEFAULT_MC_CAP = 14_000_000


@dataclass
class Scenario:
    mode: str
    b: list
    design: Optional[str] = None
    expr: Optional[str] = None
    maf: Optional[float] = None
    K: int = 50_000
    K_mc: Optional[int] = None
    mc_cap: int = DEFAULT_MC_CAP
    estimators: tuple = ("is", "dlm")
    seed: int = 0
    threads: Optional[int] = None
    ridge: float = 0.0
    range_mode: bool = False
    half_width: float = 0.75
    out: Optional[str] = None
    # in-memory design, used by presets instead of a design file
    study_design: Optional[StudyDesign] = field(default=None, repr=False)

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigurationError(f"mode: unknown mode {self.mode!r}; choose from {MODES}")
        if not self.b:
            raise ConfigurationError("b: at least one threshold is required")
        b = np.asarray(self.b, dtype=float)
        if np.any(b <= 0) or np.any(np.diff(b) <= 0):
            raise ConfigurationError("b: thresholds must be positive and strictly ascending")
        if int(self.K) < 2:
            raise ConfigurationError("K: must be at least 2")
        if self.K_mc is not None and int(self.K_mc) < 2:
            raise ConfigurationError("K_mc: must be at least 2")
        bad = set(self.estimators) - set(ESTIMATORS)
        if bad or not self.estimators:
            raise ConfigurationError(f"estimators: choose from {ESTIMATORS}, got {self.estimators}")
        if self.mode.startswith("normal"):
            if self.design is None and self.study_design is None:
                raise ConfigurationError("design: normal modes need a study design file")
        else:
            if self.expr is None:
                raise ConfigurationError("expr: conditional modes need an expression file")
            if self.maf is None:
                raise ConfigurationError("maf: conditional modes need an allele frequency")
        if self.ridge < 0:
            raise ConfigurationError("ridge: must be nonnegative")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigurationError("seed: must be a 64-bit unsigned integer")

    def echo(self) -> dict:
        d = asdict(self)
        d.pop("study_design")
        d["estimators"] = list(self.estimators)
        if self.study_design is not None:
            d["design_n"] = [float(x) for x in self.study_design.n]
        return d


def _is_fields(e: Estimate) -> dict:
    out = dict(p_is=e.p_hat, se_is=e.se, K_is=e.K, hits_is=e.hit_count,
               upper_is=e.upper_bound if e.zero_hits else None,
               K_is_needed=None, K_mc_needed=None, efficiency=None)
    if e.p_hat > 0 and e.var_delta > 0:
        r = efficiency(e)
        out.update(K_is_needed=r.K_IS, K_mc_needed=r.K_MC, efficiency=r.efficiency)
    return out


def run_scenario(config: Scenario, write: bool = True) -> ResultRecord:
    """Run every requested estimator at every threshold.

    Output files are written only after all estimators have succeeded.
    """
    config.validate()
    t0 = time.perf_counter()
    b_list = [float(x) for x in config.b]
    rows = [dict(b=b, warnings="") for b in b_list]
    meta: dict = {"version": __version__, "seed": int(config.seed), "provenance": {}}
    est = set(config.estimators)
    notes: list[list[str]] = [[] for _ in b_list]

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if config.mode.startswith("normal"):
            design = config.study_design or read_design(config.design)
            if config.mode == "normal-overlapping" and design.sigma is None:
                raise ConfigurationError("design: normal-overlapping mode needs sigma_file")
            if config.mode == "normal-independent" and design.sigma is not None:
                raise ConfigurationError("design: normal-independent mode forbids sigma_file")
            dlm_source = design
            is_src = "assetis.gaussian"

            def run_is():
                if config.range_mode:
                    return is_pvalue_range(design, b_list, config.K, config.seed, config.threads,
                                           config.half_width)
                return [is_pvalue_normal(design, b, config.K, config.seed, config.threads)
                        for b in b_list]

            def run_mc(b, K):
                return mc_pvalue_normal(design, b, K, config.seed, config.threads)
        else:
            Y = read_expression(config.expr)
            geno = GenotypeModel(config.maf)
            correlated = config.mode == "conditional-correlated"
            prob = ConditionalProblem(Y, geno, correlated, config.ridge)
            dlm_source = Y
            is_src = "assetis.conditional"
            meta["maf"] = geno.maf
            meta["ridge"] = config.ridge
            meta["admissible_pairs"] = {}

            def run_is():
                for b in b_list:
                    meta["admissible_pairs"][repr(b)] = int(prob.admissible_pairs(b)[0].size)
                if config.range_mode:
                    return range_pvalues_conditional(prob, None, b_list, config.K, config.seed,
                                                     threads=config.threads,
                                                     half_width=config.half_width)
                return [is_pvalue_conditional(prob, None, b, config.K, config.seed,
                                              threads=config.threads) for b in b_list]

            def run_mc(b, K):
                return mc_pvalue_conditional(prob, None, b, K, config.seed, threads=config.threads)

        if "is" in est:
            meta["provenance"]["p_is"] = is_src
            for row, e in zip(rows, run_is()):
                row.update(_is_fields(e))
        if "dlm" in est:
            meta["provenance"]["p_dlm"] = "assetis.dlm"
            for row in rows:
                row["p_dlm"] = dlm_pvalue(dlm_source, row["b"], ridge=config.ridge)
        if "mc" in est:
            meta["provenance"]["p_mc"] = "assetis.gaussian" if is_src.endswith("gaussian") \
                else "assetis.conditional"
            for i, row in enumerate(rows):
                K = config.K_mc
                if K is None:
                    ref = row.get("p_is") or row.get("p_dlm")
                    if not ref:
                        notes[i].append("mc-skipped:no-reference-p")
                        continue
                    K = max(2, math.ceil(100.0 / ref))
                    if K > config.mc_cap:
                        notes[i].append("mc-skipped:K-exceeds-cap")
                        continue
                e = run_mc(row["b"], K)
                row.update(p_mc=e.p_hat, se_mc=e.se, K_mc=e.K, hits_mc=e.hit_count,
                           upper_mc=e.upper_bound if e.zero_hits else None)
                if e.zero_hits:
                    notes[i].append("mc-zero-hits")
            for row in rows:
                row.setdefault("p_mc", None)

    for row, n in zip(rows, notes):
        if row.get("hits_is") == 0:
            n.insert(0, "is-zero-hits")
        row["warnings"] = ";".join(n)
        for k in ("p_is", "se_is", "K_is", "hits_is", "p_dlm", "p_mc", "se_mc", "K_mc", "hits_mc",
                  "K_is_needed", "K_mc_needed", "efficiency", "upper_is", "upper_mc"):
            row.setdefault(k, None)
    meta["warnings"] = sorted({str(w.message) for w in caught})
    meta["wall_time_s"] = time.perf_counter() - t0
    if not config.mode.startswith("normal"):
        meta["mixture_convention"] = "admissible (subset, sign) pairs exclude unattainable tilts"
    record = ResultRecord(config.echo(), rows, meta)
    if write and config.out:
        Path(config.out).parent.mkdir(parents=True, exist_ok=True)
        record.write(config.out)
    return record
