"""NDCG evaluation, gain curves and improvement reports."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .diagnose import BenchmarkProfile, compare_profiles, format_percent
from .io import DataFormatError, read_json, write_json
from .retrieve import RankedList

DEFAULT_KS = (1, 5, 10, 20, 30, 80)
PERCENT_DECIMALS = 2
NDCG_DECIMALS = 4


def ndcg_at_k(ranked: RankedList, gold_id: str, k: int) -> float:
    """Single binary-relevant item: the ideal DCG is 1, so NDCG is the
    discount at the gold's rank, or 0 past the cutoff."""
    if k < 1:
        raise ValueError("k must be >= 1")
    r = ranked.position(gold_id)
    if r is None:
        raise ValueError(f"{ranked.qid}: gold context {gold_id!r} absent from ranking")
    return 1.0 / math.log2(r + 1) if r <= k else 0.0


@dataclass
class EvalRun:
    model_name: str
    benchmark_name: str
    rankings: list[RankedList]
    gold: dict[str, str]

    def __post_init__(self):
        missing = [r.qid for r in self.rankings if r.qid not in self.gold]
        if missing:
            raise ValueError(f"no gold entry for queries {missing[:3]}")

    @property
    def universe_size(self) -> int:
        return max((len(r.entries) for r in self.rankings), default=0)


def mean_ndcg(run: EvalRun, k: int) -> float:
    if not run.rankings:
        raise ValueError(f"{run.model_name}/{run.benchmark_name}: no queries")
    return sum(ndcg_at_k(r, run.gold[r.qid], k) for r in run.rankings) / len(run.rankings)


def gain_curve(run: EvalRun, ks: Sequence[int] = DEFAULT_KS) -> list[tuple[int, float]]:
    ks = list(ks)
    if any(b <= a for a, b in zip(ks, ks[1:])):
        raise ValueError("ks must be strictly increasing")
    return [(k, mean_ndcg(run, k)) for k in ks]


def percent_improvement(model_ndcg: float, baseline_ndcg: float) -> float | None:
    """Relative gain in percent; None (undefined) for a zero baseline."""
    if baseline_ndcg == 0:
        return None
    return 100.0 * (model_ndcg - baseline_ndcg) / baseline_ndcg


def improvement_ratio(gain_a: float | None, gain_b: float | None) -> float | None:
    if gain_a is None or gain_b is None or gain_b == 0:
        return None
    return gain_a / gain_b


@dataclass
class RunResult:
    """Evaluated numbers for one (model, benchmark) pair."""

    model: str
    benchmark: str
    n_queries: int
    universe_size: int
    cutoff: int
    ndcg: float
    curve: list[tuple[int, float]] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "model": self.model,
            "benchmark": self.benchmark,
            "n_queries": self.n_queries,
            "universe_size": self.universe_size,
            "cutoff": self.cutoff,
            "ndcg": self.ndcg,
            "curve": [[k, v] for k, v in self.curve],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RunResult":
        try:
            return cls(
                obj["model"], obj["benchmark"], int(obj["n_queries"]), int(obj["universe_size"]),
                int(obj["cutoff"]), float(obj["ndcg"]), [(int(k), float(v)) for k, v in obj.get("curve", [])],
            )
        except KeyError as exc:
            raise DataFormatError(f"evaluation result missing field {exc}") from None


def evaluate(run: EvalRun, cutoff: int | None = None, ks: Sequence[int] = DEFAULT_KS) -> RunResult:
    """Mean NDCG at ``cutoff`` (default: the ranking universe size) plus the gain curve."""
    n = run.universe_size
    cutoff = n if cutoff is None else cutoff
    return RunResult(run.model_name, run.benchmark_name, len(run.rankings), n, cutoff,
                     mean_ndcg(run, cutoff), gain_curve(run, ks))


def save_result(path: str | Path, result: RunResult) -> None:
    write_json(path, result.to_json())


def load_result(path: str | Path) -> RunResult:
    return RunResult.from_json(read_json(path))


def _r(x: float | None, d: int) -> float | None:
    return None if x is None else round(x, d)


@dataclass
class EvalReport:
    baseline: str
    models: list[str]
    benchmarks: list[str]
    results: dict[tuple[str, str], RunResult]
    improvements: dict[tuple[str, str], float | None]
    profile_diffs: list | None = None
    profile_names: tuple[str, str] | None = None

    def ndcg(self, model: str, benchmark: str) -> float:
        return self.results[(model, benchmark)].ndcg

    def max_improvement(self, benchmark: str) -> tuple[str, float | None]:
        """Best non-baseline model on ``benchmark`` by percent gain."""
        best, best_gain = "", None
        for m in self.models:
            g = self.improvements.get((m, benchmark))
            if m == self.baseline or g is None:
                continue
            if best_gain is None or g > best_gain:
                best, best_gain = m, g
        return best, best_gain

    def ratio(self, numerator: str, denominator: str) -> float | None:
        """Ratio of the best gains on two benchmarks, computed from the gains
        as displayed (rounded to two decimals)."""
        _, a = self.max_improvement(numerator)
        _, b = self.max_improvement(denominator)
        return improvement_ratio(_r(a, PERCENT_DECIMALS), _r(b, PERCENT_DECIMALS))

    # ------------------------------------------------------------- outputs

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "benchmark", "n_queries", "cutoff", "ndcg", "improvement_pct"])
        for m in self.models:
            for b in self.benchmarks:
                res = self.results.get((m, b))
                if res is None:
                    continue
                imp = self.improvements.get((m, b))
                w.writerow([m, b, res.n_queries, res.cutoff, f"{res.ndcg:.{NDCG_DECIMALS}f}",
                            "" if imp is None else f"{imp:.{PERCENT_DECIMALS}f}"])
        return buf.getvalue()

    def curves_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "benchmark", "k", "mean_ndcg"])
        for m in self.models:
            for b in self.benchmarks:
                res = self.results.get((m, b))
                for k, v in (res.curve if res else []):
                    w.writerow([m, b, k, f"{v:.6f}"])
        return buf.getvalue()

    def improvement_curves_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "benchmark", "k", "improvement_pct"])
        for b in self.benchmarks:
            base = self.results.get((self.baseline, b))
            if base is None:
                continue
            base_curve = dict(base.curve)
            for m in self.models:
                res = self.results.get((m, b))
                if m == self.baseline or res is None:
                    continue
                for k, v in res.curve:
                    imp = percent_improvement(v, base_curve.get(k, 0.0))
                    w.writerow([m, b, k, "" if imp is None else f"{imp:.{PERCENT_DECIMALS}f}"])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = []
        head = ["Model"]
        for b in self.benchmarks:
            head += [f"{b} NDCG", f"{b} Impr."]
        rows = [head]
        for m in self.models:
            row = [m]
            for b in self.benchmarks:
                res = self.results.get((m, b))
                row.append("-" if res is None else f"{res.ndcg:.{NDCG_DECIMALS}f}")
                if m == self.baseline:
                    row.append("-")
                else:
                    row.append(format_percent(self.improvements.get((m, b)), PERCENT_DECIMALS) if res else "-")
            rows.append(row)
        widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
        for r in rows:
            lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
        lines.append("")
        for b in self.benchmarks:
            r = self.results.get((self.baseline, b))
            cut = f"NDCG@{r.cutoff}" if r else "NDCG"
            m, g = self.max_improvement(b)
            lines.append(f"{b} ({cut}): max improvement {format_percent(_r(g, PERCENT_DECIMALS), PERCENT_DECIMALS)} ({m or 'n/a'})")
        if len(self.benchmarks) >= 2:
            for a, b in _pairs(self.benchmarks):
                ratio = self.ratio(b, a)
                shown = "undefined" if ratio is None else f"{ratio:.1f}"
                lines.append(f"improvement ratio {b} / {a}: {shown}")
        if self.profile_diffs is not None:
            lines.append("")
            na, nb = self.profile_names or ("A", "B")
            prow = [["Metric", na, nb, "Difference"]]
            for d in self.profile_diffs:
                fmt = "{:.0f}" if d.metric == "optimal_k" else "{:.4f}"
                prow.append([d.label, fmt.format(d.a), fmt.format(d.b), d.display(1)])
            pw = [max(len(r[i]) for r in prow) for i in range(4)]
            for r in prow:
                lines.append("  ".join(c.ljust(w) for c, w in zip(r, pw)).rstrip())
        return "\n".join(lines) + "\n"


def _pairs(names: Sequence[str]):
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            yield names[i], names[j]


def build_report(
    runs: Sequence[EvalRun | RunResult],
    baseline_name: str,
    profiles: Mapping[str, BenchmarkProfile] | Sequence[BenchmarkProfile] | None = None,
    ks: Sequence[int] = DEFAULT_KS,
) -> EvalReport:
    """Model x benchmark NDCG matrix with percent gains over ``baseline_name``.

    Accepts raw runs (evaluated at their universe size) or precomputed
    results. With two profiles, the diversity difference table is attached
    (second relative to first).
    """
    results: dict[tuple[str, str], RunResult] = {}
    models: list[str] = []
    benchmarks: list[str] = []
    for run in runs:
        res = evaluate(run, ks=ks) if isinstance(run, EvalRun) else run
        key = (res.model, res.benchmark)
        if key in results:
            raise ValueError(f"duplicate run for {key}")
        results[key] = res
        if res.model not in models:
            models.append(res.model)
        if res.benchmark not in benchmarks:
            benchmarks.append(res.benchmark)
    if baseline_name in models:
        models.remove(baseline_name)
        models.insert(0, baseline_name)
    improvements: dict[tuple[str, str], float | None] = {}
    for b in benchmarks:
        base = results.get((baseline_name, b))
        if base is None:
            raise ValueError(f"baseline {baseline_name!r} has no run on benchmark {b!r}")
        for m in models:
            if (m, b) in results:
                improvements[(m, b)] = percent_improvement(results[(m, b)].ndcg, base.ndcg)
    report = EvalReport(baseline_name, models, benchmarks, results, improvements)
    if profiles:
        items = list(profiles.items()) if isinstance(profiles, Mapping) else [(p.name, p) for p in profiles]
        if len(items) >= 2:
            (na, pa), (nb, pb) = items[0], items[1]
            report.profile_diffs = compare_profiles(pa, pb)
            report.profile_names = (na, nb)
    return report
