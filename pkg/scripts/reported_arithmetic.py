"""Recompute the published percent differences and improvement ratio from the
published metric values, using the package's own comparison and report code."""

from __future__ import annotations

from benchdiag.diagnose import BenchmarkProfile, compare_profiles
from benchdiag.evalkit import RunResult, build_report

PROFILES = {
    "NQ-SME-LLM": BenchmarkProfile(89, 0.2321, 20, 0.1030, 0.9577, name="NQ-SME-LLM"),
    "NQ-LLM": BenchmarkProfile(507, 0.2579, 19, 0.0791, 0.9765, name="NQ-LLM"),
}
NDCG = {  # model: (NQ-SME-LLM @89, NQ-LLM @507)
    "ColBERTv2": (0.9749, 0.8902),
    "FT10": (0.9773, 0.8973),
    "FT100": (0.9808, 0.8994),
    "FT700": (0.9748, 0.9100),
}


def main() -> None:
    runs = []
    for model, (sme, llm) in NDCG.items():
        runs.append(RunResult(model, "NQ-SME-LLM", 89, 89, 89, sme))
        runs.append(RunResult(model, "NQ-LLM", 507, 507, 507, llm))
    report = build_report(runs, "ColBERTv2", profiles=PROFILES)
    print(report.to_text())
    for d in compare_profiles(PROFILES["NQ-SME-LLM"], PROFILES["NQ-LLM"]):
        print(f"{d.label}: {d.display(1)}")


if __name__ == "__main__":
    main()
