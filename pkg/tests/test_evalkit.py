from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from benchdiag import evalkit as ev
from benchdiag.diagnose import BenchmarkProfile
from benchdiag.retrieve import RankedList
from oracles import generic_ndcg

PUBLISHED_NDCG = {
    "ColBERTv2": (0.9749, 0.8902),
    "FT10": (0.9773, 0.8973),
    "FT100": (0.9808, 0.8994),
    "FT700": (0.9748, 0.9100),
}


def ranking(ids, qid="q"):
    return RankedList(qid, tuple((cid, float(len(ids) - i)) for i, cid in enumerate(ids)))


def published_results():
    out = []
    for model, (sme, llm) in PUBLISHED_NDCG.items():
        out.append(ev.RunResult(model, "NQ-SME-LLM", 89, 89, 89, sme))
        out.append(ev.RunResult(model, "NQ-LLM", 507, 507, 507, llm))
    return out


def test_ndcg_closed_forms():
    r = ranking(["a", "b", "c", "d", "e", "f", "g"])
    assert ev.ndcg_at_k(r, "a", 1) == 1.0
    assert ev.ndcg_at_k(r, "c", 5) == pytest.approx(0.5)
    assert ev.ndcg_at_k(r, "c", 5) == pytest.approx(generic_ndcg(r.ids, {"c": 1}, 5), abs=1e-12)
    assert ev.ndcg_at_k(r, "f", 5) == 0.0


def test_ndcg_errors():
    r = ranking(["a", "b"])
    with pytest.raises(ValueError):
        ev.ndcg_at_k(r, "zz", 5)
    with pytest.raises(ValueError):
        ev.ndcg_at_k(r, "a", 0)


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 100), st.integers(0, 10_000), st.integers(1, 120))
def test_ndcg_matches_generic_oracle(n, seed, k):
    rng = np.random.default_rng(seed)
    ids = [f"c{i}" for i in rng.permutation(n)]
    gold = ids[int(rng.integers(n))]
    got = ev.ndcg_at_k(ranking(ids), gold, k)
    assert abs(got - generic_ndcg(ids, {gold: 1}, k)) <= 1e-12
    assert 0.0 <= got <= 1.0


def test_mean_ndcg_and_errors():
    run = ev.EvalRun("m", "b", [ranking(["a", "b", "c"], "q1"), ranking(["b", "c", "a"], "q2")],
                     {"q1": "a", "q2": "a"})
    assert ev.mean_ndcg(run, 1) == pytest.approx(0.5)
    assert ev.mean_ndcg(run, 3) == pytest.approx((1.0 + 0.5) / 2)
    with pytest.raises(ValueError):
        ev.mean_ndcg(ev.EvalRun("m", "b", [], {}), 3)
    with pytest.raises(ValueError):
        ev.EvalRun("m", "b", [ranking(["a"], "q9")], {})


def test_full_cutoff_counts_every_gold():
    rng = np.random.default_rng(1)
    rankings, gold = [], {}
    for i in range(20):
        ids = [f"c{j}" for j in rng.permutation(30)]
        rankings.append(ranking(ids, f"q{i}"))
        gold[f"q{i}"] = ids[int(rng.integers(30))]
    run = ev.EvalRun("m", "b", rankings, gold)
    res = ev.evaluate(run)
    assert res.cutoff == 30
    assert all(ev.ndcg_at_k(r, gold[r.qid], 30) > 0 for r in rankings)


def test_gain_curve_closed_form():
    ids = [f"c{i}" for i in range(20)]
    run = ev.EvalRun("m", "b", [ranking(ids, "q")], {"q": "c6"})
    curve = ev.gain_curve(run)
    assert [k for k, _ in curve] == [1, 5, 10, 20, 30, 80]
    assert curve[0][1] == 0.0 and curve[1][1] == 0.0
    assert all(v == pytest.approx(1 / 3) for _, v in curve[2:])
    one = ev.EvalRun("m", "b", [ranking(["a"], "q")], {"q": "a"})
    assert ev.gain_curve(one, [1]) == [(1, 1.0)]
    with pytest.raises(ValueError):
        ev.gain_curve(one, [5, 5])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_gain_curve_monotone(seed):
    rng = np.random.default_rng(seed)
    rankings, gold = [], {}
    for i in range(int(rng.integers(1, 8))):
        ids = [f"c{j}" for j in rng.permutation(90)]
        rankings.append(ranking(ids, f"q{i}"))
        gold[f"q{i}"] = ids[int(rng.integers(90))]
    vals = [v for _, v in ev.gain_curve(ev.EvalRun("m", "b", rankings, gold))]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_percent_improvement_values():
    assert f"{ev.percent_improvement(0.9100, 0.8902):.2f}" == "2.22"
    assert f"{ev.percent_improvement(0.9808, 0.9749):.2f}" == "0.61"
    assert ev.percent_improvement(0.5, 0.5) == 0.0
    assert ev.percent_improvement(0.5, 0.0) is None


def test_improvement_ratio_values():
    assert f"{ev.improvement_ratio(2.22, 0.61):.1f}" == "3.6"
    assert ev.improvement_ratio(1.5, 1.5) == 1.0
    assert ev.improvement_ratio(4.44, 1.11) == pytest.approx(4.0)
    assert ev.improvement_ratio(1.0, 0.0) is None


def test_report_on_published_inputs():
    rep = ev.build_report(published_results(), "ColBERTv2")
    sme = [f"{rep.improvements[(m, 'NQ-SME-LLM')]:.2f}" for m in ("FT10", "FT100", "FT700")]
    llm = [f"{rep.improvements[(m, 'NQ-LLM')]:.2f}" for m in ("FT10", "FT100", "FT700")]
    assert sme == ["0.25", "0.61", "-0.01"]
    assert llm == ["0.80", "1.03", "2.22"]
    assert rep.max_improvement("NQ-SME-LLM")[0] == "FT100"
    assert rep.max_improvement("NQ-LLM")[0] == "FT700"
    assert f"{rep.ratio('NQ-LLM', 'NQ-SME-LLM'):.1f}" == "3.6"
    text = rep.to_text()
    for model, (sme_v, llm_v) in PUBLISHED_NDCG.items():
        assert f"{sme_v:.4f}" in text and f"{llm_v:.4f}" in text
    assert "improvement ratio NQ-LLM / NQ-SME-LLM: 3.6" in text
    csv_rows = rep.to_csv().splitlines()
    assert csv_rows[0] == "model,benchmark,n_queries,cutoff,ndcg,improvement_pct"
    assert "FT700,NQ-LLM,507,507,0.9100,2.22" in csv_rows


def test_report_single_baseline_run():
    run = ev.EvalRun("base", "b", [ranking(["a", "b"], "q")], {"q": "b"})
    rep = ev.build_report([run], "base")
    assert rep.improvements[("base", "b")] == 0.0


def test_report_missing_baseline():
    run = ev.EvalRun("m", "b", [ranking(["a"], "q")], {"q": "a"})
    with pytest.raises(ValueError):
        ev.build_report([run], "base")


def test_report_with_profiles_and_curves():
    pa = BenchmarkProfile(89, 0.2321, 20, 0.1030, 0.9577, name="NQ-SME-LLM")
    pb = BenchmarkProfile(507, 0.2579, 19, 0.0791, 0.9765, name="NQ-LLM")
    rep = ev.build_report(published_results(), "ColBERTv2", profiles=[pa, pb])
    text = rep.to_text()
    for shown in ("+11.1%", "-5.0%", "-23.2%", "+2.0%"):
        assert shown in text
    assert rep.curves_csv().splitlines()[0] == "model,benchmark,k,mean_ndcg"


def test_result_json_roundtrip(tmp_path):
    res = ev.RunResult("m", "b", 3, 10, 10, 0.5, [(1, 0.25), (5, 0.5)])
    ev.save_result(tmp_path / "r.json", res)
    assert ev.load_result(tmp_path / "r.json") == res
