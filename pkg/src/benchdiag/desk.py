"""Offline stand-ins for a desk-scale pipeline run.

``make_desk_corpus`` writes a synthetic multi-page corpus with running headers,
page footers and a few non-final files. ``extractive_generator`` answers
generation prompts by lifting sentences out of the prompt's text slot, so the
whole pipeline runs without a live model. ``run_desk`` drives every CLI stage.
"""

from __future__ import annotations

import hashlib
import json
import logging
import shutil
from pathlib import Path

import numpy as np

from .corpus import split_sentences
from .qagen import BENCHMARK_TYPES, prompt_context

logger = logging.getLogger(__name__)

AGENCIES = ("Bureau of Land Stewardship", "Federal Highway Office", "River Basin Authority",
            "Forest Resource Service", "Energy Siting Commission")

TOPICS = {
    "water": "aquifer groundwater streamflow wetland riparian turbidity sediment watershed floodplain discharge",
    "wildlife": "habitat nesting migratory raptor elk sagebrush corridor foraging breeding species",
    "air": "emissions particulate ozone dust visibility exhaust pollutant monitoring inversion haze",
    "transport": "traffic interchange roadway bridge congestion pavement transit freight detour signal",
    "energy": "transmission turbine substation voltage solar array generation conductor tower grid",
    "culture": "archaeological heritage tribal consultation artifact historic landmark sacred survey site",
    "noise": "decibel vibration blasting construction receptor nighttime equipment barrier acoustic levels",
    "soils": "erosion topsoil grading compaction revegetation slope reclamation drainage stockpile runoff",
}
COMMON = ("the project area alternative would will may during construction operation impacts "
          "proposed action analysis measures potential effects existing conditions mitigation").split()
PLACES = ("Riverbend", "Cedar Gap", "Mesa Verde", "Pine Hollow", "Eagle Flats", "Stone Creek",
          "Willow Bend", "Red Butte", "Cold Spring", "Granite Pass")
FACILITIES = ("Transmission Line", "Highway Expansion", "Reservoir", "Solar Facility", "Mine Expansion",
              "Pipeline", "Land Exchange", "Wind Project")


def _sentence(rng: np.random.Generator, topic_words: list[str]) -> str:
    n = int(rng.integers(9, 19))
    words = [topic_words[i] if rng.random() < 0.55 else COMMON[j]
             for i, j in zip(rng.integers(len(topic_words), size=n), rng.integers(len(COMMON), size=n))]
    if rng.random() < 0.3:
        words.insert(int(rng.integers(1, n)), f"{int(rng.integers(2, 900))}")
    words[0] = words[0].capitalize()
    return " ".join(words) + "."


def make_desk_corpus(root: str | Path, n_docs: int = 100, seed: int = 0, n_excluded: int = 5) -> list[Path]:
    """Write ``n_docs`` final documents plus ``n_excluded`` appendix files."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    topic_names = sorted(TOPICS)
    written = []
    for d in range(n_docs + n_excluded):
        agency = AGENCIES[d % len(AGENCIES)]
        project = f"{PLACES[int(rng.integers(len(PLACES)))]} {FACILITIES[int(rng.integers(len(FACILITIES)))]} {d:03d}"
        main, second = rng.choice(len(topic_names), size=2, replace=False)
        vocab = TOPICS[topic_names[main]].split() * 3 + TOPICS[topic_names[second]].split()
        pages = []
        n_pages = int(rng.integers(3, 7))
        for p in range(1, n_pages + 1):
            body = []
            for _ in range(int(rng.integers(2, 4))):
                body.append(" ".join(_sentence(rng, vocab) for _ in range(int(rng.integers(2, 5)))))
            header = f"{agency} | {project} Final Environmental Impact Statement"
            footer = f"Chapter {1 + p // 3} | Page {p}"
            pages.append("\n".join([header, "", "\n\n".join(body), "", footer]))
        name = f"{project} Final EIS.txt" if d < n_docs else f"{project} Final EIS Appendix B.txt"
        path = root / agency.replace(" ", "_") / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\f".join(pages) + "\n", encoding="utf-8")
        written.append(path)
    return written


# --------------------------------------------------------------------------- mock generation


def _stable_int(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=4).digest(), "little")


def _question_from(sentence: str) -> str:
    words = [w.strip(".,;:").lower() for w in sentence.split()]
    content = [w for w in words if w.isalpha() and w not in COMMON and len(w) > 3]
    picked = list(dict.fromkeys(content))[:4] or words[:4]
    return f"What does the statement report about {' '.join(picked)}?"


def extractive_generator(prompt: str, per_text: int = 2) -> str:
    """Mock service reply: up to ``per_text`` question/answer pairs, each
    answer a sentence from the prompt's text slot. Benchmark prompts get a
    question type derived from the sentence."""
    context = prompt_context(prompt)
    benchmark = context is None
    if benchmark:
        _, _, context = prompt.partition("Report:\n")
    sentences = [s for s in split_sentences(context or "") if len(s.split()) >= 6]
    if not sentences:
        return json.dumps({"queries": [], "answers": []})
    step = max(1, len(sentences) // per_text)
    chosen = sentences[::step][:per_text]
    if benchmark:
        items = [{"question": _question_from(s), "context": s,
                  "type": BENCHMARK_TYPES[_stable_int(s) % len(BENCHMARK_TYPES)].value} for s in chosen]
        return json.dumps(items)
    return json.dumps({"queries": [_question_from(s) for s in chosen], "answers": chosen})


# --------------------------------------------------------------------------- full run

GOLDEN_FILES = ("report.txt", "report.csv", "gain_curves.csv")


def run_desk(workdir: str | Path, seed: int = 13, n_docs: int = 100) -> Path:
    """Run every pipeline stage on a fresh synthetic corpus; returns the report directory."""
    from .cli import main

    w = Path(workdir)
    if w.exists():
        shutil.rmtree(w)
    make_desk_corpus(w / "corpus", n_docs=n_docs, seed=seed)
    provider = f"hash:{seed}:64"
    s = str(seed)

    def step(*args: str) -> None:
        code = main([str(a) for a in args])
        if code != 0:
            raise RuntimeError(f"desk stage {args[0]} failed with exit status {code}")

    step("chunk", "--corpus", w / "corpus", "--out", w / "chunks.jsonl")
    step("sample", "--chunks", w / "chunks.jsonl", "--out", w / "train_chunks.jsonl", "--seed", s)
    step("sample", "--chunks", w / "chunks.jsonl", "--out", w / "bench_chunks.jsonl",
         "--seed", str(seed + 1), "--sample-fraction", "0.1")
    step("genqa", "--chunks", w / "train_chunks.jsonl", "--out", w / "train_qa.jsonl", "--generator", "mock-extractive")
    step("genqa", "--chunks", w / "bench_chunks.jsonl", "--out", w / "bench_qa.jsonl",
         "--generator", "mock-extractive", "--mode", "benchmark")
    step("embed", "--chunks", w / "chunks.jsonl", "--out", w / "contexts.emb", "--provider", provider)
    step("embed", "--qa", w / "train_qa.jsonl", "--out", w / "train_queries.emb", "--provider", provider)
    step("embed", "--qa", w / "bench_qa.jsonl", "--out", w / "bench_queries.emb", "--provider", provider)
    step("index", "--contexts", w / "contexts.emb", "--chunks", w / "chunks.jsonl", "--out", w / "index_all.json")
    step("mine", "--index", w / "index_all.json", "--queries", w / "train_queries.emb", "--qa", w / "train_qa.jsonl",
         "--out", w / "triplets.jsonl", "--stats", w / "statistics.json")
    results, profiles = [], []
    for bench, qa, queries in (("desk-train", "train_qa.jsonl", "train_queries.emb"),
                               ("desk-bench", "bench_qa.jsonl", "bench_queries.emb")):
        prof = w / f"profile_{bench}.json"
        step("diagnose", "--embeddings", w / "contexts.emb", "--restrict-to", w / qa, "--name", bench,
             "--seed", s, "--out", prof, "--projection", w / f"projection_{bench}.csv")
        profiles.append(prof)
        for mode in ("cosine", "maxsim"):
            idx = w / f"index_{bench}_{mode}.json"
            step("index", "--contexts", w / "contexts.emb", "--restrict-to", w / qa, "--scoring-mode", mode, "--out", idx)
            rk = w / f"rankings_{bench}_{mode}.jsonl"
            step("rank", "--index", idx, "--queries", w / queries, "--out", rk)
            res = w / f"result_{bench}_{mode}.json"
            step("eval", "--rankings", rk, "--qa", w / qa, "--model", f"hash-{mode}", "--benchmark", bench, "--out", res)
            results.append(res)
    step("report", "--results", *results, "--baseline", "hash-cosine", "--profiles", *profiles, "--out-dir", w / "report")
    return w / "report"
