"""Regenerates the synthetic abstract corpus and its expected build output.

Every sentence is drawn from a category whose pipeline outcome is known by
construction, so `expected.json` and `expected_records.jsonl` come from the
design of the corpus rather than from running the builder.

    python3 generate.py
"""
import json
import math
import random
from collections import Counter
from datetime import date, timedelta
from pathlib import Path

HERE = Path(__file__).parent
CUTOFF = date(2021, 12, 31)
LEXICON = [
    "Penicillin", "Aspirin", "Ibuprofen", "Metformin", "Insulin", "Heparin",
    "Warfarin", "Cisplatin", "Dopamine", "Serotonin", "Caffeine", "Nicotine",
    "ALB", "TP53", "BRCA1",
]

CLEAN = [
    "{e} is used to treat infections in adults.",
    "{e} levels were elevated in patients with chronic disease.",
    "Treatment with {e} reduced inflammation in the cohort.",
    "The effect of {e} on blood pressure was measured daily.",
    "Patients receiving {e} reported fewer adverse events, e.g. nausea and fatigue.",
    "Expression of {e} correlates with tumor growth in mice.",
    "Serum {e} concentration rose after the first dose.",
    "Penicillins and {e} were both effective in the trial.",
]
KEYWORD = [
    "We investigate whether {e} improves survival in elderly patients.",
    "In this study {e} was given orally to all participants.",
    "Results suggest that {e} is safe at moderate doses.",
    "{e} (a common drug) was administered twice daily.",
    "However, {e} failed to reach significance in trials.",
    "Data presented here show that {e} lowers glucose levels.",
    "Our group performed an analysis of {e} in three cohorts.",
]
MULTI2 = [
    "{e} and {f} were compared in a randomized trial.",
    "Combining {e} with {f} increased bleeding risk.",
]
MULTI_SAME = ["{e} was given first and {e} was given again later."]
MULTI_FIXED = ["ALBUMIN binds ALB in plasma samples from donors."]
NONE = [
    "The cohort included adults from three hospitals.",
    "Samples were collected at baseline and at follow-up.",
    "Penicillins are widely prescribed for children.",
    "Mean age was 54.2 years across all sites.",
]
DEGENERATE = ["{e} was effective.", "{e} improved outcomes markedly.", "{e}."]

CATEGORIES = [
    ("clean", 10), ("keyword", 4), ("multi", 3), ("none", 3), ("degenerate", 2),
]


def sentence(rng, category):
    e, f = rng.sample(LEXICON, 2)
    if category == "clean":
        template = rng.choice(CLEAN)
        if template.startswith("Penicillins") and e == "Penicillin":
            # The plural would leave the answer visible after masking.
            e = f
        return template.format(e=e), e
    if category == "keyword":
        return rng.choice(KEYWORD).format(e=e), e
    if category == "multi":
        pick = rng.random()
        if pick < 0.6:
            return rng.choice(MULTI2).format(e=e, f=f), None
        if pick < 0.85:
            return rng.choice(MULTI_SAME).format(e=e), None
        return rng.choice(MULTI_FIXED), None
    if category == "none":
        return rng.choice(NONE), None
    return rng.choice(DEGENERATE).format(e=e), e


def main():
    rng = random.Random(20221)
    names, weights = zip(*CATEGORIES)
    ids = [f"doc{i:03d}" for i in range(1, 51)]
    pre = set(rng.sample(ids, 10))
    docs = []
    for doc_id in ids:
        if doc_id in pre:
            d = CUTOFF - timedelta(days=rng.randrange(0, 400))
        else:
            d = CUTOFF + timedelta(days=rng.randrange(1, 400))
        sents = [(cat, *sentence(rng, cat)) for cat in rng.choices(names, weights, k=rng.randint(3, 6))]
        docs.append({"doc_id": doc_id, "date": d.isoformat(), "sentences": sents})

    # Pin the date edges: one document exactly on the cutoff, one the day after.
    next(d for d in docs if d["doc_id"] in pre)["date"] = CUTOFF.isoformat()
    next(d for d in docs if d["doc_id"] not in pre)["date"] = (CUTOFF + timedelta(days=1)).isoformat()

    shuffled = docs[:]
    rng.shuffle(shuffled)
    corpus = HERE / "abstracts"
    corpus.mkdir(exist_ok=True)
    for name, part in (("part-a.jsonl", shuffled[:25]), ("part-b.jsonl", shuffled[25:])):
        with open(corpus / name, "w") as fh:
            for d in part:
                text = " ".join(s for _, s, _ in d["sentences"])
                fh.write(json.dumps({"doc_id": d["doc_id"], "text": text, "date": d["date"]}) + "\n")
    (HERE / "lexicon.txt").write_text("\n".join(LEXICON) + "\n")

    counts = Counter()
    records = []
    for d in docs:
        if d["doc_id"] in pre:
            counts["excluded_by_date"] += 1
            continue
        for idx, (cat, s, e) in enumerate(d["sentences"]):
            counts["candidate_sentences"] += 1
            key = {"clean": "emitted", "keyword": "keyword_filtered", "multi": "multi_entity",
                   "none": "no_entity", "degenerate": "degenerate"}[cat]
            counts[key] += 1
            if cat == "clean":
                records.append({
                    "id": f"{d['doc_id']}:{idx}",
                    "masked_text": s.replace(e, "[MASK]", 1),
                    "gold_entity": e,
                    "provenance": d["doc_id"],
                })
    occ = Counter(r["gold_entity"] for r in records)
    n = len(occ)
    values = [occ[k] for k in sorted(occ)]
    mean = sum(values) / n
    std = math.sqrt(sum((c - mean) ** 2 for c in values) / n)
    expected = {
        "cutoff": CUTOFF.isoformat(),
        "documents_total": 50,
        "documents_emitted": 40,
        "report": {k: counts[k] for k in ("excluded_by_date", "candidate_sentences", "no_entity",
                                          "multi_entity", "keyword_filtered", "degenerate", "emitted")},
        "record_count": len(records),
        "pool_size": n,
        "entity_stats": {"mean": mean, "std": std, "max": max(occ.values()), "min": min(occ.values())},
    }
    (HERE / "expected.json").write_text(json.dumps(expected, indent=2) + "\n")
    with open(HERE / "expected_records.jsonl", "w") as fh:
        for r in records:
            fh.write(json.dumps(r) + "\n")


if __name__ == "__main__":
    main()
