"""Independent oracle for mini.jsonl scored by a unigram model over corpus.txt.

Writes expected.json. Run from this directory: python3 oracle.py
"""
import json
import math
from collections import Counter

ALPHA = 1.0

tokens = open("corpus.txt").read().split()
counts = Counter(tokens)
n = len(tokens)
v = len(counts) + 1


def lp(tok):
    return math.log((counts.get(tok, 0) + ALPHA) / (n + ALPHA * v))


records = [json.loads(l) for l in open("mini.jsonl")]
pool = sorted({r["gold_entity"] for r in records})
scores = {e: sum(lp(t) for t in e.split()) / len(e.split()) for e in pool}
order = sorted(pool, key=lambda e: (-scores[e], e))
ranks = [order.index(r["gold_entity"]) + 1 for r in records]


def acc(k):
    return sum(1 for r in ranks if r <= k) / len(ranks)


ppl = []
for r in records:
    text = r["masked_text"].replace("[MASK]", r["gold_entity"], 1)
    lls = [lp(t) for t in text.split()]
    ppl.append(math.exp(-sum(lls) / len(lls)))

out = {
    "model_id": "ref-unigram",
    "vocab_size": v,
    "corpus_tokens": n,
    "ranking": order,
    "mean_logprob": {e: scores[e] for e in order},
    "gold_ranks": {r["id"]: k for r, k in zip(records, ranks)},
    "acc1": acc(1),
    "acc5": acc(5),
    "acc10": acc(10),
    "per_text_ppl": {r["id"]: p for r, p in zip(records, ppl)},
    "mean_ppl": sum(ppl) / len(ppl),
}
json.dump(out, open("expected.json", "w"), indent=2)
print(json.dumps({k: out[k] for k in ("ranking", "acc1", "acc5", "acc10", "mean_ppl")}, indent=1))
