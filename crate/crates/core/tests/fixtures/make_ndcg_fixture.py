"""Regenerates ndcg_qrels.txt / ndcg_run.txt and prints trec_eval reference values.

The reference uses pytrec_eval (trec_eval bindings). trec_eval's ndcg_cut uses
the relevance level itself as gain, so the exponential-gain reference is taken
on a copy of the qrels with every level r replaced by 2**r - 1.
"""
import random

import pytrec_eval

rng = random.Random(20250101)
qrels, run = {}, {}
for q in range(20):
    qid = f"q{100 + q}"
    docs = [f"D{q}_{i}" for i in range(40)]
    judged = rng.sample(docs, 15)
    qrels[qid] = {d: rng.choice([0, 0, 1, 1, 2, 3]) for d in judged}
    if not any(qrels[qid].values()):
        qrels[qid][judged[0]] = 1
    ranked = rng.sample(docs, 30)
    scores = sorted(rng.sample(range(1000, 100000), 30), reverse=True)
    run[qid] = {d: s / 1000.0 for d, s in zip(ranked, scores)}

with open("ndcg_qrels.txt", "w") as f:
    for qid, judged in qrels.items():
        for d, r in judged.items():
            f.write(f"{qid} 0 {d} {r}\n")
with open("ndcg_run.txt", "w") as f:
    for qid, docs in run.items():
        ordered = sorted(docs.items(), key=lambda kv: -kv[1])
        for rank, (d, s) in enumerate(ordered, 1):
            f.write(f"{qid} Q0 {d} {rank} {s:.4f} fixture\n")

exp_qrels = {q: {d: 2**r - 1 for d, r in j.items()} for q, j in qrels.items()}
for name, rel in [("exponential", exp_qrels), ("linear", qrels)]:
    ev = pytrec_eval.RelevanceEvaluator(rel, {"ndcg_cut.10"})
    res = ev.evaluate(run)
    mean = sum(v["ndcg_cut_10"] for v in res.values()) / len(res)
    print(name, f"{mean:.10f}", len(res))
    if name == "exponential":
        for q in sorted(res):
            print(" ", q, f"{res[q]['ndcg_cut_10']:.10f}")
