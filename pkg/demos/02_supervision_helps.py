"""Compare plain NMF with the classifier-aware variant on a task built to fool plain NMF.

A handful of weak coordinates carry the class signal while many heavy
coordinates follow class-independent topics.  With five basis vectors, plain
NMF models the topics and the SVM on its output is close to chance.  Adding
the supervision term keeps the classifier's direction inside the basis.

Run:  python demos/02_supervision_helps.py      (a few seconds)
"""
from nmfalpha import PipelineParams, make_splits, planted_subspace_task, run_pipeline

task = planted_subspace_task(seed=0)
data = make_splits(task, labeled_fraction=0.04, seed=0, num_repeats=1)[0]
print(f"{len(data.splits['train_labeled'])} labeled and "
      f"{len(data.splits['train_unlabeled'])} unlabeled training columns")

base = PipelineParams(rank=5, C=100.0, seed=0)
for lam in (0.0, 1.0, 10.0):
    params = PipelineParams(**{**base.__dict__, "lam": lam})
    res = run_pipeline(data, "nmf_alpha", params)
    print(f"lambda = {lam:5.1f}   validation {res['validation']:.3f}   test {res['test']:.3f}")

res = run_pipeline(data, "nmf", base)
print(f"plain NMF        validation {res['validation']:.3f}   test {res['test']:.3f}")
res = run_pipeline(data, "raw", base)
print(f"raw features     validation {res['validation']:.3f}   test {res['test']:.3f}")
