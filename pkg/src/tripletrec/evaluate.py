"""Retrieval and ranking metrics, plus the triplet-vs-baseline comparison.

Three metrics, all computed in inference mode over frozen parameters:

* pairwise ranking accuracy — fraction of held-out triplets whose predicted
  order matches the label (a tie at probability 0.5 counts as incorrect);
* precision@k for user -> item retrieval — fraction of the top-k items
  carrying the user's dominant tag, averaged over users;
* precision@k for item -> item retrieval — same, over query items with the
  query excluded from candidates.

``TRIPLET_RANK_THREADS`` caps per-query parallelism of the retrieval metrics
(0 = one worker per CPU); results are reduced in deterministic order either
way.
"""

from __future__ import annotations

import dataclasses
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import model as M
from .data import (
    DataError,
    FeatureStore,
    PairingStrategy,
    TripletExample,
    build_triplets,
    split_train_test,
)
from .train import TrainConfig, _gather_triplet_rows, train


@dataclass
class EvalReport:
    pairwise_accuracy: float | None = None
    precision_at_k: dict[int, float] = field(default_factory=dict)
    item_item_precision_at_k: dict[int, float] = field(default_factory=dict)
    n_test: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        d["precision_at_k"] = {str(k): v for k, v in self.precision_at_k.items()}
        d["item_item_precision_at_k"] = {
            str(k): v for k, v in self.item_item_precision_at_k.items()
        }
        return json.dumps(d, indent=2, sort_keys=True)

    def to_table(self) -> str:
        rows = []
        if self.pairwise_accuracy is not None:
            rows.append(("pairwise accuracy", f"{self.pairwise_accuracy:.2%}"))
        for k, v in sorted(self.precision_at_k.items()):
            rows.append((f"user->item precision@{k}", f"{v:.2%}"))
        for k, v in sorted(self.item_item_precision_at_k.items()):
            rows.append((f"item->item precision@{k}", f"{v:.2%}"))
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{name:<{width}}  {value}" for name, value in rows)


def _n_workers() -> int:
    raw = os.environ.get("TRIPLET_RANK_THREADS")
    if raw is None:
        return 1
    n = int(raw)
    if n == 0:
        return os.cpu_count() or 1
    return max(1, n)


def _map_queries(fn, args_list):
    workers = _n_workers()
    if workers > 1 and len(args_list) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, args_list))
    return [fn(a) for a in args_list]


def pairwise_accuracy(
    model: M.TripletModelParams, triplets: list[TripletExample], store: FeatureStore
) -> float:
    """Fraction of triplets ordered correctly: label 0 requires a negative
    pairwise logit, label 1 a positive one; a zero logit is wrong."""
    if not triplets:
        raise DataError("empty test set")
    u, i, j, labels = _gather_triplet_rows(store, triplets)
    o = M.pair_logit(
        model, store.user_topics[u], store.item_features[i], store.item_features[j]
    )
    correct = ((o < 0) & (labels == 0)) | ((o > 0) & (labels == 1))
    return float(correct.mean())


def precision_at_k(
    model: M.TripletModelParams,
    user_ids,
    store: FeatureStore,
    k: int,
) -> float:
    """Average over users of (top-k items sharing the user's dominant tag)/k.
    When fewer than k items exist the precision is over the available ones."""
    user_ids = list(user_ids)
    if not user_ids:
        raise DataError("no users to evaluate")
    tag_of = {int(iid): int(t) for iid, t in zip(store.item_ids, store.item_tags)}

    def one(uid):
        row = store.user_row(uid)
        ranked = M.rank_items_for_user(
            model, store.user_topics[row], store.item_ids, store.item_features, k
        )
        hits = sum(1 for iid in ranked if tag_of[int(iid)] == int(store.user_tags[row]))
        return hits / len(ranked)

    return float(np.mean(_map_queries(one, user_ids)))


def item_item_precision_at_k(
    model: M.TripletModelParams,
    item_ids,
    store: FeatureStore,
    k: int,
) -> float:
    """Average over query items of (top-k neighbours sharing the query's
    tag)/k, the query itself excluded from the candidates."""
    item_ids = list(item_ids)
    if not item_ids:
        raise DataError("no items to evaluate")
    tag_of = {int(iid): int(t) for iid, t in zip(store.item_ids, store.item_tags)}

    def one(iid):
        row = store.item_row(iid)
        ranked = M.rank_items_for_item(
            model,
            store.item_features[row],
            store.item_ids,
            store.item_features,
            k,
            exclude_ids=(int(iid),),
        )
        hits = sum(1 for r in ranked if tag_of[int(r)] == int(store.item_tags[row]))
        return hits / len(ranked)

    return float(np.mean(_map_queries(one, item_ids)))


def evaluate_model(
    model: M.TripletModelParams,
    store: FeatureStore,
    test_triplets: list[TripletExample] | None = None,
    k: int = 10,
) -> EvalReport:
    """Full report: pairwise accuracy on the given triplets (if any) plus
    both retrieval precisions over the whole corpus."""
    report = EvalReport()
    if test_triplets:
        report.pairwise_accuracy = pairwise_accuracy(model, test_triplets, store)
        report.n_test["pairwise"] = len(test_triplets)
    report.precision_at_k[k] = precision_at_k(model, store.user_ids.tolist(), store, k)
    report.n_test["users"] = store.n_users
    report.item_item_precision_at_k[k] = item_item_precision_at_k(
        model, store.item_ids.tolist(), store, k
    )
    report.n_test["items"] = store.n_items
    return report


# ---------------------------------------------------------------------------
# Method comparison
# ---------------------------------------------------------------------------


@dataclass
class SeedResult:
    seed: int
    pairwise: dict[str, float]
    item_item: dict[str, float]


@dataclass
class MethodComparison:
    """Per-seed metrics for both methods with aggregate mean/std and the
    per-seed win counts of the first method over the second."""

    method_a: str
    method_b: str
    seeds: list[SeedResult]

    def _metric(self, which: str, method: str) -> np.ndarray:
        return np.array([getattr(s, which)[method] for s in self.seeds])

    def summary(self) -> dict:
        out: dict = {"methods": [self.method_a, self.method_b], "n_seeds": len(self.seeds)}
        for which in ("pairwise", "item_item"):
            a = self._metric(which, self.method_a)
            b = self._metric(which, self.method_b)
            out[which] = {
                self.method_a: {"mean": float(a.mean()), "std": float(a.std())},
                self.method_b: {"mean": float(b.mean()), "std": float(b.std())},
                "wins": {
                    self.method_a: int((a > b).sum()),
                    self.method_b: int((b > a).sum()),
                    "ties": int((a == b).sum()),
                },
            }
        return out

    def to_json(self) -> str:
        d = self.summary()
        d["per_seed"] = [dataclasses.asdict(s) for s in self.seeds]
        return json.dumps(d, indent=2, sort_keys=True)

    def to_table(self) -> str:
        s = self.summary()
        lines = [f"{'metric':<28}{self.method_a:>18}{self.method_b:>18}{'wins':>10}"]
        for which, label in (("pairwise", "pairwise accuracy"), ("item_item", "item-item p@k")):
            row = s[which]
            a, b = row[self.method_a], row[self.method_b]
            lines.append(
                f"{label:<28}"
                f"{a['mean']:>10.4f} ±{a['std']:.4f}"
                f"{b['mean']:>10.4f} ±{b['std']:.4f}"
                f"{row['wins'][self.method_a]:>5}-{row['wins'][self.method_b]}"
            )
        return "\n".join(lines)


def compare_methods(
    store: FeatureStore,
    config_a: TrainConfig,
    config_b: TrainConfig,
    seeds: list[int],
    strategy: PairingStrategy | None = None,
    test_fraction: float = 0.2,
    k: int = 10,
    log_stream=None,
) -> MethodComparison:
    """Train both configurations per seed on identical triplet data and
    report per-seed and aggregate metrics."""
    if len(seeds) < 3:
        raise ValueError("need at least 3 seeds for a comparison")
    strategy = strategy or PairingStrategy.unbalanced()
    name_a, name_b = config_a.model_kind, config_b.model_kind
    if name_a == name_b:
        name_a, name_b = f"{name_a}-a", f"{name_b}-b"

    results = []
    for seed in seeds:
        triplets = build_triplets(store, strategy, seed)
        train_set, test_set = split_train_test(triplets, test_fraction, seed, store)
        pairwise: dict[str, float] = {}
        item_item: dict[str, float] = {}
        for name, config in ((name_a, config_a), (name_b, config_b)):
            run_cfg = dataclasses.replace(config, seed=seed)
            ckpt = train(store, train_set, run_cfg, log_stream=log_stream)
            pairwise[name] = pairwise_accuracy(ckpt.model, test_set, store)
            item_item[name] = item_item_precision_at_k(
                ckpt.model, store.item_ids.tolist(), store, k
            )
        results.append(SeedResult(seed, pairwise, item_item))
    return MethodComparison(name_a, name_b, results)
