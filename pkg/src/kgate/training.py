"""Policy training: sampled rollouts, rewards, combined loss, optimization.

The walk is trained with a Monte-Carlo policy gradient (trajectory reward
times summed action log-probabilities, reward held constant), plus two
supervised cross-entropy terms: node loss against annotated traversal
paths and knowledge loss against the gold knowledge. Optimization is
adaptive-moment descent with decoupled weight decay under a one-cycle
learning-rate schedule.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import DialogueSample
from .encode import EmbeddingProvider, graph_idf
from .errors import NumericalError, ValidationError
from .graph import UnifiedGraph
from .layers import Dims, ModelParams, init_params
from .selector import Episode, SelectorConfig, TraversalTrace, run_episode, select


@dataclass(frozen=True)
class RewardConfig:
    alpha: float = 0.2
    r_node_pos: float = 1.0
    r_node_neg: float = -1.0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValidationError(f"alpha must be > 0, got {self.alpha}")


@dataclass(frozen=True)
class RewardBreakdown:
    r_node: float
    r_gold: float
    r_pool: float

    @property
    def total(self) -> float:
        return self.r_node + self.r_gold + self.r_pool


@dataclass
class TrainingTrace:
    """One sampled rollout with its tensor-level episode and rewards."""

    episode: Episode
    rewards: RewardBreakdown
    sample_id: str

    def trace(self) -> TraversalTrace:
        t = self.episode.trace()
        t.rewards = self.rewards
        return t


def gold_halt_target(graph: UnifiedGraph, sample: DialogueSample) -> str | None:
    """The process node a correct walk should halt on.

    The terminal of the annotated path when one exists; for document
    graphs without a path, the owner of the gold knowledge. Triple
    samples without a path have no defined target.
    """
    if sample.gold_path:
        return sample.gold_path[-1]
    if graph.kind == "document":
        owners = {graph.knowledge_node(g).owner for g in sample.gold_knowledge if graph.has_knowledge(g)}
        if owners:
            return sorted(owners)[0]
    return None


def reward_node(halt_node: str, gold_path: Sequence[str] | None, cfg: RewardConfig, fallback_target: str | None = None) -> float:
    """Halt reward: positive on the correct process node, negative otherwise.

    Samples with neither a gold path nor a fallback target contribute 0.
    """
    if gold_path:
        target = gold_path[-1]
    elif fallback_target is not None:
        target = fallback_target
    else:
        return 0.0
    return cfg.r_node_pos if halt_node == target else cfg.r_node_neg


def reward_gold(pool: Sequence[str], gold_ids: Sequence[str], cfg: RewardConfig) -> float:
    """Rank reward: max(1 - alpha * best gold rank, -1); -1 if no gold made the pool."""
    best: int | None = None
    gold = set(gold_ids)
    for rank, kid in enumerate(pool, start=1):
        if kid in gold:
            best = rank
            break
    if best is None:
        return -1.0
    return max(1.0 - cfg.alpha * best, -1.0)


def reward_pool(r_gold: float, pool_size: int) -> float:
    """Pool-size reward: the rank reward diluted by the pool it came from."""
    if pool_size < 1:
        raise ValidationError(f"pool size must be >= 1, got {pool_size}")
    return r_gold / pool_size


def compute_rewards(graph: UnifiedGraph, sample: DialogueSample, episode: Episode, cfg: RewardConfig) -> RewardBreakdown:
    fallback = None
    if not sample.gold_path and graph.kind == "document":
        fallback = gold_halt_target(graph, sample)
    r_node = reward_node(episode.halt_node, sample.gold_path, cfg, fallback_target=fallback)
    pool_ids = [kid for kid, _ in episode.ranked[: episode.pool_size]]
    r_gold = reward_gold(pool_ids, sample.gold_knowledge, cfg)
    r_pool = reward_pool(r_gold, episode.pool_size)
    return RewardBreakdown(r_node=r_node, r_gold=r_gold, r_pool=r_pool)


def rollout(
    graph: UnifiedGraph,
    sample: DialogueSample,
    provider: EmbeddingProvider,
    params: ModelParams,
    config: SelectorConfig,
    reward_config: RewardConfig,
    rng: np.random.Generator,
    idf: Mapping[str, float] | None = None,
) -> TrainingTrace:
    """One sampled traversal with rewards attached."""
    if config.traversal != "sampled":
        config = dataclasses.replace(config, traversal="sampled")
    episode = run_episode(
        graph,
        sample.history,
        sample.utterance,
        provider,
        params,
        config,
        rng=rng,
        start_node=sample.start_node,
        idf=idf,
    )
    rewards = compute_rewards(graph, sample, episode, reward_config)
    return TrainingTrace(episode=episode, rewards=rewards, sample_id=sample.id)


def reinforce_loss(traces: Sequence[TrainingTrace], baseline: bool = False) -> Tensor:
    """Monte-Carlo policy-gradient surrogate.

    Mean over traces of (trajectory reward times the trace's summed action
    log-probabilities), negated; rewards are constants, so gradients reach
    the policy only through the log-probabilities. With ``baseline`` on,
    the batch-mean reward is subtracted from each trajectory's reward,
    which changes no expectation but cuts gradient variance.
    """
    if not traces:
        raise ValidationError("reinforce_loss needs at least one trace")
    offset = float(np.mean([tr.rewards.total for tr in traces])) if baseline else 0.0
    terms: list[Tensor] = []
    for tr in traces:
        total = tr.rewards.total - offset
        if tr.episode.steps:
            logp_sum = tr.episode.steps[0].logp
            for step in tr.episode.steps[1:]:
                logp_sum = ad.add(logp_sum, step.logp)
            terms.append(ad.mul(logp_sum, Tensor(np.float64(total))))
        else:
            terms.append(Tensor(np.float64(0.0)))
    acc = terms[0]
    for t in terms[1:]:
        acc = ad.add(acc, t)
    return ad.neg(ad.div(acc, Tensor(np.float64(len(traces)))))


def _step_gold_target(step_node: str, candidates: Sequence[str], gold_path: Sequence[str]) -> str | None:
    if step_node not in gold_path:
        return None
    i = gold_path.index(step_node)
    target = gold_path[i + 1] if i + 1 < len(gold_path) else step_node
    return target if target in candidates else None


def supervised_losses(
    episode: Episode,
    sample: DialogueSample,
    graph: UnifiedGraph,
) -> tuple[Tensor | None, Tensor | None, bool]:
    """Cross-entropy losses for the walk and the knowledge ranking.

    Returns (node loss, knowledge loss, gold_unreachable). The node loss
    averages over steps where the annotated path defines a next target;
    without a path there is no node term. The knowledge loss averages the
    negative log-probability of each gold item under the softmax over the
    candidate pool; golds outside the pool are skipped and flagged so
    corpus or graph problems surface in the unreachable rate.
    """
    node_terms: list[Tensor] = []
    if sample.gold_path:
        for step in episode.steps:
            target = _step_gold_target(step.node, step.candidates, sample.gold_path)
            if target is None:
                continue
            node_terms.append(ad.neg(ad.log(ad.index(step.probs, step.candidates.index(target)))))
    node_loss: Tensor | None = None
    if node_terms:
        acc = node_terms[0]
        for t in node_terms[1:]:
            acc = ad.add(acc, t)
        node_loss = ad.div(acc, Tensor(np.float64(len(node_terms))))

    log_probs = ad.log_softmax(episode.knowledge_scores)
    gold_positions = [episode.knowledge_ids.index(g) for g in sample.gold_knowledge if g in episode.knowledge_ids]
    unreachable = len(gold_positions) == 0
    knowledge_loss: Tensor | None = None
    if gold_positions:
        terms = [ad.neg(ad.index(log_probs, pos)) for pos in gold_positions]
        acc = terms[0]
        for t in terms[1:]:
            acc = ad.add(acc, t)
        knowledge_loss = ad.div(acc, Tensor(np.float64(len(terms))))
    return node_loss, knowledge_loss, unreachable


class AdamW:
    """Adaptive moments with decoupled weight decay.

    Parameter names containing any of ``frozen`` substrings are skipped,
    leaving those tensors at their initialization.
    """

    def __init__(
        self,
        params: ModelParams,
        weight_decay: float = 0.12,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        frozen: Sequence[str] = (),
    ):
        self.params = params
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.frozen = tuple(frozen)
        self.t = 0
        self._m = {name: np.zeros_like(t.data) for name, t in params.tensors.items()}
        self._v = {name: np.zeros_like(t.data) for name, t in params.tensors.items()}

    def _is_frozen(self, name: str) -> bool:
        return any(marker in name for marker in self.frozen)

    def step(self, lr: float) -> None:
        self.t += 1
        for name, tensor in self.params.tensors.items():
            if self._is_frozen(name):
                continue
            grad = tensor.grad
            if grad is None:
                grad = np.zeros_like(tensor.data)
            m = self._m[name] = self.beta1 * self._m[name] + (1 - self.beta1) * grad
            v = self._v[name] = self.beta2 * self._v[name] + (1 - self.beta2) * grad * grad
            m_hat = m / (1 - self.beta1**self.t)
            v_hat = v / (1 - self.beta2**self.t)
            tensor.data = tensor.data - lr * (m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * tensor.data)
        self.params.bump_version()


class OneCycle:
    """Learning rate rises linearly to the peak, then cosine-anneals down.

    The peak value is hit exactly once, at the end of warmup.
    """

    def __init__(self, total_steps: int, max_lr: float, warmup_frac: float = 0.3, final_lr: float | None = None, div_factor: float = 25.0):
        if total_steps < 1:
            raise ValidationError(f"total_steps must be >= 1, got {total_steps}")
        if not 0.0 <= warmup_frac < 1.0:
            raise ValidationError(f"warmup_frac must be in [0, 1), got {warmup_frac}")
        self.total_steps = total_steps
        self.max_lr = max_lr
        self.init_lr = max_lr / div_factor
        self.final_lr = max_lr / (div_factor * 10) if final_lr is None else final_lr
        self.warmup_steps = int(round(warmup_frac * (total_steps - 1)))

    def lr(self, step: int) -> float:
        step = min(max(step, 0), self.total_steps - 1)
        if self.warmup_steps > 0 and step < self.warmup_steps:
            return self.init_lr + (self.max_lr - self.init_lr) * step / self.warmup_steps
        if step == self.warmup_steps:
            return self.max_lr
        denom = max(1, self.total_steps - 1 - self.warmup_steps)
        progress = min(1.0, (step - self.warmup_steps) / denom)
        return self.final_lr + (self.max_lr - self.final_lr) * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 8
    rollouts_per_sample: int = 4
    max_lr: float = 3e-3
    final_lr: float | None = None
    warmup_frac: float = 0.3
    div_factor: float = 25.0
    weight_decay: float = 0.12
    seed: int = 0
    use_walk_loss: bool = True
    use_node_loss: bool = True
    use_knowledge_loss: bool = True
    reward_baseline: bool = False
    # Attention value/output projections stay at their identity
    # initialization unless explicitly fine-tuned; at desk-scale corpus
    # sizes, letting them drift trades generalization for rote fitting.
    finetune_projections: bool = False
    precision: str = "float64"
    holdout_frac: float = 0.2
    dims: Dims | None = None
    selector: SelectorConfig = field(default_factory=lambda: SelectorConfig(traversal="sampled"))
    reward: RewardConfig = field(default_factory=RewardConfig)

    def __post_init__(self):
        if not (self.use_walk_loss or self.use_node_loss or self.use_knowledge_loss):
            raise ValidationError("at least one loss component must be enabled")
        if self.epochs < 1 or self.batch_size < 1 or self.rollouts_per_sample < 1:
            raise ValidationError("epochs, batch_size, and rollouts_per_sample must be >= 1")
        if self.precision not in ("float32", "float64"):
            raise ValidationError(f"precision must be float32 or float64, got {self.precision!r}")
        if not 0.0 <= self.holdout_frac < 1.0:
            raise ValidationError(f"holdout_frac must be in [0, 1), got {self.holdout_frac}")


@dataclass
class TrainReport:
    epochs: list[dict]
    aborted: bool = False
    abort_reason: str | None = None

    def to_jsonl(self) -> str:
        return "\n".join(json.dumps(rec) for rec in self.epochs) + ("\n" if self.epochs else "")


def _mean(values: Sequence[float]) -> float:
    return float(np.mean(values)) if values else 0.0


def _split_corpus(corpus: Sequence[DialogueSample], frac: float, rng: np.random.Generator):
    if frac <= 0.0 or len(corpus) < 2:
        return list(corpus), []
    order = rng.permutation(len(corpus))
    n_hold = max(1, int(round(frac * len(corpus))))
    hold = [corpus[i] for i in order[:n_hold]]
    train = [corpus[i] for i in order[n_hold:]]
    return train, hold


def _holdout_metrics(
    graph: UnifiedGraph,
    holdout: Sequence[DialogueSample],
    provider: EmbeddingProvider,
    params: ModelParams,
    selector_config: SelectorConfig,
    idf: Mapping[str, float],
) -> tuple[float, float]:
    """Greedy recall@1 and mean pool size on the held-out split."""
    if not holdout:
        return 0.0, 0.0
    greedy = dataclasses.replace(selector_config, traversal="greedy")
    hits = 0
    pool_sizes = []
    for sample in holdout:
        result = select(graph, sample, provider, params, greedy, idf=idf)
        top = result.ranked_pool[0][0] if result.ranked_pool else None
        hits += int(top in set(sample.gold_knowledge))
        pool_sizes.append(result.pool_size)
    return hits / len(holdout), _mean(pool_sizes)


def train(
    graph: UnifiedGraph,
    corpus: Sequence[DialogueSample],
    provider: EmbeddingProvider,
    config: TrainConfig,
    eval_corpus: Sequence[DialogueSample] | None = None,
    params: ModelParams | None = None,
    report_path: str | Path | None = None,
) -> tuple[ModelParams, TrainReport]:
    """Train the selection policy on a dialogue corpus.

    Per batch: sampled rollouts, rewards, the enabled loss components,
    one backward pass, one optimizer step. Deterministic for a fixed seed
    in single-worker use. On a non-finite loss the last epoch-end
    checkpoint is returned with the report marked aborted.
    """
    if not corpus:
        raise ValidationError("training corpus is empty")
    dtype = np.dtype(config.precision)
    dims = config.dims or Dims(d_in=provider.dim)
    if dims.d_in != provider.dim:
        raise ValidationError(f"dims.d_in={dims.d_in} does not match provider dim {provider.dim}")
    rng = np.random.default_rng(config.seed)
    if params is None:
        params = init_params(dims, seed=config.seed, dtype=dtype)

    if eval_corpus is None:
        train_samples, holdout = _split_corpus(corpus, config.holdout_frac, rng)
    else:
        train_samples, holdout = list(corpus), list(eval_corpus)
    idf = graph_idf(graph)
    n_batches = max(1, math.ceil(len(train_samples) / config.batch_size))
    schedule = OneCycle(
        total_steps=config.epochs * n_batches,
        max_lr=config.max_lr,
        warmup_frac=config.warmup_frac,
        final_lr=config.final_lr,
        div_factor=config.div_factor,
    )
    frozen = () if config.finetune_projections else (".Wv", ".Wo")
    optimizer = AdamW(params, weight_decay=config.weight_decay, frozen=frozen)
    sampler = dataclasses.replace(config.selector, traversal="sampled")

    report = TrainReport(epochs=[])
    last_good = params.copy()
    step_index = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(train_samples))
        epoch_walk: list[float] = []
        epoch_node: list[float] = []
        epoch_knowledge: list[float] = []
        epoch_reward: list[float] = []
        unreachable = 0
        rollout_count = 0
        lr = schedule.lr(step_index)
        for b in range(n_batches):
            batch_ids = order[b * config.batch_size : (b + 1) * config.batch_size]
            if len(batch_ids) == 0:
                continue
            traces: list[TrainingTrace] = []
            node_losses: list[Tensor] = []
            knowledge_losses: list[Tensor] = []
            try:
                for i in batch_ids:
                    sample = train_samples[i]
                    for _ in range(config.rollouts_per_sample):
                        tr = rollout(graph, sample, provider, params, sampler, config.reward, rng, idf=idf)
                        traces.append(tr)
                        epoch_reward.append(tr.rewards.total)
                        rollout_count += 1
                        node_l, knowledge_l, unr = supervised_losses(tr.episode, sample, graph)
                        if node_l is not None:
                            node_losses.append(node_l)
                        if knowledge_l is not None:
                            knowledge_losses.append(knowledge_l)
                        unreachable += int(unr)
            except NumericalError as exc:
                report.aborted = True
                report.abort_reason = f"epoch {epoch}, batch {b}: {exc}"
                if report_path is not None:
                    Path(report_path).write_text(report.to_jsonl(), encoding="utf-8")
                return last_good, report
            components: list[Tensor] = []
            if config.use_walk_loss:
                walk = reinforce_loss(traces, baseline=config.reward_baseline)
                components.append(walk)
                epoch_walk.append(walk.item())
            if config.use_node_loss and node_losses:
                acc = node_losses[0]
                for t in node_losses[1:]:
                    acc = ad.add(acc, t)
                node = ad.div(acc, Tensor(np.float64(len(node_losses))))
                components.append(node)
                epoch_node.append(node.item())
            if config.use_knowledge_loss and knowledge_losses:
                acc = knowledge_losses[0]
                for t in knowledge_losses[1:]:
                    acc = ad.add(acc, t)
                knowledge = ad.div(acc, Tensor(np.float64(len(knowledge_losses))))
                components.append(knowledge)
                epoch_knowledge.append(knowledge.item())
            if not components:
                continue
            loss = components[0]
            for c in components[1:]:
                loss = ad.add(loss, c)
            if not np.isfinite(loss.item()):
                report.aborted = True
                report.abort_reason = f"non-finite loss at epoch {epoch}, batch {b}"
                if report_path is not None:
                    Path(report_path).write_text(report.to_jsonl(), encoding="utf-8")
                return last_good, report
            params.zero_grad()
            lr = schedule.lr(step_index)
            loss.backward()
            optimizer.step(lr)
            step_index += 1
        r_at_1, pool_mean = _holdout_metrics(graph, holdout, provider, params, config.selector, idf)
        report.epochs.append(
            {
                "epoch": epoch,
                "l_walk": _mean(epoch_walk),
                "l_node": _mean(epoch_node),
                "l_knowledge": _mean(epoch_knowledge),
                "reward_mean": _mean(epoch_reward),
                "r_at_1": r_at_1,
                "pool_mean": pool_mean,
                "gold_unreachable_rate": unreachable / max(1, rollout_count),
                "lr": lr,
            }
        )
        last_good = params.copy()
    if report_path is not None:
        Path(report_path).write_text(report.to_jsonl(), encoding="utf-8")
    return params, report
