"""
Two-step optimisation
Step 1 trains on cross-entropy only; step 2 gates each video on its evaluated
score and trains the weak ones with a mix of cross-entropy and self-critical
policy gradient.
"""

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from autodiff import DiffValue, backpropagate, clip_by_global_norm, log_softmax, pick
from config_env import TrainingConfig
from data_io import DatasetRecord, Vocabulary
from decoder import EOS_ID, unroll_decoder
from decoding import decode, greedy_decode, sample_decode
from encoder import encode_video
from error_handling import ValidationError
from logger import log_epoch, log_gate_decision, logger
from params import ModelParams
from text_metrics import ScoreReport, evaluated_score, score_corpus

Gradients = Dict[str, np.ndarray]
RewardFn = Callable[[List[int]], float]

# branch tags mixed into every seed tuple
_XE_BRANCH, _RL_BRANCH = 0, 1


@dataclass
class EpochReport:
    epoch: int
    stage: int
    mean_xe: float
    mean_rl: float
    skipped: int
    trained: int
    eval_scores: Dict[str, float] = field(default_factory=dict)
    steps: int = 0

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class StepStats:
    """What one or more mixed steps saw; folded into an EpochReport"""
    xe_sum: float = 0.0
    rl_sum: float = 0.0
    samples: int = 0
    updates: int = 0
    r_sample: List[float] = field(default_factory=list)
    r_greedy: List[float] = field(default_factory=list)

    def merge(self, other: "StepStats") -> "StepStats":
        self.xe_sum += other.xe_sum
        self.rl_sum += other.rl_sum
        self.samples += other.samples
        self.updates += other.updates
        self.r_sample.extend(other.r_sample)
        self.r_greedy.extend(other.r_greedy)
        return self

    @property
    def mean_xe(self) -> float:
        return self.xe_sum / self.samples if self.samples else 0.0

    @property
    def mean_rl(self) -> float:
        return self.rl_sum / self.samples if self.samples else 0.0


class AdamOptimizer:
    """
    Adam with bias correction

    Updates replace parameter arrays instead of writing into them, so graphs
    bound before the step keep seeing the old values.
    """

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: Gradients = {}
        self.v: Gradients = {}
        self._lock = threading.Lock()

    @classmethod
    def from_config(cls, config: TrainingConfig) -> "AdamOptimizer":
        return cls(config.lr, config.adam_beta1, config.adam_beta2, config.adam_eps)

    def step(self, params: ModelParams, grads: Gradients):
        with self._lock:
            self.t += 1
            correction1 = 1.0 - self.beta1 ** self.t
            correction2 = 1.0 - self.beta2 ** self.t
            for name, grad in grads.items():
                m = self.beta1 * self.m.get(name, 0.0) + (1.0 - self.beta1) * grad
                v = self.beta2 * self.v.get(name, 0.0) + (1.0 - self.beta2) * grad * grad
                self.m[name], self.v[name] = m, v
                update = self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)
                params.tensors[name] = params.tensors[name] - update


def _zero_gradients(params: ModelParams) -> Gradients:
    return {name: np.zeros_like(arr) for name, arr in params.tensors.items()}


def _seed(config: TrainingConfig, step: int, index: int, branch: int) -> np.random.Generator:
    return np.random.default_rng([config.seed, step, index, branch])


def _map(fn, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# Losses


def xe_loss(logit_sequence: Sequence[DiffValue], target_tokens: Sequence[int],
            pad_mask: Optional[Sequence[bool]] = None) -> DiffValue:
    """
    Summed negative log-likelihood of the targets

    Args:
        logit_sequence: One logit vector per step
        target_tokens: Target id per step, EOS included
        pad_mask: True where the step counts; None counts every step

    Returns:
        Scalar DiffValue
    """
    if len(logit_sequence) != len(target_tokens):
        raise ValidationError(f"{len(logit_sequence)} logit steps vs {len(target_tokens)} targets")
    if pad_mask is not None and len(pad_mask) != len(target_tokens):
        raise ValidationError(f"pad mask length {len(pad_mask)} vs {len(target_tokens)} targets")

    terms = [
        pick(log_softmax(logits), int(target))
        for step, (logits, target) in enumerate(zip(logit_sequence, target_tokens))
        if pad_mask is None or pad_mask[step]
    ]
    if not terms:
        raise ValidationError("every step is masked")
    loss = terms[0]
    for term in terms[1:]:
        loss = loss + term
    return -loss


def teacher_forced_logits(features, token_ids: Sequence[int], graph, train_mode: bool = False,
                          rng: Optional[np.random.Generator] = None) -> List[DiffValue]:
    """Logits for predicting token_ids then EOS, one per step"""
    encoder_out = encode_video(features, graph, train_mode, rng)
    return [trace.logits for trace in unroll_decoder(encoder_out, token_ids, graph, train_mode, rng)]


def xe_gradient(features, token_ids: Sequence[int], params: ModelParams,
                rng: Optional[np.random.Generator] = None, train_mode: bool = True) -> Tuple[Gradients, float]:
    graph = params.bind(trainable=True)
    logits = teacher_forced_logits(features, token_ids, graph, train_mode, rng)
    loss = xe_loss(logits, list(token_ids) + [EOS_ID])
    backpropagate(loss)
    return graph.gradients(), loss.item()


def policy_gradient(features, params: ModelParams, token_ids: Sequence[int], finished: bool,
                    advantage: float) -> Tuple[Gradients, float]:
    """
    Gradient of -advantage * log p(sequence)

    Each step's logit gradient is advantage * (softmax - onehot). The EOS step
    counts only when the sequence finished. Runs without dropout, matching
    the pass that drew the sequence.
    """
    targets = list(token_ids) + [EOS_ID] if finished else list(token_ids)
    if advantage == 0.0 or not targets:
        return _zero_gradients(params), 0.0

    graph = params.bind(trainable=True)
    logits = teacher_forced_logits(features, targets[:-1], graph, train_mode=False)
    log_prob = -xe_loss(logits, targets)
    surrogate = log_prob * (-advantage)
    backpropagate(surrogate)
    return graph.gradients(), surrogate.item()


def make_reward(references: Sequence[Sequence[str]], vocab: Vocabulary) -> RewardFn:
    return lambda token_ids: evaluated_score(vocab.decode(token_ids), references).score


def scst_gradient(
    features,
    references: Sequence[Sequence[str]],
    params: ModelParams,
    rng_seed,
    vocab: Vocabulary,
    max_len: int = 20,
    reward_fn: Optional[RewardFn] = None,
) -> Tuple[Gradients, Dict[str, float]]:
    """
    Self-critical REINFORCE gradient for one video

    A sampled caption is rewarded against the greedy caption of the same
    model; the difference scales the sampled sequence's log-likelihood gradient.

    Returns:
        (gradients, diagnostics with r_sample, r_greedy, advantage, surrogate)
    """
    if not references:
        raise ValidationError("scst_gradient needs at least one reference")
    reward = reward_fn or make_reward(references, vocab)

    sample = sample_decode(features, params, rng_seed, max_len)
    baseline = greedy_decode(features, params, max_len)
    r_sample = float(reward(sample.token_ids))
    r_greedy = float(reward(baseline.token_ids))
    advantage = r_sample - r_greedy

    grads, surrogate = policy_gradient(features, params, sample.token_ids, sample.finished, advantage)
    diagnostics = {
        "r_sample": r_sample,
        "r_greedy": r_greedy,
        "advantage": advantage,
        "surrogate": surrogate,
    }
    return grads, diagnostics


# Mixed updates


def _mean(grad_list: List[Gradients]) -> Gradients:
    count = len(grad_list)
    mean = {name: np.zeros_like(g) for name, g in grad_list[0].items()}
    for grads in grad_list:
        for name, g in grads.items():
            mean[name] += g
    return {name: g / count for name, g in mean.items()}


def branch_gradients(
    batch: Sequence[Tuple[DatasetRecord, int]],
    params: ModelParams,
    config: TrainingConfig,
    vocab: Vocabulary,
    step: int = 0,
    want_xe: bool = True,
    want_rl: bool = True,
) -> Tuple[Optional[Gradients], Optional[Gradients], StepStats]:
    """
    Batch-mean gradients of each loss, computed independently

    Each batch item is (record, index of the reference used as the XE target).
    """
    if not batch:
        raise ValidationError("empty batch")

    def work(item):
        index, (record, ref_index) = item
        xe = rl = None
        xe_value, rl_value, diag = 0.0, 0.0, None
        if want_xe:
            target = vocab.encode(record.references[ref_index][:config.max_len])
            xe, xe_value = xe_gradient(record.features, target, params, _seed(config, step, index, _XE_BRANCH))
        if want_rl:
            rl, diag = scst_gradient(
                record.features, record.references, params,
                _seed(config, step, index, _RL_BRANCH), vocab, config.max_len,
            )
            rl_value = diag["surrogate"]
        return xe, xe_value, rl, rl_value, diag

    results = _map(work, list(enumerate(batch)), config.num_workers)

    stats = StepStats(samples=len(batch))
    for _, xe_value, _, rl_value, diag in results:
        stats.xe_sum += xe_value
        stats.rl_sum += rl_value
        if diag is not None:
            stats.r_sample.append(diag["r_sample"])
            stats.r_greedy.append(diag["r_greedy"])

    g_xe = _mean([r[0] for r in results]) if want_xe else None
    g_rl = _mean([r[2] for r in results]) if want_rl else None
    return g_xe, g_rl, stats


def mixed_gradient(
    batch: Sequence[Tuple[DatasetRecord, int]],
    params: ModelParams,
    config: TrainingConfig,
    vocab: Vocabulary,
    step: int = 0,
) -> Tuple[Gradients, StepStats]:
    """lambda * g_xe + (1 - lambda) * g_rl; a lambda of exactly 0 or 1 skips the other branch"""
    lam = config.lambda_
    if not 0.0 <= lam <= 1.0:
        raise ValidationError(f"lambda must lie in [0, 1], got {lam}")

    g_xe, g_rl, stats = branch_gradients(batch, params, config, vocab, step, want_xe=lam > 0.0, want_rl=lam < 1.0)
    if g_rl is None:
        return g_xe, stats
    if g_xe is None:
        return g_rl, stats
    return {name: lam * g_xe[name] + (1.0 - lam) * g_rl[name] for name in g_xe}, stats


def mixed_step(
    batch: Sequence[Tuple[DatasetRecord, int]],
    params: ModelParams,
    optimizer: AdamOptimizer,
    config: TrainingConfig,
    vocab: Vocabulary,
    step: int = 0,
) -> StepStats:
    """One clipped Adam update on the mixed gradient; params change in place"""
    grads, stats = mixed_gradient(batch, params, config, vocab, step)
    grads, norm = clip_by_global_norm(grads, config.clip_norm)
    optimizer.step(params, grads)
    stats.updates = 1
    logger.debug(f"step {step}: batch={len(batch)} grad_norm={norm:.4f} xe={stats.mean_xe:.4f}")
    return stats


# Evaluation and gating


def evaluate_model(
    records: Sequence[DatasetRecord],
    params: ModelParams,
    vocab: Vocabulary,
    max_len: int = 20,
    beam_width: Optional[int] = None,
    num_workers: int = 1,
) -> Dict[str, float]:
    """Corpus-mean BLEU-1..4, ROUGE-L and Score of decoded captions"""
    if not records:
        raise ValidationError("nothing to evaluate")
    results = _map(lambda r: decode(r.features, params, max_len, beam_width), list(records), num_workers)
    candidates = [res.tokens(vocab) for res in results]
    return score_corpus(candidates, [r.references for r in records])


def gate_sample(record: DatasetRecord, params: ModelParams, config: TrainingConfig,
                vocab: Vocabulary) -> ScoreReport:
    caption = greedy_decode(record.features, params, config.max_len).tokens(vocab)
    return evaluated_score(caption, record.references)


def train_step2_gate(
    sample: DatasetRecord,
    params: ModelParams,
    config: TrainingConfig,
    vocab: Vocabulary,
    optimizer: Optional[AdamOptimizer] = None,
    seed: int = 0,
) -> str:
    """
    Test one video first and train on it only when it scores below the threshold

    Returns:
        "skipped" or "trained"
    """
    report = gate_sample(sample, params, config, vocab)
    if report.score >= config.gate_threshold:
        log_gate_decision(sample.video_id, report.score, config.gate_threshold, "skipped")
        return "skipped"

    optimizer = optimizer or AdamOptimizer.from_config(config)
    ref_index = int(np.random.default_rng([config.seed, seed]).integers(len(sample.references)))
    mixed_step([(sample, ref_index)], params, optimizer, config, vocab, step=seed)
    log_gate_decision(sample.video_id, report.score, config.gate_threshold, "trained")
    return "trained"


def normalize_scores(values: Sequence[float]) -> List[float]:
    """(Q - min Q) / min Q, elementwise"""
    if not values:
        raise ValidationError("nothing to normalize")
    low = min(values)
    if low <= 0:
        raise ValidationError(f"normalization needs a positive minimum, got {low}")
    return [(v - low) / low for v in values]


# Training loops


def _check_dataset(dataset: Sequence[DatasetRecord]):
    if not dataset:
        raise ValidationError("training dataset is empty")


def _batches(items: list, order: np.ndarray, size: int):
    for start in range(0, len(order), size):
        yield [items[i] for i in order[start:start + size]]


def train_step1(
    dataset: Sequence[DatasetRecord],
    params: ModelParams,
    config: TrainingConfig,
    vocab: Vocabulary,
    validation: Optional[Sequence[DatasetRecord]] = None,
) -> List[EpochReport]:
    """
    Cross-entropy training on every (video, reference) pair

    Stops after max_epochs, after max_steps updates, or once validation
    BLEU-4 has not improved for `patience` epochs.
    """
    _check_dataset(dataset)
    config.validate()
    xe_config = config.replace(lambda_=1.0)
    examples = [(record, j) for record in dataset for j in range(len(record.references))]
    eval_set = list(validation) if validation else list(dataset)
    optimizer = AdamOptimizer.from_config(config)
    rng = np.random.default_rng([config.seed, 1])

    reports: List[EpochReport] = []
    best, stale, step = -np.inf, 0, 0
    logger.info(f"step 1: {len(examples)} pairs from {len(dataset)} videos, batch {config.batch_size}")

    for epoch in range(1, config.max_epochs + 1):
        stats = StepStats()
        for batch in _batches(examples, rng.permutation(len(examples)), config.batch_size):
            stats.merge(mixed_step(batch, params, optimizer, xe_config, vocab, step))
            step += 1
            if config.max_steps is not None and step >= config.max_steps:
                break

        scores = evaluate_model(eval_set, params, vocab, config.max_len, num_workers=config.num_workers)
        report = EpochReport(epoch, 1, stats.mean_xe, 0.0, 0, stats.samples, scores, step)
        reports.append(report)
        log_epoch(report.to_dict())

        if scores["bleu4"] > best:
            best, stale = scores["bleu4"], 0
        else:
            stale += 1
        if stale >= config.patience:
            logger.info(f"step 1: no BLEU-4 gain for {stale} epochs, stopping")
            break
        if config.max_steps is not None and step >= config.max_steps:
            break

    return reports


def train_step2(
    dataset: Sequence[DatasetRecord],
    params: ModelParams,
    config: TrainingConfig,
    vocab: Vocabulary,
    validation: Optional[Sequence[DatasetRecord]] = None,
    start_step: int = 0,
) -> List[EpochReport]:
    """
    Gated mixed-loss training

    Videos scoring at or above gate_threshold are skipped; the rest are
    trained in mini-batches. The optimizer starts fresh.
    """
    _check_dataset(dataset)
    config.validate()
    eval_set = list(validation) if validation else list(dataset)
    optimizer = AdamOptimizer.from_config(config)
    rng = np.random.default_rng([config.seed, 2])

    reports: List[EpochReport] = []
    step = start_step
    decisions: Optional[List[bool]] = None

    for epoch in range(1, config.step2_epochs + 1):
        if decisions is None or config.regate_every_epoch:
            scores = _map(lambda r: gate_sample(r, params, config, vocab), list(dataset), config.num_workers)
            decisions = [s.score >= config.gate_threshold for s in scores]
            for record, report, skip in zip(dataset, scores, decisions):
                log_gate_decision(record.video_id, report.score, config.gate_threshold,
                                  "skipped" if skip else "trained")

        weak = [record for record, skip in zip(dataset, decisions) if not skip]
        stats = StepStats()
        for videos in _batches(weak, rng.permutation(len(weak)), config.batch_size):
            batch = [(record, int(rng.integers(len(record.references)))) for record in videos]
            stats.merge(mixed_step(batch, params, optimizer, config, vocab, step))
            step += 1
            if config.max_steps is not None and step - start_step >= config.max_steps:
                break

        eval_scores = evaluate_model(eval_set, params, vocab, config.max_len, num_workers=config.num_workers)
        report = EpochReport(epoch, 2, stats.mean_xe, stats.mean_rl, len(dataset) - len(weak), stats.samples,
                             eval_scores, step)
        reports.append(report)
        log_epoch(report.to_dict())

        if not weak:
            logger.info("step 2: every video passes the gate, stopping")
            break
        if config.max_steps is not None and step - start_step >= config.max_steps:
            break

    return reports
