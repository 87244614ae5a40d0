"""Disjoint multitask trainer: shared trunk, four task heads, pseudo-labels.

The trunk is two dense layers (512 and 256 units); each head is one dense
layer + softmax.  Branch numbering follows the training graph:

    1  real-label head on real data, ground-truth labels
    2  real-label head on auxiliary data, pseudo-labels from branch 1
    3  aux-label head on real data, pseudo-labels from branch 4
    4  aux-label head on auxiliary data, ground-truth labels

One step computes w1*L1 + w4*L4 + w2*L2 + w3*L3 (that evaluation order,
ground-truth branches first), with the pseudo-labels captured from the
teacher heads before the update, then applies a single Adam update to the
trunk and all heads.  Auxiliary sources never share a label space with the
real head: games carry their own labels, generated features carry the real
label space but train their own pair of heads.

Training modes: `baseline` (real few-shot only), `games`, `generated`, and
`games_plus_generated`, which first trains (or loads) a games-mode network
and then warm-starts a second network from its trunk and real head before
fine-tuning on real + generated data with reduced weights on the branches
fed generated data.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import layers
from .errors import ConfigError, DatasetError, TrainingError
from .layers import LayerSpec
from .optim import AdamHyper, AdamState, adam_step_inplace
from .seeding import (STREAM_AUX_BATCH, STREAM_BATCH, STREAM_INIT, STREAM_STAGE2,
                      substream)

TRUNK_UNITS = (512, 256)

BRANCH_REAL_ON_REAL = 1
BRANCH_REAL_ON_AUX = 2
BRANCH_AUX_ON_REAL = 3
BRANCH_AUX_ON_AUX = 4

MODES = ("baseline", "games", "generated", "games_plus_generated")


@dataclass
class BranchWeights:
    w1: float = 1.0
    w2: float = 1.0
    w3: float = 1.0
    w4: float = 1.0

    def __post_init__(self):
        if min(self.w1, self.w2, self.w3, self.w4) < 0:
            raise ConfigError("branch weights must be non-negative")
        if self.w1 <= 0:
            raise ConfigError("the real-data branch weight w1 must be positive")


@dataclass
class PseudoLabelBatch:
    source_head: int
    hard_labels: np.ndarray
    soft_probs: np.ndarray = None  # populated in soft-label mode


@dataclass
class DMLNet:
    trunk: "layers.ParamBundle"
    head_real_on_real: "layers.ParamBundle"
    head_real_on_aux: "layers.ParamBundle"
    head_aux_on_real: "layers.ParamBundle"
    head_aux_on_aux: "layers.ParamBundle"
    real_label_space: tuple = ()
    aux_label_space: tuple = ()

    def heads(self):
        return {BRANCH_REAL_ON_REAL: self.head_real_on_real,
                BRANCH_REAL_ON_AUX: self.head_real_on_aux,
                BRANCH_AUX_ON_REAL: self.head_aux_on_real,
                BRANCH_AUX_ON_AUX: self.head_aux_on_aux}

    def bundles(self):
        return [self.trunk, self.head_real_on_real, self.head_real_on_aux,
                self.head_aux_on_real, self.head_aux_on_aux]

    def arrays(self):
        out = []
        for b in self.bundles():
            out.extend(b.arrays())
        return out

    def copy(self):
        return DMLNet(*[b.copy() for b in self.bundles()],
                      real_label_space=self.real_label_space,
                      aux_label_space=self.aux_label_space)

    def checksum(self):
        return hash(tuple(a.tobytes() for a in self.arrays()))


@dataclass
class _GradPack:
    packs: list

    def arrays(self):
        out = []
        for g in self.packs:
            out.extend(g.arrays())
        return out


def build_dml(input_dim, real_classes, aux_classes, seed, trunk_activation="relu",
              real_labels=(), aux_labels=(), trunk_units=TRUNK_UNITS):
    """Trunk (512, 256) plus four single-layer softmax heads; deterministic init.

    `trunk_units` exists for small-net gradient checks; production nets keep
    the default sizes.
    """
    if min(real_classes, aux_classes) < 2:
        raise ConfigError("class counts must be >= 2 for softmax heads")
    dims = (input_dim,) + tuple(trunk_units)
    trunk_specs = [LayerSpec(dims[i], dims[i + 1], trunk_activation)
                   for i in range(len(dims) - 1)]
    head_dims = (real_classes, real_classes, aux_classes, aux_classes)
    parts = [layers.init_params(trunk_specs, substream(seed, STREAM_INIT, 0).integers(2 ** 31))]
    for i, n in enumerate(head_dims):
        spec = [LayerSpec(dims[-1], n, "softmax")]
        parts.append(layers.init_params(spec, substream(seed, STREAM_INIT, 1 + i).integers(2 ** 31)))
    return DMLNet(*parts, real_label_space=tuple(real_labels), aux_label_space=tuple(aux_labels))


def pseudo_labels(net, teacher, batch, soft=False):
    """Hard argmax labels from a frozen teacher head (branch 1 or 4).

    Ties break to the lowest class index.
    """
    if teacher not in (BRANCH_REAL_ON_REAL, BRANCH_AUX_ON_AUX):
        raise ConfigError(f"pseudo-label teacher must be branch 1 or 4, got {teacher}")
    trunk_out = layers.forward(net.trunk, batch).output
    probs = layers.forward(net.heads()[teacher], trunk_out).output
    hard = probs.argmax(axis=1)  # np.argmax returns the first (lowest) max index
    return PseudoLabelBatch(teacher, hard, probs.copy() if soft else None)


def _branch_loss_and_grads(head, trunk_out_cache, labels, soft_probs=None):
    """CE loss of one head on given targets; returns (loss, head grads, d(trunk_out))."""
    cache = layers.forward(head, trunk_out_cache)
    probs = cache.output
    if soft_probs is not None:
        # soft pseudo-labels: mean cross-entropy against the teacher distribution
        floored = np.maximum(probs, layers.PROB_FLOOR)
        loss = float(-(soft_probs * np.log(floored)).sum(axis=1).mean())
        gout = -soft_probs / (floored * len(probs))
    else:
        loss = layers.mean_cross_entropy(probs, labels)
        gout = layers.cross_entropy_probs_grad(probs, labels)
    grads = layers.backprop(head, cache, gout)
    return loss, grads, grads.input_grad


@dataclass
class DmlStepReport:
    loss_real: float = 0.0         # branch 1
    loss_real_on_aux: float = 0.0  # branch 2
    loss_aux_on_real: float = 0.0  # branch 3
    loss_aux: float = 0.0          # branch 4
    total: float = 0.0
    pseudo_real: PseudoLabelBatch = None  # teacher 1 labels for the aux batch
    pseudo_aux: PseudoLabelBatch = None   # teacher 4 labels for the real batch


def dml_loss_and_grads(net, real_batch, aux_batch, weights, soft_pseudo=False,
                       aux_labeled=True, fixed_pseudo=None):
    """Composite loss and gradients over all four branches, no update applied.

    real_batch/aux_batch are (features, int labels) pairs; either may be
    empty.  Pseudo-labels come from the current (pre-update) teachers, or
    from `fixed_pseudo` = (pseudo_real, pseudo_aux) when the caller wants
    them held constant (gradient checking).  `aux_labeled=False` drops
    branch 4 (an auxiliary batch with no labels in the aux space).
    """
    x_real, y_real = real_batch if real_batch is not None else (None, None)
    x_aux, y_aux = aux_batch if aux_batch is not None else (None, None)
    has_real = x_real is not None and len(x_real) > 0
    has_aux = x_aux is not None and len(x_aux) > 0

    report = DmlStepReport()
    trunk_grads = layers.zero_grads(net.trunk)
    head_grads = {b: layers.zero_grads(h) for b, h in net.heads().items()}

    real_cache = layers.forward(net.trunk, x_real) if has_real else None
    aux_cache = layers.forward(net.trunk, x_aux) if has_aux else None

    # pseudo-labels captured before any update (teachers frozen for this step)
    if fixed_pseudo is not None:
        report.pseudo_real, report.pseudo_aux = fixed_pseudo
    else:
        if has_real:
            t_probs = layers.forward(net.head_aux_on_aux, real_cache.output).output
            report.pseudo_aux = PseudoLabelBatch(BRANCH_AUX_ON_AUX, t_probs.argmax(axis=1),
                                                 t_probs.copy() if soft_pseudo else None)
        if has_aux:
            t_probs = layers.forward(net.head_real_on_real, aux_cache.output).output
            report.pseudo_real = PseudoLabelBatch(BRANCH_REAL_ON_REAL, t_probs.argmax(axis=1),
                                                  t_probs.copy() if soft_pseudo else None)

    d_real = np.zeros_like(real_cache.output) if has_real else None
    d_aux = np.zeros_like(aux_cache.output) if has_aux else None

    # ground-truth branches first (1, 4), then pseudo-label branches (2, 3)
    if has_real:
        loss, grads, din = _branch_loss_and_grads(net.head_real_on_real,
                                                  real_cache.output, y_real)
        report.loss_real = loss
        if weights.w1 != 0.0:
            layers.accumulate(head_grads[BRANCH_REAL_ON_REAL], grads, weights.w1)
            d_real += weights.w1 * din
    if has_aux and aux_labeled:
        loss, grads, din = _branch_loss_and_grads(net.head_aux_on_aux,
                                                  aux_cache.output, y_aux)
        report.loss_aux = loss
        if weights.w4 != 0.0:
            layers.accumulate(head_grads[BRANCH_AUX_ON_AUX], grads, weights.w4)
            d_aux += weights.w4 * din
    if has_aux:
        pl = report.pseudo_real
        loss, grads, din = _branch_loss_and_grads(net.head_real_on_aux, aux_cache.output,
                                                  pl.hard_labels, soft_probs=pl.soft_probs)
        report.loss_real_on_aux = loss
        if weights.w2 != 0.0:
            layers.accumulate(head_grads[BRANCH_REAL_ON_AUX], grads, weights.w2)
            d_aux += weights.w2 * din
    if has_real:
        pl = report.pseudo_aux
        loss, grads, din = _branch_loss_and_grads(net.head_aux_on_real, real_cache.output,
                                                  pl.hard_labels, soft_probs=pl.soft_probs)
        report.loss_aux_on_real = loss
        if weights.w3 != 0.0:
            layers.accumulate(head_grads[BRANCH_AUX_ON_REAL], grads, weights.w3)
            d_real += weights.w3 * din

    if has_real and np.any(d_real):
        layers.accumulate(trunk_grads, layers.backprop(net.trunk, real_cache, d_real))
    if has_aux and np.any(d_aux):
        layers.accumulate(trunk_grads, layers.backprop(net.trunk, aux_cache, d_aux))

    report.total = (weights.w1 * report.loss_real + weights.w4 * report.loss_aux
                    + weights.w2 * report.loss_real_on_aux
                    + weights.w3 * report.loss_aux_on_real)
    if not np.isfinite(report.total):
        raise TrainingError("non-finite multitask loss")

    pack = _GradPack([trunk_grads] + [head_grads[b] for b in
                                      (BRANCH_REAL_ON_REAL, BRANCH_REAL_ON_AUX,
                                       BRANCH_AUX_ON_REAL, BRANCH_AUX_ON_AUX)])
    return report, pack


def dml_step(net, real_batch, aux_batch, weights, state, hyper,
             soft_pseudo=False, aux_labeled=True):
    """One composite Adam update of the trunk and all heads; returns the report."""
    report, pack = dml_loss_and_grads(net, real_batch, aux_batch, weights,
                                      soft_pseudo=soft_pseudo, aux_labeled=aux_labeled)
    adam_step_inplace(state, net, pack, hyper)
    return report


def classify(net, features, ensemble=False):
    """Predicted labels + class probabilities from the real-data head (branch 1).

    With `ensemble`, averages the two real-label heads' probabilities.
    """
    trunk_out = layers.forward(net.trunk, features).output
    probs = layers.forward(net.head_real_on_real, trunk_out).output
    if ensemble:
        probs = 0.5 * (probs + layers.forward(net.head_real_on_aux, trunk_out).output)
    return probs.argmax(axis=1), probs


def warm_start(target, source):
    """Copy trunk + branch-1 head from `source`; keep `target`'s other heads fresh."""
    if [s for s in target.trunk.specs] != [s for s in source.trunk.specs]:
        raise ConfigError("warm start needs identical trunk shapes")
    if target.head_real_on_real.specs != source.head_real_on_real.specs:
        raise ConfigError("warm start needs an identical real-label head shape")
    out = target.copy()
    out.trunk = source.trunk.copy()
    out.head_real_on_real = source.head_real_on_real.copy()
    return out


@dataclass
class DmlEpochLog:
    stage: str
    epoch: int
    loss_real: float
    loss_real_on_aux: float
    loss_aux_on_real: float
    loss_aux: float
    total: float
    val_accuracy: float


def _validation_accuracy(net, val_x, val_y):
    preds, _ = classify(net, val_x)
    return float((preds == val_y).mean())


def _cycled(matrix, labels, perm, start, size):
    idx = np.take(perm, np.arange(start, start + size), mode="wrap")
    return np.ascontiguousarray(matrix[idx]), labels[idx]


def _train_stage(net, stage, real, aux, weights, config, rng_real, rng_aux,
                 val_x, val_y, hyper, aux_unlabeled_games=None, rng_games=None):
    """Run one training stage; returns (best net copy, best accuracy, logs)."""
    x_real = real.features_matrix()
    y_real = real.label_indices()
    n_real = len(real)
    x_aux = aux.features_matrix() if aux is not None else None
    y_aux = aux.label_indices() if aux is not None else None
    n_aux = len(aux) if aux is not None else 0
    x_games = aux_unlabeled_games.features_matrix() if aux_unlabeled_games is not None else None
    n_games = len(aux_unlabeled_games) if aux_unlabeled_games is not None else 0

    batch_real = min(config.dml_batch_size, n_real)
    batch_aux = min(config.dml_batch_size, n_aux) if n_aux else 0
    iterations = max(math.ceil(n_real / batch_real),
                     math.ceil(n_aux / batch_aux) if n_aux else 0)
    state = AdamState(0, [np.zeros_like(a) for a in net.arrays()],
                      [np.zeros_like(a) for a in net.arrays()])
    best_net = net.copy()
    best_acc = -1.0
    logs = []
    for epoch in range(config.dml_epochs):
        perm_real = rng_real.permutation(n_real)
        perm_aux = rng_aux.permutation(n_aux) if n_aux else None
        perm_games = rng_games.permutation(n_games) if n_games else None
        sums = np.zeros(5)
        for it in range(iterations):
            rb = _cycled(x_real, y_real, perm_real, it * batch_real, batch_real)
            ab, labeled = None, True
            if n_aux:
                ab = _cycled(x_aux, y_aux, perm_aux, it * batch_aux, batch_aux)
                if n_games and it % 2 == 1:
                    gb = _cycled(x_games, np.zeros(n_games, dtype=int), perm_games,
                                 (it // 2) * batch_aux, batch_aux)
                    ab, labeled = (gb[0], np.zeros(len(gb[0]), dtype=int)), False
            try:
                rep = dml_step(net, rb, ab, weights, state, hyper,
                               soft_pseudo=config.soft_pseudo_labels, aux_labeled=labeled)
            except TrainingError as exc:
                raise TrainingError(f"{exc} (stage {stage}, epoch {epoch})",
                                    epoch=epoch) from None
            sums += (rep.loss_real, rep.loss_real_on_aux, rep.loss_aux_on_real,
                     rep.loss_aux, rep.total)
        val_acc = _validation_accuracy(net, val_x, val_y)
        means = [float(v) for v in sums / iterations]
        logs.append(DmlEpochLog(stage, epoch, *means, val_acc))
        if val_acc > best_acc:
            best_acc = val_acc
            best_net = net.copy()
    return best_net, best_acc, logs


def _branch_weights(config, generated_stage=False):
    w2 = config.branch_weight_real_on_aux
    w4 = config.branch_weight_aux
    if generated_stage:
        w2 *= config.generated_branch_weight
        w4 *= config.generated_branch_weight
    return BranchWeights(config.branch_weight_real, w2,
                         config.branch_weight_aux_on_real, w4)


def train_dml(mode, real_fewshot, aux_games, aux_generated, val_set, config, seed,
              warm_from=None):
    """Train per the requested mode; returns (net, epoch logs).

    The returned net carries the weights of the epoch with the best
    validation accuracy (earliest epoch on ties).
    """
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES}")
    if real_fewshot is None or len(real_fewshot) == 0:
        raise DatasetError("few-shot training set must be non-empty")
    if val_set is None or len(val_set) == 0:
        raise DatasetError("validation set must be non-empty")
    if val_set.domains() != ["real_aerial"]:
        raise DatasetError("validation records must come from the real_aerial domain")
    if val_set.label_space != real_fewshot.label_space:
        raise DatasetError("validation and training label spaces must match")
    if mode == "games" and aux_games is None:
        raise ConfigError("games mode needs a game dataset")
    if mode == "generated" and aux_generated is None:
        raise ConfigError("generated mode needs a generated dataset")
    if mode == "games_plus_generated":
        if aux_generated is None:
            raise ConfigError("games_plus_generated mode needs a generated dataset")
        if aux_games is None and warm_from is None:
            raise ConfigError(
                "games_plus_generated mode needs a game dataset or a warm-start net")

    real_labels = real_fewshot.label_space
    val_x = val_set.features_matrix()
    val_y = val_set.label_indices()
    hyper = AdamHyper(learning_rate=config.dml_lr, beta1=config.dml_beta1,
                      beta2=config.beta2, epsilon=config.adam_epsilon,
                      weight_decay=config.weight_decay, grad_clip=config.grad_clip)

    def fresh_net(aux_labels, build_seed):
        aux_n = max(len(aux_labels), len(real_labels), 2)
        return build_dml(real_fewshot.dim, len(real_labels), aux_n, build_seed,
                         trunk_activation=config.trunk_activation,
                         real_labels=real_labels, aux_labels=aux_labels)

    if mode in ("baseline", "games", "generated"):
        aux = aux_games if mode == "games" else aux_generated if mode == "generated" else None
        aux_labels = aux.label_space if aux is not None else real_labels
        net = fresh_net(aux_labels, seed)
        weights = _branch_weights(config, generated_stage=False)
        best, _, logs = _train_stage(net, mode, real_fewshot, aux, weights, config,
                                     substream(seed, STREAM_BATCH),
                                     substream(seed, STREAM_AUX_BATCH),
                                     val_x, val_y, hyper)
        return best, logs

    # games_plus_generated: stage A on games (or a provided warm source), then
    # warm-started fine-tuning on generated data
    logs = []
    if warm_from is not None:
        source = warm_from
    else:
        stage_a = fresh_net(aux_games.label_space, seed)
        source, _, logs_a = _train_stage(stage_a, "games", real_fewshot, aux_games,
                                         _branch_weights(config), config,
                                         substream(seed, STREAM_BATCH),
                                         substream(seed, STREAM_AUX_BATCH),
                                         val_x, val_y, hyper)
        logs.extend(logs_a)
    stage_b_seed = int(substream(seed, STREAM_STAGE2, 0).integers(2 ** 31))
    target = fresh_net(aux_generated.label_space, stage_b_seed)
    net = warm_start(target, source)
    include_games = aux_games if config.include_games_in_finetune else None
    best, _, logs_b = _train_stage(net, "finetune", real_fewshot, aux_generated,
                                   _branch_weights(config, generated_stage=True), config,
                                   substream(seed, STREAM_STAGE2, 1),
                                   substream(seed, STREAM_STAGE2, 2),
                                   val_x, val_y, hyper,
                                   aux_unlabeled_games=include_games,
                                   rng_games=substream(seed, STREAM_STAGE2, 3))
    logs.extend(logs_b)
    return best, logs


def dml_log_to_csv(logs):
    """CSV rows: stage, epoch, per-branch losses, total, validation accuracy."""
    lines = ["stage,epoch,loss_real,loss_real_on_aux,loss_aux_on_real,loss_aux,"
             "total,val_accuracy"]
    for row in logs:
        lines.append(f"{row.stage},{row.epoch},{row.loss_real!r},{row.loss_real_on_aux!r},"
                     f"{row.loss_aux_on_real!r},{row.loss_aux!r},{row.total!r},"
                     f"{row.val_accuracy!r}")
    return "\n".join(lines) + "\n"
