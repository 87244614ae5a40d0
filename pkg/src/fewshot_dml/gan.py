"""Conditional Wasserstein GAN with gradient penalty over feature vectors.

The generator maps (noise, ground feature) to a synthetic aerial feature;
the critic scores (feature, ground feature) pairs.  Both are conditioned by
concatenating the ground feature onto their input.  The critic minimizes

    mean D(G(z,c)|c) - mean D(x_real|c) + lambda * mean (||grad_m D(m|c)|| - 1)^2

with m = t * G(z,c) + (1-t) * c interpolated against the conditioning
features (t uniform per sample); the norm spans only the m part of the
critic input.  The generator minimizes -mean D(G(z,c)|c) plus a weighted
classification loss under a frozen few-shot classifier, using the ground
records' labels as targets.

Two documented deviations are switchable: `eq2_literal` keeps a log on the
critic's real-sample term (the log reads as a carryover from the plain
conditional-GAN objective and is dropped by default since a Wasserstein
critic is unbounded), and `interpolate_real_aerial` interpolates generated
vs real aerial features instead of generated vs ground.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import layers
from .data import Dataset, FeatureRecord
from .errors import ConfigError, DatasetError, ShapeError, TrainingError
from .layers import LayerSpec, gp_param_gradient
from .optim import AdamHyper, AdamState, adam_step_inplace
from .seeding import (STREAM_AUX_BATCH, STREAM_BATCH, STREAM_INIT, STREAM_INTERP,
                      STREAM_NOISE, STREAM_SYNTH_NOISE, substream)

_LOG_FLOOR = 1e-12  # clamp for the eq2_literal log term


@dataclass(frozen=True)
class GeneratorSpec:
    condition_dim: int
    output_dim: int
    noise_dim: int = 312
    hidden: tuple = (128, 128, 128)
    slope: float = 0.2

    def __post_init__(self):
        if len(self.hidden) != 3:
            raise ConfigError("generator takes exactly 4 dense layers (3 hidden sizes)")
        if min(self.noise_dim, self.condition_dim, self.output_dim, *self.hidden) < 1:
            raise ConfigError("generator dims must be positive")

    def layer_specs(self):
        dims = (self.noise_dim + self.condition_dim,) + self.hidden + (self.output_dim,)
        acts = ("leaky_relu", "leaky_relu", "leaky_relu", "relu")
        return tuple(LayerSpec(dims[i], dims[i + 1], acts[i], self.slope) for i in range(4))


@dataclass(frozen=True)
class CriticSpec:
    feature_dim: int
    condition_dim: int
    hidden: tuple = (128, 128, 128)
    slope: float = 0.2

    def __post_init__(self):
        if len(self.hidden) != 3:
            raise ConfigError("critic takes exactly 4 dense layers (3 hidden sizes)")
        if min(self.feature_dim, self.condition_dim, *self.hidden) < 1:
            raise ConfigError("critic dims must be positive")

    @property
    def input_dim(self):
        return self.feature_dim + self.condition_dim

    def layer_specs(self):
        dims = (self.input_dim,) + self.hidden + (1,)
        acts = ("leaky_relu", "leaky_relu", "leaky_relu", "linear")
        return tuple(LayerSpec(dims[i], dims[i + 1], acts[i], self.slope) for i in range(4))


@dataclass
class InterpolationSample:
    t: float
    m: np.ndarray
    condition: np.ndarray


@dataclass
class GanLossReport:
    critic_wasserstein_gap: float = 0.0
    gradient_penalty: float = 0.0
    generator_adversarial: float = 0.0
    classification_loss: float = 0.0


def _concat(a, b):
    return np.ascontiguousarray(np.concatenate([a, b], axis=1))


def _check_batches(gen_spec, ground_batch, other=None):
    ground_batch = np.atleast_2d(np.asarray(ground_batch, dtype=np.float64))
    if ground_batch.shape[1] != gen_spec.condition_dim:
        raise ShapeError(f"ground batch width {ground_batch.shape[1]} != "
                         f"condition dim {gen_spec.condition_dim}")
    if other is not None:
        other = np.atleast_2d(np.asarray(other, dtype=np.float64))
        if other.shape[0] != ground_batch.shape[0]:
            raise ShapeError("ground and aerial batches must have equal size")
    return ground_batch, other


def make_interpolates(gen_out, anchor, conditions, ts):
    """m = t * generated + (1 - t) * anchor, per sample; returns the samples."""
    ts = np.asarray(ts, dtype=np.float64)
    if np.any(ts < 0.0) or np.any(ts > 1.0):
        raise ShapeError("interpolation coefficients must lie in [0, 1]")
    m = ts[:, None] * gen_out + (1.0 - ts[:, None]) * anchor
    return [InterpolationSample(float(t), m[i], conditions[i]) for i, t in enumerate(ts)], m


def _interp_anchor(cfg_flag_real_aerial, gen_out, ground_batch, aerial_batch):
    if cfg_flag_real_aerial:
        return aerial_batch
    if ground_batch.shape[1] != gen_out.shape[1]:
        raise ConfigError(
            "generated/ground interpolation needs equal feature dims "
            f"({gen_out.shape[1]} vs {ground_batch.shape[1]}); use "
            "interpolate_real_aerial=true for unequal dims")
    return ground_batch


def critic_loss(gen, critic, ground_batch, aerial_batch, noise, lambda_gp, ts,
                eq2_literal=False, interpolate_real_aerial=False):
    """Critic objective value for fixed batches/noise/ts; pure.

    Returns (loss, GanLossReport).  `gen` and `critic` are (ParamBundle,
    spec-with-layer_specs) pairs as produced by build_gan.
    """
    (gen_net, gen_spec), (critic_net, critic_spec) = gen, critic
    ground_batch, aerial_batch = _check_batches(gen_spec, ground_batch, aerial_batch)
    gen_out = layers.forward(gen_net, _concat(noise, ground_batch)).output
    d_fake = layers.forward(critic_net, _concat(gen_out, ground_batch)).output[:, 0]
    d_real = layers.forward(critic_net, _concat(aerial_batch, ground_batch)).output[:, 0]
    if not (np.all(np.isfinite(d_fake)) and np.all(np.isfinite(d_real))):
        raise TrainingError("non-finite critic output")
    gap = float(d_fake.mean() - d_real.mean())
    if eq2_literal:
        base = float(d_fake.mean() - np.log(np.maximum(d_real, _LOG_FLOOR)).mean())
    else:
        base = gap
    penalty = 0.0
    if lambda_gp != 0.0:
        anchor = _interp_anchor(interpolate_real_aerial, gen_out, ground_batch, aerial_batch)
        _, m = make_interpolates(gen_out, anchor, ground_batch, ts)
        penalty, _, _ = gp_param_gradient(critic_net, _concat(m, ground_batch),
                                          norm_dims=critic_spec.feature_dim)
    loss = base + lambda_gp * penalty
    return loss, GanLossReport(critic_wasserstein_gap=gap, gradient_penalty=penalty)


def critic_grads(gen, critic, ground_batch, aerial_batch, noise, lambda_gp, ts,
                 eq2_literal=False, interpolate_real_aerial=False):
    """Critic-parameter gradients of critic_loss; generator is never touched."""
    (gen_net, gen_spec), (critic_net, critic_spec) = gen, critic
    ground_batch, aerial_batch = _check_batches(gen_spec, ground_batch, aerial_batch)
    n = ground_batch.shape[0]
    gen_out = layers.forward(gen_net, _concat(noise, ground_batch)).output

    fake_cache = layers.forward(critic_net, _concat(gen_out, ground_batch))
    real_cache = layers.forward(critic_net, _concat(aerial_batch, ground_batch))
    d_fake = fake_cache.output[:, 0]
    d_real = real_cache.output[:, 0]
    if not (np.all(np.isfinite(d_fake)) and np.all(np.isfinite(d_real))):
        raise TrainingError("non-finite critic output")

    total = layers.zero_grads(critic_net)
    layers.accumulate(total, layers.backprop(critic_net, fake_cache,
                                             np.full((n, 1), 1.0 / n)))
    if eq2_literal:
        gout = np.where(d_real > _LOG_FLOOR, -1.0 / (n * np.maximum(d_real, _LOG_FLOOR)), 0.0)
        layers.accumulate(total, layers.backprop(critic_net, real_cache, gout[:, None]))
        base = float(d_fake.mean() - np.log(np.maximum(d_real, _LOG_FLOOR)).mean())
    else:
        layers.accumulate(total, layers.backprop(critic_net, real_cache,
                                                 np.full((n, 1), -1.0 / n)))
        base = float(d_fake.mean() - d_real.mean())

    penalty = 0.0
    if lambda_gp != 0.0:
        anchor = _interp_anchor(interpolate_real_aerial, gen_out, ground_batch, aerial_batch)
        _, m = make_interpolates(gen_out, anchor, ground_batch, ts)
        penalty, gp_grads, _ = gp_param_gradient(critic_net, _concat(m, ground_batch),
                                                 norm_dims=critic_spec.feature_dim)
        layers.accumulate(total, gp_grads, weight=lambda_gp)

    gap = float(d_fake.mean() - d_real.mean())
    report = GanLossReport(critic_wasserstein_gap=gap, gradient_penalty=penalty)
    return total, base + lambda_gp * penalty, report


def generator_loss(gen, critic, classifier, ground_batch, ground_labels, noise, beta_cls):
    """Generator objective value: adversarial plus weighted classification; pure."""
    (gen_net, gen_spec), (critic_net, _) = gen, critic
    ground_batch, _ = _check_batches(gen_spec, ground_batch)
    labels = np.asarray(ground_labels, dtype=np.intp)
    gen_out = layers.forward(gen_net, _concat(noise, ground_batch)).output
    d_fake = layers.forward(critic_net, _concat(gen_out, ground_batch)).output[:, 0]
    adversarial = float(-d_fake.mean())
    cls_loss = 0.0
    if beta_cls != 0.0:
        probs = layers.forward(classifier, gen_out).output
        if labels.max(initial=-1) >= probs.shape[1]:
            raise DatasetError("label outside the classifier's label space")
        cls_loss = layers.mean_cross_entropy(probs, labels)
    return adversarial + beta_cls * cls_loss, GanLossReport(
        generator_adversarial=adversarial, classification_loss=cls_loss)


def generator_grads(gen, critic, classifier, ground_batch, ground_labels, noise, beta_cls):
    """Generator-parameter gradients; critic and classifier stay frozen."""
    (gen_net, gen_spec), (critic_net, _) = gen, critic
    ground_batch, _ = _check_batches(gen_spec, ground_batch)
    labels = np.asarray(ground_labels, dtype=np.intp)
    n = ground_batch.shape[0]
    gen_cache = layers.forward(gen_net, _concat(noise, ground_batch))
    gen_out = gen_cache.output
    out_dim = gen_out.shape[1]

    critic_cache = layers.forward(critic_net, _concat(gen_out, ground_batch))
    d_fake = critic_cache.output[:, 0]
    if not np.all(np.isfinite(d_fake)):
        raise TrainingError("non-finite critic output")
    adv_in = layers.backprop(critic_net, critic_cache,
                             np.full((n, 1), -1.0 / n)).input_grad[:, :out_dim]

    cls_loss = 0.0
    grad_at_gen_out = adv_in
    if beta_cls != 0.0:
        cls_cache = layers.forward(classifier, gen_out)
        probs = cls_cache.output
        if labels.max(initial=-1) >= probs.shape[1]:
            raise DatasetError("label outside the classifier's label space")
        cls_loss = layers.mean_cross_entropy(probs, labels)
        cls_in = layers.backprop(classifier, cls_cache,
                                 layers.cross_entropy_probs_grad(probs, labels)).input_grad
        grad_at_gen_out = adv_in + beta_cls * cls_in

    grads = layers.backprop(gen_net, gen_cache, grad_at_gen_out)
    adversarial = float(-d_fake.mean())
    report = GanLossReport(generator_adversarial=adversarial, classification_loss=cls_loss)
    return grads, adversarial + beta_cls * cls_loss, report


def pretrain_classifier(few_aerial, config, seed=0):
    """Train the frozen softmax classifier on the k-shot real aerial set."""
    if len(few_aerial) == 0:
        raise DatasetError("classifier needs a non-empty few-shot set")
    if few_aerial.domains() != ["real_aerial"]:
        raise DatasetError(f"classifier expects real_aerial records, got {few_aerial.domains()}")
    if len(few_aerial.label_space) < 2:
        raise DatasetError("softmax over fewer than 2 classes is degenerate")
    for label, positions in few_aerial.by_class().items():
        if not positions:
            raise DatasetError(f"class {label!r} has no examples")
    dims = (few_aerial.dim,) + tuple(config.classifier_hidden) + (len(few_aerial.label_space),)
    specs = [LayerSpec(dims[i], dims[i + 1],
                       "relu" if i < len(dims) - 2 else "softmax")
             for i in range(len(dims) - 1)]
    net = layers.init_params(specs, substream(seed, STREAM_INIT, 2).integers(2 ** 31))
    state = AdamState.for_bundle(net)
    hyper = AdamHyper(learning_rate=config.classifier_lr, beta1=config.classifier_beta1,
                      beta2=config.beta2, epsilon=config.adam_epsilon,
                      weight_decay=config.weight_decay, grad_clip=config.grad_clip)
    x = few_aerial.features_matrix()
    y = few_aerial.label_indices()
    for _ in range(config.classifier_steps):
        cache = layers.forward(net, x)
        grads = layers.backprop(net, cache, layers.cross_entropy_probs_grad(cache.output, y))
        adam_step_inplace(state, net, grads, hyper)
    return net


def build_gan(config, condition_dim, feature_dim, seed):
    """Fresh generator and critic nets plus their specs, seeded deterministically."""
    gen_spec = GeneratorSpec(condition_dim=condition_dim, output_dim=feature_dim,
                             noise_dim=config.noise_dim, hidden=tuple(config.gan_gen_hidden),
                             slope=config.leaky_slope)
    critic_spec = CriticSpec(feature_dim=feature_dim, condition_dim=condition_dim,
                             hidden=tuple(config.gan_critic_hidden), slope=config.leaky_slope)
    gen_net = layers.init_params(gen_spec.layer_specs(),
                                 substream(seed, STREAM_INIT, 0).integers(2 ** 31))
    critic_net = layers.init_params(critic_spec.layer_specs(),
                                    substream(seed, STREAM_INIT, 1).integers(2 ** 31))
    return (gen_net, gen_spec), (critic_net, critic_spec)


def train_wcgan(ground, few_aerial, config, seed, classifier=None):
    """Alternating critic/generator training; returns nets and per-epoch reports.

    One epoch is ceil(|ground| / batch) generator iterations, each preceded
    by n_critic critic steps on freshly sampled batches.
    """
    if ground.label_space != few_aerial.label_space:
        raise DatasetError("ground and aerial label spaces must match")
    if len(ground) == 0 or len(few_aerial) == 0:
        raise DatasetError("GAN training needs non-empty ground and aerial sets")
    if np.any(few_aerial.features_matrix() < 0.0):
        warnings.warn("real aerial features contain negative values; the generator's "
                      "final ReLU cannot reproduce them", stacklevel=2)

    gen, critic = build_gan(config, ground.dim, few_aerial.dim, seed)
    if classifier is None:
        classifier = pretrain_classifier(few_aerial, config, seed)

    gen_hyper = AdamHyper(learning_rate=config.gan_lr, beta1=config.gan_beta1,
                          beta2=config.beta2, epsilon=config.adam_epsilon,
                          weight_decay=config.weight_decay, grad_clip=config.grad_clip)
    critic_hyper = gen_hyper
    gen_state = AdamState.for_bundle(gen[0])
    critic_state = AdamState.for_bundle(critic[0])

    rng_ground = substream(seed, STREAM_BATCH)
    rng_aerial = substream(seed, STREAM_AUX_BATCH)
    rng_noise = substream(seed, STREAM_NOISE)
    rng_interp = substream(seed, STREAM_INTERP)

    x_ground = ground.features_matrix()
    y_ground = ground.label_indices()
    x_aerial = few_aerial.features_matrix()
    batch = min(config.gan_batch_size, len(ground), len(few_aerial))
    iters_per_epoch = math.ceil(len(ground) / batch)

    def sample(rng, matrix, size):
        idx = rng.choice(matrix.shape[0], size=size, replace=False)
        return idx, np.ascontiguousarray(matrix[idx])

    logs = []
    for epoch in range(config.gan_epochs):
        gap_sum = gp_sum = adv_sum = cls_sum = 0.0
        n_critic_steps = 0
        for _ in range(iters_per_epoch):
            for _ in range(config.n_critic):
                _, gb = sample(rng_ground, x_ground, batch)
                _, ab = sample(rng_aerial, x_aerial, batch)
                noise = rng_noise.standard_normal((batch, config.noise_dim))
                ts = rng_interp.uniform(0.0, 1.0, size=batch)
                grads, loss, report = critic_grads(
                    gen, critic, gb, ab, noise, config.lambda_gp, ts,
                    eq2_literal=config.eq2_literal,
                    interpolate_real_aerial=config.interpolate_real_aerial)
                if not np.isfinite(loss):
                    raise TrainingError(f"critic loss diverged at epoch {epoch}", epoch=epoch)
                adam_step_inplace(critic_state, critic[0], grads, critic_hyper)
                gap_sum += report.critic_wasserstein_gap
                gp_sum += report.gradient_penalty
                n_critic_steps += 1
            idx, gb = sample(rng_ground, x_ground, batch)
            noise = rng_noise.standard_normal((batch, config.noise_dim))
            grads, loss, report = generator_grads(
                gen, critic, classifier, gb, y_ground[idx], noise, config.beta_cls)
            if not np.isfinite(loss):
                raise TrainingError(f"generator loss diverged at epoch {epoch}", epoch=epoch)
            adam_step_inplace(gen_state, gen[0], grads, gen_hyper)
            adv_sum += report.generator_adversarial
            cls_sum += report.classification_loss
        logs.append(GanLossReport(
            critic_wasserstein_gap=gap_sum / n_critic_steps,
            gradient_penalty=gp_sum / n_critic_steps,
            generator_adversarial=adv_sum / iters_per_epoch,
            classification_loss=cls_sum / iters_per_epoch))
    return gen, critic, classifier, logs


def synthesize_features(gen, ground, per_record, seed):
    """Emit per_record generated records per ground record, labels copied over."""
    gen_net, gen_spec = gen
    if per_record < 0:
        raise ConfigError(f"per_record must be >= 0, got {per_record}")
    if per_record == 0 or len(ground) == 0:
        return Dataset([], label_space=ground.label_space)
    rng = substream(seed, STREAM_SYNTH_NOISE)
    x = ground.features_matrix()
    conditions = np.repeat(x, per_record, axis=0)
    noise = rng.standard_normal((conditions.shape[0], gen_spec.noise_dim))
    feats = layers.forward(gen_net, _concat(noise, conditions)).output
    records = []
    row = 0
    for r in ground.records:
        for j in range(per_record):
            records.append(FeatureRecord(f"gen_{r.id}_{j:02d}", r.label,
                                         "generated_aerial", feats[row]))
            row += 1
    return Dataset(records, label_space=ground.label_space)


def gan_log_to_csv(logs):
    """CSV rows: epoch, critic_wasserstein_gap, gradient_penalty, generator_adversarial, classification_loss."""
    lines = ["epoch,critic_wasserstein_gap,gradient_penalty,generator_adversarial,classification_loss"]
    for i, rep in enumerate(logs):
        lines.append(f"{i},{rep.critic_wasserstein_gap!r},{rep.gradient_penalty!r},"
                     f"{rep.generator_adversarial!r},{rep.classification_loss!r}")
    return "\n".join(lines) + "\n"
