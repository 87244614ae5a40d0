"""Adam optimizer and gradient checking.

The finite-difference checker is the verification oracle for every loss
in this package: it knows nothing about how analytic gradients are
computed and only re-evaluates the loss at perturbed parameters.
"""

from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from .errors import ConfigError, InputError, ShapeError, TrainingError


@dataclass(frozen=True)
class AdamHyper:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0  # L2 term added to gradients; 0 disables
    grad_clip: float = 0.0     # global-norm clip; 0 disables

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("beta1 and beta2 must be in [0, 1)")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if self.weight_decay < 0 or self.grad_clip < 0:
            raise ConfigError("weight_decay and grad_clip must be >= 0")


@dataclass
class AdamState:
    step_count: int
    first_moment: list
    second_moment: list

    @classmethod
    def for_bundle(cls, bundle):
        arrays = bundle.arrays()
        return cls(0, [np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])

    def copy(self):
        return AdamState(self.step_count,
                         [m.copy() for m in self.first_moment],
                         [v.copy() for v in self.second_moment])


def _check_grads(param_arrays, grad_arrays, hyper):
    if len(param_arrays) != len(grad_arrays):
        raise ShapeError("gradient structure does not match parameters")
    for i, (p, g) in enumerate(zip(param_arrays, grad_arrays)):
        if p.shape != g.shape:
            raise ShapeError(f"gradient {i} has shape {g.shape}, expected {p.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in layer {i // 2}", layer=i // 2)
    if hyper.weight_decay > 0.0:
        grad_arrays = [g + hyper.weight_decay * p for p, g in zip(param_arrays, grad_arrays)]
    if hyper.grad_clip > 0.0:
        norm = np.sqrt(sum(float((g * g).sum()) for g in grad_arrays))
        if norm > hyper.grad_clip:
            scale = hyper.grad_clip / norm
            grad_arrays = [g * scale for g in grad_arrays]
    return grad_arrays


def adam_step(state, params, grads, hyper):
    """One Adam update; returns (new_state, new_params) without mutating inputs."""
    new_params = params.copy()
    new_state = state.copy()
    adam_step_inplace(new_state, new_params, grads, hyper)
    for i, a in enumerate(new_params.arrays()):
        if not np.all(np.isfinite(a)):
            raise TrainingError(f"non-finite parameter in layer {i // 2} after update",
                                layer=i // 2)
    return new_state, new_params


def adam_step_inplace(state, params, grads, hyper):
    """In-place Adam update used by training loops; same math as adam_step."""
    param_arrays = params.arrays()
    grad_arrays = _check_grads(param_arrays, grads.arrays(), hyper)
    state.step_count += 1
    kernels.adam_update(param_arrays, grad_arrays,
                        state.first_moment, state.second_moment,
                        state.step_count, hyper.learning_rate,
                        hyper.beta1, hyper.beta2, hyper.epsilon)


def finite_diff_gradcheck(loss_fn, params, analytic, step=1e-5, abs_floor=1e-6):
    """Worst relative disagreement between central differences and `analytic`.

    ``loss_fn(params) -> float`` must be pure.  Per parameter the relative
    error is |fd - an| / max(|fd|, |an|, abs_floor); the floor means two
    gradients agreeing to ~1e-11 absolute count as matching even when both
    are essentially zero.  Cost is two loss evaluations per parameter, so
    this is for small nets only.
    """
    base = float(loss_fn(params))
    if not np.isfinite(base):
        raise InputError("loss is not finite at the given parameters")
    work = params.copy()
    work_arrays = work.arrays()
    analytic_arrays = analytic.arrays()
    worst = 0.0
    for arr, an in zip(work_arrays, analytic_arrays):
        flat = arr.reshape(-1)
        an_flat = an.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            up = float(loss_fn(work))
            flat[j] = orig - step
            down = float(loss_fn(work))
            flat[j] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise InputError("loss is not finite near the given parameters")
            fd = (up - down) / (2.0 * step)
            err = abs(fd - an_flat[j]) / max(abs(fd), abs(an_flat[j]), abs_floor)
            worst = max(worst, err)
    return worst
