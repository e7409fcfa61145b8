# services/optim.py
# Cosine learning-rate decay plus functional Adam and RMSprop updates on the flat parameter vector.

import math

import numpy as np

from errors import NumericalError, StructuralError
from models.network import AdamState, LrSchedule, NetworkParams, OptimizerState, RmspropState


def cosine_lr(schedule: LrSchedule, step: int) -> float:
    """initial_lr * (1 + cos(pi * min(t, T) / T)) / 2."""
    if step < 0:
        raise ValueError("step must be non-negative")
    t = min(step, schedule.total_steps)
    return max(0.0, schedule.initial_lr * 0.5 * (1.0 + math.cos(math.pi * t / schedule.total_steps)))


def init_adam(params: NetworkParams, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    n = params.total_count
    return AdamState(first_moment=np.zeros(n), second_moment=np.zeros(n), beta1=beta1, beta2=beta2, eps=eps)


def init_rmsprop(params: NetworkParams, decay: float = 0.9, eps: float = 1e-8) -> RmspropState:
    return RmspropState(second_moment=np.zeros(params.total_count), decay=decay, eps=eps)


def init_optimizer(tag: str, params: NetworkParams) -> OptimizerState:
    if tag == "adam":
        return init_adam(params)
    if tag == "rmsprop":
        return init_rmsprop(params)
    raise ValueError(f"unknown optimizer {tag!r}")


def _check(params: NetworkParams, moments: np.ndarray, grads: np.ndarray) -> np.ndarray:
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != params.values.shape or moments.shape != params.values.shape:
        raise StructuralError("gradient, moments and parameters must have the same length")
    if not np.all(np.isfinite(grads)):
        raise NumericalError("non-finite gradient passed to the optimizer", node="optimizer")
    return grads


def adam_step(params: NetworkParams, state: AdamState, grads: np.ndarray, lr: float) -> tuple[NetworkParams, AdamState]:
    """One bias-corrected Adam update. Inputs are left untouched."""
    g = _check(params, state.first_moment, grads)
    step = state.step + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * g
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1 ** step)
    v_hat = v / (1.0 - state.beta2 ** step)
    values = params.values - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = state.model_copy(update={"first_moment": m, "second_moment": v, "step": step})
    return params.with_values(values), new_state


def rmsprop_step(params: NetworkParams, state: RmspropState, grads: np.ndarray, lr: float) -> tuple[NetworkParams, RmspropState]:
    g = _check(params, state.second_moment, grads)
    v = state.decay * state.second_moment + (1.0 - state.decay) * g * g
    values = params.values - lr * g / (np.sqrt(v) + state.eps)
    return params.with_values(values), state.model_copy(update={"second_moment": v, "step": state.step + 1})


def optimizer_step(params: NetworkParams, state: OptimizerState, grads: np.ndarray, lr: float):
    if isinstance(state, AdamState):
        return adam_step(params, state, grads, lr)
    return rmsprop_step(params, state, grads, lr)
