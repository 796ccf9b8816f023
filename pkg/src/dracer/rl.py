"""Policy optimization: generalized advantage estimation and clipped-ratio
policy updates with hand-derived gradients.

The update maximizes

    E[min(rho * A, clip(rho, 1-eps, 1+eps) * A)] + c_H * E[H(pi)]
      - c_v * E[(V - R)^2] - l2 * ||theta||^2

where rho is the probability ratio against the sampling policy. Advantages
are normalized to zero mean and unit variance once per update (std floored
at 1e-8). Minibatches are reshuffled every epoch. Parameters step with Adam.
A non-finite loss or gradient aborts the whole update and restores the
parameters that preceded it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dracer.config import TrainerConfig
from dracer.nets import PolicyValueNets, softmax

__all__ = [
    "compute_gae",
    "log_softmax",
    "entropy",
    "sample_action",
    "clipped_surrogate",
    "Adam",
    "UpdateDiagnostics",
    "PPOTrainer",
    "policy_forward",
    "value_forward",
]


def compute_gae(rewards, values, dones, gamma: float, lam: float):
    """Return (advantages, returns) for one trajectory segment.

    ``values`` carries one bootstrap entry beyond the final step. ``dones``
    marks environment termination; the value beyond a terminal step does not
    participate. Accumulation runs in float64 regardless of input dtype.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones)
    t_len = rewards.shape[0]
    if values.shape[0] != t_len + 1:
        raise ValueError(f"values must have length {t_len + 1}, got {values.shape[0]}")
    if dones.shape[0] != t_len:
        raise ValueError(f"dones must have length {t_len}, got {dones.shape[0]}")
    advantages = np.empty(t_len, dtype=np.float64)
    acc = 0.0
    for t in range(t_len - 1, -1, -1):
        nonterminal = 1.0 - float(dones[t])
        delta = rewards[t] + gamma * values[t + 1] * nonterminal - values[t]
        acc = delta + gamma * lam * nonterminal * acc
        advantages[t] = acc
    returns = advantages + values[:t_len]
    return advantages, returns


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def entropy(probs: np.ndarray) -> np.ndarray:
    """Row-wise Shannon entropy in nats; 0 log 0 taken as 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(probs > 0.0, probs * np.log(probs), 0.0)
    return -terms.sum(axis=-1)


def sample_action(probs: np.ndarray, rng) -> int:
    """Draw one action index from a single probability row."""
    p = np.asarray(probs, dtype=np.float64)
    p = p / p.sum()
    return int(rng.choice(p.shape[0], p=p))


def clipped_surrogate(rho, adv, eps):
    """Per-sample pessimistic surrogate min(rho*A, clip(rho, 1-eps, 1+eps)*A)."""
    return np.minimum(rho * adv, np.clip(rho, 1.0 - eps, 1.0 + eps) * adv)


def policy_forward(nets: PolicyValueNets, obs: np.ndarray, *, train=False, rng=None):
    """Return (probs, logits, log_probs) for a batch of observations."""
    logits = nets.policy.forward(obs, train=train, rng=rng)
    return softmax(logits), logits, log_softmax(logits)


def value_forward(nets: PolicyValueNets, obs: np.ndarray, *, train=False, rng=None):
    return nets.value.forward(obs, train=train, rng=rng)[:, 0]


class Adam:
    """Adam with bias correction; one slot pair per parameter."""

    def __init__(self, params: list, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.value -= (self.lr / bias1) * m / (np.sqrt(v / bias2) + self.eps)


@dataclass
class UpdateDiagnostics:
    """Pre-step diagnostics over the full batch plus the trained loss.

    ``mean_ratio`` and ``clip_frac`` come from a deterministic forward pass
    before any gradient step, so on-version data yields a mean ratio of 1.
    ``skipped`` is set when a non-finite loss aborted the update.
    """

    policy_loss: float
    value_loss: float
    entropy: float
    mean_ratio: float
    clip_frac: float
    skipped: bool = False


def _batch_arrays(batch: dict, dtype):
    obs = np.asarray(batch["obs"], dtype=dtype)
    actions = np.asarray(batch["actions"], dtype=np.int64)
    logp_old = np.asarray(batch["logp_old"], dtype=np.float64)
    advantages = np.asarray(batch["advantages"], dtype=np.float64)
    returns = np.asarray(batch["returns"], dtype=np.float64)
    n = obs.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    for name, arr in (("actions", actions), ("logp_old", logp_old),
                      ("advantages", advantages), ("returns", returns)):
        if arr.shape[0] != n:
            raise ValueError(f"batch field {name} has length {arr.shape[0]}, expected {n}")
    return obs, actions, logp_old, advantages, returns


def normalize_advantages(advantages: np.ndarray) -> np.ndarray:
    std = advantages.std()
    return (advantages - advantages.mean()) / max(float(std), 1e-8)


class PPOTrainer:
    """Owns the networks, the two Adam optimizers, and the update RNG."""

    def __init__(self, nets: PolicyValueNets, cfg: TrainerConfig, seed: int):
        self.nets = nets
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        self.opt_policy = Adam(nets.policy.params(), lr=cfg.learning_rate)
        self.opt_value = Adam(nets.value.params(), lr=cfg.learning_rate)

    # -- loss internals -----------------------------------------------------

    def _policy_grad_logits(self, probs, logp, actions, logp_old, adv):
        """Gradient of the per-sample policy loss (to minimize) w.r.t. logits.

        loss_i = -min(rho A, clip(rho) A) - c_H * H_i
        d min-branch / d logits = A * rho * (onehot - p) when the unclipped
        branch is active, zero otherwise (the clip is flat there).
        """
        n, k = probs.shape
        eps = self.cfg.clip_eps
        idx = np.arange(n)
        logp_a = logp[idx, actions]
        rho = np.exp(logp_a - logp_old)
        unclipped = rho * adv
        clipped = np.clip(rho, 1.0 - eps, 1.0 + eps) * adv
        surr = np.minimum(unclipped, clipped)
        active = (unclipped <= clipped).astype(probs.dtype)

        onehot = np.zeros_like(probs)
        onehot[idx, actions] = 1.0
        coef = (adv * rho * active).astype(probs.dtype)
        dsurr = coef[:, None] * (onehot - probs)

        h = entropy(probs)
        dent = -probs * (np.log(np.maximum(probs, 1e-38)) + h[:, None])

        dlogits = (-dsurr - self.cfg.entropy_coef * dent.astype(probs.dtype)) / n
        policy_loss = float(-surr.mean())
        return dlogits.astype(probs.dtype), policy_loss, float(h.mean())

    def _l2_terms(self):
        total = 0.0
        for p in self.nets.params():
            total += float(np.sum(p.value.astype(np.float64) ** 2))
        return total

    def loss_only(self, batch: dict, *, train=False, dropout_seed=None,
                  normalize=True) -> float:
        """Full scalar loss with no side effects; used by gradient checks.

        A fixed ``dropout_seed`` makes train-mode dropout masks reproducible
        so finite differences stay meaningful.
        """
        dtype = self.nets.params()[0].value.dtype
        obs, actions, logp_old, advantages, returns = _batch_arrays(batch, dtype)
        adv = normalize_advantages(advantages) if normalize else advantages
        rng_p = np.random.default_rng(dropout_seed) if dropout_seed is not None else None
        rng_v = np.random.default_rng(dropout_seed + 1) if dropout_seed is not None else None
        probs, _, logp = policy_forward(self.nets, obs, train=train, rng=rng_p)
        idx = np.arange(obs.shape[0])
        rho = np.exp(logp[idx, actions] - logp_old)
        eps = self.cfg.clip_eps
        surr = clipped_surrogate(rho, adv, eps)
        values = value_forward(self.nets, obs, train=train, rng=rng_v).astype(np.float64)
        value_mse = float(np.mean((values - returns) ** 2))
        loss = (-float(surr.mean())
                - self.cfg.entropy_coef * float(entropy(probs).mean())
                + self.cfg.value_coef * value_mse
                + self.cfg.l2_coef * self._l2_terms())
        return loss

    def compute_grads(self, batch: dict, *, train=False, dropout_seed=None,
                      normalize=True) -> float:
        """Populate parameter gradients for one minibatch; return the loss."""
        nets = self.nets
        dtype = nets.params()[0].value.dtype
        obs, actions, logp_old, advantages, returns = _batch_arrays(batch, dtype)
        adv = normalize_advantages(advantages) if normalize else advantages
        n = obs.shape[0]
        nets.zero_grads()

        rng_p = np.random.default_rng(dropout_seed) if dropout_seed is not None else None
        rng_v = np.random.default_rng(dropout_seed + 1) if dropout_seed is not None else None

        probs, _, logp = policy_forward(nets, obs, train=train, rng=rng_p)
        dlogits, policy_loss, ent = self._policy_grad_logits(probs, logp, actions, logp_old, adv)
        nets.policy.backward(dlogits)

        values = nets.value.forward(obs, train=train, rng=rng_v)
        resid = values[:, 0].astype(np.float64) - returns
        value_mse = float(np.mean(resid ** 2))
        dvalues = (self.cfg.value_coef * 2.0 * resid / n).astype(dtype)
        nets.value.backward(dvalues[:, None])

        for p in nets.params():
            p.grad += (2.0 * self.cfg.l2_coef) * p.value

        return (policy_loss - self.cfg.entropy_coef * ent
                + self.cfg.value_coef * value_mse
                + self.cfg.l2_coef * self._l2_terms())

    # -- the update ---------------------------------------------------------

    def evaluate_batch(self, batch: dict) -> UpdateDiagnostics:
        """Deterministic full-batch diagnostics without touching parameters."""
        dtype = self.nets.params()[0].value.dtype
        obs, actions, logp_old, advantages, returns = _batch_arrays(batch, dtype)
        adv = normalize_advantages(advantages)
        probs, _, logp = policy_forward(self.nets, obs)
        idx = np.arange(obs.shape[0])
        rho = np.exp(logp[idx, actions] - logp_old)
        eps = self.cfg.clip_eps
        surr = clipped_surrogate(rho, adv, eps)
        values = value_forward(self.nets, obs).astype(np.float64)
        return UpdateDiagnostics(
            policy_loss=float(-surr.mean()),
            value_loss=float(np.mean((values - returns) ** 2)),
            entropy=float(entropy(probs).mean()),
            mean_ratio=float(rho.mean()),
            clip_frac=float(np.mean(np.abs(rho - 1.0) > eps)),
        )

    def update(self, batch: dict) -> UpdateDiagnostics:
        """Run the configured epochs of minibatch steps over one batch."""
        cfg = self.cfg
        diags = self.evaluate_batch(batch)
        n = np.asarray(batch["obs"]).shape[0]

        snapshot = [p.value.copy() for p in self.nets.params()]
        opt_state = (self.opt_policy.t, [m.copy() for m in self.opt_policy.m],
                     [v.copy() for v in self.opt_policy.v],
                     self.opt_value.t, [m.copy() for m in self.opt_value.m],
                     [v.copy() for v in self.opt_value.v])

        obs = np.asarray(batch["obs"])
        actions = np.asarray(batch["actions"])
        logp_old = np.asarray(batch["logp_old"])
        # Normalized once over the whole batch; minibatch slices reuse it.
        advantages = normalize_advantages(np.asarray(batch["advantages"], dtype=np.float64))
        returns = np.asarray(batch["returns"])

        dropout = float(self.nets.spec.get("dropout_p", 0.0)) > 0.0
        for _ in range(cfg.epochs_per_update):
            order = self.rng.permutation(n)
            for start in range(0, n, cfg.minibatch_size):
                take = order[start : start + cfg.minibatch_size]
                mini = {
                    "obs": obs[take],
                    "actions": actions[take],
                    "logp_old": logp_old[take],
                    "advantages": advantages[take],
                    "returns": returns[take],
                }
                seed = int(self.rng.integers(0, 2**63 - 1)) if dropout else None
                loss = self.compute_grads(mini, train=dropout, dropout_seed=seed,
                                          normalize=False)
                if not np.isfinite(loss) or not all(
                    np.all(np.isfinite(p.grad)) for p in self.nets.params()
                ):
                    for p, saved in zip(self.nets.params(), snapshot):
                        p.value[...] = saved
                    (self.opt_policy.t, self.opt_policy.m, self.opt_policy.v,
                     self.opt_value.t, self.opt_value.m, self.opt_value.v) = opt_state
                    diags.skipped = True
                    return diags
                self.opt_policy.step()
                self.opt_value.step()
        return diags
