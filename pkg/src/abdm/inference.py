"""The two amortized decision-making algorithms.

NPE-MC first fits a conditional mixture density to the (theta, x) pairs by
maximum likelihood, then scores actions by Monte-Carlo averaging the cost
over posterior samples. BAM skips the posterior entirely: a feedforward
network takes (x, a) and regresses onto realized costs c(theta, a) with
squared error, which converges to the posterior-expected cost; scoring an
action is then a single forward pass.

Both trainings are deterministic given (dataset, config, seed) and follow
the same recipe: Adam, minibatches of 500, the dataset's fixed 90:10
split, and early stopping on validation loss with the best parameters
restored.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import AbdmError, Dataset, TaskId, split_seed
from .costs import CostSpec, cost_fn_for
from .nets import MDN, MLP, AdamState, adam_step, grad_loss, load_model, save_model
from .simulators import project_to_support

ACTION_GRID_SIZE = 1000

RESAMPLE = "resample"


class TrainingDivergedError(AbdmError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"non-finite loss at epoch {epoch} ({loss})")
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 500
    max_epochs: int = 500
    patience: int = 20
    mdn_components: int = 5
    # "resample" draws one fresh action per pair every epoch; an integer N
    # fixes N pre-drawn actions per pair for the whole run.
    actions_per_pair: object = RESAMPLE
    mc_samples: int = 1000

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.max_epochs <= 0:
            raise ValueError("learning rate, batch size, and epochs must be positive")
        if not 0 < self.patience < self.max_epochs:
            raise ValueError("patience must be positive and below max_epochs")
        if self.actions_per_pair != RESAMPLE and (
            not isinstance(self.actions_per_pair, int) or self.actions_per_pair < 1
        ):
            raise ValueError("actions_per_pair is 'resample' or a positive integer")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be positive")

    @classmethod
    def for_task(cls, task: TaskId, **overrides) -> "TrainConfig":
        # Lotka-Volterra trains with a higher rate; all other tasks use 1e-3.
        lr = 5e-3 if task is TaskId.LOTKA_VOLTERRA else 1e-3
        cfg = cls(learning_rate=lr)
        return replace(cfg, **overrides) if overrides else cfg


@dataclass(frozen=True)
class ActionSpace:
    actions: np.ndarray
    continuous: bool

    @classmethod
    def for_task(cls, task: TaskId) -> "ActionSpace":
        if task.discrete_actions:
            return cls(np.arange(3), False)
        return cls(np.linspace(0.0, 100.0, ACTION_GRID_SIZE), True)


@dataclass(frozen=True)
class UniformActions:
    lo: float = 0.0
    hi: float = 100.0

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, n)

    def columns(self, actions) -> np.ndarray:
        mean = 0.5 * (self.lo + self.hi)
        std = (self.hi - self.lo) / np.sqrt(12.0)
        return ((np.asarray(actions, dtype=float) - mean) / std)[:, None]

    descriptor = "uniform_0_100"


@dataclass(frozen=True)
class DiscreteActions:
    n_actions: int = 3

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.integers(0, self.n_actions, n)

    def columns(self, actions) -> np.ndarray:
        idx = np.asarray(actions, dtype=int)
        out = np.zeros((idx.size, self.n_actions))
        out[np.arange(idx.size), idx] = 1.0
        return out

    descriptor = "discrete_3"


def action_distribution_for(task: TaskId):
    return DiscreteActions() if task.discrete_actions else UniformActions()


def _action_dist_from_descriptor(desc: str):
    if desc == UniformActions.descriptor:
        return UniformActions()
    if desc == DiscreteActions.descriptor:
        return DiscreteActions()
    raise AbdmError(f"unknown action distribution {desc!r}")


def _fit_standardizer(arr: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = arr.mean(axis=0)
    std = arr.std(axis=0)
    return mean, np.where(std < 1e-8, 1.0, std)


def _early_stopped_training(step_epoch, eval_val, params, max_epochs, patience):
    """Shared loop: per-epoch update, validation tracking, best restore.

    Returns (curve, best_epoch) where curve rows are
    (epoch, train_loss, val_loss).
    """
    best_val = np.inf
    best_params = None
    best_epoch = -1
    since_best = 0
    curve = []
    for epoch in range(max_epochs):
        try:
            train_loss = step_epoch(epoch)
            val_loss = eval_val()
        except FloatingPointError:
            raise TrainingDivergedError(epoch, float("nan")) from None
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise TrainingDivergedError(epoch, train_loss)
        curve.append((epoch, train_loss, val_loss))
        if val_loss < best_val:
            best_val = val_loss
            best_params = [p.copy() for p in params()]
            best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= patience:
                break
    for p, b in zip(params(), best_params):
        p[...] = b
    return curve, best_epoch


class PosteriorEstimator:
    """Trained conditional density q(theta | x) with its standardization."""

    def __init__(self, mdn: MDN, task: TaskId, budget: int, x_stats, theta_stats, curve=None):
        self.mdn = mdn
        self.task = task
        self.budget = budget
        self.x_mean, self.x_std = x_stats
        self.theta_mean, self.theta_std = theta_stats
        self.curve = curve or []

    def _zx(self, x):
        return (np.asarray(x, dtype=float) - self.x_mean) / self.x_std

    def log_prob(self, theta, x_o) -> np.ndarray:
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        z = (theta - self.theta_mean) / self.theta_std
        lp = self.mdn.log_prob(z, self._zx(x_o))
        return lp - np.sum(np.log(self.theta_std))

    def sample(self, x_o, n: int, seed: int) -> np.ndarray:
        z = self.mdn.sample(self._zx(x_o), n, seed)
        return self.theta_mean + self.theta_std * z

    def posterior_mean(self, x_o) -> np.ndarray:
        w, means, _ = self.mdn.component_params(self._zx(x_o)[None, :])
        z_mean = np.einsum("k,kd->d", w[0], means[0])
        return self.theta_mean + self.theta_std * z_mean

    def save(self, path) -> None:
        save_model(
            path,
            self.mdn,
            meta={"model": "npe", "task": self.task.key, "budget": self.budget},
            extra_arrays={
                "x_mean": self.x_mean,
                "x_std": self.x_std,
                "theta_mean": self.theta_mean,
                "theta_std": self.theta_std,
            },
        )

    @classmethod
    def load(cls, path) -> "PosteriorEstimator":
        mdn, meta, extras = load_model(path)
        if meta.get("model") != "npe":
            raise AbdmError(f"{path} is not a posterior estimator")
        return cls(
            mdn,
            TaskId.from_key(meta["task"]),
            meta["budget"],
            (extras["x_mean"], extras["x_std"]),
            (extras["theta_mean"], extras["theta_std"]),
        )


def train_npe(ds: Dataset, cfg: TrainConfig, seed: int) -> PosteriorEstimator:
    """Fit the conditional mixture by minimizing validation-selected NLL."""
    if len(ds) < 100:
        raise ValueError("need at least 100 pairs to train")
    train_idx, val_idx = ds.train_val_split()
    x_stats = _fit_standardizer(ds.xs[train_idx])
    th_stats = _fit_standardizer(ds.thetas[train_idx])
    zx = (ds.xs - x_stats[0]) / x_stats[1]
    zt = (ds.thetas - th_stats[0]) / th_stats[1]

    mdn = MDN(
        ds.task.x_dim,
        ds.task.theta_dim,
        n_components=cfg.mdn_components,
        seed=split_seed(seed, 0),
    )
    rng = np.random.default_rng(split_seed(seed, 1))
    adam = AdamState.for_params(mdn.params(), cfg.learning_rate)
    batch = min(cfg.batch_size, len(train_idx))

    def step_epoch(_epoch):
        perm = rng.permutation(train_idx)
        losses = []
        for start in range(0, len(perm), batch):
            sel = perm[start : start + batch]
            loss, grads = grad_loss(mdn, (zt[sel], zx[sel]), "nll")
            adam_step(adam, mdn.params(), grads)
            losses.append(loss)
        return float(np.mean(losses))

    def eval_val():
        return float(-np.mean(mdn.log_prob(zt[val_idx], zx[val_idx])))

    curve, _ = _early_stopped_training(
        step_epoch, eval_val, mdn.params, cfg.max_epochs, cfg.patience
    )
    return PosteriorEstimator(mdn, ds.task, len(ds), x_stats, th_stats, curve)


def mc_expected_cost(theta_samples: np.ndarray, actions, cost_fn) -> np.ndarray:
    """Plain Monte-Carlo average of cost_fn over posterior samples."""
    actions = np.atleast_1d(np.asarray(actions))
    vals = cost_fn(theta_samples[:, None, :], actions)
    return np.mean(vals, axis=0)


def npe_mc_expected_cost_curve(
    est: PosteriorEstimator, x_o, actions, M: int, spec: CostSpec, seed: int
) -> np.ndarray:
    """Expected-cost estimate for every action, from one shared sample set.

    The M posterior draws are a deterministic function of (x_o, M, seed),
    so the whole action grid is scored against identical samples.
    """
    if M < 1:
        raise ValueError("M must be positive")
    samples = project_to_support(est.task, est.sample(x_o, M, seed))
    return mc_expected_cost(samples, actions, cost_fn_for(spec))


def npe_mc_expected_cost(
    est: PosteriorEstimator, x_o, a, M: int, spec: CostSpec, seed: int
) -> float:
    return float(npe_mc_expected_cost_curve(est, x_o, a, M, spec, seed)[0])


class CostRegressor:
    """Trained network f(x, a) approximating the posterior-expected cost."""

    def __init__(self, mlp: MLP, task: TaskId, budget: int, x_stats, action_dist, curve=None, best_val=None):
        self.mlp = mlp
        self.task = task
        self.budget = budget
        self.x_mean, self.x_std = x_stats
        self.action_dist = action_dist
        self.curve = curve or []
        self.best_val = best_val

    def _inputs(self, x_o, actions) -> np.ndarray:
        actions = np.atleast_1d(actions)
        zx = (np.asarray(x_o, dtype=float) - self.x_mean) / self.x_std
        xs = np.broadcast_to(zx, (actions.shape[0], zx.shape[-1]))
        return np.hstack([xs, self.action_dist.columns(actions)])

    def expected_cost_curve(self, x_o, actions) -> np.ndarray:
        return self.mlp.forward(self._inputs(x_o, actions))[:, 0]

    def expected_cost(self, x_o, a) -> float:
        return float(self.expected_cost_curve(x_o, [a])[0])

    def save(self, path) -> None:
        save_model(
            path,
            self.mlp,
            meta={
                "model": "bam",
                "task": self.task.key,
                "budget": self.budget,
                "action_dist": self.action_dist.descriptor,
            },
            extra_arrays={"x_mean": self.x_mean, "x_std": self.x_std},
        )

    @classmethod
    def load(cls, path) -> "CostRegressor":
        mlp, meta, extras = load_model(path)
        if meta.get("model") != "bam":
            raise AbdmError(f"{path} is not a cost regressor")
        return cls(
            mlp,
            TaskId.from_key(meta["task"]),
            meta["budget"],
            (extras["x_mean"], extras["x_std"]),
            _action_dist_from_descriptor(meta["action_dist"]),
        )


def train_bam(ds: Dataset, cfg: TrainConfig, action_dist, spec: CostSpec, seed: int) -> CostRegressor:
    """Algorithm: regress f(x, a) onto realized costs c(theta, a) with MSE.

    Actions are drawn from action_dist; in resample mode each (theta, x)
    pair gets a fresh action every epoch, otherwise its fixed pre-drawn
    actions are reused. Validation pairs keep one fixed action draw so the
    early-stopping signal is comparable across epochs. `spec` may also be a
    bare cost callable (thetas, actions) -> costs.
    """
    if len(ds) < 100:
        raise ValueError("need at least 100 pairs to train")
    cost = spec if callable(spec) else cost_fn_for(spec)
    train_idx, val_idx = ds.train_val_split()
    x_stats = _fit_standardizer(ds.xs[train_idx])
    zx = (ds.xs - x_stats[0]) / x_stats[1]

    n_action_cols = action_dist.columns(action_dist.sample(np.random.default_rng(0), 1)).shape[1]
    mlp = MLP(
        ds.task.x_dim + n_action_cols,
        1,
        sigmoid_out=True,
        seed=split_seed(seed, 0),
    )
    rng = np.random.default_rng(split_seed(seed, 1))
    adam = AdamState.for_params(mlp.params(), cfg.learning_rate)

    val_actions = action_dist.sample(np.random.default_rng(split_seed(seed, 2)), len(val_idx))
    val_inputs = np.hstack([zx[val_idx], action_dist.columns(val_actions)])
    val_targets = cost(ds.thetas[val_idx], val_actions)[:, None]

    if cfg.actions_per_pair == RESAMPLE:
        train_rows = train_idx
        fixed_inputs = None
    else:
        k = int(cfg.actions_per_pair)
        rows = np.repeat(train_idx, k)
        fixed_actions = action_dist.sample(rng, rows.size)
        fixed_inputs = np.hstack([zx[rows], action_dist.columns(fixed_actions)])
        fixed_targets = cost(ds.thetas[rows], fixed_actions)[:, None]
        train_rows = np.arange(rows.size)
    batch = min(cfg.batch_size, len(train_rows))

    def step_epoch(_epoch):
        if cfg.actions_per_pair == RESAMPLE:
            actions = action_dist.sample(rng, len(train_idx))
            inputs = np.hstack([zx[train_idx], action_dist.columns(actions)])
            targets = cost(ds.thetas[train_idx], actions)[:, None]
            order = rng.permutation(len(train_idx))
        else:
            inputs, targets = fixed_inputs, fixed_targets
            order = rng.permutation(len(train_rows))
        losses = []
        for start in range(0, len(order), batch):
            sel = order[start : start + batch]
            loss, grads = grad_loss(mlp, (inputs[sel], targets[sel]), "mse")
            adam_step(adam, mlp.params(), grads)
            losses.append(loss)
        return float(np.mean(losses))

    def eval_val():
        pred = mlp.forward(val_inputs)
        return float(np.mean((pred - val_targets) ** 2))

    curve, best_epoch = _early_stopped_training(
        step_epoch, eval_val, mlp.params, cfg.max_epochs, cfg.patience
    )
    return CostRegressor(
        mlp, ds.task, len(ds), x_stats, action_dist, curve, best_val=curve[best_epoch][2]
    )


def bam_expected_cost(reg: CostRegressor, x_o, a) -> float:
    """One forward pass; the sigmoid output already lives in (0, 1)."""
    return reg.expected_cost(x_o, a)


def argmin_on_grid(values: np.ndarray, actions: np.ndarray):
    """Smallest-action argmin over tabulated values; rejects non-finite input."""
    values = np.asarray(values, dtype=float)
    if values.shape != actions.shape:
        raise ValueError("values and actions must align")
    if not np.all(np.isfinite(values)):
        raise ValueError("non-finite values in action search")
    i = int(np.argmin(values))
    return actions[i], float(values[i])


def optimize_action(cost_at, space: ActionSpace):
    """Grid search for the minimum-cost action; ties go to the smallest action."""
    if space.actions.size == 0:
        raise ValueError("empty action space")
    values = np.array([float(cost_at(a)) for a in space.actions])
    return argmin_on_grid(values, space.actions)
