"""
Deep symbolic regression at desk scale.

A recurrent policy emits prefix token sequences one token at a time,
conditioned on the parent and left sibling of the slot being filled.
Constraint masks keep every sample arity-valid, within the length budget,
free of nested unary operators and containing at least one variable.
Expressions are scored by inverse normalised RMSE against a logged dataset
and the policy is trained with the risk-seeking policy gradient: only
samples above the (1 - epsilon) reward quantile contribute to the
policy-gradient term.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import expr as E

DATASET_COLUMNS = ("x1", "x2", "x3", "x4", "target")
LOG_COLUMNS = ("epoch", "axis", "best_reward", "quantile_reward", "mean_reward")


class DatasetError(ValueError):
    pass


# ------------------------------------------------------------------- datasets

@dataclass
class Dataset:
    """Rows of (x1, x2, x3, x4) features with one voltage target each."""

    X: np.ndarray
    y: np.ndarray
    source_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=float)
        self.y = np.ascontiguousarray(self.y, dtype=float)
        if self.X.ndim != 2 or self.X.shape[1] != 4 or self.X.shape[0] != self.y.shape[0]:
            raise DatasetError("dataset must have shape (n, 4) features and (n,) targets")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise DatasetError("dataset contains non-finite values")
        if np.unique(self.y).size < 2 or not np.std(self.y) > 0:
            raise DatasetError("target is constant (zero standard deviation)")

    def __len__(self):
        return self.y.shape[0]

    @property
    def columns(self):
        return tuple(self.X[:, i] for i in range(4))

    def digest(self):
        h = hashlib.sha256()
        h.update(self.X.tobytes())
        h.update(self.y.tobytes())
        return h.hexdigest()

    def to_csv_text(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(DATASET_COLUMNS)
        for row, t in zip(self.X, self.y):
            w.writerow([repr(float(v)) for v in row] + [repr(float(t))])
        return buf.getvalue()

    def write_csv(self, path):
        from .harness import atomic_write
        atomic_write(path, self.to_csv_text())


def read_dataset(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != DATASET_COLUMNS:
            raise DatasetError(f"{path}: header must be {','.join(DATASET_COLUMNS)}")
        rows = [[float(v) for v in r] for r in reader if r]
    data = np.array(rows, dtype=float).reshape(-1, 5)
    return Dataset(data[:, :4], data[:, 4], {"path": str(path)})


def generate_dataset(scenarios):
    """
    Simulate each scenario under the PI current controller and log the
    features with the unlimited PI voltages as targets.

    Returns
    -------
    (Dataset, Dataset)
        d-axis and q-axis datasets, one row per control step per scenario.
    """
    from dataclasses import replace

    from .harness import run_scenario
    Xs, vd, vq = [], [], []
    names = []
    for sc in scenarios:
        ts = run_scenario(replace(sc, controller="pi"))
        Xs.append(np.column_stack([ts["x1"], ts["x2"], ts["x3"], ts["x4"]]))
        vd.append(ts["vd_raw"])
        vq.append(ts["vq_raw"])
        names.append(sc.name)
    X = np.vstack(Xs)
    meta = {"scenarios": names, "controller": "pi"}
    return (Dataset(X, np.concatenate(vd), dict(meta, axis="vd")),
            Dataset(X.copy(), np.concatenate(vq), dict(meta, axis="vq")))


# --------------------------------------------------------------------- reward

def reward(expr, data):
    """Inverse normalised RMSE, 1 / (1 + RMSE / std(target)); 0 on evaluation failure."""
    try:
        pred = E.evaluate(expr, data.columns)
    except E.EvaluationError:
        return 0.0
    if not np.all(np.isfinite(pred)):
        return 0.0
    rmse = math.sqrt(float(np.mean((pred - data.y) ** 2)))
    if not math.isfinite(rmse):
        return 0.0
    return 1.0 / (1.0 + rmse / float(np.std(data.y)))


# --------------------------------------------------------------------- config

DEFAULT_CONSTANTS = (0.5,) + tuple(float(k) for k in range(1, 14))


@dataclass(frozen=True)
class TrainConfig:
    """Trainer settings; the defaults were calibrated on a synthetic recovery problem."""

    batch_size: int = 2000
    epochs: int = 200
    epsilon: float = 0.05
    learning_rate: float = 0.01
    max_length: int = 32
    entropy_weight: float = 0.03
    constants: tuple = DEFAULT_CONSTANTS
    hidden: int = 32
    seed: int = 0
    stop_reward: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "constants", tuple(float(c) for c in self.constants))
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.batch_size * self.epsilon < 1:
            raise ValueError("batch_size * epsilon must be >= 1")
        if not 1 <= self.max_length <= E.DEFAULT_MAX_LENGTH:
            raise ValueError(f"max_length must lie in [1, {E.DEFAULT_MAX_LENGTH}]")
        if self.epochs < 1 or self.hidden < 1:
            raise ValueError("epochs and hidden must be >= 1")

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown TrainConfig keys: {sorted(extra)}")
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["constants"] = list(self.constants)
        return d


def build_vocabulary(constants=DEFAULT_CONSTANTS):
    toks = [E.Token.op(o) for o in E.BINARY_OPS + E.UNARY_OPS]
    toks += [E.Token.var(v) for v in E.VARIABLES]
    toks += [E.Token.const(c) for c in constants]
    return tuple(toks)


# --------------------------------------------------------------------- policy

@dataclass
class Batch:
    """Sampled sequences plus everything needed to replay their log-probabilities."""

    tokens: np.ndarray      # (N, L) vocabulary indices, -1 past the end
    lengths: np.ndarray     # (N,)
    parents: np.ndarray     # (N, L) context indices fed at each step
    siblings: np.ndarray    # (N, L)
    masks: np.ndarray       # (N, L, V) allowed tokens at each step
    log_probs: np.ndarray   # (N,) summed log-probability under the sampling policy

    def __len__(self):
        return self.tokens.shape[0]


class Policy(torch.nn.Module):
    """
    Single-layer GRU over (parent, sibling) one-hot context producing a
    categorical distribution over the vocabulary.
    """

    def __init__(self, vocabulary, hidden=32, max_length=32, seed=0):
        super().__init__()
        self.vocabulary = tuple(vocabulary)
        self.max_length = max_length
        self.seed = seed
        V = len(self.vocabulary)
        self.n_tokens = V
        self.none_index = V
        self.arity = np.array([t.arity for t in self.vocabulary])
        self.is_unary = np.array([t.kind == "unary" for t in self.vocabulary])
        self.is_const = np.array([t.kind == "const" for t in self.vocabulary])
        self.is_var = np.array([t.kind == "var" for t in self.vocabulary])
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.cell = torch.nn.GRUCell(2 * (V + 1), hidden, dtype=torch.float64)
            self.head = torch.nn.Linear(hidden, V, dtype=torch.float64)
        self.hidden = hidden

    def _step_logits(self, parent, sibling, h):
        V1 = self.n_tokens + 1
        x = torch.zeros(parent.shape[0], 2 * V1, dtype=torch.float64)
        rows = torch.arange(parent.shape[0])
        x[rows, torch.as_tensor(parent)] = 1.0
        x[rows, V1 + torch.as_tensor(sibling)] = 1.0
        h = self.cell(x, h)
        return self.head(h), h

    @staticmethod
    def _masked_log_softmax(logits, mask):
        m = torch.as_tensor(mask)
        masked = logits.masked_fill(~m, float("-inf"))
        return torch.log_softmax(masked, dim=-1)

    def _allowed(self, n_open, length, parent, has_var):
        """Boolean (N, V) mask of tokens that keep each sequence completable."""
        remaining_after = n_open[:, None] - 1 + self.arity[None, :]
        fits = (length[:, None] + 1 + remaining_after) <= self.max_length
        parent_unary = np.zeros(len(parent), dtype=bool)
        real = parent < self.n_tokens
        parent_unary[real] = self.is_unary[parent[real]]
        no_nested = ~(parent_unary[:, None] & self.is_unary[None, :])
        closes = remaining_after == 0
        needs_var = ~has_var[:, None] & closes & self.is_const[None, :]
        return fits & no_nested & ~needs_var

    def distribution(self, prefix):
        """Masked next-token probabilities after a (possibly empty) index prefix."""
        b = self._contexts([list(prefix)])
        with torch.no_grad():
            h = torch.zeros(1, self.hidden, dtype=torch.float64)
            L = len(prefix)
            for s in range(L + 1):
                logits, h = self._step_logits(b["parents"][:, s], b["siblings"][:, s], h)
            lp = self._masked_log_softmax(logits, b["masks"][:, L])
        return torch.exp(lp)[0].numpy()

    def _contexts(self, seqs):
        # Replays bookkeeping for given (partial) index sequences.
        N = len(seqs)
        L = self.max_length
        V = self.n_tokens
        parents = np.full((N, L), self.none_index)
        siblings = np.full((N, L), self.none_index)
        masks = np.zeros((N, L, V), dtype=bool)
        for i, seq in enumerate(seqs):
            st = _Tracker(self.none_index)
            for s in range(min(len(seq) + 1, L)):
                parents[i, s], siblings[i, s] = st.context()
                masks[i, s] = self._allowed(np.array([st.n_open]), np.array([s]),
                                            np.array([parents[i, s]]), np.array([st.has_var]))[0]
                if s < len(seq):
                    st.place(seq[s], self.arity[seq[s]], self.is_var[seq[s]])
        return {"parents": parents, "siblings": siblings, "masks": masks}

    def sample(self, n, rng):
        """Draw ``n`` sequences using ``rng`` (numpy Generator) for the categorical draws."""
        L, V = self.max_length, self.n_tokens
        tokens = np.full((n, L), -1)
        parents = np.full((n, L), self.none_index)
        siblings = np.full((n, L), self.none_index)
        masks = np.zeros((n, L, V), dtype=bool)
        log_probs = np.zeros(n)
        lengths = np.zeros(n, dtype=int)
        trackers = [_Tracker(self.none_index) for _ in range(n)]
        done = np.zeros(n, dtype=bool)
        h = torch.zeros(n, self.hidden, dtype=torch.float64)
        with torch.no_grad():
            for s in range(L):
                ctx = [t.context() for t in trackers]
                par = np.array([c[0] for c in ctx])
                sib = np.array([c[1] for c in ctx])
                n_open = np.array([t.n_open for t in trackers])
                has_var = np.array([t.has_var for t in trackers])
                allowed = self._allowed(n_open, np.full(n, s), par, has_var)
                allowed[done] = True  # finished rows: keep softmax finite, ignored below
                parents[:, s] = par
                siblings[:, s] = sib
                masks[:, s] = allowed
                logits, h = self._step_logits(par, sib, h)
                lp = self._masked_log_softmax(logits, allowed).numpy()
                probs = np.exp(lp)
                cdf = np.cumsum(probs, axis=1)
                u = rng.random(n) * cdf[:, -1]
                choice = np.minimum((cdf <= u[:, None]).sum(axis=1), V - 1)
                # guard against landing on a zero-probability token through rounding
                bad = ~allowed[np.arange(n), choice]
                if np.any(bad):
                    for i in np.flatnonzero(bad):
                        ok = np.flatnonzero(allowed[i])
                        choice[i] = ok[np.argmin(np.abs(ok - choice[i]))]
                for i in np.flatnonzero(~done):
                    c = int(choice[i])
                    tokens[i, s] = c
                    log_probs[i] += lp[i, c]
                    trackers[i].place(c, self.arity[c], self.is_var[c])
                    lengths[i] = s + 1
                    if trackers[i].n_open == 0:
                        done[i] = True
                if done.all():
                    break
        masks[tokens < 0] = False
        return Batch(tokens, lengths, parents, siblings, masks, log_probs)

    def replay(self, batch, rows):
        """
        Differentiable log-probabilities and entropies of ``batch`` rows.

        Returns
        -------
        (log_prob, entropy) tensors of shape (len(rows),), each summed over
        the steps of the sequence.
        """
        rows = np.asarray(rows)
        n = len(rows)
        toks = batch.tokens[rows]
        steps = int(batch.lengths[rows].max())
        h = torch.zeros(n, self.hidden, dtype=torch.float64)
        total_lp = torch.zeros(n, dtype=torch.float64)
        total_ent = torch.zeros(n, dtype=torch.float64)
        for s in range(steps):
            live = torch.as_tensor(toks[:, s] >= 0)
            logits, h = self._step_logits(batch.parents[rows, s], batch.siblings[rows, s], h)
            mask = batch.masks[rows, s].copy()
            mask[~live.numpy()] = True
            lp = self._masked_log_softmax(logits, mask)
            idx = torch.as_tensor(np.maximum(toks[:, s], 0))
            chosen = lp.gather(1, idx[:, None])[:, 0]
            p = torch.exp(lp)
            # masked entries hold -inf; zero them so 0 * -inf never reaches autograd
            ent = -(p * lp.masked_fill(~torch.as_tensor(mask), 0.0)).sum(dim=1)
            zero = torch.zeros(n, dtype=torch.float64)
            total_lp = total_lp + torch.where(live, chosen, zero)
            total_ent = total_ent + torch.where(live, ent, zero)
        return total_lp, total_ent

    def log_prob(self, indices):
        """Log-probability of one complete index sequence under the current parameters."""
        ctx = self._contexts([list(indices)])
        toks = np.full((1, self.max_length), -1)
        toks[0, :len(indices)] = indices
        b = Batch(toks, np.array([len(indices)]), ctx["parents"], ctx["siblings"],
                  ctx["masks"], np.zeros(1))
        with torch.no_grad():
            lp, _ = self.replay(b, [0])
        return float(lp[0])

    def to_expression(self, indices):
        return E.Expression(tuple(self.vocabulary[i] for i in indices))

    def batch_expressions(self, batch):
        return [self.to_expression(batch.tokens[i, :batch.lengths[i]]) for i in range(len(batch))]


class _Tracker:
    """Parent/sibling bookkeeping while a prefix sequence is being built."""

    __slots__ = ("none", "frames", "n_open", "has_var")

    def __init__(self, none_index):
        self.none = none_index
        self.frames = []  # [token, arity, children placed, last child]
        self.n_open = 1
        self.has_var = False

    def context(self):
        if not self.frames:
            return self.none, self.none
        tok, _, placed, last = self.frames[-1]
        return tok, (last if placed > 0 else self.none)

    def place(self, tok, arity, is_var):
        if self.frames:
            top = self.frames[-1]
            top[2] += 1
            top[3] = tok
        self.n_open += arity - 1
        self.has_var = self.has_var or bool(is_var)
        if arity > 0:
            self.frames.append([tok, arity, 0, None])
        else:
            while self.frames and self.frames[-1][2] == self.frames[-1][1]:
                self.frames.pop()


def sample_expression(policy, rng):
    """Sample one expression; returns (Expression, log-probability)."""
    b = policy.sample(1, rng)
    return policy.to_expression(b.tokens[0, :b.lengths[0]]), float(b.log_probs[0])


# ------------------------------------------------------------------- training

def quantile_threshold(rewards, epsilon):
    """Empirical (1 - epsilon) order statistic, without interpolation."""
    r = np.sort(np.asarray(rewards, dtype=float))
    k = max(1, int(math.ceil((1.0 - epsilon) * len(r) - 1e-9)))
    return float(r[k - 1])


def risk_seeking_step(policy, optimizer, batch, rewards, cfg):
    """
    One risk-seeking policy-gradient update.

    Only samples with reward strictly above the (1 - epsilon) quantile enter
    the policy-gradient term, each weighted by (reward - quantile). The
    entropy bonus is averaged over the whole batch: it does not depend on
    the rewards, and it keeps the policy moving when the elite set is empty
    because many samples tie at the quantile. Returns
    ``(threshold, selected_rows)``.
    """
    rewards = np.asarray(rewards, dtype=float)
    r_eps = quantile_threshold(rewards, cfg.epsilon)
    sel = np.flatnonzero(rewards > r_eps)
    logp, ent = policy.replay(batch, np.arange(len(batch)))
    loss = -cfg.entropy_weight * ent.mean()
    if sel.size:
        w = torch.as_tensor(rewards[sel] - r_eps, dtype=torch.float64)
        loss = loss - (w * logp[torch.as_tensor(sel)]).mean()
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return r_eps, sel


@dataclass
class AxisResult:
    expression: E.Expression
    reward: float
    log: list


def train_axis(data, cfg, axis="y", seed=None):
    """Train one policy against ``data``; returns the best expression ever sampled."""
    seed = cfg.seed if seed is None else seed
    vocab = build_vocabulary(cfg.constants)
    policy = Policy(vocab, cfg.hidden, cfg.max_length, seed)
    optimizer = torch.optim.Adam(policy.parameters(), lr=cfg.learning_rate)
    rng = np.random.default_rng(seed)
    cache = {}
    best_expr, best_r = None, -1.0
    log = []
    for epoch in range(cfg.epochs):
        batch = policy.sample(cfg.batch_size, rng)
        rewards = np.empty(len(batch))
        for i in range(len(batch)):
            key = tuple(batch.tokens[i, :batch.lengths[i]])
            r = cache.get(key)
            if r is None:
                r = reward(policy.to_expression(key), data)
                cache[key] = r
            rewards[i] = r
        i_best = int(np.argmax(rewards))
        if rewards[i_best] > best_r:
            best_r = float(rewards[i_best])
            best_expr = policy.to_expression(batch.tokens[i_best, :batch.lengths[i_best]])
        r_eps, _ = risk_seeking_step(policy, optimizer, batch, rewards, cfg)
        log.append({"epoch": epoch, "axis": axis, "best_reward": best_r,
                    "quantile_reward": r_eps, "mean_reward": float(np.mean(rewards))})
        if cfg.stop_reward is not None and best_r >= cfg.stop_reward:
            break
    return AxisResult(best_expr, best_r, log)


def train(data_vd, data_vq, cfg):
    """
    Fit the d- and q-axis laws as two independent problems.

    Returns
    -------
    (dict axis -> AxisResult, training log rows)
    """
    results = {"vd": train_axis(data_vd, cfg, "vd", cfg.seed),
               "vq": train_axis(data_vq, cfg, "vq", cfg.seed + 1)}
    log = results["vd"].log + results["vq"].log
    return results, log


def log_to_csv_text(log):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_COLUMNS)
    for row in log:
        w.writerow([row["epoch"], row["axis"], repr(row["best_reward"]),
                    repr(row["quantile_reward"]), repr(row["mean_reward"])])
    return buf.getvalue()


def write_outputs(out_dir, results, log, cfg, datasets):
    """Write ``vd.expr``/``vq.expr`` with JSON sidecars and ``training_log.csv``."""
    from .harness import atomic_write
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for axis, res in results.items():
        atomic_write(out / f"{axis}.expr", E.to_text(res.expression) + "\n")
        meta = {"axis": axis, "reward": res.reward, "seed": cfg.seed + (axis == "vq"),
                "config": cfg.to_dict(), "dataset_sha256": datasets[axis].digest(),
                "dataset_source": datasets[axis].source_meta,
                "feature_scaling": (res.expression.meta.to_dict()
                                    if res.expression.meta is not None else None)}
        atomic_write(out / f"{axis}.expr.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")
    atomic_write(out / "training_log.csv", log_to_csv_text(log))
