"""Training loop: Adam optimization, early stopping, evaluation tables.

``TrainConfig`` doubles as the on-disk config format (plain ``key = value``
text, unknown keys rejected). Defaults follow the published setups: story
training uses 2-hop, 32-unit LSTM encoders, scorer 256/128/1 and reasoning
512/512/C with ReLU + batch norm at learning rate 2e-4; dialog tasks 1-5
have their own per-task rows (see ``dialog_defaults``).
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, TensorError
from .data.batching import iter_batches, pack_batch
from .network import RmnNetwork, RnNetwork


class ConfigError(Exception):
    pass


class DivergenceError(Exception):
    """Loss became non-finite during training."""


@dataclass
class TrainConfig:
    dataset: str = "story"          # story | dialog
    task: int = 1                   # 0 = joint over all tasks in the corpus
    model: str = "rmn"              # rmn | rn
    hops: int = 2
    embed_kind: str = "lstm"        # sum | position | concat | lstm | gru
    embed_dim: int = 32
    hidden: int = 32
    g_widths: tuple = (256, 128, 1)
    f_widths: tuple = (512, 512)    # hidden widths; output = answer classes
    activation: str = "relu"
    batch_norm: bool = True
    feature_map: str = "mlp"
    use_match: bool = False
    learning_rate: float = 2e-4
    batch_size: int = 32
    epochs: int = 20
    seed: int = 0
    patience: int = 10
    stop_at_val_error: float = -1.0  # stop once val error <= this (off when < 0)
    clip_norm: float = 0.0           # 0 disables gradient clipping
    expected_answer_classes: int = 0

    def full_f_widths(self) -> tuple:
        return tuple(self.f_widths) + (self.expected_answer_classes,)

    def validate(self):
        checks = [
            (self.dataset in ("story", "dialog"), f"dataset {self.dataset!r}"),
            (self.model in ("rmn", "rn"), f"model {self.model!r}"),
            (self.hops >= 1, f"hops {self.hops}"),
            (self.embed_kind in ("sum", "position", "concat", "lstm", "gru"),
             f"embed_kind {self.embed_kind!r}"),
            (self.activation in ("relu", "tanh", "sigmoid"),
             f"activation {self.activation!r}"),
            (self.feature_map in ("mlp", "inner_product",
                                  "gated_inner_product",
                                  "absdiff_two_embeddings"),
             f"feature_map {self.feature_map!r}"),
            (not self.g_widths or self.g_widths[-1] == 1
             or self.model == "rn" or self.feature_map != "mlp",
             "g_widths must end in 1 for the mlp feature map"),
            (self.learning_rate > 0, "learning_rate must be positive"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.epochs >= 1, "epochs must be >= 1"),
        ]
        bad = [msg for ok, msg in checks if not ok]
        if bad:
            raise ConfigError("invalid config: " + "; ".join(bad))


def story_defaults(**overrides) -> TrainConfig:
    return replace(TrainConfig(expected_answer_classes=159), **overrides)


_DIALOG_ROWS = {
    # task: (embed_kind, dim, hops, g_widths, f_hidden)
    1: ("sum", 128, 1, (2048, 2048, 1), (2048, 2048)),
    2: ("sum", 128, 1, (1024, 1024, 1), (1024, 1024)),
    3: ("sum", 128, 1, (1024, 1024, 1024, 1), (1024, 1024, 1024)),
    4: ("concat", 50, 1, (1024, 1024, 1), (1024, 1024)),
    5: ("concat", 64, 2, (4096, 4096, 1), (4096, 4096)),
}


def dialog_defaults(task: int, **overrides) -> TrainConfig:
    if task not in _DIALOG_ROWS:
        raise ConfigError(f"no default hyperparameters for dialog task {task}")
    kind, dim, hops, g, f = _DIALOG_ROWS[task]
    cfg = TrainConfig(dataset="dialog", task=task, hops=hops, embed_kind=kind,
                      embed_dim=dim, hidden=dim, g_widths=g, f_widths=f,
                      activation="tanh", batch_norm=True, learning_rate=1e-4,
                      expected_answer_classes=4212)
    return replace(cfg, **overrides)


# -- config file format -------------------------------------------------------

_LIST_FIELDS = {"g_widths", "f_widths"}
_BOOL_FIELDS = {"batch_norm", "use_match"}


def config_schema() -> str:
    lines = ["# key = value per line; '#' starts a comment; unknown keys are errors"]
    for f in fields(TrainConfig):
        default = getattr(TrainConfig(), f.name)
        if f.name in _LIST_FIELDS:
            default = ",".join(str(v) for v in default)
        lines.append(f"{f.name} = {default}")
    return "\n".join(lines)


def parse_config_text(text: str) -> TrainConfig:
    known = {f.name: f for f in fields(TrainConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        values[key] = _parse_value(key, val, lineno)
    cfg = replace(TrainConfig(), **values)
    cfg.validate()
    return cfg


def _parse_value(key: str, val: str, lineno: int):
    try:
        if key in _LIST_FIELDS:
            return tuple(int(v) for v in val.split(",") if v.strip())
        if key in _BOOL_FIELDS:
            if val.lower() in ("true", "1", "yes"):
                return True
            if val.lower() in ("false", "0", "no"):
                return False
            raise ValueError(val)
        if key in ("dataset", "model", "embed_kind", "activation", "feature_map"):
            return val
        if key in ("learning_rate", "stop_at_val_error", "clip_norm"):
            return float(val)
        return int(val)
    except ValueError:
        raise ConfigError(f"line {lineno}: bad value {val!r} for {key}")


def format_config(cfg: TrainConfig) -> str:
    lines = []
    for f in fields(TrainConfig):
        v = getattr(cfg, f.name)
        if f.name in _LIST_FIELDS:
            v = ",".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines)


# -- model construction -------------------------------------------------------


def build_network(cfg: TrainConfig, corpus):
    cfg.validate()
    common = dict(
        vocab_size=len(corpus.vocab),
        answer_classes=corpus.n_answer_classes,
        embed_kind=cfg.embed_kind,
        embed_dim=cfg.embed_dim,
        hidden=cfg.hidden,
        sentence_max_len=corpus.sentence_max_len,
        question_max_len=corpus.question_max_len,
        f_widths=cfg.f_widths,
        activation=cfg.activation,
        batch_norm=cfg.batch_norm,
        seed=cfg.seed,
    )
    if cfg.model == "rn":
        g = tuple(w for w in cfg.g_widths if w != 1) or (256, 128)
        return RnNetwork(g_widths=g, **common)
    return RmnNetwork(hops=cfg.hops, g_widths=cfg.g_widths,
                      feature_map=cfg.feature_map, use_match=cfg.use_match,
                      n_match_fields=corpus.n_match_fields if cfg.use_match else 0,
                      **common)


# -- Adam ----------------------------------------------------------------------


class AdamState:
    """First/second moment buffers per named parameter plus the step count."""

    def __init__(self, params: dict, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m = {k: np.zeros(p.shape) for k, p in params.items()}
        self.v = {k: np.zeros(p.shape) for k, p in params.items()}


def adam_step(params: dict, grads, state: AdamState, lr: float):
    """Bias-corrected Adam update, applied in place (optimizer owns params)."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads[p] if isinstance(grads, ad.Gradients) else grads[name]
        if g.shape != p.shape:
            raise TensorError(f"gradient shape {g.shape} for {name} {p.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = (lr / c1) * m / (np.sqrt(v / c2) + state.eps)
        arr = p.data
        arr.flags.writeable = True
        arr -= update
        arr.flags.writeable = False


def clip_gradients(params: dict, grads, max_norm: float):
    total = 0.0
    gs = {}
    for name, p in params.items():
        g = grads[p] if isinstance(grads, ad.Gradients) else grads[name]
        gs[name] = g
        total += float(np.sum(g * g))
    total = np.sqrt(total)
    if total > max_norm:
        factor = max_norm / (total + 1e-12)
        for g in gs.values():
            g *= factor
    return gs


# -- evaluation ----------------------------------------------------------------


@dataclass
class EvalResult:
    per_task: dict                 # task_id -> (episodes, wrong)
    mean_error: float              # mean over per-task error percentages
    failed_tasks: int              # tasks with error > 5%
    loss: float = float("nan")

    def error_pct(self, task_id: int) -> float:
        n, wrong = self.per_task[task_id]
        return 100.0 * wrong / n


FAIL_THRESHOLD_PCT = 5.0


def evaluate(network, episodes, batch_size: int = 64) -> EvalResult:
    """Per-task error table over one split (eval mode, no state mutation)."""
    per_task: dict = {}
    losses = []
    sizes = []
    for batch in iter_batches(episodes, batch_size, shuffle=False,
                              with_match=getattr(network, "use_match", False)):
        logits, _ = network.forward_batch(batch, train=False)
        pred = np.argmax(logits.data, axis=1)
        loss = ad.cross_entropy(logits, batch.answers)
        losses.append(loss.item())
        sizes.append(batch.size)
        for t, ok in zip(batch.task_ids, pred == batch.answers):
            n, wrong = per_task.get(int(t), (0, 0))
            per_task[int(t)] = (n + 1, wrong + (0 if ok else 1))
    errs = [100.0 * wrong / n for n, wrong in per_task.values()]
    mean_err = float(np.mean(errs)) if errs else 0.0
    failed = sum(1 for e in errs if e > FAIL_THRESHOLD_PCT)
    total = sum(sizes)
    mean_loss = float(np.dot(losses, sizes) / total) if total else float("nan")
    return EvalResult(per_task=per_task, mean_error=mean_err,
                      failed_tasks=failed, loss=mean_loss)


# -- training loop ---------------------------------------------------------------


@dataclass
class MetricRow:
    epoch: int
    split: str
    task: str
    error_pct: float
    loss: float


@dataclass
class TrainResult:
    history: list = field(default_factory=list)   # MetricRow records
    epochs_run: int = 0
    best_val_error: float = float("inf")
    best_epoch: int = -1
    stopped_early: bool = False


def _epoch_seed(seed: int, epoch: int) -> int:
    ss = np.random.SeedSequence([seed, 0x5eed, epoch])
    return int(ss.generate_state(1)[0])


def train(network, corpus, cfg: TrainConfig, optimizer: AdamState | None = None,
          start_epoch: int = 0, log=None) -> TrainResult:
    """Epoch loop with shuffled batches, validation tracking, early stopping.

    Raises DivergenceError when the loss leaves the reals. Resuming from
    ``start_epoch`` with the saved optimizer state reproduces an
    uninterrupted run because shuffle streams derive from (seed, epoch).
    """
    cfg.validate()
    params = network.named_parameters()
    if optimizer is None:
        optimizer = AdamState(params)
    train_eps = corpus.split("train")
    val_eps = corpus.splits.get("val") or []
    result = TrainResult()
    bad_epochs = 0

    for epoch in range(start_epoch, cfg.epochs):
        losses = []
        hits = 0
        seen = 0
        for batch in iter_batches(train_eps, cfg.batch_size,
                                  seed=_epoch_seed(cfg.seed, epoch),
                                  with_match=getattr(network, "use_match", False)):
            try:
                with Tape() as tape:
                    loss, logits = network.loss_batch(batch, train=True)
                    grads = ad.backward(loss, tape)
            except TensorError as exc:
                raise DivergenceError(f"epoch {epoch}: {exc}") from exc
            value = loss.item()
            if not np.isfinite(value):
                raise DivergenceError(f"epoch {epoch}: non-finite loss")
            losses.append(value)
            hits += int(np.sum(np.argmax(logits.data, axis=1) == batch.answers))
            seen += batch.size
            if cfg.clip_norm > 0:
                grads = clip_gradients(params, grads, cfg.clip_norm)
            adam_step(params, grads, optimizer, cfg.learning_rate)

        train_err = 100.0 * (1.0 - hits / max(seen, 1))
        result.history.append(MetricRow(epoch, "train", "all", train_err,
                                        float(np.mean(losses))))
        result.epochs_run = epoch + 1

        if val_eps:
            ev = evaluate(network, val_eps, batch_size=max(cfg.batch_size, 64))
            for task_id in sorted(ev.per_task):
                result.history.append(MetricRow(
                    epoch, "val", str(task_id), ev.error_pct(task_id), float("nan")))
            result.history.append(MetricRow(epoch, "val", "mean",
                                            ev.mean_error, ev.loss))
            if log:
                log(f"epoch {epoch}: train loss {np.mean(losses):.4f} "
                    f"err {train_err:.2f}% | val err {ev.mean_error:.2f}%")
            if ev.mean_error < result.best_val_error - 1e-12:
                result.best_val_error = ev.mean_error
                result.best_epoch = epoch
                bad_epochs = 0
            else:
                bad_epochs += 1
            if 0 <= cfg.stop_at_val_error >= ev.mean_error:
                result.stopped_early = True
                break
            if cfg.patience > 0 and bad_epochs >= cfg.patience:
                result.stopped_early = True
                break
        elif log:
            log(f"epoch {epoch}: train loss {np.mean(losses):.4f} err {train_err:.2f}%")

    return result


def metrics_csv(history) -> str:
    lines = ["epoch,split,task,error_pct,loss"]
    for row in history:
        loss = "" if np.isnan(row.loss) else f"{row.loss:.6f}"
        lines.append(f"{row.epoch},{row.split},{row.task},{row.error_pct:.4f},{loss}")
    return "\n".join(lines) + "\n"
