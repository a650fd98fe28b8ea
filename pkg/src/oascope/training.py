"""Training loop, cross-validation driver, token-level F1, and benchmarking."""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backbone import BackboneSpec
from .corpus import fit_window, kfold_split, preprocess, sherlock_split
from .model import ScopeModel
from .ortho import OAConfig
from .tensor import RngState, backward, no_grad, scale

GOLDEN_CONFIG_KEYS = ("lr_backbone", "lr_oa", "batch", "dropout", "max_len",
                      "epochs", "patience", "k")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr_backbone: float = 3e-5
    lr_oa: float = 1e-4
    batch_size: int = 32
    dropout: float = 0.3
    max_len: int = 128
    max_epochs: int = 60
    patience: int = 6
    k: int = 10
    seed: int = 0
    variant: str = "em"
    preprocessing: str = "augment"
    d: int = 64
    n_heads: int = 4
    pooled_f1: bool = False  # pool test tokens across folds instead of macro

    def golden(self) -> str:
        """Canonical serialization of the externally pinned hyperparameters."""
        values = {"lr_backbone": self.lr_backbone, "lr_oa": self.lr_oa,
                  "batch": self.batch_size, "dropout": self.dropout,
                  "max_len": self.max_len, "epochs": self.max_epochs,
                  "patience": self.patience, "k": self.k}
        return json.dumps(values, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class FoldReport:
    fold: int
    precision: float
    recall: float
    f1: float
    best_epoch: int
    epochs_run: int
    seed: int
    duration_s: float = 0.0
    counts: tuple = (0, 0, 0)  # test-set (tp, fp, fn), for pooled scoring

    def deterministic_dict(self) -> dict:
        # wall-clock excluded: reports must serialize identically across runs
        return {"fold": self.fold, "precision": self.precision, "recall": self.recall,
                "f1": self.f1, "best_epoch": self.best_epoch,
                "epochs_run": self.epochs_run, "seed": self.seed,
                "counts": list(self.counts)}


@dataclass
class RunSummary:
    folds: list
    macro_precision: float
    macro_recall: float
    macro_f1: float
    variant: str
    preprocessing: str
    train_name: str
    test_name: str
    pooled_precision: float = 0.0
    pooled_recall: float = 0.0
    pooled_f1: float = 0.0
    config: dict = field(default_factory=dict)

    @classmethod
    def from_folds(cls, folds, variant, preprocessing, train_name, test_name, config):
        tp = sum(f.counts[0] for f in folds)
        fp = sum(f.counts[1] for f in folds)
        fn = sum(f.counts[2] for f in folds)
        pooled = _prf(tp, fp, fn)
        return cls(
            folds=folds,
            macro_precision=float(np.mean([f.precision for f in folds])),
            macro_recall=float(np.mean([f.recall for f in folds])),
            macro_f1=float(np.mean([f.f1 for f in folds])),
            variant=variant, preprocessing=preprocessing,
            train_name=train_name, test_name=test_name,
            pooled_precision=pooled[0], pooled_recall=pooled[1], pooled_f1=pooled[2],
            config=config)

    def deterministic_dict(self) -> dict:
        return {"variant": self.variant, "preprocessing": self.preprocessing,
                "train": self.train_name, "test": self.test_name,
                "macro_precision": self.macro_precision,
                "macro_recall": self.macro_recall, "macro_f1": self.macro_f1,
                "pooled_precision": self.pooled_precision,
                "pooled_recall": self.pooled_recall, "pooled_f1": self.pooled_f1,
                "folds": [f.deterministic_dict() for f in self.folds],
                "config": self.config}


# ---------------------------------------------------------------------------
# token-level F1


def token_counts(pred, gold, score_mask=None) -> tuple:
    """(tp, fp, fn) over unmasked positions, positive class is in-scope."""
    pred = np.asarray(pred)
    gold = np.asarray(gold)
    if pred.shape != gold.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {gold.shape}")
    if score_mask is not None:
        score_mask = np.asarray(score_mask, dtype=bool)
        if score_mask.shape != gold.shape:
            raise ValueError(f"mask length {score_mask.shape} != labels {gold.shape}")
        pred, gold = pred[score_mask], gold[score_mask]
    tp = int(((pred == 1) & (gold == 1)).sum())
    fp = int(((pred == 1) & (gold == 0)).sum())
    fn = int(((pred == 0) & (gold == 1)).sum())
    return tp, fp, fn


def _prf(tp, fp, fn) -> tuple:
    if tp == 0 and fp == 0 and fn == 0:
        return 1.0, 1.0, 1.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def token_f1(pred, gold, score_mask=None):
    """Precision, recall, F1 over per-token in-scope matches.

    Masked positions are excluded. With no positives anywhere on either side
    the prediction is an exact match and all three scores are 1; otherwise an
    empty denominator yields 0.
    """
    return _prf(*token_counts(pred, gold, score_mask))


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              betas=(0.9, 0.999), eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, in place. Call once per step per group;
    the caller advances state.t before the first group."""
    b1, b2 = betas
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if np.isnan(g).any():
            raise TrainingError(f"NaN gradient in parameter {name}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
        v = state.v.get(name)
        if v is None:
            v = state.v[name] = np.zeros_like(p.data)
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1 ** state.t)
        v_hat = v / (1 - b2 ** state.t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


class AdamOptimizer:
    """Adam over named parameter groups with per-group learning rates."""

    def __init__(self, groups: dict, lrs: dict, betas=(0.9, 0.999), eps=1e-8):
        self.groups = groups
        self.lrs = lrs
        self.betas = betas
        self.eps = eps
        self.state = AdamState()

    def zero_grad(self):
        for params in self.groups.values():
            for p in params.values():
                p.grad = None

    def step(self):
        self.state.t += 1
        for group_name, params in self.groups.items():
            grads = {k: p.grad for k, p in params.items() if p.grad is not None}
            adam_step(params, grads, self.state, self.lrs[group_name],
                      self.betas, self.eps)


# ---------------------------------------------------------------------------
# data preparation and evaluation


def prepare_samples(samples, mode: str, max_len: int, vocab_size: int):
    prepared, skipped = [], 0
    for s in samples:
        p = fit_window(preprocess(s, mode, vocab_size), max_len)
        if p is None:
            skipped += 1
            continue
        prepared.append(p)
    if skipped:
        warnings.warn(f"skipped {skipped} samples whose cue tokens do not fit "
                      f"in a {max_len}-token window")
    return prepared, skipped


def evaluate_counts(model: ScopeModel, prepared: list) -> tuple:
    """Test-set confusion counts (tp, fp, fn) over a prepared sample list."""
    preds, golds, masks = [], [], []
    with no_grad():
        for p in prepared:
            out = model.predict(p.sequence)
            preds.append(out.labels)
            golds.append(p.labels)
            masks.append(p.score_mask)
    return token_counts(np.concatenate(preds), np.concatenate(golds),
                        np.concatenate(masks))


def evaluate(model: ScopeModel, prepared: list) -> tuple:
    """Micro token F1 over a prepared sample list (eval mode)."""
    return _prf(*evaluate_counts(model, prepared))


def train_epoch(model: ScopeModel, prepared: list, optimizer: AdamOptimizer,
                batch_size: int, rng: RngState) -> float:
    """One pass over the data; gradients accumulate per sample within a batch."""
    order = rng.generator.permutation(len(prepared))
    total_loss = 0.0
    for start in range(0, len(order), batch_size):
        batch = order[start:start + batch_size]
        optimizer.zero_grad()
        for idx in batch:
            p = prepared[idx]
            loss = model.loss(model.forward(p.sequence, training=True), p.labels)
            backward(scale(loss, 1.0 / len(batch)))
            total_loss += loss.item()
        optimizer.step()
    return total_loss / max(len(prepared), 1)


def build_model(config: TrainConfig, seed: int) -> ScopeModel:
    oa = OAConfig(d=config.d, n_heads=config.n_heads, variant=config.variant,
                  dropout_p=config.dropout)
    spec = BackboneSpec(kind="toy_encoder", d=config.d, max_len=config.max_len)
    return ScopeModel.init(oa, spec, seed=seed)


def make_optimizer(model: ScopeModel, config: TrainConfig) -> AdamOptimizer:
    return AdamOptimizer(model.parameter_groups(),
                         lrs={"backbone": config.lr_backbone, "oa": config.lr_oa})


def train_fold(train, val, test, model: ScopeModel, config: TrainConfig,
               fold_id: int, seed: int, checkpoint_path=None) -> FoldReport:
    """Train with early stopping on validation F1; report test metrics of the
    best snapshot."""
    if not train or not val or not test:
        raise TrainingError("empty split passed to train_fold")
    started = time.perf_counter()
    optimizer = make_optimizer(model, config)
    shuffle_rng = RngState(seed).derive(0xBA7C)
    best_f1 = -1.0
    best_epoch = 0
    best_snap = model.snapshot()
    since_best = 0
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        train_epoch(model, train, optimizer, config.batch_size, shuffle_rng)
        _, _, val_f1 = evaluate(model, val)
        if val_f1 > best_f1:
            best_f1 = val_f1
            best_epoch = epoch
            best_snap = model.snapshot()
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break
    model.restore(best_snap)
    if checkpoint_path is not None:
        model.save(checkpoint_path)
    counts = evaluate_counts(model, test)
    precision, recall, f1 = _prf(*counts)
    return FoldReport(fold=fold_id, precision=precision, recall=recall, f1=f1,
                      best_epoch=best_epoch, epochs_run=epoch, seed=seed,
                      duration_s=time.perf_counter() - started, counts=counts)


# ---------------------------------------------------------------------------
# cross-validation drivers


def _vocab_size():
    return BackboneSpec().vocab_size


def _cv_fold_job(job) -> FoldReport:
    """Self-contained fold worker, also usable from a process pool."""
    config, prepared, split, fold_id, fold_seed, checkpoint_path = job
    train_idx, val_idx, test_idx = split
    model = build_model(config, seed=fold_seed)
    return train_fold([prepared[j] for j in train_idx],
                      [prepared[j] for j in val_idx],
                      [prepared[j] for j in test_idx],
                      model, config, fold_id=fold_id, seed=fold_seed,
                      checkpoint_path=checkpoint_path)


def run_cv(samples, config: TrainConfig, train_name: str = "data",
           test_name: str | None = None, jobs: int = 1,
           checkpoint_dir=None) -> RunSummary:
    """k-fold cross-validation on one canonical dataset. Folds are
    independent; jobs > 1 fans them out over processes with identical
    results (every fold carries its own derived seed)."""
    prepared, _ = prepare_samples(samples, config.preprocessing, config.max_len,
                                  _vocab_size())
    splits = kfold_split(len(prepared), config.k, config.seed)
    if checkpoint_dir is not None:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
    job_list = []
    for i, split in enumerate(splits):
        fold_seed = int(RngState(config.seed).derive(i).seed)
        ckpt = None if checkpoint_dir is None else Path(checkpoint_dir) / f"fold{i}.ckpt"
        job_list.append((config, prepared, split, i, fold_seed, ckpt))
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            folds = list(pool.map(_cv_fold_job, job_list))
    else:
        folds = [_cv_fold_job(job) for job in job_list]
    return RunSummary.from_folds(folds, config.variant, config.preprocessing,
                                 train_name, test_name or train_name,
                                 json.loads(config.golden()))


def _fold_ckpt(checkpoint_dir, fold_id):
    if checkpoint_dir is None:
        return None
    Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
    return Path(checkpoint_dir) / f"fold{fold_id}.ckpt"


def run_fixed_split(samples, config: TrainConfig, train_name: str = "data",
                    repetitions: int = 10, checkpoint_dir=None) -> RunSummary:
    """Fixed train/dev/test split (split tags on the samples): repeated
    seeded runs over the provided test set."""
    train_idx, dev_idx, test_idx = sherlock_split(samples)

    def prep(idx):
        subset, _ = prepare_samples([samples[i] for i in idx], config.preprocessing,
                                    config.max_len, _vocab_size())
        return subset

    train, dev, test = prep(train_idx), prep(dev_idx), prep(test_idx)
    folds = []
    for rep in range(repetitions):
        rep_seed = int(RngState(config.seed).derive(rep).seed)
        model = build_model(config, seed=rep_seed)
        folds.append(train_fold(train, dev, test, model, config,
                                fold_id=rep, seed=rep_seed,
                                checkpoint_path=_fold_ckpt(checkpoint_dir, rep)))
    return RunSummary.from_folds(folds, config.variant, config.preprocessing,
                                 train_name, train_name, json.loads(config.golden()))


def run_crossdataset(train_samples, test_samples, config: TrainConfig,
                     train_name: str = "train", test_name: str = "test",
                     checkpoint_dir=None) -> RunSummary:
    """Train on one corpus, evaluate on another: k seeded repetitions, each
    holding out a validation slice of the training corpus for early stopping."""
    train_prep, _ = prepare_samples(train_samples, config.preprocessing,
                                    config.max_len, _vocab_size())
    test_prep, _ = prepare_samples(test_samples, config.preprocessing,
                                   config.max_len, _vocab_size())
    folds = []
    for rep in range(config.k):
        rep_seed = int(RngState(config.seed).derive(rep).seed)
        val_size = max(1, len(train_prep) // config.k)
        order = RngState(rep_seed).derive(0x5B117).generator.permutation(len(train_prep))
        val = [train_prep[j] for j in order[:val_size]]
        train = [train_prep[j] for j in order[val_size:]]
        model = build_model(config, seed=rep_seed)
        folds.append(train_fold(train, val, test_prep, model, config,
                                fold_id=rep, seed=rep_seed,
                                checkpoint_path=_fold_ckpt(checkpoint_dir, rep)))
    return RunSummary.from_folds(folds, config.variant, config.preprocessing,
                                 train_name, test_name, json.loads(config.golden()))


# ---------------------------------------------------------------------------
# inference benchmark


def bench(config: TrainConfig, batch_sizes, repeats: int = 10,
          warmup: int = 3, sentence_len: int = 16) -> list:
    """Median wall-clock time of a forward pass per batch size (eval mode)."""
    from .corpus import synthetic_corpus

    model = build_model(config, seed=config.seed)
    rows = []
    for batch in batch_sizes:
        samples = synthetic_corpus(batch, seed=config.seed, min_len=sentence_len,
                                   max_len=sentence_len)
        prepared, _ = prepare_samples(samples, config.preprocessing,
                                      config.max_len, _vocab_size())
        times = []
        with no_grad():
            for rep in range(warmup + repeats):
                start = time.perf_counter()
                for p in prepared:
                    model.forward(p.sequence, training=False)
                elapsed = time.perf_counter() - start
                if rep >= warmup:
                    times.append(elapsed)
        rows.append({"variant": config.variant, "batch_size": batch,
                     "median_s": float(np.median(times)),
                     "per_sample_ms": float(np.median(times) / batch * 1e3)})
    return rows
