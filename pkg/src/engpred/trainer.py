"""Joint NAWP+ECR training with cosine-annealed Adam, plus ablation modes.

Batches group whole videos; each video runs its own forward/backward pass
and gradients accumulate, so there is no padding and results are exact.
The batch schedule is a pure function of (seed, step), which lets a resumed
run reproduce an uninterrupted one bit for bit.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import DataError, NumericError
from .metrics import srcc
from .model import (
    FeatureBundle,
    ForwardResult,
    ModelConfig,
    config_for_bundle,
    forward,
    init_params,
)
from .optim import AdamState, adam_step, cosine_lr
from .serialize import load_bundle, load_weights, read_manifest, save_weights

MODES = ("joint", "nawp_only", "ecr_only")
TARGETS = ("nawp", "awt", "awp")

_TARGET_LABEL_KEYS = {"nawp": "nawp_label", "awt": "awt_label", "awp": "awp_label"}


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    iterations: int = 3000
    lr_max: float = 1e-4
    lr_min: float = 1e-7
    seed: int = 0
    mode: str = "joint"
    target: str = "nawp"
    duration_as_input: bool = False
    split_ratio: float = 0.9
    eval_interval: int = 250

    def validate(self) -> None:
        if self.batch_size < 1:
            raise DataError("batch_size must be >= 1")
        if self.iterations < 1:
            raise DataError("iterations must be >= 1")
        if not 0.0 < self.split_ratio < 1.0:
            raise DataError("split_ratio must lie in (0, 1)")
        if self.mode not in MODES:
            raise DataError(f"mode must be one of {MODES}")
        if self.target not in TARGETS:
            raise DataError(f"target must be one of {TARGETS}")
        if self.eval_interval < 1:
            raise DataError("eval_interval must be >= 1")

    def to_dict(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "iterations": self.iterations,
            "lr_max": self.lr_max,
            "lr_min": self.lr_min,
            "seed": self.seed,
            "mode": self.mode,
            "target": self.target,
            "duration_as_input": self.duration_as_input,
            "split_ratio": self.split_ratio,
            "eval_interval": self.eval_interval,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "TrainConfig":
        valid = set(cls.__dataclass_fields__)
        unknown = [k for k in payload if k not in valid]
        if unknown:
            raise DataError(f"unknown train config keys {unknown}")
        cfg = cls(**payload)
        cfg.validate()
        return cfg


def split_dataset(ids, split_ratio: float, seed: int) -> tuple[list[str], list[str]]:
    """Deterministic shuffled train/test split; both sides are non-empty."""
    unique = sorted(set(ids))
    if len(unique) != len(list(ids)):
        raise DataError("duplicate video ids in manifest")
    n = len(unique)
    if n < 2:
        raise DataError("need at least 2 videos to split")
    if not 0.0 < split_ratio < 1.0:
        raise DataError("split_ratio must lie in (0, 1)")
    perm = np.random.default_rng([seed, 101]).permutation(n)
    n_train = min(max(int(n * split_ratio), 1), n - 1)
    shuffled = [unique[i] for i in perm]
    return sorted(shuffled[:n_train]), sorted(shuffled[n_train:])


def loss_value(pred_nawp, pred_ecr, truth_nawp, truth_ecr, mode: str = "joint") -> float:
    """Per-metric mean squared error over a batch, summed across active heads."""
    if mode not in MODES:
        raise DataError(f"mode must be one of {MODES}")
    total = 0.0
    if mode in ("joint", "nawp_only"):
        diff = np.asarray(pred_nawp, dtype=np.float64) - np.asarray(truth_nawp, dtype=np.float64)
        total += float(np.mean(diff**2))
    if mode in ("joint", "ecr_only"):
        diff = np.asarray(pred_ecr, dtype=np.float64) - np.asarray(truth_ecr, dtype=np.float64)
        total += float(np.mean(diff**2))
    return total


class BundleCache:
    """Lazy feature-bundle loader keyed by video id."""

    def __init__(self, manifest_dir: Path, rows: list[dict]) -> None:
        self._paths = {row["video_id"]: manifest_dir / row["feature_path"] for row in rows}
        self._cache: dict[str, FeatureBundle] = {}

    def get(self, video_id: str) -> FeatureBundle:
        bundle = self._cache.get(video_id)
        if bundle is None:
            path = self._paths.get(video_id)
            if path is None:
                raise DataError(f"no manifest entry for video {video_id!r}")
            try:
                bundle = load_bundle(path)
            except OSError as exc:
                raise DataError(f"cannot read feature bundle {path}: {exc}") from exc
            if bundle.video_id != video_id:
                raise DataError(f"bundle {path} carries id {bundle.video_id!r}")
            self._cache[video_id] = bundle
        return bundle


def _batch_ids(train_ids: list[str], cfg: TrainConfig, step: int, perm_cache: dict) -> list[str]:
    n = len(train_ids)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    epoch, slot = divmod(step, steps_per_epoch)
    if perm_cache.get("epoch") != epoch:
        perm_cache["epoch"] = epoch
        perm_cache["perm"] = np.random.default_rng([cfg.seed, 202, epoch]).permutation(n)
    perm = perm_cache["perm"]
    start = slot * cfg.batch_size
    return [train_ids[i] for i in perm[start : start + cfg.batch_size]]


def config_hash(train_cfg: TrainConfig, model_cfg: ModelConfig) -> bytes:
    payload = json.dumps(
        {"train": train_cfg.to_dict(), "model": model_cfg.to_dict()},
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).digest()


def _bytes_to_array(data: bytes) -> np.ndarray:
    return np.asarray(list(data), dtype=np.float64)


def _array_to_bytes(arr: np.ndarray) -> bytes:
    return bytes(int(b) for b in arr.reshape(-1))


def save_checkpoint(
    path: Path | str,
    params: dict[str, Tensor],
    state: AdamState,
    step: int,
    train_cfg: TrainConfig,
    model_cfg: ModelConfig,
    label_scale: tuple[float, float],
) -> None:
    arrays: dict[str, np.ndarray] = {}
    for name, p in params.items():
        arrays[f"param/{name}"] = p.data
    for name in params:
        arrays[f"adam.m/{name}"] = state.m[name]
        arrays[f"adam.v/{name}"] = state.v[name]
    arrays["meta/step"] = np.asarray([float(step)])
    arrays["meta/adam_t"] = np.asarray([float(state.t)])
    arrays["meta/label_scale"] = np.asarray(list(label_scale), dtype=np.float64)
    arrays["meta/config_sha256"] = _bytes_to_array(config_hash(train_cfg, model_cfg))
    arrays["meta/model_json"] = _bytes_to_array(json.dumps(model_cfg.to_dict()).encode("utf-8"))
    save_weights(path, arrays)


@dataclass
class Checkpoint:
    params: dict[str, Tensor]
    state: AdamState
    step: int
    model_cfg: ModelConfig
    config_sha256: bytes
    label_scale: tuple[float, float]


def load_checkpoint(path: Path | str) -> Checkpoint:
    arrays = load_weights(path)
    params: dict[str, Tensor] = {}
    m: dict[str, np.ndarray] = {}
    v: dict[str, np.ndarray] = {}
    for name, arr in arrays.items():
        if name.startswith("param/"):
            params[name[len("param/") :]] = Tensor(arr)
        elif name.startswith("adam.m/"):
            m[name[len("adam.m/") :]] = arr.copy()
        elif name.startswith("adam.v/"):
            v[name[len("adam.v/") :]] = arr.copy()
    for key in ("meta/step", "meta/adam_t", "meta/label_scale", "meta/config_sha256", "meta/model_json"):
        if key not in arrays:
            raise DataError(f"checkpoint missing {key}")
    model_cfg = ModelConfig.from_dict(json.loads(_array_to_bytes(arrays["meta/model_json"]).decode("utf-8")))
    state = AdamState(m=m, v=v, t=int(arrays["meta/adam_t"][0]))
    scale_arr = arrays["meta/label_scale"]
    return Checkpoint(
        params=params,
        state=state,
        step=int(arrays["meta/step"][0]),
        model_cfg=model_cfg,
        config_sha256=_array_to_bytes(arrays["meta/config_sha256"]),
        label_scale=(float(scale_arr[0]), float(scale_arr[1])),
    )


@dataclass
class TrainResult:
    params: dict[str, Tensor]
    state: AdamState
    model_cfg: ModelConfig
    train_ids: list[str]
    test_ids: list[str]
    label_scale: tuple[float, float]
    log_rows: list[dict] = field(default_factory=list)
    predictions: list[dict] = field(default_factory=list)
    final_srcc_nawp: float | None = None
    final_srcc_ecr: float | None = None
    checkpoint_path: Path | None = None


def _labels_for(rows: list[dict], key: str) -> dict[str, float]:
    labels = {}
    for row in rows:
        if key not in row or row[key] is None:
            raise DataError(f"manifest row {row['video_id']!r} is missing {key!r}")
        value = float(row[key])
        if not math.isfinite(value):
            raise DataError(f"label {key!r} for {row['video_id']!r} is not finite")
        labels[row["video_id"]] = value
    return labels


def _video_loss_node(res: ForwardResult, y1: float, y2: float, mode: str, inv_batch: float):
    terms = []
    if mode in ("joint", "nawp_only"):
        terms.append(ad.scale(ad.squared_error(res.nawp_node, np.asarray(y1)), inv_batch))
    if mode in ("joint", "ecr_only"):
        terms.append(ad.scale(ad.squared_error(res.ecr_node, np.asarray(y2)), inv_batch))
    node = terms[0]
    for extra in terms[1:]:
        node = ad.add(node, extra)
    return node


def _predict(
    ids: list[str],
    cache: BundleCache,
    durations: dict[str, float],
    params: dict[str, Tensor],
    model_cfg: ModelConfig,
    label_scale: tuple[float, float],
) -> list[dict]:
    rows = []
    for vid in ids:
        res = forward(cache.get(vid), params, model_cfg, duration_s=durations[vid])
        rows.append(
            {
                "video_id": vid,
                "nawp_hat": res.nawp_hat * label_scale[0],
                "ecr_hat": res.ecr_hat * label_scale[1],
            }
        )
    return rows


def _safe_srcc(pred, truth) -> float | None:
    try:
        return srcc(pred, truth)
    except NumericError:
        return None


def train(
    manifest_path: Path | str,
    train_cfg: TrainConfig,
    model_cfg: ModelConfig,
    out_dir: Path | str | None = None,
    resume_from: Path | str | None = None,
    stop_after_step: int | None = None,
) -> TrainResult:
    """Run the training loop over a labeled feature manifest.

    ``stop_after_step`` halts early while keeping the full schedule, so a
    checkpoint written there can be resumed to reproduce the uninterrupted
    run exactly.
    """
    train_cfg.validate()
    manifest_path = Path(manifest_path)
    rows = read_manifest(manifest_path)
    rows.sort(key=lambda r: r["video_id"])
    ids = [row["video_id"] for row in rows]
    durations = {row["video_id"]: float(row["duration_s"]) for row in rows}
    train_ids, test_ids = split_dataset(ids, train_cfg.split_ratio, train_cfg.seed)
    cache = BundleCache(manifest_path.parent, rows)

    model_cfg = replace(model_cfg, duration_as_input=train_cfg.duration_as_input)
    model_cfg = config_for_bundle(model_cfg, cache.get(ids[0]))
    model_cfg.validate()

    target_key = _TARGET_LABEL_KEYS[train_cfg.target]
    y1_raw = _labels_for(rows, target_key)
    y2_raw = _labels_for(rows, "ecr_label")
    if train_cfg.target == "nawp":
        scale1 = 1.0
    else:
        # Sigmoid heads live in (0, 1); unnormalized targets are rescaled by a
        # train-split constant. Rank metrics are unaffected (monotone map).
        scale1 = 1.25 * max(y1_raw[vid] for vid in train_ids)
        if scale1 <= 0:
            raise DataError(f"cannot scale non-positive {target_key!r} labels")
    label_scale = (scale1, 1.0)

    expected_hash = config_hash(train_cfg, model_cfg)
    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        if ckpt.config_sha256 != expected_hash:
            raise DataError("checkpoint was produced with a different configuration")
        params, state, start_step = ckpt.params, ckpt.state, ckpt.step
        label_scale = ckpt.label_scale
    else:
        params = init_params(model_cfg, train_cfg.seed)
        state = AdamState.for_params(params)
        start_step = 0
    if start_step > train_cfg.iterations:
        raise DataError("checkpoint is beyond the requested iteration count")
    end_step = train_cfg.iterations
    if stop_after_step is not None:
        end_step = min(max(stop_after_step, start_step), end_step)

    truth_nawp = [y1_raw[vid] for vid in test_ids]
    truth_ecr = [y2_raw[vid] for vid in test_ids]
    log_rows: list[dict] = []
    perm_cache: dict = {}
    schedule_total = max(train_cfg.iterations - 1, 1)

    for step in range(start_step, end_step):
        lr = cosine_lr(min(step, schedule_total), schedule_total, train_cfg.lr_max, train_cfg.lr_min)
        batch = _batch_ids(train_ids, train_cfg, step, perm_cache)
        inv_batch = 1.0 / len(batch)
        batch_loss = 0.0
        for vid in batch:
            bundle = cache.get(vid)
            y1 = y1_raw[vid] / label_scale[0]
            y2 = y2_raw[vid] / label_scale[1]
            with Tape() as tape:
                res = forward(bundle, params, model_cfg, duration_s=durations[vid])
                node = _video_loss_node(res, y1, y2, train_cfg.mode, inv_batch)
            tape.backward(node)
            batch_loss += float(node.data)
        if not math.isfinite(batch_loss):
            raise NumericError(f"training loss became non-finite at step {step}")
        grads = {name: p.grad for name, p in params.items()}
        adam_step(params, grads, state, lr)
        done = step + 1
        if done % train_cfg.eval_interval == 0 or done == end_step:
            preds = _predict(test_ids, cache, durations, params, model_cfg, label_scale)
            log_rows.append(
                {
                    "step": done,
                    "lr": lr,
                    "train_loss": batch_loss,
                    "eval_srcc_nawp": _safe_srcc([p["nawp_hat"] for p in preds], truth_nawp),
                    "eval_srcc_ecr": _safe_srcc([p["ecr_hat"] for p in preds], truth_ecr),
                }
            )

    predictions = _predict(test_ids, cache, durations, params, model_cfg, label_scale)
    result = TrainResult(
        params=params,
        state=state,
        model_cfg=model_cfg,
        train_ids=train_ids,
        test_ids=test_ids,
        label_scale=label_scale,
        log_rows=log_rows,
        predictions=predictions,
        final_srcc_nawp=_safe_srcc([p["nawp_hat"] for p in predictions], truth_nawp),
        final_srcc_ecr=_safe_srcc([p["ecr_hat"] for p in predictions], truth_ecr),
    )

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        checkpoint_path = out_dir / "checkpoint.engw"
        save_checkpoint(
            checkpoint_path,
            params,
            state,
            end_step,
            train_cfg,
            model_cfg,
            label_scale,
        )
        with open(out_dir / "train_log.jsonl", "w", encoding="utf-8") as f:
            for row in log_rows:
                f.write(json.dumps(row, separators=(",", ":")))
                f.write("\n")
        with open(out_dir / "test_predictions.jsonl", "w", encoding="utf-8") as f:
            for row in predictions:
                f.write(json.dumps(row, separators=(",", ":")))
                f.write("\n")
        summary = {
            "iterations": train_cfg.iterations,
            "mode": train_cfg.mode,
            "target": train_cfg.target,
            "n_train": len(train_ids),
            "n_test": len(test_ids),
            "label_scale": list(label_scale),
            "final_srcc_nawp": result.final_srcc_nawp,
            "final_srcc_ecr": result.final_srcc_ecr,
        }
        with open(out_dir / "train_summary.json", "w", encoding="utf-8") as f:
            json.dump(summary, f, indent=2, sort_keys=True)
            f.write("\n")
        result.checkpoint_path = checkpoint_path
    return result


def compare_modes(
    manifest_path: Path | str,
    train_cfg: TrainConfig,
    model_cfg: ModelConfig,
    out_dir: Path | str | None = None,
) -> dict:
    """Joint-vs-separate training comparison on the same split and seed.

    The separate row pairs the NAWP score of a nawp_only run with the ECR
    score of an ecr_only run.
    """
    results = {}
    for mode in MODES:
        cfg = replace(train_cfg, mode=mode)
        run_dir = Path(out_dir) / mode if out_dir is not None else None
        results[mode] = train(manifest_path, cfg, model_cfg, out_dir=run_dir)
    comparison = {
        "joint": {
            "srcc_nawp": results["joint"].final_srcc_nawp,
            "srcc_ecr": results["joint"].final_srcc_ecr,
        },
        "separate": {
            "srcc_nawp": results["nawp_only"].final_srcc_nawp,
            "srcc_ecr": results["ecr_only"].final_srcc_ecr,
        },
    }
    if out_dir is not None:
        with open(Path(out_dir) / "mode_comparison.json", "w", encoding="utf-8") as f:
            json.dump(comparison, f, indent=2, sort_keys=True)
            f.write("\n")
    return comparison
