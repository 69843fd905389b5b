"""Two-stage training: slot encoder supervision, then behavior cloning.

Batches are resampled from (run seed, step), so resuming from a checkpoint
replays the exact same data order and reproduces the next step's gradients
bitwise. Loss components stream to a CSV per run.
"""

from __future__ import annotations

import json
import subprocess
import time
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from . import __version__
from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .decoder import ACTION_DIMS, action_to_bins
from .losses import action_ce, match_frame
from .optim import AdaptiveOptimizer
from .pipeline import Clip, Pipeline, frame_from_record, frame_targets
from .world import Episode, episode_files, load_episode

LOSS_CSV_HEADER = "step,L_box,L_obj,L_seg,L_track,L_int,total"


class TrainingError(Exception):
    pass


def git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=10)
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def write_manifest(out_dir: Path, cfg: RunConfig, **extra) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.txt").write_text(cfg.to_text())
    manifest = {"config_hash": cfg.hash(), "seed": cfg.seed,
                "package_version": __version__, "git": git_describe(),
                "created_unix": int(time.time())}
    manifest.update(extra)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


class Corpus:
    """Episodes with precomputed frames and supervision targets."""

    def __init__(self, episodes: list[Episode], patch_size: int):
        if not episodes:
            raise TrainingError("empty corpus")
        self.episodes = episodes
        self.frames = [[frame_from_record(r) for r in ep.frames] for ep in episodes]
        self.targets = [[frame_targets(r, patch_size) for r in ep.frames]
                        for ep in episodes]

    @staticmethod
    def load(data_dir: str | Path, patch_size: int) -> "Corpus":
        files = episode_files(data_dir)
        if not files:
            raise TrainingError(f"no episodes under {data_dir}")
        return Corpus([load_episode(p) for p in files], patch_size)

    def __len__(self) -> int:
        return len(self.episodes)

    def episode_key(self, index: int) -> int:
        seed = self.episodes[index].seed
        return seed if seed >= 0 else index

    def clip(self, index: int, start: int, length: int) -> Clip:
        return Clip(frames=self.frames[index][start:start + length],
                    targets=self.targets[index][start:start + length],
                    task=self.episodes[index].frames[0].task,
                    episode_key=self.episode_key(index), base_t=start)


def sample_clips(corpus: Corpus, cfg: RunConfig, step: int) -> list[Clip]:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7001, step]))
    clips = []
    for _ in range(cfg.batch_clips):
        idx = int(rng.integers(len(corpus)))
        span = len(corpus.frames[idx])
        length = min(cfg.clip_len, span)
        start = int(rng.integers(0, span - length + 1))
        clips.append(corpus.clip(idx, start, length))
    return clips


# ---------------------------------------------------------------------------
# metrics


def auc_score(scores: np.ndarray, labels: np.ndarray) -> float:
    """Rank-based AUC with average ranks on ties."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels) > 0.5
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def stage1_metrics(pipeline: Pipeline, corpus: Corpus) -> dict[str, float]:
    """Matched-slot box IoU and relevance AUC over a full corpus."""
    from .losses import iou_matrix
    ious: list[float] = []
    pi_all: list[float] = []
    labels_all: list[float] = []
    with T.no_grad():
        for idx in range(len(corpus)):
            key = corpus.episode_key(idx)
            lang = pipeline.lang_filter(corpus.episodes[idx].frames[0].task)
            prev = None
            for t, (frame, targets) in enumerate(zip(corpus.frames[idx],
                                                     corpus.targets[idx])):
                _, state, _ = pipeline.encode_frame(frame, prev, key, t)
                prev = state
                preds = pipeline.heads(state.slots)
                match = match_frame(preds, targets, pipeline.loss_cfg)
                pairwise = iou_matrix(preds.boxes.data, targets.boxes)
                ious.extend(pairwise[s, g] for s, g in match.pairs)
                _, _, pi = pipeline.filter(state.slots, lang,
                                           pipeline.cfg.num_selected,
                                           enabled=pipeline.cfg.filter_on)
                from .losses import slot_relevance_labels
                lbl = slot_relevance_labels(match, targets.relevance,
                                            pipeline.cfg.num_slots)
                pi_all.extend(pi.data.reshape(-1).tolist())
                labels_all.extend(lbl.tolist())
    return {"iou": float(np.mean(ious)) if ious else 0.0,
            "auc": auc_score(np.array(pi_all), np.array(labels_all))}


def assignment_flip_rate(pipeline: Pipeline, corpus: Corpus,
                         carryover: bool) -> float:
    """Fraction of consecutive-frame object matches that switch slots."""
    flips = 0
    chances = 0
    saved = pipeline.cfg.carryover_on
    pipeline.cfg.carryover_on = carryover
    try:
        with T.no_grad():
            for idx in range(len(corpus)):
                key = corpus.episode_key(idx)
                prev = None
                prev_map: dict[str, int] = {}
                for t, (frame, targets) in enumerate(zip(corpus.frames[idx],
                                                         corpus.targets[idx])):
                    _, state, _ = pipeline.encode_frame(frame, prev, key, t)
                    prev = state
                    preds = pipeline.heads(state.slots)
                    match = match_frame(preds, targets, pipeline.loss_cfg)
                    current = {targets.instance_ids[g]: s for s, g in match.pairs}
                    for name, slot in current.items():
                        if name in prev_map:
                            chances += 1
                            if prev_map[name] != slot:
                                flips += 1
                    prev_map = current
    finally:
        pipeline.cfg.carryover_on = saved
    return flips / chances if chances else 0.0


# ---------------------------------------------------------------------------
# stage 1


def train_stage1(cfg: RunConfig, data_dir: str | Path, out_dir: str | Path,
                 val_dir: str | Path | None = None,
                 resume: str | Path | None = None) -> dict:
    out_dir = Path(out_dir)
    write_manifest(out_dir, cfg, stage=1, data=str(data_dir))
    corpus = Corpus.load(data_dir, cfg.patch_size)
    val = Corpus.load(val_dir, cfg.patch_size) if val_dir else None
    pipeline = Pipeline(cfg)
    params = pipeline.stage1_params()
    opt = AdaptiveOptimizer(params, lr=cfg.lr, total_steps=cfg.stage1_iters,
                            clip_norm=cfg.grad_clip)
    if resume is not None:
        state = load_checkpoint(resume)
        params.load_state(state)
        opt.load_state(state)
    log_path = out_dir / "stage1_loss.csv"
    mode = "a" if resume is not None and log_path.exists() else "w"
    history: list[dict] = []
    with open(log_path, mode) as log:
        if mode == "w":
            log.write(LOSS_CSV_HEADER + "\n")
        start = opt.step_count
        for step in range(start, cfg.stage1_iters):
            batch = sample_clips(corpus, cfg, step)
            with T.fresh_tape() as tape:
                loss, parts = pipeline.stage1_batch_loss(batch)
                opt.zero_grad()
                tape.backward(loss)
            opt.step()
            log.write(f"{step},{parts['box']:.6f},{parts['obj']:.6f},"
                      f"{parts['seg']:.6f},{parts['track']:.6f},"
                      f"{parts['int']:.6f},{parts['total']:.6f}\n")
            if val is not None and (step + 1) % cfg.eval_every == 0:
                metrics = stage1_metrics(pipeline, val)
                metrics["step"] = step + 1
                history.append(metrics)
                log.flush()
                if (metrics["iou"] >= cfg.target_iou + cfg.early_stop_margin
                        and metrics["auc"] >= cfg.target_auc + cfg.early_stop_margin):
                    break
    ckpt = out_dir / "stage1.ckpt"
    blob = params.state() | opt.state()
    save_checkpoint(ckpt, blob)
    return {"checkpoint": ckpt, "history": history, "steps": opt.step_count,
            "pipeline": pipeline}


# ---------------------------------------------------------------------------
# stage 2


def _stage1_fingerprint(pipeline: Pipeline) -> dict[str, bytes]:
    return {name: t.data.tobytes() for name, t in pipeline.stage1_params().items()}


def flatten_cache(pipeline: Pipeline, corpus: Corpus) -> list[dict]:
    flat: list[dict] = []
    for idx in range(len(corpus)):
        flat.extend(pipeline.encode_episode_cache(corpus.episodes[idx].frames,
                                                  corpus.episode_key(idx)))
    return flat


def action_accuracy(pipeline: Pipeline, cache: list[dict]) -> dict:
    """Per-dimension top-1 bin accuracy over cached frames."""
    hits = np.zeros(ACTION_DIMS)
    with T.no_grad():
        for entry in cache:
            logits = pipeline.stage2_logits(entry)
            pred = np.argmax(logits.data, axis=1)
            truth = action_to_bins(entry["action"], pipeline.cfg.action_bins)
            hits += pred == truth
    per_dim = hits / max(len(cache), 1)
    return {"per_dim": per_dim, "min": float(per_dim.min()),
            "mean": float(per_dim.mean())}


def train_stage2(cfg: RunConfig, stage1_ckpt: str | Path, data_dir: str | Path,
                 out_dir: str | Path, val_dir: str | Path | None = None) -> dict:
    out_dir = Path(out_dir)
    write_manifest(out_dir, cfg, stage=2, data=str(data_dir),
                   stage1=str(stage1_ckpt))
    pipeline = Pipeline(cfg)
    stage1_state = load_checkpoint(stage1_ckpt)
    pipeline.stage1_params().load_state(stage1_state)
    fingerprint = _stage1_fingerprint(pipeline)

    corpus = Corpus.load(data_dir, cfg.patch_size)
    cache = flatten_cache(pipeline, corpus)
    val_cache = flatten_cache(pipeline, Corpus.load(val_dir, cfg.patch_size)) \
        if val_dir else None

    params = pipeline.stage2_params()
    opt = AdaptiveOptimizer(params, lr=cfg.lr, total_steps=cfg.stage2_iters,
                            clip_norm=cfg.grad_clip)
    log_path = out_dir / "stage2_loss.csv"
    history: list[dict] = []
    with open(log_path, "w") as log:
        log.write("step,action_ce\n")
        for step in range(cfg.stage2_iters):
            rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7002, step]))
            picks = rng.integers(0, len(cache), size=cfg.batch_frames)
            with T.fresh_tape() as tape:
                terms = []
                for pick in picks:
                    entry = cache[int(pick)]
                    logits = pipeline.stage2_logits(entry)
                    bins = action_to_bins(entry["action"], cfg.action_bins)
                    terms.append(action_ce(logits, bins))
                total = terms[0]
                for term in terms[1:]:
                    total = T.add(total, term)
                loss = T.mul(total, 1.0 / (len(picks) * ACTION_DIMS))
                opt.zero_grad()
                tape.backward(loss)
            opt.step()
            log.write(f"{step},{loss.item():.6f}\n")
            if val_cache is not None and (step + 1) % cfg.eval_every == 0:
                acc = action_accuracy(pipeline, val_cache)
                history.append({"step": step + 1, "min_acc": acc["min"],
                                "mean_acc": acc["mean"]})
                log.flush()
                if acc["min"] >= cfg.target_acc + cfg.early_stop_margin:
                    break

    for name, t in pipeline.stage1_params().items():
        if t.data.tobytes() != fingerprint[name]:
            raise TrainingError(f"stage-1 parameter {name} changed during stage 2")
        if t.grad is not None:
            raise TrainingError(f"stage-1 parameter {name} accumulated a gradient")
    ckpt = out_dir / "stage2.ckpt"
    save_checkpoint(ckpt, params.state() | opt.state())
    return {"checkpoint": ckpt, "history": history, "steps": opt.step_count,
            "pipeline": pipeline}
