"""Full model assembly: frontend, slot encoder, filter, relations, decoder.

Owns every parameter group, the stage-1/stage-2 split, frame encoding with
carryover, the per-batch stage-1 objective, cached stage-2 logits, and the
closed-loop policy step used during rollouts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import RunConfig
from .decoder import ActionDecoder
from .frontend import DenseTokens, Frame, PatchEmbedder
from .language import EmbeddingTable
from .losses import (FrameTargets, MatchAssignment, TrackProjection, match_frame,
                     relevance_loss, slot_attn_loss, slot_relevance_labels,
                     stage1_total, track_loss)
from .nn import ParamGroup
from .relations import RelationEncoder
from .slots import SlotAttention, SlotHeads, SlotState
from .task_filter import TaskFilter
from .tensor import Tensor
from .world import FrameRecord


def frame_targets(record: FrameRecord, patch_size: int) -> FrameTargets:
    """Boxes, patch-grid masks (cells at least half covered), relevance flags."""
    boxes = np.stack([inst.box for inst in record.instances])
    size = record.rgb.shape[0]
    g = size // patch_size
    masks = []
    for inst in record.instances:
        cells = inst.mask.reshape(g, patch_size, g, patch_size).mean(axis=(1, 3))
        masks.append((cells >= 0.5).astype(np.float64).reshape(-1))
    return FrameTargets(
        boxes=boxes, grid_masks=np.stack(masks),
        relevance=np.array([float(inst.relevant) for inst in record.instances]),
        instance_ids=[inst.instance_id for inst in record.instances])


def frame_from_record(record: FrameRecord) -> Frame:
    return Frame(rgb=record.rgb, t=record.t)


@dataclass
class Clip:
    """A short run of consecutive frames from one episode."""

    frames: list[Frame]
    targets: list[FrameTargets]
    task: str
    episode_key: int   # unique per source episode within a corpus
    base_t: int


def init_seed(run_seed: int, episode_key: int, t: int) -> int:
    return int(np.random.SeedSequence([run_seed, episode_key, t]).generate_state(1)[0])


class Pipeline:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        children = np.random.SeedSequence(cfg.seed).spawn(9)
        rngs = [np.random.default_rng(c) for c in children]
        grid_cells = (cfg.image_size // cfg.patch_size) ** 2
        self.frontend = PatchEmbedder(rngs[0], cfg.patch_size, cfg.width, cfg.image_size)
        self.slot_attn = SlotAttention(rngs[1], cfg.width, cfg.num_slots,
                                       cfg.refine_steps, cfg.residual_mlp)
        self.heads = SlotHeads(rngs[2], cfg.width, grid_cells)
        self.filter = TaskFilter(rngs[3], cfg.width, cfg.heads)
        self.lang_filter = EmbeddingTable(rngs[4], cfg.width, "lang")
        self.track_proj = TrackProjection(rngs[5], cfg.width) if cfg.track_projection else None
        self.relations = RelationEncoder(rngs[6], cfg.width, cfg.num_relations, cfg.heads)
        self.decoder = ActionDecoder(rngs[7], cfg.width, cfg.action_bins, cfg.heads)
        self.lang_decoder = EmbeddingTable(rngs[8], cfg.width, "decoder_lang")
        self.loss_cfg = cfg.loss_config()

    def stage1_params(self) -> ParamGroup:
        g = ParamGroup()
        for sub in (self.frontend.params(), self.slot_attn.params(),
                    self.heads.params(), self.filter.params(),
                    self.lang_filter.params()):
            g.merge(sub)
        if self.track_proj is not None:
            g.merge(self.track_proj.params())
        return g

    def stage2_params(self) -> ParamGroup:
        g = ParamGroup()
        for sub in (self.relations.params(), self.decoder.params(),
                    self.lang_decoder.params()):
            g.merge(sub)
        return g

    def all_params(self) -> ParamGroup:
        g = self.stage1_params()
        g.merge(self.stage2_params())
        return g

    # ------------------------------------------------------------------
    # encoding

    def encode_frame(self, frame: Frame, prev_state: SlotState | None,
                     episode_key: int, t: int):
        dense = self.frontend(frame)
        seed = init_seed(self.cfg.seed, episode_key, t)
        carry = self.cfg.carryover_on and prev_state is not None and t > 0
        state, maps = self.slot_attn.encode_frame(
            dense, prev_state if carry else None, rng_seed=seed,
            t=t if carry else 0, carryover=carry)
        state = SlotState(state.slots, t, state.init_mode)
        return dense, state, maps

    def track_embedding(self, slots: Tensor) -> Tensor:
        return self.track_proj(slots) if self.track_proj is not None else slots

    # ------------------------------------------------------------------
    # stage-1 objective

    def stage1_batch_loss(self, batch: list[Clip]) -> tuple[Tensor, dict[str, float]]:
        slot_terms: list[Tensor] = []
        int_terms: list[Tensor] = []
        parts_acc = {"box": 0.0, "obj": 0.0, "seg": 0.0}
        emb_blocks: list[Tensor] = []
        emb_labels: list[int] = []
        emb_frames: list[int] = []
        intern: dict[tuple[int, str], int] = {}
        n_frames = 0
        for clip in batch:
            lang = self.lang_filter(clip.task)
            prev = None
            for local_t, (frame, targets) in enumerate(zip(clip.frames, clip.targets)):
                t = clip.base_t + local_t
                _, state, _ = self.encode_frame(frame, prev, clip.episode_key, t)
                prev = state
                preds = self.heads(state.slots)
                match = match_frame(preds, targets, self.loss_cfg)
                term, parts = slot_attn_loss(preds, targets, match, self.loss_cfg)
                slot_terms.append(term)
                for key in parts_acc:
                    parts_acc[key] += parts[key]
                n_frames += 1
                _, _, pi = self.filter(state.slots, lang, self.cfg.num_selected,
                                       enabled=self.cfg.filter_on)
                labels = slot_relevance_labels(match, targets.relevance,
                                               self.cfg.num_slots)
                int_terms.append(relevance_loss(pi, labels, self.loss_cfg.w_pos,
                                                self.loss_cfg.w_neg))
                if self.loss_cfg.lambda_track > 0:
                    emb_blocks.append(self.track_embedding(state.slots))
                    gt_for_slot = dict(match.pairs)
                    for s in range(self.cfg.num_slots):
                        if s in gt_for_slot:
                            key = (clip.episode_key, targets.instance_ids[gt_for_slot[s]])
                            emb_labels.append(intern.setdefault(key, len(intern)))
                        else:
                            emb_labels.append(-1)
                        emb_frames.append(t)
        slot_mean = T.mul(_sum_terms(slot_terms), 1.0 / max(len(slot_terms), 1))
        int_mean = T.mul(_sum_terms(int_terms), 1.0 / max(len(int_terms), 1))
        if self.loss_cfg.lambda_track > 0 and emb_blocks:
            track, anchors, skipped = track_loss(
                T.concat(emb_blocks, axis=0), np.array(emb_labels),
                np.array(emb_frames), self.loss_cfg.tau, self.loss_cfg.track_window)
        else:
            track, anchors, skipped = Tensor(0.0), 0, 0
        total = stage1_total(slot_mean, track, int_mean, self.loss_cfg)
        parts = {k: v / max(n_frames, 1) for k, v in parts_acc.items()}
        parts.update(track=track.item(), int=int_mean.item(), total=total.item(),
                     track_anchors=anchors, track_skipped=skipped)
        return total, parts

    # ------------------------------------------------------------------
    # stage-2 features and logits

    def encode_episode_cache(self, frames: list[FrameRecord],
                             episode_key: int) -> list[dict]:
        """Frozen stage-1 features for every frame (no tape participation)."""
        cache = []
        with T.no_grad():
            prev = None
            for record in frames:
                frame = frame_from_record(record)
                dense, state, _ = self.encode_frame(frame, prev, episode_key, record.t)
                prev = state
                lang = self.lang_filter(record.task)
                kept, scores, _ = self.filter(state.slots, lang, self.cfg.num_selected,
                                              enabled=self.cfg.filter_on)
                cache.append({
                    "dense": dense.tokens.data.copy(),
                    "grid": (dense.grid_h, dense.grid_w),
                    "slots": kept.data.copy(),
                    "selected": scores.selected,
                    "task": record.task,
                    "proprio": record.proprio.copy(),
                    "action": record.action.copy(),
                })
        return cache

    def stage2_logits(self, cached: dict) -> Tensor:
        grid_h, grid_w = cached["grid"]
        dense = DenseTokens(Tensor(cached["dense"]), grid_h, grid_w)
        objects = Tensor(cached["slots"])
        rel = self.relations(dense, objects) if self.cfg.relations_on else None
        language = self.lang_decoder(cached["task"])
        bundle = self.decoder.assemble_bundle(objects, rel, language, cached["proprio"])
        return self.decoder.decode_actions(bundle)

    # ------------------------------------------------------------------
    # closed-loop policy

    def policy_step(self, frame: Frame, proprio: np.ndarray, task: str,
                    prev_state: SlotState | None, episode_key: int, t: int):
        """Greedy action for one observation; returns (action, new slot state)."""
        with T.no_grad():
            dense, state, _ = self.encode_frame(frame, prev_state, episode_key, t)
            lang = self.lang_filter(task)
            kept, _, _ = self.filter(state.slots, lang, self.cfg.num_selected,
                                     enabled=self.cfg.filter_on)
            rel = self.relations(dense, kept) if self.cfg.relations_on else None
            language = self.lang_decoder(task)
            bundle = self.decoder.assemble_bundle(kept, rel, language, proprio)
            logits = self.decoder.decode_actions(bundle)
            return self.decoder.greedy_action(logits), state


def _sum_terms(terms: list[Tensor]) -> Tensor:
    if not terms:
        return Tensor(0.0)
    total = terms[0]
    for term in terms[1:]:
        total = T.add(total, term)
    return total
