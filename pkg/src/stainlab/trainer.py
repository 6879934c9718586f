"""Alternating generator/discriminator training over extracted patch pairs.

Every step trains the discriminator once (real pair vs generated pair, with
the generator frozen) and then the generator once (combined adversarial +
L1 + correlation objective, with the discriminator frozen). Supports the
three model directions: staining (nonstained -> stained), destaining
(stained -> nonstained), and a secondary stainer trained on materialized
destained outputs.

Reproducibility contract: a fixed seed and data order give bit-identical
loss logs on the same hardware, and resuming from a checkpoint continues
the exact trace of an uninterrupted run. All randomness flows from the
config seed; per-epoch shuffles use seeds derived from (seed, epoch), and
checkpoint files carry the torch and numpy RNG states.
"""

from __future__ import annotations

import json
import logging
import math
import os
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from . import images, metrics
from .errors import ConfigError, DataError, TrainingError
from .losses import LossBreakdown, LossWeights, combined_generator_loss, discriminator_loss
from .networks import (
    DiscriminatorSpec,
    GeneratorSpec,
    PatchDiscriminator,
    UNetGenerator,
    build_discriminator,
    build_generator,
)
from .patches import PatchPair, load_indexed_pair, read_index, read_manifest, write_manifest

log = logging.getLogger("stainlab.trainer")

CHECKPOINT_FORMAT_VERSION = 1
LOSS_HISTORY_SIZE = 1000

_BOOL_STRINGS = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


@dataclass
class TrainConfig:
    direction: str = "stain"  # "stain" or "destain"
    epochs: int = 10
    batch_size: int = 1
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    alpha: float = 1.0
    lambda_l1: float = 100.0
    gamma_cc: float = 10.0
    flip_augment: bool = True
    seed: int = 0
    checkpoint_every: int = 1000  # steps; 0 disables periodic checkpoints
    input_size: int = 1024
    g_base_channels: int = 64
    g_max_channels: int = 512
    g_dropout_rate: float = 0.5
    g_dropout_layers: int = 3
    d_base_channels: int = 64
    d_conv_layers: int = 4

    def __post_init__(self) -> None:
        if self.direction not in ("stain", "destain"):
            raise ConfigError(f"direction must be 'stain' or 'destain', got {self.direction!r}")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")

    @property
    def weights(self) -> LossWeights:
        return LossWeights(alpha=self.alpha, lambda_l1=self.lambda_l1, gamma_cc=self.gamma_cc)

    def generator_spec(self) -> GeneratorSpec:
        return GeneratorSpec(
            input_size=self.input_size,
            base_channels=self.g_base_channels,
            max_channels=self.g_max_channels,
            dropout_rate=self.g_dropout_rate,
            dropout_decoder_layers=self.g_dropout_layers,
        )

    def discriminator_spec(self) -> DiscriminatorSpec:
        return DiscriminatorSpec(
            input_size=self.input_size,
            conv_layers=self.d_conv_layers,
            base_channels=self.d_base_channels,
        )

    @classmethod
    def from_file(cls, path: str | os.PathLike, **overrides) -> "TrainConfig":
        """Parse a flat key=value config file; keyword overrides win."""
        values: dict = {}
        text = Path(path).read_text()
        for line_no, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected key=value, got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key] = value
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls._from_strings(values, source=str(path))

    @classmethod
    def _from_strings(cls, values: dict, source: str = "config") -> "TrainConfig":
        kwargs = {}
        fields = {f.name: f.type for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        for key, value in values.items():
            if key not in fields:
                raise ConfigError(f"{source}: unknown config key {key!r}")
            if isinstance(value, str):
                typ = fields[key]
                if typ == "bool":
                    if value.lower() not in _BOOL_STRINGS:
                        raise ConfigError(f"{source}: bad boolean for {key}: {value!r}")
                    value = _BOOL_STRINGS[value.lower()]
                elif typ == "int":
                    value = int(value)
                elif typ == "float":
                    value = float(value)
            kwargs[key] = value
        return cls(**kwargs)


class PatchDataset:
    """Index-backed access to an extracted patches directory, split-aware."""

    def __init__(self, patches_dir: str | os.PathLike):
        self.root = Path(patches_dir)
        self.rows = read_index(self.root)
        manifest_path = self.root / "manifest.jsonl"
        if not manifest_path.exists():
            raise DataError(f"patches dir has no manifest.jsonl: {self.root}")
        self.splits = {r.slide_id: r.split for r in read_manifest(manifest_path)}
        unknown = {row["slide_id"] for row in self.rows} - set(self.splits)
        if unknown:
            raise DataError(f"index references slides missing from manifest: {sorted(unknown)}")

    def split_rows(self, split: str) -> list[dict]:
        return [row for row in self.rows if self.splits[row["slide_id"]] == split]

    def load(self, row: dict) -> PatchPair:
        return load_indexed_pair(self.root, row)

    def patch_size(self) -> int:
        if not self.rows:
            raise DataError(f"empty patch index in {self.root}")
        return self.load(self.rows[0]).size


def apply_flips(pair: PatchPair, flip_h: bool, flip_v: bool) -> PatchPair:
    """Flip both patches of a pair by the same transform."""
    def flip(arr: np.ndarray) -> np.ndarray:
        if flip_h:
            arr = arr[:, ::-1]
        if flip_v:
            arr = arr[::-1, :]
        return np.ascontiguousarray(arr)

    if not (flip_h or flip_v):
        return pair
    return replace(pair, nonstained=flip(pair.nonstained), stained=flip(pair.stained))


def augment(pair: PatchPair, rng: np.random.Generator) -> PatchPair:
    """Random horizontal/vertical flips, p=0.5 each, identical on both patches."""
    flip_h = bool(rng.random() < 0.5)
    flip_v = bool(rng.random() < 0.5)
    return apply_flips(pair, flip_h, flip_v)


def _pairs_to_batch(pairs: list[PatchPair], direction: str) -> tuple[torch.Tensor, torch.Tensor]:
    def stack(arrays: list[np.ndarray]) -> torch.Tensor:
        batch = np.stack([images.unit_to_model(a).transpose(2, 0, 1) for a in arrays])
        return torch.from_numpy(batch)

    nonstained = stack([p.nonstained for p in pairs])
    stained = stack([p.stained for p in pairs])
    if direction == "stain":
        return nonstained, stained
    return stained, nonstained


class Trainer:
    """Owns one generator/discriminator pair and its optimization state."""

    def __init__(
        self,
        cfg: TrainConfig,
        gen_spec: GeneratorSpec | None = None,
        disc_spec: DiscriminatorSpec | None = None,
    ):
        self.cfg = cfg
        self.gen_spec = gen_spec or cfg.generator_spec()
        self.disc_spec = disc_spec or cfg.discriminator_spec()
        torch.manual_seed(cfg.seed)
        self.g: UNetGenerator = build_generator(self.gen_spec)
        self.d: PatchDiscriminator = build_discriminator(self.disc_spec)
        self.g_opt = torch.optim.Adam(self.g.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))
        self.d_opt = torch.optim.Adam(self.d.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))
        self.flip_rng = np.random.default_rng([cfg.seed, 0xF11B])
        self.epoch = 0
        self.global_step = 0
        self.d_updates = 0
        self.g_updates = 0
        self.loss_history: deque = deque(maxlen=LOSS_HISTORY_SIZE)
        self.val_slides: set[str] = set()

    # ------------------------------------------------------------------
    # single step
    # ------------------------------------------------------------------

    def step(self, batch: PatchPair | list[PatchPair]) -> LossBreakdown:
        """One discriminator update followed by one generator update."""
        pairs = [batch] if isinstance(batch, PatchPair) else list(batch)
        for p in pairs:
            if p.slide_id in self.val_slides:
                raise TrainingError(
                    f"patch from slide {p.slide_id!r} is in the val split; refusing to train on it"
                )
        x, y = _pairs_to_batch(pairs, self.cfg.direction)
        weights = self.cfg.weights

        # discriminator update, generator frozen
        with torch.no_grad():
            fake = self.g(x, stochastic=True)
        d_real = self.d(x, y)
        d_fake = self.d(x, fake)
        d_loss = discriminator_loss(d_real, d_fake, alpha=weights.alpha)
        self.d_opt.zero_grad()
        d_loss.backward()
        self.d_opt.step()
        self.d_updates += 1

        # generator update, discriminator frozen
        for p in self.d.parameters():
            p.requires_grad_(False)
        fake = self.g(x, stochastic=True)
        d_fake = self.d(x, fake)
        breakdown = combined_generator_loss(d_fake, fake, y, weights, d_loss=d_loss.detach())
        self.g_opt.zero_grad()
        breakdown.g_total.backward()
        self.g_opt.step()
        for p in self.d.parameters():
            p.requires_grad_(True)
        self.g_updates += 1

        self.global_step += 1
        row = breakdown.row(self.global_step)
        if not all(math.isfinite(v) for k, v in row.items() if k != "step"):
            ref = ", ".join(f"{p.slide_id}@({p.x0},{p.y0})" for p in pairs)
            raise TrainingError(f"non-finite loss at step {self.global_step} on [{ref}]: {row}")
        self.loss_history.append(row)
        return breakdown

    # ------------------------------------------------------------------
    # full loop
    # ------------------------------------------------------------------

    def _epoch_order(self, epoch: int, n: int) -> np.ndarray:
        return np.random.default_rng([self.cfg.seed, 1_000_003 + epoch]).permutation(n)

    def validate(self, dataset: PatchDataset, max_patches: int | None = None) -> dict:
        """Mean SSIM/CC over the val split with deterministic generation."""
        rows = dataset.split_rows("val")
        if max_patches is not None:
            rows = rows[:max_patches]
        if not rows:
            return {"mean_ssim": float("nan"), "mean_cc": float("nan"), "count": 0}
        entries = []
        for row in rows:
            pair = dataset.load(row)
            x, _ = _pairs_to_batch([pair], self.cfg.direction)
            with torch.no_grad():
                out = self.g(x, stochastic=False)
            generated = images.model_to_unit(out[0].numpy().transpose(1, 2, 0).astype(np.float64))
            target = pair.stained if self.cfg.direction == "stain" else pair.nonstained
            entries.append((pair.slide_id, pair.x0, pair.y0, generated, target.astype(np.float64)))
        return metrics.evaluate_arrays(entries).aggregate

    def run(self, dataset: PatchDataset, out_dir: str | os.PathLike) -> Path:
        """Train for cfg.epochs over the train split; returns the final checkpoint path."""
        cfg = self.cfg
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        train_rows = dataset.split_rows("train")
        if not train_rows:
            raise TrainingError(f"empty train split in {dataset.root}")
        self.val_slides = {s for s, split in dataset.splits.items() if split == "val"}
        steps_per_epoch = math.ceil(len(train_rows) / cfg.batch_size)

        loss_log = out_dir / "loss_log.jsonl"
        val_log = out_dir / "val_metrics.jsonl"
        mode = "a" if self.global_step > 0 else "w"
        with loss_log.open(mode) as loss_fh, val_log.open(mode) as val_fh:
            while self.epoch < cfg.epochs:
                order = self._epoch_order(self.epoch, len(train_rows))
                done_in_epoch = self.global_step - self.epoch * steps_per_epoch
                batches = [
                    order[i : i + cfg.batch_size]
                    for i in range(0, len(order), cfg.batch_size)
                ]
                for batch_idx in batches[done_in_epoch:]:
                    pairs = [dataset.load(train_rows[i]) for i in batch_idx]
                    if cfg.flip_augment:
                        pairs = [augment(p, self.flip_rng) for p in pairs]
                    breakdown = self.step(pairs)
                    loss_fh.write(json.dumps(breakdown.row(self.global_step)) + "\n")
                    if cfg.checkpoint_every and self.global_step % cfg.checkpoint_every == 0:
                        self.save_checkpoint(out_dir / f"checkpoint_step{self.global_step:08d}.pt")
                self.epoch += 1
                val = self.validate(dataset)
                val_fh.write(json.dumps({"epoch": self.epoch, **val}) + "\n")
                val_fh.flush()
                log.info(
                    "epoch %d/%d done (step %d): val ssim=%.4f cc=%.4f",
                    self.epoch, cfg.epochs, self.global_step,
                    val["mean_ssim"], val["mean_cc"],
                )
        final = out_dir / "checkpoint_final.pt"
        self.save_checkpoint(final)
        return final

    # ------------------------------------------------------------------
    # checkpointing
    # ------------------------------------------------------------------

    def save_checkpoint(self, path: str | os.PathLike) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "train_config": asdict(self.cfg),
            "generator_spec": asdict(self.gen_spec),
            "discriminator_spec": asdict(self.disc_spec),
            "g_state": self.g.state_dict(),
            "d_state": self.d.state_dict(),
            "g_opt_state": self.g_opt.state_dict(),
            "d_opt_state": self.d_opt.state_dict(),
            "epoch": self.epoch,
            "global_step": self.global_step,
            "d_updates": self.d_updates,
            "g_updates": self.g_updates,
            "torch_rng_state": torch.get_rng_state(),
            "flip_rng_state": self.flip_rng.bit_generator.state,
            "loss_history": list(self.loss_history),
        }
        try:
            torch.save(payload, path)
        except OSError as exc:
            raise TrainingError(f"cannot write checkpoint {path}: {exc}") from exc
        return path

    @classmethod
    def from_checkpoint(cls, path: str | os.PathLike) -> "Trainer":
        payload = _load_checkpoint_payload(path)
        cfg = TrainConfig(**payload["train_config"])
        trainer = cls(
            cfg,
            gen_spec=GeneratorSpec(**payload["generator_spec"]),
            disc_spec=DiscriminatorSpec(**payload["discriminator_spec"]),
        )
        trainer.g.load_state_dict(payload["g_state"])
        trainer.d.load_state_dict(payload["d_state"])
        trainer.g_opt.load_state_dict(payload["g_opt_state"])
        trainer.d_opt.load_state_dict(payload["d_opt_state"])
        trainer.epoch = payload["epoch"]
        trainer.global_step = payload["global_step"]
        trainer.d_updates = payload["d_updates"]
        trainer.g_updates = payload["g_updates"]
        torch.set_rng_state(payload["torch_rng_state"])
        trainer.flip_rng.bit_generator.state = payload["flip_rng_state"]
        trainer.loss_history = deque(payload["loss_history"], maxlen=LOSS_HISTORY_SIZE)
        return trainer


def _load_checkpoint_payload(path: str | os.PathLike) -> dict:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise DataError(f"unsupported checkpoint format {version!r} in {path}")
    return payload


def load_generator(path: str | os.PathLike) -> UNetGenerator:
    """Rebuild the generator (only) from a checkpoint, bit-exactly."""
    payload = _load_checkpoint_payload(path)
    model = UNetGenerator(GeneratorSpec(**payload["generator_spec"]))
    model.load_state_dict(payload["g_state"])
    model.eval()
    return model


def train(patches_dir: str | os.PathLike, cfg: TrainConfig, out_dir: str | os.PathLike,
          resume: str | os.PathLike | None = None) -> Path:
    """Train a staining or destaining model over an extracted patches directory."""
    dataset = PatchDataset(patches_dir)
    size = dataset.patch_size()
    if cfg.input_size != size:
        log.info("adjusting input_size %d -> %d to match patches", cfg.input_size, size)
        cfg = replace(cfg, input_size=size)
    trainer = Trainer.from_checkpoint(resume) if resume else Trainer(cfg)
    return trainer.run(dataset, out_dir)


def materialize_destained(
    destainer,
    patches_dir: str | os.PathLike,
    out_dir: str | os.PathLike,
) -> Path:
    """Run a destaining generator over every stained patch and write a derived corpus.

    The derived patches directory pairs each computationally destained patch
    (as the new nonstained input) with the original stained target, ready
    for ordinary staining-direction training. Generation is deterministic
    (dropout off) so the derived corpus is reproducible.
    """
    dataset = PatchDataset(patches_dir)
    out_dir = Path(out_dir)
    patch_out = out_dir / "patches"
    patch_out.mkdir(parents=True, exist_ok=True)
    index_path = out_dir / "index.jsonl"
    with index_path.open("w") as index:
        for row in dataset.rows:
            pair = dataset.load(row)
            x = torch.from_numpy(images.unit_to_model(pair.stained).transpose(2, 0, 1)[None])
            with torch.no_grad():
                out = destainer(x, stochastic=False)
            destained = images.model_to_unit(out[0].numpy().transpose(1, 2, 0))
            stem = f"{pair.slide_id}_x{pair.x0:06d}_y{pair.y0:06d}"
            non_rel = f"patches/{stem}_nonstained.png"
            sta_rel = f"patches/{stem}_stained.png"
            images.save_rgb(out_dir / non_rel, destained)
            images.save_rgb(out_dir / sta_rel, pair.stained)
            index.write(
                json.dumps(
                    {
                        "slide_id": row["slide_id"],
                        "x0": row["x0"],
                        "y0": row["y0"],
                        "nonstained_png": non_rel,
                        "stained_png": sta_rel,
                    }
                )
                + "\n"
            )
    manifest_rows = read_manifest(Path(patches_dir) / "manifest.jsonl", resolve=False)
    write_manifest(out_dir / "manifest.jsonl", manifest_rows)
    return out_dir


def train_secondary_stainer(
    destainer_ckpt: str | os.PathLike,
    patches_dir: str | os.PathLike,
    cfg: TrainConfig,
    out_dir: str | os.PathLike,
) -> Path:
    """Train the secondary staining model on computationally destained inputs."""
    if cfg.direction != "stain":
        raise ConfigError("the secondary model is a stainer; direction must be 'stain'")
    destainer = load_generator(destainer_ckpt)
    out_dir = Path(out_dir)
    derived = materialize_destained(destainer, patches_dir, out_dir / "destained_patches")
    return train(derived, cfg, out_dir)
