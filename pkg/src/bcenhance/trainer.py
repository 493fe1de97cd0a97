"""Training loop, dataset pipeline, checkpointing, and enhancement inference.

One iteration alternates a generator update with a discriminator update: the
forward mapping runs B->A, its reconstruction A->B closes the cycle, and the
same forward generator is asked to leave real target features unchanged
(identity term). The generator objective adds the adversarial terms from the
classification discriminator and, in the dual variant, the defect
discriminator; the discriminators are then updated on real features and the
detached fakes. Enhancement rebuilds a waveform from converted cepstra, a
log-Gaussian-normalized F0 track, and the input's own aperiodicity.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from hashlib import sha256
from pathlib import Path

import numpy as np

from bcenhance import losses, model, vocoder
from bcenhance.errors import ConfigError, DataError, NumericError
from bcenhance.losses import BASELINE, DUAL, LossRecord, LossWeights
from bcenhance.nn.optim import Adam, zero_grad
from bcenhance.nn.tensor import Tensor, backward
from bcenhance.vocoder import F0Stats, FeatureSet

PARALLEL = "parallel"
NONPARALLEL = "nonparallel"

FEATURE_SUFFIX = ".bcf1"
CHECKPOINT_SUFFIX = ".bcck"
LOG_NAME = "loss_log.tsv"
STD_FLOOR = 1e-8


@dataclass
class TrainConfig:
    epochs: int = 3000
    batch_size: int = 1
    gen_lr: float = 2e-4
    disc_lr: float = 1e-4
    lambda_cyc: float = 10.0
    lambda_id: float = 5.0
    crop_frames: int = 128
    mapping: str = PARALLEL
    variant: str = DUAL
    seed: int = 0
    holdout: bool = True  # 4:1 utterance split; False trains on everything
    checkpoint_every: int = 100  # epochs between checkpoint writes
    defect_patch_head: bool = True  # False makes both discriminators FC-headed
    strict_disc_objective: bool = False  # drop fake terms from the D update

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs must be nonnegative, got {self.epochs}")
        if self.batch_size != 1:
            raise ConfigError(f"only batch size 1 is supported, got {self.batch_size}")
        if self.gen_lr <= 0 or self.disc_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if self.crop_frames % model.TIME_DIVISOR != 0 or self.crop_frames < model.MIN_DISC_FRAMES:
            raise ConfigError(
                f"crop_frames must be a multiple of {model.TIME_DIVISOR} and at least "
                f"{model.MIN_DISC_FRAMES}, got {self.crop_frames}"
            )
        if self.mapping not in (PARALLEL, NONPARALLEL):
            raise ConfigError(f"unknown mapping strategy {self.mapping!r}")
        if self.variant not in (BASELINE, DUAL):
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.checkpoint_every < 1:
            raise ConfigError(f"checkpoint_every must be positive, got {self.checkpoint_every}")

    def weights(self) -> LossWeights:
        return LossWeights(lambda_cyc=self.lambda_cyc, lambda_id=self.lambda_id)


def config_hash(config: TrainConfig) -> str:
    """Stable hash of the effective configuration (key=value lines, sorted)."""
    lines = "".join(f"{k}={v!r}\n" for k, v in sorted(asdict(config).items()))
    return sha256(lines.encode("utf-8")).hexdigest()


@dataclass
class NormStats:
    """Per-coefficient feature normalization, one set per corpus side."""

    bc_mean: np.ndarray
    bc_std: np.ndarray
    ac_mean: np.ndarray
    ac_std: np.ndarray

    def normalize(self, mcep: np.ndarray, side: str) -> np.ndarray:
        mean, std = (self.bc_mean, self.bc_std) if side == "bc" else (self.ac_mean, self.ac_std)
        return (mcep - mean[:, None]) / std[:, None]

    def denormalize(self, mcep: np.ndarray, side: str) -> np.ndarray:
        mean, std = (self.bc_mean, self.bc_std) if side == "bc" else (self.ac_mean, self.ac_std)
        return mcep * std[:, None] + mean[:, None]


@dataclass
class Dataset:
    root: Path
    ids: list
    bc: dict  # id -> FeatureSet
    ac: dict  # id -> FeatureSet

    def subset(self, ids) -> "Dataset":
        ids = list(ids)
        return Dataset(
            root=self.root,
            ids=ids,
            bc={i: self.bc[i] for i in ids},
            ac={i: self.ac[i] for i in ids},
        )


def extract_features(dataset_dir, force: bool = False) -> tuple[int, int]:
    """Cache one .bcf1 per wav under dataset_dir/{bc,ac}; returns (written, reused)."""
    root = Path(dataset_dir)
    written = reused = 0
    for side in ("bc", "ac"):
        side_dir = root / side
        if not side_dir.is_dir():
            raise DataError(f"dataset layout requires {side_dir} to be a directory")
        for wav_path in sorted(side_dir.glob("*.wav")):
            cache = wav_path.with_suffix(FEATURE_SUFFIX)
            if cache.exists() and not force:
                reused += 1
                continue
            vocoder.save_features(vocoder.analyze(vocoder.read_wav(wav_path)), cache)
            written += 1
    return written, reused


def load_dataset(dataset_dir) -> Dataset:
    """Load cached features for every paired utterance, extracting any missing."""
    root = Path(dataset_dir)
    extract_features(root, force=False)
    bc_ids = {p.stem for p in (root / "bc").glob("*.wav")}
    ac_ids = {p.stem for p in (root / "ac").glob("*.wav")}
    if not bc_ids or not ac_ids:
        raise DataError(f"{root}: dataset has no utterances (need bc/*.wav and ac/*.wav)")
    odd = bc_ids.symmetric_difference(ac_ids)
    if odd:
        raise DataError(f"{root}: unpaired utterances: {', '.join(sorted(odd))}")
    ids = sorted(bc_ids)
    bc = {i: vocoder.load_features(root / "bc" / (i + FEATURE_SUFFIX)) for i in ids}
    ac = {i: vocoder.load_features(root / "ac" / (i + FEATURE_SUFFIX)) for i in ids}
    return Dataset(root=root, ids=ids, bc=bc, ac=ac)


def split_ids(ids, config: TrainConfig) -> tuple[list, list]:
    """Seeded 4:1 train/test split by utterance; holdout=False keeps all in both."""
    ids = sorted(ids)
    if not config.holdout:
        return list(ids), list(ids)
    if len(ids) < 2:
        return list(ids), list(ids)
    order = list(np.random.default_rng(config.seed).permutation(ids))
    n_test = max(1, len(ids) // 5)
    return sorted(order[n_test:]), sorted(order[:n_test])


def feature_statistics(dataset: Dataset) -> tuple[NormStats, F0Stats, F0Stats]:
    """Normalization and F0 statistics pooled over a (training) dataset."""
    bc_all = np.concatenate([dataset.bc[i].mcep for i in dataset.ids], axis=1)
    ac_all = np.concatenate([dataset.ac[i].mcep for i in dataset.ids], axis=1)
    norm = NormStats(
        bc_mean=bc_all.mean(axis=1),
        bc_std=np.maximum(bc_all.std(axis=1), STD_FLOOR),
        ac_mean=ac_all.mean(axis=1),
        ac_std=np.maximum(ac_all.std(axis=1), STD_FLOOR),
    )
    f0_bc = vocoder.f0_statistics([dataset.bc[i] for i in dataset.ids])
    f0_ac = vocoder.f0_statistics([dataset.ac[i] for i in dataset.ids])
    return norm, f0_bc, f0_ac


def _crop(mcep: np.ndarray, start: int, length: int) -> np.ndarray:
    t = mcep.shape[1]
    if t < length:
        pad = length - t
        mode = "reflect" if t > 1 else "edge"
        mcep = np.pad(mcep, ((0, 0), (0, pad)), mode=mode)
    return mcep[:, start : start + length]


def _start(rng: np.random.Generator, t: int, length: int) -> int:
    return int(rng.integers(0, max(t - length, 0) + 1))


def make_batch(
    dataset: Dataset,
    strategy: str,
    rng: np.random.Generator,
    norm: NormStats,
    crop_frames: int,
    bc_id=None,
) -> tuple[Tensor, Tensor]:
    """One training pair (b, a) of z-normalized [24 x crop] feature crops.

    Parallel strategy crops the same utterance at the same frame range on
    both sides; nonparallel draws utterance and range independently per side.
    """
    if not dataset.ids:
        raise DataError("empty dataset")
    if bc_id is None:
        bc_id = dataset.ids[int(rng.integers(len(dataset.ids)))]
    bc_feats = dataset.bc[bc_id]
    if strategy == PARALLEL:
        t = min(bc_feats.mcep.shape[1], dataset.ac[bc_id].mcep.shape[1])
        start = _start(rng, t, crop_frames)
        b = _crop(bc_feats.mcep, start, crop_frames)
        a = _crop(dataset.ac[bc_id].mcep, start, crop_frames)
    elif strategy == NONPARALLEL:
        start_b = _start(rng, bc_feats.mcep.shape[1], crop_frames)
        b = _crop(bc_feats.mcep, start_b, crop_frames)
        ac_id = dataset.ids[int(rng.integers(len(dataset.ids)))]
        ac_feats = dataset.ac[ac_id]
        start_a = _start(rng, ac_feats.mcep.shape[1], crop_frames)
        a = _crop(ac_feats.mcep, start_a, crop_frames)
    else:
        raise ConfigError(f"unknown mapping strategy {strategy!r}")
    b = norm.normalize(b, "bc").astype(np.float32)
    a = norm.normalize(a, "ac").astype(np.float32)
    return Tensor(b), Tensor(a)


@dataclass
class TrainState:
    g_ba: model.Generator
    g_ab: model.Generator
    d_c: model.Discriminator
    d_d: model.Discriminator | None
    gen_opt: Adam
    disc_opt: Adam
    rng: np.random.Generator
    norm: NormStats
    f0_bc: F0Stats
    f0_ac: F0Stats
    iteration: int = 0

    def generator_params(self) -> list:
        return self.g_ba.parameters() + self.g_ab.parameters()

    def discriminator_params(self) -> list:
        params = self.d_c.parameters()
        if self.d_d is not None:
            params = params + self.d_d.parameters()
        return params

    def named_arrays(self) -> dict:
        arrays = {}
        for prefix, net in self._networks():
            for name, p in net.named_parameters(prefix + "."):
                arrays[name] = p.data
        for prefix, opt in (("gen_opt", self.gen_opt), ("disc_opt", self.disc_opt)):
            for key, arr in opt.state_arrays().items():
                arrays[f"{prefix}.{key}"] = arr
        arrays["norm.bc_mean"] = self.norm.bc_mean
        arrays["norm.bc_std"] = self.norm.bc_std
        arrays["norm.ac_mean"] = self.norm.ac_mean
        arrays["norm.ac_std"] = self.norm.ac_std
        return arrays

    def _networks(self):
        nets = [("g_ba", self.g_ba), ("g_ab", self.g_ab), ("d_c", self.d_c)]
        if self.d_d is not None:
            nets.append(("d_d", self.d_d))
        return nets


def build_state(config: TrainConfig, norm: NormStats, f0_bc: F0Stats, f0_ac: F0Stats) -> TrainState:
    keys = np.random.SeedSequence(config.seed).generate_state(4)
    g_ba = model.build_generator(int(keys[0]))
    g_ab = model.build_generator(int(keys[1]))
    d_c = model.build_discriminator(model.CLASSIFICATION, int(keys[2]))
    d_d = None
    if config.variant == DUAL:
        d_d = model.build_discriminator(
            model.DEFECT, int(keys[3]), patch_head=config.defect_patch_head
        )
    state = TrainState(
        g_ba=g_ba,
        g_ab=g_ab,
        d_c=d_c,
        d_d=d_d,
        gen_opt=None,  # type: ignore[arg-type]
        disc_opt=None,  # type: ignore[arg-type]
        rng=np.random.default_rng(config.seed),
        norm=norm,
        f0_bc=f0_bc,
        f0_ac=f0_ac,
    )
    state.gen_opt = Adam(state.generator_params(), lr=config.gen_lr)
    state.disc_opt = Adam(state.discriminator_params(), lr=config.disc_lr)
    return state


def _require_finite(value: float, name: str, iteration: int) -> float:
    if not math.isfinite(value):
        raise NumericError(f"non-finite {name} loss at iteration {iteration}")
    return value


def train_step(state: TrainState, batch: tuple[Tensor, Tensor], config: TrainConfig) -> LossRecord:
    """One generator update followed by one discriminator update, in place."""
    b, a = batch
    form = losses.LEAST_SQUARES
    it = state.iteration + 1
    all_params = state.generator_params() + state.discriminator_params()

    zero_grad(all_params)
    # Discriminator gradients from the generator objective are never used
    # (their update comes from the detached pass below), so skip the work of
    # computing them while the generator graph runs through the critics.
    disc_params = state.discriminator_params()
    for p in disc_params:
        p.requires_grad = False
    try:
        fake_a = state.g_ba(b)
        b_cycled = state.g_ab(fake_a)
        a_identity = state.g_ba(a)
        l_cyc = losses.cycle_loss(b, b_cycled)
        l_id = losses.identity_loss(a, a_identity)
        adv_c = losses.adv_g_loss(state.d_c(fake_a).scores, form)
        if config.variant == DUAL:
            adv_d = losses.adv_g_loss(state.d_d(fake_a).scores, form)
            parts = {"adc": adv_c, "add": adv_d, "cyc": l_cyc, "id": l_id}
        else:
            adv_d = None
            parts = {"adv": adv_c, "cyc": l_cyc, "id": l_id}
        total = losses.total_objective(parts, config.weights(), config.variant)
        record = LossRecord(
            iteration=it,
            adv_classification=_require_finite(adv_c.item(), "adversarial-classification", it),
            adv_defect=_require_finite(adv_d.item(), "adversarial-defect", it) if adv_d is not None else 0.0,
            cycle=_require_finite(l_cyc.item(), "cycle", it),
            identity=_require_finite(l_id.item(), "identity", it),
            total=_require_finite(total.item(), "total", it),
        )
        backward(total)
    finally:
        for p in disc_params:
            p.requires_grad = True
    state.gen_opt.step()

    zero_grad(all_params)
    fake_detached = fake_a.detach()
    d_total = None
    for disc, name in ((state.d_c, "classification"), (state.d_d, "defect")):
        if disc is None:
            continue
        real_scores = disc(a).scores
        fake_scores = None if config.strict_disc_objective else disc(fake_detached).scores
        d_loss = losses.adv_d_loss(real_scores, fake_scores, form)
        _require_finite(d_loss.item(), f"discriminator-{name}", it)
        d_total = d_loss if d_total is None else d_total + d_loss
    backward(d_total)
    state.disc_opt.step()
    zero_grad(all_params)

    state.iteration = it
    return record


def _meta(state: TrainState, config: TrainConfig) -> dict:
    rng_state = state.rng.bit_generator.state
    return {
        "config": asdict(config),
        "rng": {
            "bit_generator": rng_state["bit_generator"],
            "state": str(rng_state["state"]["state"]),
            "inc": str(rng_state["state"]["inc"]),
            "has_uint32": int(rng_state["has_uint32"]),
            "uinteger": int(rng_state["uinteger"]),
        },
        "gen_opt_step": state.gen_opt.step_count,
        "disc_opt_step": state.disc_opt.step_count,
        "f0_bc": {"mu": state.f0_bc.mu, "sigma": state.f0_bc.sigma},
        "f0_ac": {"mu": state.f0_ac.mu, "sigma": state.f0_ac.sigma},
    }


def save_checkpoint(path, state: TrainState, config: TrainConfig) -> Path:
    path = Path(path)
    model.save_container(
        path,
        config_hash=config_hash(config),
        iteration=state.iteration,
        meta=_meta(state, config),
        arrays=state.named_arrays(),
    )
    return path


def load_checkpoint(path) -> tuple[TrainState, TrainConfig]:
    """Rebuild a TrainState; continuation from it is bitwise-identical."""
    stored_hash, iteration, meta, arrays = model.load_container(path)
    config = TrainConfig(**meta["config"])
    if config_hash(config) != stored_hash:
        raise ConfigError(f"{path}: stored config does not match its recorded hash")
    norm = NormStats(
        bc_mean=arrays.pop("norm.bc_mean"),
        bc_std=arrays.pop("norm.bc_std"),
        ac_mean=arrays.pop("norm.ac_mean"),
        ac_std=arrays.pop("norm.ac_std"),
    )
    state = build_state(
        config,
        norm,
        F0Stats(mu=meta["f0_bc"]["mu"], sigma=meta["f0_bc"]["sigma"]),
        F0Stats(mu=meta["f0_ac"]["mu"], sigma=meta["f0_ac"]["sigma"]),
    )
    for prefix, net in state._networks():
        for name, p in net.named_parameters(prefix + "."):
            stored = arrays.pop(name, None)
            if stored is None:
                raise DataError(f"{path}: checkpoint missing parameter {name!r}")
            if stored.shape != p.data.shape:
                raise DataError(
                    f"{path}: parameter {name!r} has shape {stored.shape}, expected {p.data.shape}"
                )
            p.data = stored.astype(p.data.dtype, copy=True)
    for prefix, opt, step_key in (
        ("gen_opt", state.gen_opt, "gen_opt_step"),
        ("disc_opt", state.disc_opt, "disc_opt_step"),
    ):
        opt_arrays = {}
        for key in list(arrays):
            if key.startswith(prefix + "."):
                opt_arrays[key[len(prefix) + 1 :]] = arrays.pop(key)
        opt.load_state_arrays(opt_arrays, meta[step_key])
    if arrays:
        raise DataError(f"{path}: checkpoint holds unknown arrays: {sorted(arrays)[:3]}")
    state.rng.bit_generator.state = {
        "bit_generator": meta["rng"]["bit_generator"],
        "state": {"state": int(meta["rng"]["state"]), "inc": int(meta["rng"]["inc"])},
        "has_uint32": meta["rng"]["has_uint32"],
        "uinteger": meta["rng"]["uinteger"],
    }
    state.iteration = iteration
    return state, config


def train(config: TrainConfig, dataset_dir, out_dir, resume=None) -> Path:
    """Run the training loop; returns the final checkpoint path.

    Writes checkpoints every ``config.checkpoint_every`` epochs (and at the
    end) plus an append-only loss log, one record per iteration. Resuming
    from a checkpoint continues the uninterrupted run exactly.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(dataset_dir)
    train_ids, _ = split_ids(dataset.ids, config)
    if not train_ids:
        raise DataError("training split is empty")
    train_set = dataset.subset(train_ids)

    if resume is not None:
        state, stored = load_checkpoint(resume)
        if config_hash(stored) != config_hash(config):
            raise ConfigError("resume checkpoint was written under a different config")
    else:
        norm, f0_bc, f0_ac = feature_statistics(train_set)
        state = build_state(config, norm, f0_bc, f0_ac)

    steps_per_epoch = len(train_ids)
    if state.iteration % steps_per_epoch != 0:
        raise DataError(
            f"checkpoint iteration {state.iteration} is not an epoch boundary "
            f"for {steps_per_epoch} training utterances"
        )
    start_epoch = state.iteration // steps_per_epoch

    last_path = Path(resume) if resume is not None else None
    with open(out_dir / LOG_NAME, "a", encoding="utf-8") as log:
        for epoch in range(start_epoch, config.epochs):
            for bc_id in state.rng.permutation(train_ids):
                batch = make_batch(
                    train_set, config.mapping, state.rng, state.norm, config.crop_frames, bc_id=str(bc_id)
                )
                record = train_step(state, batch, config)
                log.write(record.format() + "\n")
            log.flush()
            done = epoch + 1
            if done % config.checkpoint_every == 0 or done == config.epochs:
                last_path = save_checkpoint(
                    out_dir / f"checkpoint_{state.iteration:08d}{CHECKPOINT_SUFFIX}", state, config
                )
    if last_path is None:  # zero-epoch run still yields a usable checkpoint
        last_path = save_checkpoint(
            out_dir / f"checkpoint_{state.iteration:08d}{CHECKPOINT_SUFFIX}", state, config
        )
    return last_path


def _pad_frames(mcep: np.ndarray) -> tuple[np.ndarray, int]:
    t = mcep.shape[1]
    remainder = t % model.TIME_DIVISOR
    if remainder == 0:
        return mcep, t
    pad = model.TIME_DIVISOR - remainder
    mode = "reflect" if t > 1 else "edge"
    return np.pad(mcep, ((0, 0), (0, pad)), mode=mode), t


def enhance_features(state: TrainState, features: FeatureSet, seed: int = 0, generator=None) -> np.ndarray:
    """Convert one BC FeatureSet and synthesize the enhanced waveform."""
    generator = generator if generator is not None else state.g_ba
    normalized = state.norm.normalize(features.mcep, "bc").astype(np.float32)
    padded, t = _pad_frames(normalized)
    converted = generator(Tensor(padded)).data[:, :t]
    mcep = state.norm.denormalize(converted.astype(np.float64), "ac")
    f0 = vocoder.lgn_convert(features.f0, state.f0_bc, state.f0_ac)
    enhanced = replace(features, f0=f0, mcep=mcep, ap=features.ap)
    return vocoder.synthesize(enhanced, seed=seed)


def enhance(checkpoint, bc_waveform: np.ndarray, seed: int = 0) -> np.ndarray:
    """Full inference pipeline from a checkpoint path and a 16 kHz waveform."""
    state, _ = load_checkpoint(checkpoint)
    return enhance_features(state, vocoder.analyze(bc_waveform), seed=seed)
