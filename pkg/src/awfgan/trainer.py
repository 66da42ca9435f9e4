"""Alternating critic / generator training, checkpoints and inference.

Per batch: ``n_critic`` rounds of {fuse, build target masks from the infrared
attention, one SGD step on the spatial critic, one SGD step on the frequency
critic}, followed by one SGD step on the generator.
Parameters are initialised from ``default_rng(seed)``.  Epoch ``e`` draws its
shuffle and its gradient-penalty interpolation weights from
``default_rng([seed, e])``; a checkpoint stores that generator's state, so a
run can be resumed at any step and (seed, config, dataset order) fixes the
run bit for bit.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import struct
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .discriminators import FrequencyCritic, SpatialCritic
from .generator import Generator
from .images import ImagePair, load_pair, pad_even, resize_bilinear
from .losses import LossWeights, adv_loss, content_loss, d_fre_loss, d_spa_loss
from .mask import extract_target_masks
from .tensor import Tensor

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
MAGIC = b"AWFCKPT\x00"
LOG_COLUMNS = ("step", "epoch", "L_G", "L_con", "L_adv", "L_Dspa", "L_Dfre",
               "gp_spa", "gp_fre", "gap_spa", "gap_fre")

__all__ = [
    "TrainConfig", "ModelCheckpoint", "Models", "TrainingError", "CheckpointError",
    "load_config", "parse_config", "train", "fuse", "resize_bilinear",
    "save_checkpoint", "load_checkpoint", "read_loss_log",
]


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 1
    n_critic: int = 2
    batch_size: int = 2
    lr_g: float = 1e-3
    lr_d: float = 1e-3
    weights: LossWeights = field(default_factory=LossWeights)
    image_size: int = 256
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.n_critic < 1:
            raise ValueError(f"n_critic must be >= 1, got {self.n_critic}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.image_size < 32 or self.image_size % 2:
            raise ValueError(f"image_size must be even and >= 32, got {self.image_size}")
        if self.lr_g < 0 or self.lr_d < 0:
            raise ValueError("learning rates must be >= 0")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")

    def as_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "weights"}
        d.update(self.weights.as_dict())
        return d


_INT_KEYS = {"epochs", "n_critic", "batch_size", "image_size", "seed", "checkpoint_every"}
_FLOAT_KEYS = {"lr_g", "lr_d"}
_WEIGHT_KEYS = {"lambda": "lam", "gamma": "gamma", "alpha": "alpha", "beta": "beta"}


def parse_config(text: str, source: str = "<config>") -> TrainConfig:
    """Parse ``key = value`` lines (``#`` starts a comment; dashes in keys read as underscores)."""
    values: dict = {}
    weights: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_").lower()
        try:
            if key in _INT_KEYS:
                values[key] = int(raw)
            elif key in _FLOAT_KEYS:
                values[key] = float(raw)
            elif key in _WEIGHT_KEYS:
                weights[_WEIGHT_KEYS[key]] = float(raw)
            else:
                raise ValueError(f"{source}:{lineno}: unknown key {key!r}")
        except ValueError as exc:
            if "unknown key" in str(exc):
                raise
            raise ValueError(f"{source}:{lineno}: bad value {raw!r} for {key}") from None
    return TrainConfig(weights=LossWeights(**weights), **values)


def load_config(path) -> TrainConfig:
    path = Path(path)
    return parse_config(path.read_text(), str(path))


# ---------------------------------------------------------------------------
# models and checkpoints


@dataclass
class Models:
    generator: Generator
    d_spa: SpatialCritic
    d_fre: FrequencyCritic

    @classmethod
    def init(cls, rng: np.random.Generator, image_size: int) -> "Models":
        return cls(Generator.init(rng), SpatialCritic.init(rng, image_size),
                   FrequencyCritic.init(rng, image_size))

    def named(self) -> dict[str, object]:
        return {"G": self.generator, "Dspa": self.d_spa, "Dfre": self.d_fre}

    def state(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, net in self.named().items():
            out.update({f"{prefix}.{k}": v for k, v in net.state().items()})
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for prefix, net in self.named().items():
            net.load_state({k[len(prefix) + 1:]: v for k, v in state.items()
                            if k.startswith(prefix + ".")})


@dataclass
class ModelCheckpoint:
    params: dict[str, np.ndarray]
    step: int = 0
    image_size: int = 256
    rng_state: dict | None = None
    format_version: int = FORMAT_VERSION

    def to_bytes(self) -> bytes:
        records = []
        chunks = []
        offset = 0
        for name in sorted(self.params):
            arr = np.ascontiguousarray(self.params[name], dtype="<f8")
            records.append({"name": name, "shape": list(arr.shape), "offset": offset})
            chunks.append(arr.tobytes())
            offset += arr.size
        header = {
            "format_version": self.format_version,
            "step": self.step,
            "image_size": self.image_size,
            "rng_state": self.rng_state,
            "records": records,
        }
        hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        return MAGIC + struct.pack("<Q", len(hb)) + hb + b"".join(chunks)

    @classmethod
    def from_bytes(cls, raw: bytes, source: str = "<bytes>") -> "ModelCheckpoint":
        if raw[:len(MAGIC)] != MAGIC:
            raise CheckpointError(f"{source}: not a checkpoint file")
        pos = len(MAGIC)
        try:
            (hlen,) = struct.unpack_from("<Q", raw, pos)
            header = json.loads(raw[pos + 8:pos + 8 + hlen])
        except (struct.error, ValueError) as exc:
            raise CheckpointError(f"{source}: corrupt header ({exc})") from None
        version = header.get("format_version")
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{source}: unsupported checkpoint version {version} "
                                  f"(expected {FORMAT_VERSION})")
        body = raw[pos + 8 + hlen:]
        if len(body) % 8:
            raise CheckpointError(f"{source}: truncated parameter data")
        data = np.frombuffer(body, dtype="<f8")
        params = {}
        for rec in header["records"]:
            n = int(np.prod(rec["shape"], dtype=np.int64))
            start = rec["offset"]
            if start + n > data.size:
                raise CheckpointError(f"{source}: truncated data for {rec['name']}")
            params[rec["name"]] = data[start:start + n].reshape(rec["shape"]).astype(np.float64)
        return cls(params, header["step"], header["image_size"], header["rng_state"], version)


def save_checkpoint(ckpt: ModelCheckpoint, path) -> None:
    Path(path).write_bytes(ckpt.to_bytes())


def load_checkpoint(path) -> ModelCheckpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read ({exc.strerror})") from None
    return ModelCheckpoint.from_bytes(raw, str(path))


def _snapshot(models: Models, step: int, image_size: int, rng: np.random.Generator | None) -> ModelCheckpoint:
    return ModelCheckpoint(models.state(), step, image_size, None if rng is None else rng.bit_generator.state)


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch])


# ---------------------------------------------------------------------------
# training


def _prepare(dataset, size: int) -> tuple[np.ndarray, np.ndarray]:
    irs, vis = [], []
    for item in dataset:
        ir, vi = load_pair(item) if isinstance(item, ImagePair) else item
        ir, vi = np.asarray(ir, dtype=np.float64), np.asarray(vi, dtype=np.float64)
        if ir.shape != vi.shape:
            raise ValueError(f"pair with infrared {ir.shape} and visible {vi.shape} differ in size")
        irs.append(resize_bilinear(ir, size, size))
        vis.append(resize_bilinear(vi, size, size))
    return np.stack(irs)[:, None], np.stack(vis)[:, None]


def _finite(step: int, **terms: float) -> None:
    for name, v in terms.items():
        if not math.isfinite(v):
            raise TrainingError(f"non-finite {name} ({v}) at step {step}")


class LossLog:
    """Append-only CSV; the loss weights go in a leading ``#`` comment line."""

    def __init__(self, path, weights: LossWeights, append: bool = False):
        self.path = Path(path) if path is not None else None
        self.rows: list[dict] = []
        self._fh = None
        if self.path is None:
            return
        fresh = not (append and self.path.exists())
        self._fh = open(self.path, "w" if fresh else "a", newline="")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        if fresh:
            w = weights.as_dict()
            self._fh.write("# " + ",".join(f"{k}={w[k]!r}" for k in ("lambda", "gamma", "alpha", "beta")) + "\n")
            self._writer.writerow(LOG_COLUMNS)

    def append(self, row: dict) -> None:
        self.rows.append(row)
        if self._fh is not None:
            self._writer.writerow([row[c] if c in ("step", "epoch") else repr(float(row[c]))
                                   for c in LOG_COLUMNS])
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def read_loss_log(path) -> tuple[dict[str, float], list[dict[str, float]]]:
    """Return (weights from the comment line, rows)."""
    lines = Path(path).read_text().splitlines()
    weights = {}
    if lines and lines[0].startswith("#"):
        for item in lines[0][1:].strip().split(","):
            k, v = item.split("=")
            weights[k.strip()] = float(v)
        lines = lines[1:]
    rows = [{k: (int(v) if k in ("step", "epoch") else float(v)) for k, v in r.items()}
            for r in csv.DictReader(io.StringIO("\n".join(lines)))]
    return weights, rows


def generator_losses(models: Models, ir: Tensor, vi: Tensor, weights: LossWeights,
                     fused: Tensor | None = None, mask: np.ndarray | None = None):
    """L_G = L_adv + lambda L_con; returns (L_G, L_con, L_adv) tensors.

    ``fused``/``mask`` may be passed in from an earlier forward of the same batch.
    """
    if fused is None:
        fused, ir_att, _ = models.generator(ir, vi)
        mask = extract_target_masks(ir_att.data)
    l_adv = adv_loss(fused, mask, models.d_spa, models.d_fre)
    l_con = content_loss(ir, vi, fused, weights)
    return T.add(l_adv, T.scalar_mul(l_con, weights.lam)), l_con, l_adv


def train(dataset: Sequence, config: TrainConfig, *, run_dir=None, resume: ModelCheckpoint | None = None,
          on_step: Callable[[dict, Models], None] | None = None) -> ModelCheckpoint:
    """Run the alternating optimisation and return the final checkpoint.

    ``dataset`` holds ``ImagePair`` entries or ``(ir, vi)`` array tuples.  With
    ``run_dir`` set, a loss log and checkpoints are written there.
    """
    if len(dataset) == 0:
        raise TrainingError("empty dataset")
    cfg = config
    s = cfg.image_size
    ir_all, vi_all = _prepare(dataset, s)
    n = ir_all.shape[0]

    models = Models.init(np.random.default_rng(cfg.seed), s)
    per_epoch = math.ceil(n / cfg.batch_size)
    step = 0
    rng = None
    if resume is not None:
        if resume.image_size != s:
            raise CheckpointError(f"checkpoint image size {resume.image_size} != config image size {s}")
        models.load_state(resume.params)
        step = resume.step

    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
    loss_log = LossLog(run_dir / "loss_log.csv" if run_dir else None, cfg.weights, append=resume is not None)
    w = cfg.weights
    g_params = models.generator.parameters()
    try:
        for epoch in range(step // per_epoch, cfg.epochs):
            rng = _epoch_rng(cfg.seed, epoch)
            order = rng.permutation(n)
            first = step - epoch * per_epoch
            if first > 0:  # resuming inside this epoch
                if resume is None or resume.rng_state is None:
                    raise CheckpointError("checkpoint lacks the rng state needed to resume mid-epoch")
                rng.bit_generator.state = resume.rng_state
            for b in range(first, per_epoch):
                idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
                ir = Tensor(ir_all[idx])
                vi = Tensor(vi_all[idx])
                # G does not change during the critic rounds of a batch, so a single
                # forward gives exactly the fused image every round would regenerate;
                # its graph is kept for the generator update below.
                fused, ir_att, _ = models.generator(ir, vi)
                mask = extract_target_masks(ir_att.data)
                for _ in range(cfg.n_critic):
                    spa = d_spa_loss(ir, fused.data, mask, models.d_spa, w.alpha, rng)
                    _finite(step, L_Dspa=spa.value, gp_spa=spa.penalty)
                    T.backward(spa.objective)
                    T.sgd_step(models.d_spa.parameters(), cfg.lr_d)
                    fre = d_fre_loss(vi, fused.data, models.d_fre, w.beta, rng)
                    _finite(step, L_Dfre=fre.value, gp_fre=fre.penalty)
                    T.backward(fre.objective)
                    T.sgd_step(models.d_fre.parameters(), cfg.lr_d)

                l_g, l_con, l_adv = generator_losses(models, ir, vi, w, fused, mask)
                _finite(step, L_G=l_g.item(), L_con=l_con.item(), L_adv=l_adv.item())
                T.backward(l_g)
                T.sgd_step(g_params, cfg.lr_g)
                models.d_spa.zero_grad()
                models.d_fre.zero_grad()

                step += 1
                row = {"step": step, "epoch": epoch, "L_G": l_g.item(), "L_con": l_con.item(),
                       "L_adv": l_adv.item(), "L_Dspa": spa.value, "L_Dfre": fre.value,
                       "gp_spa": spa.penalty, "gp_fre": fre.penalty,
                       "gap_spa": spa.wasserstein_gap, "gap_fre": fre.wasserstein_gap}
                loss_log.append(row)
                log.debug("step %d L_G=%.5f L_con=%.5f L_Dspa=%.5f L_Dfre=%.5f",
                          step, row["L_G"], row["L_con"], row["L_Dspa"], row["L_Dfre"])
                if on_step is not None:
                    on_step(row, models)
                if run_dir is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                    save_checkpoint(_snapshot(models, step, s, rng), run_dir / f"checkpoint_{step:06d}.ckpt")
    finally:
        loss_log.close()

    final = _snapshot(models, step, s, rng)
    if run_dir is not None:
        save_checkpoint(final, run_dir / "checkpoint.ckpt")
    return final


def initial_checkpoint(config: TrainConfig) -> ModelCheckpoint:
    """The parameters ``train`` starts from for this config (seeded init, step 0)."""
    models = Models.init(np.random.default_rng(config.seed), config.image_size)
    return _snapshot(models, 0, config.image_size, None)


def load_models(ckpt: ModelCheckpoint) -> Models:
    if ckpt.format_version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {ckpt.format_version}")
    models = Models.init(np.random.default_rng(0), ckpt.image_size)
    models.load_state(ckpt.params)
    return models


def load_generator(ckpt: ModelCheckpoint) -> Generator:
    if ckpt.format_version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {ckpt.format_version}")
    gen = Generator.init(np.random.default_rng(0))
    gen.load_state({k[2:]: v for k, v in ckpt.params.items() if k.startswith("G.")})
    return gen


def fuse(ir: np.ndarray, vi: np.ndarray, checkpoint: ModelCheckpoint | Generator,
         return_attention: bool = False):
    """Fuse one pair at its native size (odd sizes are edge-padded, then cropped back)."""
    from .generator import generate

    ir = np.asarray(ir, dtype=np.float64)
    vi = np.asarray(vi, dtype=np.float64)
    if ir.shape != vi.shape:
        raise ValueError(f"infrared {ir.shape} and visible {vi.shape} images differ in size")
    gen = checkpoint if isinstance(checkpoint, Generator) else load_generator(checkpoint)
    h, w = ir.shape
    fused, ai, av = generate(pad_even(ir), pad_even(vi), gen)
    fused, ai, av = fused[:h, :w], ai[:h, :w], av[:h, :w]
    if return_attention:
        return fused, ai, av
    return fused


def with_overrides(config: TrainConfig, **kw) -> TrainConfig:
    return replace(config, **kw)
