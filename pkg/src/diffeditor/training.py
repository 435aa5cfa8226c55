"""Deterministic, resumable training loop."""

from __future__ import annotations

import json
import math
import logging
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig, code_version
from .data_model import sample_phoneme_span
from .diffusion import training_step
from .errors import DataError
from .frontend.embeddings import EmbeddingCache
from .ingestion.audio import AudioConfig
from .ingestion.dataset import Dataset
from .model import DiffEditorModel, load_checkpoint, make_batch, prepare, provider_for, save_checkpoint

log = logging.getLogger(__name__)

LOG_NAME = "loss_log.jsonl"


def checkpoint_name(step: int) -> str:
    return f"ckpt_{step:06d}.npz"


def audio_config_of(cfg: RunConfig) -> AudioConfig:
    return AudioConfig(**cfg["audio"])


def embedding_cache_for(cfg: RunConfig, dataset: Dataset) -> EmbeddingCache | None:
    root = cfg["paths.cache"] or (dataset.root / "emb" if dataset.root is not None else None)
    return EmbeddingCache(root) if root is not None else None


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def learning_rate(tr: dict, step: int) -> float:
    """Constant ``lr``, or a cosine decay to ``lr_final`` over ``training.steps`` when that is set.

    The horizon is the configured step count, not the length of this invocation,
    so a run stopped early and resumed follows the same curve.
    """
    lr, final, horizon = float(tr["lr"]), tr["lr_final"], int(tr["steps"])
    if final is None or horizon <= 1:
        return lr
    frac = min(step, horizon - 1) / (horizon - 1)
    return float(final) + 0.5 * (lr - float(final)) * (1.0 + math.cos(math.pi * frac))


def train(
    cfg: RunConfig,
    dataset: Dataset,
    out_dir,
    resume=None,
    steps: int | None = None,
    progress=None,
) -> Path:
    """Train for ``training.steps`` (or ``steps``) and return the final checkpoint path.

    With ``resume`` the run continues from that checkpoint's parameters,
    optimiser moments and random-number states, so an interrupted run ends
    bitwise-identical to an uninterrupted one.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    total_steps = int(steps if steps is not None else cfg["training.steps"])
    tr = cfg["training"]
    seed = int(cfg["seeds.train"])
    if dataset.audio_config.hash() != audio_config_of(cfg).hash():
        raise DataError("dataset was ingested with a different audio config")

    torch.use_deterministic_algorithms(True)
    torch.manual_seed(seed)
    model = DiffEditorModel(cfg, dataset.speakers)
    model.fit_normalizer([u.mel for u in dataset])
    optimizer = torch.optim.Adam(model.parameters(), lr=tr["lr"])
    rng = np.random.default_rng(seed)
    gen = torch.Generator().manual_seed(seed + 1)
    start = 0

    if resume is not None:
        ck = load_checkpoint(resume, expected_hash=cfg.hash())
        model.load_state_dict(ck.model.state_dict())
        ck.model = model
        ck.restore_optimizer(optimizer)
        st = ck.meta["state"]
        rng.bit_generator.state = st["numpy_rng"]
        gen.set_state(torch.from_numpy(ck.arrays["state/noise_rng"].copy()))
        torch.set_rng_state(torch.from_numpy(ck.arrays["state/torch_rng"].copy()))
        start = ck.step

    provider = provider_for(cfg)
    cache = embedding_cache_for(cfg, dataset)
    items = [prepare(u, model, provider, cache) for u in dataset]

    log_path = out_dir / LOG_NAME
    if resume is None or not log_path.exists():
        header = {
            "type": "header",
            "config_hash": cfg.hash(),
            "code_version": code_version(),
            "seed": seed,
            "lambda_fd": float(cfg["loss.lambda_fd"]),
            "fusion": cfg["fusion.strategy"],
            "batch_size": tr["batch_size"],
            "steps": total_steps,
        }
        log_path.write_text(json.dumps(header) + "\n")

    def snapshot(step: int) -> Path:
        state = {
            "numpy_rng": _rng_state(rng),
            "noise_rng": gen.get_state().numpy(),
            "torch_rng": torch.get_rng_state().numpy(),
            "seed": seed,
        }
        path = save_checkpoint(out_dir / checkpoint_name(step), model, step, optimizer, state)
        (out_dir / "latest.txt").write_text(path.name + "\n")
        return path

    lambda_fd = float(cfg["loss.lambda_fd"])
    ratio = tuple(tr["mask_ratio"])
    last = None
    with log_path.open("a") as fh:
        for step in range(start, total_steps):
            model.train()
            for group in optimizer.param_groups:
                group["lr"] = learning_rate(tr, step)
            idx = rng.integers(0, len(items), tr["batch_size"])
            chosen = [items[i] for i in idx]
            spans = [sample_phoneme_span(it.durations, ratio, rng) for it in chosen]
            batch = make_batch(chosen, spans)
            loss, br = training_step(batch, model, model.schedule, lambda_fd, gen, int(tr["pitch_jitter"]))
            if loss is None:
                continue
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), tr["grad_clip"])
            optimizer.step()
            done = step + 1
            if done % tr["log_every"] == 0 or done == total_steps:
                fh.write(json.dumps({"step": done, **br.as_dict()}) + "\n")
                fh.flush()
            if progress is not None:
                progress(done, br)
            if done % tr["ckpt_every"] == 0 and done != total_steps:
                snapshot(done)
        last = snapshot(total_steps)
    model.eval()
    return last


def read_loss_log(path) -> tuple[dict, list[dict]]:
    lines = [json.loads(l) for l in Path(path).read_text().splitlines() if l.strip()]
    header = next(l for l in lines if l.get("type") == "header")
    return header, [l for l in lines if "step" in l]
