"""Command-line entry point: ``diffeditor {make-toy,ingest,train,edit,bench,evaluate}``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, code_version
from .errors import ConfigError, DataError, DiffEditorError

log = logging.getLogger("diffeditor")

CACHE_ENV = "DIFFEDIT_CACHE"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: {message}")


def _stamp(cfg: RunConfig | None, seed: int | None) -> dict:
    return {
        "config_hash": cfg.hash() if cfg is not None else None,
        "seed": seed,
        "code_version": code_version(),
        "version": __version__,
    }


def _apply_cache_env(cfg: RunConfig) -> RunConfig:
    root = os.environ.get(CACHE_ENV)
    return cfg.with_override(f"paths.cache={json.dumps(root)}") if root else cfg


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_make_toy(args) -> int:
    from .toy import make_toy_corpus

    manifest = make_toy_corpus(args.out, n_utterances=args.n, seed=args.seed)
    print(manifest)
    return 0


def cmd_ingest(args) -> int:
    from .ingestion.audio import AudioConfig
    from .ingestion.dataset import ingest_manifest
    from .ingestion.manifest import load_manifest

    cfg = RunConfig.load(args.config, args.set)
    entries = load_manifest(args.manifest)
    summary = ingest_manifest(entries, args.out, AudioConfig(**cfg["audio"]), args.workers, cfg["paths.lexicon"])
    doc = {**summary.as_dict(), "warnings": len(summary.failures), **_stamp(cfg, None)}
    _write_json(Path(args.out) / "summary.json", doc)
    print(json.dumps(doc, sort_keys=True))
    if not summary.ingested:
        raise DataError("no utterance could be ingested")
    return 0


def cmd_train(args) -> int:
    from .ingestion.dataset import Dataset
    from .training import train

    cfg = _apply_cache_env(RunConfig.load(args.config, args.set))
    dataset = Dataset.load(args.data)

    def progress(step, br):
        if step % cfg["training.log_every"] == 0:
            log.info("step %d total %.4f", step, br.total)

    last = train(cfg, dataset, args.out, resume=args.resume, steps=args.steps, progress=progress)
    print(json.dumps({"checkpoint": str(last), **_stamp(cfg, cfg["seeds.train"])}, sort_keys=True))
    return 0


def _load_ckpt(path):
    from .model import load_checkpoint

    return load_checkpoint(path)


def cmd_edit(args) -> int:
    from .editing import edit, plan_edit
    from .ingestion.audio import AudioConfig, griffin_lim, write_wav
    from .ingestion.cache import save_array
    from .ingestion.dataset import ingest_entry
    from .ingestion.manifest import ManifestEntry
    from .model import provider_for
    from .training import embedding_cache_for

    ck = _load_ckpt(args.ckpt)
    model = ck.model
    cfg = _apply_cache_env(model.cfg)
    audio = Path(args.audio)
    if not audio.is_file():
        raise DataError(f"audio not found: {audio}")
    textgrid = Path(args.textgrid) if args.textgrid else audio.with_suffix(".TextGrid")
    if not textgrid.is_file():
        raise DataError(f"no alignment for {audio}: pass --textgrid")
    speaker = args.speaker or model.speaker_names[0]
    acfg = AudioConfig(**cfg["audio"])
    utt = ingest_entry(ManifestEntry("edit", audio, args.text, speaker, textgrid=textgrid), acfg, cfg["paths.lexicon"])

    from .frontend.g2p import load_lexicon

    plan = plan_edit(args.text, args.edited_text, utt.durations, utt.phonemes, utt.tokenization, load_lexicon(cfg["paths.lexicon"]))
    seed = args.seed if args.seed is not None else cfg["seeds.sample"]
    cache = embedding_cache_for(cfg, _NoRoot())
    result = edit(utt.mel, utt.f0, plan, model, provider_for(cfg), speaker, seed, cache)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_array(out / "edited.mel", result.mel.data, acfg.hash(), sample_rate=acfg.sample_rate, hop_length=acfg.hop_length)
    save_array(out / "original.mel", utt.mel, acfg.hash(), sample_rate=acfg.sample_rate, hop_length=acfg.hop_length)
    if args.wav:
        write_wav(out / "edited.wav", griffin_lim(result.mel.data, acfg, cfg["bench.griffin_lim_iters"]), acfg.sample_rate)
    report = {
        "original_text": args.text,
        "edited_text": args.edited_text,
        "speaker": speaker,
        "checkpoint": str(args.ckpt),
        **result.report,
        **_stamp(cfg, seed),
    }
    _write_json(out / "report.json", report)
    print(json.dumps({k: report[k] for k in ("noop", "seed", "config_hash")} | {"out": str(out)}, sort_keys=True))
    return 0


class _NoRoot:
    root = None


def _parse_ratio(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(x) for x in text.split(":"))
    except ValueError:
        raise ConfigError(f"--mask-ratio must look like 0.2:0.6, got {text!r}") from None
    if not (0.0 < lo <= hi <= 1.0):
        raise ConfigError("--mask-ratio must satisfy 0 < lo <= hi <= 1")
    return lo, hi


def cmd_bench(args) -> int:
    from .editing import ORACLE, bench_reconstruct
    from .ingestion.dataset import Dataset
    from .metrics import PesqAdapter, write_csv, write_json
    from .model import provider_for
    from .training import embedding_cache_for

    dataset = Dataset.load(args.data)
    if args.ckpt == ORACLE:
        model, cfg, provider, cache = ORACLE, RunConfig.load(args.config, args.set), None, None
    else:
        model = _load_ckpt(args.ckpt).model
        cfg = _apply_cache_env(model.cfg)
        provider = provider_for(cfg)
        cache = embedding_cache_for(cfg, dataset)
    ratio = _parse_ratio(args.mask_ratio) if args.mask_ratio else tuple(cfg["bench.mask_ratio"])
    seed = args.seed if args.seed is not None else cfg["seeds.sample"]
    pesq = PesqAdapter(args.pesq) if args.pesq else None
    result = bench_reconstruct(
        dataset, model, ratio, seed, provider, cache,
        griffin_lim_iters=cfg["bench.griffin_lim_iters"], dtw=args.dtw or cfg["bench.dtw"], pesq=pesq,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "metrics.csv", result.reports)
    meta = {
        "checkpoint": str(args.ckpt),
        "mask_ratio": list(ratio),
        "spans": {k: list(v) for k, v in result.spans.items()},
        "skipped": result.skipped,
        **_stamp(cfg, seed),
    }
    write_json(out / "metrics.json", result.reports, meta)
    print(json.dumps({"aggregate": result.aggregate, "skipped": len(result.skipped)}, sort_keys=True))
    return 0


def _load_signal(path: Path, cfg):
    """(mel, waveform or None) from a .wav file or a cached mel dump stem."""
    from .ingestion.audio import compute_mel, read_wav
    from .ingestion.cache import load_array

    if path.suffix.lower() == ".wav":
        wave, sr = read_wav(path)
        mel = compute_mel(wave, sr, cfg).data
        from .ingestion.audio import resample

        return mel, resample(wave, sr, cfg.sample_rate)
    stem = path.with_suffix("") if path.suffix in (".bin", ".json") else path
    mel = load_array(stem)
    if mel is None:
        raise DataError(f"cannot read {path} as a wav file or mel dump")
    return mel, None


def cmd_evaluate(args) -> int:
    from .ingestion.audio import AudioConfig, griffin_lim
    from .metrics import PesqAdapter, mcd, stoi

    cfg = RunConfig.load(args.config, args.set)
    acfg = AudioConfig(**cfg["audio"])
    ref_mel, ref_wave = _load_signal(Path(args.ref), acfg)
    test_mel, test_wave = _load_signal(Path(args.test), acfg)
    aligned = ref_mel.shape[0] == test_mel.shape[0] and not args.dtw
    doc = {"ref": args.ref, "test": args.test, "frame_aligned": aligned, "mcd": mcd(ref_mel, test_mel, frame_aligned=aligned)}
    if ref_wave is None:
        ref_wave = griffin_lim(ref_mel, acfg, cfg["bench.griffin_lim_iters"])
    if test_wave is None:
        test_wave = griffin_lim(test_mel, acfg, cfg["bench.griffin_lim_iters"])
    n = min(ref_wave.size, test_wave.size)
    doc["stoi"] = stoi(ref_wave[:n], test_wave[:n], acfg.sample_rate) if ref_wave.size == test_wave.size else None
    if args.pesq:
        res = PesqAdapter(args.pesq)(ref_wave[:n], test_wave[:n], acfg.sample_rate)
        doc["pesq"], doc["pesq_error"] = res.score, res.error
    doc.update(_stamp(cfg, None))
    if args.out:
        _write_json(Path(args.out), doc)
    print(json.dumps(doc, sort_keys=True, default=_jsonable))
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="diffeditor", description="Text-based speech editing with a conditional mel diffusion model.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def config_flags(sp, required=False):
        sp.add_argument("--config", required=required, help="YAML config file or packaged name (e.g. 'toy')")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override, repeatable")

    sp = sub.add_parser("make-toy", help="write the synthetic toy corpus")
    sp.add_argument("--out", required=True)
    sp.add_argument("--n", type=int, default=5)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_make_toy)

    sp = sub.add_parser("ingest", help="build a dataset cache from a manifest")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--workers", type=int, default=1)
    config_flags(sp)
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("train", help="train (or resume) a model")
    config_flags(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--resume")
    sp.add_argument("--steps", type=int, help="stop after this many total steps (default training.steps)")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("edit", help="edit one utterance by changing its transcript")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--audio", required=True)
    sp.add_argument("--text", required=True)
    sp.add_argument("--edited-text", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--textgrid", help="alignment (default: <audio>.TextGrid)")
    sp.add_argument("--speaker", help="speaker name known to the checkpoint (default: first)")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--wav", action="store_true", help="also write a Griffin-Lim waveform")
    sp.set_defaults(func=cmd_edit)

    sp = sub.add_parser("bench", help="masked-reconstruction benchmark")
    sp.add_argument("--ckpt", required=True, help="checkpoint path, or 'oracle' for the ground-truth copy backend")
    sp.add_argument("--data", required=True)
    sp.add_argument("--mask-ratio")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)
    sp.add_argument("--dtw", action="store_true")
    sp.add_argument("--pesq", help="external PESQ executable")
    config_flags(sp)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("evaluate", help="score a test signal against a reference")
    sp.add_argument("--ref", required=True, help=".wav file or mel dump")
    sp.add_argument("--test", required=True)
    sp.add_argument("--dtw", action="store_true")
    sp.add_argument("--pesq")
    sp.add_argument("--out")
    config_flags(sp)
    sp.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DiffEditorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except KeyboardInterrupt:
        return 3
    except Exception as exc:  # noqa: BLE001 - surface as a runtime failure
        log.debug("unhandled error", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
