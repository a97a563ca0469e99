"""Command-line interface.

Subcommands: synth, train, degrade, db-build, db-add, identify, eval,
gradcheck. Every subcommand is deterministic given an explicit --seed.
Exit code 0 means the operation fully succeeded; on failure, partially
written outputs are removed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import moco
from .audio import AudioBuffer, load_wav, save_wav, synth_corpus, to_mono_16k
from .degrade import DegradationSpec, apply, sample_spec
from .errors import ConfigError, InputError
from .fingerprint import extract
from .matchdb import FingerprintDb
from .nn import Encoder, EncoderConfig, load_checkpoint, save_checkpoint
from .nn.gradcheck import check_encoder
from .seeding import derive_seed, rng_from

CONFIG_ENV_VAR = "CONTRAFP_CONFIG"

QUERY_CLIP_SECONDS = 10.0

# Seed-stream tags for the evaluation protocol
_SALT_PICK = 11
_SALT_SPEC = 12
_SALT_NOISE = 13


@dataclass
class EvalReport:
    """Identification accuracy over randomly degraded query clips."""

    n_queries: int
    hits: int
    hit_rate: float
    mean_winner_votes: float
    by_count: dict[int, tuple[int, int]]  # degradation count -> (queries, hits)
    by_type: dict[str, tuple[int, int]]   # degradation name -> (queries, hits)
    records: list[dict] = field(default_factory=list)

    def to_text(self) -> str:
        lines = [
            f"queries\t{self.n_queries}",
            f"hits\t{self.hits}",
            f"hit_rate\t{self.hit_rate:.4f}",
            f"mean_winner_votes\t{self.mean_winner_votes:.3f}",
            "breakdown by active degradation count:",
        ]
        for count in sorted(self.by_count):
            n, h = self.by_count[count]
            lines.append(f"  {count} active\t{h}/{n}\t{h / n:.4f}")
        lines.append("hit rate by degradation type (overlapping):")
        for name in sorted(self.by_type):
            n, h = self.by_type[name]
            lines.append(f"  {name}\t{h}/{n}\t{h / n:.4f}")
        return "\n".join(lines) + "\n"


def _load_ref_dir(ref_dir: Path) -> list[tuple[str, AudioBuffer]]:
    wavs = sorted(ref_dir.glob("*.wav"))
    if not wavs:
        raise InputError(f"no .wav files found in {ref_dir}")
    return [(p.stem, to_mono_16k(load_wav(p))) for p in wavs]


def _build_db(refs: list[tuple[str, AudioBuffer]], encoder: Encoder, params) -> FingerprintDb:
    db = FingerprintDb()
    for name, buf in refs:
        db.add_track(extract(buf, encoder, params, track_ref=name))
    return db


def run_eval(checkpoint_path, ref_dir, n_queries: int, seed: int,
             degrade: bool = True, include_test_only: bool = True,
             threads: int = 1) -> EvalReport:
    """Build a database from ref_dir, then identify degraded random clips.

    Each query picks a random reference track, cuts a random clip of up
    to 10 s, pushes it through a freshly sampled degradation, and checks
    whether the top-ranked match is the source track.
    """
    config, params = load_checkpoint(checkpoint_path)
    encoder = Encoder(config)
    refs = _load_ref_dir(Path(ref_dir))
    db = _build_db(refs, encoder, params)
    clip_len = int(QUERY_CLIP_SECONDS * 16000)

    def one_query(i: int) -> dict:
        pick = rng_from(seed, _SALT_PICK, i)
        track_id = int(pick.integers(len(refs)))
        name, buf = refs[track_id]
        n = min(clip_len, len(buf))
        start = int(pick.integers(0, len(buf) - n + 1))
        clip = AudioBuffer(buf.samples[start:start + n], buf.sample_rate)
        if degrade:
            spec = sample_spec(derive_seed(seed, _SALT_SPEC, i), include_test_only=include_test_only)
            clip = apply(clip, spec, derive_seed(seed, _SALT_NOISE, i))
        else:
            spec = DegradationSpec()
        results = db.identify(extract(clip, encoder, params))
        top = results[0]
        return {
            "query": i,
            "track": name,
            "predicted": top.name,
            "hit": bool(top.track_id == track_id),
            "degradations": list(spec.active()),
            "votes": top.votes,
            "total_similarity": top.total_similarity,
        }

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(one_query, range(n_queries)))
    else:
        records = [one_query(i) for i in range(n_queries)]

    hits = sum(r["hit"] for r in records)
    by_count: dict[int, tuple[int, int]] = {}
    by_type: dict[str, tuple[int, int]] = {}
    for r in records:
        k = len(r["degradations"])
        n, h = by_count.get(k, (0, 0))
        by_count[k] = (n + 1, h + r["hit"])
        for name in r["degradations"]:
            n, h = by_type.get(name, (0, 0))
            by_type[name] = (n + 1, h + r["hit"])
    return EvalReport(
        n_queries=n_queries,
        hits=hits,
        hit_rate=hits / n_queries if n_queries else 0.0,
        mean_winner_votes=float(np.mean([r["votes"] for r in records])) if records else 0.0,
        by_count=by_count,
        by_type=by_type,
        records=records,
    )


def cmd_synth(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tracks = synth_corpus(args.n_tracks, args.duration, args.seed)
    for i, track in enumerate(tracks):
        path = out_dir / f"track_{args.seed}_{i:04d}.wav"
        _written.append(path)
        save_wav(path, track)
    print(f"wrote {len(tracks)} tracks to {out_dir}")
    return 0


def cmd_train(args) -> int:
    cfg = {}
    config_path = args.config or os.environ.get(CONFIG_ENV_VAR)
    if config_path:
        cfg = moco.parse_train_config(Path(config_path).read_text())
    corpus_dir = Path(args.corpus_dir or cfg.get("corpus", ""))
    if not str(corpus_dir) or not corpus_dir.is_dir():
        raise InputError(f"corpus directory not found: {corpus_dir or '(unset)'}")
    overrides = {k: v for k, v in (("batch", args.batch), ("queue_k", args.queue),
                                   ("steps", args.steps), ("lr0", args.lr0)) if v is not None}
    cfg.update(overrides)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    hyper = moco.hyper_from_config(cfg)
    corpus = [to_mono_16k(load_wav(p)) for p in sorted(corpus_dir.glob("*.wav"))]
    if not corpus:
        raise InputError(f"no .wav files found in {corpus_dir}")
    _written.extend([Path(args.out), Path(args.metrics)])
    moco.train(corpus, hyper, seed=seed, checkpoint_path=args.out,
               metrics_path=args.metrics, log_every=args.log_every)
    print(f"wrote checkpoint {args.out} and metrics {args.metrics}")
    return 0


def cmd_degrade(args) -> int:
    a = to_mono_16k(load_wav(args.infile))
    if args.spec:
        spec = DegradationSpec.from_line(args.spec)
    else:
        spec = sample_spec(args.seed, include_test_only=args.include_test_only)
    out = apply(a, spec, derive_seed(args.seed, _SALT_NOISE))
    _written.append(Path(args.outfile))
    save_wav(args.outfile, out)
    print(f"applied: {spec.to_line()}")
    return 0


def cmd_db_build(args) -> int:
    config, params = load_checkpoint(args.checkpoint)
    encoder = Encoder(config)
    db = _build_db(_load_ref_dir(Path(args.ref_dir)), encoder, params)
    _written.append(Path(args.out))
    db.save(args.out)
    print(f"wrote database with {db.n_tracks} tracks / {db.n_rows} sub-fingerprints to {args.out}")
    return 0


def cmd_db_add(args) -> int:
    config, params = load_checkpoint(args.checkpoint)
    encoder = Encoder(config)
    db = FingerprintDb.load(args.db)
    for wav in args.wavs:
        name = Path(wav).stem
        track_id = db.add_track(extract(to_mono_16k(load_wav(wav)), encoder, params, track_ref=name))
        print(f"added {name} as track {track_id}")
    db.save(args.db)
    return 0


def cmd_identify(args) -> int:
    config, params = load_checkpoint(args.checkpoint)
    encoder = Encoder(config)
    db = FingerprintDb.load(args.db)
    results = db.identify(extract(to_mono_16k(load_wav(args.query)), encoder, params))
    print("rank\ttrack\tvotes\ttotal_similarity")
    for rank, r in enumerate(results[:args.top], start=1):
        print(f"{rank}\t{r.name}\t{r.votes}\t{r.total_similarity:.4f}")
    return 0


def cmd_eval(args) -> int:
    report = run_eval(args.checkpoint, args.ref_dir, args.n_queries, args.seed,
                      degrade=not args.no_degrade,
                      include_test_only=not args.no_test_only,
                      threads=args.threads)
    sys.stdout.write(report.to_text())
    if args.report:
        _written.append(Path(args.report))
        with open(args.report, "w") as fh:
            for record in report.records:
                fh.write(json.dumps(record) + "\n")
            fh.write(json.dumps({"summary": {
                "n_queries": report.n_queries, "hits": report.hits,
                "hit_rate": report.hit_rate,
                "mean_winner_votes": report.mean_winner_votes}}) + "\n")
    return 0


def cmd_gradcheck(args) -> int:
    rows = [
        check_encoder(EncoderConfig(conv_channels=(4, 8)), seed=args.seed,
                      dtype=np.float32, tolerance=1e-3),
        check_encoder(EncoderConfig(conv_channels=(4, 8)), seed=args.seed,
                      dtype=np.float64, tolerance=1e-6),
    ]
    print("check\tmax_rel_err\ttolerance\tstatus")
    ok = True
    for row in rows:
        print(f"{row.label}\t{row.max_rel_err:.3e}\t{row.tolerance:.0e}\t{'ok' if row.ok else 'FAIL'}")
        ok &= row.ok
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="contrafp",
                                     description="degradation-robust audio fingerprinting")
    parser.add_argument("--seed", type=int, default=None, help="root random seed")
    parser.add_argument("--config", default=None,
                        help=f"training config file (or set ${CONFIG_ENV_VAR})")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for eval")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic track corpus")
    p.add_argument("--n-tracks", type=int, default=50)
    p.add_argument("--duration", type=float, default=10.0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train the encoder on a corpus directory")
    p.add_argument("--corpus-dir", default=None)
    p.add_argument("--out", default="encoder.cfp")
    p.add_argument("--metrics", default="metrics.tsv")
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--queue", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--lr0", type=float, default=None)
    p.add_argument("--log-every", type=int, default=50)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("degrade", help="apply a (sampled or given) degradation to a WAV")
    p.add_argument("infile")
    p.add_argument("outfile")
    p.add_argument("--spec", default=None, help="explicit spec, e.g. 'noise=0.05 pitch=-2'")
    p.add_argument("--include-test-only", action="store_true",
                   help="allow test-only degradations when sampling")
    p.set_defaults(fn=cmd_degrade)

    p = sub.add_parser("db-build", help="fingerprint a reference directory into a database")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--ref-dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_db_build)

    p = sub.add_parser("db-add", help="append tracks to an existing database")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--db", required=True)
    p.add_argument("wavs", nargs="+")
    p.set_defaults(fn=cmd_db_add)

    p = sub.add_parser("identify", help="identify a query WAV against a database")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--db", required=True)
    p.add_argument("--top", type=int, default=5)
    p.add_argument("query")
    p.set_defaults(fn=cmd_identify)

    p = sub.add_parser("eval", help="measure identification accuracy on degraded clips")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--ref-dir", required=True)
    p.add_argument("--n-queries", type=int, default=200)
    p.add_argument("--no-degrade", action="store_true")
    p.add_argument("--no-test-only", action="store_true",
                   help="exclude test-only degradations from sampling")
    p.add_argument("--report", default=None, help="write per-query JSON lines here")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of encoder gradients")
    p.set_defaults(fn=cmd_gradcheck)
    return parser


class _OutputLog:
    """Registry of output paths, so failures can clean up created files."""

    def __init__(self):
        self._entries: list[tuple[Path, bool]] = []

    def append(self, path: Path) -> None:
        self._entries.append((path, path.exists()))

    def extend(self, paths) -> None:
        for p in paths:
            self.append(p)

    def clear(self) -> None:
        self._entries.clear()

    def remove_created(self) -> None:
        # Only drop files this command itself created; never delete
        # outputs that predate the run.
        for path, existed in self._entries:
            if not existed and path.exists():
                try:
                    path.unlink()
                except OSError:
                    pass


_written = _OutputLog()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed is None:
        args.seed = 0
    _written.clear()
    try:
        return args.fn(args)
    except Exception as exc:  # noqa: BLE001 - single reporting point for the CLI
        _written.remove_created()
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
