"""Command-line entry point: ``synthasu <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import corpus, experiments, speechsynth, textgen
from .config import RunConfig, cache_dir, load_yaml, task_from_dict
from .corpus import Manifest
from .trainer import REGIMES, Checkpoint, init_from_checkpoint, train

log = logging.getLogger("synthasu")


def cmd_generate_text(args) -> int:
    raw = load_yaml(args.task)
    task = task_from_dict(raw.get("task", raw), Path(args.task).parent)
    gen = dict(raw.get("generation") or {})
    gen.pop("backend", None)
    gen["seed"] = args.seed
    cfg = textgen.GenerationConfig(**gen)
    backend = textgen.make_backend(args.backend, cache_dir=cache_dir())
    texts = textgen.generate_texts(task, backend, cfg)
    textgen.save_texts(texts, args.out)
    log.info("wrote %d texts to %s", len(texts), args.out)
    return 0


def _speaker_pool(spec: str):
    if spec.startswith("stub:"):
        return speechsynth.stub_speaker_pool(int(spec.split(":", 1)[1]))
    if spec.startswith("cmu-arctic"):
        n = int(spec.split(":", 1)[1]) if ":" in spec else None
        return speechsynth.cmu_arctic_pool(n, cache_dir=cache_dir())
    return speechsynth.load_speaker_pool(spec)


def cmd_synthesize(args) -> int:
    texts = textgen.load_texts(args.texts)
    pool = _speaker_pool(args.speakers)
    backend = speechsynth.make_backend(args.backend, cache_dir=cache_dir())
    task = (task_from_dict(load_yaml(args.task).get("task", {}), Path(args.task).parent)
            if args.task else args.task_kind)
    manifest = speechsynth.synthesize_corpus(texts, pool, backend, args.seed, args.out_dir,
                                             task=task, workers=args.workers)
    log.info("synthesized %d utterances into %s", len(manifest), args.out_dir)
    return 0


def cmd_ingest(args) -> int:
    kwargs = {}
    if args.dataset == "iemocap":
        kwargs["merge_excited"] = not args.no_merge_excited
    if args.dataset == "slurp":
        kwargs["label_field"] = args.label_field
    manifest = corpus.ingest(args.dataset, args.source, **kwargs)
    manifest.save(args.out)
    for stat, (seen, expected) in corpus.compare_to_expected(manifest, args.dataset).items():
        flag = "" if seen == expected else "  (differs)"
        print(f"{stat}: {seen} (expected {expected}){flag}")
    return 0


def cmd_subsample(args) -> int:
    manifest = corpus.subsample(Manifest.load(args.manifest), args.ratio, args.seed)
    manifest.save(args.out)
    print(f"kept {len(manifest)} records")
    return 0


def cmd_folds(args) -> int:
    plan = corpus.make_folds(Manifest.load(args.manifest), args.dataset)
    payload = [{"fold": k, "test": list(f.test), "val": list(f.val), "train": list(f.train)}
               for k, f in enumerate(plan)]
    text = json.dumps(payload, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return 0


def cmd_train(args) -> int:
    cfg = RunConfig.load(args.config)
    data = experiments.ExperimentData(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    tcfg = experiments.train_config(cfg, args.regime, seed)
    model = experiments.build_model(cfg, seed)
    if args.regime == "synthetic_init_low_resource" and not args.init:
        raise SystemExit("--init is required for synthetic_init_low_resource")
    if args.init:
        init_from_checkpoint(model, Checkpoint.load(args.init))

    metrics_path = out / "epochs.jsonl"
    metrics_path.write_text("")

    def on_epoch(entry):
        with metrics_path.open("a") as fh:
            fh.write(json.dumps(entry) + "\n")

    if args.regime == "synthetic_zero_shot":
        tr, va = corpus.holdout_split(data.synthetic, cfg.synthetic_val_fraction, seed)
        test = data.split(args.fold)[2] if data.real is not None else None
    else:
        tr, va, test = data.split(args.fold)
        ratio = args.ratio if args.ratio is not None else cfg.train.get("ratio")
        if args.regime in ("low_resource", "synthetic_init_low_resource") and ratio:
            tr = corpus.subsample(tr, float(ratio), seed)
    ckpt = train(model, tr, va, tcfg, on_epoch=on_epoch)
    ckpt.save(out / "checkpoint.pt")
    summary = {"best_val_metric": ckpt.best_val_metric, "epoch": ckpt.epoch}
    if test is not None:
        init_from_checkpoint(model, ckpt)
        summary["test"] = experiments.evaluate(model, test, cfg.task.kind).to_dict()
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps({k: v for k, v in summary.items() if k != "test"}))
    return 0


def cmd_run(args) -> int:
    cfg = RunConfig.load(args.config)
    try:
        results = experiments.run_matrix(cfg, resume=args.resume, workers=args.workers)
    except experiments.MatrixError as exc:
        log.error("%s", exc)
        return 1
    print(f"{len(results)} cells complete; report in {Path(cfg.output_dir) / 'report'}")
    return 0


def cmd_report(args) -> int:
    written = experiments.report_from_dir(args.results, args.out, render=args.render)
    for name in written:
        print(Path(args.out) / name)
    return 0


def cmd_toy_data(args) -> int:
    from . import toy

    out = Path(args.out)
    real = toy.make_real(out / "real", n_sessions=args.sessions, per_label_per_session=args.per_label)
    syn = toy.make_synthetic(out / "synthetic", per_label=args.synthetic_per_label)
    print(f"real: {len(real)} utterances -> {out / 'real' / 'manifest.jsonl'}")
    print(f"synthetic: {len(syn)} utterances -> {out / 'synthetic' / 'manifest.jsonl'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="synthasu", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("generate-text", help="label-guided spoken text generation")
    s.add_argument("--task", required=True, help="YAML file with a task section")
    s.add_argument("--backend", default="stub", help="stub | flan-t5 | hf:<model id>")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_generate_text)

    s = sub.add_parser("synthesize", help="text-to-speech over generated texts")
    s.add_argument("--texts", required=True)
    s.add_argument("--speakers", required=True, help="pool file (.npz/.jsonl), stub:N or cmu-arctic[:N]")
    s.add_argument("--backend", default="stub", help="stub | speecht5")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--task", help="YAML file with a task section (records label mapping)")
    s.add_argument("--task-kind", default="emotion", choices=["emotion", "intent"])
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_synthesize)

    s = sub.add_parser("ingest", help="build a manifest from a dataset directory")
    s.add_argument("--dataset", required=True, choices=["iemocap", "msp_improv", "slurp", "synthetic"])
    s.add_argument("--source", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--no-merge-excited", action="store_true")
    s.add_argument("--label-field", default="intent")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("subsample", help="stratified low-resource subsample")
    s.add_argument("--manifest", required=True)
    s.add_argument("--ratio", type=float, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_subsample)

    s = sub.add_parser("folds", help="print the session fold plan")
    s.add_argument("--manifest", required=True)
    s.add_argument("--dataset", choices=["iemocap", "msp_improv", "slurp"])
    s.add_argument("--out")
    s.set_defaults(func=cmd_folds)

    s = sub.add_parser("train", help="train one model")
    s.add_argument("--config", required=True)
    s.add_argument("--regime", required=True, choices=REGIMES)
    s.add_argument("--init", help="checkpoint for synthetic-data-assisted initialization")
    s.add_argument("--out", required=True)
    s.add_argument("--fold", type=int, default=0)
    s.add_argument("--ratio", type=float)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("run", help="run the experiment matrix")
    s.add_argument("--config", required=True)
    s.add_argument("--workers", type=int)
    s.add_argument("--resume", action="store_true")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("report", help="aggregate tables from a results directory")
    s.add_argument("--results", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--render", action="store_true")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("toy-data", help="write small tone corpora for trying the pipeline")
    s.add_argument("--out", required=True)
    s.add_argument("--sessions", type=int, default=5)
    s.add_argument("--per-label", type=int, default=10)
    s.add_argument("--synthetic-per-label", type=int, default=40)
    s.set_defaults(func=cmd_toy_data)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
