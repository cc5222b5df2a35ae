"""Command-line entry point.

One `synglot` binary drives the whole workflow: corpus and eval-set
generation, tokenizer training, the three training stages, translation,
scoring, feature export, and the ablation table. All randomness flows from
the single --seed in the resolved configuration; training commands own
their run directory via a lock file and echo enough state (config, seed,
source revision, loss log, checkpoints) to reproduce a run bit-exactly on
one platform.

Exit codes: 0 success, 1 validation/usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import subprocess
import sys
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

from synglot.bpe import BpeVocab, EmptyCorpus, train_bpe
from synglot.evaluate import (
    EvalConfig,
    StagePlan,
    ablation_report,
    evaluate_pair,
    export_features,
    format_ablation_table,
    format_report_table,
    translate_snippets,
)
from synglot.model import (
    ModelConfig,
    PAPER_MODEL,
    count_params,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from synglot.syntax import SchemaError
from synglot.toylang import ParseError
from synglot.toylang.datasets import gen_corpus, gen_eval_set, read_jsonl
from synglot.toylang.sampler import SizeSpec
from synglot.training import (
    NoiseSpec,
    Schedule,
    TrainConfig,
    prepare_corpus,
    run_backtranslation,
    run_stage,
)

# ---------------------------------------------------------------------------
# profiles and configuration


def _desk_profile() -> dict:
    return {
        "profile": "desk",
        "seed": 0,
        "model": ModelConfig().to_dict(),
        "train": {
            "batch_size": 16,
            "lr": 1e-3,
            "adam_beta1": 0.9,
            "adam_beta2": 0.999,
            "adam_eps": 1e-8,
            "mask_ratio": 0.15,
            "grl_lambda": 1.0,
            "bt_dae_weight": 1.0,
            "noise": {"drop_prob": 0.1, "mask_prob": 0.1, "shuffle_k": 3,
                      "sub_prob": 0.1},
            "alpha": {"start": 0.05, "end": 0.01, "decay_steps": 3000},
            "beta": {"start": 0.05, "end": 0.01, "decay_steps": 3000},
            "roster": ["alpha", "beta"],
            "init_steps": 1500,
            "augment_steps": 1200,
            "bt_steps": 1800,
            "checkpoint_every": 0,
        },
        "eval": {
            "bleu_max_n": 4,
            "bleu_weights": [0.25, 0.25, 0.25, 0.25],
            "beam": 5,
            "max_steps": None,
            "ca_step_limit": 10_000,
            "em_normalization": "lexer-tokens",
            "sentence_bleu": False,
        },
    }


def _paper_profile() -> dict:
    doc = _desk_profile()
    doc["profile"] = "paper"
    doc["model"].update(PAPER_MODEL)
    doc["train"].update({
        "lr": 5e-5,
        "alpha": {"start": 0.05, "end": 0.01, "decay_steps": 30_000},
        "beta": {"start": 0.05, "end": 0.01, "decay_steps": 30_000},
        "init_steps": 100_000,
        "augment_steps": 30_000,
        "bt_steps": 30_000,
    })
    return doc


PROFILES = {"desk": _desk_profile, "paper": _paper_profile}


@dataclass(frozen=True)
class TrainSettings:
    batch_size: int
    lr: float
    adam_beta1: float
    adam_beta2: float
    adam_eps: float
    mask_ratio: float
    grl_lambda: float
    bt_dae_weight: float
    noise: NoiseSpec
    alpha: Schedule
    beta: Schedule
    roster: tuple[str, ...]
    init_steps: int
    augment_steps: int
    bt_steps: int
    checkpoint_every: int

    def stage_config(self, stage: str, seed: int, steps: int,
                     roster: tuple[str, ...] | None = None) -> TrainConfig:
        return TrainConfig(
            stage=stage, steps=steps, batch_size=self.batch_size,
            mask_ratio=self.mask_ratio, noise=self.noise,
            alpha=self.alpha, beta=self.beta, grl_lambda=self.grl_lambda,
            bt_dae_weight=self.bt_dae_weight,
            lr=self.lr, adam_beta1=self.adam_beta1, adam_beta2=self.adam_beta2,
            adam_eps=self.adam_eps, seed=seed,
            roster=roster or self.roster,
            checkpoint_every=self.checkpoint_every,
        )

    def default_steps(self, stage: str) -> int:
        return {"init": self.init_steps, "augment": self.augment_steps,
                "backtranslate": self.bt_steps}[stage]


@dataclass(frozen=True)
class RunConfig:
    profile: str
    seed: int
    model: ModelConfig
    train: TrainSettings
    eval: EvalConfig
    doc: dict   # the validated, fully resolved document (echoed to run dirs)


def _deep_merge(base: dict, extra: dict) -> None:
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_merge(base[key], value)
        else:
            base[key] = value


def _apply_dotted(doc: dict, dotted: str, value) -> None:
    node = doc
    parts = dotted.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise SchemaError(f"config key {dotted!r} descends into a non-object")
    node[parts[-1]] = value


def _config_schema() -> dict:
    text = resources.files("synglot").joinpath("schemas/run_config_schema.json").read_text()
    return json.loads(text)


def load_config(path=None, overrides: dict | None = None,
                profile: str | None = None) -> RunConfig:
    """Resolve configuration: profile defaults, then the file, then overrides."""
    import jsonschema

    file_doc = {}
    if path is not None:
        file_doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(file_doc, dict):
            raise SchemaError("config file must hold a JSON object")
    chosen = profile or file_doc.get("profile") or "desk"
    if chosen not in PROFILES:
        raise SchemaError(f"unknown profile {chosen!r}")
    doc = PROFILES[chosen]()
    _deep_merge(doc, file_doc)
    doc["profile"] = chosen
    for dotted, value in (overrides or {}).items():
        _apply_dotted(doc, dotted, value)

    try:
        jsonschema.validate(doc, _config_schema())
    except jsonschema.ValidationError as e:
        where = e.json_path.removeprefix("$.") or "config"
        raise SchemaError(f"{where}: {e.message}") from None

    t = doc["train"]
    settings = TrainSettings(
        batch_size=t["batch_size"], lr=t["lr"], adam_beta1=t["adam_beta1"],
        adam_beta2=t["adam_beta2"], adam_eps=t["adam_eps"],
        mask_ratio=t["mask_ratio"], grl_lambda=t["grl_lambda"],
        bt_dae_weight=t["bt_dae_weight"],
        noise=NoiseSpec(**t["noise"]),
        alpha=Schedule(**t["alpha"]), beta=Schedule(**t["beta"]),
        roster=tuple(t["roster"]), init_steps=t["init_steps"],
        augment_steps=t["augment_steps"], bt_steps=t["bt_steps"],
        checkpoint_every=t["checkpoint_every"],
    )
    e = dict(doc["eval"])
    e["bleu_weights"] = tuple(e["bleu_weights"])
    return RunConfig(
        profile=chosen, seed=doc["seed"], model=ModelConfig.from_dict(doc["model"]),
        train=settings, eval=EvalConfig(**e), doc=doc,
    )


# ---------------------------------------------------------------------------
# run directories


class RunDir:
    """Exclusive owner of one output directory for the duration of a command."""

    def __init__(self, path):
        self.path = Path(path)

    def __enter__(self) -> "RunDir":
        self.path.mkdir(parents=True, exist_ok=True)
        self._lock = self.path / ".lock"
        try:
            with self._lock.open("x") as fh:
                fh.write("locked by synglot\n")
        except FileExistsError:
            raise ValueError(
                f"run directory {self.path} is locked (stale {self._lock}?)"
            ) from None
        return self

    def __exit__(self, *exc) -> None:
        self._lock.unlink(missing_ok=True)

    def write_json(self, name: str, doc: dict) -> None:
        (self.path / name).write_text(json.dumps(doc, indent=1, sort_keys=True),
                                      encoding="utf-8")

    def write_text(self, name: str, text: str) -> None:
        (self.path / name).write_text(text, encoding="utf-8")


def source_revision() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True,
                             text=True, timeout=10, cwd=Path(__file__).parent)
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


# ---------------------------------------------------------------------------
# shared command plumbing


def _size_spec(args) -> SizeSpec:
    return SizeSpec(max_stmts=args.max_stmts, max_expr_depth=args.max_expr_depth,
                    max_params=args.max_params)


def _collect_overrides(args) -> dict:
    ov: dict = {}
    if getattr(args, "seed", None) is not None:
        ov["seed"] = args.seed
    if getattr(args, "sigma", None) is not None:
        ov["model.sigma"] = args.sigma
    if getattr(args, "batch_size", None) is not None:
        ov["train.batch_size"] = args.batch_size
    for item in getattr(args, "set", None) or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ValueError(f"--set expects key=value, got {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        ov[key] = value
    return ov


def _load_cfg(args) -> RunConfig:
    return load_config(getattr(args, "config", None), _collect_overrides(args),
                       profile=getattr(args, "profile", None))


def _roster(args) -> tuple[str, ...] | None:
    raw = getattr(args, "roster", None)
    if raw is None:
        return None
    return tuple(part.strip() for part in raw.split(",") if part.strip())


def _load_prepared(corpus_paths, vocab: BpeVocab, max_len: int):
    records = [r for p in corpus_paths for r in read_jsonl(p)]
    if not records:
        raise EmptyCorpus("corpus files hold no records")
    data = prepare_corpus(records, vocab)
    budget = max_len - 2
    dropped = 0
    for lang, rows in data.items():
        kept = [r for r in rows if r.ids.size <= budget]
        dropped += len(rows) - len(kept)
        data[lang] = kept
    if dropped:
        print(f"note: skipped {dropped} records over the {budget}-subtoken budget",
              file=sys.stderr)
    return data


def _echo_run_state(rd: RunDir, cfg: RunConfig, command: str, extra: dict) -> None:
    rd.write_json("resolved_config.json",
                  {"command": command, **extra, "config": cfg.doc})
    rd.write_text("revision.txt", source_revision() + "\n")


# ---------------------------------------------------------------------------
# commands


def cmd_gen_corpus(args) -> int:
    path = gen_corpus(seed=args.seed, n=args.n, lang=args.lang,
                      out_path=args.out, size=_size_spec(args))
    print(f"wrote {args.n} {args.lang} records to {path}")
    return 0


def cmd_gen_eval(args) -> int:
    path = gen_eval_set(seed=args.seed, n=args.n, src_lang=args.src_lang,
                        tgt_lang=args.tgt_lang, tests_per_fn=args.tests_per_fn,
                        out_path=args.out, size=_size_spec(args))
    print(f"wrote {args.n} {args.src_lang}->{args.tgt_lang} eval records to {path}")
    return 0


def cmd_train_bpe(args) -> int:
    vocab = train_bpe(args.corpus, vocab_size=args.vocab_size)
    vocab.save(args.out)
    print(f"trained vocabulary of {len(vocab.id_to_token)} tokens -> {args.out}")
    return 0


def _run_training_stage(args, stage: str) -> int:
    cfg = _load_cfg(args)
    vocab = BpeVocab.load(args.vocab)
    if stage == "init":
        mcfg = replace(cfg.model, vocab_size=len(vocab.id_to_token))
        params = init_params(mcfg, cfg.seed)
    else:
        params, mcfg, _ = load_checkpoint(args.ckpt)
    data = _load_prepared(args.corpus, vocab, mcfg.max_len)
    steps = args.steps if args.steps is not None else cfg.train.default_steps(stage)
    tcfg = cfg.train.stage_config(stage, cfg.seed, steps, _roster(args))

    with RunDir(args.run_dir) as rd:
        _echo_run_state(rd, cfg, stage, {
            "vocab": str(args.vocab), "corpus": [str(p) for p in args.corpus],
            "steps": steps, "roster": list(tcfg.roster),
            "checkpoint_in": str(getattr(args, "ckpt", "")) or None,
        })
        runner = run_backtranslation if stage == "backtranslate" else run_stage
        params, reports = runner(params, mcfg, tcfg, data, vocab,
                                 log_path=rd.path / "loss.jsonl",
                                 ckpt_dir=rd.path / "checkpoints")
        final = save_checkpoint(rd.path / "checkpoints" / "final", params, mcfg,
                                card={"stage": stage, "seed": cfg.seed,
                                      "profile": cfg.profile, "steps": steps})
    last = reports[-1].total if reports else float("nan")
    print(f"{stage}: {steps} steps on {count_params(params)} parameters, "
          f"final loss {last:.4f}; checkpoint -> {final}")
    return 0


def cmd_pretrain(args) -> int:
    return _run_training_stage(args, "init")


def cmd_augment(args) -> int:
    return _run_training_stage(args, "augment")


def cmd_backtranslate(args) -> int:
    return _run_training_stage(args, "backtranslate")


def cmd_translate(args) -> int:
    params, mcfg, _ = load_checkpoint(args.ckpt)
    vocab = BpeVocab.load(args.vocab)
    lines = [l for l in Path(args.infile).read_text(encoding="utf-8").splitlines()
             if l.strip()]
    if not lines:
        raise EmptyCorpus(f"no programs in {args.infile}")
    outputs = translate_snippets(params, mcfg, vocab, lines, args.src_lang,
                                 args.tgt_lang, beam=args.beam)
    rendered = [" ".join(out.split()) for out in outputs]
    text = "\n".join(rendered) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {len(rendered)} translations to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_cfg(args)
    params, mcfg, _ = load_checkpoint(args.ckpt)
    vocab = BpeVocab.load(args.vocab)
    eval_set = read_jsonl(args.eval_set)
    ecfg = cfg.eval if args.beam is None else replace(cfg.eval, beam=args.beam)
    report = evaluate_pair(params, mcfg, vocab, eval_set, ecfg)
    print(format_report_table([report]))
    if args.report_out:
        Path(args.report_out).write_text(json.dumps(report.to_json(), indent=1,
                                                    sort_keys=True), encoding="utf-8")
    if args.min_ca is not None and report.ca < args.min_ca:
        print(f"threshold missed: CA {report.ca:.2f} < {args.min_ca:.2f}",
              file=sys.stderr)
        return 1
    return 0


def cmd_export_features(args) -> int:
    params, mcfg, _ = load_checkpoint(args.ckpt)
    vocab = BpeVocab.load(args.vocab)
    records = read_jsonl(args.data)
    rows = export_features(params, mcfg, vocab, records, out_path=args.out)
    print(f"exported {len(rows)} vectors of width {mcfg.d_model} to {args.out}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_cfg(args)
    vocab = BpeVocab.load(args.vocab)
    mcfg = replace(cfg.model, vocab_size=len(vocab.id_to_token))
    data = _load_prepared(args.corpus, vocab, mcfg.max_len)
    eval_set = read_jsonl(args.eval_set)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip() != ""]
    if not seeds:
        raise ValueError("--seeds must name at least one seed")
    roster = _roster(args)

    def steps(flag, stage):
        return flag if flag is not None else cfg.train.default_steps(stage)

    plan = StagePlan(
        init=cfg.train.stage_config("init", cfg.seed, steps(args.init_steps, "init"),
                                    roster),
        augment=cfg.train.stage_config("augment", cfg.seed,
                                       steps(args.augment_steps, "augment"), roster),
        backtranslate=cfg.train.stage_config("backtranslate", cfg.seed,
                                             steps(args.bt_steps, "backtranslate"),
                                             roster),
    )
    with RunDir(args.run_dir) as rd:
        _echo_run_state(rd, cfg, "ablate", {
            "vocab": str(args.vocab), "corpus": [str(p) for p in args.corpus],
            "eval_set": str(args.eval_set), "seeds": seeds,
        })
        report = ablation_report(mcfg, plan, data, vocab, eval_set, seeds, cfg.eval)
        rd.write_json("ablation.json", report)
    print(format_ablation_table(report))
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_size_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--max-stmts", type=int, default=6)
    p.add_argument("--max-expr-depth", type=int, default=3)
    p.add_argument("--max-params", type=int, default=3)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--profile", choices=sorted(PROFILES),
                   help="base defaults (desk is the tested default)")
    p.add_argument("--seed", type=int, help="master seed override")
    p.add_argument("--sigma", type=int, help="attention-mask distance threshold")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="dotted config override, e.g. --set train.lr=0.0005")


def _add_stage_flags(p: argparse.ArgumentParser, needs_ckpt: bool) -> None:
    _add_config_flags(p)
    p.add_argument("--corpus", nargs="+", required=True, help="monolingual JSONL files")
    p.add_argument("--vocab", required=True, help="trained vocabulary JSON")
    if needs_ckpt:
        p.add_argument("--ckpt", required=True, help="checkpoint directory to continue from")
    p.add_argument("--run-dir", required=True, help="output directory for this run")
    p.add_argument("--steps", type=int, help="step budget override")
    p.add_argument("--roster", help="comma-separated training languages")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="synglot",
        description="Unsupervised toy-language translation workbench.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="sample a monolingual corpus")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--lang", required=True, choices=("alpha", "beta", "gamma"))
    p.add_argument("--out", required=True)
    _add_size_flags(p)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("gen-eval", help="sample a parallel eval set with tests")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--src-lang", required=True, choices=("alpha", "beta", "gamma"))
    p.add_argument("--tgt-lang", required=True, choices=("alpha", "beta", "gamma"))
    p.add_argument("--tests-per-fn", type=int, default=4)
    p.add_argument("--out", required=True)
    _add_size_flags(p)
    p.set_defaults(func=cmd_gen_eval)

    p = sub.add_parser("train-bpe", help="train the shared subword vocabulary")
    p.add_argument("--corpus", nargs="+", required=True)
    p.add_argument("--vocab-size", type=int, default=512)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_bpe)

    p = sub.add_parser("pretrain", help="stage 1: masked-prediction + denoising")
    _add_stage_flags(p, needs_ckpt=False)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("augment", help="stage 2: syntax and domain augmentation")
    _add_stage_flags(p, needs_ckpt=True)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("backtranslate", help="stage 3: online back-translation")
    _add_stage_flags(p, needs_ckpt=True)
    p.set_defaults(func=cmd_backtranslate)

    p = sub.add_parser("translate", help="translate one program per input line")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--src-lang", required=True, choices=("alpha", "beta", "gamma"))
    p.add_argument("--tgt-lang", required=True, choices=("alpha", "beta", "gamma"))
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out")
    p.add_argument("--beam", type=int, default=5)
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("evaluate", help="score a checkpoint on an eval set")
    _add_config_flags(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--eval-set", required=True)
    p.add_argument("--beam", type=int)
    p.add_argument("--report-out", help="write the JSON report here")
    p.add_argument("--min-ca", type=float,
                   help="exit nonzero if computational accuracy falls below this")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export-features", help="dump mean-pooled encoder vectors")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--data", required=True, help="JSONL records with id/lang/code")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_features)

    p = sub.add_parser("ablate", help="train and score full/no_domain/no_syntax")
    _add_config_flags(p)
    p.add_argument("--corpus", nargs="+", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--eval-set", required=True)
    p.add_argument("--seeds", default="0", help="comma-separated seeds")
    p.add_argument("--roster", help="comma-separated training languages")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--init-steps", type=int)
    p.add_argument("--augment-steps", type=int)
    p.add_argument("--bt-steps", type=int)
    p.set_defaults(func=cmd_ablate)

    return parser


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 1
    try:
        return args.func(args) or 0
    except (SchemaError, ValueError, ParseError, EmptyCorpus, FileNotFoundError,
            NotADirectoryError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        raise
    except Exception as e:  # anything else is a runtime failure, exit 2
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
