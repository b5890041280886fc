"""Command-line entry point: ``desmooth <subcommand> ...``.

Tabular output is CSV on stdout (or ``--out``). Each table starts with a
``#schema=<name>/<version>`` line, then ``#key=value`` metadata lines, then a header row.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import analysis, corpus, formats, smoothing
from ._parallel import parallel_map
from .dist import Dist, Rng, Vocab, entropy
from .ngram import generate, train_documents
from .presets import MODEL_TAGS, preset
from .truncation import TruncationRule, allowed, canonical_kind, truncate

SCHEMA_VERSION = 1


class CliError(Exception):
    pass


# --------------------------------------------------------------------------
# helpers


@contextmanager
def _output(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w", newline="", encoding="utf-8") as f:
            yield f


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return ""
    return v


def emit(rows, header, schema, out=None, meta=()):
    with _output(out) as f:
        f.write(f"#schema={schema}/{SCHEMA_VERSION}\n")
        for key, value in meta:
            f.write(f"#{key}={_fmt(value)}\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def parse_rule_spec(spec: str) -> TruncationRule:
    """``kind=value`` or ``kind=value:alpha`` (eta only)."""
    if "=" not in spec:
        raise CliError(f"rule {spec!r} must look like kind=value")
    kind, value = spec.split("=", 1)
    kind = canonical_kind(kind)
    if kind == "eta" and ":" in value:
        eps, alpha = value.split(":", 1)
        return TruncationRule.eta(float(eps), float(alpha))
    return TruncationRule.from_param(kind, float(value))


def rule_from_args(args, required=True):
    if getattr(args, "rule", None) is None:
        if required:
            raise CliError("--rule is required")
        return None
    if args.rule in ("none", "raw"):
        return None
    if "=" in args.rule:
        return parse_rule_spec(args.rule)
    kind = canonical_kind(args.rule)
    if args.param is not None:
        if kind == "eta" and getattr(args, "alpha", None) is not None:
            return TruncationRule.eta(args.param, args.alpha)
        return TruncationRule.from_param(kind, args.param)
    if args.preset is not None:
        return preset(args.preset, kind)
    raise CliError(f"--rule {args.rule} needs --param or --preset")


def rules_from_args(args):
    rules = []
    for spec in args.rules or ():
        rules.append(parse_rule_spec(spec) if "=" in spec else preset(args.preset or "large", spec))
    if getattr(args, "rule", None) is not None:
        r = rule_from_args(args)
        if r is not None:
            rules.append(r)
    return rules


def parse_buckets(text: str):
    if ":" in text:
        lo, hi, step = (float(x) for x in text.split(":"))
        n = int(round((hi - lo) / step))
        return [round(lo + i * step, 12) for i in range(n + 1)]
    return [float(x) for x in text.split(",")]


def _add_rule_flags(p, required=False):
    p.add_argument("--rule", required=required,
                   help="rule kind (top_k, top_p, typical, epsilon, eta, none) or kind=value")
    p.add_argument("--param", type=float, help="the rule's hyperparameter")
    p.add_argument("--alpha", type=float, help="eta only: alpha (default sqrt(epsilon))")
    p.add_argument("--preset", choices=MODEL_TAGS, help="take the hyperparameter from a preset")


# --------------------------------------------------------------------------
# subcommands


def cmd_truncate(args):
    rule = rule_from_args(args)
    rows = []
    for cid, d in formats.load_dump(args.dump):
        a = allowed(d, rule)
        post = truncate(d, a)
        rows.append((cid, a.size, a.kept_mass, entropy(post)))
    emit(rows, ["context_id", "allowed_size", "kept_mass", "post_entropy"], "truncate",
         args.out, meta=[("rule", rule.label if rule else "none")])


def cmd_ngram_train(args):
    docs = corpus.read_documents(args.corpus)
    if not docs:
        raise CliError(f"{args.corpus}: no text")
    vocab = corpus.build_vocab(docs)
    ids = corpus.encode(docs, vocab)
    model = train_documents(ids, args.order, vocab, vocab.id(corpus.BOS), vocab.id(corpus.EOS),
                            uniform_weight=args.smooth)
    formats.save_model(model, args.model_out)
    n_tokens = sum(len(d) for d in docs)
    print(f"trained order-{args.order} model: {len(docs)} documents, {n_tokens} tokens, "
          f"V={vocab.size}, {model.num_contexts} contexts -> {args.model_out}", file=sys.stderr)


def _load_model(args):
    model = formats.load_model(args.model)
    if getattr(args, "smooth", None) is not None:
        model = model.with_smoothing(args.smooth)
    return model


def _prompt_ids(model, text):
    words = text.split()
    try:
        return model.vocab.ids(words)
    except KeyError as e:
        raise CliError(f"prompt: {e.args[0]}") from None


def cmd_ngram_gen(args):
    model = _load_model(args)
    rule = rule_from_args(args, required=False)
    text = Path(args.prompt_file).read_text(encoding="utf-8") if args.prompt_file else (args.prompt or "")
    prompt = _prompt_ids(model, text)
    rec = generate(model, prompt, args.steps, rule, Rng(args.seed))
    words = model.vocab.decode(rec.generated_ids)
    rows = [(i, t, model.vocab.token(t), h, seen)
            for i, (t, h, seen) in enumerate(zip(rec.generated_ids, rec.per_step_entropy, rec.context_seen))]
    meta = [("rule", rule.label if rule else "none"), ("seed", args.seed),
            ("support_exit_index", "" if rec.support_exit_index is None else rec.support_exit_index),
            ("status", rec.status), ("text", " ".join(words))]
    emit(rows, ["step", "token_id", "token", "entropy", "context_seen"], "ngram-gen", args.out, meta)
    if args.text_out:
        Path(args.text_out).write_text(" ".join(words) + "\n", encoding="utf-8")


def _model_dists(model, limit):
    for i, ctx in enumerate(sorted(model.iter_contexts())):
        if limit is not None and i >= limit:
            return
        yield model.cond_dist(ctx)


def cmd_entropy_profile(args):
    rules = rules_from_args(args)
    if not rules:
        raise CliError("give at least one rule via --rule or --rules")
    edges = parse_buckets(args.buckets)
    if args.dump:
        dists = [d for _, d in formats.load_dump(args.dump)]
    elif args.model:
        dists = list(_model_dists(_load_model(args), args.max_contexts))
    else:
        raise CliError("need --dump or --model")
    rows, overflow = [], {}
    for rule in rules:
        prof = analysis.entropy_profile_sharded(dists, rule, edges)
        overflow[rule.label] = prof.overflow
        for b in prof:
            rows.append((rule.label, b.bucket_lo, b.bucket_hi, b.count, b.mean_tv, b.mean_retained_entropy))
    meta = [("distributions", len(dists))] + [(f"overflow[{k}]", v) for k, v in overflow.items()]
    emit(rows, ["rule", "bucket_lo", "bucket_hi", "count", "mean_tv", "mean_retained_entropy"],
         "entropy-profile", args.out, meta)


def cmd_repetition(args):
    model = _load_model(args)
    rule = rule_from_args(args, required=False)
    lines = [ln for ln in Path(args.prompts).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines:
        raise CliError(f"{args.prompts}: no prompts")
    prompts = [_prompt_ids(model, ln) for ln in lines]
    runs = analysis.repetition_runs(model, prompts, rule, Rng(args.seed), args.completions,
                                    args.max_steps, threshold=args.threshold)
    rows = [(r.prompt_index, r.completion_index, r.length, r.status, r.verdict.avg_nll,
             r.verdict.is_repetition) for r in runs]
    rate = sum(r.verdict.is_repetition for r in runs) / len(runs)
    emit(rows, ["prompt", "completion", "length", "status", "avg_nll", "is_repetition"], "repetition",
         args.out, meta=[("rule", rule.label if rule else "none"), ("seed", args.seed),
                         ("repetition_rate", rate)])


def load_cases(path) -> list:
    """Checklist cases from JSON: ``{"cases": [{name, tokens?, probs | dump+record, expected?}]}``."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    items = raw["cases"] if isinstance(raw, dict) else raw
    cases = []
    for item in items:
        if "probs" in item:
            d = Dist(item["probs"])
        elif "dump" in item:
            want = int(item.get("record", 0))
            base = Path(path).parent / item["dump"]
            found = [d for i, (_, d) in enumerate(formats.load_dump(base)) if i == want]
            if not found:
                raise CliError(f"case {item.get('name')!r}: dump has no record {want}")
            d = found[0]
        else:
            raise CliError(f"case {item.get('name')!r} needs probs or dump")
        vocab = Vocab(tuple(item["tokens"])) if "tokens" in item else None
        rules = tuple(parse_rule_spec(s) for s in item.get("rules", ()))
        cases.append(analysis.ChecklistCase(item["name"], d, vocab, rules, item.get("expected", {})))
    return cases


def cmd_checklist(args):
    cases = load_cases(args.cases) if args.cases else analysis.builtin_cases()
    rules = rules_from_args(args)
    if not rules:
        rules = [preset(args.preset or "large", k) for k in ("top_p", "epsilon", "eta")]
    rows = analysis.run_checklist(cases, rules, args.print_threshold)
    out = [(r.case, r.rule, r.size, r.kept_mass, " ".join(r.members),
            "" if r.passed is None else ("pass" if r.passed else "fail"), "; ".join(r.failures))
           for r in rows]
    emit(out, ["case", "rule", "allowed_size", "kept_mass", "members", "expectation", "failures"],
         "checklist", args.out)
    if args.strict and any(r.passed is False for r in rows):
        return 1


def cmd_smoothing_verify(args):
    root = Rng(args.seed)

    def one(i):
        rng = root.child(i)
        g = rng.child(0).generator
        k = int(g.integers(1, args.vocab + 1))
        target = float(g.uniform(0, math.log(k))) if k > 1 else 0.0
        s = smoothing.sample_scenario(args.vocab, k, target, rng.child(1))
        rep = smoothing.verify_recovery(s)
        return (i, args.vocab, k, entropy(s.p_star), s.lam, s.delta, s.alpha, s.lambda_bar,
                rep.threshold, rep.kept, rep.support_loss_zero, rep.minimal)

    rows = parallel_map(one, range(args.scenarios))
    emit(rows, ["scenario", "vocab", "support_size", "true_entropy", "lambda", "delta", "alpha",
                "lambda_bar", "eta_star", "kept", "support_loss_zero", "minimal"],
         "smoothing-verify", args.out)
    if not all(r[-1] and r[-2] for r in rows):
        return 1


def cmd_synth_corpus(args):
    docs = corpus.synthetic_documents(args.docs, args.seed, vocab_words=args.words,
                                      mean_length=args.mean_length)
    corpus.write_documents(docs, args.out)
    print(f"wrote {len(docs)} documents, {sum(map(len, docs))} tokens -> {args.out}", file=sys.stderr)


def cmd_ngram_dump(args):
    model = _load_model(args)
    records = [(i, d) for i, d in enumerate(_model_dists(model, args.max_contexts))]
    formats.write_dump(args.out, records, model.vocab_size)
    print(f"wrote {len(records)} records -> {args.out}", file=sys.stderr)


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="desmooth", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("truncate", help="allowed-set statistics for every record of a dump")
    _add_rule_flags(p, required=True)
    p.add_argument("--dump", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_truncate)

    p = sub.add_parser("ngram-train", help="train an n-gram model on a text corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--order", type=int, default=5)
    p.add_argument("--smooth", type=float, default=0.0, help="uniform mixture weight")
    p.add_argument("--model-out", required=True)
    p.set_defaults(func=cmd_ngram_train)

    p = sub.add_parser("ngram-gen", help="sample from an n-gram model, tracking support exits")
    p.add_argument("--model", required=True)
    p.add_argument("--prompt", default="")
    p.add_argument("--prompt-file")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--smooth", type=float, help="override the model's uniform weight")
    _add_rule_flags(p)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out")
    p.add_argument("--text-out")
    p.set_defaults(func=cmd_ngram_gen)

    p = sub.add_parser("entropy-profile", help="truncation and retained entropy by entropy bucket")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--dump")
    src.add_argument("--model")
    p.add_argument("--smooth", type=float)
    p.add_argument("--max-contexts", type=int)
    _add_rule_flags(p)
    p.add_argument("--rules", nargs="+", help="kind=value specs, or bare kinds taken from --preset")
    p.add_argument("--buckets", default="0:8:0.25", help="lo:hi:step or comma-separated edges")
    p.add_argument("--out")
    p.set_defaults(func=cmd_entropy_profile)

    p = sub.add_parser("repetition", help="adversarial repetition experiment")
    p.add_argument("--model", required=True)
    p.add_argument("--prompts", required=True, help="one prompt per line")
    p.add_argument("--smooth", type=float)
    _add_rule_flags(p)
    p.add_argument("--completions", type=int, default=5)
    p.add_argument("--max-steps", type=int, default=512)
    p.add_argument("--threshold", type=float, default=1.0)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_repetition)

    p = sub.add_parser("checklist", help="run the truncation unit battery")
    p.add_argument("--cases", help="JSON case file (default: built-in cases)")
    p.add_argument("--rules", nargs="+")
    p.add_argument("--preset", choices=MODEL_TAGS)
    p.add_argument("--print-threshold", type=float, default=0.01)
    p.add_argument("--strict", action="store_true", help="exit 1 if any expectation fails")
    p.add_argument("--out")
    p.set_defaults(func=cmd_checklist, rule=None)

    p = sub.add_parser("smoothing-verify", help="check eta* recovery on random smoothing scenarios")
    p.add_argument("--scenarios", type=int, default=200)
    p.add_argument("--vocab", type=int, default=64)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_smoothing_verify)

    p = sub.add_parser("synth-corpus", help="write a seeded synthetic text corpus")
    p.add_argument("--docs", type=int, default=10_000)
    p.add_argument("--words", type=int, default=3000)
    p.add_argument("--mean-length", type=int, default=100)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_corpus)

    p = sub.add_parser("ngram-dump", help="export model conditionals as a distribution dump")
    p.add_argument("--model", required=True)
    p.add_argument("--smooth", type=float)
    p.add_argument("--max-contexts", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ngram_dump)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        code = args.func(args) or 0
        sys.stdout.flush()
        return code
    except BrokenPipeError:
        # reader went away (e.g. `| head`); silence the flush at exit too
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 1
    except (CliError, ValueError, KeyError, OSError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"desmooth {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
