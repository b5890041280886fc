"""The twelve acceptance criteria, one test each.

Every test records a PASS/FAIL line (shown in the pytest summary, or on
stdout when this file is run directly) before asserting.
"""
import math
import time

import numpy as np
import pytest

from desmooth import (Dist, Rng, TruncationRule, Vocab, allowed_epsilon, allowed_eta, allowed_top_k,
                      allowed_top_p, allowed_typical, bound_absolute, bound_relative, detect_repetition,
                      entropy, eta_star, generate, load_dump, load_model, preset, sample_scenario,
                      save_model, smooth, total_variation, train, train_documents, truncate,
                      verify_recovery, write_dump)
from desmooth.analysis import ProfileAccumulator, repetition_runs
from desmooth.corpus import BOS, EOS, build_vocab, encode, pseudo_words, read_documents, \
    synthetic_documents, write_documents
from desmooth.smoothing import SmoothingScenario

import oracles
from acceptance_log import record
from cases import random_dist

V_BIG = 50_000


def _oracle_corpus():
    """1,000 seeded Dists with V in 2..64, each with its own random hyperparameters."""
    gen = np.random.default_rng(2024)
    out = []
    for _ in range(1000):
        V = int(gen.integers(2, 65))
        d = random_dist(gen, V)
        params = dict(k=int(gen.integers(1, V + 1)), top_p=float(gen.uniform(0.05, 1.0)),
                      typical=float(gen.uniform(0.05, 1.0)), eps=float(10 ** gen.uniform(-4, -0.3)),
                      eta_eps=float(10 ** gen.uniform(-4, -0.3)), alpha=float(gen.uniform(0.01, 1.0)))
        out.append((d, params))
    return out


ORACLE_CORPUS = _oracle_corpus()


def _five_sets(d, q):
    return {
        "top_k": allowed_top_k(d, q["k"]),
        "top_p": allowed_top_p(d, q["top_p"]),
        "typical": allowed_typical(d, q["typical"]),
        "epsilon": allowed_epsilon(d, q["eps"]),
        "eta": allowed_eta(d, q["eta_eps"], q["alpha"]),
    }


def _five_refs(p, q):
    return {
        "top_k": oracles.top_k_ref(p, q["k"]),
        "top_p": oracles.top_p_ref(p, q["top_p"]),
        "typical": oracles.typical_ref(p, q["typical"]),
        "epsilon": oracles.epsilon_ref(p, q["eps"]),
        "eta": oracles.eta_ref(p, q["eta_eps"], q["alpha"]),
    }


# --------------------------------------------------------------------------------------------

def test_criterion_01_oracle_equivalence():
    t0 = time.perf_counter()
    mismatches = []
    for i, (d, q) in enumerate(ORACLE_CORPUS):
        got = _five_sets(d, q)
        want = _five_refs(d.probs.tolist(), q)
        mismatches += [(i, k) for k in got if set(got[k].ids.tolist()) != want[k]]
    elapsed = time.perf_counter() - t0
    ok = not mismatches and elapsed < 10
    record(1, "allowed_* == brute force on 1,000 Dists x 5 rules", ok,
           f"{len(mismatches)} mismatches, {elapsed:.2f}s")
    assert not mismatches, mismatches[:10]
    assert elapsed < 10


def test_criterion_02_renormalization_identity():
    worst = 0.0
    for d, q in ORACLE_CORPUS:
        for a in _five_sets(d, q).values():
            worst = max(worst, abs(total_variation(d, truncate(d, a)) - (1 - a.kept_mass)))
    ok = worst <= 1e-9
    record(2, "TV(d, truncate(d, A)) = 1 - Z", ok, f"max error {worst:.2e}")
    assert ok


def test_criterion_03_eta_non_empty_keeps_argmax():
    gen = np.random.default_rng(3)
    failures, n = 0, 0
    for i in range(10_000):
        if i % 500 == 0:
            # near-uniform over 50,000 words
            w = 1 + gen.uniform(-1e-3, 1e-3, V_BIG)
            d = Dist(w / w.sum())
        else:
            d = random_dist(gen, int(gen.integers(2, 65)))
        eps = float(10 ** gen.uniform(-5, -0.3))
        alpha = "auto" if i % 2 else float(gen.uniform(0.01, 1.0))
        a = allowed_eta(d, eps, alpha)
        n += 1
        if a.size == 0 or d.argmax() not in a:
            failures += 1
    fallback = allowed_epsilon(Dist.uniform(V_BIG), 0.0009)
    fallback_ok = set(fallback.ids.tolist()) == {Dist.uniform(V_BIG).argmax()}
    ok = failures == 0 and n == 10_000 and fallback_ok
    record(3, "eta non-empty with argmax; epsilon fallback on uniform-50k", ok,
           f"{failures}/{n} failures, fallback keeps {fallback.ids.tolist()}")
    assert ok


def test_criterion_04_donald_case():
    vocab = Vocab(("Trump",) + tuple(f"name{i}" for i in range(40)))
    d = Dist([0.96] + [0.001] * 40)
    top_p = set(vocab.decode(allowed_top_p(d, 0.95).ids))
    eta = set(vocab.decode(allowed_eta(d, 0.0009).ids))
    ok = top_p == {"Trump"} and eta == set(vocab.tokens)
    record(4, "Donald case: top-p keeps {Trump}, eta keeps all 41", ok,
           f"top-p {len(top_p)}, eta {len(eta)}")
    assert ok


def test_criterion_05_high_entropy_case():
    d = Dist.uniform(V_BIG)
    h_eta = entropy(truncate(d, allowed_eta(d, 0.0009)))
    h_eps = entropy(truncate(d, allowed_epsilon(d, 0.0009)))
    ok = abs(h_eta - math.log(V_BIG)) <= 1e-6 and h_eps == 0.0
    record(5, "uniform-50k: eta keeps log V nats, epsilon keeps 0", ok,
           f"eta {h_eta:.9f} vs {math.log(V_BIG):.9f}, epsilon {h_eps}")
    assert ok


def _psi_counterexample():
    # in-support word 2 sits between eta* and eta* + psi after smoothing
    V = 10
    p = np.zeros(V)
    p[:3] = [0.7, 0.29, 0.01]
    return SmoothingScenario(Dist(p), Dist.uniform(V), 0.9, 0.0, 1.0, 0.9)


def test_criterion_06_recovery_theorem():
    t0 = time.perf_counter()
    root = Rng(6)
    bad = []
    for i in range(200):
        rng = root.child(i)
        g = rng.child(0).generator
        V = int(g.integers(2, 65))
        k = int(g.integers(1, V + 1))
        target = float(g.uniform(0, math.log(k))) if k > 1 else 0.0
        r = verify_recovery(sample_scenario(V, k, target, rng.child(1)))
        if not (r.support_loss_zero and r.minimal):
            bad.append(i)
    elapsed = time.perf_counter() - t0

    s = _psi_counterexample()
    base = verify_recovery(s)
    e, word = eta_star(s), smooth(s).probs[2]
    # every psi that lifts the threshold to or past word 2 must be flagged
    psis = [(word - e) * f for f in (1.0, 1.001, 1.5, 3.0, 10.0)]
    flagged = [not verify_recovery(s, threshold=e + psi).minimal for psi in psis]
    ok = not bad and elapsed < 30 and base.minimal and all(flagged)
    record(6, "200 scenarios recover support minimally; psi-perturbed thresholds flagged", ok,
           f"{200 - len(bad)}/200 true/true in {elapsed:.2f}s, {sum(flagged)}/{len(psis)} psi flagged")
    assert not bad, bad
    assert elapsed < 30
    assert base.minimal and all(flagged)


def test_criterion_07_bounds_hold():
    root = Rng(7)
    worst = -math.inf
    for i in range(1000):
        rng = root.child(i)
        g = rng.child(0).generator
        V = int(g.integers(2, 65))
        k = int(g.integers(1, V + 1))
        target = float(g.uniform(0, math.log(k))) if k > 1 else 0.0
        s = sample_scenario(V, k, target, rng.child(1))
        off = smooth(s).probs[~s.support]
        if off.size:
            worst = max(worst, float(off.max() - min(bound_absolute(s), bound_relative(s))))
    ok = worst <= 1e-12
    record(7, "out-of-support smoothed probability <= min(bounds)", ok, f"max excess {worst:.2e}")
    assert ok


# --- the n-gram corpus used by criteria 8, 9 and 11 -----------------------------------------------

N_TRAIN_DOCS = 10_000


@pytest.fixture(scope="module")
def user_corpus(tmp_path_factory):
    """A synthetic >= 10^6-token corpus written to disk and read back like a user's file."""
    d = tmp_path_factory.mktemp("corpus")
    docs = synthetic_documents(N_TRAIN_DOCS + 500, 7, mean_length=110)
    write_documents(docs[:N_TRAIN_DOCS], d / "train.txt")
    write_documents(docs[N_TRAIN_DOCS:], d / "heldout.txt")
    train_docs = read_documents(d / "train.txt")
    held = read_documents(d / "heldout.txt")
    # a fixed vocabulary covering both splits, like a tokenizer's
    vocab = build_vocab(train_docs + held)
    return train_docs, held, vocab


@pytest.fixture(scope="module")
def five_gram(user_corpus):
    train_docs, _, vocab = user_corpus
    return train_documents(encode(train_docs, vocab), 5, vocab, vocab.id(BOS), vocab.id(EOS),
                           uniform_weight=0.1)


def test_criterion_08_support_exit(user_corpus):
    t0 = time.perf_counter()
    train_docs, _, vocab = user_corpus
    n_tokens = sum(len(d) for d in train_docs)
    m = train_documents(encode(train_docs, vocab), 5, vocab, vocab.id(BOS), vocab.id(EOS),
                        uniform_weight=0.1)
    log_v = math.log(vocab.size)
    root = Rng(8)
    recs = [generate(m, [], 200, None, root.child(i)) for i in range(100)]
    exits = [r for r in recs if r.support_exit_index is not None]
    off_support_bad, reentered = 0, 0
    for r in exits:
        post = r.support_exit_index + 1
        for h, seen in zip(r.per_step_entropy[post:], r.context_seen[post:]):
            if seen:
                continue
            if abs(h - log_v) > 1e-9:
                off_support_bad += 1
        reentered += any(r.context_seen[post:])
    plain = m.with_smoothing(0.0)
    plain_exits = sum(generate(plain, [], 200, None, root.child(i)).support_exit_index is not None
                      for i in range(100))
    elapsed = time.perf_counter() - t0
    ok = (n_tokens >= 10 ** 6 and len(exits) >= 90 and off_support_bad == 0 and plain_exits == 0
          and elapsed < 300)
    record(8, "smoothed 5-gram leaves the support and emits log V noise", ok,
           f"{n_tokens} tokens, {len(exits)}/100 exits, {off_support_bad} off-support steps below log V, "
           f"{reentered} runs re-entered via end-of-text, unsmoothed exits {plain_exits}, {elapsed:.1f}s")
    assert n_tokens >= 10 ** 6
    assert len(exits) >= 90
    assert off_support_bad == 0
    assert plain_exits == 0
    assert elapsed < 300


def test_criterion_09_entropy_profile_shape(five_gram):
    m = five_gram.with_smoothing(0.0)
    rules = {"top_p": TruncationRule.top_p(0.95), "eta": TruncationRule.eta(0.0009),
             "epsilon": TruncationRule.eps(0.0009)}
    accs = {k: ProfileAccumulator(r) for k, r in rules.items()}
    for ctx in sorted(m.iter_contexts()):
        d = m.cond_dist(ctx)
        for acc in accs.values():
            acc.add(d)
    prof = {k: a.result() for k, a in accs.items()}
    lo = {k: p.occupied()[0] for k, p in prof.items()}
    hi = {k: p.occupied()[-1] for k, p in prof.items()}
    same_buckets = len({b.bucket_lo for b in lo.values()}) == 1 and len({b.bucket_lo for b in hi.values()}) == 1
    tv_ok = lo["top_p"].mean_tv > lo["eta"].mean_tv
    ent_ok = hi["epsilon"].mean_retained_entropy < hi["eta"].mean_retained_entropy
    ok = same_buckets and tv_ok and ent_ok
    record(9, "top-p cuts more than eta at low entropy; epsilon keeps less at high entropy", ok,
           f"lowest bucket [{lo['eta'].bucket_lo}, {lo['eta'].bucket_hi}) TV top-p {lo['top_p'].mean_tv:.3g} "
           f"vs eta {lo['eta'].mean_tv:.3g}; highest bucket [{hi['eta'].bucket_lo}, {hi['eta'].bucket_hi}) "
           f"retained epsilon {hi['epsilon'].mean_retained_entropy:.3f} vs eta {hi['eta'].mean_retained_entropy:.3f}")
    assert ok


def _repetition_corpus():
    """A loop 'media proprietor and' whose tail has 40 rare but diverse continuations."""
    gen = np.random.default_rng(10)
    words = pseudo_words(80, 10)
    escapes, filler = words[:40], words[40:70]
    loop = ["media", "proprietor", "and"]
    docs = [loop * 960 + [escapes[0]] + gen.choice(filler, 500).tolist()]
    for w in escapes[1:]:
        docs.append(loop + [w] + gen.choice(filler, 500).tolist())
    prompts = [gen.choice(filler, 5).tolist() + loop for _ in range(20)]
    return docs, prompts


def test_criterion_10_repetition_ordering():
    docs, prompts = _repetition_corpus()
    vocab = build_vocab(docs)
    m = train_documents(encode(docs, vocab), 3, vocab, vocab.id(BOS), vocab.id(EOS))
    tail = m.cond_dist(vocab.ids(["proprietor", "and"]))
    prompt_ids = [vocab.ids(p) for p in prompts]
    rates = {}
    for kind in ("epsilon", "eta", "top_p"):
        runs = repetition_runs(m, prompt_ids, preset("large", kind), Rng(10), 5, 512)
        assert len(runs) == 100
        rates[kind] = sum(r.verdict.is_repetition for r in runs) / len(runs)
    ok = rates["epsilon"] <= rates["eta"] and rates["top_p"] - rates["eta"] >= 0.05
    record(10, "repetition rate epsilon <= eta < top-p by >= 5 points", ok,
           f"p(loop word)={tail.probs.max():.3f}; " + ", ".join(f"{k} {100 * v:.0f}%" for k, v in rates.items()))
    assert ok


def test_criterion_11_repetition_detector(user_corpus, five_gram):
    flagged = []
    for cycle_len, n in ((3, 2), (3, 3), (4, 2), (5, 4)):
        cycle = list(range(cycle_len))
        m = train(cycle * 60, n)
        for seed in range(5):
            rec = generate(m, cycle[: n - 1] if n > 1 else [], 90, None, Rng(seed))
            v = detect_repetition(rec.generated_ids, m.scorer(cycle[: n - 1]))
            flagged.append(v.avg_nll < 0.01 and v.is_repetition)

    _, held, vocab = user_corpus
    text = [t for doc in held for t in vocab.ids(doc) + [vocab.id(EOS)]]
    held_v = detect_repetition(text, five_gram.scorer([]))
    ok = all(flagged) and held_v.avg_nll > 1 and not held_v.is_repetition
    record(11, "cycles score < 0.01 and are flagged; held-out text scores > 1", ok,
           f"{sum(flagged)}/{len(flagged)} cyclic samples flagged, held-out avg NLL {held_v.avg_nll:.3f} "
           f"over {len(text)} tokens")
    assert ok


def test_criterion_12_round_trips(tmp_path):
    gen = np.random.default_rng(12)
    dump_bad = model_bad = 0
    for i in range(100):
        V = int(gen.integers(1, 200))
        recs = [(int(gen.integers(0, 2 ** 32)), random_dist(gen, V)) for _ in range(int(gen.integers(0, 6)))]
        path = tmp_path / "d.tsdd"
        write_dump(path, recs, V)
        back = list(load_dump(path))
        if [c for c, _ in back] != [c for c, _ in recs] or not all(
                np.allclose(a.probs, b.probs, rtol=1e-6, atol=1e-9) for (_, a), (_, b) in zip(recs, back)):
            dump_bad += 1

        n = int(gen.integers(1, 6))
        Vm = int(gen.integers(1, 40))
        toks = gen.integers(0, Vm, size=int(gen.integers(n, 400))).tolist()
        m = train(toks, n, Vocab(tuple(f"w{j}" for j in range(Vm))), uniform_weight=float(gen.uniform(0, 0.5)))
        save_model(m, tmp_path / "m.ngmd")
        m2 = load_model(tmp_path / "m.ngmd")
        same = (m2.order == m.order and m2.vocab == m.vocab and m2.uniform_weight == m.uniform_weight
                and all(m2.cond_dist(c) == m.cond_dist(c) for c in m.iter_contexts())
                and {c: m.context_counts(c) for c in m.iter_contexts()}
                == {c: m2.context_counts(c) for c in m2.iter_contexts()})
        model_bad += not same
    ok = dump_bad == 0 and model_bad == 0
    record(12, "dump and model save/load round-trips", ok,
           f"{100 - dump_bad}/100 dumps, {100 - model_bad}/100 models lossless")
    assert ok


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q"]))
