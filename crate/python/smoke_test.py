"""Exercises the Python bindings end to end.

Build the extension first:

    cargo build --release -p elbert-py --features extension-module
    cp target/release/libelbert_py.so python/elbert_py.so
    python3 python/smoke_test.py
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import elbert_py as eb  # noqa: E402


def encode(texts, vocab, max_body):
    return [[vocab.get(w, 2) for w in eb.preprocess(t).split()][:max_body] for t in texts]


def main():
    assert eb.puzzlement([0.5, 0.5]) == 1.0
    assert eb.puzzlement([1.0, 0.0, 0.0]) == 0.0
    assert abs(eb.puzzlement([0.9, 0.1]) - 0.46899559358928122125) < 1e-12
    w = eb.exit_weights([4.0] * 5)
    assert len(w) == 6 and abs(sum(w) - 6) < 1e-12

    data = eb.synth_dataset(seed=1, n=600, classes=3)
    words = sorted({w for _, t in data for w in eb.preprocess(t).split()})
    vocab = {w: i + 3 for i, w in enumerate(words)}
    model = eb.Model(depth=4, hidden=16, heads=2, ffn=32, vocab=len(vocab) + 3, max_seq_len=12, seed=0)
    ids = encode([t for _, t in data], vocab, model.max_seq_len - 1)
    labels = [label for label, _ in data]
    pairs = list(zip(ids, labels))
    trained, history = eb.train(model, pairs[:480], pairs[480:], learning_rate=3e-3, epochs=4)
    print("history", [(e, round(loss, 4), acc) for e, loss, acc in history])
    assert history[-1][2] > 0.9, history

    policy = eb.ExitPolicy(0.3, window=None)
    pred = trained.forward(ids[0], policy)
    assert 1 <= pred.exit_layer <= trained.depth
    assert len(pred.probs) == pred.exit_layer
    assert all(abs(sum(p) - 1) < 1e-12 for p in pred.probs)

    seq = eb.run_strategy(trained, ids, "case2", policy)
    alg = eb.run_strategy(trained, ids, "alg1", policy, n_slots=16)
    assert seq.predictions == alg.predictions and seq.exit_layers == alg.exit_layers
    assert alg.conserved and sum(alg.occupancy) == sum(alg.exit_layers)

    cmp = eb.compare_strategies(trained, ids, policy, n_slots=16, labels=labels)
    times = {r.strategy: r.sim_time for r in cmp.rows}
    assert times["alg1"] <= times["case4"] <= times["case3"], times
    assert math.isclose(cmp.total_speedup, cmp.early_exit_speedup * cmp.batching_speedup, rel_tol=1e-12)
    for r in cmp.rows:
        print(f"{r.strategy:6} accuracy {r.accuracy:.3f} ratio {r.compute_ratio:.3f} speedup {r.speedup:.2f}")

    scripted = eb.compare_scripted(24, [1, 5, 24, 3] * 50, n_slots=32)
    assert all(run.conserved for run in scripted.runs)

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "m.bin")
        trained.save(path)
        back = eb.Model.load(path)
        assert back.forward(ids[1]).probs == trained.forward(ids[1]).probs

    try:
        eb.ExitPolicy(1.5)
    except ValueError:
        pass
    else:
        raise AssertionError("delta outside [0, 1] accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
