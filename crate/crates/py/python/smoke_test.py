"""Smoke test for the ctxlearn_py extension.

Build and install first:  pip install -e crates/py --no-build-isolation
"""

import csv
import io

import ctxlearn_py as cl


def test_task_names():
    names = cl.task_names()
    assert names[:6] == ["DelayPro", "DelayAnti", "MemoryPro", "MemoryAnti", "DMPro", "DMAnti"]


def test_generate_trial_is_deterministic():
    a = cl.generate_trial("MemoryAnti", seed=3, index=7)
    b = cl.generate_trial("MemoryAnti", seed=3, index=7)
    assert a == b
    inputs, targets, epochs, x = a
    assert len(inputs) == len(targets) == len(epochs)
    assert all(len(s) == 5 for s in inputs)
    assert all(len(y) == 3 for y in targets)
    assert 0 <= x


def test_smoke_continual_run():
    text = cl.run_experiment("continual", learner="context_rnn", preset="smoke")
    lines = text.splitlines()
    assert lines[0] == "# ctxlearn-metrics v1"
    rows = list(csv.DictReader(io.StringIO("\n".join(lines[1:]))))
    assert rows
    steps = [int(r["global_step"]) for r in rows]
    assert steps == sorted(steps)


def test_bad_config_raises_value_error():
    try:
        cl.run_experiment("continual", overrides="no_such_key = 1")
    except ValueError:
        return
    raise AssertionError("expected ValueError")


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_"):
            fn()
            print("ok", name)
