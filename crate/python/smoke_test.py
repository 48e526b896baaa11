"""Smoke test of the `polymer` extension module.

Imports an installed module when there is one; otherwise builds the cdylib
with cargo and loads it from a temporary directory.
"""

import importlib
import json
import math
import os
import shutil
import subprocess
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def load():
    try:
        return importlib.import_module("polymer")
    except ImportError:
        pass
    subprocess.run(
        ["cargo", "build", "--release", "-p", "polymer-py", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    lib = os.path.join(ROOT, "target", "release", "libpolymer.so")
    tmp = tempfile.mkdtemp()
    shutil.copy(lib, os.path.join(tmp, "polymer.so"))
    sys.path.insert(0, tmp)
    return importlib.import_module("polymer")


def main():
    pm = load()
    value, lo, hi, tail = pm.alpha_d(3, 300)
    assert lo <= value <= hi and tail > 0, (value, lo, hi)
    assert abs(value - 0.516386) < 2e-3, value

    b, b_lo, b_hi = pm.beta_star(3)
    assert b_lo <= b <= b_hi and abs(b - 1 / math.sqrt(1 + value)) < 1e-12

    assert abs(pm.lambda_beta(0.5) - 1 / 3) < 1e-15
    assert math.isinf(pm.second_moment_limit(1.2, value))

    assert pm.kernel_q(3, [1, 1, 0]) == 0.0
    assert abs(pm.kernel_q(2, [0, 0, 0]) - 1 / 6) < 1e-15
    p = pm.p_continuous(1.0, [0, 0, 0])
    assert abs(p - math.exp(-1.0) * sum(pm.kernel_q(n, [0, 0, 0]) / math.factorial(n) for n in range(0, 30, 2))) < 1e-12

    mean, se = pm.mean_z(0.2, 1.0, 200, 20)
    assert abs(mean - 1) <= 4 * se + 1e-12, (mean, se)

    with tempfile.TemporaryDirectory() as out:
        passed, path = pm.run("transition", "mass", {"n_max": "40", "out": out, "timing": "false"})
        assert passed
        with open(path) as f:
            rep = json.load(f)
        assert rep["status"] == "pass" and rep["records"]

        try:
            pm.run("constants", None, {"no_such_key": "1"})
        except ValueError:
            pass
        else:
            raise AssertionError("unknown key accepted")

    print("python smoke test passed (polymer %s)" % pm.__version__)


if __name__ == "__main__":
    main()
