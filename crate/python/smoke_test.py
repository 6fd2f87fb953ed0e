"""Quick check that the extension imports and its main entry points work."""

import math
import sys
import tempfile

import bcv_bench_py as bcv


def main():
    assert bcv.HORIZONS_MS[0] == 0 and bcv.HORIZONS_MS[-1] == 1000
    assert bcv.classify_command(0.5, 0.0) == "forward"
    assert bcv.classify_command(0.0, -0.5) == "right"
    assert bcv.classify_command(0.1, 0.1) == "stop"
    assert bcv.classify_command(0.5, 0.5) is None

    ms = 1_000_000
    assert bcv.align_nearest([0, 15 * ms, 500 * ms], [10 * ms, 20 * ms]) == [0, 0, None]

    fs = 125.0
    x = [math.sin(2 * math.pi * 50 * i / fs) for i in range(500)]
    y = bcv.filter_signal(x, fs)
    assert max(abs(v) for v in y[125:-125]) < 0.05

    m = bcv.score(["forward", "left", "stop"], ["forward", "left", "left"])
    assert abs(m["accuracy"] - 2 / 3) < 1e-12

    try:
        bcv.RunConfig('{"models": ["eegnet"]}')
    except bcv.ConfigError as e:
        assert "eegnet" in str(e)
    else:
        raise AssertionError("unknown model accepted")

    cfg = bcv.RunConfig()
    cfg.n_sessions = 1
    cfg.horizons_ms = [300]
    cfg.models = ["linear"]
    cfg.epochs = 2
    cfg.duration_s = 60.0
    with tempfile.TemporaryDirectory() as out:
        cfg.out_dir = out
        report = bcv.run_all(cfg)
        f1 = report.macro_f1("linear", 300)
        assert f1 is not None and 0.0 <= f1 <= 1.0
        assert report.metrics_csv().startswith("model,")
        print(report, "linear macro-F1 at 300 ms: %.3f" % f1)

    print("smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
