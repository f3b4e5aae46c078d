import pytest

from edacs.cli import main, read_manifest
from edacs.coherence import coherence_params
from edacs.signals import build_impulse_response, read_signal_csv
from edacs.synth import relative_error


def files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--out-dir", str(out), "--seed", "4"]) == 0
    return out


def test_decompose_round_trip(simulated, tmp_path):
    rc = main(["decompose", "--input", str(simulated / "signal.csv"), "--eta", "0.0105",
               "--out-dir", str(tmp_path)])
    assert rc == 0
    for name in ("events.csv", "baseline_diff.csv", "scr_signal.csv", "diagnostics.txt",
                 "decomposition.png", "run-manifest.txt"):
        assert (tmp_path / name).exists()
    x_true = read_signal_csv(simulated / "x_true.csv", 4.0).samples
    x_hat = read_signal_csv(tmp_path / "events.csv", 4.0).samples
    assert relative_error(x_true, x_hat) < 0.05
    diag = dict(line.split("=", 1) for line in (tmp_path / "diagnostics.txt").read_text().splitlines())
    assert diag["converged"] == "True"


def test_unconverged_exit_code(simulated, tmp_path):
    rc = main(["decompose", "--input", str(simulated / "signal.csv"), "--eta", "0.0105",
               "--max-iters", "2", "--no-figures", "--out-dir", str(tmp_path)])
    assert rc == 2
    assert (tmp_path / "events.csv").exists()


def test_missing_flag(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["decompose", "--out-dir", str(tmp_path)])
    assert exc.value.code == 1
    assert "usage" in capsys.readouterr().err


def test_empty_input(tmp_path, capsys):
    (tmp_path / "empty.csv").write_text("")
    assert main(["decompose", "--input", str(tmp_path / "empty.csv"), "--out-dir", str(tmp_path / "o")]) == 1
    assert "error" in capsys.readouterr().err


def test_missing_file(tmp_path):
    assert main(["decompose", "--input", str(tmp_path / "nope.csv"), "--out-dir", str(tmp_path)]) == 1


def test_no_subcommand():
    assert main([]) == 1


def test_coherence_matches_library(tmp_path):
    assert main(["coherence", "--out-dir", str(tmp_path)]) == 0
    rec = dict(line.split("=", 1) for line in (tmp_path / "coherence.txt").read_text().splitlines())
    rep = coherence_params(build_impulse_response(), 240).as_dict()
    for key, value in rep.items():
        assert rec[key] == (repr(value) if isinstance(value, float) else str(value))


def test_phase_diagram_default_grid_shape(tmp_path, monkeypatch):
    # the desk defaults give 20 cells; trials reduced to keep the test quick
    assert main(["phase-diagram", "--trials", "1", "--no-figures", "--out-dir", str(tmp_path)]) in (0, 2)
    lines = (tmp_path / "phase_diagram.csv").read_text().splitlines()
    assert len(lines) == 21


def test_manifest_replay_bit_identical(tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    args = ["phase-diagram", "--s-values", "3,6", "--c-values", "2", "--trials", "2", "--T", "60",
            "--seed", "17", "--out-dir", str(first)]
    assert main(args) == 0
    rec = read_manifest(first / "run-manifest.txt")
    assert rec["seed"] == "17" and rec["s_values"] == "3,6"
    assert main(["--from-manifest", str(first / "run-manifest.txt"), "--out-dir", str(second)]) == 0
    a, b = files(first), files(second)
    a.pop("run-manifest.txt"), b.pop("run-manifest.txt")
    assert a == b


def test_manifest_override(tmp_path):
    assert main(["coherence", "--T", "30", "--out-dir", str(tmp_path / "a")]) == 0
    assert main(["--from-manifest", str(tmp_path / "a" / "run-manifest.txt"), "coherence", "--T", "31",
                 "--out-dir", str(tmp_path / "b")]) == 0
    assert "T=31" in (tmp_path / "b" / "coherence.txt").read_text()


def test_manifest_wrong_subcommand(tmp_path):
    assert main(["coherence", "--T", "30", "--out-dir", str(tmp_path)]) == 0
    assert main(["--from-manifest", str(tmp_path / "run-manifest.txt"), "simulate"]) == 1


def test_pipeline(tmp_path):
    corpus, ev = tmp_path / "corpus", tmp_path / "ev"
    assert main(["simulate", "--corpus", "3", "--seed", "2", "--out-dir", str(corpus)]) == 0
    signals = sorted(str(p) for p in corpus.glob("signal_*.csv"))
    clips = sorted(str(p) for p in corpus.glob("clips_*.csv"))
    rc = main(["evaluate", "--signals", *signals, "--clips", *clips, "--eta", "0.0105", "--out-dir", str(ev)])
    assert rc == 0
    summary = dict(line.split("=", 1) for line in (ev / "auc.txt").read_text().splitlines())
    assert float(summary["auc_unconstrained"]) >= 0.95 and float(summary["auc_nonneg"]) >= 0.95
    assert (ev / "roc.png").exists() and (ev / "roc_nonneg.csv").exists()
    replay = tmp_path / "ev2"
    assert main(["--from-manifest", str(ev / "run-manifest.txt"), "--out-dir", str(replay)]) == 0
    a, b = files(ev), files(replay)
    a.pop("run-manifest.txt"), b.pop("run-manifest.txt")
    assert a == b


def test_clip_count_mismatch(tmp_path):
    corpus = tmp_path / "corpus"
    assert main(["simulate", "--corpus", "3", "--out-dir", str(corpus)]) == 0
    signals = sorted(str(p) for p in corpus.glob("signal_*.csv"))
    clips = sorted(str(p) for p in corpus.glob("clips_*.csv"))[:2]
    assert main(["evaluate", "--signals", *signals, "--clips", *clips, "--out-dir", str(tmp_path / "e")]) == 1
