import hashlib
import re

import numpy as np
import pytest

from pdd_forge import checkpoint as ckpt
from pdd_forge.cli import build_parser, run

VERBS = ["make-corpus", "featurize", "train-teacher", "distill", "synthesize", "evaluate", "bench", "inspect-ckpt"]
SMALL_TEACHER = ["--teacher-steps", "2", "--batch-size", "1", "--teacher-clip-len", "400", "--checkpoint-every", "0"]
SMALL_DISTILL = ["--steps-warmup", "2", "--steps-disc", "1", "--steps-joint", "2", "--batch-size", "1", "--clip-len", "400"]


@pytest.fixture(autouse=True)
def quiet(monkeypatch):
    monkeypatch.setenv("PDD_FORGE_LOG", "error")


def _tree_digest(root):
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Corpus, teacher and a tiny KLAXAD student produced through the CLI."""
    root = tmp_path_factory.mktemp("cli")
    mp = pytest.MonkeyPatch()
    mp.setenv("PDD_FORGE_LOG", "error")
    corpus = root / "corpus"
    assert run(["make-corpus", "--out-dir", str(corpus), "--n-utts", "5", "--duration", "0.5", "--seed", "3"]) == 0
    manifest = corpus / "manifest.tsv"
    assert run(["train-teacher", "--manifest", str(manifest), "--out-dir", str(root / "t"), *SMALL_TEACHER]) == 0
    args = ["distill", "--teacher", str(root / "t" / "teacher.pddf"), "--manifest", str(manifest)]
    assert run([*args, "--out-dir", str(root / "s"), "--preset", "KLAXAD", *SMALL_DISTILL, "--checkpoint-every", "0"]) == 0
    mp.undo()
    return {"root": root, "corpus": corpus, "manifest": manifest, "teacher": root / "t" / "teacher.pddf", "student": root / "s" / "student.pddf"}


class TestHelp:
    def test_every_flag_lists_type_and_default(self):
        parser = build_parser()
        sub = next(a for a in parser._actions if a.dest == "verb")
        assert sorted(sub.choices) == sorted(VERBS)
        for name, p in sub.choices.items():
            for action in p._actions:
                if action.dest == "help":
                    continue
                assert re.search(r"\(type: [^,]+, default: .+\)$", action.help), (name, action.dest)

    @pytest.mark.parametrize("verb", VERBS)
    def test_help_exits_zero(self, verb, capsys):
        assert run([verb, "--help"]) == 0
        assert "default:" in capsys.readouterr().out


class TestUsageErrors:
    def test_synthesize_needs_checkpoint(self, tmp_path, capsys):
        assert run(["synthesize", "--wav", str(tmp_path / "a.wav")]) == 1
        assert "--checkpoint" in capsys.readouterr().err

    def test_unknown_verb(self):
        assert run(["frobnicate"]) == 1

    def test_unknown_preset_lists_names(self, pipeline, capsys):
        code = run(["distill", "--teacher", str(pipeline["teacher"]), "--manifest", str(pipeline["manifest"]), "--preset", "KL", "--dry-run"])
        assert code == 1
        assert "AX, AXAD, KLAX, KLAXAD, KLAXAD*" in capsys.readouterr().err

    def test_bad_log_level(self, monkeypatch):
        monkeypatch.setenv("PDD_FORGE_LOG", "loud")
        assert run(["inspect-ckpt", "x"]) == 1

    def test_missing_manifest(self, tmp_path):
        assert run(["featurize", "--manifest", str(tmp_path / "none.tsv"), "--out-dir", str(tmp_path)]) == 1
        assert not (tmp_path / "features.pddf").exists()

    def test_bad_lengths(self, pipeline):
        assert run(["bench", "--student", str(pipeline["student"]), "--teacher", str(pipeline["teacher"]), "--lengths", "10,x"]) == 1

    def test_bad_corpus_size(self, tmp_path):
        assert run(["make-corpus", "--n-utts", "0", "--out-dir", str(tmp_path / "c")]) == 1
        assert not (tmp_path / "c").exists()


class TestRuntimeErrors:
    def test_corrupt_checkpoint(self, tmp_path, capsys):
        (tmp_path / "bad.pddf").write_bytes(b"garbage")
        assert run(["inspect-ckpt", str(tmp_path / "bad.pddf")]) == 2
        assert "magic" in capsys.readouterr().err

    def test_synthesize_with_corrupt_checkpoint(self, pipeline, tmp_path):
        (tmp_path / "bad.pddf").write_bytes(b"PDDF\x01\x00\x00\x00\x05")
        wav = pipeline["corpus"] / "wav" / "utt000.wav"
        assert run(["synthesize", "--checkpoint", str(tmp_path / "bad.pddf"), "--wav", str(wav), "--out-dir", str(tmp_path)]) == 2


class TestPresets:
    @pytest.mark.parametrize(
        "preset, expect",
        [("KLAXAD", "lambda_kld=0.03 lambda_aux=0.32 lambda_adv=0.65"), ("klaxad*", "lambda_kld=0.0 lambda_aux=0.33 lambda_adv=0.67"), ("ax", "lambda_kld=0.0 lambda_aux=1.0 lambda_adv=0.0")],
    )
    def test_dry_run_resolution(self, pipeline, preset, expect, capsys):
        code = run(["distill", "--teacher", str(pipeline["teacher"]), "--manifest", str(pipeline["manifest"]), "--preset", preset, "--dry-run"])
        assert code == 0
        assert expect in capsys.readouterr().out

    def test_flags_override_config_file(self, pipeline, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(f"preset = AX\ncorpus_manifest = {pipeline['manifest']}\n")
        base = ["distill", "--teacher", str(pipeline["teacher"]), "--config", str(cfg), "--dry-run"]
        assert run(base) == 0
        assert "preset AX:" in capsys.readouterr().out
        assert run([*base, "--preset", "KLAX"]) == 0
        assert "lambda_kld=0.09 lambda_aux=0.91" in capsys.readouterr().out


class TestPipeline:
    def test_corpus_layout(self, pipeline):
        lines = pipeline["manifest"].read_text().splitlines()
        assert len(lines) == 5
        assert len(list((pipeline["corpus"] / "wav").glob("*.wav"))) == 5

    def test_student_checkpoint_contents(self, pipeline):
        names = list(ckpt.load(pipeline["student"]))
        assert any(n.startswith("student.") for n in names)
        assert any(n.startswith("disc.") for n in names)
        log = (pipeline["root"] / "s" / "loss_log.csv").read_text().splitlines()
        assert len(log) == 1 + 5

    def test_inputs_untouched_and_outputs_confined(self, pipeline, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        before = _tree_digest(pipeline["root"])
        out = tmp_path / "out"
        wav = pipeline["corpus"] / "wav" / "utt000.wav"
        for argv in (
            ["featurize", "--manifest", str(pipeline["manifest"]), "--out-dir", str(out / "f")],
            ["synthesize", "--checkpoint", str(pipeline["student"]), "--wav", str(wav), "--out-dir", str(out / "y")],
            ["synthesize", "--model", "teacher", "--checkpoint", str(pipeline["teacher"]), "--wav", str(wav), "--max-seconds", "0.05", "--out-dir", str(out / "y")],
            ["evaluate", "--student", str(pipeline["student"]), "--teacher", str(pipeline["teacher"]), "--manifest", str(pipeline["manifest"]), "--out-dir", str(out / "e")],
            ["bench", "--student", str(pipeline["student"]), "--teacher", str(pipeline["teacher"]), "--lengths", "50,100", "--out-dir", str(out / "b")],
        ):
            assert run(argv) == 0, argv
        assert _tree_digest(pipeline["root"]) == before
        assert sorted(p.name for p in tmp_path.iterdir()) == ["out"]
        produced = sorted(str(p.relative_to(out)) for p in out.rglob("*") if p.is_file())
        assert produced == ["b/bench.csv", "e/metrics.csv", "f/features.csv", "f/features.pddf", "y/utt000_student.wav", "y/utt000_teacher.wav"]

    def test_inspect_prints_names_shapes_checksums(self, pipeline, capsys):
        assert run(["inspect-ckpt", str(pipeline["teacher"])]) == 0
        lines = capsys.readouterr().out.splitlines()
        arrays = ckpt.load(pipeline["teacher"])
        assert len(lines) == len(arrays)
        for line, (name, arr) in zip(lines, arrays.items()):
            n, shape, digest = line.split("\t")
            assert n == name
            assert shape == ("x".join(map(str, arr.shape)) or "scalar")
            assert digest == ckpt.checksum(arr)

    def test_synthesis_is_seeded(self, pipeline, tmp_path):
        from pdd_forge.dsp import read_wav

        wav = pipeline["corpus"] / "wav" / "utt001.wav"
        outs = []
        for sub in ("a", "b"):
            argv = ["synthesize", "--checkpoint", str(pipeline["student"]), "--wav", str(wav), "--seed", "4", "--out-dir", str(tmp_path / sub)]
            assert run(argv) == 0
            outs.append(read_wav(tmp_path / sub / "utt001_student.wav").samples)
        np.testing.assert_array_equal(*outs)
