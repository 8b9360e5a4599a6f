"""Tests for the command-line interface."""

import json

import numpy as np
import pytest
from PIL import Image

from docrec.cli import (
    EXIT_CHECKPOINT,
    EXIT_IO,
    EXIT_OK,
    EXIT_VALIDATION,
    ManifestEntry,
    ManifestError,
    main,
    read_manifest,
    write_manifest,
)
from docrec.metrics import MetricReport

RIMES_LINES = """\
B\tbonjour monsieur
B\tmerci pour votre aide
S\tpaul durand
O\tobjet du courrier
R\t12 rue des lilas
W\tparis le 3 mai
Y\tcordialement
P\tpd
"""


@pytest.fixture
def lines_tsv(tmp_path):
    path = tmp_path / "lines.tsv"
    path.write_text(RIMES_LINES, encoding="utf-8")
    return path


def make_manifest(tmp_path, name, rows):
    path = tmp_path / name
    path.write_text(
        "".join("\t".join(r) + "\n" for r in rows), encoding="utf-8")
    return path


class TestManifestIO:
    def test_roundtrip(self, tmp_path):
        entries = [
            ManifestEntry("a", tmp_path / "a.png", "<B>x</B>"),
            ManifestEntry("b", tmp_path / "b.png", "<O>y</O>", (0.5, 1.0, 0.25)),
        ]
        path = tmp_path / "m.tsv"
        write_manifest(path, entries)
        back = read_manifest(path)
        assert [e.doc_id for e in back] == ["a", "b"]
        assert back[0].image_path == tmp_path / "a.png"
        assert back[0].probs is None
        assert back[1].probs == (0.5, 1.0, 0.25)

    def test_wrong_column_count(self, tmp_path):
        path = make_manifest(tmp_path, "m.tsv", [("only-two", "cols")])
        with pytest.raises(ManifestError):
            read_manifest(path)

    def test_duplicate_id(self, tmp_path):
        path = make_manifest(tmp_path, "m.tsv",
                             [("a", "x.png", "t"), ("a", "y.png", "t")])
        with pytest.raises(ManifestError):
            read_manifest(path)

    def test_malformed_probs(self, tmp_path):
        path = make_manifest(tmp_path, "m.tsv", [("a", "x.png", "t", "0.5 oops")])
        with pytest.raises(ManifestError):
            read_manifest(path)

    def test_relative_paths_resolve_to_manifest_dir(self, tmp_path):
        sub = tmp_path / "deep"
        sub.mkdir()
        path = make_manifest(sub, "m.tsv", [("a", "img/x.png", "t")])
        assert read_manifest(path)[0].image_path == sub / "img" / "x.png"


class TestEval:
    def gt_manifest(self, tmp_path):
        return make_manifest(tmp_path, "gt.tsv", [
            ("d0", "d0.png", "<S>abc</S><B>de f</B>"),
            ("d1", "d1.png", "<O>xy</O>"),
        ])

    def test_perfect_predictions(self, tmp_path, capsys):
        gt = self.gt_manifest(tmp_path)
        code = main(["eval", "--gt", str(gt), "--pred", str(gt),
                     "--grammar", "rimes2009"])
        out = capsys.readouterr().out
        assert code == EXIT_OK
        assert "CER 0.00" in out and "LOER 0.00" in out

    def test_json_output_parses_back(self, tmp_path, capsys):
        gt = self.gt_manifest(tmp_path)
        code = main(["eval", "--gt", str(gt), "--pred", str(gt),
                     "--grammar", "rimes2009", "--json"])
        assert code == EXIT_OK
        report = MetricReport.from_json(capsys.readouterr().out)
        assert report.cer == 0.0
        assert report.n_documents == 2

    def test_imperfect_predictions(self, tmp_path, capsys):
        gt = self.gt_manifest(tmp_path)
        pred = make_manifest(tmp_path, "pred.tsv", [
            ("d0", "d0.png", "<S>abd</S><B>de f"),
            ("d1", "d1.png", "<O>xy</O>"),
        ])
        code = main(["eval", "--gt", str(gt), "--pred", str(pred),
                     "--grammar", "rimes2009", "--json"])
        assert code == EXIT_OK
        report = MetricReport.from_json(capsys.readouterr().out)
        assert report.cer > 0
        assert report.pper > 0

    def test_parallel_matches_serial(self, tmp_path, capsys):
        gt = self.gt_manifest(tmp_path)
        pred = make_manifest(tmp_path, "pred.tsv", [
            ("d0", "d0.png", "<S>abd</S>"),
            ("d1", "d1.png", "<O>x</O><O>q</O>"),
        ])
        main(["eval", "--gt", str(gt), "--pred", str(pred),
              "--grammar", "rimes2009", "--json"])
        serial = capsys.readouterr().out
        main(["eval", "--gt", str(gt), "--pred", str(pred),
              "--grammar", "rimes2009", "--json", "--workers", "2"])
        parallel = capsys.readouterr().out
        assert serial == parallel

    def test_mismatched_ids(self, tmp_path, capsys):
        gt = self.gt_manifest(tmp_path)
        pred = make_manifest(tmp_path, "pred.tsv",
                             [("zz", "zz.png", "<O>x</O>")])
        code = main(["eval", "--gt", str(gt), "--pred", str(pred),
                     "--grammar", "rimes2009"])
        err = capsys.readouterr().err
        assert code == EXIT_VALIDATION
        assert "d0" in err and "zz" in err

    def test_parse_failure_lists_documents(self, tmp_path, capsys):
        gt = self.gt_manifest(tmp_path)
        pred = make_manifest(tmp_path, "pred.tsv", [
            ("d0", "d0.png", "<NOPE>abc</NOPE>"),
            ("d1", "d1.png", "<O>xy</O>"),
        ])
        code = main(["eval", "--gt", str(gt), "--pred", str(pred),
                     "--grammar", "rimes2009"])
        err = capsys.readouterr().err
        assert code == EXIT_VALIDATION
        assert "d0" in err

    def test_prediction_directory(self, tmp_path, capsys):
        gt = self.gt_manifest(tmp_path)
        pred_dir = tmp_path / "preds"
        pred_dir.mkdir()
        (pred_dir / "d0.txt").write_text("<S>abc</S><B>de f</B>\n")
        (pred_dir / "d1.txt").write_text("<O>xy</O>\n")
        code = main(["eval", "--gt", str(gt), "--pred", str(pred_dir),
                     "--grammar", "rimes2009"])
        assert code == EXIT_OK
        assert "CER 0.00" in capsys.readouterr().out

    def test_records_file(self, tmp_path, capsys):
        gt = self.gt_manifest(tmp_path)
        records = tmp_path / "records.jsonl"
        code = main(["eval", "--gt", str(gt), "--pred", str(gt),
                     "--grammar", "rimes2009", "--records", str(records)])
        assert code == EXIT_OK
        rows = [json.loads(l) for l in records.read_text().splitlines()]
        assert [r["id"] for r in rows] == ["d0", "d1"]
        assert all(r["char_errors"] == 0 for r in rows)
        capsys.readouterr()

    def test_subsequence_dump(self, tmp_path, capsys):
        gt = make_manifest(tmp_path, "gt.tsv", [("d0", "d0.png", "<O>ab</O>")])
        pred = make_manifest(tmp_path, "pred.tsv", [
            ("d0", "d0.png", "<O>ab</O>", "0.9 1.0 1.0 0.7"),
        ])
        dump = tmp_path / "subseq.tsv"
        code = main(["eval", "--gt", str(gt), "--pred", str(pred),
                     "--grammar", "rimes2009", "--subsequences", str(dump)])
        assert code == EXIT_OK
        doc_id, cls, score, text = dump.read_text().splitlines()[0].split("\t")
        assert (doc_id, cls, text) == ("d0", "O", "ab")
        assert float(score) == pytest.approx(0.8)
        capsys.readouterr()

    def test_subsequence_dump_needs_probs(self, tmp_path, capsys):
        gt = make_manifest(tmp_path, "gt.tsv", [("d0", "d0.png", "<O>ab</O>")])
        code = main(["eval", "--gt", str(gt), "--pred", str(gt),
                     "--grammar", "rimes2009",
                     "--subsequences", str(tmp_path / "s.tsv")])
        assert code == EXIT_VALIDATION
        capsys.readouterr()

    def test_unknown_grammar(self, tmp_path, capsys):
        gt = self.gt_manifest(tmp_path)
        code = main(["eval", "--gt", str(gt), "--pred", str(gt),
                     "--grammar", "nope1999"])
        assert code == EXIT_VALIDATION
        capsys.readouterr()

    def test_missing_manifest_is_io_error(self, tmp_path, capsys):
        code = main(["eval", "--gt", str(tmp_path / "absent.tsv"),
                     "--pred", str(tmp_path / "absent.tsv"),
                     "--grammar", "rimes2009"])
        assert code == EXIT_IO
        capsys.readouterr()


class TestGenSynth:
    def test_generates_count_documents(self, tmp_path, lines_tsv, capsys):
        out = tmp_path / "synth"
        code = main(["gen-synth", "--grammar", "rimes2009",
                     "--stylesheet", "rimes-style", "--lines", str(lines_tsv),
                     "--count", "2", "--seed", "3", "--out", str(out),
                     "--height", "256", "--width", "320", "--max-lines", "2"])
        assert code == EXIT_OK
        entries = read_manifest(out / "manifest.tsv")
        assert len(entries) == 2
        for e in entries:
            img = np.asarray(Image.open(e.image_path))
            assert img.ndim == 2 and img.dtype == np.uint8
        capsys.readouterr()

    def test_deterministic_regeneration(self, tmp_path, lines_tsv, capsys):
        args = ["gen-synth", "--grammar", "rimes2009", "--stylesheet",
                "rimes-style", "--lines", str(lines_tsv), "--count", "2",
                "--seed", "9", "--height", "256", "--width", "320",
                "--max-lines", "2"]
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(args + ["--out", str(a)]) == EXIT_OK
        assert main(args + ["--out", str(b)]) == EXIT_OK
        for i in range(2):
            pa = (a / f"synth-{i:05d}.png").read_bytes()
            pb = (b / f"synth-{i:05d}.png").read_bytes()
            assert pa == pb
        ma = (a / "manifest.tsv").read_text()
        mb = (b / "manifest.tsv").read_text()
        assert ma == mb
        capsys.readouterr()

    def test_unknown_stylesheet(self, tmp_path, lines_tsv, capsys):
        code = main(["gen-synth", "--grammar", "rimes2009",
                     "--stylesheet", "nope", "--lines", str(lines_tsv),
                     "--count", "1", "--out", str(tmp_path / "x")])
        assert code == EXIT_VALIDATION
        capsys.readouterr()

    def test_missing_lines_file(self, tmp_path, capsys):
        code = main(["gen-synth", "--grammar", "rimes2009",
                     "--stylesheet", "rimes-style",
                     "--lines", str(tmp_path / "absent.tsv"),
                     "--count", "1", "--out", str(tmp_path / "x")])
        assert code == EXIT_IO
        capsys.readouterr()


@pytest.fixture(scope="module")
def trained_artifacts(tmp_path_factory):
    """One tiny pretrain + train + gen-synth flow shared by the tests below."""
    root = tmp_path_factory.mktemp("cli-train")
    lines = root / "lines.tsv"
    lines.write_text(RIMES_LINES, encoding="utf-8")
    synth = root / "synth"
    assert main(["gen-synth", "--grammar", "rimes2009", "--stylesheet",
                 "rimes-style", "--lines", str(lines), "--count", "1",
                 "--seed", "5", "--out", str(synth), "--height", "192",
                 "--width", "256", "--max-lines", "1"]) == EXIT_OK
    line_ckpt = root / "line.ckpt"
    assert main(["pretrain-lines", "--grammar", "rimes2009", "--lines",
                 str(lines), "--steps", "1", "--batch-size", "1",
                 "--profile", "tiny", "--seed", "1",
                 "--out", str(line_ckpt)]) == EXIT_OK
    doc_ckpt = root / "doc.ckpt"
    log = root / "train.log"
    assert main(["train", "--grammar", "rimes2009", "--lines", str(lines),
                 "--stylesheet", "rimes-style", "--init", str(line_ckpt),
                 "--steps", "2", "--profile", "tiny", "--seed", "2",
                 "--height", "96", "--width", "128", "--max-lines", "1",
                 "--log", str(log), "--out", str(doc_ckpt)]) == EXIT_OK
    image = synth / "synth-00000.png"
    return {"root": root, "line": line_ckpt, "doc": doc_ckpt,
            "image": image, "log": log}


class TestTrainingCommands:
    def test_log_written(self, trained_artifacts):
        lines = trained_artifacts["log"].read_text().splitlines()
        assert len(lines) == 2
        step, loss, tau, frac, l = lines[0].split("\t")
        assert step == "0" and float(tau) == 1.0 and int(l) >= 1
        float(loss), float(frac)

    def test_predict_writes_transcript(self, trained_artifacts, tmp_path, capsys):
        out = tmp_path / "pred.txt"
        probs = tmp_path / "probs.txt"
        code = main(["predict", "--image", str(trained_artifacts["image"]),
                     "--checkpoint", str(trained_artifacts["doc"]),
                     "--max-len", "4", "--out", str(out),
                     "--probs-out", str(probs)])
        assert code == EXIT_OK
        text = out.read_text(encoding="utf-8")
        assert text.endswith("\n")
        values = [float(x) for x in probs.read_text().split()]
        assert all(0.0 <= v <= 1.0 for v in values)
        capsys.readouterr()

    def test_predict_to_stdout(self, trained_artifacts, capsys):
        code = main(["predict", "--image", str(trained_artifacts["image"]),
                     "--checkpoint", str(trained_artifacts["doc"]),
                     "--max-len", "3"])
        assert code == EXIT_OK
        capsys.readouterr()

    def test_line_checkpoint_rejected_for_predict(self, trained_artifacts,
                                                  capsys):
        code = main(["predict", "--image", str(trained_artifacts["image"]),
                     "--checkpoint", str(trained_artifacts["line"])])
        assert code == EXIT_CHECKPOINT
        capsys.readouterr()

    def test_attn_dump_one_overlay_per_token(self, trained_artifacts, tmp_path,
                                             capsys):
        out = tmp_path / "attn"
        code = main(["attn-dump", "--image", str(trained_artifacts["image"]),
                     "--checkpoint", str(trained_artifacts["doc"]),
                     "--out", str(out), "--max-len", "4"])
        assert code == EXIT_OK
        steps = sorted(out.glob("step-*.png"))
        pred_len = len((out / "index.tsv").read_text().splitlines())
        assert len(steps) == pred_len > 0
        image = np.asarray(Image.open(trained_artifacts["image"]))
        overlay = np.asarray(Image.open(steps[0]))
        assert overlay.shape == image.shape
        combined = np.asarray(Image.open(out / "combined.png"))
        assert combined.shape == (*image.shape, 3)
        capsys.readouterr()

    def test_corrupt_checkpoint(self, trained_artifacts, tmp_path, capsys):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"XXXX not a checkpoint")
        code = main(["predict", "--image", str(trained_artifacts["image"]),
                     "--checkpoint", str(bad)])
        assert code == EXIT_CHECKPOINT
        capsys.readouterr()
