import json
from pathlib import Path

import pytest

from conftest import simple_manifest, write_bundle_dir
from dmap.cli import EXIT_BACKEND, EXIT_INVALID, EXIT_OK, EXIT_USAGE, dispatch


@pytest.fixture
def bundle_dir(tmp_path):
    manifest = simple_manifest(
        doc_id="sample",
        n_pages=3,
        texts={
            1: "1. Introduction\nThis document covers structured retrieval.",
            2: "2. Methods\nThe approach is described with a figure.",
            3: "Further results and discussion continue here.",
        },
        extracted={2: [{
            "kind": "figure", "label": "Figure 1",
            "caption": "Overview of the system", "bbox": [10, 10, 120, 90],
            "image": "fig1.png",
        }]},
    )
    return write_bundle_dir(tmp_path / "bundle", manifest)


def build(bundle_dir, out_dir, seed=7):
    return dispatch(["build", str(bundle_dir), "-o", str(out_dir),
                     "--mock", "--seed", str(seed)])


class TestIngestValidate:
    def test_valid_bundle(self, bundle_dir, capsys):
        assert dispatch(["ingest-validate", str(bundle_dir)]) == EXIT_OK
        out = capsys.readouterr().out
        assert "sample" in out and "3 pages" in out

    def test_missing_image_fails(self, bundle_dir, capsys):
        (bundle_dir / "fig1.png").unlink()
        assert dispatch(["ingest-validate", str(bundle_dir)]) == EXIT_INVALID
        assert "fig1.png" in capsys.readouterr().err

    def test_missing_manifest(self, tmp_path):
        assert dispatch(["ingest-validate", str(tmp_path)]) == EXIT_INVALID


class TestBuild:
    def test_writes_expected_artifacts(self, bundle_dir, tmp_path):
        out = tmp_path / "built"
        assert build(bundle_dir, out) == EXIT_OK
        assert (out / "dmap.json").exists()
        assert (out / "index.text.jsonl").exists()
        assert (out / "index.visual.jsonl").exists()
        m = json.loads((out / "dmap.json").read_text())
        assert m["doc_id"] == "sample"

    def test_invalid_bundle_exit_code(self, tmp_path):
        assert build(tmp_path / "nothing", tmp_path / "out") == EXIT_INVALID

    def test_same_seed_byte_identical(self, bundle_dir, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert build(bundle_dir, out, seed=7) == EXIT_OK
            outs.append({
                p.name: p.read_bytes()
                for p in sorted(out.iterdir())
            })
        assert outs[0] == outs[1]


class TestInspect:
    def test_prints_outline(self, bundle_dir, tmp_path, capsys):
        out = tmp_path / "built"
        build(bundle_dir, out)
        capsys.readouterr()
        assert dispatch(["inspect", str(out)]) == EXIT_OK
        text = capsys.readouterr().out
        assert text.startswith("Outline:")
        assert "Introduction" in text and "Methods" in text
        assert "Page summaries:" in text

    def test_missing_directory(self, tmp_path, capsys):
        assert dispatch(["inspect", str(tmp_path / "nope")]) == EXIT_INVALID


class TestQuery:
    def test_answer_json_shape_and_determinism(self, bundle_dir, tmp_path, capsys):
        out = tmp_path / "built"
        build(bundle_dir, out)
        capsys.readouterr()
        outputs = []
        for _ in range(2):
            code = dispatch(["query", str(out), "-q", "what is the approach?",
                             "--mock", "--seed", "7"])
            assert code == EXIT_OK
            outputs.append(capsys.readouterr().out)
        assert outputs[0] == outputs[1]
        answer = json.loads(outputs[0])
        assert set(answer) == {"answer", "unanswerable", "rounds"}
        assert answer["rounds"]


class TestEval:
    def _dataset(self, tmp_path):
        rows = [
            {"question_id": "q1", "doc_id": "sample",
             "question": "What does the document cover?",
             "reference": "structured retrieval", "sources": ["pure_text"]},
            {"question_id": "q2", "doc_id": "sample", "question": "",
             "reference": "", "answerable": False},
            {"question_id": "q3", "doc_id": "other-doc",
             "question": "irrelevant?", "reference": "x"},
        ]
        path = tmp_path / "dataset.jsonl"
        path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
        return path

    def test_report_written_with_config(self, bundle_dir, tmp_path, capsys):
        out = tmp_path / "built"
        build(bundle_dir, out)
        dataset = self._dataset(tmp_path)
        code = dispatch(["eval", str(out), "--dataset", str(dataset),
                         "--no-structured", "--mock", "--seed", "7"])
        assert code == EXIT_OK
        report = json.loads((out / "report.json").read_text())
        assert report["config"] == {
            "enable_text": True, "enable_visual": True,
            "enable_structured": False,
        }
        assert report["total"] == 2
        assert report["skipped"] == ["q3"]
        summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert summary["total"] == 2

    def test_custom_report_path(self, bundle_dir, tmp_path):
        out = tmp_path / "built"
        build(bundle_dir, out)
        dataset = self._dataset(tmp_path)
        target = tmp_path / "custom-report.json"
        code = dispatch(["eval", str(out), "--dataset", str(dataset),
                         "--mock", "--report", str(target)])
        assert code == EXIT_OK
        assert target.exists()


class TestUsageErrors:
    def test_unknown_command(self, capsys):
        assert dispatch(["frobnicate"]) == EXIT_USAGE

    def test_missing_required_flag(self, capsys, tmp_path):
        assert dispatch(["query", str(tmp_path)]) == EXIT_USAGE

    def test_no_command(self, capsys):
        assert dispatch([]) == EXIT_USAGE
