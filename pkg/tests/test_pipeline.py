import json
import math
import os
import shutil

import numpy as np
import pytest

import fergen
from fergen.cli import main as cli_main
from fergen.pipeline import (MANIFEST_NAME, DatasetManifest, PipelineError,
                             assign_splits, load_config)

from conftest import desk_config


def manifest_bytes(out_dir):
    return (out_dir / MANIFEST_NAME).read_bytes()


class TestConfig:
    def test_load_resolves_relative_paths(self, tmp_path):
        (tmp_path / "conf").mkdir()
        config_path = tmp_path / "conf" / "run.json"
        config_path.write_text(json.dumps({
            "corpus_index": "../corpus/index.csv",
            "output_dir": "out",
            "seed": 5,
        }))
        config = load_config(config_path)
        assert config.corpus_index == str((tmp_path / "corpus/index.csv").resolve())
        assert config.output_dir == str((tmp_path / "conf/out").resolve())
        assert config.seed == 5
        assert config.trios_per_category == 64_000
        assert config.train_fraction == 0.75

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({
            "corpus_index": "x", "output_dir": "y", "smoothnig": 1.0}))
        with pytest.raises(PipelineError, match="unknown config keys"):
            load_config(path)

    def test_missing_required_key_rejected(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"output_dir": "y"}))
        with pytest.raises(PipelineError, match="required"):
            load_config(path)

    def test_field_validation(self):
        with pytest.raises(ValueError, match="fraction"):
            fergen.PipelineConfig("a", "b", train_fraction=1.0)
        with pytest.raises(ValueError, match="workers"):
            fergen.PipelineConfig("a", "b", workers=0)
        with pytest.raises(ValueError, match="sample count"):
            fergen.PipelineConfig("a", "b", sample_count=4)

    def test_snapshot_excludes_machine_fields(self):
        snapshot = fergen.PipelineConfig("a", "b", workers=7).snapshot()
        assert "output_dir" not in snapshot
        assert "workers" not in snapshot
        assert "corpus_index" not in snapshot
        assert snapshot["crop_size"] == 224


class TestAssignSplits:
    def test_stratified_within_one_record(self, happy2):
        trios = [fergen.TrioScore(happy2, (i, i + 1, i + 2), float(i))
                 for i in range(10)]
        splits = assign_splits(seed=1, category=happy2, trios=trios,
                               train_fraction=0.75)
        train = sum(1 for s in splits.values() if s == "train")
        assert abs(train - 7.5) <= 0.5

    def test_deterministic_and_seed_sensitive(self, happy2):
        trios = [fergen.TrioScore(happy2, (i, i + 1, i + 2), float(i))
                 for i in range(12)]
        first = assign_splits(1, happy2, trios, 0.75)
        second = assign_splits(1, happy2, trios, 0.75)
        assert first == second
        assert any(assign_splits(s, happy2, trios, 0.75) != first for s in (2, 3, 4))


class TestRunGenerate:
    def test_desk_scale_counts(self, desk_run):
        config, manifest, manifest_path = desk_run
        # 2 categories x min(4, C(6,3)) records, split 3/1 per category.
        assert len(manifest.records) == 8
        assert len(manifest.records_for("train")) == 6
        assert len(manifest.records_for("test")) == 2
        for label_key in ("happiness_2", "happiness_3"):
            members = [r for r in manifest.records if r.category.key == label_key]
            assert len(members) == 4
            assert sum(1 for r in members if r.split == "train") == 3

    def test_records_sorted_and_paths_exist(self, desk_run):
        config, manifest, manifest_path = desk_run
        keys = [(r.category, r.ids) for r in manifest.records]
        assert keys == sorted(keys)
        base = manifest_path.parent
        import hashlib
        for record in manifest.records:
            image = base / record.path
            assert image.exists()
            assert hashlib.sha256(image.read_bytes()).hexdigest() == record.sha256

    def test_rerun_same_directory_is_identical_and_skips_work(self, desk_run):
        config, manifest, manifest_path = desk_run
        out_dir = manifest_path.parent
        before = manifest_bytes(out_dir)
        mtimes = {p: p.stat().st_mtime_ns for p in out_dir.rglob("*.png")}
        again = fergen.run_generate(config)
        assert manifest_bytes(out_dir) == before
        assert [r.sha256 for r in again.records] == [r.sha256 for r in manifest.records]
        after = {p: p.stat().st_mtime_ns for p in out_dir.rglob("*.png")}
        assert after == mtimes  # images were reused, not regenerated

    def test_worker_count_does_not_change_bytes(self, desk_run, desk_corpus_dir,
                                                tmp_path):
        _, _, manifest_path = desk_run
        config = desk_config(desk_corpus_dir, tmp_path / "out", workers=4)
        fergen.run_generate(config)
        assert manifest_bytes(tmp_path / "out") == manifest_bytes(manifest_path.parent)

    def test_resume_after_partial_run(self, desk_run, tmp_path):
        config, _, manifest_path = desk_run
        source_dir = manifest_path.parent
        resumed_dir = tmp_path / "resumed"
        shutil.copytree(source_dir, resumed_dir)
        # Simulate a kill: manifest missing, only a prefix of images written.
        (resumed_dir / MANIFEST_NAME).unlink()
        images = sorted(resumed_dir.rglob("*.png"))
        for image in images[5:]:
            image.unlink()
        kept = {p: p.stat().st_mtime_ns for p in images[:5]}
        resumed_config = config.replace(output_dir=str(resumed_dir))
        fergen.run_generate(resumed_config)
        assert manifest_bytes(resumed_dir) == manifest_bytes(source_dir)
        assert {p: p.stat().st_mtime_ns for p in images[:5]} == kept

    def test_mixed_parameters_in_output_dir_rejected(self, desk_run):
        config, _, manifest_path = desk_run
        with pytest.raises(PipelineError, match="different parameters"):
            fergen.run_generate(config.replace(seed=config.seed + 1))

    def test_zero_trios_gives_empty_manifest(self, desk_corpus_dir, tmp_path):
        config = desk_config(desk_corpus_dir, tmp_path / "out", trios_per_category=0)
        manifest = fergen.run_generate(config)
        assert manifest.records == ()
        stats = fergen.run_stats(tmp_path / "out" / MANIFEST_NAME, stream=None)
        assert stats.record_count == 0 and stats.ok

    def test_record_count_law_with_oversized_m(self, tmp_path):
        label = fergen.ExpressionLabel("fear", 2)
        corpus = fergen.generate_synthetic_corpus(
            seed=2, n_identities=4, vertex_count=625, categories=(label,))
        index = fergen.save_corpus(corpus, tmp_path / "corpus")
        config = desk_config(index, tmp_path / "out", trios_per_category=50)
        manifest = fergen.run_generate(config)
        assert len(manifest.records) == math.comb(4, 3)


class TestManifestFormat:
    def test_round_trip(self, desk_run):
        _, manifest, manifest_path = desk_run
        loaded = DatasetManifest.read(manifest_path)
        assert loaded.corpus_sha256 == manifest.corpus_sha256
        assert loaded.parameters == manifest.parameters
        assert loaded.records == manifest.records

    def test_header_is_json_with_counts(self, desk_run):
        _, _, manifest_path = desk_run
        first_line = manifest_path.read_text().splitlines()[0]
        header = json.loads(first_line)
        assert header["kind"] == "fergen-manifest"
        assert header["records"] == 8
        assert header["parameters"]["trios_per_category"] == 4

    def test_duplicate_paths_rejected(self, desk_run):
        _, manifest, _ = desk_run
        with pytest.raises(ValueError, match="duplicate"):
            DatasetManifest(parameters=manifest.parameters,
                            corpus_sha256=manifest.corpus_sha256,
                            records=manifest.records + (manifest.records[0],))


class TestRunStats:
    def test_summary_of_desk_run(self, desk_run, capsys):
        _, _, manifest_path = desk_run
        stats = fergen.run_stats(manifest_path)
        out = capsys.readouterr().out
        assert stats.ok
        assert stats.record_count == 8
        assert stats.per_category["happiness_2"].count == 4
        assert stats.per_category["happiness_2"].train == 3
        assert stats.score_min is not None
        assert stats.score_min <= stats.score_median <= stats.score_max
        assert "all image checksums verified" in out

    def test_corrupted_image_is_reported(self, desk_run, tmp_path):
        _, _, manifest_path = desk_run
        broken_dir = tmp_path / "broken"
        shutil.copytree(manifest_path.parent, broken_dir)
        victim = sorted(broken_dir.rglob("*.png"))[0]
        victim.write_bytes(b"corrupted")
        stats = fergen.run_stats(broken_dir / MANIFEST_NAME, stream=None)
        assert not stats.ok
        assert len(stats.checksum_failures) == 1
        assert stats.checksum_failures[0] in str(victim)


class TestRunExport:
    def test_levels_merge_into_one_class(self, desk_run, tmp_path):
        _, _, manifest_path = desk_run
        export_dir = tmp_path / "export"
        counts = fergen.run_export(manifest_path, export_dir)
        assert counts[("train", "happiness")] == 6
        assert counts[("test", "happiness")] == 2
        assert sorted(p.name for p in export_dir.iterdir()) == ["test", "train"]
        assert [p.name for p in (export_dir / "train").iterdir()] == ["happiness"]
        assert len(list((export_dir / "train" / "happiness").glob("*.png"))) == 6

    def test_reexport_is_idempotent(self, desk_run, tmp_path):
        _, _, manifest_path = desk_run
        export_dir = tmp_path / "export"
        fergen.run_export(manifest_path, export_dir)
        first = sorted(str(p) for p in export_dir.rglob("*.png"))
        fergen.run_export(manifest_path, export_dir)
        assert sorted(str(p) for p in export_dir.rglob("*.png")) == first

    def test_missing_image_reported(self, desk_run, tmp_path):
        _, _, manifest_path = desk_run
        broken_dir = tmp_path / "broken"
        shutil.copytree(manifest_path.parent, broken_dir)
        sorted(broken_dir.rglob("*.png"))[0].unlink()
        with pytest.raises(PipelineError, match="missing image"):
            fergen.run_export(broken_dir / MANIFEST_NAME, tmp_path / "export2")


class TestCli:
    def test_generate_stats_export_eval(self, desk_corpus_dir, tmp_path, capsys):
        out_dir = tmp_path / "out"
        config_path = tmp_path / "run.json"
        config_path.write_text(json.dumps({
            "corpus_index": str(desk_corpus_dir),
            "output_dir": str(out_dir),
            "sample_count": 60,
            "trios_per_category": 4,
            "seed": 3,
            "grid_rows": 240,
            "grid_cols": 240,
        }))
        assert cli_main(["generate", "--config", str(config_path)]) == 0
        assert "8 records" in capsys.readouterr().out
        manifest_path = out_dir / MANIFEST_NAME

        assert cli_main(["stats", "--manifest", str(manifest_path)]) == 0
        capsys.readouterr()
        assert cli_main(["export", "--manifest", str(manifest_path),
                         "--out", str(tmp_path / "classes")]) == 0
        assert "exported 8 images" in capsys.readouterr().out
        assert cli_main(["eval", "--manifest", str(manifest_path),
                         "--epochs", "20", "--lr", "0.5", "--seed", "0"]) == 0
        assert "accuracy" in capsys.readouterr().out

    def test_cli_reports_errors(self, tmp_path, capsys):
        missing = tmp_path / "absent.json"
        assert cli_main(["generate", "--config", str(missing)]) == 1
        assert "error" in capsys.readouterr().err

    def test_stats_exit_code_on_corruption(self, desk_run, tmp_path, capsys):
        _, _, manifest_path = desk_run
        broken_dir = tmp_path / "broken-cli"
        shutil.copytree(manifest_path.parent, broken_dir)
        sorted(broken_dir.rglob("*.png"))[0].write_bytes(b"x")
        assert cli_main(["stats", "--manifest", str(broken_dir / MANIFEST_NAME)]) == 1
        assert "FAILURES" in capsys.readouterr().out
