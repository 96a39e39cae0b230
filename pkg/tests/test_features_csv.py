import csv

import pytest

from livqual.classifier import Label, LivenessDecision
from livqual.errors import InvalidImage, ManifestError
from livqual.evaluation import CrossValReport
from livqual.features_csv import (
    FEATURE_HEADER,
    FeatureRow,
    SubsetFile,
    extract_batch,
    items_from_input,
    parse_mask_option,
    read_decisions,
    read_feature_set,
    read_features,
    read_subset,
    write_decisions,
    write_features,
    write_report_csv,
    write_subset,
)
from livqual.image import save_image
from livqual.quality import QualityVector
from livqual.selection import SubsetScore
from livqual.synth import generate, make_spec

VALUES = [0.81, 3.2, 0.12, 0.05, 131.5, 41.25, 0.9, 0.1, 37.0, 512.5]


def feature_rows():
    return [
        FeatureRow("dev/real_0000.pgm", Label.REAL, "biometrika", "dev", QualityVector.from_array(VALUES)),
        FeatureRow("dev/fake_0000.pgm", Label.FAKE, "biometrika", "dev",
                   QualityVector.from_array([v / 3 for v in VALUES])),
    ]


class TestFeatureFile:
    def test_header_and_values(self, tmp_path):
        path = write_features(feature_rows(), tmp_path / "features.csv")
        lines = path.read_text().splitlines()
        assert lines[0] == ",".join(FEATURE_HEADER)
        assert lines[1] == "dev/real_0000.pgm,real,biometrika,dev,0.81,3.2,0.12,0.05,131.5,41.25,0.9,0.1,37,512.5"

    def test_read_back(self, tmp_path):
        path = write_features(feature_rows(), tmp_path / "features.csv")
        rows = read_features(path)
        assert [r.label for r in rows] == [Label.REAL, Label.FAKE]
        assert rows[0].vector == QualityVector.from_array(VALUES)
        devset = read_feature_set(path)
        assert (devset.n_real, devset.n_fake) == (1, 1)
        assert devset.sensors == ("biometrika", "biometrika")

    def test_unlabelled_rows_cannot_train(self, tmp_path):
        rows = [r._replace(label=None) for r in feature_rows()]
        path = write_features(rows, tmp_path / "features.csv")
        assert read_features(path)[0].label is None
        with pytest.raises(ManifestError, match="no label"):
            read_feature_set(path)

    def test_wrong_header(self, tmp_path):
        path = tmp_path / "features.csv"
        path.write_text("path,label\nx,real\n")
        with pytest.raises(ManifestError, match="expected header"):
            read_features(path)

    def test_bad_value_names_the_line(self, tmp_path):
        path = write_features(feature_rows(), tmp_path / "features.csv")
        text = path.read_text().replace("0.81", "abc", 1)
        path.write_text(text)
        with pytest.raises(ManifestError, match="line 2"):
            read_features(path)


class TestMaskOption:
    def test_bits(self):
        assert parse_mask_option("1000000001") == 0b1000000001

    def test_names(self):
        assert parse_mask_option("q_ocl, q_var") == 0b1000000001

    def test_subset_file(self, tmp_path):
        score = SubsetScore(mask=0b100011, cardinality=3, loo_ace=1.5, loo_flr=1.0, loo_ffr=2.0)
        path = write_subset(SubsetFile.from_score("crossmatch", score), tmp_path / "subset.json")
        assert parse_mask_option(str(path)) == 0b100011
        assert read_subset(path).to_score() == score

    @pytest.mark.parametrize("value", ["q_nope", "", "10101"])
    def test_rejects(self, value):
        with pytest.raises(ValueError):
            parse_mask_option(value)

    def test_malformed_subset_file(self, tmp_path):
        path = tmp_path / "subset.json"
        path.write_text('{"sensor": "x", "mask_bits": "12"}')
        with pytest.raises(ManifestError, match="malformed"):
            read_subset(path)


class TestDecisionsAndReports:
    def test_decisions_round_trip(self, tmp_path):
        decisions = [LivenessDecision(Label.REAL, 1.25), LivenessDecision(Label.FAKE, -0.5)]
        path = write_decisions(["a.pgm", "b.pgm"], decisions, tmp_path / "d.csv", labels=[Label.REAL, Label.REAL])
        assert path.read_text().splitlines()[1:] == ["a.pgm,real,real,1.25", "b.pgm,real,fake,-0.5"]
        truth, predicted = read_decisions(path)
        assert truth == [Label.REAL, Label.REAL]
        assert predicted == [Label.REAL, Label.FAKE]

    def test_decisions_need_labels(self, tmp_path):
        path = write_decisions(["a.pgm"], [LivenessDecision(Label.REAL, 1.0)], tmp_path / "d.csv")
        with pytest.raises(ManifestError, match="line 2"):
            read_decisions(path)

    def test_report_rows(self, tmp_path):
        report = CrossValReport(sensor="identix", ace1=4.0, flr1=3.0, ffr1=5.0,
                                ace2=6.0, flr2=7.0, ffr2=5.0, final_ace=5.0)
        path = write_report_csv([report], tmp_path / "report.csv")
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows == [
            ["sensor", "stage", "flr", "ffr", "ace"],
            ["identix", "1", "3", "5", "4"],
            ["identix", "2", "7", "5", "6"],
            ["identix", "final", "", "", "5"],
        ]


class TestBatchExtraction:
    def test_bad_header_is_skipped_not_raised(self, tmp_path, caplog):
        image, _ = generate(make_spec(seed=3))
        good = save_image(image, tmp_path / "good.pgm")
        bad = tmp_path / "bad.pgm"
        bad.write_bytes(b"P5\n-32 -32\n255\n" + b"\x00" * 1024)

        rows, failures = extract_batch(items_from_input(tmp_path))
        assert [r.path for r in rows] == [str(good)]
        assert [(name, type(exc)) for name, exc in failures] == [(str(bad), InvalidImage)]
        assert "bad.pgm" in caplog.text
