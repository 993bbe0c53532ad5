import json

import numpy as np
import pytest

from optlab_plots.schema import SchemaError, load_csv, load_manifest, schema_for


def write(path, text):
    path.write_text(text)
    return path


class TestSchemaLookup:
    def test_prefix_matching(self):
        assert schema_for("trajectory_adam_s0.csv")[0] == ("step", "f")
        assert schema_for("train_summary.csv")[0] == ("optimizer", "s")
        assert schema_for("train_adam_s1.csv")[0] == ("epoch", "f")
        assert schema_for("nonsense.csv") is None


class TestLoadCsv:
    def test_parses_floats_and_strings(self, tmp_path):
        path = write(
            tmp_path / "escape_summary.csv",
            "H_phi,dynamics,median_steps,mean_steps,censoring_rate\n"
            "1.0,adam,20.0,25.5,0.0\n"
            "2.0,invadam,8.0,9.5,0.1\n",
        )
        table = load_csv(path)
        assert np.array_equal(table["H_phi"], [1.0, 2.0])
        assert table["dynamics"] == ["adam", "invadam"]
        assert table.n_rows == 2

    def test_missing_file(self, tmp_path):
        with pytest.raises(SchemaError, match="does not exist"):
            load_csv(tmp_path / "slice.csv")

    def test_wrong_header_names_column(self, tmp_path):
        path = write(tmp_path / "slice.csv", "zeta,value\n0.0,1.0\n")
        with pytest.raises(SchemaError) as err:
            load_csv(path)
        assert err.value.column == "loss"
        assert err.value.row == 1

    def test_short_header_names_missing_column(self, tmp_path):
        path = write(tmp_path / "trajectory_adam_s0.csv", "step,x,y,loss,alpha\n")
        with pytest.raises(SchemaError) as err:
            load_csv(path)
        assert err.value.column == "update_norm"

    def test_non_numeric_cell_names_row_and_column(self, tmp_path):
        path = write(
            tmp_path / "slice.csv", "zeta,loss\n0.0,1.0\n-0.5,oops\n"
        )
        with pytest.raises(SchemaError) as err:
            load_csv(path)
        assert err.value.row == 3
        assert err.value.column == "loss"
        assert "oops" in str(err.value)

    def test_ragged_row_names_row(self, tmp_path):
        path = write(tmp_path / "slice.csv", "zeta,loss\n0.0,1.0,9.9\n")
        with pytest.raises(SchemaError) as err:
            load_csv(path)
        assert err.value.row == 2

    def test_empty_data_rejected(self, tmp_path):
        path = write(tmp_path / "slice.csv", "zeta,loss\n")
        with pytest.raises(SchemaError, match="no data rows"):
            load_csv(path)

    def test_unregistered_name_rejected(self, tmp_path):
        path = write(tmp_path / "mystery.csv", "a,b\n1,2\n")
        with pytest.raises(SchemaError, match="no schema registered"):
            load_csv(path)


class TestManifest:
    def test_missing_manifest(self, tmp_path):
        with pytest.raises(SchemaError, match="missing manifest"):
            load_manifest(tmp_path)

    def test_version_pin(self, tmp_path):
        (tmp_path / "manifest.json").write_text(
            json.dumps({"subcommand": "trajectory", "outputs": [], "artifact_version": "999"})
        )
        with pytest.raises(SchemaError, match="not supported"):
            load_manifest(tmp_path)

    def test_valid_manifest(self, tmp_path):
        (tmp_path / "manifest.json").write_text(
            json.dumps({"subcommand": "trajectory", "outputs": [], "artifact_version": "1"})
        )
        manifest = load_manifest(tmp_path)
        assert manifest["subcommand"] == "trajectory"
