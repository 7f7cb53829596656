import numpy as np
import pandas as pd
import pytest

from deepsurrogate.errors import FormatError, ShapeError, UsageError
from deepsurrogate.models.dataset import (
    INPUTS_FILE,
    RESPONSES_FILE,
    SITES_FILE,
    Dataset,
    read_dataset,
    write_dataset_files,
)


class TestDataset:
    def test_dimensions(self, tiny_dataset):
        """Test derived sizes and default identifiers."""
        assert (tiny_dataset.n, tiny_dataset.H, tiny_dataset.p, tiny_dataset.q) == (12, 4, 3, 2)
        assert tiny_dataset.n_pairs == 48
        assert np.array_equal(tiny_dataset.sim_ids, np.arange(4))
        assert np.array_equal(tiny_dataset.site_ids, np.arange(12))

    def test_one_dimensional_covariates_become_a_column(self):
        """Test a covariate vector is treated as q=1."""
        ds = Dataset(np.zeros((3, 2)), np.ones(3), np.zeros((2, 1)), np.zeros((2, 3)))
        assert ds.fine_covariates.shape == (3, 1)

    def test_shape_errors(self):
        """Test mismatched arrays raise ShapeError."""
        with pytest.raises(ShapeError):
            Dataset(np.zeros((3, 3)), np.zeros((3, 1)), np.zeros((2, 1)), np.zeros((2, 3)))
        with pytest.raises(ShapeError):
            Dataset(np.zeros((3, 2)), np.zeros((3, 1)), np.zeros((2, 1)), np.zeros((3, 2)))
        with pytest.raises(ShapeError):
            Dataset(np.zeros((3, 2)), np.zeros((3, 1)), np.zeros((2, 1)), np.zeros((2, 3)), sim_ids=np.arange(5))

    def test_missing_values_rejected(self):
        """Test NaN responses raise UsageError."""
        responses = np.zeros((2, 3))
        responses[1, 2] = np.nan
        with pytest.raises(UsageError):
            Dataset(np.zeros((3, 2)), np.zeros((3, 1)), np.zeros((2, 1)), responses)

    def test_pairs_use_simulation_major_order(self, tiny_dataset):
        """Test flat index h*n+i selects site i of simulation h."""
        sites, covs, inputs, y = tiny_dataset.pairs(np.array([0, 13, 47]))
        assert np.array_equal(sites[1], tiny_dataset.sites[1])
        assert np.array_equal(covs[2], tiny_dataset.fine_covariates[11])
        assert np.array_equal(inputs[1], tiny_dataset.inputs[1])
        assert y[2] == tiny_dataset.responses[3, 11]

    def test_select_sims(self, tiny_dataset):
        """Test selection keeps sites and carries identifiers."""
        sub = tiny_dataset.select_sims([3, 1])
        assert sub.H == 2
        assert np.array_equal(sub.sim_ids, [3, 1])
        assert np.array_equal(sub.responses[0], tiny_dataset.responses[3])
        assert sub.sites is tiny_dataset.sites


class TestFiles:
    def test_write_then_read_splits(self, tiny_dataset, tmp_path):
        """Test each split reads back with exact values and identifiers."""
        train, test = tiny_dataset.select_sims([0, 2]), tiny_dataset.select_sims([1, 3])
        paths = write_dataset_files(tmp_path, {"train": train, "test": test})
        assert [p.name for p in paths] == [SITES_FILE, INPUTS_FILE, RESPONSES_FILE]

        back = read_dataset(tmp_path, "test")
        assert np.array_equal(back.sim_ids, [1, 3])
        assert np.array_equal(back.responses, test.responses)
        assert np.array_equal(back.sites, tiny_dataset.sites)
        assert np.array_equal(back.fine_covariates, tiny_dataset.fine_covariates)
        assert np.array_equal(back.inputs, test.inputs)

        everything = read_dataset(tmp_path, None)
        assert np.array_equal(everything.sim_ids, [0, 1, 2, 3])
        assert np.array_equal(everything.responses, tiny_dataset.responses)

    def test_responses_are_sorted_long_format(self, tiny_dataset, tmp_path):
        """Test responses.csv has one row per pair sorted by simulation then site."""
        write_dataset_files(tmp_path, {"train": tiny_dataset})
        frame = pd.read_csv(tmp_path / RESPONSES_FILE)
        assert list(frame.columns) == ["sim_id", "site_id", "y"]
        assert len(frame) == tiny_dataset.n_pairs
        assert frame[["sim_id", "site_id"]].equals(frame[["sim_id", "site_id"]].sort_values(["sim_id", "site_id"]))

    def test_splits_must_share_sites(self, tiny_dataset, tmp_path):
        """Test splits over different sites are rejected."""
        other = Dataset(tiny_dataset.sites + 1.0, tiny_dataset.fine_covariates, tiny_dataset.inputs, tiny_dataset.responses)
        with pytest.raises(UsageError):
            write_dataset_files(tmp_path, {"train": tiny_dataset, "test": other})
        with pytest.raises(UsageError):
            write_dataset_files(tmp_path, {})

    def test_missing_file(self, tmp_path):
        """Test an empty directory raises FormatError."""
        with pytest.raises(FormatError):
            read_dataset(tmp_path)

    def test_unknown_split(self, tiny_dataset, tmp_path):
        """Test a split with no simulations raises FormatError."""
        write_dataset_files(tmp_path, {"train": tiny_dataset})
        with pytest.raises(FormatError):
            read_dataset(tmp_path, "test")

    def test_missing_response_row(self, tiny_dataset, tmp_path):
        """Test a dropped (simulation, site) row raises FormatError."""
        write_dataset_files(tmp_path, {"train": tiny_dataset})
        frame = pd.read_csv(tmp_path / RESPONSES_FILE)
        frame.iloc[5:].to_csv(tmp_path / RESPONSES_FILE, index=False)
        with pytest.raises(FormatError):
            read_dataset(tmp_path)

    def test_missing_column(self, tiny_dataset, tmp_path):
        """Test a sites file without coordinates raises FormatError."""
        write_dataset_files(tmp_path, {"train": tiny_dataset})
        frame = pd.read_csv(tmp_path / SITES_FILE).drop(columns=["s2"])
        frame.to_csv(tmp_path / SITES_FILE, index=False)
        with pytest.raises(FormatError, match="s2"):
            read_dataset(tmp_path)
