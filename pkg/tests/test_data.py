import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from atefuse import (DataFormatError, Episode, SequentialDataset,
                     StaticDataset, load_sequential, load_static,
                     sample_split, save_sequential, save_static)


def write(path, text):
    path.write_text(text)
    return str(path)


@pytest.fixture
def hist_file(tmp_path):
    return write(tmp_path / "hist.csv", "s1,r\n0.2,1.5\n-0.1,0.8\n")


class TestLoadStatic:
    def test_two_row_file(self, tmp_path, hist_file):
        exp = write(tmp_path / "exp.csv", "s1,a,r\n0.5,1,2.0\n0.1,0,1.0\n")
        ds = load_static(exp, hist_file)
        assert ds.n_e == 2 and ds.dim == 1
        assert ds.exp_actions.tolist() == [1, 0]
        assert ds.exp_rewards.tolist() == [2.0, 1.0]

    def test_non_binary_action(self, tmp_path, hist_file):
        exp = write(tmp_path / "exp.csv", "s1,a,r\n0.5,1,2.0\n0.1,2,1.0\n")
        with pytest.raises(DataFormatError, match="non-binary action at row 2"):
            load_static(exp, hist_file)

    def test_empty_experimental(self, tmp_path, hist_file):
        exp = write(tmp_path / "exp.csv", "s1,a,r\n")
        with pytest.raises(DataFormatError, match="empty dataset"):
            load_static(exp, hist_file)

    def test_missing_file(self, tmp_path, hist_file):
        with pytest.raises(DataFormatError, match="missing file"):
            load_static(tmp_path / "nope.csv", hist_file)

    def test_non_numeric_field(self, tmp_path, hist_file):
        exp = write(tmp_path / "exp.csv", "s1,a,r\nabc,1,2.0\n0.1,0,1.0\n")
        with pytest.raises(DataFormatError, match="non-numeric field"):
            load_static(exp, hist_file)

    def test_inconsistent_dimension(self, tmp_path, hist_file):
        exp = write(tmp_path / "exp.csv", "s1,a,r\n0.5,1,2.0\n0.1,0.3,0,1.0\n")
        with pytest.raises(DataFormatError, match="inconsistent dimension at row 2"):
            load_static(exp, hist_file)

    def test_dimension_mismatch_across_files(self, tmp_path):
        exp = write(tmp_path / "exp.csv", "s1,s2,a,r\n0.5,0.2,1,2.0\n0.1,0.0,0,1.0\n")
        hist = write(tmp_path / "hist.csv", "s1,r\n0.2,1.5\n")
        with pytest.raises(DataFormatError, match="between experimental and historical"):
            load_static(exp, hist)


SEQ_EXP = ("episode,t,s1,a,r\n"
           "1,1,0.5,1,2.0\n1,2,0.3,0,1.0\n1,3,0.1,,\n"
           "2,1,-0.5,0,0.5\n2,2,0.2,1,1.5\n2,3,0.4,,\n")
SEQ_HIST = ("episode,t,s1,a,r\n"
            "1,1,0.1,0,1.0\n1,2,0.2,0,0.9\n1,3,0.3,,\n"
            "2,1,0.4,0,1.1\n2,2,0.5,0,1.2\n2,3,0.6,,\n")


class TestLoadSequential:
    def test_two_episodes(self, tmp_path):
        exp = write(tmp_path / "exp.csv", SEQ_EXP)
        hist = write(tmp_path / "hist.csv", SEQ_HIST)
        ds = load_sequential(exp, hist)
        assert ds.n_e == 2 and ds.n_h == 2 and ds.horizon == 2
        assert ds.exp_actions.tolist() == [[1, 0], [0, 1]]
        assert ds.exp_contexts[0, 2, 0] == 0.1

    def test_historical_action_must_be_zero(self, tmp_path):
        exp = write(tmp_path / "exp.csv", SEQ_EXP)
        hist = write(tmp_path / "hist.csv", SEQ_HIST.replace("1,1,0.1,0,1.0",
                                                             "1,1,0.1,1,1.0"))
        with pytest.raises(DataFormatError, match="historical action must be 0"):
            load_sequential(exp, hist)

    def test_ragged_horizons(self, tmp_path):
        longer = SEQ_EXP.replace("2,3,0.4,,\n", "2,3,0.4,1,0.2\n2,4,0.6,,\n")
        exp = write(tmp_path / "exp.csv", longer)
        hist = write(tmp_path / "hist.csv", SEQ_HIST)
        with pytest.raises(DataFormatError, match="inconsistent horizon"):
            load_sequential(exp, hist)

    def test_missing_terminal_row(self, tmp_path):
        exp = write(tmp_path / "exp.csv", SEQ_EXP.replace("1,3,0.1,,\n", ""))
        hist = write(tmp_path / "hist.csv", SEQ_HIST)
        with pytest.raises(DataFormatError):
            load_sequential(exp, hist)


class TestValidation:
    def test_both_arms_required(self):
        with pytest.raises(DataFormatError, match="both arms"):
            StaticDataset([[0.1], [0.2]], [1, 1], [1.0, 2.0], [[0.3]], [1.0])

    def test_non_finite_reward(self):
        with pytest.raises(DataFormatError, match="non-finite"):
            StaticDataset([[0.1], [0.2]], [1, 0], [np.nan, 2.0], [[0.3]], [1.0])

    def test_episode_horizon_at_least_one(self):
        with pytest.raises(DataFormatError):
            Episode(contexts=[[0.1]], actions=[], rewards=[])

    def test_arrays_are_read_only(self):
        ds = StaticDataset([[0.1], [0.2]], [1, 0], [1.0, 2.0], [[0.3]], [1.0])
        with pytest.raises(ValueError):
            ds.exp_rewards[0] = 5.0


def _static_dataset(n_e, n_h, seed=0):
    rng = np.random.default_rng(seed)
    actions = np.zeros(n_e, dtype=int)
    actions[::2] = 1
    return StaticDataset(rng.normal(size=(n_e, 2)), actions,
                         rng.normal(size=n_e), rng.normal(size=(n_h, 2)),
                         rng.normal(size=n_h))


class TestSampleSplit:
    def test_even_sizes(self):
        pair = sample_split(_static_dataset(4, 4), seed=7)
        assert pair.first_half.n_e == 2 and pair.second_half.n_e == 2

    def test_odd_size_extra_goes_first(self):
        pair = sample_split(_static_dataset(5, 5), seed=7)
        assert pair.first_half.n_e == 3 and pair.second_half.n_e == 2
        assert pair.first_half.n_h == 3 and pair.second_half.n_h == 2

    def test_same_seed_identical(self):
        ds = _static_dataset(9, 6)
        a, b = sample_split(ds, seed=11), sample_split(ds, seed=11)
        np.testing.assert_array_equal(a.first_half.exp_rewards,
                                      b.first_half.exp_rewards)
        np.testing.assert_array_equal(a.second_half.hist_rewards,
                                      b.second_half.hist_rewards)

    @given(n_e=st.integers(2, 40), n_h=st.integers(2, 40),
           seed=st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_disjoint_and_exhaustive(self, n_e, n_h, seed):
        ds = _static_dataset(n_e, n_h, seed=1)
        pair = sample_split(ds, seed=seed)
        combined = np.sort(np.concatenate([pair.first_half.exp_rewards,
                                           pair.second_half.exp_rewards]))
        np.testing.assert_array_equal(combined, np.sort(ds.exp_rewards))
        combined_h = np.sort(np.concatenate([pair.first_half.hist_rewards,
                                             pair.second_half.hist_rewards]))
        np.testing.assert_array_equal(combined_h, np.sort(ds.hist_rewards))
        assert abs(pair.first_half.n_e - pair.second_half.n_e) <= 1
        assert abs(pair.first_half.n_h - pair.second_half.n_h) <= 1


class TestRoundTrip:
    def test_static_round_trip_is_bit_exact(self, tmp_path):
        rng = np.random.default_rng(42)
        actions = rng.integers(0, 2, 20)
        actions[0], actions[1] = 0, 1
        ds = StaticDataset(rng.normal(size=(20, 3)), actions,
                           rng.normal(size=20), rng.normal(size=(30, 3)),
                           rng.normal(size=30))
        save_static(ds, tmp_path / "e.csv", tmp_path / "h.csv")
        back = load_static(tmp_path / "e.csv", tmp_path / "h.csv")
        np.testing.assert_array_equal(back.exp_contexts, ds.exp_contexts)
        np.testing.assert_array_equal(back.exp_rewards, ds.exp_rewards)
        np.testing.assert_array_equal(back.hist_contexts, ds.hist_contexts)
        np.testing.assert_array_equal(back.hist_rewards, ds.hist_rewards)

    def test_sequential_round_trip_is_bit_exact(self, tmp_path):
        rng = np.random.default_rng(3)
        ds = SequentialDataset(
            rng.normal(size=(4, 5, 2)), rng.integers(0, 2, (4, 4)),
            rng.normal(size=(4, 4)), rng.normal(size=(6, 5, 2)),
            np.zeros((6, 4), dtype=int), rng.normal(size=(6, 4)))
        save_sequential(ds, tmp_path / "e.csv", tmp_path / "h.csv")
        back = load_sequential(tmp_path / "e.csv", tmp_path / "h.csv")
        np.testing.assert_array_equal(back.exp_contexts, ds.exp_contexts)
        np.testing.assert_array_equal(back.exp_actions, ds.exp_actions)
        np.testing.assert_array_equal(back.hist_rewards, ds.hist_rewards)
