"""Replay evaluation on uniformly logged data, and the Welch test."""
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from smcbandits.errors import InvalidInputError, ParseError, UndefinedResultError
from smcbandits.model import IndependentNormalPrior, Link, ObservationModel
from smcbandits.policies import FixedArmPolicy, Policy, PolicySpec, RandomPolicy, SMCSettings, build_policy
from smcbandits.replay import (
    ReplayLog,
    ReplayResult,
    average_reward,
    load_log,
    replay_evaluate,
    replay_repeated,
    save_log,
    uniform_log,
    welch_t_test,
)
from smcbandits.sim import StaticEnvironment, gen_static_instance, run_episode, static_model


class LoggedArmOracle(Policy):
    """Knows the log and always answers with the logged arm."""

    kind = "replay-oracle"

    def __init__(self, model, rng, arms):
        super().__init__(model, rng)
        self.arms, self.i = list(arms), 0

    def select(self, context):
        a = self.arms[self.i]
        self.i += 1
        return a

    def update(self, record):
        return self


class LinearRule(Policy):
    """Deterministic, non-learning contextual rule: argmax of a fixed score."""

    kind = "linear-rule"

    def __init__(self, model, rng, weights):
        super().__init__(model, rng)
        self.weights = np.asarray(weights, float)

    def select(self, context):
        return int(np.argmax(self.weights @ context)) + 1

    def update(self, record):
        return self


def write_log(tmp_path, text, K=4, d=2, name="log.csv"):
    path = tmp_path / name
    path.write_text(text)
    path.with_suffix(".json").write_text(f'{{"K": {K}, "d": {d}, "logging_policy": "uniform"}}')
    return path


HAND = "t,arm,reward,x0\n1,1,1,1.0\n2,2,1,1.0\n3,1,0,1.0\n4,2,1,1.0\n"


class TestLoad:
    def test_empty_file_with_header(self, tmp_path):
        log = load_log(write_log(tmp_path, "t,arm,reward,x0,x1\n"))
        assert len(log) == 0 and log.d == 2 and log.K == 4

    def test_round_trip(self, tmp_path):
        text = "t,arm,reward,x0,x1\n1,2,0,1.0,0.125\n2,4,1,1.0,-3.5\n5,1,1,1.0,1e-07\n"
        log = load_log(write_log(tmp_path, text))
        assert len(log) == 3
        np.testing.assert_array_equal(log.times, [1, 2, 5])
        np.testing.assert_array_equal(log.arms, [2, 4, 1])
        np.testing.assert_array_equal(log.rewards, [0, 1, 1])
        np.testing.assert_array_equal(log.contexts, [[1.0, 0.125], [1.0, -3.5], [1.0, 1e-7]])
        out = tmp_path / "again.csv"
        save_log(log, out)
        again = load_log(out)
        for attr in ("times", "arms", "rewards", "contexts"):
            np.testing.assert_array_equal(getattr(again, attr), getattr(log, attr))
        assert again.K == log.K and again.metadata["logging_policy"] == "uniform"

    def test_arm_out_of_range_names_row(self, tmp_path):
        text = "t,arm,reward,x0\n1,1,1,1.0\n2,5,0,1.0\n"
        with pytest.raises(ParseError) as err:
            load_log(write_log(tmp_path, text, d=1))
        assert err.value.line == 3 and "arm 5" in str(err.value)

    @pytest.mark.parametrize(
        "row, line",
        [("1,1,2,1.0", 2), ("1,1,1", 2), ("1,one,1,1.0", 2), ("1,1,1,nan", 2)],
    )
    def test_malformed_rows(self, tmp_path, row, line):
        with pytest.raises(ParseError) as err:
            load_log(write_log(tmp_path, f"t,arm,reward,x0\n{row}\n", d=1))
        assert err.value.line == line

    def test_time_must_increase(self, tmp_path):
        with pytest.raises(ParseError) as err:
            load_log(write_log(tmp_path, "t,arm,reward,x0\n2,1,1,1.0\n2,1,1,1.0\n", d=1))
        assert err.value.line == 3

    def test_bad_header(self, tmp_path):
        with pytest.raises(ParseError):
            load_log(write_log(tmp_path, "time,arm,reward,x0\n", d=1))

    def test_sidecar_dimension_mismatch(self, tmp_path):
        with pytest.raises(InvalidInputError):
            load_log(write_log(tmp_path, "t,arm,reward,x0\n", d=3))

    def test_missing_arm_count(self, tmp_path):
        path = tmp_path / "bare.csv"
        path.write_text(HAND)
        with pytest.raises(InvalidInputError):
            load_log(path)
        assert len(load_log(path, K=2)) == 4

    def test_non_uniform_logging_warns(self, tmp_path):
        rows = "".join(f"{t},1,0,1.0\n" for t in range(1, 201))
        with pytest.warns(UserWarning, match="uniform"):
            load_log(write_log(tmp_path, "t,arm,reward,x0\n" + rows, K=2, d=1))

    def test_uniform_logging_quiet(self, tmp_path):
        rng = np.random.default_rng(0)
        rows = "".join(f"{t},{rng.integers(1, 3)},0,1.0\n" for t in range(1, 401))
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            load_log(write_log(tmp_path, "t,arm,reward,x0\n" + rows, K=2, d=1))


def intercept_model(K=2):
    return ObservationModel(K, 1, Link.PROBIT, IndependentNormalPrior(0.0, 1.0))


def hand_log():
    return ReplayLog(np.ones((4, 1)), [1, 2, 1, 2], [1, 1, 0, 1], K=2)


class TestReplayEvaluate:
    def test_oracle_retains_everything(self):
        log = uniform_log(StaticEnvironment(gen_static_instance(np.random.default_rng(1))), 300,
                          np.random.default_rng(2))
        res = replay_evaluate(LoggedArmOracle(static_model(), None, log.arms), log)
        assert res.retained == 300 and res.total_reward == log.rewards.sum()

    def test_hand_trace(self):
        log = hand_log()
        res = replay_evaluate(FixedArmPolicy(intercept_model(), None, arm=1), log)
        assert res.retained == 2
        assert res.total_reward == log.rewards[0] + log.rewards[2] == 1
        assert [r.time_index for r in res.history] == [1, 3]
        np.testing.assert_array_equal(res.running_average, [1.0, 0.5])

    @pytest.mark.parametrize("kind", ["random", "fixed", "eps-greedy"])
    def test_retention_near_one_over_k(self, kind):
        env = StaticEnvironment(gen_static_instance(np.random.default_rng(3)))
        n = 6000
        log = uniform_log(env, n, np.random.default_rng(4))
        pol = build_policy(PolicySpec(kind), static_model(), np.random.default_rng(5))
        res = replay_evaluate(pol, log)
        assert abs(res.retained / n - 0.25) < 3 * math.sqrt(0.25 * 0.75 / n)

    def test_retention_binomial_goodness_of_fit(self):
        # retained counts over many short logs follow Binomial(n, 1/K): chi-square at the 1% level
        n, K, reps = 40, 4, 400
        env = StaticEnvironment(gen_static_instance(np.random.default_rng(6)))
        rng = np.random.default_rng(7)
        counts = []
        for _ in range(reps):
            log = uniform_log(env, n, rng)
            counts.append(replay_evaluate(LinearRule(static_model(), None, np.eye(4, 3)), log).retained)
        counts = np.array(counts)
        edges = [0, 7, 9, 11, 13, n + 1]  # bins with ample expected counts
        observed = np.histogram(counts, bins=edges)[0]
        cdf = stats.binom.cdf(np.array(edges) - 1, n, 1 / K)
        expected = reps * np.diff(cdf)
        assert stats.chisquare(observed, expected).pvalue > 0.01

    def test_skipped_rows_leave_state(self):
        model = ObservationModel(2, 1)
        pol = build_policy(PolicySpec("smc-static"), model, np.random.default_rng(8), SMCSettings(n_particles=64))
        log = ReplayLog(np.ones((60, 1)), np.random.default_rng(9).integers(1, 3, 60), np.ones(60, int), K=2)
        seen_skip = False
        for i in range(len(log)):
            before = pol.state_digest()
            if pol.select(log.contexts[i]) != log.arms[i]:
                assert pol.state_digest() == before
                seen_skip = True
            else:
                pol.update(log.record(i))
        assert seen_skip

    def test_replay_never_updates_on_skip(self):
        calls = []

        class Spy(FixedArmPolicy):
            def update(self, record):
                calls.append(record.time_index)
                return self

        replay_evaluate(Spy(intercept_model(), None, arm=2), hand_log())
        assert calls == [2, 4]

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidInputError):
            replay_evaluate(RandomPolicy(ObservationModel(3, 1), np.random.default_rng(0)), hand_log())

    def test_unbiased_against_online(self):
        env = StaticEnvironment(gen_static_instance(np.random.default_rng(10)))
        rule = np.array([[0.5, 1, 0], [0, -1, 0.3], [0, 0, 1], [-0.2, 0.4, -0.4]])
        diffs, ses = [], []
        for r in range(50):
            rng = np.random.default_rng([11, r])
            log = uniform_log(env, 4000, rng)
            res = replay_evaluate(LinearRule(static_model(), None, rule), log)
            online = run_episode(LinearRule(static_model(), None, rule), env, 4000, rng)
            a, b = average_reward(res), online.rewards.mean()
            diffs.append(a - b)
            ses.append(math.sqrt(a * (1 - a) / res.retained + b * (1 - b) / online.T))
        diffs = np.array(diffs)
        assert abs(diffs.mean()) < 3 * math.sqrt(np.sum(np.square(ses))) / 50
        assert np.mean(np.abs(diffs) < 3 * np.array(ses)) >= 47 / 50


class TestAverageReward:
    def test_all_ones(self):
        assert average_reward(ReplayResult(5, 5, [], np.ones(5))) == 1.0

    def test_arithmetic(self):
        assert average_reward(ReplayResult(2, 250, [], np.empty(0))) == 0.008

    def test_nothing_retained(self):
        with pytest.raises(UndefinedResultError):
            average_reward(ReplayResult(0, 0, [], np.empty(0)))

    def test_matches_running_average(self):
        env = StaticEnvironment(gen_static_instance(np.random.default_rng(12)))
        log = uniform_log(env, 2000, np.random.default_rng(13))
        res = replay_evaluate(RandomPolicy(static_model(), np.random.default_rng(14)), log)
        assert average_reward(res) == pytest.approx(res.running_average[-1], abs=1e-15)


class TestReplayRepeated:
    log = uniform_log(StaticEnvironment(gen_static_instance(np.random.default_rng(15))), 1500,
                      np.random.default_rng(16))

    def test_single_run(self):
        vals = replay_repeated(lambda rng: RandomPolicy(static_model(), rng), self.log, 1, seed=3)
        child = np.random.SeedSequence(3).spawn(1)[0]
        direct = average_reward(replay_evaluate(RandomPolicy(static_model(), np.random.default_rng(child)), self.log))
        assert vals.tolist() == [direct]

    def test_deterministic_policy_constant(self):
        vals = replay_repeated(lambda rng: FixedArmPolicy(static_model(), rng, arm=3), self.log, 5, seed=0)
        assert len(set(vals.tolist())) == 1

    def test_reproducible_and_worker_independent(self):
        import functools

        factory = functools.partial(build_policy, PolicySpec("random"), static_model())
        a = replay_repeated(factory, self.log, 6, seed=4)
        b = replay_repeated(factory, self.log, 6, seed=4, workers=2)
        np.testing.assert_array_equal(a, b)

    def test_se_shrinks(self):
        f = lambda rng: RandomPolicy(static_model(), rng)  # noqa: E731
        small = replay_repeated(f, self.log, 25, seed=5)
        big = replay_repeated(f, self.log, 100, seed=6)
        ratio = (big.std(ddof=1) / 10) / (small.std(ddof=1) / 5)
        assert 0.3 < ratio < 0.8  # nominal 1/2

    def test_bad_count(self):
        with pytest.raises(InvalidInputError):
            replay_repeated(lambda rng: None, self.log, 0)


class TestWelch:
    def test_identical(self):
        r = welch_t_test([0.3, 0.5, 0.4], [0.3, 0.5, 0.4])
        assert r.statistic == 0.0 and r.pvalue == 1.0

    def test_constant_equal(self):
        r = welch_t_test([1, 2, 3], [1, 2, 3])
        assert (r.statistic, r.pvalue) == (0.0, 1.0)
        r = welch_t_test([2, 2, 2], [2, 2])
        assert (r.statistic, r.pvalue, r.degenerate) == (0.0, 1.0, True)

    def test_constant_unequal(self):
        r = welch_t_test([2, 2, 2], [1, 1, 1])
        assert r.statistic == math.inf and r.pvalue == 0.0 and r.degenerate

    def test_reference_example(self):
        a, b = [0.10, 0.12, 0.11, 0.13], [0.09, 0.08, 0.10, 0.09]
        ref = stats.ttest_ind(a, b, equal_var=False)
        r = welch_t_test(a, b)
        assert abs(r.statistic - ref.statistic) < 1e-6
        assert abs(r.pvalue - ref.pvalue) < 1e-6

    @settings(max_examples=60)
    @given(
        st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=30),
        st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=30),
    )
    def test_matches_reference(self, a, b):
        a, b = np.array(a), np.array(b)
        if a.var() < 1e-6 or b.var() < 1e-6:
            return
        ref = stats.ttest_ind(a, b, equal_var=False)
        r = welch_t_test(a, b)
        assert r.statistic == pytest.approx(ref.statistic, rel=1e-6, abs=1e-6)
        assert abs(r.pvalue - ref.pvalue) < 1e-6

    def test_too_small(self):
        with pytest.raises(InvalidInputError):
            welch_t_test([1.0], [1.0, 2.0])
