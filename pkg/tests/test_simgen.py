import numpy as np
import pytest

from panelwm import simgen
from panelwm.rng import stream
from panelwm.simgen import ActionVector, ConsumerProfile, LatentTraits, SimConfig


@pytest.fixture(scope="module")
def small_cfg():
    return SimConfig(n_consumers=96, t_days=60, seed=123)


@pytest.fixture(scope="module")
def small_panel(small_cfg):
    return simgen.simulate_panel(small_cfg)


class TestDrawPopulation:
    def test_full_size_population_fields_in_range(self):
        profiles = simgen.draw_population(1024, seed=7)
        assert len(profiles) == 1024
        for p in profiles:
            assert 0 <= p.store <= 9
            assert p.loyalty in (0, 1)
            assert p.age_decade in (20, 30, 40, 50, 60)
            assert 1 <= p.income_quintile <= 5
        assert len({p.consumer_id for p in profiles}) == 1024

    def test_deterministic(self):
        a = simgen.draw_population(1, seed=99)[0]
        b = simgen.draw_population(1, seed=99)[0]
        assert a == b

    def test_store_frequencies_multinomial(self):
        profiles = simgen.draw_population(10000, seed=3)
        counts = np.bincount([p.store for p in profiles], minlength=10)
        # 3 sigma under the multinomial null: sigma = sqrt(n p (1-p))
        sigma = np.sqrt(10000 * 0.1 * 0.9)
        assert np.all(np.abs(counts - 1000) <= 3 * sigma)

    def test_empty_population_errors(self):
        with pytest.raises(ValueError):
            simgen.draw_population(0, seed=1)


class TestLatentParams:
    def test_income_monotonicity_with_shared_noise(self):
        lo = ConsumerProfile(5, 0, 0, 40, 1)
        hi = ConsumerProfile(5, 0, 0, 40, 5)  # same id -> same noise draw
        t_lo = simgen.latent_params(lo, seed=2)
        t_hi = simgen.latent_params(hi, seed=2)
        assert t_lo.alpha > t_hi.alpha
        assert t_lo.beta < t_hi.beta

    def test_age_monotonicity(self):
        young = ConsumerProfile(5, 0, 0, 20, 3)
        old = ConsumerProfile(5, 0, 0, 60, 3)
        assert simgen.latent_params(young, 2).alpha > simgen.latent_params(old, 2).alpha
        assert simgen.latent_params(young, 2).beta < simgen.latent_params(old, 2).beta

    def test_loyalty_raises_gamma_and_beta(self):
        base = ConsumerProfile(9, 3, 0, 40, 3)
        loyal = ConsumerProfile(9, 3, 1, 40, 3)
        assert simgen.latent_params(loyal, 4).gamma > simgen.latent_params(base, 4).gamma
        assert simgen.latent_params(loyal, 4).beta > simgen.latent_params(base, 4).beta

    def test_population_confounding_signs(self):
        profiles = simgen.draw_population(2000, seed=5)
        traits = simgen.latent_params_all(profiles, seed=5)
        a = np.array([traits[p.consumer_id].alpha for p in profiles])
        b = np.array([traits[p.consumer_id].beta for p in profiles])
        g = np.array([traits[p.consumer_id].gamma for p in profiles])
        assert np.corrcoef(a, b)[0, 1] < -0.1
        assert np.corrcoef(g, b)[0, 1] > 0.1
        # no direct alpha-gamma path: partial correlation given demographics
        d = np.stack(
            [np.ones(2000)]
            + [np.array([getattr(p, f) for p in profiles], dtype=float) for f in ("income_quintile", "age_decade", "loyalty")],
            axis=1,
        )
        ra = a - d @ np.linalg.lstsq(d, a, rcond=None)[0]
        rg = g - d @ np.linalg.lstsq(d, g, rcond=None)[0]
        assert abs(np.corrcoef(ra, rg)[0, 1]) < 0.05

    def test_positivity_and_coupon_depth_range(self):
        for p in simgen.draw_population(200, seed=8):
            t = simgen.latent_params(p, 8)
            assert t.alpha > 0 and t.gamma > 0
            assert 1.0 <= t.coupon_depth_r <= 10.0


class TestAssignActions:
    def test_store_level_actions_shared(self, small_cfg):
        profiles = simgen.draw_population(40, small_cfg.seed, small_cfg)
        acts = simgen.assign_actions(profiles, day=13, seed=small_cfg.seed, config=small_cfg, t_days=60)
        by_store = {}
        for p in profiles:
            key = (acts[p.consumer_id].sale1, acts[p.consumer_id].sale2, acts[p.consumer_id].campaign)
            by_store.setdefault(p.store, set()).add(key)
        assert all(len(v) == 1 for v in by_store.values())

    def test_push_unconfounded_with_traits(self, small_panel, small_cfg):
        panel, traits = small_panel
        alpha = np.array([traits[c].alpha for c in panel.consumer_id])
        gamma = np.array([traits[c].gamma for c in panel.consumer_id])
        push = panel.push.astype(float)
        assert abs(np.corrcoef(push, alpha)[0, 1]) < 0.02
        assert abs(np.corrcoef(push, gamma)[0, 1]) < 0.02

    def test_coupon_targets_loyalty(self, small_panel, small_cfg):
        panel, _ = small_panel
        profiles = simgen.draw_population(small_cfg.n_consumers, small_cfg.seed, small_cfg)
        loyalty = np.array([profiles[c].loyalty for c in panel.consumer_id])
        assert panel.coupon[loyalty == 1].mean() > panel.coupon[loyalty == 0].mean()

    def test_day_out_of_range(self, small_cfg):
        profiles = simgen.draw_population(4, small_cfg.seed, small_cfg)
        with pytest.raises(ValueError):
            simgen.assign_actions(profiles, day=60, seed=1, config=small_cfg, t_days=60)


class TestPriceOf:
    def test_no_actions(self):
        assert simgen.price_of(ActionVector(), 4.0) == 100.0

    def test_all_sales(self):
        assert simgen.price_of(ActionVector(1, 1, 1, 0, 0), 4.0) == 87.0

    def test_coupon_depth(self):
        assert simgen.price_of(ActionVector(0, 0, 0, 1, 0), 4.0) == 96.0


class TestStepOutcomes:
    def test_zero_utility_gives_half(self):
        cfg = SimConfig(intercept_visit=0.0)
        traits = LatentTraits(alpha=1.0, gamma=1.0, beta=0.0, coupon_depth_r=4.0)
        assert simgen.visit_utility(traits, ActionVector(), cfg) == 0.0
        rng = stream(0, "mc")
        visits = sum(
            simgen.step_outcomes(traits, ActionVector(), 100.0, rng, cfg)[0] for _ in range(20000)
        )
        assert abs(visits / 20000 - 0.5) < 0.015

    def test_higher_alpha_lowers_purchase_probability(self):
        cfg = SimConfig()
        lo = LatentTraits(0.5, 1.0, 0.0, 4.0)
        hi = LatentTraits(1.5, 1.0, 0.0, 4.0)
        # price above baseline normalization point: price_norm > 0
        assert simgen.purchase_utility(hi, 105.0, cfg) < simgen.purchase_utility(lo, 105.0, cfg)

    def test_monte_carlo_matches_sigmoid(self):
        cfg = SimConfig()
        traits = LatentTraits(alpha=1.0, gamma=1.0, beta=0.4, coupon_depth_r=4.0)
        actions = ActionVector(campaign=1, push=1)
        u_v = simgen.visit_utility(traits, actions, cfg)
        p_expected = 1.0 / (1.0 + np.exp(-u_v / cfg.noise_scale))
        rng = stream(1, "mc2")
        hits = sum(
            simgen.step_outcomes(traits, actions, 95.0, rng, cfg)[0] for _ in range(100000)
        )
        assert abs(hits / 100000 - p_expected) <= 0.01


class TestSimulatePanel:
    def test_paper_scale_row_count(self):
        cfg = SimConfig(n_consumers=1024, t_days=365, seed=7)
        panel, traits = simgen.simulate_panel(cfg)
        assert len(panel) == 373760
        assert len(traits) == 1024

    def test_single_record(self):
        panel, _ = simgen.simulate_panel(SimConfig(n_consumers=1, t_days=1, seed=3))
        assert len(panel) == 1
        assert panel.day[0] == 0

    def test_records_per_consumer(self, small_panel, small_cfg):
        panel, _ = small_panel
        counts = np.bincount(panel.consumer_id, minlength=small_cfg.n_consumers)
        assert np.all(counts == small_cfg.t_days)

    def test_price_equation_exact(self, small_panel):
        panel, traits = small_panel
        r = np.array([traits[c].coupon_depth_r for c in panel.consumer_id])
        expected = (
            100.0
            - 5.0 * panel.sale1
            - 3.0 * panel.sale2
            - 5.0 * panel.campaign
            - r * panel.coupon
        )
        assert np.array_equal(panel.price, expected)

    def test_byte_identical_given_seed(self, small_cfg, small_panel):
        panel1, traits1 = small_panel
        panel2, traits2 = simgen.simulate_panel(small_cfg)
        for col in simgen.PANEL_COLUMNS:
            assert np.array_equal(getattr(panel1, col), getattr(panel2, col))
        assert traits1 == traits2

    def test_base_rates_at_default_calibration(self):
        panel, _ = simgen.simulate_panel(SimConfig(n_consumers=512, t_days=200, seed=77))
        assert 0.15 <= panel.visit.mean() <= 0.45
        assert 0.05 <= panel.purchase.mean() <= 0.35


class TestSplitPanel:
    def test_paper_split_sizes(self):
        cfg = SimConfig(n_consumers=1024, t_days=365, seed=7)
        panel, _ = simgen.simulate_panel(cfg)
        split = simgen.split_panel(panel, (305, 335))
        assert len(split.train) == 312320
        assert len(split.validation) == 30720
        assert len(split.test) == 30720

    def test_all_in_train(self, small_panel):
        panel, _ = small_panel
        split = simgen.split_panel(panel, (60, 60))
        assert len(split.train) == len(panel)
        assert len(split.validation) == 0 and len(split.test) == 0

    def test_time_ordering(self, small_panel):
        panel, _ = small_panel
        split = simgen.split_panel(panel, (40, 50))
        assert split.test.day.min() >= split.train.day.max()
        assert len(split.train) + len(split.validation) + len(split.test) == len(panel)

    def test_bad_boundaries(self, small_panel):
        panel, _ = small_panel
        with pytest.raises(ValueError):
            simgen.split_panel(panel, (50, 40))

    def test_consumer_mode_keeps_consumers_whole(self, small_panel):
        panel, _ = small_panel
        split = simgen.split_panel(panel, (40, 50), mode="consumer", seed=1)
        train_ids = set(split.train.consumer_id.tolist())
        test_ids = set(split.test.consumer_id.tolist())
        assert not train_ids & test_ids
        assert len(split.train) + len(split.validation) + len(split.test) == len(panel)


class TestCsvRoundTrip:
    def test_panel_round_trip(self, tmp_path, small_panel):
        panel, traits = small_panel
        p = tmp_path / "panel.csv"
        simgen.write_panel_csv(panel, p)
        back = simgen.read_panel_csv(p)
        for col in simgen.PANEL_COLUMNS:
            assert np.array_equal(getattr(panel, col), getattr(back, col))
        header = p.read_text().splitlines()[0]
        assert header == "consumer_id,day,sale1,sale2,campaign,coupon,push,price,visit,purchase"

    def test_price_equation_rederivable_from_csvs(self, tmp_path, small_panel):
        panel, traits = small_panel
        simgen.write_panel_csv(panel, tmp_path / "panel.csv")
        simgen.write_traits_csv(traits, tmp_path / "traits.csv")
        back = simgen.read_panel_csv(tmp_path / "panel.csv")
        back_traits = simgen.read_traits_csv(tmp_path / "traits.csv")
        r = np.array([back_traits[c].coupon_depth_r for c in back.consumer_id])
        rederived = (
            100.0 - 5.0 * back.sale1 - 3.0 * back.sale2 - 5.0 * back.campaign - r * back.coupon
        )
        assert np.array_equal(back.price, rederived)

    def test_traits_round_trip(self, tmp_path, small_panel):
        _, traits = small_panel
        p = tmp_path / "traits.csv"
        simgen.write_traits_csv(traits, p)
        back = simgen.read_traits_csv(p)
        assert back.keys() == traits.keys()
        for cid in traits:
            assert back[cid].alpha == pytest.approx(traits[cid].alpha, rel=1e-12)
        assert p.read_text().splitlines()[0] == "consumer_id,alpha,gamma,beta,r"
