"""Synthetic consumer panel with known latent heterogeneity.

Each consumer carries hidden traits (price sensitivity ``alpha``, promotion
responsiveness ``gamma``, base preference ``beta``, personal coupon depth
``r``) driven by demographics plus noise. Store-level sales actions and
consumer-level coupon/push assignments produce a causal price, and visit /
purchase outcomes follow a logistic response on the latent utilities.

All draws come from named Philox streams (one per consumer / store), so the
panel is reproducible bit-for-bit regardless of generation order.
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np
import pandas as pd

from .rng import stream

__all__ = [
    "SimConfig",
    "ConsumerProfile",
    "LatentTraits",
    "ActionVector",
    "PanelRecord",
    "Panel",
    "SplitPanel",
    "draw_population",
    "latent_params",
    "assign_actions",
    "price_of",
    "step_outcomes",
    "simulate_panel",
    "split_panel",
    "write_panel_csv",
    "read_panel_csv",
    "write_traits_csv",
    "read_traits_csv",
]

# causal price formation; purchase price in currency units
PRICE_BASE = 100.0
PRICE_DROP_SALE1 = 5.0
PRICE_DROP_SALE2 = 3.0
PRICE_DROP_CAMPAIGN = 5.0

AGE_DECADES = (20, 30, 40, 50, 60)

PANEL_COLUMNS = [
    "consumer_id",
    "day",
    "sale1",
    "sale2",
    "campaign",
    "coupon",
    "push",
    "price",
    "visit",
    "purchase",
]


@dataclass(frozen=True)
class SimConfig:
    """Every knob of the data-generating process.

    Defaults are calibrated so that base rates land at roughly 30% visits
    and 19% purchases and utilities stay well inside the logistic's linear
    range (avoiding saturated, near-deterministic outcomes).
    """

    n_consumers: int = 1024
    t_days: int = 365
    seed: int = 7

    # population
    n_stores: int = 10
    loyalty_rate: float = 0.4

    # latent trait forms (softplus keeps alpha/gamma positive)
    alpha_base: float = 0.6
    alpha_income: float = -0.25
    alpha_age: float = -0.15
    alpha_noise_sd: float = 0.15
    gamma_base: float = 0.3
    gamma_loyalty: float = 0.6
    gamma_noise_sd: float = 0.1
    beta_income: float = 0.25
    beta_age: float = 0.20
    beta_loyalty: float = 0.20
    beta_noise_sd: float = 0.1
    coupon_depth_low: float = 2.0
    coupon_depth_high: float = 6.0

    # utilities
    beta_scale: float = 0.4
    w_campaign: float = 0.15
    w_push: float = 0.15
    w_coupon: float = 0.15
    price_weight: float = 0.2
    intercept_visit: float = -0.12
    intercept_purchase: float = -0.30
    noise_scale: float = 0.10

    # action assignment policy
    p_sale1: float = 0.10
    p_sale2: float = 0.15
    p_campaign: float = 0.10
    campaign_weekend_multiplier: float = 2.0
    coupon_base: float = 0.05
    coupon_loyalty: float = 0.10
    p_push: float = 0.15

    # splitting
    split_mode: str = "time"  # "time" or "consumer"
    split_boundaries: tuple = (305, 335)

    def replace(self, **kw) -> "SimConfig":
        return replace(self, **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown sim config keys: {sorted(unknown)}")
        if "split_boundaries" in d:
            d = dict(d, split_boundaries=tuple(d["split_boundaries"]))
        return cls(**d)


@dataclass(frozen=True)
class ConsumerProfile:
    consumer_id: int
    store: int
    loyalty: int
    age_decade: int
    income_quintile: int

    def __post_init__(self):
        if not 0 <= self.store <= 9:
            raise ValueError(f"store {self.store} outside [0, 9]")
        if self.loyalty not in (0, 1):
            raise ValueError("loyalty must be binary")
        if self.age_decade not in AGE_DECADES:
            raise ValueError(f"age_decade {self.age_decade} not in {AGE_DECADES}")
        if not 1 <= self.income_quintile <= 5:
            raise ValueError("income_quintile outside [1, 5]")


@dataclass(frozen=True)
class LatentTraits:
    alpha: float
    gamma: float
    beta: float
    coupon_depth_r: float

    def __post_init__(self):
        if self.alpha <= 0 or self.gamma <= 0:
            raise ValueError("alpha and gamma must be positive")
        if not 1.0 <= self.coupon_depth_r <= 10.0:
            raise ValueError("coupon_depth_r outside [1, 10]")


@dataclass(frozen=True)
class ActionVector:
    sale1: int = 0
    sale2: int = 0
    campaign: int = 0
    coupon: int = 0
    push: int = 0

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.sale1, self.sale2, self.campaign, self.coupon, self.push],
            dtype=np.uint8,
        )


@dataclass(frozen=True)
class PanelRecord:
    consumer_id: int
    day: int
    actions: ActionVector
    price: float
    visit: int
    purchase: int


@dataclass
class Panel:
    """Column-oriented panel, consumer-major then day-ascending."""

    consumer_id: np.ndarray
    day: np.ndarray
    sale1: np.ndarray
    sale2: np.ndarray
    campaign: np.ndarray
    coupon: np.ndarray
    push: np.ndarray
    price: np.ndarray
    visit: np.ndarray
    purchase: np.ndarray

    def __len__(self) -> int:
        return self.consumer_id.size

    def record(self, i: int) -> PanelRecord:
        return PanelRecord(
            consumer_id=int(self.consumer_id[i]),
            day=int(self.day[i]),
            actions=ActionVector(
                int(self.sale1[i]),
                int(self.sale2[i]),
                int(self.campaign[i]),
                int(self.coupon[i]),
                int(self.push[i]),
            ),
            price=float(self.price[i]),
            visit=int(self.visit[i]),
            purchase=int(self.purchase[i]),
        )

    def records(self):
        for i in range(len(self)):
            yield self.record(i)

    def select(self, mask: np.ndarray) -> "Panel":
        return Panel(**{k: getattr(self, k)[mask] for k in PANEL_COLUMNS})

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({k: getattr(self, k) for k in PANEL_COLUMNS})

    @classmethod
    def from_frame(cls, df: pd.DataFrame) -> "Panel":
        cols = {}
        for k in PANEL_COLUMNS:
            if k == "price":
                cols[k] = df[k].to_numpy(dtype=np.float64)
            elif k in ("consumer_id", "day"):
                cols[k] = df[k].to_numpy(dtype=np.int32)
            else:
                cols[k] = df[k].to_numpy(dtype=np.uint8)
        return cls(**cols)


@dataclass
class SplitPanel:
    train: Panel
    validation: Panel
    test: Panel
    split_meta: dict


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _softplus(x):
    return np.logaddexp(0.0, x)


def _income_norm(q):
    return (np.asarray(q, dtype=float) - 3.0) / 2.0


def _age_norm(a):
    return (np.asarray(a, dtype=float) - 40.0) / 20.0


# ---------------------------------------------------------------------------
# population and latent traits
# ---------------------------------------------------------------------------

def draw_population(n: int, seed: int, config: SimConfig | None = None) -> list[ConsumerProfile]:
    """Draw ``n`` consumer profiles. Deterministic given ``seed``."""
    if n < 1:
        raise ValueError("population size must be at least 1")
    cfg = config or SimConfig()
    rng = stream(seed, "population")
    store = rng.integers(0, cfg.n_stores, size=n)
    loyalty = (rng.random(n) < cfg.loyalty_rate).astype(int)
    age = rng.choice(np.array(AGE_DECADES), size=n)
    income = rng.integers(1, 6, size=n)
    return [
        ConsumerProfile(i, int(store[i]), int(loyalty[i]), int(age[i]), int(income[i]))
        for i in range(n)
    ]


def latent_params(profile: ConsumerProfile, seed: int, config: SimConfig | None = None) -> LatentTraits:
    """Latent traits for one consumer.

    Noise is keyed by consumer_id only, so profiles differing in a single
    demographic field share their noise draw (used to test monotonicity).
    """
    cfg = config or SimConfig()
    rng = stream(seed, "latent", profile.consumer_id)
    eps = rng.normal(0.0, 1.0, size=3)
    u_r = rng.random()
    iq = float(_income_norm(profile.income_quintile))
    an = float(_age_norm(profile.age_decade))
    alpha = float(
        _softplus(cfg.alpha_base + cfg.alpha_income * iq + cfg.alpha_age * an + cfg.alpha_noise_sd * eps[0])
    )
    gamma = float(
        _softplus(cfg.gamma_base + cfg.gamma_loyalty * profile.loyalty + cfg.gamma_noise_sd * eps[1])
    )
    beta = float(
        cfg.beta_income * iq + cfg.beta_age * an + cfg.beta_loyalty * profile.loyalty + cfg.beta_noise_sd * eps[2]
    )
    r = cfg.coupon_depth_low + (cfg.coupon_depth_high - cfg.coupon_depth_low) * float(u_r)
    return LatentTraits(alpha, gamma, beta, r)


def latent_params_all(profiles, seed: int, config: SimConfig | None = None) -> dict[int, LatentTraits]:
    return {p.consumer_id: latent_params(p, seed, config) for p in profiles}


# ---------------------------------------------------------------------------
# actions and outcomes
# ---------------------------------------------------------------------------

def _store_action_uniforms(seed: int, store: int, t_days: int) -> np.ndarray:
    return stream(seed, "store-actions", store).random((t_days, 3))


def _consumer_action_uniforms(seed: int, consumer_id: int, t_days: int) -> np.ndarray:
    return stream(seed, "consumer-actions", consumer_id).random((t_days, 2))


def _outcome_uniforms(seed: int, consumer_id: int, t_days: int) -> np.ndarray:
    return stream(seed, "outcomes", consumer_id).random((t_days, 2))


def _store_actions(cfg: SimConfig, seed: int, store: int, t_days: int) -> np.ndarray:
    """(t_days, 3) uint8 matrix of (sale1, sale2, campaign) for one store."""
    u = _store_action_uniforms(seed, store, t_days)
    days = np.arange(t_days)
    weekend = (days % 7) >= 5
    p_camp = np.where(
        weekend,
        min(1.0, cfg.p_campaign * cfg.campaign_weekend_multiplier),
        cfg.p_campaign,
    )
    out = np.empty((t_days, 3), dtype=np.uint8)
    out[:, 0] = u[:, 0] < cfg.p_sale1
    out[:, 1] = u[:, 1] < cfg.p_sale2
    out[:, 2] = u[:, 2] < p_camp
    return out


def assign_actions(profiles, day: int, seed: int, config: SimConfig | None = None, t_days: int = 365) -> dict[int, ActionVector]:
    """Action assignment for one day: store-level sales plus per-consumer
    coupon (loyalty-targeted) and push (unconditional)."""
    cfg = config or SimConfig()
    if not 0 <= day < t_days:
        raise ValueError(f"day {day} outside [0, {t_days})")
    store_rows = {}
    result = {}
    for p in profiles:
        if p.store not in store_rows:
            store_rows[p.store] = _store_actions(cfg, seed, p.store, t_days)[day]
        s1, s2, camp = store_rows[p.store]
        u = _consumer_action_uniforms(seed, p.consumer_id, t_days)[day]
        coupon = int(u[0] < cfg.coupon_base + cfg.coupon_loyalty * p.loyalty)
        push = int(u[1] < cfg.p_push)
        result[p.consumer_id] = ActionVector(int(s1), int(s2), int(camp), coupon, push)
    return result


def price_of(actions: ActionVector, coupon_depth_r: float) -> float:
    """Causal price: 100 - 5*sale1 - 3*sale2 - 5*campaign - r*coupon."""
    return (
        PRICE_BASE
        - PRICE_DROP_SALE1 * actions.sale1
        - PRICE_DROP_SALE2 * actions.sale2
        - PRICE_DROP_CAMPAIGN * actions.campaign
        - coupon_depth_r * actions.coupon
    )


def visit_utility(traits: LatentTraits, actions: ActionVector, cfg: SimConfig) -> float:
    promo = (
        cfg.w_campaign * actions.campaign
        + cfg.w_push * actions.push
        + cfg.w_coupon * actions.coupon
    )
    return cfg.beta_scale * traits.beta + traits.gamma * promo + cfg.intercept_visit


def purchase_utility(traits: LatentTraits, price: float, cfg: SimConfig) -> float:
    price_norm = (price - PRICE_BASE) / 10.0
    return cfg.beta_scale * traits.beta - cfg.price_weight * traits.alpha * price_norm + cfg.intercept_purchase


def step_outcomes(traits: LatentTraits, actions: ActionVector, price: float, rng: np.random.Generator, config: SimConfig | None = None):
    """Draw (visit, purchase) from the logistic response.

    Bernoulli(sigmoid(U / s)) is the closed form of a two-option choice with
    Gumbel noise at scale ``s``; purchase is drawn independently of visit.
    """
    cfg = config or SimConfig()
    u_v = visit_utility(traits, actions, cfg)
    u_p = purchase_utility(traits, price, cfg)
    u = rng.random(2)
    visit = int(u[0] < _sigmoid(u_v / cfg.noise_scale))
    purchase = int(u[1] < _sigmoid(u_p / cfg.noise_scale))
    return visit, purchase


# ---------------------------------------------------------------------------
# panel assembly
# ---------------------------------------------------------------------------

def simulate_panel(config: SimConfig):
    """Generate the full panel.

    Returns (panel, traits) where ``panel`` holds n_consumers * t_days rows
    in consumer-major order and ``traits`` maps consumer_id to the ground
    truth latents (kept out of every feature the models see).
    """
    cfg = config
    n, t = cfg.n_consumers, cfg.t_days
    profiles = draw_population(n, cfg.seed, cfg)
    traits = latent_params_all(profiles, cfg.seed, cfg)

    store_mat = np.stack(
        [_store_actions(cfg, cfg.seed, s, t) for s in range(cfg.n_stores)]
    )  # (n_stores, t, 3)

    total = n * t
    cid = np.empty(total, dtype=np.int32)
    day = np.empty(total, dtype=np.int32)
    acts = np.empty((total, 5), dtype=np.uint8)
    price = np.empty(total, dtype=np.float64)
    visit = np.empty(total, dtype=np.uint8)
    purchase = np.empty(total, dtype=np.uint8)

    for p in profiles:
        tr = traits[p.consumer_id]
        lo = p.consumer_id * t
        hi = lo + t
        cid[lo:hi] = p.consumer_id
        day[lo:hi] = np.arange(t)
        acts[lo:hi, :3] = store_mat[p.store]
        u_act = _consumer_action_uniforms(cfg.seed, p.consumer_id, t)
        acts[lo:hi, 3] = u_act[:, 0] < cfg.coupon_base + cfg.coupon_loyalty * p.loyalty
        acts[lo:hi, 4] = u_act[:, 1] < cfg.p_push
        a = acts[lo:hi].astype(np.float64)
        price[lo:hi] = (
            PRICE_BASE
            - PRICE_DROP_SALE1 * a[:, 0]
            - PRICE_DROP_SALE2 * a[:, 1]
            - PRICE_DROP_CAMPAIGN * a[:, 2]
            - tr.coupon_depth_r * a[:, 3]
        )
        promo = cfg.w_campaign * a[:, 2] + cfg.w_push * a[:, 4] + cfg.w_coupon * a[:, 3]
        u_v = cfg.beta_scale * tr.beta + tr.gamma * promo + cfg.intercept_visit
        price_norm = (price[lo:hi] - PRICE_BASE) / 10.0
        u_p = cfg.beta_scale * tr.beta - cfg.price_weight * tr.alpha * price_norm + cfg.intercept_purchase
        u_out = _outcome_uniforms(cfg.seed, p.consumer_id, t)
        visit[lo:hi] = u_out[:, 0] < _sigmoid(u_v / cfg.noise_scale)
        purchase[lo:hi] = u_out[:, 1] < _sigmoid(u_p / cfg.noise_scale)

    panel = Panel(
        consumer_id=cid,
        day=day,
        sale1=acts[:, 0].copy(),
        sale2=acts[:, 1].copy(),
        campaign=acts[:, 2].copy(),
        coupon=acts[:, 3].copy(),
        push=acts[:, 4].copy(),
        price=price,
        visit=visit,
        purchase=purchase,
    )
    return panel, traits


def split_panel(panel: Panel, boundaries: tuple = (305, 335), mode: str = "time", seed: int = 0) -> SplitPanel:
    """Split the panel into train/validation/test.

    Time mode (default) cuts at day boundaries: train [0, b0), validation
    [b0, b1), test [b1, T). Consumer mode assigns whole consumers to splits
    in the same proportions.
    """
    b0, b1 = boundaries
    t_max = int(panel.day.max()) + 1 if len(panel) else 0
    if not 0 <= b0 <= b1 <= t_max:
        raise ValueError(f"split boundaries {boundaries} out of order for T={t_max}")
    if mode == "time":
        train_mask = panel.day < b0
        val_mask = (panel.day >= b0) & (panel.day < b1)
        test_mask = panel.day >= b1
        meta = {"mode": "time", "boundaries": [int(b0), int(b1)], "t_days": t_max}
    elif mode == "consumer":
        ids = np.unique(panel.consumer_id)
        perm = stream(seed, "consumer-split").permutation(ids)
        n_train = int(round(len(ids) * b0 / t_max)) if t_max else 0
        n_val = int(round(len(ids) * (b1 - b0) / t_max)) if t_max else 0
        train_ids = set(perm[:n_train].tolist())
        val_ids = set(perm[n_train : n_train + n_val].tolist())
        train_mask = np.isin(panel.consumer_id, list(train_ids))
        val_mask = np.isin(panel.consumer_id, list(val_ids))
        test_mask = ~(train_mask | val_mask)
        meta = {"mode": "consumer", "boundaries": [int(b0), int(b1)], "t_days": t_max}
    else:
        raise ValueError(f"unknown split mode {mode!r}")
    return SplitPanel(
        train=panel.select(train_mask),
        validation=panel.select(val_mask),
        test=panel.select(test_mask),
        split_meta=meta,
    )


# ---------------------------------------------------------------------------
# CSV round trips
# ---------------------------------------------------------------------------

def write_panel_csv(panel: Panel, path) -> None:
    # %.17g round-trips float64 exactly, keeping the price equation
    # re-derivable bit-for-bit from panel.csv + traits.csv
    df = panel.to_frame()
    df.to_csv(path, index=False, float_format="%.17g")


def read_panel_csv(path) -> Panel:
    return Panel.from_frame(pd.read_csv(path, float_precision="round_trip"))


def write_traits_csv(traits: dict[int, LatentTraits], path) -> None:
    rows = sorted(traits.items())
    df = pd.DataFrame(
        {
            "consumer_id": [cid for cid, _ in rows],
            "alpha": [t.alpha for _, t in rows],
            "gamma": [t.gamma for _, t in rows],
            "beta": [t.beta for _, t in rows],
            "r": [t.coupon_depth_r for _, t in rows],
        }
    )
    df.to_csv(path, index=False, float_format="%.17g")


def read_traits_csv(path) -> dict[int, LatentTraits]:
    df = pd.read_csv(path, float_precision="round_trip")
    return {
        int(row.consumer_id): LatentTraits(row.alpha, row.gamma, row.beta, row.r)
        for row in df.itertuples()
    }
