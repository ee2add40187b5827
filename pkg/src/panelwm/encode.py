"""Binary visible-layer encoding of panel records.

Each consumer-day becomes a 72-bit vector: 40 static/calendar bits (store,
loyalty, age decade, income quintile, month, day-of-week one-hots) and 32
history bits (visit/purchase recency windows, cumulative-count thresholds,
and 4-day lags of coupon/campaign/push actions and visit/purchase outcomes).
Only strictly-past records feed the history bits; the current day's actions
live in the separate 5-bit action vector handed to the adapters.

The feature order is frozen in a versioned schema whose hash is embedded in
every checkpoint so beliefs and adapters can never silently mix schemas.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .simgen import AGE_DECADES, ActionVector, ConsumerProfile, Panel, PanelRecord

__all__ = [
    "SCHEMA_VERSION",
    "FEATURE_NAMES",
    "FEATURE_INDEX",
    "ACTION_NAMES",
    "VISIBLE_DIM",
    "ACTION_DIM",
    "schema_hash",
    "ClampSpec",
    "paper_clamp_spec",
    "encode_visible",
    "encode_action",
    "decode_action",
    "encode_panel",
    "clamp_visible",
    "clamp_matrix",
    "eligibility_mask",
    "save_encoded",
    "load_encoded",
    "encoded_to_csv",
]

SCHEMA_VERSION = 1
WS_DEFAULT = 4
RECENCY_WINDOWS = (7, 14, 30)
CUM_THRESHOLDS = (5, 10, 30)

# non-leap synthetic year, day 0 = Monday, January 1
_MONTH_LENGTHS = (31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31)
_MONTH_OF_YEARDAY = np.repeat(np.arange(1, 13), _MONTH_LENGTHS)


def _build_feature_names(ws: int = WS_DEFAULT) -> list[str]:
    names = []
    names += [f"store_{s}" for s in range(10)]
    names += ["loyalty"]
    names += [f"age_{a}s" for a in AGE_DECADES]
    names += [f"income_q{q}" for q in range(1, 6)]
    names += [f"month_{m}" for m in range(1, 13)]
    names += [f"dow_{d}" for d in range(7)]
    names += [f"visited_within_{w}d" for w in RECENCY_WINDOWS]
    names += [f"purchased_within_{w}d" for w in RECENCY_WINDOWS]
    names += [f"cum_visits_{c}plus" for c in CUM_THRESHOLDS]
    names += [f"cum_purchases_{c}plus" for c in CUM_THRESHOLDS]
    for block in ("coupon", "campaign", "push", "visit", "purchase"):
        names += [f"{block}_lag{k}" for k in range(1, ws + 1)]
    return names


FEATURE_NAMES: tuple[str, ...] = tuple(_build_feature_names())
FEATURE_INDEX: dict[str, int] = {name: i for i, name in enumerate(FEATURE_NAMES)}
VISIBLE_DIM = len(FEATURE_NAMES)
ACTION_NAMES = ("sale1", "sale2", "campaign", "coupon", "push")
ACTION_DIM = len(ACTION_NAMES)

_ONE_HOT_BLOCKS = {
    "store": [f"store_{s}" for s in range(10)],
    "age": [f"age_{a}s" for a in AGE_DECADES],
    "income": [f"income_q{q}" for q in range(1, 6)],
    "month": [f"month_{m}" for m in range(1, 13)],
    "dow": [f"dow_{d}" for d in range(7)],
}


def schema_hash(ws: int = WS_DEFAULT) -> str:
    payload = json.dumps(
        {"version": SCHEMA_VERSION, "ws": ws, "features": _build_feature_names(ws)},
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# single-record encoding
# ---------------------------------------------------------------------------

def _calendar_bits(day: int, out: np.ndarray) -> None:
    month = int(_MONTH_OF_YEARDAY[day % 365])
    out[FEATURE_INDEX[f"month_{month}"]] = 1
    out[FEATURE_INDEX[f"dow_{day % 7}"]] = 1


def encode_visible(
    profile: ConsumerProfile,
    history: list[PanelRecord],
    day: int,
    ws: int = WS_DEFAULT,
) -> np.ndarray:
    """Encode one consumer-day from the profile and strictly-past history."""
    if ws != WS_DEFAULT:
        raise ValueError("only ws=4 is supported by the frozen schema")
    last = -1
    for rec in history:
        if rec.day <= last:
            raise ValueError("history must be sorted by day without duplicates")
        if rec.day >= day:
            raise ValueError(f"history contains day {rec.day} >= encoding day {day}")
        last = rec.day

    v = np.zeros(VISIBLE_DIM, dtype=np.uint8)
    v[FEATURE_INDEX[f"store_{profile.store}"]] = 1
    v[FEATURE_INDEX["loyalty"]] = profile.loyalty
    v[FEATURE_INDEX[f"age_{profile.age_decade}s"]] = 1
    v[FEATURE_INDEX[f"income_q{profile.income_quintile}"]] = 1
    _calendar_bits(day, v)

    by_day = {rec.day: rec for rec in history}
    cum_visits = sum(rec.visit for rec in history)
    cum_purchases = sum(rec.purchase for rec in history)
    for w in RECENCY_WINDOWS:
        window = [by_day[d] for d in range(max(0, day - w), day) if d in by_day]
        v[FEATURE_INDEX[f"visited_within_{w}d"]] = int(any(r.visit for r in window))
        v[FEATURE_INDEX[f"purchased_within_{w}d"]] = int(any(r.purchase for r in window))
    for c in CUM_THRESHOLDS:
        v[FEATURE_INDEX[f"cum_visits_{c}plus"]] = int(cum_visits >= c)
        v[FEATURE_INDEX[f"cum_purchases_{c}plus"]] = int(cum_purchases >= c)
    for k in range(1, ws + 1):
        rec = by_day.get(day - k)
        if rec is None:
            continue
        v[FEATURE_INDEX[f"coupon_lag{k}"]] = rec.actions.coupon
        v[FEATURE_INDEX[f"campaign_lag{k}"]] = rec.actions.campaign
        v[FEATURE_INDEX[f"push_lag{k}"]] = rec.actions.push
        v[FEATURE_INDEX[f"visit_lag{k}"]] = rec.visit
        v[FEATURE_INDEX[f"purchase_lag{k}"]] = rec.purchase
    return v


def encode_action(record: PanelRecord) -> np.ndarray:
    """The five current-day action bits, order (sale1, sale2, campaign, coupon, push)."""
    return record.actions.as_array()


def decode_action(bits) -> ActionVector:
    bits = np.asarray(bits).astype(int)
    if bits.shape != (ACTION_DIM,):
        raise ValueError(f"action vector must have length {ACTION_DIM}")
    return ActionVector(*[int(b) for b in bits])


# ---------------------------------------------------------------------------
# whole-panel encoding (vectorized per consumer)
# ---------------------------------------------------------------------------

def _shift(arr: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros_like(arr)
    if k < arr.size:
        out[k:] = arr[: arr.size - k]
    return out


def _within_window(events: np.ndarray, w: int) -> np.ndarray:
    """1 if any event in days [t-w, t-1], for each t."""
    csum = np.concatenate([[0], np.cumsum(events)])
    t = np.arange(events.size)
    lo = np.maximum(t - w, 0)
    return (csum[t] - csum[lo] > 0).astype(np.uint8)


def encode_panel(profiles, panel: Panel, ws: int = WS_DEFAULT) -> np.ndarray:
    """Encode every panel row; output rows align with panel rows."""
    if ws != WS_DEFAULT:
        raise ValueError("only ws=4 is supported by the frozen schema")
    n_rows = len(panel)
    out = np.zeros((n_rows, VISIBLE_DIM), dtype=np.uint8)
    prof_by_id = {p.consumer_id: p for p in profiles}

    order = np.lexsort((panel.day, panel.consumer_id))
    cid_sorted = panel.consumer_id[order]
    boundaries = np.flatnonzero(np.diff(cid_sorted)) + 1
    groups = np.split(order, boundaries)

    month_col = np.array([FEATURE_INDEX[f"month_{m}"] for m in _MONTH_OF_YEARDAY])

    for rows in groups:
        cid = int(panel.consumer_id[rows[0]])
        p = prof_by_id[cid]
        days = panel.day[rows]
        if np.any(np.diff(days) <= 0):
            raise ValueError(f"consumer {cid} has non-increasing days")
        if days[0] != 0 or days[-1] != days.size - 1:
            raise ValueError(f"consumer {cid} panel has day gaps")
        sub = out[rows]
        sub[:, FEATURE_INDEX[f"store_{p.store}"]] = 1
        sub[:, FEATURE_INDEX["loyalty"]] = p.loyalty
        sub[:, FEATURE_INDEX[f"age_{p.age_decade}s"]] = 1
        sub[:, FEATURE_INDEX[f"income_q{p.income_quintile}"]] = 1
        sub[np.arange(days.size), month_col[days % 365]] = 1
        dow_col = np.array([FEATURE_INDEX[f"dow_{d}"] for d in range(7)])
        sub[np.arange(days.size), dow_col[days % 7]] = 1

        visits = panel.visit[rows].astype(np.int64)
        purch = panel.purchase[rows].astype(np.int64)
        for w in RECENCY_WINDOWS:
            sub[:, FEATURE_INDEX[f"visited_within_{w}d"]] = _within_window(visits, w)
            sub[:, FEATURE_INDEX[f"purchased_within_{w}d"]] = _within_window(purch, w)
        cum_v = np.concatenate([[0], np.cumsum(visits)])[:-1]
        cum_p = np.concatenate([[0], np.cumsum(purch)])[:-1]
        for c in CUM_THRESHOLDS:
            sub[:, FEATURE_INDEX[f"cum_visits_{c}plus"]] = cum_v >= c
            sub[:, FEATURE_INDEX[f"cum_purchases_{c}plus"]] = cum_p >= c
        lag_sources = {
            "coupon": panel.coupon[rows],
            "campaign": panel.campaign[rows],
            "push": panel.push[rows],
            "visit": panel.visit[rows],
            "purchase": panel.purchase[rows],
        }
        for name, series in lag_sources.items():
            for k in range(1, ws + 1):
                sub[:, FEATURE_INDEX[f"{name}_lag{k}"]] = _shift(series, k)
        out[rows] = sub
    return out


# ---------------------------------------------------------------------------
# counterfactual clamping
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClampSpec:
    """Overwrite selected bits, guarded by an eligibility predicate.

    A vector is eligible iff every ``eligibility`` feature is 0 before the
    clamp; ineligible vectors pass through unchanged.
    """

    set_to_one: tuple = ()
    set_to_zero: tuple = ()
    eligibility: tuple = ()

    def __post_init__(self):
        overlap = set(self.set_to_one) & set(self.set_to_zero)
        if overlap:
            raise ValueError(f"features in both set_to_one and set_to_zero: {sorted(overlap)}")
        for name in (*self.set_to_one, *self.set_to_zero, *self.eligibility):
            if name not in FEATURE_INDEX:
                raise KeyError(f"unknown feature name {name!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "ClampSpec":
        return cls(
            set_to_one=tuple(d.get("set_to_one", ())),
            set_to_zero=tuple(d.get("set_to_zero", ())),
            eligibility=tuple(d.get("eligibility", ())),
        )

    def to_dict(self) -> dict:
        return {
            "set_to_one": list(self.set_to_one),
            "set_to_zero": list(self.set_to_zero),
            "eligibility": list(self.eligibility),
        }


def paper_clamp_spec(ws: int = WS_DEFAULT) -> ClampSpec:
    """The "purchasing without recent promotion" probe: on samples with no
    recent purchase, force a 4-day purchase streak while erasing recent
    campaign/push exposure."""
    purchase_lags = tuple(f"purchase_lag{k}" for k in range(1, ws + 1))
    return ClampSpec(
        set_to_one=purchase_lags + ("purchased_within_7d",),
        set_to_zero=tuple(f"campaign_lag{k}" for k in range(1, ws + 1))
        + tuple(f"push_lag{k}" for k in range(1, ws + 1)),
        eligibility=purchase_lags,
    )


def clamp_visible(v: np.ndarray, spec: ClampSpec):
    """Apply the clamp to one vector. Returns (clamped, eligible)."""
    v = np.asarray(v)
    if v.shape != (VISIBLE_DIM,):
        raise ValueError(f"visible vector must have length {VISIBLE_DIM}")
    elig_idx = [FEATURE_INDEX[n] for n in spec.eligibility]
    eligible = int(not elig_idx or not np.any(v[elig_idx]))
    if not eligible:
        return v.copy(), 0
    out = v.copy()
    for name in spec.set_to_one:
        out[FEATURE_INDEX[name]] = 1
    for name in spec.set_to_zero:
        out[FEATURE_INDEX[name]] = 0
    return out, 1


def eligibility_mask(matrix: np.ndarray, spec: ClampSpec) -> np.ndarray:
    elig_idx = [FEATURE_INDEX[n] for n in spec.eligibility]
    if not elig_idx:
        return np.ones(matrix.shape[0], dtype=bool)
    return ~np.any(matrix[:, elig_idx], axis=1)


def clamp_matrix(matrix: np.ndarray, spec: ClampSpec):
    """Vectorized clamp. Returns (clamped_matrix, eligible_mask); rows that
    are ineligible are returned unchanged."""
    eligible = eligibility_mask(matrix, spec)
    out = matrix.copy()
    ones = [FEATURE_INDEX[n] for n in spec.set_to_one]
    zeros = [FEATURE_INDEX[n] for n in spec.set_to_zero]
    if ones:
        out[np.ix_(eligible, ones)] = 1
    if zeros:
        out[np.ix_(eligible, zeros)] = 0
    return out, eligible


# ---------------------------------------------------------------------------
# persistence: flat binary + JSON sidecar
# ---------------------------------------------------------------------------

def save_encoded(matrix: np.ndarray, path, meta_path=None) -> None:
    path = str(path)
    meta_path = str(meta_path) if meta_path else path + ".json"
    matrix = np.ascontiguousarray(matrix, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(matrix.tobytes())
    meta = {
        "schema_version": SCHEMA_VERSION,
        "schema_hash": schema_hash(),
        "n_rows": int(matrix.shape[0]),
        "n_cols": int(matrix.shape[1]),
        "dtype": "uint8",
        "layout": "row-major, one byte per bit",
        "columns": list(FEATURE_NAMES),
    }
    with open(meta_path, "w") as f:
        json.dump(meta, f, indent=2)


def load_encoded(path, meta_path=None):
    path = str(path)
    meta_path = str(meta_path) if meta_path else path + ".json"
    with open(meta_path) as f:
        meta = json.load(f)
    if meta["schema_hash"] != schema_hash():
        raise ValueError(
            f"encoded file schema {meta['schema_hash']} does not match current schema {schema_hash()}"
        )
    raw = np.fromfile(path, dtype=np.uint8)
    return raw.reshape(meta["n_rows"], meta["n_cols"]), meta


def encoded_to_csv(matrix: np.ndarray, path) -> None:
    import pandas as pd

    pd.DataFrame(matrix, columns=list(FEATURE_NAMES)).to_csv(path, index=False)
