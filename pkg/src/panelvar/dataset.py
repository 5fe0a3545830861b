"""Raw CSV ingestion, per-series transforms and weekly panel assembly.

All transforms work on pandas objects indexed by calendar dates.  Weekly
series are indexed by the Monday that opens their ISO week.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

RESPONSES = ("log_r", "log_ed", "d_gdp", "d_transit")
RESPONSE_LABELS = {
    "log_r": "log R",
    "log_ed": "log ED",
    "d_gdp": "ΔGDP",
    "d_transit": "ΔTransit",
}
VARIANTS = ("WT", "Alpha", "Delta", "Omicron")
RAW_SERIES = ("gdp", "transit", "excess_deaths_per_100k", "log_r")

# OxCGRT ordinal indicators: id -> (name, highest score).  Monetary
# indicators (E3, E4, H4, H5) are not ordinal and cannot be selected.
NPI_CODEBOOK = {
    "C1": ("Schools Closing", 3),
    "C2": ("Workplace closure", 3),
    "C3": ("Cancel public events", 2),
    "C4": ("Restrictions on gatherings", 4),
    "C5": ("Close public transport", 2),
    "C6": ("Stay at home requirement", 3),
    "C7": ("Restrictions on internal movement", 3),
    "C8": ("International travel controls", 4),
    "E1": ("Income support", 2),
    "E2": ("Debt/contract relief", 2),
    "H1": ("Public information campaigns", 2),
    "H2": ("Testing policy", 3),
    "H3": ("Contact tracing", 2),
    "H6": ("Facial coverings", 4),
    "H7": ("Vaccination policy", 5),
    "H8": ("Protection of elderly people", 3),
}
DEFAULT_NPIS = ("C1", "C2", "C4", "C5", "C8", "H2", "H6", "H8", "E1")


class DataError(ValueError):
    """Raised when input data violate a schema or transform precondition."""


class DataWarning(UserWarning):
    """Emitted for recoverable data problems (dropped countries, odd scales)."""


def _warn(msg: str) -> None:
    logger.warning(msg)
    warnings.warn(msg, DataWarning, stacklevel=3)


def week_start(dates) -> pd.DatetimeIndex:
    """Map calendar days to the Monday opening their ISO week."""
    idx = pd.DatetimeIndex(dates).normalize()
    return idx - pd.to_timedelta(idx.dayofweek, unit="D")


def iso_week_to_monday(label: str) -> pd.Timestamp:
    """Parse ``YYYY-Www`` into the Monday of that ISO week."""
    try:
        year, week = label.strip().split("-W")
        return pd.Timestamp(date.fromisocalendar(int(year), int(week), 1))
    except (ValueError, AttributeError) as exc:
        raise DataError(f"invalid ISO week label {label!r}") from exc


def _as_series(values, name: str = "series") -> pd.Series:
    s = values if isinstance(values, pd.Series) else pd.Series(values)
    if not isinstance(s.index, pd.DatetimeIndex):
        raise DataError(f"{name}: expected a date-indexed series")
    if s.index.has_duplicates:
        dup = s.index[s.index.duplicated()][0]
        raise DataError(f"{name}: duplicate date {dup.date()}")
    if not s.index.is_monotonic_increasing:
        raise DataError(f"{name}: dates must be strictly increasing")
    return s.astype(float)


# ---------------------------------------------------------------------------
# Transforms
# ---------------------------------------------------------------------------


def downsample_weekly(daily: pd.Series) -> pd.Series:
    """Average daily values within each ISO week.

    Weeks at either end of the series that are only partially covered are
    dropped.  Interior weeks must contain at least one finite value.
    """
    s = _as_series(daily, "daily series").dropna()
    if s.empty:
        raise DataError("daily series is empty")
    weeks = week_start(s.index)
    weekly = s.groupby(weeks).mean()
    first, last = s.index[0], s.index[-1]
    if first.dayofweek != 0:
        weekly = weekly.iloc[1:]
    if last.dayofweek != 6 and len(weekly):
        weekly = weekly.iloc[:-1]
    if weekly.empty:
        raise DataError("no complete ISO week in daily series")
    full = pd.date_range(weekly.index[0], weekly.index[-1], freq="7D")
    missing = full.difference(weekly.index)
    if len(missing):
        raise DataError(f"week starting {missing[0].date()} has no observations")
    weekly.index.name = "week"
    return weekly


def compute_trend_growth(gdp_history: pd.Series | Sequence[float],
                         start=None, end=None) -> float:
    """Mean weekly first difference of GDP over a reference window."""
    if isinstance(gdp_history, pd.Series):
        hist = gdp_history
        if start is not None or end is not None:
            hist = hist.loc[start:end]
        values = hist.to_numpy(dtype=float)
    else:
        values = np.asarray(gdp_history, dtype=float)
    if values.size < 52:
        raise DataError(
            f"trend window holds {values.size} weekly observations; need at least 52")
    if not np.all(np.isfinite(values)):
        raise DataError("GDP history contains non-finite values")
    return float(np.mean(np.diff(values)))


def transform_gdp(gdp, trend_growth: float, scale: float = 10.0):
    """De-trended, rescaled weekly GDP change.

    Output element ``t`` is ``(gdp[t+1] - gdp[t] - trend_growth) / scale``;
    a Series input keeps the index of the later week.
    """
    values = np.asarray(gdp, dtype=float)
    if values.size < 2:
        raise DataError("need at least two weekly GDP observations")
    if not np.all(np.isfinite(values)):
        raise DataError("GDP series contains non-finite values")
    out = (np.diff(values) - trend_growth) / scale
    if isinstance(gdp, pd.Series):
        return pd.Series(out, index=gdp.index[1:], name="d_gdp")
    return out


def transform_transit(transit: pd.Series, max_gap: int = 7,
                      scale: float = 100.0) -> pd.Series:
    """Weekly change of the trailing 7-day average of daily transit mobility.

    Runs of up to ``max_gap`` missing days are filled by linear
    interpolation.  The moving average is read on each Sunday, so the weekly
    level equals the mean over that ISO week.
    """
    s = _as_series(transit, "transit")
    s = s[s.first_valid_index():s.last_valid_index()] if s.notna().any() else s
    if s.dropna().empty:
        raise DataError("transit series is empty")
    full = s.reindex(pd.date_range(s.index[0], s.index[-1], freq="D"))
    gaps = full.isna().astype(int)
    run = gaps.groupby((gaps == 0).cumsum()).cumsum()
    if run.max() > max_gap:
        where = run.idxmax()
        raise DataError(
            f"transit gap of {int(run.max())} days ending {where.date()} exceeds {max_gap}")
    filled = full.interpolate(method="linear")
    avg = filled.rolling(7, min_periods=7).mean()
    sundays = avg[(avg.index.dayofweek == 6) & avg.notna()]
    level = pd.Series(sundays.to_numpy(), index=sundays.index - pd.Timedelta(days=6))
    out = (level.diff() / scale).iloc[1:]
    out.index.name = "week"
    out.name = "d_transit"
    return out


def transform_excess_deaths(ed_per_100k, lead_weeks: int = 3):
    """``log(ed + 1)`` with the series led by ``lead_weeks`` weekly steps."""
    values = np.asarray(ed_per_100k, dtype=float)
    bad = np.flatnonzero(values <= -1.0)
    if bad.size:
        i = int(bad[0])
        label = ed_per_100k.index[i] if isinstance(ed_per_100k, pd.Series) else i
        raise DataError(f"excess deaths per 100k must exceed -1 (week {label}: {values[i]})")
    if lead_weeks < 0:
        raise DataError("lead_weeks must be non-negative")
    logged = np.log1p(values)
    n = values.size - lead_weeks
    out = logged[lead_weeks:]
    if isinstance(ed_per_100k, pd.Series):
        return pd.Series(out, index=ed_per_100k.index[:max(n, 0)], name="log_ed")
    return out


def build_npi_features(levels: pd.DataFrame, selected: Sequence[str], *,
                       country: str = "?", frequency: str = "daily"
                       ) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Weekly NPI level and change columns, both lagged one week.

    ``levels`` holds one column per NPI id, indexed by date.  The change
    column is the week-over-week difference of the unlagged weekly level.
    """
    weekly = {}
    for npi in selected:
        if npi not in NPI_CODEBOOK:
            raise DataError(f"{npi!r} is not an ordinal OxCGRT indicator")
        if npi not in levels.columns:
            raise DataError(f"country {country}: no data for NPI {npi}")
        col = levels[npi].astype(float)
        top = NPI_CODEBOOK[npi][1]
        bad = col[(col < 0) | (col > top)]
        if len(bad):
            day = bad.index[0]
            wk = day.isocalendar()
            raise DataError(
                f"NPI {npi} score {bad.iloc[0]} outside 0-{top} for country {country}, "
                f"week {wk[0]}-W{wk[1]:02d}")
        if frequency == "daily":
            weekly[npi] = downsample_weekly(col)
        elif frequency == "weekly":
            col = col.groupby(week_start(col.index)).mean()
            weekly[npi] = col.reindex(pd.date_range(col.index[0], col.index[-1], freq="7D"))
        else:
            raise DataError(f"unknown frequency {frequency!r}")
    frame = pd.DataFrame(weekly, columns=list(selected))
    x_level = frame.shift(1)
    x_change = frame.diff().shift(1)
    return x_level, x_change


def build_variant_dummies(dominant: Sequence[str]) -> np.ndarray:
    """Cumulative variant-period indicators, columns ordered as ``VARIANTS``."""
    labels = list(dominant)
    out = np.zeros((len(labels), 4))
    for t, lab in enumerate(labels):
        if lab not in VARIANTS:
            raise DataError(f"unknown variant label {lab!r} at position {t}")
        out[t, 0] = 1.0
        out[t, 1] = float(lab != "WT")
        out[t, 2] = float(lab in ("Delta", "Omicron"))
        out[t, 3] = float(lab == "Omicron")
    return out


def impute_border_weighted(weeks, neighbors: Sequence[tuple[str, float]],
                           source: Mapping[str, pd.Series | pd.DataFrame]):
    """Border-length weighted mean of neighbouring countries' values.

    Each week uses the neighbours that have data for it; a week with no
    covered neighbour is an error.
    """
    weeks = pd.DatetimeIndex(weeks)
    if not neighbors:
        raise DataError("no neighbours supplied for imputation")
    num = den = None
    for country, km in neighbors:
        if not km > 0:
            raise DataError(f"border length with {country} must be positive")
        if country not in source:
            continue
        vals = source[country].reindex(weeks)
        avail = vals.notna()
        if isinstance(vals, pd.DataFrame):
            avail = avail.all(axis=1)
            w = avail.astype(float) * km
            contrib = vals.fillna(0.0).mul(w, axis=0)
        else:
            w = avail.astype(float) * km
            contrib = vals.fillna(0.0) * w
        num = contrib if num is None else num + contrib
        den = w if den is None else den + w
    if den is None or (den == 0).any():
        first = weeks[0] if den is None else den.index[(den == 0).to_numpy()][0]
        raise DataError(f"no neighbour coverage for week starting {pd.Timestamp(first).date()}")
    if isinstance(num, pd.DataFrame):
        return num.div(den, axis=0)
    return num / den


# ---------------------------------------------------------------------------
# Panel containers
# ---------------------------------------------------------------------------


@dataclass
class CountryPanel:
    """Aligned weekly arrays for one country (row t = week ``weeks[t]``)."""

    weeks: pd.DatetimeIndex
    Y: np.ndarray
    X_level: np.ndarray
    X_change: np.ndarray
    vacc: np.ndarray
    variant: np.ndarray

    def __len__(self) -> int:
        return len(self.weeks)


@dataclass
class PanelDataset:
    """Ragged weekly panel of responses and exogenous covariates."""

    countries: list[str]
    npi_names: list[str]
    panels: dict[str, CountryPanel]
    responses: tuple[str, ...] = RESPONSES

    def __post_init__(self):
        self.validate()

    @property
    def n_countries(self) -> int:
        return len(self.countries)

    def __getitem__(self, country: str) -> CountryPanel:
        return self.panels[country]

    def validate(self) -> None:
        k = len(self.npi_names)
        if set(self.countries) != set(self.panels):
            raise DataError("country list and panel keys disagree")
        for c in self.countries:
            p = self.panels[c]
            n = len(p.weeks)
            shapes = {"Y": (n, 4), "X_level": (n, k), "X_change": (n, k),
                      "vacc": (n,), "variant": (n, 4)}
            for attr, shape in shapes.items():
                if getattr(p, attr).shape != shape:
                    raise DataError(f"{c}: {attr} has shape {getattr(p, attr).shape}, expected {shape}")
            for attr in shapes:
                if not np.all(np.isfinite(getattr(p, attr))):
                    raise DataError(f"{c}: {attr} contains non-finite values")
            if n > 1 and np.any(np.diff(p.weeks.asi8) != 7 * 86400 * 10**9):
                raise DataError(f"{c}: weeks are not contiguous")
            v = p.variant
            if np.any(v[:, 0] != 1.0) or np.any(np.diff(v, axis=1) > 0):
                raise DataError(f"{c}: variant dummies are not monotone with WT = 1")
            if n > 1 and not np.array_equal(p.X_change[1:], p.X_level[1:] - p.X_level[:-1]):
                raise DataError(f"{c}: X_change is not the difference of X_level")

    def subset(self, countries: Sequence[str]) -> "PanelDataset":
        keep = [c for c in self.countries if c in set(countries)]
        return PanelDataset(keep, list(self.npi_names), {c: self.panels[c] for c in keep})

    def drop(self, country: str) -> "PanelDataset":
        return self.subset([c for c in self.countries if c != country])

    def to_dict(self) -> dict:
        out = {"responses": list(self.responses), "npi_names": list(self.npi_names),
               "variants": list(VARIANTS), "countries": list(self.countries), "panels": {}}
        for c in self.countries:
            p = self.panels[c]
            out["panels"][c] = {
                "weeks": [d.strftime("%Y-%m-%d") for d in p.weeks],
                "Y": p.Y.tolist(), "X_level": p.X_level.tolist(),
                "X_change": p.X_change.tolist(), "vacc": p.vacc.tolist(),
                "variant": p.variant.tolist(),
            }
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "PanelDataset":
        k = len(d["npi_names"])
        panels = {}
        for c in d["countries"]:
            p = d["panels"][c]
            n = len(p["weeks"])
            panels[c] = CountryPanel(
                weeks=pd.DatetimeIndex(pd.to_datetime(p["weeks"])),
                Y=np.asarray(p["Y"], dtype=float).reshape(n, 4),
                X_level=np.asarray(p["X_level"], dtype=float).reshape(n, k),
                X_change=np.asarray(p["X_change"], dtype=float).reshape(n, k),
                vacc=np.asarray(p["vacc"], dtype=float).reshape(n),
                variant=np.asarray(p["variant"], dtype=float).reshape(n, 4),
            )
        return cls(list(d["countries"]), list(d["npi_names"]), panels)

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1))

    @classmethod
    def load_json(cls, path) -> "PanelDataset":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class CountryCharacteristics:
    """Country-by-feature table; missing entries are NaN and reported by ``missing``."""

    table: pd.DataFrame

    @property
    def features(self) -> list[str]:
        return list(self.table.columns)

    @property
    def missing(self) -> pd.DataFrame:
        return self.table.isna()

    def vector(self, feature: str, countries: Sequence[str]) -> np.ndarray:
        return self.table.reindex(list(countries))[feature].to_numpy(dtype=float)


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


@dataclass
class DataConfig:
    """Windows and cadences used when turning raw files into a panel."""

    start: str = "2020-01-01"
    end: str = "2021-12-31"
    trend_start: str = "2016-01-01"
    trend_end: str = "2019-12-31"
    excess_death_lead: int = 3
    max_transit_gap: int = 7
    gdp_scale: float = 10.0
    transit_scale: float = 100.0
    frequency: dict = field(default_factory=lambda: {
        "gdp": "weekly", "transit": "daily",
        "excess_deaths_per_100k": "daily", "log_r": "daily",
        "npi": "daily"})

    @classmethod
    def from_dict(cls, d: Mapping | None) -> "DataConfig":
        d = dict(d or {})
        cfg = cls()
        freq = dict(cfg.frequency)
        freq.update(d.pop("frequency", {}) or {})
        for key, val in d.items():
            if not hasattr(cfg, key):
                raise DataError(f"unknown data config key {key!r}")
            setattr(cfg, key, val)
        cfg.frequency = freq
        return cfg

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


_SCHEMAS = {
    "responses.csv": (["country", "date", "series", "value"], ["value"], ["date"]),
    "npi.csv": (["country", "date", "npi_id", "score"], ["score"], ["date"]),
    "vaccination.csv": (["country", "date", "total_doses", "population"],
                        ["total_doses", "population"], ["date"]),
    "variants.csv": (["country", "iso_week", "who_label"], [], []),
    "characteristics.csv": (["country", "feature", "value"], ["value"], []),
    "borders.csv": (["country_a", "country_b", "km"], ["km"], []),
}
_KEYS = {
    "responses.csv": ["country", "series", "date"],
    "npi.csv": ["country", "npi_id", "date"],
    "vaccination.csv": ["country", "date"],
    "variants.csv": ["country", "iso_week"],
    "characteristics.csv": ["country", "feature"],
    "borders.csv": ["country_a", "country_b"],
}


def read_input_csv(path, kind: str | None = None) -> pd.DataFrame:
    """Read and validate one of the documented input CSV files.

    Errors name the offending file line (the header is line 1).
    """
    path = Path(path)
    kind = kind or path.name
    columns, numeric, dates = _SCHEMAS[kind]
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.ParserError as exc:
        raise DataError(f"{path}: {exc}") from exc
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    df = df[columns].copy()
    for col in columns:
        df[col] = df[col].str.strip()
    for col in numeric:
        blank = df[col] == ""
        conv = pd.to_numeric(df[col].where(~blank), errors="coerce")
        bad = conv.isna() & ~blank
        if kind != "characteristics.csv":
            bad |= blank
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            raise DataError(f"{path}: line {row + 2}: column {col!r} is not numeric "
                            f"({df[col].iloc[row]!r})")
        df[col] = conv.astype(float)
    for col in dates:
        conv = pd.to_datetime(df[col], format="%Y-%m-%d", errors="coerce")
        if conv.isna().any():
            row = int(np.flatnonzero(conv.isna().to_numpy())[0])
            raise DataError(f"{path}: line {row + 2}: bad date {df[col].iloc[row]!r}")
        df[col] = conv
    dup = df.duplicated(subset=_KEYS[kind], keep="first")
    if dup.any():
        row = int(np.flatnonzero(dup.to_numpy())[0])
        key = ", ".join(str(df[k].iloc[row]) for k in _KEYS[kind])
        raise DataError(f"{path}: line {row + 2}: duplicate key ({key})")
    return df


def load_characteristics(path) -> CountryCharacteristics:
    df = read_input_csv(path, "characteristics.csv")
    table = df.pivot(index="country", columns="feature", values="value")
    table.columns.name = None
    return CountryCharacteristics(table.sort_index())


def load_borders(path) -> dict[str, list[tuple[str, float]]]:
    df = read_input_csv(path, "borders.csv")
    out: dict[str, list[tuple[str, float]]] = {}
    for a, b, km in df.itertuples(index=False):
        out.setdefault(a, []).append((b, km))
        out.setdefault(b, []).append((a, km))
    return out


def _weekly(series: pd.Series, frequency: str) -> pd.Series:
    if frequency == "daily":
        return downsample_weekly(series)
    s = series.groupby(week_start(series.index)).mean()
    return s.reindex(pd.date_range(s.index[0], s.index[-1], freq="7D"))


def _longest_finite_run(frame: pd.DataFrame) -> pd.DataFrame:
    ok = frame.notna().all(axis=1).to_numpy()
    best = (0, 0)
    start = None
    for i, flag in enumerate(np.append(ok, False)):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            if i - start > best[1] - best[0]:
                best = (start, i)
            start = None
    return frame.iloc[best[0]:best[1]]


def load_panel(data_dir, spec=None, config: DataConfig | None = None) -> PanelDataset:
    """Assemble a :class:`PanelDataset` from the CSV files in ``data_dir``.

    Countries lacking a mandatory series (any of the four responses, the
    selected NPIs, vaccination or variant data that cannot be imputed) are
    dropped with a :class:`DataWarning`.
    """
    data_dir = Path(data_dir)
    config = config or DataConfig()
    npis = list(spec.npi_names) if spec is not None else list(DEFAULT_NPIS)
    for name in ("responses.csv", "npi.csv", "vaccination.csv", "variants.csv"):
        if not (data_dir / name).exists():
            raise DataError(f"missing input file {data_dir / name}")

    resp = read_input_csv(data_dir / "responses.csv")
    unknown = sorted(set(resp["series"]) - set(RAW_SERIES))
    if unknown:
        raise DataError(f"responses.csv: unknown series {unknown}")
    npi = read_input_csv(data_dir / "npi.csv")
    vac = read_input_csv(data_dir / "vaccination.csv")
    var = read_input_csv(data_dir / "variants.csv")
    borders = load_borders(data_dir / "borders.csv") if (data_dir / "borders.csv").exists() else {}

    start = week_start([pd.Timestamp(config.start)])[0]
    end = pd.Timestamp(config.end)

    variant_frames: dict[str, pd.DataFrame] = {}
    for c, grp in var.groupby("country", sort=True):
        weeks = pd.DatetimeIndex([iso_week_to_monday(w) for w in grp["iso_week"]])
        dummies = build_variant_dummies(grp["who_label"].tolist())
        frame = pd.DataFrame(dummies, index=weeks, columns=list(VARIANTS)).sort_index()
        variant_frames[c] = frame

    countries = sorted(set(resp["country"]) | set(npi["country"]))
    dropped: dict[str, str] = {}
    frames: dict[str, pd.DataFrame] = {}
    for c in countries:
        r = resp[resp["country"] == c]
        have = set(r["series"])
        lacking = [s for s in RAW_SERIES if s not in have]
        if lacking:
            dropped[c] = "missing " + ", ".join(lacking)
            continue
        n = npi[npi["country"] == c]
        if n.empty or not set(npis) <= set(n["npi_id"]):
            dropped[c] = "missing NPI data"
            continue
        if not (vac["country"] == c).any():
            dropped[c] = "missing vaccination data"
            continue
        raw = {s: g.set_index("date")["value"].sort_index()
               for s, g in r.groupby("series")}
        freq = config.frequency
        gdp_w = _weekly(raw["gdp"], freq["gdp"])
        g_c = compute_trend_growth(gdp_w, config.trend_start, config.trend_end)
        gdp_w = gdp_w.loc[start - pd.Timedelta(days=7):]
        d_gdp = (gdp_w.diff().iloc[1:] - g_c) / config.gdp_scale
        if freq["transit"] == "daily":
            d_tr = transform_transit(raw["transit"], config.max_transit_gap, config.transit_scale)
        else:
            tw = _weekly(raw["transit"], "weekly")
            d_tr = (tw.diff() / config.transit_scale).iloc[1:]
        ed_w = _weekly(raw["excess_deaths_per_100k"], freq["excess_deaths_per_100k"])
        ed_w = ed_w.reindex(pd.date_range(ed_w.index[0], ed_w.index[-1], freq="7D"))
        log_ed = transform_excess_deaths(ed_w, config.excess_death_lead)
        log_r = _weekly(raw["log_r"], freq["log_r"])

        scores = n.pivot(index="date", columns="npi_id", values="score").sort_index()
        x_lvl, x_chg = build_npi_features(scores, npis, country=c, frequency=freq["npi"])

        v = vac[vac["country"] == c].set_index("date").sort_index()
        per_cap = (v["total_doses"] / v["population"]).groupby(week_start(v.index)).mean()

        frame = pd.concat({"log_r": log_r, "log_ed": log_ed, "d_gdp": d_gdp,
                           "d_transit": d_tr}, axis=1)
        frame = frame.loc[(frame.index >= start) & (frame.index <= end)]
        if frame.empty:
            dropped[c] = "no response data in analysis window"
            continue
        frame = frame.reindex(pd.date_range(frame.index[0], frame.index[-1], freq="7D"))
        idx = frame.index
        vacc = per_cap.reindex(idx.union(per_cap.index)).ffill().reindex(idx).fillna(0.0)
        frames[c] = frame.join(x_lvl.add_prefix("lvl_")).join(x_chg.add_prefix("chg_"))
        frames[c]["vacc"] = vacc

    for c in list(frames):
        idx = frames[c].index
        vf = variant_frames.get(c)
        if vf is not None:
            dummies = vf.reindex(idx)
            before = idx < vf.index[0]
            dummies.loc[before] = [1.0, 0.0, 0.0, 0.0]
        else:
            dummies = pd.DataFrame(np.nan, index=idx, columns=list(VARIANTS))
        gap = dummies.isna().any(axis=1)
        if gap.any():
            try:
                fill = impute_border_weighted(idx[gap.to_numpy()], borders.get(c, []), variant_frames)
            except DataError as exc:
                dropped[c] = f"variant data cannot be imputed ({exc})"
                del frames[c]
                continue
            dummies.loc[gap] = fill.to_numpy()
            logger.info("%s: imputed %d variant weeks from neighbours", c, int(gap.sum()))
        frames[c] = frames[c].join(dummies)

    panels: dict[str, CountryPanel] = {}
    for c, frame in frames.items():
        run = _longest_finite_run(frame)
        if len(run) < len(frame):
            logger.info("%s: trimmed to %d of %d weeks with complete data", c, len(run), len(frame))
        if len(run) < 3:
            dropped[c] = "fewer than 3 complete weeks"
            continue
        panels[c] = CountryPanel(
            weeks=pd.DatetimeIndex(run.index),
            Y=run[list(RESPONSES)].to_numpy(dtype=float),
            X_level=run[[f"lvl_{k}" for k in npis]].to_numpy(dtype=float),
            X_change=run[[f"chg_{k}" for k in npis]].to_numpy(dtype=float),
            vacc=run["vacc"].to_numpy(dtype=float),
            variant=run[list(VARIANTS)].to_numpy(dtype=float),
        )
        for name, col in (("ΔGDP", 2), ("ΔTransit", 3)):
            if np.any(np.abs(panels[c].Y[:, col]) >= 10):
                _warn(f"{c}: {name} has values with magnitude >= 10; check input units")
    if dropped:
        _warn("dropped countries: " + "; ".join(f"{c} ({why})" for c, why in sorted(dropped.items())))
    if not panels:
        raise DataError("no country has complete data")
    return PanelDataset(sorted(panels), npis, panels)
