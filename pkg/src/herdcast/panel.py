"""County-year indicator panel: loading, cleaning, scaling, synthetic fixtures.

The panel is the pipeline's single source of truth: one row per
(county, year), sixteen herd-level operational indicators per row.  All
downstream stages consume either the raw panel, its min-max normalized
form (values in [0, 1]) or its z-scored form.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

# Canonical modeling schema.  The source database names a couple more
# indicators (seasonal calving variants); extra columns are ignored on load.
DEFAULT_FEATURES: list[str] = [
    "Number of Herds",
    "Calving Interval (days)",
    "6-week Calving Rate (%)",
    "Calves per Cow per Year",
    "Average Lactations",
    "Current Replacement Rate (%)",
    "Potential Replacement Rate (%)",
    "Cows Culled in Period (%)",
    "Heifers calved 22-26 mths of age (%)",
    "Mortality - Dead at Birth (%)",
    "Mortality - Dead at 28 Days (%)",
    "Replacements bred to Dairy AI (%)",
    "Births with a known sire (%)",
    "Births with calving survey data (%)",
    "Recycled Cows (%)",
    "Females not Calved in Period (%)",
]

# Direction in which "more" is operationally better.  Used to calibrate
# component signs so every pillar reads higher-is-better; overridable in config.
DEFAULT_ORIENTATION: dict[str, str] = {
    "Number of Herds": "beneficial",
    "Calving Interval (days)": "detrimental",
    "6-week Calving Rate (%)": "beneficial",
    "Calves per Cow per Year": "beneficial",
    "Average Lactations": "beneficial",
    "Current Replacement Rate (%)": "detrimental",
    "Potential Replacement Rate (%)": "detrimental",
    "Cows Culled in Period (%)": "detrimental",
    "Heifers calved 22-26 mths of age (%)": "beneficial",
    "Mortality - Dead at Birth (%)": "detrimental",
    "Mortality - Dead at 28 Days (%)": "detrimental",
    "Replacements bred to Dairy AI (%)": "beneficial",
    "Births with a known sire (%)": "beneficial",
    "Births with calving survey data (%)": "beneficial",
    "Recycled Cows (%)": "beneficial",
    "Females not Calved in Period (%)": "detrimental",
}

# Plausible raw ranges per indicator; the fixture generator maps its latent
# mixtures into these so generated files survive the structural screens.
FEATURE_RANGES: dict[str, tuple[float, float]] = {
    "Number of Herds": (400.0, 3200.0),
    "Calving Interval (days)": (360.0, 420.0),
    "6-week Calving Rate (%)": (45.0, 90.0),
    "Calves per Cow per Year": (0.80, 1.10),
    "Average Lactations": (3.0, 5.0),
    "Current Replacement Rate (%)": (12.0, 30.0),
    "Potential Replacement Rate (%)": (15.0, 35.0),
    "Cows Culled in Period (%)": (8.0, 25.0),
    "Heifers calved 22-26 mths of age (%)": (40.0, 85.0),
    "Mortality - Dead at Birth (%)": (1.0, 6.0),
    "Mortality - Dead at 28 Days (%)": (1.5, 8.0),
    "Replacements bred to Dairy AI (%)": (30.0, 90.0),
    "Births with a known sire (%)": (55.0, 98.0),
    "Births with calving survey data (%)": (40.0, 95.0),
    "Recycled Cows (%)": (2.0, 18.0),
    "Females not Calved in Period (%)": (5.0, 25.0),
}

IRISH_COUNTIES: list[str] = [
    "Carlow", "Cavan", "Clare", "Cork", "Donegal", "Dublin", "Galway",
    "Kerry", "Kildare", "Kilkenny", "Laois", "Leitrim", "Limerick",
    "Longford", "Louth", "Mayo", "Meath", "Monaghan", "Offaly",
    "Roscommon", "Sligo", "Tipperary", "Waterford", "Westmeath",
    "Wexford", "Wicklow",
]


class PanelError(ValueError):
    """Base class for panel input problems (maps to CLI exit code 2)."""


class SchemaError(PanelError):
    pass


class ParseError(PanelError):
    pass


class ValidationError(PanelError):
    pass


@dataclass(frozen=True)
class CountyYearKey:
    county_id: int
    county_name: str
    year: int


@dataclass
class CleaningReport:
    cells_cleaned: int = 0
    rows_affected: int = 0
    counties_dropped: list[str] = field(default_factory=list)


@dataclass
class IndicatorPanel:
    keys: list[CountyYearKey]
    values: np.ndarray                 # (N_obs, p)
    feature_names: list[str]
    feature_orientation: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_ORIENTATION))
    cleaning: CleaningReport = field(default_factory=CleaningReport)

    @property
    def county_names(self) -> list[str]:
        seen: dict[str, None] = {}
        for k in self.keys:
            seen.setdefault(k.county_name, None)
        return list(seen)

    @property
    def years(self) -> list[int]:
        return sorted({k.year for k in self.keys})

    @property
    def n_counties(self) -> int:
        return len(self.county_names)

    def orientation_signs(self) -> np.ndarray:
        """+1 for beneficial features, -1 for detrimental ones."""
        return np.array([1.0 if self.feature_orientation.get(f, "beneficial") == "beneficial" else -1.0
                         for f in self.feature_names])

    def to_year_tensor(self) -> np.ndarray:
        """Reshape to (T, N_c, p); requires a complete rectangular panel."""
        counties, years = self.county_names, self.years
        index = {(k.county_name, k.year): i for i, k in enumerate(self.keys)}
        out = np.empty((len(years), len(counties), self.values.shape[1]))
        for t, year in enumerate(years):
            for c, name in enumerate(counties):
                out[t, c] = self.values[index[(name, year)]]
        return out


@dataclass
class ScalerParams:
    feature_names: list[str]
    minimum: np.ndarray
    maximum: np.ndarray
    mean: np.ndarray
    std: np.ndarray


def _is_percentage(name: str) -> bool:
    return "%" in name


def _structurally_impossible(name: str, value: float) -> bool:
    if value < 0.0:
        return True
    return _is_percentage(name) and value > 100.0


def load_panel(path, schema: list[str] | None = None,
               orientation: dict[str, str] | None = None) -> IndicatorPanel:
    """Read a `county,year,<features>` CSV into a validated, cleaned panel.

    Structurally impossible cells (negative values, percentages outside
    [0, 100]) and blank cells are treated as missing and filled by linear
    interpolation along each county's series, with nearest-value extension at
    the ends.  A county whose series is entirely missing for some feature is
    dropped and reported.  Rows come back sorted by (county_id, year).
    """
    schema = list(schema) if schema is not None else list(DEFAULT_FEATURES)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, expected a header row") from None
        header = [h.strip() for h in header]
        if "county" not in header or "year" not in header:
            raise SchemaError(f"{path}: header must contain 'county' and 'year' columns")
        missing = [f for f in schema if f not in header]
        if missing:
            raise SchemaError(f"{path}: missing feature column(s): {missing}")
        col = {name: header.index(name) for name in ["county", "year"] + schema}

        rows: list[tuple[str, int, list[float | None]]] = []
        seen: set[tuple[str, int]] = set()
        report = CleaningReport()
        for lineno, raw in enumerate(reader, start=2):
            if not raw or all(not cell.strip() for cell in raw):
                continue
            if len(raw) < len(header):
                raise ParseError(f"{path}:{lineno}: expected {len(header)} fields, got {len(raw)}")
            county = raw[col["county"]].strip()
            try:
                year = int(raw[col["year"]])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: year {raw[col['year']]!r} is not an integer") from None
            key = (county, year)
            if key in seen:
                raise ValidationError(f"{path}:{lineno}: duplicate (county, year) = ({county}, {year})")
            seen.add(key)
            vals: list[float | None] = []
            dirty = False
            for name in schema:
                cell = raw[col[name]].strip()
                if not cell:
                    vals.append(None)
                    dirty = True
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(f"{path}:{lineno}: column {name!r} value {cell!r} is not numeric") from None
                if _structurally_impossible(name, v):
                    vals.append(None)
                    report.cells_cleaned += 1
                    dirty = True
                else:
                    vals.append(v)
            if dirty:
                report.rows_affected += 1
            rows.append((county, year, vals))

    if not rows:
        raise SchemaError(f"{path}: no data rows")

    counties = sorted({r[0] for r in rows})
    county_id = {c: i for i, c in enumerate(counties)}
    by_county: dict[str, list[tuple[int, list[float | None]]]] = {c: [] for c in counties}
    for county, year, vals in rows:
        by_county[county].append((year, vals))

    kept_keys: list[CountyYearKey] = []
    kept_vals: list[np.ndarray] = []
    for county in counties:
        series = sorted(by_county[county])
        years = [y for y, _ in series]
        if years != list(range(years[0], years[-1] + 1)):
            raise ValidationError(f"{county}: years {years} are not contiguous")
        grid = np.array([[np.nan if v is None else v for v in vals] for _, vals in series])
        filled, droppable = _interpolate_series(grid, np.asarray(years, dtype=float))
        if droppable:
            report.counties_dropped.append(county)
            continue
        for (year, _), vec in zip(series, filled):
            kept_keys.append(CountyYearKey(county_id[county], county, year))
            kept_vals.append(vec)

    if not kept_keys:
        raise ValidationError(f"{path}: every county was dropped during cleaning")

    order = np.lexsort(([k.year for k in kept_keys], [k.county_id for k in kept_keys]))
    panel = IndicatorPanel(
        keys=[kept_keys[i] for i in order],
        values=np.array([kept_vals[i] for i in order]),
        feature_names=schema,
        feature_orientation=dict(orientation) if orientation else dict(DEFAULT_ORIENTATION),
        cleaning=report,
    )
    return panel


def _interpolate_series(grid: np.ndarray, years: np.ndarray) -> tuple[np.ndarray, bool]:
    """Fill NaNs per column by linear interpolation over years.

    np.interp extends flat beyond the first/last observed value, which is the
    nearest-value end rule.  Returns (filled grid, True-if-unfillable).
    """
    out = grid.copy()
    for j in range(grid.shape[1]):
        column = grid[:, j]
        ok = np.isfinite(column)
        if not ok.any():
            return out, True
        if not ok.all():
            out[:, j] = np.interp(years, years[ok], column[ok])
    return out, False


def save_panel_csv(panel: IndicatorPanel, path, provenance: list[str] | None = None) -> None:
    """Write the canonical panel CSV; optional per-row provenance column."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["county", "year"] + panel.feature_names
        if provenance is not None:
            header.append("provenance")
        writer.writerow(header)
        for i, key in enumerate(panel.keys):
            row = [key.county_name, key.year] + [repr(float(v)) for v in panel.values[i]]
            if provenance is not None:
                row.append(provenance[i])
            writer.writerow(row)


def _fit_scaler(values: np.ndarray, feature_names: list[str]) -> ScalerParams:
    return ScalerParams(
        feature_names=list(feature_names),
        minimum=values.min(axis=0),
        maximum=values.max(axis=0),
        mean=values.mean(axis=0),
        std=values.std(axis=0, ddof=1),
    )


def minmax_fit_apply(panel: IndicatorPanel) -> tuple[IndicatorPanel, ScalerParams]:
    """Min-max scale every feature into [0, 1]; constant features are an error."""
    params = _fit_scaler(panel.values, panel.feature_names)
    span = params.maximum - params.minimum
    flat = np.flatnonzero(span <= 0)
    if flat.size:
        raise ValidationError(f"constant feature(s): {[panel.feature_names[i] for i in flat]}")
    scaled = IndicatorPanel(
        keys=list(panel.keys),
        values=minmax_apply(panel.values, params),
        feature_names=list(panel.feature_names),
        feature_orientation=dict(panel.feature_orientation),
        cleaning=panel.cleaning,
    )
    return scaled, params


def minmax_apply(values: np.ndarray, params: ScalerParams) -> np.ndarray:
    return (values - params.minimum) / (params.maximum - params.minimum)


def minmax_invert(values: np.ndarray, params: ScalerParams) -> np.ndarray:
    return values * (params.maximum - params.minimum) + params.minimum


def standardize(panel: IndicatorPanel) -> tuple[np.ndarray, ScalerParams]:
    """Z-score every feature (sample std, N-1 denominator)."""
    params = _fit_scaler(panel.values, panel.feature_names)
    flat = np.flatnonzero(params.std <= 0)
    if flat.size:
        raise ValidationError(f"zero-variance feature(s): {[panel.feature_names[i] for i in flat]}")
    return zscore_apply(panel.values, params), params


def zscore_apply(values: np.ndarray, params: ScalerParams) -> np.ndarray:
    return (values - params.mean) / params.std


def zscore_invert(values: np.ndarray, params: ScalerParams) -> np.ndarray:
    return values * params.std + params.mean


def generate_fixture(n_counties: int, years: range, seed: int, latent_rank: int,
                     noise: float = 0.02,
                     feature_names: list[str] | None = None) -> IndicatorPanel:
    """Deterministic synthetic panel: indicators are linear mixtures of
    ``latent_rank`` smooth per-county time trends plus bounded uniform noise.

    With ``noise=0`` the standardized panel has exactly ``latent_rank``
    nonzero covariance eigenvalues, so component extraction recovers the
    planted structure.
    """
    feature_names = list(feature_names) if feature_names is not None else list(DEFAULT_FEATURES)
    p = len(feature_names)
    if n_counties < 2:
        raise PanelError("n_counties must be at least 2")
    if latent_rank < 1 or latent_rank > p:
        raise PanelError(f"latent_rank must be in [1, {p}]")
    if not (0.0 <= noise <= 0.1):
        raise PanelError("noise must be in [0, 0.1]")

    rng = np.random.default_rng(seed)
    if n_counties <= len(IRISH_COUNTIES):
        names = IRISH_COUNTIES[:n_counties]
    else:
        names = IRISH_COUNTIES + [f"Region{i:02d}" for i in range(n_counties - len(IRISH_COUNTIES))]
    names = sorted(names)
    year_list = list(years)
    if not year_list:
        raise PanelError("years range is empty")
    t_mid = (year_list[0] + year_list[-1]) / 2.0
    half_span = max((year_list[-1] - year_list[0]) / 2.0, 1.0)

    # Latent trend r for county c: base in [0.3, 0.7], slope bounded so the
    # trajectory stays inside [0.22, 0.78] without clipping and leaves headroom
    # for multi-year extrapolation beyond the observed window.
    base = rng.uniform(0.3, 0.7, size=(n_counties, latent_rank))
    slope = rng.uniform(-0.08, 0.08, size=(n_counties, latent_rank)) / half_span
    mixing = rng.uniform(0.05, 1.0, size=(latent_rank, p))
    mixing /= mixing.sum(axis=0, keepdims=True)

    keys: list[CountyYearKey] = []
    rows: list[np.ndarray] = []
    for c, name in enumerate(names):
        for year in year_list:
            latent = base[c] + slope[c] * (year - t_mid)
            unit = latent @ mixing
            if noise > 0.0:
                unit = unit + rng.uniform(-noise, noise, size=p)
            lo = np.array([FEATURE_RANGES.get(f, (0.0, 1.0))[0] for f in feature_names])
            hi = np.array([FEATURE_RANGES.get(f, (0.0, 1.0))[1] for f in feature_names])
            rows.append(lo + (hi - lo) * unit)
            keys.append(CountyYearKey(c, name, year))
    return IndicatorPanel(keys=keys, values=np.array(rows), feature_names=feature_names)
