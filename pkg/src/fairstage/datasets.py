"""Raw-CSV ingestion and binarization for Adult, COMPAS and German Credit.

Each builtin recipe maps a raw table to six binary features and a binary
label. ``estimate_distribution`` then turns the binarized rows into an
empirical joint distribution over any ordered subset of those features.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import pandas as pd

from .model import FeatureSpace, InputError, JointDistribution

# EU-28 members as spelled in Adult's native-country vocabulary; the UK
# appears as England and Scotland. Other members do not occur in the data.
ADULT_EU_COUNTRIES = frozenset(
    {
        "England",
        "Scotland",
        "France",
        "Germany",
        "Greece",
        "Holand-Netherlands",
        "Hungary",
        "Ireland",
        "Italy",
        "Poland",
        "Portugal",
    }
)

ADULT_COLUMNS = (
    "age", "workclass", "fnlwgt", "education", "education-num", "marital-status",
    "occupation", "relationship", "race", "sex", "capital-gain", "capital-loss",
    "hours-per-week", "native-country", "income",
)  # fmt: skip

GERMAN_COLUMNS = (
    "checking", "duration", "credit-history", "purpose", "amount", "savings",
    "employment", "installment-rate", "personal-status", "debtors", "residence",
    "property", "age", "installment-plans", "housing", "existing-credits", "job",
    "liable", "telephone", "foreign-worker", "credit",
)  # fmt: skip

# Matched case-insensitively as substrings of COMPAS c_charge_desc.
COMPAS_DRUG_KEYWORDS = (
    "cocaine", "cannabis", "marijuana", "heroin", "methylenedioxy", "methylened",
    "mdma", "ecstasy", "amphetamine", "meth/", "oxycodone", "hydromorphone",
    "hydrocodone", "alprazolam", "clonazepam", "lorazepam", "carisoprodol",
    "codeine", "morphine", "methadone", "fentanyl", "buprenorphine", "phentermine",
    "lsd", "ethylone", "butylone", "benzylpiperazine", "methylethcathinone",
    "phenylpipe", "xlr11", "jwh-", "amobarbital", "steroid", "contr subst",
    "controlled sub", "cont sub", "control substance", "drug",
    "possession of paraphernalia", "prescript",
)  # fmt: skip

COMPAS_RACES = ("Caucasian", "African-American")


@dataclass
class IngestReport:
    dataset: str
    sources: list[str]
    rows_read: int = 0
    rows_filtered: int = 0
    rows_skipped: int = 0
    rows_kept: int = 0
    label_inverted: bool = False
    notes: list[str] = field(default_factory=list)
    marginals: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class FeatureRule:
    name: str
    columns: tuple[str, ...]
    description: str
    predicate: Callable[[pd.DataFrame], pd.Series]


def _rule(name: str, column: str, description: str, test: Callable[[pd.Series], pd.Series]) -> FeatureRule:
    return FeatureRule(name, (column,), description, lambda df: test(df[column]))


@dataclass(frozen=True)
class BinarizationRecipe:
    dataset: str
    reader: Callable[[Sequence[Path], IngestReport], pd.DataFrame]
    features: tuple[FeatureRule, ...]
    label: FeatureRule
    row_filter: Callable[[pd.DataFrame], pd.Series] | None = None
    filter_columns: tuple[str, ...] = ()
    filter_description: str = ""
    numeric_columns: tuple[str, ...] = ()
    notes: tuple[str, ...] = ()

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features)

    @property
    def required_columns(self) -> list[str]:
        cols = [c for f in (*self.features, self.label) for c in f.columns]
        return list(dict.fromkeys([*cols, *self.filter_columns, *self.numeric_columns]))


@dataclass(frozen=True, eq=False)
class RecordBatch:
    features: tuple[str, ...]
    bits: np.ndarray  # (n, n_features) of 0/1
    labels: np.ndarray  # (n,) of 0/1
    report: IngestReport | None = None

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8).reshape(-1, len(self.features))
        labels = np.asarray(self.labels, dtype=np.uint8).reshape(-1)
        if bits.shape[0] != labels.size:
            raise InputError(f"{bits.shape[0]} feature rows but {labels.size} labels")
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.labels.size

    def column(self, name: str) -> np.ndarray:
        return self.bits[:, self.features.index(name)]


def _read_csv(path: Path, report: IngestReport, **kwargs) -> pd.DataFrame:
    bad = []

    def on_bad(line):
        bad.append(line)
        return None

    try:
        df = pd.read_csv(path, engine="python", on_bad_lines=on_bad, dtype=str, **kwargs)
    except FileNotFoundError:
        raise InputError(f"no such file: {path}") from None
    report.rows_skipped += len(bad)
    return df


def _read_adult(paths, report):
    frames = []
    for path in paths:
        # adult.test starts with a "|1x3 Cross validator" banner line
        frames.append(
            _read_csv(Path(path), report, names=list(ADULT_COLUMNS), skipinitialspace=True, comment="|")
        )
    df = pd.concat(frames, ignore_index=True)
    df = df.dropna(how="all")
    df["income"] = df["income"].str.rstrip(".")
    return df


def _read_german(paths, report):
    frames = [_read_csv(Path(p), report, sep=" ", names=list(GERMAN_COLUMNS), header=None) for p in paths]
    return pd.concat(frames, ignore_index=True)


def _read_header_csv(paths, report):
    frames = [_read_csv(Path(p), report) for p in paths]
    return pd.concat(frames, ignore_index=True)


def _num(s: pd.Series) -> pd.Series:
    return pd.to_numeric(s, errors="coerce")


def _compas_sentence_days(df: pd.DataFrame) -> pd.Series:
    jail_in = pd.to_datetime(df["c_jail_in"], errors="coerce")
    jail_out = pd.to_datetime(df["c_jail_out"], errors="coerce")
    days = (jail_out - jail_in).dt.total_seconds() / 86400.0
    return days.fillna(0.0)


def _compas_drugs(s: pd.Series) -> pd.Series:
    text = s.fillna("").str.lower()
    hit = pd.Series(False, index=s.index)
    for kw in COMPAS_DRUG_KEYWORDS:
        hit |= text.str.contains(kw, regex=False)
    return hit


ADULT = BinarizationRecipe(
    dataset="adult",
    reader=_read_adult,
    features=(
        _rule("sex", "sex", "sex == Male", lambda s: s == "Male"),
        _rule("age", "age", "age > 35", lambda s: _num(s) > 35),
        _rule(
            "native-country",
            "native-country",
            "native-country in EU-28 or United-States",
            lambda s: s.isin(ADULT_EU_COUNTRIES | {"United-States"}),
        ),
        _rule("education", "education", "education in {Bachelors, Masters}", lambda s: s.isin(["Bachelors", "Masters"])),
        _rule("hours-per-week", "hours-per-week", "hours-per-week > 35", lambda s: _num(s) > 35),
        _rule("relationship", "relationship", "relationship in {Husband, Wife}", lambda s: s.isin(["Husband", "Wife"])),
    ),
    label=_rule("income", "income", "income == >50K", lambda s: s == ">50K"),
    numeric_columns=("age", "hours-per-week"),
    notes=(
        "all supplied files are concatenated (use adult.data and adult.test for the full 48842 rows)",
        "native-country '?' counts as not EU/US",
    ),
)

COMPAS = BinarizationRecipe(
    dataset="compas",
    reader=_read_header_csv,
    features=(
        _rule("sex", "sex", "sex == Male", lambda s: s == "Male"),
        _rule("young", "age", "age < 25", lambda s: _num(s) < 25),
        _rule("old", "age", "age > 45", lambda s: _num(s) > 45),
        FeatureRule(
            "long-sentence",
            ("c_jail_in", "c_jail_out"),
            "c_jail_out - c_jail_in > 30 days (missing timestamps count as 0)",
            lambda df: _compas_sentence_days(df) > 30,
        ),
        _rule("drugs", "c_charge_desc", "charge description names a drug offence", _compas_drugs),
        _rule("race", "race", "race == Caucasian", lambda s: s == "Caucasian"),
    ),
    label=_rule("recidivism", "two_year_recid", "two_year_recid == 1", lambda s: _num(s) == 1),
    row_filter=lambda df: df["race"].isin(COMPAS_RACES),
    filter_columns=("race",),
    filter_description="race in {Caucasian, African-American}",
    numeric_columns=("age", "two_year_recid"),
    notes=("label is two_year_recid (1 = reoffended)",),
)

GERMAN = BinarizationRecipe(
    dataset="german",
    reader=_read_german,
    features=(
        _rule("job", "employment", "employment != A71 (unemployed)", lambda s: s != "A71"),
        _rule("housing", "housing", "housing == A152 (own)", lambda s: s == "A152"),
        _rule("sex", "personal-status", "personal-status in {A91, A93, A94} (male)", lambda s: s.isin(["A91", "A93", "A94"])),
        _rule("savings", "savings", "savings in {A63, A64} (>= 500 DM)", lambda s: s.isin(["A63", "A64"])),
        _rule(
            "credit-history",
            "credit-history",
            "credit-history in {A30, A31} (all credits paid back duly)",
            lambda s: s.isin(["A30", "A31"]),
        ),
        _rule("age", "age", "age > 50", lambda s: _num(s) > 50),
    ),
    label=_rule("repaid", "credit", "credit == 1 (good)", lambda s: _num(s) == 1),
    numeric_columns=("age", "credit"),
)

RECIPES = {r.dataset: r for r in (ADULT, COMPAS, GERMAN)}

DEFAULT_FILES = {
    "adult": ("adult.data", "adult.test"),
    "compas": ("compas-scores-two-years.csv",),
    "german": ("german.data",),
}


def data_dir() -> Path:
    """Directory holding the raw dataset files ($FAIRSTAGE_DATA or ./data of the checkout)."""
    env = os.environ.get("FAIRSTAGE_DATA")
    if env:
        return Path(env)
    here = Path(__file__).resolve()
    for parent in here.parents:
        if (parent / "data" / "german.data").exists():
            return parent / "data"
    return Path.cwd() / "data"


def default_sources(dataset: str) -> list[Path]:
    if dataset not in DEFAULT_FILES:
        raise InputError(f"unknown dataset {dataset!r}; choose from {sorted(DEFAULT_FILES)}")
    return [data_dir() / name for name in DEFAULT_FILES[dataset]]


def get_recipe(dataset: str) -> BinarizationRecipe:
    try:
        return RECIPES[dataset]
    except KeyError:
        raise InputError(f"unknown dataset {dataset!r}; choose from {sorted(RECIPES)}") from None


def load_and_binarize(
    sources: str | Path | Sequence[str | Path],
    recipe: BinarizationRecipe | str,
    invert_label: bool = False,
) -> RecordBatch:
    """Read raw rows, filter them, and apply the recipe's predicates.

    Rows whose numeric fields do not parse are skipped and counted.
    """
    if isinstance(recipe, str):
        recipe = get_recipe(recipe)
    if isinstance(sources, (str, Path)):
        sources = [sources]
    paths = [Path(p) for p in sources]
    report = IngestReport(recipe.dataset, [str(p) for p in paths], label_inverted=invert_label)
    report.notes.extend(recipe.notes)
    df = recipe.reader(paths, report)
    report.rows_read = len(df) + report.rows_skipped

    missing = [c for c in recipe.required_columns if c not in df.columns]
    if missing:
        raise InputError(f"{recipe.dataset}: missing column(s) {missing}")

    if recipe.row_filter is not None:
        keep = recipe.row_filter(df).fillna(False).astype(bool)
        report.rows_filtered = int((~keep).sum())
        df = df[keep]

    parse_ok = pd.Series(True, index=df.index)
    for col in recipe.numeric_columns:
        parse_ok &= _num(df[col]).notna()
    for col in recipe.label.columns:
        parse_ok &= df[col].notna()
    report.rows_skipped += int((~parse_ok).sum())
    df = df[parse_ok]
    if len(df) == 0:
        raise InputError(f"{recipe.dataset}: no usable rows")

    cols = [rule.predicate(df) for rule in recipe.features]
    bits = np.column_stack([c.fillna(False).to_numpy(dtype=bool) for c in cols]).astype(np.uint8)
    labels = recipe.label.predicate(df).fillna(False).to_numpy(dtype=bool)
    if invert_label:
        labels = ~labels
    report.rows_kept = int(labels.size)
    report.marginals = {n: float(bits[:, j].mean()) for j, n in enumerate(recipe.feature_names)}
    report.marginals["label"] = float(labels.mean())
    return RecordBatch(recipe.feature_names, bits, labels.astype(np.uint8), report)


def estimate_distribution(batch: RecordBatch, features: Sequence[str] | None = None) -> JointDistribution:
    """Empirical cell frequencies and per-cell label frequencies (no smoothing)."""
    if batch.n == 0:
        raise InputError("cannot estimate a distribution from an empty batch")
    features = tuple(features) if features is not None else batch.features
    unknown = [f for f in features if f not in batch.features]
    if unknown:
        raise InputError(f"features {unknown} not among {list(batch.features)}")
    space = FeatureSpace(features)
    idx = np.zeros(batch.n, dtype=np.int64)
    for j, name in enumerate(features):
        idx |= batch.column(name).astype(np.int64) << j
    counts = np.bincount(idx, minlength=space.n_cells)
    positives = np.bincount(idx, weights=batch.labels.astype(float), minlength=space.n_cells)
    mass = counts / batch.n
    positive = np.divide(positives, counts, out=np.zeros(space.n_cells), where=counts > 0)
    return JointDistribution(space, mass, positive)


def load_dataset(dataset: str, sources=None, invert_label: bool = False) -> RecordBatch:
    """Binarize a builtin dataset, defaulting to the bundled raw files."""
    return load_and_binarize(sources or default_sources(dataset), get_recipe(dataset), invert_label)


# generic recipes: {"dataset", "read": {pandas read_csv kwargs}, "filter": [cond],
#                   "features": [{"name", "column", "op", "value"}], "label": cond}
_OPS = {
    "==": lambda s, v: s == v,
    "!=": lambda s, v: s != v,
    ">": lambda s, v: _num(s) > v,
    ">=": lambda s, v: _num(s) >= v,
    "<": lambda s, v: _num(s) < v,
    "<=": lambda s, v: _num(s) <= v,
    "in": lambda s, v: s.isin(list(v)),
    "contains": lambda s, v: s.fillna("").str.lower().str.contains(str(v).lower(), regex=False),
}


def _rule_from_json(doc: dict, default_name: str = "") -> FeatureRule:
    op, value = doc["op"], doc["value"]
    if op not in _OPS:
        raise InputError(f"unknown op {op!r}; choose from {sorted(_OPS)}")
    fn = _OPS[op]
    return _rule(doc.get("name", default_name), doc["column"], f"{doc['column']} {op} {value}", lambda s: fn(s, value))


def recipe_from_json(doc: dict) -> BinarizationRecipe:
    """Build a recipe from a JSON document (see module comment for the schema)."""
    read_kwargs = dict(doc.get("read", {}))
    feats = tuple(_rule_from_json(f) for f in doc["features"])
    label = _rule_from_json(doc["label"], "label")
    filters = [_rule_from_json(f) for f in doc.get("filter", [])]

    def reader(paths, report):
        frames = [_read_csv(Path(p), report, **read_kwargs) for p in paths]
        return pd.concat(frames, ignore_index=True)

    def row_filter(df):
        keep = pd.Series(True, index=df.index)
        for f in filters:
            keep &= f.predicate(df)
        return keep

    return BinarizationRecipe(
        dataset=doc.get("dataset", "custom"),
        reader=reader,
        features=feats,
        label=label,
        row_filter=row_filter if filters else None,
        filter_columns=tuple(c for f in filters for c in f.columns),
        filter_description="; ".join(f.description for f in filters),
    )


def load_recipe_file(path: str | Path) -> BinarizationRecipe:
    return recipe_from_json(json.loads(Path(path).read_text()))


__all__ = [
    "ADULT",
    "ADULT_EU_COUNTRIES",
    "COMPAS",
    "COMPAS_DRUG_KEYWORDS",
    "GERMAN",
    "RECIPES",
    "BinarizationRecipe",
    "FeatureRule",
    "IngestReport",
    "RecordBatch",
    "data_dir",
    "default_sources",
    "estimate_distribution",
    "get_recipe",
    "load_and_binarize",
    "load_dataset",
    "load_recipe_file",
    "recipe_from_json",
]
