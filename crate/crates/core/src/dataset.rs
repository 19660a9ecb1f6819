//! Enterprise indicator panels: CSV ingestion, standardization, the SME size
//! filter, rating coarsening, enterprise-level splits and a synthetic
//! generator that stands in for licensed financial data.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_INDICATORS: usize = 29;

/// Canonical indicator order. Vertex `i` of every graph is `INDICATOR_NAMES[i]`.
pub const INDICATOR_NAMES: [&str; N_INDICATORS] = [
    "total_assets",
    "cash_and_equivalents",
    "net_assets",
    "total_liabilities",
    "interest_bearing_debt",
    "net_debt",
    "cf_operating",
    "cf_investing",
    "cf_financing",
    "main_business_revenue",
    "main_business_profit",
    "ebitda",
    "net_profit",
    "main_business_profit_margin",
    "revenue_growth_rate",
    "total_asset_return_rate",
    "return_on_net_assets",
    "ebitda_over_revenue",
    "ocf_over_ebitda",
    "current_ratio",
    "quick_ratio",
    "inventory_turnover",
    "asset_liability_ratio",
    "short_term_debt_over_total_debt",
    "ibd_over_total_capital",
    "cash_ratio",
    "cash_over_total_debt",
    "interest_coverage",
    "ebitda_over_ibd",
];

const TOTAL_ASSETS: usize = 0;

/// Rating levels run 1 (best) to 10 (worst).
pub const RAW_LEVELS: u8 = 10;

pub type IndicatorRow = [f64; N_INDICATORS];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndicatorSchema {
    names: Vec<String>,
}

impl Default for IndicatorSchema {
    fn default() -> Self {
        Self { names: INDICATOR_NAMES.iter().map(|s| s.to_string()).collect() }
    }
}

impl IndicatorSchema {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.len() != N_INDICATORS {
            return Err(Error::InvalidArgument(format!(
                "schema needs {N_INDICATORS} indicators, got {}",
                names.len()
            )));
        }
        let unique: HashSet<&String> = names.iter().collect();
        if unique.len() != names.len() {
            return Err(Error::InvalidArgument("duplicate indicator names".into()));
        }
        Ok(Self { names })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// One enterprise's yearly indicator rows, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorPanel {
    pub enterprise_id: String,
    pub years: Vec<i32>,
    pub values: Vec<IndicatorRow>,
    pub labels: Vec<Option<u8>>,
}

impl IndicatorPanel {
    pub fn len(&self) -> usize {
        self.years.len()
    }

    pub fn is_empty(&self) -> bool {
        self.years.is_empty()
    }

    pub fn row_of_year(&self, year: i32) -> Option<usize> {
        self.years.binary_search(&year).ok()
    }

    pub fn label_of_year(&self, year: i32) -> Option<u8> {
        self.row_of_year(year).and_then(|r| self.labels[r])
    }

    fn mean_total_assets(&self) -> f64 {
        self.values.iter().map(|r| r[TOTAL_ASSETS]).sum::<f64>() / self.values.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SampleKey {
    pub enterprise_id: String,
    pub year: i32,
}

impl SampleKey {
    pub fn new(enterprise_id: impl Into<String>, year: i32) -> Self {
        Self { enterprise_id: enterprise_id.into(), year }
    }
}

// ---------------------------------------------------------------------------
// CSV

pub fn load_dataset(path: impl AsRef<Path>, schema: &IndicatorSchema) -> Result<Vec<IndicatorPanel>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(file, schema)
}

pub fn read_dataset<R: Read>(reader: R, schema: &IndicatorSchema) -> Result<Vec<IndicatorPanel>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let position: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let column = |name: &str| position.get(name).copied().ok_or_else(|| Error::MissingColumn(name.to_string()));

    let id_col = column("enterprise_id")?;
    let year_col = column("year")?;
    let rating_col = position.get("rating").copied();
    let value_cols = schema.names().iter().map(|n| column(n)).collect::<Result<Vec<_>>>()?;

    let mut by_id: BTreeMap<String, BTreeMap<i32, (IndicatorRow, Option<u8>)>> = BTreeMap::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let cell = |col: usize| record.get(col).unwrap_or("");
        let bad = |col: usize| Error::NonNumericCell {
            row,
            col: headers.get(col).unwrap_or("").to_string(),
            value: cell(col).to_string(),
        };

        let id = cell(id_col).to_string();
        let year: i32 = cell(year_col).parse().map_err(|_| bad(year_col))?;
        let label = match rating_col {
            Some(c) if !cell(c).is_empty() => {
                let level: i64 = cell(c).parse().map_err(|_| bad(c))?;
                if !(1..=RAW_LEVELS as i64).contains(&level) {
                    return Err(Error::LevelOutOfRange(level));
                }
                Some(level as u8)
            }
            _ => None,
        };
        let mut values = [0.0; N_INDICATORS];
        for (v, &c) in values.iter_mut().zip(&value_cols) {
            *v = cell(c).parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| bad(c))?;
        }
        let years = by_id.entry(id.clone()).or_default();
        if years.insert(year, (values, label)).is_some() {
            return Err(Error::DuplicateEnterpriseYear(id, year));
        }
    }

    Ok(by_id
        .into_iter()
        .map(|(enterprise_id, rows)| {
            let mut panel = IndicatorPanel {
                enterprise_id,
                years: Vec::with_capacity(rows.len()),
                values: Vec::with_capacity(rows.len()),
                labels: Vec::with_capacity(rows.len()),
            };
            for (year, (values, label)) in rows {
                panel.years.push(year);
                panel.values.push(values);
                panel.labels.push(label);
            }
            panel
        })
        .collect())
}

pub fn write_dataset<W: Write>(writer: W, panels: &[IndicatorPanel], schema: &IndicatorSchema) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["enterprise_id".to_string(), "year".into(), "rating".into()];
    header.extend(schema.names().iter().cloned());
    wtr.write_record(&header)?;
    for p in panels {
        for ((year, values), label) in p.years.iter().zip(&p.values).zip(&p.labels) {
            let mut rec = vec![p.enterprise_id.clone(), year.to_string(), label.map(|l| l.to_string()).unwrap_or_default()];
            rec.extend(values.iter().map(|v| v.to_string()));
            wtr.write_record(&rec)?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Standardization

/// What to do with an indicator that is constant on the fit rows.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZeroVariancePolicy {
    /// Center it and use a unit standard deviation.
    #[default]
    UnitStd,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardizer {
    pub fn apply_row(&self, row: &IndicatorRow) -> IndicatorRow {
        let mut out = *row;
        for ((v, m), s) in out.iter_mut().zip(&self.means).zip(&self.stds) {
            *v = (*v - m) / s;
        }
        out
    }

    pub fn apply(&self, panels: &[IndicatorPanel]) -> Vec<IndicatorPanel> {
        panels
            .iter()
            .map(|p| IndicatorPanel { values: p.values.iter().map(|r| self.apply_row(r)).collect(), ..p.clone() })
            .collect()
    }
}

/// Fits per-indicator mean and population standard deviation on the rows named
/// by `fit_keys`, then z-scores every row of every panel with them.
pub fn standardize(
    panels: &[IndicatorPanel],
    fit_keys: &[SampleKey],
    policy: ZeroVariancePolicy,
) -> Result<(Vec<IndicatorPanel>, Standardizer)> {
    if fit_keys.is_empty() {
        return Err(Error::InvalidArgument("standardize needs at least one fit row".into()));
    }
    let wanted: HashSet<(&str, i32)> = fit_keys.iter().map(|k| (k.enterprise_id.as_str(), k.year)).collect();
    let fit_rows: Vec<&IndicatorRow> = panels
        .iter()
        .flat_map(|p| {
            p.years
                .iter()
                .zip(&p.values)
                .filter(|(y, _)| wanted.contains(&(p.enterprise_id.as_str(), **y)))
                .map(|(_, r)| r)
        })
        .collect();
    if fit_rows.is_empty() {
        return Err(Error::InvalidArgument("none of the fit keys match a panel row".into()));
    }

    let n = fit_rows.len() as f64;
    let mut means = vec![0.0; N_INDICATORS];
    let mut stds = vec![0.0; N_INDICATORS];
    for j in 0..N_INDICATORS {
        let mean = fit_rows.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = fit_rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        means[j] = mean;
        stds[j] = if std > 1e-12 * mean.abs().max(1.0) {
            std
        } else {
            match policy {
                ZeroVariancePolicy::UnitStd => 1.0,
                ZeroVariancePolicy::Fail => return Err(Error::ZeroVariance(INDICATOR_NAMES[j].to_string())),
            }
        };
    }
    let stats = Standardizer { means, stds };
    Ok((stats.apply(panels), stats))
}

// ---------------------------------------------------------------------------
// SME filter

/// Drops enterprises whose mean raw total assets lie strictly above the
/// nearest-rank `quantile` of those means. Ties with the threshold are kept.
pub fn filter_sme(panels: Vec<IndicatorPanel>, quantile: f64) -> Result<Vec<IndicatorPanel>> {
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(Error::InvalidArgument(format!("quantile {quantile} not in (0, 1)")));
    }
    if panels.is_empty() {
        return Err(Error::EmptyAfterFilter);
    }
    let threshold = sme_threshold(&panels, quantile);
    let kept: Vec<_> = panels.into_iter().filter(|p| p.mean_total_assets() <= threshold).collect();
    if kept.is_empty() {
        return Err(Error::EmptyAfterFilter);
    }
    Ok(kept)
}

fn sme_threshold(panels: &[IndicatorPanel], quantile: f64) -> f64 {
    let mut means: Vec<f64> = panels.iter().map(IndicatorPanel::mean_total_assets).collect();
    means.sort_by(f64::total_cmp);
    let rank = ((quantile * means.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    means[rank.min(means.len()) - 1]
}

// ---------------------------------------------------------------------------
// Labels

/// Contiguous grouping of the ten rating levels into 3, 5 or 8 classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpec {
    pub num_classes: usize,
    /// Highest level belonging to each class; the last entry is always 10.
    pub upper_levels: Vec<u8>,
}

impl LabelSpec {
    pub fn new(num_classes: usize) -> Result<Self> {
        let upper_levels = match num_classes {
            3 => vec![3, 6, 10],
            5 => vec![2, 4, 6, 8, 10],
            8 => vec![1, 2, 3, 4, 5, 6, 7, 10],
            other => {
                return Err(Error::InvalidArgument(format!("num_classes must be one of 3, 5, 8 (got {other})")))
            }
        };
        Ok(Self { num_classes, upper_levels })
    }

    pub fn coarsen(&self, level: u8) -> Result<usize> {
        coarsen_label(level, self)
    }
}

pub fn coarsen_label(level: u8, spec: &LabelSpec) -> Result<usize> {
    if !(1..=RAW_LEVELS).contains(&level) {
        return Err(Error::LevelOutOfRange(level as i64));
    }
    Ok(spec.upper_levels.iter().position(|&u| level <= u).expect("last bin ends at 10"))
}

// ---------------------------------------------------------------------------
// Splits

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.8, val: 0.1, test: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitPart {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<SampleKey>,
    pub val: Vec<SampleKey>,
    pub test: Vec<SampleKey>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn part(&self, part: SplitPart) -> &[SampleKey] {
        match part {
            SplitPart::Train => &self.train,
            SplitPart::Val => &self.val,
            SplitPart::Test => &self.test,
        }
    }

    /// Every row (labeled or not) of the training enterprises; the rows
    /// standardization statistics are fitted on.
    pub fn train_rows(&self, panels: &[IndicatorPanel]) -> Vec<SampleKey> {
        let ids: HashSet<&str> = self.train.iter().map(|k| k.enterprise_id.as_str()).collect();
        panels
            .iter()
            .filter(|p| ids.contains(p.enterprise_id.as_str()))
            .flat_map(|p| p.years.iter().map(|&y| SampleKey::new(p.enterprise_id.clone(), y)))
            .collect()
    }
}

/// Splits labeled samples by enterprise so all years of one enterprise land in
/// the same part. Deterministic in `seed`.
pub fn split_dataset(
    panels: &[IndicatorPanel],
    ratios: &SplitRatios,
    seed: u64,
    labels: &LabelSpec,
) -> Result<DatasetSplit> {
    let SplitRatios { train, val, test } = *ratios;
    if !(train > 0.0 && val >= 0.0 && test >= 0.0) || ((train + val + test) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("split ratios {train}/{val}/{test} must be positive and sum to 1")));
    }
    let mut ids: Vec<&str> = panels.iter().map(|p| p.enterprise_id.as_str()).collect::<BTreeSet<_>>().into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);

    let n = ids.len();
    let n_val = (n as f64 * val).round() as usize;
    let n_test = ((n as f64 * test).round() as usize).min(n - n_val.min(n));
    let n_train = n.saturating_sub(n_val + n_test);
    let part_of: HashMap<&str, SplitPart> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let part = if i < n_train {
                SplitPart::Train
            } else if i < n_train + n_val {
                SplitPart::Val
            } else {
                SplitPart::Test
            };
            (*id, part)
        })
        .collect();

    let mut split = DatasetSplit { train: vec![], val: vec![], test: vec![], seed };
    let mut seen = vec![false; labels.num_classes];
    for p in panels {
        for (&year, label) in p.years.iter().zip(&p.labels) {
            let Some(level) = label else { continue };
            let key = SampleKey::new(p.enterprise_id.clone(), year);
            match part_of[p.enterprise_id.as_str()] {
                SplitPart::Train => {
                    seen[coarsen_label(*level, labels)?] = true;
                    split.train.push(key);
                }
                SplitPart::Val => split.val.push(key),
                SplitPart::Test => split.test.push(key),
            }
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::ClassMissingInTrain(missing));
    }
    Ok(split)
}

// ---------------------------------------------------------------------------
// Synthetic data

const FIRST_YEAR: i32 = 2014;

#[derive(Debug, Clone, Copy)]
enum Aspect {
    Solvency = 0,
    Profitability = 1,
    Operations = 2,
    Cash = 3,
    Growth = 4,
}

/// Slope of each aspect on latent quality.
const ASPECT_SLOPES: [f64; 5] = [1.0, 1.2, 0.8, 1.0, 0.6];

struct Loading {
    primary: (Aspect, f64),
    secondary: Option<(Aspect, f64)>,
    size: f64,
}

const fn ld(primary: (Aspect, f64), secondary: Option<(Aspect, f64)>, size: f64) -> Loading {
    Loading { primary, secondary, size }
}

use Aspect::*;

/// Sparse mixing of aspects (and a quality-independent size factor) into the
/// indicators, in schema order.
const LOADINGS: [Loading; N_INDICATORS] = [
    ld((Solvency, 0.5), None, 1.0),
    ld((Cash, 1.0), None, 0.5),
    ld((Solvency, 1.0), None, 0.8),
    ld((Solvency, -1.0), None, 0.8),
    ld((Solvency, -1.0), None, 0.5),
    ld((Solvency, -1.0), Some((Cash, -0.5)), 0.0),
    ld((Cash, 1.0), Some((Profitability, 0.3)), 0.0),
    ld((Growth, -0.6), None, 0.0),
    ld((Solvency, -0.7), None, 0.0),
    ld((Operations, 1.0), None, 0.5),
    ld((Profitability, 1.0), None, 0.0),
    ld((Profitability, 1.0), Some((Cash, 0.3)), 0.0),
    ld((Profitability, 1.0), None, 0.0),
    ld((Profitability, 1.0), None, 0.0),
    ld((Growth, 1.0), None, 0.0),
    ld((Profitability, 1.0), None, 0.0),
    ld((Profitability, 1.0), Some((Solvency, 0.3)), 0.0),
    ld((Profitability, 1.0), None, 0.0),
    ld((Cash, 1.0), None, 0.0),
    ld((Solvency, 1.0), Some((Cash, 0.3)), 0.0),
    ld((Solvency, 1.0), None, 0.0),
    ld((Operations, 1.0), None, 0.0),
    ld((Solvency, -1.0), None, 0.0),
    ld((Solvency, -0.8), None, 0.0),
    ld((Solvency, -1.0), None, 0.0),
    ld((Cash, 1.0), None, 0.0),
    ld((Cash, 1.0), Some((Solvency, 0.5)), 0.0),
    ld((Profitability, 1.0), Some((Solvency, 0.5)), 0.0),
    ld((Cash, 0.5), Some((Profitability, 0.8)), 0.0),
];

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub panels: Vec<IndicatorPanel>,
    /// `(enterprise_id, q)` with higher `q` meaning better credit.
    pub truth: Vec<(String, f64)>,
}

pub fn level_from_quality(q: f64) -> u8 {
    (1.0 + (10.0 * (1.0 - q)).floor()).clamp(1.0, RAW_LEVELS as f64) as u8
}

/// Latent-factor panel generator: quality `q ~ U(0,1)` drives five aspect
/// factors, which are mixed into the 29 indicators with per-year noise.
pub fn generate_synthetic(n_enterprises: usize, n_years: usize, noise_sigma: f64, seed: u64) -> Result<SyntheticData> {
    if n_enterprises < 10 {
        return Err(Error::InvalidArgument("need at least 10 enterprises".into()));
    }
    if n_years < 2 {
        return Err(Error::InvalidArgument("need at least 2 years".into()));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise sigma must be >= 0 (got {noise_sigma})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let width = n_enterprises.to_string().len().max(4);

    let mut panels = Vec::with_capacity(n_enterprises);
    let mut truth = Vec::with_capacity(n_enterprises);
    for e in 0..n_enterprises {
        let id = format!("E{e:0width$}");
        let q: f64 = rng.random();
        let size = std_normal.sample(&mut rng);
        let aspects: [f64; 5] =
            std::array::from_fn(|k| ASPECT_SLOPES[k] * q + noise_sigma * std_normal.sample(&mut rng));
        let level = level_from_quality(q);

        let mut panel = IndicatorPanel {
            enterprise_id: id.clone(),
            years: Vec::with_capacity(n_years),
            values: Vec::with_capacity(n_years),
            labels: Vec::with_capacity(n_years),
        };
        for t in 0..n_years {
            let row: IndicatorRow = std::array::from_fn(|j| {
                let l = &LOADINGS[j];
                let mut signal = l.primary.1 * aspects[l.primary.0 as usize] + l.size * size;
                if let Some((aspect, w)) = l.secondary {
                    signal += w * aspects[aspect as usize];
                }
                let noisy = signal + noise_sigma * std_normal.sample(&mut rng);
                let offset = 50.0 + 10.0 * j as f64;
                let scale = 1.0 + (j % 5) as f64;
                offset + scale * noisy
            });
            panel.years.push(FIRST_YEAR + t as i32);
            panel.values.push(row);
            panel.labels.push(Some(level));
        }
        panels.push(panel);
        truth.push((id, q));
    }
    Ok(SyntheticData { panels, truth })
}

pub fn write_truth<W: Write>(writer: W, truth: &[(String, f64)]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["enterprise_id", "q_score"])?;
    for (id, q) in truth {
        wtr.write_record([id.clone(), q.to_string()])?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
