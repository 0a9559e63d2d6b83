//! Long-format panel CSV: one row per (unit, period), category columns side
//! by side with covariates.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dimensions, PanelData, PanelLabels};

pub const INTERCEPT: &str = "intercept";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CategoryMode {
    #[default]
    Counts,
    Shares,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestionSpec {
    pub unit_column: String,
    pub time_column: String,
    pub category_columns: Vec<String>,
    #[serde(default)]
    pub category_mode: CategoryMode,
    /// Cluster covariates without the intercept, which is added.
    #[serde(default)]
    pub cluster_covariates: Vec<String>,
    #[serde(default)]
    pub global_covariates: Vec<String>,
    /// Periods by which covariates lead the response.
    #[serde(default = "default_lag")]
    pub lag: usize,
    #[serde(default = "default_true")]
    pub standardize: bool,
    /// Pseudo-trials per cell for share data.
    #[serde(default = "default_precision")]
    pub share_precision: u32,
}

fn default_lag() -> usize {
    1
}

fn default_true() -> bool {
    true
}

fn default_precision() -> u32 {
    1000
}

impl IngestionSpec {
    pub fn new(unit_column: &str, time_column: &str, category_columns: Vec<String>) -> Self {
        IngestionSpec {
            unit_column: unit_column.into(),
            time_column: time_column.into(),
            category_columns,
            category_mode: CategoryMode::Counts,
            cluster_covariates: Vec::new(),
            global_covariates: Vec::new(),
            lag: 1,
            standardize: true,
            share_precision: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.category_columns.len() < 2 {
            return Err(Error::config("need at least two category columns"));
        }
        if self.share_precision == 0 {
            return Err(Error::config("share precision must be positive"));
        }
        let mut seen = HashMap::new();
        let roles = [
            ("unit", std::slice::from_ref(&self.unit_column)),
            ("time", std::slice::from_ref(&self.time_column)),
            ("category", &self.category_columns[..]),
            ("cluster covariate", &self.cluster_covariates[..]),
            ("global covariate", &self.global_covariates[..]),
        ];
        for (role, names) in roles {
            for name in names {
                if name == INTERCEPT {
                    return Err(Error::config(format!("'{INTERCEPT}' is reserved for the added intercept")));
                }
                if let Some(prev) = seen.insert(name.clone(), role) {
                    return Err(Error::config(format!("column '{name}' is used as both {prev} and {role}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
}

/// Centring and scaling constants applied at ingestion, by covariate.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StandardizationRecord {
    pub covariates: Vec<Standardization>,
}

impl StandardizationRecord {
    /// Standard deviations by name, the divisors that map effects on the
    /// standardised scale back to original units.
    pub fn divisors(&self) -> BTreeMap<String, f64> {
        self.covariates.iter().map(|c| (c.name.clone(), c.sd)).collect()
    }
}

/// Rounds `shares * precision` and hands the leftover units to the largest
/// remainders (earlier columns win ties), so the counts sum to `precision`.
pub fn largest_remainder(shares: &[f64], precision: u32) -> Vec<u32> {
    let scaled: Vec<f64> = shares.iter().map(|s| s * precision as f64).collect();
    let mut counts: Vec<u32> = scaled.iter().map(|v| v.floor() as u32).collect();
    let assigned: u64 = counts.iter().map(|&c| c as u64).sum();
    let mut left = (precision as u64).saturating_sub(assigned);
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| (scaled[b] - scaled[b].floor()).total_cmp(&(scaled[a] - scaled[a].floor())).then(a.cmp(&b)));
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[k] += 1;
        left -= 1;
    }
    counts
}

fn parse_f64(raw: &str, column: &str, row: usize) -> Result<f64> {
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|_| Error::input(format!("row {row}, column '{column}': '{raw}' is not a number")))?;
    if !v.is_finite() {
        return Err(Error::input(format!("row {row}, column '{column}': non-finite value")));
    }
    Ok(v)
}

fn parse_count(raw: &str, column: &str, row: usize) -> Result<u32> {
    raw.trim()
        .parse()
        .map_err(|_| Error::input(format!("row {row}, column '{column}': '{raw}' is not a non-negative integer")))
}

/// Orders period labels numerically when they all parse as numbers,
/// otherwise keeps their order of first appearance.
fn sort_periods(periods: &mut [String]) {
    if periods.iter().all(|p| p.trim().parse::<f64>().is_ok()) {
        periods.sort_by(|a, b| a.trim().parse::<f64>().unwrap().total_cmp(&b.trim().parse::<f64>().unwrap()));
    }
}

struct RawRow {
    responses: Vec<f64>,
    covariates: Vec<f64>,
}

/// Reads a panel from CSV, lagging and optionally standardising the
/// covariates.
pub fn load_panel(path: impl AsRef<Path>, spec: &IngestionSpec) -> Result<(PanelData, StandardizationRecord)> {
    let file = std::fs::File::open(path.as_ref())?;
    read_panel(file, spec)
}

pub fn read_panel<R: Read>(reader: R, spec: &IngestionSpec) -> Result<(PanelData, StandardizationRecord)> {
    spec.validate()?;
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = csv.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::input(format!("column '{name}' not found")))
    };
    let unit_col = col(&spec.unit_column)?;
    let time_col = col(&spec.time_column)?;
    let cat_cols = spec.category_columns.iter().map(|c| col(c)).collect::<Result<Vec<_>>>()?;
    let cov_names: Vec<&String> = spec.cluster_covariates.iter().chain(&spec.global_covariates).collect();
    let cov_cols = cov_names.iter().map(|c| col(c)).collect::<Result<Vec<_>>>()?;

    let mut units: Vec<String> = Vec::new();
    let mut unit_index: HashMap<String, usize> = HashMap::new();
    let mut periods: Vec<String> = Vec::new();
    let mut rows: HashMap<(usize, String), RawRow> = HashMap::new();
    for (r, record) in csv.records().enumerate() {
        let record = record?;
        let line = r + 2;
        let unit = record.get(unit_col).unwrap_or_default().to_string();
        let time = record.get(time_col).unwrap_or_default().to_string();
        let u = *unit_index.entry(unit.clone()).or_insert_with(|| {
            units.push(unit.clone());
            units.len() - 1
        });
        if !periods.contains(&time) {
            periods.push(time.clone());
        }
        let responses = spec
            .category_columns
            .iter()
            .zip(&cat_cols)
            .map(|(name, &c)| {
                let raw = record.get(c).unwrap_or_default();
                match spec.category_mode {
                    CategoryMode::Counts => parse_count(raw, name, line).map(f64::from),
                    CategoryMode::Shares => parse_f64(raw, name, line),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        if spec.category_mode == CategoryMode::Shares {
            if responses.iter().any(|s| !(0.0..=1.0).contains(s)) {
                return Err(Error::input(format!("row {line}: shares must lie in [0, 1]")));
            }
            let total: f64 = responses.iter().sum();
            if (total - 1.0).abs() > 1e-6 {
                return Err(Error::input(format!("row {line}: shares sum to {total}, not 1")));
            }
        }
        let covariates = cov_names
            .iter()
            .zip(&cov_cols)
            .map(|(name, &c)| parse_f64(record.get(c).unwrap_or_default(), name, line))
            .collect::<Result<Vec<_>>>()?;
        if rows.insert((u, time.clone()), RawRow { responses, covariates }).is_some() {
            return Err(Error::input(format!("row {line}: duplicate entry for unit '{unit}', period '{time}'")));
        }
    }
    if units.is_empty() {
        return Err(Error::input("dataset has no rows"));
    }
    sort_periods(&mut periods);

    let mut missing = Vec::new();
    for (u, unit) in units.iter().enumerate() {
        for p in &periods {
            if !rows.contains_key(&(u, p.clone())) {
                missing.push(format!("({unit}, {p})"));
            }
        }
    }
    if !missing.is_empty() {
        let shown = missing.len().min(20);
        return Err(Error::input(format!(
            "unbalanced panel, {} missing cells: {}{}",
            missing.len(),
            missing[..shown].join(", "),
            if missing.len() > shown { ", ..." } else { "" }
        )));
    }
    if periods.len() <= spec.lag {
        return Err(Error::input(format!(
            "{} periods leave nothing to model with lag {}",
            periods.len(),
            spec.lag
        )));
    }

    let n = units.len();
    let t_model = periods.len() - spec.lag;
    let j = spec.category_columns.len();
    let kc = spec.cluster_covariates.len();
    let kg = spec.global_covariates.len();
    let mut trials = Vec::with_capacity(n * t_model);
    let mut y = Vec::with_capacity(n * t_model * j);
    let mut covs: Vec<f64> = Vec::with_capacity(n * t_model * (kc + kg));
    for u in 0..n {
        for t in 0..t_model {
            let response = &rows[&(u, periods[t + spec.lag].clone())];
            let cell: Vec<u32> = match spec.category_mode {
                CategoryMode::Counts => response.responses.iter().map(|&v| v as u32).collect(),
                CategoryMode::Shares => largest_remainder(&response.responses, spec.share_precision),
            };
            trials.push(cell.iter().sum());
            y.extend(cell);
            covs.extend(&rows[&(u, periods[t].clone())].covariates);
        }
    }

    let width = kc + kg;
    let mut record = StandardizationRecord::default();
    if spec.standardize && n * t_model > 1 {
        let cells = (n * t_model) as f64;
        for (k, name) in cov_names.iter().enumerate() {
            let mean = (0..n * t_model).map(|c| covs[c * width + k]).sum::<f64>() / cells;
            let var = (0..n * t_model).map(|c| (covs[c * width + k] - mean).powi(2)).sum::<f64>() / (cells - 1.0);
            let sd = var.sqrt();
            if !(sd > 0.0) {
                return Err(Error::input(format!("covariate '{name}' is constant and cannot be standardised")));
            }
            for c in 0..n * t_model {
                covs[c * width + k] = (covs[c * width + k] - mean) / sd;
            }
            record.covariates.push(Standardization {
                name: name.to_string(),
                mean,
                sd,
            });
        }
    }

    let mut x_cluster = Vec::with_capacity(n * t_model * (kc + 1));
    let mut x_global = Vec::with_capacity(n * t_model * kg);
    for c in 0..n * t_model {
        x_cluster.push(1.0);
        x_cluster.extend(&covs[c * width..c * width + kc]);
        x_global.extend(&covs[c * width + kc..(c + 1) * width]);
    }
    let dims = Dimensions {
        n_units: n,
        n_periods: t_model,
        n_categories: j,
        n_cluster_covariates: kc + 1,
        n_global_covariates: kg,
    };
    let labels = PanelLabels {
        unit_ids: units,
        period_labels: periods[spec.lag..].to_vec(),
        category_names: spec.category_columns.clone(),
        cluster_covariate_names: std::iter::once(INTERCEPT.to_string())
            .chain(spec.cluster_covariates.iter().cloned())
            .collect(),
        global_covariate_names: spec.global_covariates.clone(),
    };
    let data = PanelData::new(dims, trials, y, x_cluster, x_global, labels)?;
    Ok((data, record))
}

/// Ingestion settings that read back a file written by [`write_panel`]
/// unchanged.
pub fn identity_spec(data: &PanelData) -> IngestionSpec {
    let labels = data.labels();
    IngestionSpec {
        unit_column: "unit".into(),
        time_column: "period".into(),
        category_columns: labels.category_names.clone(),
        category_mode: CategoryMode::Counts,
        cluster_covariates: labels.cluster_covariate_names[1..].to_vec(),
        global_covariates: labels.global_covariate_names.clone(),
        lag: 0,
        standardize: false,
        share_precision: 1000,
    }
}

/// Writes counts and covariates (without the intercept) in long format.
pub fn write_panel<W: Write>(writer: W, data: &PanelData) -> Result<()> {
    let labels = data.labels();
    let mut csv = csv::Writer::from_writer(writer);
    let mut header = vec!["unit".to_string(), "period".to_string()];
    header.extend(labels.category_names.iter().cloned());
    header.extend(labels.cluster_covariate_names[1..].iter().cloned());
    header.extend(labels.global_covariate_names.iter().cloned());
    csv.write_record(&header)?;
    for i in 0..data.n_units() {
        for t in 0..data.n_periods() {
            let mut row = vec![labels.unit_ids[i].clone(), labels.period_labels[t].clone()];
            row.extend(data.counts(i, t).iter().map(|v| v.to_string()));
            row.extend(data.x_cluster(i, t)[1..].iter().map(|v| v.to_string()));
            row.extend(data.x_global(i, t).iter().map(|v| v.to_string()));
            csv.write_record(&row)?;
        }
    }
    csv.flush()?;
    Ok(())
}

pub fn save_panel(path: impl AsRef<Path>, data: &PanelData) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_panel(std::io::BufWriter::new(file), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::random_panel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec_for(cats: &[&str]) -> IngestionSpec {
        IngestionSpec::new("region", "year", cats.iter().map(|s| s.to_string()).collect())
    }

    #[test]
    fn largest_remainder_cases() {
        assert_eq!(largest_remainder(&[0.5, 0.3, 0.2], 10), vec![5, 3, 2]);
        let third = 1.0 / 3.0;
        let c = largest_remainder(&[third, third, third], 10);
        assert_eq!(c.iter().sum::<u32>(), 10);
        assert_eq!(c, vec![4, 3, 3]);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let j = rng.random_range(2..7);
            let raw: Vec<f64> = (0..j).map(|_| rng.random::<f64>()).collect();
            let total: f64 = raw.iter().sum();
            let shares: Vec<f64> = raw.iter().map(|v| v / total).collect();
            assert_eq!(largest_remainder(&shares, 1000).iter().sum::<u32>(), 1000);
        }
    }

    #[test]
    fn lag_drops_first_period() {
        let mut text = String::from("region,year,a,b,x,g\n");
        for r in ["r1", "r2"] {
            for year in 2008..=2018 {
                text.push_str(&format!("{r},{year},3,1,{},{}\n", year - 2000, year % 3));
            }
        }
        let mut spec = spec_for(&["a", "b"]);
        spec.cluster_covariates = vec!["x".into()];
        spec.global_covariates = vec!["g".into()];
        spec.standardize = false;
        let (data, record) = read_panel(text.as_bytes(), &spec).unwrap();
        assert_eq!(data.n_periods(), 10);
        assert_eq!(data.labels().period_labels[0], "2009");
        // Response in 2009 is paired with covariates from 2008.
        assert_eq!(data.x_cluster(0, 0), &[1.0, 8.0]);
        assert_eq!(data.x_global(1, 9), &[(2017 % 3) as f64]);
        assert!(record.covariates.is_empty());

        spec.standardize = true;
        let (data, record) = read_panel(text.as_bytes(), &spec).unwrap();
        assert_eq!(record.covariates.len(), 2);
        let xs: Vec<f64> = (0..2).flat_map(|i| (0..10).map(move |t| (i, t))).map(|(i, t)| data.x_cluster(i, t)[1]).collect();
        let mean = xs.iter().sum::<f64>() / 20.0;
        let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 19.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        assert!(data.x_cluster(0, 0)[0] == 1.0);
    }

    #[test]
    fn shares_are_converted() {
        let text = "region,year,a,b,c\nr1,1,0.5,0.3,0.2\nr1,2,0.1,0.1,0.8\n";
        let mut spec = spec_for(&["a", "b", "c"]);
        spec.category_mode = CategoryMode::Shares;
        spec.share_precision = 10;
        spec.lag = 0;
        let (data, _) = read_panel(text.as_bytes(), &spec).unwrap();
        assert_eq!(data.counts(0, 0), &[5, 3, 2]);
        assert_eq!(data.trials(0, 1), 10);
    }

    #[test]
    fn bad_inputs_are_reported() {
        let mut spec = spec_for(&["a", "b"]);
        spec.lag = 0;
        let unbalanced = "region,year,a,b\nr1,1,1,1\nr1,2,1,1\nr2,1,1,1\n";
        let err = read_panel(unbalanced.as_bytes(), &spec).unwrap_err().to_string();
        assert!(err.contains("(r2, 2)"), "{err}");

        let text = "region,year,a,b\nr1,1,x,1\n";
        assert!(read_panel(text.as_bytes(), &spec).is_err());

        spec.category_mode = CategoryMode::Shares;
        assert!(read_panel("region,year,a,b\nr1,1,1.2,-0.2\n".as_bytes(), &spec).is_err());
        assert!(read_panel("region,year,a,b\nr1,1,0.5,0.4\n".as_bytes(), &spec).is_err());

        let dup = "region,year,a,b\nr1,1,0.5,0.5\nr1,1,0.5,0.5\n";
        assert!(read_panel(dup.as_bytes(), &spec).is_err());

        let mut clash = spec_for(&["a", "b"]);
        clash.global_covariates = vec!["a".into()];
        assert!(clash.validate().is_err());
        assert!(spec_for(&["a"]).validate().is_err());
    }

    #[test]
    fn round_trip_is_value_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dims = Dimensions {
            n_units: 5,
            n_periods: 4,
            n_categories: 3,
            n_cluster_covariates: 3,
            n_global_covariates: 2,
        };
        let data = random_panel(&mut rng, dims, 9);
        let mut buf = Vec::new();
        write_panel(&mut buf, &data).unwrap();
        let (back, _) = read_panel(buf.as_slice(), &identity_spec(&data)).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn minimal_spec_json_fills_defaults() {
        let spec: IngestionSpec = serde_json::from_str(
            r#"{"unit_column": "region", "time_column": "year", "category_columns": ["a", "b"]}"#,
        )
        .unwrap();
        assert_eq!(spec, IngestionSpec::new("region", "year", vec!["a".into(), "b".into()]));
    }
}
