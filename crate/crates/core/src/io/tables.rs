//! Small result tables: partitions, similarity matrices, effect summaries and
//! ground truth. Cluster labels are 1-based on disk.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::effects::EffectSummary;
use crate::error::{Error, Result};
use crate::model::PanelLabels;
use crate::partition::{first_appearance, SimilarityMatrix};
use crate::sim::GroundTruth;

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn write_partition(path: impl AsRef<Path>, labels: &PanelLabels, partition: &[usize]) -> Result<()> {
    if partition.len() != labels.unit_ids.len() {
        return Err(Error::input("partition length does not match the number of units"));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["unit", "cluster"])?;
    for (id, s) in labels.unit_ids.iter().zip(partition) {
        w.write_record([id.clone(), (s + 1).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a `unit,cluster` table and returns first-appearance labels in the
/// unit order of `labels`. Every unit must appear exactly once.
pub fn read_partition(path: impl AsRef<Path>, labels: &PanelLabels) -> Result<Vec<usize>> {
    let mut by_unit: HashMap<String, String> = HashMap::new();
    let mut r = csv::Reader::from_path(path)?;
    for rec in r.records() {
        let rec = rec?;
        if rec.len() < 2 {
            return Err(Error::input("partition rows need a unit and a cluster"));
        }
        if by_unit.insert(rec[0].to_string(), rec[1].to_string()).is_some() {
            return Err(Error::input(format!("unit '{}' appears twice in the partition", &rec[0])));
        }
    }
    if by_unit.len() != labels.unit_ids.len() {
        return Err(Error::input(format!(
            "partition lists {} units, the panel has {}",
            by_unit.len(),
            labels.unit_ids.len()
        )));
    }
    let mut names = HashMap::new();
    let raw = labels
        .unit_ids
        .iter()
        .map(|id| {
            let c = by_unit
                .get(id)
                .ok_or_else(|| Error::input(format!("unit '{id}' is missing from the partition")))?;
            let next = names.len();
            Ok(*names.entry(c.clone()).or_insert(next))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(first_appearance(&raw))
}

pub fn write_similarity(path: impl AsRef<Path>, labels: &PanelLabels, psm: &SimilarityMatrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["unit".to_string()];
    header.extend(labels.unit_ids.iter().cloned());
    w.write_record(&header)?;
    for (i, id) in labels.unit_ids.iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend(psm.row(i).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_effects(path: impl AsRef<Path>, effects: &[EffectSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["cluster", "covariate", "category", "q10", "q50", "q90", "significant", "scale"])?;
    for e in effects {
        w.write_record([
            (e.cluster + 1).to_string(),
            e.covariate.clone(),
            e.category.clone(),
            e.q10.to_string(),
            e.q50.to_string(),
            e.q90.to_string(),
            e.significant.to_string(),
            e.scale.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// On-disk form of [`GroundTruth`]: matrices as row lists, labels 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub assignments: Vec<usize>,
    pub beta_star: Vec<Vec<Vec<f64>>>,
    pub theta: Vec<Vec<f64>>,
    pub alpha: Option<f64>,
    pub theta_columns: usize,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

fn matrix(rows: &[Vec<f64>], ncols: usize) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::input("ragged matrix in truth file"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
}

impl From<&GroundTruth> for TruthFile {
    fn from(t: &GroundTruth) -> Self {
        TruthFile {
            assignments: t.assignments.iter().map(|s| s + 1).collect(),
            beta_star: t.beta_star.iter().map(rows).collect(),
            theta: rows(&t.theta),
            alpha: t.alpha,
            theta_columns: t.theta.ncols(),
        }
    }
}

impl TruthFile {
    pub fn into_truth(self) -> Result<GroundTruth> {
        if self.assignments.contains(&0) {
            return Err(Error::input("truth cluster labels are 1-based"));
        }
        let ncols = self.theta_columns;
        let beta_star = self
            .beta_star
            .iter()
            .map(|b| matrix(b, b.first().map_or(ncols, Vec::len)))
            .collect::<Result<Vec<_>>>()?;
        let truth = GroundTruth {
            assignments: self.assignments.iter().map(|s| s - 1).collect(),
            beta_star,
            theta: matrix(&self.theta, ncols)?,
            alpha: self.alpha,
        };
        truth.cluster_state()?;
        Ok(truth)
    }
}
