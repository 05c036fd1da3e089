//! CSV ingestion: column schema, missing-data handling, and the report
//! reconciling what was kept, dropped, and augmented.
//!
//! Rows missing the treatment or the outcome are dropped. Covariates with
//! any missing value gain a binary missing-indicator column and are
//! zero-imputed, so the in-memory dataset has no missingness left.

use anyhow::{bail, Context, Result};
use incbounds::{Dataset, UnitRecord};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Which columns play which role, and what counts as missing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemaConfig {
    pub outcome: String,
    pub treatment: String,
    pub covariates: Vec<String>,
    pub missing_tokens: Vec<String>,
}

impl SchemaConfig {
    pub fn new(outcome: String, treatment: String, covariates: Vec<String>) -> Result<Self> {
        let schema = Self {
            outcome,
            treatment,
            covariates,
            missing_tokens: vec![String::new(), "NA".to_string()],
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = vec![self.outcome.clone(), self.treatment.clone()];
        names.extend(self.covariates.iter().cloned());
        let total = names.len();
        names.sort();
        names.dedup();
        if names.len() != total {
            bail!("column names must be distinct");
        }
        if self.covariates.is_empty() {
            bail!("at least one covariate column is required");
        }
        Ok(())
    }
}

/// What ingestion did: row accounting and augmented columns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestReport {
    pub input_rows: usize,
    pub kept_rows: usize,
    pub dropped_rows: usize,
    /// Final covariate column order, indicators included.
    pub covariate_columns: Vec<String>,
    /// Indicator columns appended for covariates with missing values.
    pub augmented_columns: Vec<String>,
    /// Missing-value count per original covariate.
    pub missing_counts: Vec<usize>,
}

/// Load a CSV into a dataset under the schema. Row order is preserved.
pub fn load_csv(path: &Path, schema: &SchemaConfig) -> Result<(Dataset, IngestReport)> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("column '{name}' not found in {}", path.display()))
    };
    let outcome_idx = col(&schema.outcome)?;
    let treatment_idx = col(&schema.treatment)?;
    let cov_idx: Vec<usize> =
        schema.covariates.iter().map(|c| col(c)).collect::<Result<_>>()?;

    let is_missing = |cell: &str| schema.missing_tokens.iter().any(|t| t == cell.trim());
    let parse = |cell: &str, what: &str, row: usize| -> Result<f64> {
        cell.trim()
            .parse::<f64>()
            .with_context(|| format!("row {row}: cannot parse {what} value '{cell}'"))
    };

    let mut input_rows = 0usize;
    let mut dropped = 0usize;
    // per kept row: outcome, treatment, Option per covariate
    let mut outcomes = Vec::new();
    let mut treatments = Vec::new();
    let mut covs: Vec<Vec<Option<f64>>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        input_rows += 1;
        let y_cell = record.get(outcome_idx).unwrap_or("");
        let a_cell = record.get(treatment_idx).unwrap_or("");
        // incomplete exposure or outcome drops the row
        if is_missing(y_cell) || is_missing(a_cell) {
            dropped += 1;
            continue;
        }
        let y = parse(y_cell, "outcome", i + 1)?;
        let a = parse(a_cell, "treatment", i + 1)?;
        let a = if a == 0.0 {
            0u8
        } else if a == 1.0 {
            1u8
        } else {
            bail!("row {}: treatment must be 0 or 1, got {a}", i + 1);
        };
        let row_covs: Vec<Option<f64>> = cov_idx
            .iter()
            .map(|&j| {
                let cell = record.get(j).unwrap_or("");
                if is_missing(cell) {
                    Ok(None)
                } else {
                    parse(cell, "covariate", i + 1).map(Some)
                }
            })
            .collect::<Result<_>>()?;
        outcomes.push(y);
        treatments.push(a);
        covs.push(row_covs);
    }
    if outcomes.is_empty() {
        bail!("no usable rows in {}", path.display());
    }

    let missing_counts: Vec<usize> = (0..cov_idx.len())
        .map(|j| covs.iter().filter(|r| r[j].is_none()).count())
        .collect();
    let mut covariate_columns = schema.covariates.clone();
    let mut augmented_columns = Vec::new();
    for (j, &count) in missing_counts.iter().enumerate() {
        if count > 0 {
            let name = format!("{}_missing", schema.covariates[j]);
            covariate_columns.push(name.clone());
            augmented_columns.push(name);
        }
    }

    let records: Vec<UnitRecord> = outcomes
        .iter()
        .zip(&treatments)
        .zip(&covs)
        .map(|((&y, &a), row)| {
            let mut x: Vec<f64> = row.iter().map(|v| v.unwrap_or(0.0)).collect();
            for (j, &count) in missing_counts.iter().enumerate() {
                if count > 0 {
                    x.push(if row[j].is_none() { 1.0 } else { 0.0 });
                }
            }
            UnitRecord::new(x, a, y).map_err(anyhow::Error::from)
        })
        .collect::<Result<_>>()?;
    let kept_rows = records.len();
    let data = Dataset::new(records)?;
    Ok((
        data,
        IngestReport {
            input_rows,
            kept_rows,
            dropped_rows: dropped,
            covariate_columns,
            augmented_columns,
            missing_counts,
        },
    ))
}
