//! Reshapes result tables into tidy plot series.

use std::path::Path;

use serde::Serialize;

use crate::output::{read_table, Artifacts};
use crate::CliError;

struct Table {
    hash: String,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn load(dir: &Path, name: &str) -> Result<Self, CliError> {
        let (hash, header, rows) = read_table(&dir.join(name))?;
        Ok(Table { hash, header, rows })
    }

    fn col(&self, name: &str) -> Result<usize, CliError> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Usage(format!("result table has no `{name}` column")))
    }

    fn num(&self, row: &[String], col: usize) -> Result<f64, CliError> {
        row[col]
            .parse()
            .map_err(|_| CliError::Usage(format!("non-numeric value `{}`", row[col])))
    }
}

#[derive(Serialize)]
struct ScalingRow {
    density: String,
    replicate: String,
    sup_d: f64,
    beta2: f64,
    log_sup_d: f64,
    log_beta2: f64,
}

#[derive(Serialize)]
struct DiscrepancyRow {
    n: String,
    replicate: String,
    kind: String,
    discrepancy: f64,
    scaled: f64,
}

#[derive(Serialize)]
struct SeriesRow {
    t: String,
    empirical: String,
    theory: String,
}

pub fn emit(dir: &Path, kind: &str) -> Result<(), CliError> {
    match kind {
        "scaling" => {
            let t = Table::load(dir, "gnn.csv")?;
            let (d, r, s, b) = (t.col("density")?, t.col("replicate")?, t.col("sup_d")?, t.col("beta2")?);
            let rows = t
                .rows
                .iter()
                .map(|row| {
                    let (sup_d, beta2) = (t.num(row, s)?, t.num(row, b)?);
                    Ok(ScalingRow {
                        density: row[d].clone(),
                        replicate: row[r].clone(),
                        sup_d,
                        beta2,
                        log_sup_d: sup_d.ln(),
                        log_beta2: beta2.ln(),
                    })
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            Artifacts::create(dir, &t.hash)?.table("plot_scaling.csv", &rows)
        }
        "discrepancy" => {
            let t = Table::load(dir, "gnn.csv")?;
            let (n, r, k, disc, inf) =
                (t.col("n")?, t.col("replicate")?, t.col("kind")?, t.col("discrepancy")?, t.col("inf_d")?);
            let rows = t
                .rows
                .iter()
                .map(|row| {
                    let dv = t.num(row, disc)?;
                    let scaled = if row[k] == "label" { t.num(row, n)? * dv } else { dv / t.num(row, inf)? };
                    Ok(DiscrepancyRow {
                        n: row[n].clone(),
                        replicate: row[r].clone(),
                        kind: row[k].clone(),
                        discrepancy: dv,
                        scaled,
                    })
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            Artifacts::create(dir, &t.hash)?.table("plot_discrepancy.csv", &rows)
        }
        "envelope" => series(dir, "envelope.csv", "mean_delta", "envelope", "plot_envelope.csv"),
        "tail" => series(dir, "tail.csv", "empirical", "bound", "plot_tail.csv"),
        other => Err(CliError::Usage(format!(
            "unknown plot kind `{other}` (expected scaling, envelope, tail or discrepancy)"
        ))),
    }
}

fn series(dir: &Path, src: &str, emp: &str, theory: &str, dst: &str) -> Result<(), CliError> {
    let t = Table::load(dir, src)?;
    let (tc, e, th) = (t.col("t")?, t.col(emp)?, t.col(theory)?);
    let rows: Vec<SeriesRow> = t
        .rows
        .iter()
        .map(|row| SeriesRow {
            t: row[tc].clone(),
            empirical: row[e].clone(),
            theory: row[th].clone(),
        })
        .collect();
    Artifacts::create(dir, &t.hash)?.table(dst, &rows)
}
