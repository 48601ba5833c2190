//! Result files: one CSV row per (cell, replication) and one JSON summary per cell.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::config::{CellCoords, ExperimentSpec, Format};
use crate::energy::EnergyState;
use crate::engine::CellResult;
use crate::error::{Error, Result};
use crate::metrics::{RunMetrics, Stats, Summary};

pub const CSV_SCHEMA: &str = "lorasim-results/v1";
pub const JSON_SCHEMA: &str = "lorasim-summary/v1";

pub fn csv_header() -> Vec<String> {
    let mut cols: Vec<String> = [
        "cell",
        "payload_len",
        "sigma",
        "adr",
        "confirmed",
        "replication",
        "seed",
        "der",
        "der_pooled",
        "energy_per_byte_mean",
        "energy_per_byte_std",
        "energy_per_byte_incl_sleep_mean",
        "collision_ratio",
        "acks_dropped",
        "retransmissions",
        "frames_tx",
        "frames_collided",
        "frames_under_sensitivity",
        "unique_bytes_tx",
        "unique_bytes_rx",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    cols.extend(
        EnergyState::ALL
            .iter()
            .map(|s| format!("energy_{}_mj", s.name())),
    );
    cols.push("energy_total_mj".into());
    cols
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_row(cell: usize, coords: &CellCoords, run: &RunMetrics) -> Result<Vec<String>> {
    let mut row = vec![
        cell.to_string(),
        coords.payload_len.to_string(),
        coords.sigma.to_string(),
        coords.adr.to_string(),
        coords.confirmed.to_string(),
        run.replication.to_string(),
        run.seed.to_string(),
        run.der()?.to_string(),
        run.der_pooled()?.to_string(),
        opt(run.energy_per_byte_mean()),
        opt(run.energy_per_byte_std()),
        opt(run.energy_per_byte_incl_sleep_mean()),
        run.collision_ratio().to_string(),
        run.acks_dropped().to_string(),
        run.retransmissions().to_string(),
        run.frames_tx().to_string(),
        run.frames_collided().to_string(),
        run.frames_under_sensitivity().to_string(),
        run.unique_bytes_tx().to_string(),
        run.unique_bytes_rx().to_string(),
    ];
    let energy = run.energy();
    row.extend(
        EnergyState::ALL
            .iter()
            .map(|&s| energy.energy_mj(s).to_string()),
    );
    row.push(energy.total_energy_mj().to_string());
    Ok(row)
}

/// Writes the schema comment, the header and one row per replication of every cell.
pub fn write_csv<W: Write>(out: W, results: &[CellResult]) -> Result<()> {
    let mut out = out;
    let csv_err = |e: csv::Error| Error::invariant(format!("csv encoding failed: {e}"));
    writeln!(out, "# schema: {CSV_SCHEMA}").map_err(|e| Error::io("<csv>", e))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header()).map_err(csv_err)?;
    for r in results {
        for run in &r.monte_carlo.runs {
            w.write_record(csv_row(r.cell.index, &r.cell.coords, run)?)
                .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Rounds to nine significant digits.
fn sig9(x: f64) -> Value {
    if !x.is_finite() {
        return Value::Null;
    }
    let rounded: f64 = format!("{x:.8e}").parse().expect("formatted float parses");
    serde_json::Number::from_f64(rounded).map_or(Value::Null, Value::Number)
}

fn round_floats(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => sig9(n.as_f64().unwrap_or(f64::NAN)),
        Value::Array(xs) => Value::Array(xs.into_iter().map(round_floats).collect()),
        Value::Object(m) => {
            Value::Object(m.into_iter().map(|(k, v)| (k, round_floats(v))).collect())
        }
        other => other,
    }
}

#[derive(Serialize)]
struct CellSummary<'a> {
    schema: &'static str,
    cell: usize,
    coords: &'a CellCoords,
    master_seed: u64,
    replications: usize,
    metrics: &'a std::collections::BTreeMap<String, Stats>,
    energy_per_byte_nodes: &'a Option<Stats>,
}

pub fn summary_json(
    cell: usize,
    coords: &CellCoords,
    master_seed: u64,
    summary: &Summary,
) -> String {
    let doc = CellSummary {
        schema: JSON_SCHEMA,
        cell,
        coords,
        master_seed,
        replications: summary.replications,
        metrics: &summary.metrics,
        energy_per_byte_nodes: &summary.energy_per_byte_nodes,
    };
    let value = round_floats(serde_json::to_value(doc).expect("summary serializes"));
    let mut text = serde_json::to_string_pretty(&value).expect("value serializes");
    text.push('\n');
    text
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes the effective config, the CSV and the per-cell summaries into `dir`.
/// Returns the paths written.
pub fn emit_results(
    dir: &Path,
    spec: &ExperimentSpec,
    results: &[CellResult],
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let config = dir.join("effective_config.toml");
    write_file(&config, spec.to_toml_string().as_bytes())?;
    written.push(config);

    if spec.output.formats.contains(&Format::Csv) {
        let path = dir.join("results.csv");
        let mut buf = Vec::new();
        write_csv(&mut buf, results)?;
        write_file(&path, &buf)?;
        written.push(path);
    }
    if spec.output.formats.contains(&Format::Json) {
        for r in results {
            let path = dir.join(format!("cell-{:03}.json", r.cell.index));
            let text = summary_json(
                r.cell.index,
                &r.cell.coords,
                r.cell.config.seed,
                &r.monte_carlo.summary,
            );
            write_file(&path, text.as_bytes())?;
            written.push(path);
        }
    }
    Ok(written)
}
