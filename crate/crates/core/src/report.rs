//! Tabular and JSON renderings of pipeline results.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bayes::{CellKind, PosteriorTable};
use crate::experiments::{
    significance_stars, Ar1StudyRow, DecayCurve, FitError, LambdaTable, LogisticFit,
    MedianStabilityTrace,
};
use crate::sr_engine::{DetectionRun, LevelKind, Outcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> Result<Vec<u8>, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.into_inner().map_err(|e| e.into_error().into())
    }
}

/// One result file: a table for CSV and a structured value for JSON.
#[derive(Debug, Clone)]
pub struct Output {
    pub stem: String,
    pub table: Table,
    pub json: Value,
}

impl Output {
    pub fn file_name(&self, format: Format) -> String {
        format!("{}.{}", self.stem, format.extension())
    }

    pub fn write(&self, dir: &Path, format: Format) -> std::io::Result<PathBuf> {
        let path = dir.join(self.file_name(format));
        let bytes = match format {
            Format::Csv => self.table.to_csv().map_err(std::io::Error::other)?,
            Format::Json => {
                let mut b = serde_json::to_vec_pretty(&self.json)?;
                b.push(b'\n');
                b
            }
        };
        fs::write(&path, bytes)?;
        Ok(path)
    }
}

fn num(v: f64) -> String {
    v.to_string()
}

fn kind_label(kind: LevelKind) -> &'static str {
    match kind {
        LevelKind::Support => "support",
        LevelKind::Resistance => "resistance",
    }
}

fn outcome_label(o: Outcome) -> &'static str {
    match o {
        Outcome::Bounce => "bounce",
        Outcome::Penetration => "penetration",
    }
}

pub fn event_log(stem: String, run: &DetectionRun) -> Output {
    let mut t = Table::new(&[
        "series_id",
        "lag",
        "gamma",
        "bprev_cap",
        "kind",
        "entry_index",
        "exit_index",
        "b_prev",
        "outcome",
        "time_since_prev_bounce",
        "level_lower",
        "level_upper",
        "anchor",
        "clamped",
        "overlap_skips",
        "cap_clamps",
        "unterminated",
    ]);
    let d = run.diagnostics;
    for e in &run.events {
        t.rows.push(vec![
            run.series_id.clone(),
            run.config.lag_window.to_string(),
            num(run.gamma),
            run.config.b_prev_cap.to_string(),
            kind_label(e.kind).into(),
            e.entry_index.to_string(),
            e.exit_index.to_string(),
            e.b_prev.to_string(),
            outcome_label(e.outcome).into(),
            e.time_since_prev_bounce.map(|v| v.to_string()).unwrap_or_default(),
            num(e.level.lower),
            num(e.level.upper),
            num(e.level.anchor),
            e.clamped.to_string(),
            d.overlap_skips.to_string(),
            d.cap_clamps.to_string(),
            d.unterminated.to_string(),
        ]);
    }
    let json = json!({
        "series_id": run.series_id,
        "lag": run.config.lag_window,
        "gamma": run.gamma,
        "bprev_cap": run.config.b_prev_cap,
        "diagnostics": d,
        "events": run.events,
    });
    Output { stem, table: t, json }
}

fn posterior_rows(table: &PosteriorTable) -> impl Iterator<Item = [String; 7]> + '_ {
    table.iter().map(|p| {
        [
            p.cell.kind.label().to_string(),
            p.cell.b_prev.to_string(),
            p.cell.n.to_string(),
            p.cell.k.to_string(),
            p.cell.total().to_string(),
            num(p.mean),
            num(p.sd()),
        ]
    })
}

fn posterior_json(table: &PosteriorTable) -> Value {
    Value::Array(
        table
            .iter()
            .map(|p| {
                json!({
                    "kind": p.cell.kind.label(),
                    "b_prev": p.cell.b_prev,
                    "n": p.cell.n,
                    "k": p.cell.k,
                    "N": p.cell.total(),
                    "mean": p.mean,
                    "sd": p.sd(),
                })
            })
            .collect(),
    )
}

pub fn posterior_table(stem: String, series_id: &str, table: &PosteriorTable) -> Output {
    let mut t = Table::new(&["kind", "b_prev", "n", "k", "N", "mean", "sd"]);
    t.rows.extend(posterior_rows(table).map(Vec::from));
    let json = json!({ "series_id": series_id, "cap": table.cap, "cells": posterior_json(table) });
    Output { stem, table: t, json }
}

/// Wide layout: one row per level type, one column per b_prev >= 1.
pub fn lambda_wide(stem: String, table: &LambdaTable) -> Output {
    let cap = table.original.cap;
    let mut header = vec!["asset".to_string(), "type".into(), "lag".into()];
    header.extend((1..=cap).map(|b| b.to_string()));
    let mut t = Table { header, rows: Vec::new() };
    for kind in CellKind::ALL {
        let mut row = vec![table.series_id.clone(), kind.label().into(), table.lag.to_string()];
        row.extend((1..=cap).map(|b| {
            table
                .row(kind, b)
                .and_then(|r| r.lambda())
                .map(num)
                .unwrap_or_default()
        }));
        t.rows.push(row);
    }
    let json = json!({
        "series_id": table.series_id,
        "lag": table.lag,
        "gamma": table.gamma,
        "replicates": table.replicates,
        "seed": table.seed,
        "rows": table.rows.iter().map(|r| json!({
            "kind": r.kind.label(),
            "b_prev": r.b_prev,
            "lambda": r.lambda(),
            "wins": r.wins,
            "replicate_count": r.replicate_count,
            "excluded": r.excluded,
            "p_o": table.original.get(r.kind, r.b_prev).map(|p| p.mean),
        })).collect::<Vec<_>>(),
    });
    Output { stem, table: t, json }
}

pub fn lambda_long(stem: String, table: &LambdaTable) -> Output {
    let mut t = Table::new(&[
        "asset", "type", "lag", "b_prev", "lambda", "wins", "replicate_count", "excluded", "p_o", "N_o",
    ]);
    for r in &table.rows {
        let o = table.original.get(r.kind, r.b_prev).expect("cell");
        t.rows.push(vec![
            table.series_id.clone(),
            r.kind.label().into(),
            r.lag.to_string(),
            r.b_prev.to_string(),
            r.lambda().map(num).unwrap_or_default(),
            r.wins.to_string(),
            r.replicate_count.to_string(),
            r.excluded.to_string(),
            num(o.mean),
            o.cell.total().to_string(),
        ]);
    }
    let json = lambda_wide(String::new(), table).json;
    Output { stem, table: t, json }
}

pub fn decay_curves(stem: String, series_id: &str, curves: &[DecayCurve]) -> Output {
    let mut t = Table::new(&["kind", "b_prev", "lag", "mean", "sd", "N"]);
    for c in curves {
        for p in &c.points {
            t.rows.push(vec![
                c.kind.label().into(),
                c.b_prev.to_string(),
                p.lag.to_string(),
                num(p.mean),
                num(p.sd),
                p.n.to_string(),
            ]);
        }
    }
    let json = json!({ "series_id": series_id, "curves": curves });
    Output { stem, table: t, json }
}

/// One row of the micro-decay table; failed fits carry their reason.
#[derive(Debug, Clone, Serialize)]
pub struct MicroRow {
    pub kind: CellKind,
    pub b_prev: u32,
    pub fit: Result<LogisticFit, FitError>,
}

pub fn micro_table(stem: String, series_id: &str, rows: &[MicroRow]) -> Output {
    let mut t = Table::new(&[
        "type", "b_prev", "a", "b", "N", "se_a", "se_b", "p_a", "p_b", "stars_a", "stars_b",
        "converged", "status",
    ]);
    let mut items = Vec::new();
    for r in rows {
        let cells = match &r.fit {
            Ok(f) => vec![
                num(f.a),
                num(f.b),
                f.n.to_string(),
                num(f.se_a),
                num(f.se_b),
                num(f.p_a),
                num(f.p_b),
                significance_stars(f.p_a).into(),
                significance_stars(f.p_b).into(),
                f.converged.to_string(),
                "ok".into(),
            ],
            Err(e) => {
                let nan = num(f64::NAN);
                vec![
                    nan.clone(),
                    nan.clone(),
                    String::new(),
                    nan.clone(),
                    nan.clone(),
                    nan.clone(),
                    nan,
                    String::new(),
                    String::new(),
                    "false".into(),
                    e.status().into(),
                ]
            }
        };
        let mut row = vec![r.kind.label().to_string(), r.b_prev.to_string()];
        row.extend(cells);
        t.rows.push(row);
        items.push(match &r.fit {
            Ok(f) => json!({
                "type": r.kind.label(), "b_prev": r.b_prev, "a": f.a, "b": f.b, "N": f.n,
                "se_a": f.se_a, "se_b": f.se_b, "p_a": f.p_a, "p_b": f.p_b,
                "stars_a": significance_stars(f.p_a), "stars_b": significance_stars(f.p_b),
                "converged": f.converged, "iterations": f.iterations, "status": "ok",
            }),
            Err(e) => json!({
                "type": r.kind.label(), "b_prev": r.b_prev, "status": e.status(),
                "message": e.to_string(),
            }),
        });
    }
    let json = json!({ "series_id": series_id, "fits": items });
    Output { stem, table: t, json }
}

pub fn ar1_tables(stem: String, rows: &[Ar1StudyRow]) -> Output {
    let mut t = Table::new(&["rho", "series", "kind", "b_prev", "n", "k", "N", "mean", "sd"]);
    for r in rows {
        for (label, table) in [("original", &r.original), ("shuffled", &r.shuffled)] {
            for cells in posterior_rows(table) {
                let mut row = vec![num(r.rho), label.into()];
                row.extend(cells);
                t.rows.push(row);
            }
        }
    }
    let json = Value::Array(
        rows.iter()
            .map(|r| {
                json!({
                    "rho": r.rho,
                    "gamma": r.gamma,
                    "original": posterior_json(&r.original),
                    "shuffled": posterior_json(&r.shuffled),
                })
            })
            .collect(),
    );
    Output { stem, table: t, json }
}

pub fn stability_trace(stem: String, series_id: &str, trace: &MedianStabilityTrace) -> Output {
    let mut t = Table::new(&["replicates_used", "median"]);
    for &(n, m) in &trace.points {
        t.rows.push(vec![n.to_string(), num(m)]);
    }
    let json = json!({
        "series_id": series_id,
        "target_b_prev": trace.target_b_prev,
        "usable": trace.usable,
        "points": trace.points.iter().map(|&(n, m)| json!({
            "replicates_used": n,
            "median": m.is_finite().then_some(m),
        })).collect::<Vec<_>>(),
    });
    Output { stem, table: t, json }
}
