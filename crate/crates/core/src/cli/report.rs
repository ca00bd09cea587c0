//! `report.json` (schema 1) and the CSV side files.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bubble::CriticalConstants;
use crate::error::Result;
use crate::fiber::{EmbeddingConstant, LambdaProxy};
use crate::grid::Field;
use crate::regularity::Envelope;
use crate::solver::{SolutionReport, Verification};

pub const SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub schema: u32,
    pub choquard: String,
}

impl Default for Versions {
    fn default() -> Self {
        Self {
            schema: SCHEMA,
            choquard: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaInfo {
    pub value: f64,
    pub proxy: LambdaProxy,
}

/// Grid embedding constants and the closed-form λ_* they give.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingReport {
    pub c_1mq: EmbeddingConstant,
    pub c_2star: EmbeddingConstant,
    pub k: f64,
    pub lambda_star: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub n_roots: usize,
    pub t1: Option<f64>,
    pub t2: Option<f64>,
    pub t_max: f64,
    pub m_max: f64,
    pub lambda_crit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub nplus: Verification,
    pub nminus: Option<Verification>,
    /// Residual of `u_λ` after a 10% multiplicative bump.
    pub perturbed_nplus: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config_echo: BTreeMap<String, String>,
    pub lambda: Option<LambdaInfo>,
    pub constants: Option<CriticalConstants>,
    pub embedding: Option<EmbeddingReport>,
    pub nplus: Option<SolutionReport>,
    pub nminus: Option<SolutionReport>,
    pub sweep: Option<Vec<SweepRow>>,
    pub verification: Option<VerifyReport>,
    pub versions: Versions,
}

impl Report {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Every solved branch converged.
    pub fn all_converged(&self) -> bool {
        [&self.nplus, &self.nminus].iter().all(|r| r.as_ref().is_none_or(|r| r.converged))
    }
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "lambda,n_roots,t1,t2,t_max,m_max,lambda_crit")?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.lambda,
            r.n_roots,
            opt(r.t1),
            opt(r.t2),
            r.t_max,
            r.m_max,
            r.lambda_crit
        )?;
    }
    Ok(())
}

pub fn write_envelope_csv(env: &Envelope, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "band,delta_lo,delta_hi,min_ratio,max_ratio,nodes")?;
    for (i, b) in env.band_stats.iter().enumerate() {
        writeln!(
            out,
            "{i},{},{},{},{},{}",
            b.delta_lo, b.delta_hi, b.min_ratio, b.max_ratio, b.nodes
        )?;
    }
    Ok(())
}

pub fn write_field_csv(u: &Field, path: &Path) -> Result<()> {
    u.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
}

/// Values along the first axis through the domain centre, one column per field.
pub fn write_profile_csv(fields: &[(&str, &Field)], path: &Path) -> Result<()> {
    let Some((_, first)) = fields.first() else {
        return Ok(());
    };
    let g = first.grid();
    let c = g.center();
    let tol = 0.5 * g.h_min();
    let nodes: Vec<usize> = (0..g.len())
        .filter(|&p| (1..g.n).all(|a| (g.coord(p, a) - c[a]).abs() < tol))
        .collect();
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let names: Vec<&str> = fields.iter().map(|(n, _)| *n).collect();
    writeln!(out, "x,{}", names.join(","))?;
    for p in nodes {
        let vals: Vec<String> = fields.iter().map(|(_, f)| f.values()[p].to_string()).collect();
        writeln!(out, "{},{}", g.coord(p, 0), vals.join(","))?;
    }
    Ok(())
}
