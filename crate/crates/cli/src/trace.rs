//! Per-iteration trace files.
//!
//! One CSV row per iteration. Reals are written in `{:.16e}` form (17
//! significant digits), which reads back to the same double, so parsing a
//! file and writing it again reproduces it byte for byte.

use std::io::{Read, Write};

use relax::experiment::{Flag, RunResult};

use crate::CliError;

pub const FIXED_COLUMNS: [&str; 17] = [
    "run_seed",
    "iter",
    "n_train",
    "pf_hat",
    "beta_hat",
    "delta_beta",
    "pareto_k",
    "pareto_frac",
    "gamma",
    "w_min",
    "w_max",
    "w_bar",
    "sel_obj_fmu",
    "sel_obj_fsigma",
    "ell",
    "sigma_f2",
    "flags",
];

const FLAG_SEP: char = ';';

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub run_seed: u64,
    pub iter: usize,
    pub n_train: usize,
    pub pf_hat: f64,
    pub beta_hat: f64,
    pub delta_beta: f64,
    pub pareto_k: usize,
    pub pareto_frac: f64,
    pub gamma: Option<f64>,
    pub w_min: Option<f64>,
    pub w_max: Option<f64>,
    pub w_bar: Option<f64>,
    pub sel_obj_fmu: f64,
    pub sel_obj_fsigma: f64,
    pub ell: f64,
    pub sigma_f2: f64,
    pub flags: Vec<String>,
    pub sel_u: Vec<f64>,
}

pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_real).unwrap_or_default()
}

pub fn rows_of(result: &RunResult) -> Vec<TraceRow> {
    result
        .records
        .iter()
        .map(|r| TraceRow {
            run_seed: result.seed,
            iter: r.t,
            n_train: r.n_train,
            pf_hat: r.p_f_hat,
            beta_hat: r.beta_hat,
            delta_beta: r.delta_beta,
            pareto_k: r.pareto_size,
            pareto_frac: r.pareto_frac(),
            gamma: r.gamma,
            w_min: r.weight.map(|w| w.w_min),
            w_max: r.weight.map(|w| w.w_max),
            w_bar: r.weight.map(|w| w.w_bar),
            sel_obj_fmu: r.selected_obj.f_mu,
            sel_obj_fsigma: r.selected_obj.f_sigma,
            ell: r.ell,
            sigma_f2: r.sigma_f2,
            flags: r.flags.iter().map(|f| Flag::token(*f).to_string()).collect(),
            sel_u: r.selected_u.clone(),
        })
        .collect()
}

pub fn header(dim: usize) -> Vec<String> {
    FIXED_COLUMNS.iter().map(|s| s.to_string()).chain((1..=dim).map(|i| format!("sel_u_{i}"))).collect()
}

impl TraceRow {
    fn fields(&self) -> Vec<String> {
        let mut f = vec![
            self.run_seed.to_string(),
            self.iter.to_string(),
            self.n_train.to_string(),
            fmt_real(self.pf_hat),
            fmt_real(self.beta_hat),
            fmt_real(self.delta_beta),
            self.pareto_k.to_string(),
            fmt_real(self.pareto_frac),
            fmt_opt(self.gamma),
            fmt_opt(self.w_min),
            fmt_opt(self.w_max),
            fmt_opt(self.w_bar),
            fmt_real(self.sel_obj_fmu),
            fmt_real(self.sel_obj_fsigma),
            fmt_real(self.ell),
            fmt_real(self.sigma_f2),
            self.flags.join(&FLAG_SEP.to_string()),
        ];
        f.extend(self.sel_u.iter().map(|&v| fmt_real(v)));
        f
    }
}

pub fn write_trace<W: Write>(out: W, dim: usize, rows: &[TraceRow]) -> Result<(), CliError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(header(dim))?;
    for row in rows {
        if row.sel_u.len() != dim {
            return Err(CliError::Format(format!("row {} has {} coordinates, expected {dim}", row.iter, row.sel_u.len())));
        }
        w.write_record(row.fields())?;
    }
    w.flush()?;
    Ok(())
}

fn parse<T: std::str::FromStr>(field: &str, name: &str) -> Result<T, CliError> {
    field.parse().map_err(|_| CliError::Format(format!("column {name}: cannot parse '{field}'")))
}

fn parse_opt(field: &str, name: &str) -> Result<Option<f64>, CliError> {
    if field.is_empty() {
        Ok(None)
    } else {
        parse(field, name).map(Some)
    }
}

/// Parses a trace file; returns the input dimension and the rows.
pub fn read_trace<R: Read>(input: R) -> Result<(usize, Vec<TraceRow>), CliError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let head = r.headers()?.clone();
    let dim = head.len().checked_sub(FIXED_COLUMNS.len()).ok_or_else(|| CliError::Format("truncated header".into()))?;
    if head.iter().collect::<Vec<_>>() != header(dim) {
        return Err(CliError::Format("unexpected trace header".into()));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let c = |i: usize| rec.get(i).unwrap_or("");
        let name = |i: usize| FIXED_COLUMNS[i];
        rows.push(TraceRow {
            run_seed: parse(c(0), name(0))?,
            iter: parse(c(1), name(1))?,
            n_train: parse(c(2), name(2))?,
            pf_hat: parse(c(3), name(3))?,
            beta_hat: parse(c(4), name(4))?,
            delta_beta: parse(c(5), name(5))?,
            pareto_k: parse(c(6), name(6))?,
            pareto_frac: parse(c(7), name(7))?,
            gamma: parse_opt(c(8), name(8))?,
            w_min: parse_opt(c(9), name(9))?,
            w_max: parse_opt(c(10), name(10))?,
            w_bar: parse_opt(c(11), name(11))?,
            sel_obj_fmu: parse(c(12), name(12))?,
            sel_obj_fsigma: parse(c(13), name(13))?,
            ell: parse(c(14), name(14))?,
            sigma_f2: parse(c(15), name(15))?,
            flags: if c(16).is_empty() { vec![] } else { c(16).split(FLAG_SEP).map(str::to_string).collect() },
            sel_u: (0..dim).map(|j| parse(c(17 + j), "sel_u")).collect::<Result<_, _>>()?,
        });
    }
    Ok((dim, rows))
}

pub fn trace_bytes(result: &RunResult) -> Result<Vec<u8>, CliError> {
    let dim = result.config.lsf.definition().dim;
    let mut buf = Vec::new();
    write_trace(&mut buf, dim, &rows_of(result))?;
    Ok(buf)
}
