//! Command-line front end and the plain-text file formats it reads and writes.
//!
//! Traces are comma-separated with a header row; curves and reports are
//! `key = value` records. Floating-point fields carry 17 significant digits so
//! every file parses back to the values that produced it.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::analysis::{
    average_curves, efficiency_ratio, fit_power_law, gill_massar_bound, ConvergenceCurve,
    CurvePoint, PowerLawFit, StateKind,
};
use crate::error::{Error, Result};
use crate::estimation::MleOptions;
use crate::linalg::CMatrix;
use crate::protocols::{PlanOptions, Protocol};
use crate::quantum::DensityMatrix;
use crate::simulator::{
    replay_counts, run_rng, run_tomography, RecordStream, ReplayOptions, RunConfig, Schedule,
    SourceModel, StateEnsemble, TomographyTrace, TraceEntry,
};

/// `(N_emit, d_B^2)` samples of one run.
type Trace = Vec<(f64, f64)>;

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "RANKP_OUT";

const TRACE_COLUMNS: [&str; 9] = [
    "protocol",
    "run_id",
    "seed",
    "iteration",
    "n_emit",
    "n_det",
    "d_bures_sq",
    "fidelity",
    "loglik",
];

#[derive(Debug, Parser)]
#[command(name = "rankp", version, about = "Adaptive qubit tomography simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run Monte-Carlo tomography campaigns.
    Simulate(SimulateArgs),
    /// Average traces, fit power laws and compare protocols.
    Analyze(AnalyzeArgs),
    /// Re-estimate recorded count streams against their final assessment.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Comma-separated protocols: random, eigen, rankp-nc, rankp-b, rankp-m.
    #[arg(long, value_delimiter = ',', required = true)]
    pub protocol: Vec<Protocol>,
    /// `pure`, `bures`, or a file holding one density matrix.
    #[arg(long, default_value = "pure")]
    pub states: StatesArg,
    #[arg(long, default_value_t = 50)]
    pub runs: u64,
    #[arg(long, default_value = "1e6", value_parser = parse_positive)]
    pub n_max: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = OUT_ENV, default_value = "results")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1.25)]
    pub growth: f64,
    #[arg(long, default_value = "100", value_parser = parse_positive)]
    pub initial_budget: f64,
    #[arg(long, default_value_t = 1e-10)]
    pub mle_tol: f64,
    #[arg(long, default_value_t = 1000)]
    pub mle_max_iter: usize,
    /// Weight of `1_D/D` mixed into the estimate before transforming.
    #[arg(long, default_value_t = 1e-4)]
    pub delta: f64,
    /// Apply a Haar-random unitary to each rank-preserving transformation.
    #[arg(long)]
    pub random_v: bool,
    /// Source intensity, expected emitted copies per exposition unit.
    #[arg(long, default_value_t = 1000.0)]
    pub intensity: f64,
    #[arg(long, default_value_t = 1.0)]
    pub efficiency: f64,
    /// Start each estimation from the previous estimate.
    #[arg(long)]
    pub warm_start: bool,
    /// Also write each run's raw record stream.
    #[arg(long)]
    pub export_records: bool,
    #[arg(long, default_value_t = 10)]
    pub points_per_decade: usize,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    /// Trace files, curve files, or directories containing them.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Fit window `N1:N2`; defaults to `1e2` up to the end of each curve.
    #[arg(long)]
    pub fit_window: Option<Window>,
    /// Pairs `A:B`; reports the mean error ratio of A relative to B.
    #[arg(long, value_delimiter = ',')]
    pub compare: Vec<String>,
    #[arg(long, value_enum, default_value_t = BoundArg::Mixed)]
    pub bound: BoundArg,
    #[arg(long, default_value_t = 10)]
    pub points_per_decade: usize,
    /// Report path; defaults to `report.txt` in the output directory.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, env = OUT_ENV, default_value = "results")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// Record files exported by `simulate --export-records` or an experiment.
    #[arg(required = true)]
    pub records: Vec<PathBuf>,
    /// `N` of the final assessment; the end of each stream by default.
    #[arg(long, value_parser = parse_positive)]
    pub n0: Option<f64>,
    /// Keep curve points with `N <= clip * N0`.
    #[arg(long, default_value_t = 0.25)]
    pub clip: f64,
    #[arg(long)]
    pub fit_window: Option<Window>,
    #[arg(long, value_enum, default_value_t = BoundArg::Mixed)]
    pub bound: BoundArg,
    #[arg(long, default_value_t = 10)]
    pub points_per_decade: usize,
    #[arg(long, default_value_t = 1e-10)]
    pub mle_tol: f64,
    #[arg(long, default_value_t = 1000)]
    pub mle_max_iter: usize,
    #[arg(long, env = OUT_ENV, default_value = "results")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StatesArg {
    PureHaar,
    BuresMixed,
    File(PathBuf),
}

impl FromStr for StatesArg {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "pure" | "pure-haar" => StatesArg::PureHaar,
            "bures" | "bures-mixed" => StatesArg::BuresMixed,
            path => StatesArg::File(PathBuf::from(path)),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BoundArg {
    Mixed,
    Pure,
}

impl From<BoundArg> for StateKind {
    fn from(b: BoundArg) -> Self {
        match b {
            BoundArg::Mixed => StateKind::MixedQubit,
            BoundArg::Pure => StateKind::PureQubit,
        }
    }
}

/// Closed interval `N1:N2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window(pub f64, pub f64);

impl FromStr for Window {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidParameter(format!("window '{s}' is not N1:N2")))?;
        let a = parse_positive(a).map_err(Error::InvalidParameter)?;
        let b = parse_positive(b).map_err(Error::InvalidParameter)?;
        if a >= b {
            return Err(Error::InvalidParameter(format!("window '{s}' is empty")));
        }
        Ok(Window(a, b))
    }
}

/// Parses counts such as `1e6` or `250000`.
fn parse_positive(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|e| format!("'{s}': {e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("'{s}' must be positive and finite"))
    }
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    Ok(BufWriter::new(
        fs::File::create(path).map_err(|e| io_error(path, e))?,
    ))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(contents.as_bytes())
        .map_err(|e| io_error(path, e))?;
    w.flush().map_err(|e| io_error(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_error(path, e))
}

fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_field<T: FromStr>(field: &str, line: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    field.trim().parse().map_err(|e: T::Err| Error::Parse {
        line,
        message: format!("'{field}': {e}"),
    })
}

// ---------------------------------------------------------------- traces

/// Serializes a trace as CSV, estimate entries appended as `reIJ,imIJ` columns.
pub fn format_trace(trace: &TomographyTrace) -> String {
    let dim = trace.entries.first().map_or(0, |e| e.estimate.dim());
    let mut out = TRACE_COLUMNS.join(",");
    for i in 0..dim {
        for j in 0..dim {
            let _ = write!(out, ",re{i}{j},im{i}{j}");
        }
    }
    out.push('\n');
    for e in &trace.entries {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            trace.protocol,
            trace.run_id,
            trace.seed,
            e.iteration,
            fmt_f64(e.n_emit),
            e.n_det,
            fmt_f64(e.d_bures_sq),
            fmt_f64(e.fidelity),
            fmt_f64(e.loglik)
        );
        for z in e.estimate.matrix().as_slice() {
            let _ = write!(out, ",{},{}", fmt_f64(z.re), fmt_f64(z.im));
        }
        out.push('\n');
    }
    out
}

pub fn parse_trace(text: &str) -> Result<TomographyTrace> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty trace file".into(),
    })?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    if columns.len() < TRACE_COLUMNS.len() || columns[..TRACE_COLUMNS.len()] != TRACE_COLUMNS {
        return Err(Error::Parse {
            line: 1,
            message: "not a trace header".into(),
        });
    }
    let extra = columns.len() - TRACE_COLUMNS.len();
    let dim = ((extra / 2) as f64).sqrt().round() as usize;
    if dim == 0 || 2 * dim * dim != extra {
        return Err(Error::Parse {
            line: 1,
            message: format!("{extra} estimate columns do not form a square matrix"),
        });
    }

    let mut trace: Option<TomographyTrace> = None;
    for (index, line) in lines {
        let n = index + 1;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != columns.len() {
            return Err(Error::Parse {
                line: n,
                message: format!("expected {} fields, found {}", columns.len(), f.len()),
            });
        }
        let entries: Vec<Complex64> = f[TRACE_COLUMNS.len()..]
            .chunks(2)
            .map(|p| Ok(Complex64::new(parse_field(p[0], n)?, parse_field(p[1], n)?)))
            .collect::<Result<_>>()?;
        let estimate = CMatrix::from_row_major(entries)
            .and_then(DensityMatrix::new)
            .map_err(|e| Error::Parse {
                line: n,
                message: e.to_string(),
            })?;
        let entry = TraceEntry {
            iteration: parse_field(f[3], n)?,
            n_emit: parse_field(f[4], n)?,
            n_det: parse_field(f[5], n)?,
            estimate,
            d_bures_sq: parse_field(f[6], n)?,
            fidelity: parse_field(f[7], n)?,
            loglik: parse_field(f[8], n)?,
        };
        let (protocol, run_id, seed) = (f[0].trim(), parse_field(f[1], n)?, parse_field(f[2], n)?);
        let t = trace.get_or_insert_with(|| TomographyTrace {
            protocol: protocol.to_string(),
            run_id,
            seed,
            entries: Vec::new(),
        });
        if t.protocol != protocol || t.run_id != run_id || t.seed != seed {
            return Err(Error::Parse {
                line: n,
                message: "trace file mixes runs".into(),
            });
        }
        t.entries.push(entry);
    }
    trace.ok_or(Error::Parse {
        line: 2,
        message: "trace has no entries".into(),
    })
}

pub fn write_trace(path: &Path, trace: &TomographyTrace) -> Result<()> {
    write_file(path, &format_trace(trace))
}

pub fn read_trace(path: &Path) -> Result<TomographyTrace> {
    parse_trace(&read_file(path)?)
}

// ---------------------------------------------------------------- curves and reports

fn format_points(out: &mut String, curve: &ConvergenceCurve, bound: Option<StateKind>) {
    match bound {
        Some(_) => out.push_str("# n mean std_of_mean bound\n"),
        None => out.push_str("# n mean std_of_mean\n"),
    }
    for p in &curve.points {
        let _ = write!(
            out,
            "point = {} {} {}",
            fmt_f64(p.n),
            fmt_f64(p.mean),
            fmt_f64(p.std_of_mean)
        );
        if let Some(kind) = bound {
            let _ = write!(out, " {}", fmt_f64(gill_massar_bound(p.n, kind)));
        }
        out.push('\n');
    }
}

pub fn format_curve(curve: &ConvergenceCurve) -> String {
    let mut out = String::from("# convergence curve\n");
    let _ = writeln!(out, "label = {}", curve.label);
    let _ = writeln!(out, "runs = {}", curve.runs);
    format_points(&mut out, curve, None);
    out
}

/// `key = value` lines with their line numbers; comments and blanks dropped.
fn key_values(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (index, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line.starts_with('[') {
            out.push((index + 1, line.to_string(), String::new()));
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(Error::Parse {
            line: index + 1,
            message: format!("expected 'key = value', got '{line}'"),
        })?;
        out.push((index + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn parse_point(value: &str, line: usize) -> Result<CurvePoint> {
    let f: Vec<&str> = value.split_whitespace().collect();
    if f.len() < 3 {
        return Err(Error::Parse {
            line,
            message: "point needs n, mean and std_of_mean".into(),
        });
    }
    Ok(CurvePoint {
        n: parse_field(f[0], line)?,
        mean: parse_field(f[1], line)?,
        std_of_mean: parse_field(f[2], line)?,
    })
}

pub fn parse_curve(text: &str) -> Result<ConvergenceCurve> {
    let mut label = None;
    let mut runs = None;
    let mut points = Vec::new();
    for (line, k, v) in key_values(text)? {
        match k.as_str() {
            "label" => label = Some(v),
            "runs" => runs = Some(parse_field(&v, line)?),
            "point" => points.push(parse_point(&v, line)?),
            _ => {
                return Err(Error::Parse {
                    line,
                    message: format!("unknown key '{k}'"),
                })
            }
        }
    }
    let label = label.ok_or(Error::Parse {
        line: 1,
        message: "missing label".into(),
    })?;
    ConvergenceCurve::new(label, runs.unwrap_or(1), points)
}

pub fn write_curve(path: &Path, curve: &ConvergenceCurve) -> Result<()> {
    write_file(path, &format_curve(curve))
}

pub fn read_curve(path: &Path) -> Result<ConvergenceCurve> {
    parse_curve(&read_file(path)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportEntry {
    pub curve: ConvergenceCurve,
    pub fit: Option<PowerLawFit>,
}

/// Mean error of `first` relative to `second` over `window`.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioEntry {
    pub first: String,
    pub second: String,
    pub window: (f64, f64),
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub bound: StateKind,
    pub entries: Vec<ReportEntry>,
    pub ratios: Vec<RatioEntry>,
}

impl Report {
    pub fn entry(&self, label: &str) -> Option<&ReportEntry> {
        self.entries.iter().find(|e| e.curve.label == label)
    }

    pub fn ratio(&self, first: &str, second: &str) -> Option<f64> {
        self.ratios
            .iter()
            .find(|r| r.first == first && r.second == second)
            .map(|r| r.value)
    }
}

pub fn format_report(report: &Report) -> String {
    let mut out = String::from("# tomography analysis report\n");
    let bound = match report.bound {
        StateKind::MixedQubit => "mixed",
        StateKind::PureQubit => "pure",
    };
    let _ = writeln!(out, "bound = {bound}");
    for e in &report.entries {
        let _ = writeln!(out, "\n[curve {}]", e.curve.label);
        let _ = writeln!(out, "runs = {}", e.curve.runs);
        if let Some(f) = &e.fit {
            let _ = writeln!(
                out,
                "fit_window = {} {}",
                fmt_f64(f.window.0),
                fmt_f64(f.window.1)
            );
            let _ = writeln!(out, "alpha = {}", fmt_f64(f.alpha));
            let _ = writeln!(out, "alpha_err = {}", fmt_f64(f.alpha_err));
            let _ = writeln!(out, "beta = {}", fmt_f64(f.beta));
            let _ = writeln!(out, "beta_err = {}", fmt_f64(f.beta_err));
            let _ = writeln!(out, "fit_points = {}", f.points);
            let _ = writeln!(out, "max_residual = {}", fmt_f64(f.max_residual));
        }
        format_points(&mut out, &e.curve, Some(report.bound));
    }
    for r in &report.ratios {
        let _ = writeln!(out, "\n[ratio {} {}]", r.first, r.second);
        let _ = writeln!(
            out,
            "window = {} {}",
            fmt_f64(r.window.0),
            fmt_f64(r.window.1)
        );
        let _ = writeln!(out, "value = {}", fmt_f64(r.value));
    }
    out
}

#[derive(Default)]
struct FitFields {
    window: Option<(f64, f64)>,
    alpha: Option<f64>,
    alpha_err: Option<f64>,
    beta: Option<f64>,
    beta_err: Option<f64>,
    points: Option<usize>,
    max_residual: Option<f64>,
}

impl FitFields {
    fn build(self) -> Option<PowerLawFit> {
        Some(PowerLawFit {
            alpha: self.alpha?,
            beta: self.beta?,
            alpha_err: self.alpha_err?,
            beta_err: self.beta_err?,
            window: self.window?,
            points: self.points?,
            max_residual: self.max_residual?,
        })
    }
}

fn parse_pair(v: &str, line: usize) -> Result<(f64, f64)> {
    let f: Vec<&str> = v.split_whitespace().collect();
    if f.len() != 2 {
        return Err(Error::Parse {
            line,
            message: format!("expected two numbers, got '{v}'"),
        });
    }
    Ok((parse_field(f[0], line)?, parse_field(f[1], line)?))
}

pub fn parse_report(text: &str) -> Result<Report> {
    enum Section {
        Top,
        Curve(String, usize, FitFields, Vec<CurvePoint>),
        Ratio(String, String, Option<(f64, f64)>, Option<f64>),
    }
    let mut bound = None;
    let mut entries = Vec::new();
    let mut ratios = Vec::new();
    let mut section = Section::Top;

    let mut close = |section: Section, line: usize| -> Result<()> {
        match section {
            Section::Top => {}
            Section::Curve(label, runs, fit, points) => entries.push(ReportEntry {
                curve: ConvergenceCurve::new(label, runs, points)?,
                fit: fit.build(),
            }),
            Section::Ratio(first, second, window, value) => {
                let missing = || Error::Parse {
                    line,
                    message: format!("incomplete ratio section {first} {second}"),
                };
                ratios.push(RatioEntry {
                    window: window.ok_or_else(missing)?,
                    value: value.ok_or_else(missing)?,
                    first,
                    second,
                })
            }
        }
        Ok(())
    };

    for (line, k, v) in key_values(text)? {
        if let Some(header) = k.strip_prefix('[').and_then(|h| h.strip_suffix(']')) {
            let words: Vec<&str> = header.split_whitespace().collect();
            let next = match words.as_slice() {
                ["curve", label] => {
                    Section::Curve(label.to_string(), 1, FitFields::default(), Vec::new())
                }
                ["ratio", a, b] => Section::Ratio(a.to_string(), b.to_string(), None, None),
                _ => {
                    return Err(Error::Parse {
                        line,
                        message: format!("unknown section '{header}'"),
                    })
                }
            };
            close(std::mem::replace(&mut section, next), line)?;
            continue;
        }
        match (&mut section, k.as_str()) {
            (Section::Top, "bound") => {
                bound = Some(match v.as_str() {
                    "mixed" => StateKind::MixedQubit,
                    "pure" => StateKind::PureQubit,
                    other => {
                        return Err(Error::Parse {
                            line,
                            message: format!("unknown bound '{other}'"),
                        })
                    }
                })
            }
            (Section::Curve(_, runs, _, _), "runs") => *runs = parse_field(&v, line)?,
            (Section::Curve(_, _, fit, _), key) if key != "point" => match key {
                "fit_window" => fit.window = Some(parse_pair(&v, line)?),
                "alpha" => fit.alpha = Some(parse_field(&v, line)?),
                "alpha_err" => fit.alpha_err = Some(parse_field(&v, line)?),
                "beta" => fit.beta = Some(parse_field(&v, line)?),
                "beta_err" => fit.beta_err = Some(parse_field(&v, line)?),
                "fit_points" => fit.points = Some(parse_field(&v, line)?),
                "max_residual" => fit.max_residual = Some(parse_field(&v, line)?),
                _ => {
                    return Err(Error::Parse {
                        line,
                        message: format!("unknown key '{key}'"),
                    })
                }
            },
            (Section::Curve(_, _, _, points), "point") => points.push(parse_point(&v, line)?),
            (Section::Ratio(_, _, window, _), "window") => *window = Some(parse_pair(&v, line)?),
            (Section::Ratio(_, _, _, value), "value") => *value = Some(parse_field(&v, line)?),
            (_, key) => {
                return Err(Error::Parse {
                    line,
                    message: format!("unexpected key '{key}'"),
                })
            }
        }
    }
    close(section, usize::MAX)?;
    Ok(Report {
        bound: bound.ok_or(Error::Parse {
            line: 1,
            message: "missing bound".into(),
        })?,
        entries,
        ratios,
    })
}

pub fn write_report(path: &Path, report: &Report) -> Result<()> {
    write_file(path, &format_report(report))
}

pub fn read_report(path: &Path) -> Result<Report> {
    parse_report(&read_file(path)?)
}

/// Reads a density matrix written as one row per line, each row holding
/// `re im` pairs separated by whitespace or commas. `#` starts a comment.
pub fn read_state_file(path: &Path) -> Result<DensityMatrix> {
    let text = read_file(path)?;
    let mut entries = Vec::new();
    let mut rows = 0;
    for (index, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let values: Vec<f64> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| parse_field(t, index + 1))
            .collect::<Result<_>>()?;
        if !values.len().is_multiple_of(2) {
            return Err(Error::Parse {
                line: index + 1,
                message: "row needs re/im pairs".into(),
            });
        }
        entries.extend(values.chunks(2).map(|p| Complex64::new(p[0], p[1])));
        rows += 1;
    }
    if rows * rows != entries.len() {
        return Err(Error::Parse {
            line: rows,
            message: format!("{rows} rows do not form a square matrix"),
        });
    }
    CMatrix::from_row_major(entries)
        .and_then(DensityMatrix::new)
        .map_err(|e| io_error(path, e))
}

// ---------------------------------------------------------------- commands

fn trace_path(out: &Path, protocol: &str, run: u64) -> PathBuf {
    out.join(protocol).join(format!("run_{run:04}.trace.csv"))
}

fn records_path(out: &Path, protocol: &str, run: u64) -> PathBuf {
    out.join(protocol).join(format!("run_{run:04}.records.csv"))
}

pub fn curve_path(out: &Path, label: &str) -> PathBuf {
    out.join(format!("{label}.curve"))
}

/// Averaged curve, or a single run's own points with zero spread.
pub fn curve_from_points(
    label: &str,
    traces: &[Vec<(f64, f64)>],
    points_per_decade: usize,
) -> Result<ConvergenceCurve> {
    match traces {
        [] => Err(Error::Curve(format!("no traces for '{label}'"))),
        [single] => ConvergenceCurve::new(
            label,
            1,
            single
                .iter()
                .filter(|p| p.1 > 0.0)
                .map(|&(n, mean)| CurvePoint {
                    n,
                    mean,
                    std_of_mean: 0.0,
                })
                .collect(),
        ),
        many => average_curves(label, many, points_per_decade),
    }
}

/// Result of one `simulate` invocation.
#[derive(Debug, Clone)]
pub struct CampaignSummary {
    pub protocol: Protocol,
    pub curve: ConvergenceCurve,
    pub traces: Vec<TomographyTrace>,
}

pub fn simulate(args: &SimulateArgs) -> Result<Vec<CampaignSummary>> {
    if args.runs == 0 {
        return Err(Error::InvalidParameter("runs must be at least 1".into()));
    }
    let ensemble = match &args.states {
        StatesArg::PureHaar => StateEnsemble::PureHaar,
        StatesArg::BuresMixed => StateEnsemble::BuresMixed,
        StatesArg::File(path) => StateEnsemble::Fixed(read_state_file(path)?),
    };
    let mle = MleOptions {
        max_iter: args.mle_max_iter,
        tol: args.mle_tol,
        ..MleOptions::default()
    };
    mle.validate()?;
    let schedule = Schedule {
        initial_budget: args.initial_budget,
        growth: args.growth,
        n_max: args.n_max,
    };
    schedule.validate()?;
    let source = SourceModel::new(args.intensity, args.efficiency)?;
    if !(0.0..1.0).contains(&args.delta) {
        return Err(Error::InvalidParameter(format!(
            "delta {} outside [0, 1)",
            args.delta
        )));
    }

    let mut summaries = Vec::new();
    for &protocol in &args.protocol {
        let mut config = RunConfig::new(protocol);
        config.source = source;
        config.schedule = schedule;
        config.mle = mle;
        config.plan = PlanOptions {
            delta: args.delta,
            random_v: args.random_v,
        };
        config.warm_start = args.warm_start;
        let dim = config.base.dim();

        let results: Vec<Result<TomographyTrace>> = (0..args.runs)
            .into_par_iter()
            .map(|run| {
                let truth = ensemble.draw(dim, args.seed, run);
                let mut rng = run_rng(args.seed, run, protocol.tag());
                let result = run_tomography(&config, &truth, run, args.seed, &mut rng)?;
                write_trace(&trace_path(&args.out, protocol.name(), run), &result.trace)?;
                if args.export_records {
                    let path = records_path(&args.out, protocol.name(), run);
                    let mut w = create(&path)?;
                    result
                        .stream
                        .write(&mut w)
                        .map_err(|e| io_error(&path, e))?;
                    w.flush().map_err(|e| io_error(&path, e))?;
                }
                Ok(result.trace)
            })
            .collect();
        let mut traces = Vec::with_capacity(results.len());
        let mut first_error = None;
        for r in results {
            match r {
                Ok(t) => traces.push(t),
                Err(e) => {
                    first_error.get_or_insert(e);
                }
            }
        }
        if !traces.is_empty() {
            let points: Vec<_> = traces.iter().map(TomographyTrace::points).collect();
            let curve = curve_from_points(protocol.name(), &points, args.points_per_decade)?;
            write_curve(&curve_path(&args.out, protocol.name()), &curve)?;
            summaries.push(CampaignSummary {
                protocol,
                curve,
                traces,
            });
        }
        if let Some(e) = first_error {
            return Err(e);
        }
    }
    Ok(summaries)
}

fn collect_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut stack = vec![input.clone()];
            while let Some(dir) = stack.pop() {
                let mut listing: Vec<PathBuf> = fs::read_dir(&dir)
                    .map_err(|e| io_error(&dir, e))?
                    .map(|e| e.map(|e| e.path()).map_err(|e| io_error(&dir, e)))
                    .collect::<Result<_>>()?;
                listing.sort();
                for path in listing {
                    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
                    if path.is_dir() {
                        stack.push(path);
                    } else if name.ends_with(".trace.csv") {
                        files.push(path);
                    }
                }
            }
        } else if input.exists() {
            files.push(input.clone());
        } else {
            return Err(io_error(input, "no such file or directory"));
        }
    }
    Ok(files)
}

fn default_window(curve: &ConvergenceCurve, requested: Option<Window>) -> Option<(f64, f64)> {
    if let Some(Window(a, b)) = requested {
        return Some((a, b));
    }
    let first = curve.points.first()?.n;
    let last = curve.points.last()?.n;
    Some((first.max(1e2), last))
}

/// Builds a report from curves: fits each one and evaluates requested ratios.
pub fn build_report(
    curves: Vec<ConvergenceCurve>,
    window: Option<Window>,
    compare: &[(String, String)],
    bound: StateKind,
) -> Result<Report> {
    let entries: Vec<ReportEntry> = curves
        .into_iter()
        .map(|curve| {
            let fit = default_window(&curve, window).and_then(|w| fit_power_law(&curve, w).ok());
            ReportEntry { curve, fit }
        })
        .collect();
    let mut ratios = Vec::new();
    for (a, b) in compare {
        let fit = |label: &str| -> Result<PowerLawFit> {
            entries
                .iter()
                .find(|e| e.curve.label == label)
                .ok_or_else(|| Error::InvalidParameter(format!("no curve labelled '{label}'")))?
                .fit
                .ok_or_else(|| Error::Fit(format!("curve '{label}' has no fit in the window")))
        };
        let (fa, fb) = (fit(a)?, fit(b)?);
        let w = (fa.window.0.max(fb.window.0), fa.window.1.min(fb.window.1));
        ratios.push(RatioEntry {
            first: a.clone(),
            second: b.clone(),
            window: w,
            value: efficiency_ratio(&fb, &fa, w.0, w.1),
        });
    }
    Ok(Report {
        bound,
        entries,
        ratios,
    })
}

fn parse_compare(pairs: &[String]) -> Result<Vec<(String, String)>> {
    pairs
        .iter()
        .map(|p| {
            p.split_once(':')
                .map(|(a, b)| (a.trim().to_string(), b.trim().to_string()))
                .ok_or_else(|| Error::InvalidParameter(format!("comparison '{p}' is not A:B")))
        })
        .collect()
}

pub fn analyze(args: &AnalyzeArgs) -> Result<Report> {
    let compare = parse_compare(&args.compare)?;
    let mut curves: Vec<ConvergenceCurve> = Vec::new();
    let mut grouped: Vec<(String, Vec<Trace>)> = Vec::new();
    for path in collect_inputs(&args.inputs)? {
        let text = read_file(&path)?;
        if text.starts_with("# convergence curve") {
            curves.push(parse_curve(&text).map_err(|e| io_error(&path, e))?);
            continue;
        }
        let trace = parse_trace(&text).map_err(|e| io_error(&path, e))?;
        match grouped.iter_mut().find(|g| g.0 == trace.protocol) {
            Some(g) => g.1.push(trace.points()),
            None => grouped.push((trace.protocol.clone(), vec![trace.points()])),
        }
    }
    for (label, traces) in grouped {
        curves.push(curve_from_points(&label, &traces, args.points_per_decade)?);
    }
    if curves.is_empty() {
        return Err(Error::InvalidParameter("no traces or curves found".into()));
    }
    let report = build_report(curves, args.fit_window, &compare, args.bound.into())?;
    let path = args
        .report
        .clone()
        .unwrap_or_else(|| args.out.join("report.txt"));
    write_report(&path, &report)?;
    Ok(report)
}

/// Replays every record file and writes traces, a clipped curve and a report.
pub fn replay(args: &ReplayArgs) -> Result<Report> {
    if !(args.clip > 0.0 && args.clip <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "clip {} outside (0, 1]",
            args.clip
        )));
    }
    let opts = ReplayOptions {
        n0: args.n0,
        points_per_decade: args.points_per_decade,
        mle: MleOptions {
            max_iter: args.mle_max_iter,
            tol: args.mle_tol,
            ..MleOptions::default()
        },
    };
    opts.mle.validate()?;
    let traces: Vec<TomographyTrace> = args
        .records
        .par_iter()
        .enumerate()
        .map(|(i, path)| {
            let file = fs::File::open(path).map_err(|e| io_error(path, e))?;
            let stream = RecordStream::read(BufReader::new(file)).map_err(|e| io_error(path, e))?;
            let mut trace = replay_counts(&stream, &opts)?;
            trace.run_id = i as u64;
            Ok(trace)
        })
        .collect::<Result<_>>()?;

    let mut clipped = Vec::with_capacity(traces.len());
    for (i, trace) in traces.iter().enumerate() {
        write_trace(&args.out.join(format!("replay_{i:04}.trace.csv")), trace)?;
        let n0 = trace.final_entry().map_or(0.0, |e| e.n_emit);
        let kept: Vec<(f64, f64)> = trace
            .points()
            .into_iter()
            .filter(|&(n, _)| n <= args.clip * n0 * (1.0 + 1e-12))
            .collect();
        if kept.is_empty() {
            return Err(Error::Curve(format!(
                "record file {} has no snapshot below {} N0",
                args.records[i].display(),
                args.clip
            )));
        }
        clipped.push(kept);
    }
    let curve = curve_from_points("replay", &clipped, args.points_per_decade)?;
    write_curve(&curve_path(&args.out, "replay"), &curve)?;
    let report = build_report(vec![curve], args.fit_window, &[], args.bound.into())?;
    write_report(&args.out.join("replay_report.txt"), &report)?;
    Ok(report)
}

fn describe(report: &Report) -> String {
    let mut out = String::new();
    for e in &report.entries {
        match &e.fit {
            Some(f) => {
                let _ = writeln!(
                    out,
                    "{}: {} runs, alpha = {:.4} +- {:.4}, beta = {:.4} +- {:.4} on [{:.3e}, {:.3e}]",
                    e.curve.label, e.curve.runs, f.alpha, f.alpha_err, f.beta, f.beta_err, f.window.0, f.window.1
                );
            }
            None => {
                let _ = writeln!(
                    out,
                    "{}: {} runs, too few points to fit",
                    e.curve.label, e.curve.runs
                );
            }
        }
    }
    for r in &report.ratios {
        let _ = writeln!(out, "R({} vs {}) = {:.4}", r.first, r.second, r.value);
    }
    out
}

/// Executes a parsed command line, printing a short summary to stdout.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(args) => {
            for s in simulate(&args)? {
                let last = s.curve.points.last().expect("non-empty curve");
                println!(
                    "{}: {} runs, mean d_B^2 = {:.4e} at N = {:.4e} -> {}",
                    s.protocol,
                    s.traces.len(),
                    last.mean,
                    last.n,
                    curve_path(&args.out, s.protocol.name()).display()
                );
            }
        }
        Command::Analyze(args) => print!("{}", describe(&analyze(&args)?)),
        Command::Replay(args) => print!("{}", describe(&replay(&args)?)),
    }
    Ok(())
}
