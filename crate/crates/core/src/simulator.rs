//! Photon-counting experiment engine.
//!
//! A run alternates measurement planning, Poissonian count sampling and
//! re-estimation. Copies are accounted as emitted (`N_emit = I * total
//! exposure time`) and detected (`N_det`, the sum of registered counts). A
//! simultaneity group of orthogonal projectors costs one exposure.

use std::io::{BufRead, Write};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimation::{
    log_likelihood, mle_estimate_from, LikelihoodData, MeasurementRecord, MleOptions,
};
use crate::linalg::CMatrix;
use crate::protocols::{
    base_plan, next_plan, MeasurementPlan, PlanOptions, Protocol, TimedMeasurement,
};
use crate::quantum::{
    born_probability, bures_sq, fidelity, maximally_mixed, mub_qubit, random_bures_mixed,
    random_pure_haar, DensityMatrix, Povm, PovmElement,
};

/// Photon source: `intensity` expected emitted copies per exposition unit,
/// each detected with probability `efficiency`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceModel {
    pub intensity: f64,
    pub efficiency: f64,
}

impl SourceModel {
    pub fn new(intensity: f64, efficiency: f64) -> Result<Self> {
        if !(intensity > 0.0 && intensity.is_finite()) {
            return Err(Error::InvalidParameter(format!("intensity {intensity}")));
        }
        if !(efficiency > 0.0 && efficiency <= 1.0) {
            return Err(Error::InvalidParameter(format!("efficiency {efficiency}")));
        }
        Ok(Self {
            intensity,
            efficiency,
        })
    }

    /// Rate seen by the detectors, the intensity the likelihood works with.
    pub fn detected_intensity(&self) -> f64 {
        self.intensity * self.efficiency
    }
}

impl Default for SourceModel {
    fn default() -> Self {
        Self {
            intensity: 1000.0,
            efficiency: 1.0,
        }
    }
}

/// Geometric batch schedule in expected emitted copies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub initial_budget: f64,
    pub growth: f64,
    pub n_max: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            initial_budget: 100.0,
            growth: 1.25,
            n_max: 1e6,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_budget >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "initial budget {} below 1",
                self.initial_budget
            )));
        }
        if !(self.growth >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "growth {} below 1",
                self.growth
            )));
        }
        if !(self.n_max > self.initial_budget && self.n_max.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "n_max {} must exceed the initial budget",
                self.n_max
            )));
        }
        Ok(())
    }
}

/// Poissonian counts of one measurement held for `time_weight * base_time`.
pub fn sample_counts<R: Rng + ?Sized>(
    m: &TimedMeasurement,
    truth: &DensityMatrix,
    src: &SourceModel,
    base_time: f64,
    rng: &mut R,
) -> Result<u64> {
    let p = born_probability(&m.projector, truth)?;
    let mean = src.detected_intensity() * p * m.time_weight * base_time;
    Ok(poisson(mean, rng))
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean)
        .expect("positive finite mean")
        .sample(rng) as u64
}

/// Counts for every member of one simultaneity group from a single exposure.
pub fn sample_group_counts<R: Rng + ?Sized>(
    plan: &MeasurementPlan,
    group: usize,
    truth: &DensityMatrix,
    src: &SourceModel,
    base_time: f64,
    rng: &mut R,
) -> Result<Vec<u64>> {
    plan.groups()[group]
        .iter()
        .map(|&i| sample_counts(&plan.measurements()[i], truth, src, base_time, rng))
        .collect()
}

/// `N_emit = I * total_time`.
pub fn emitted_copies(total_time: f64, src: &SourceModel) -> f64 {
    src.intensity * total_time
}

/// A measurement record tagged with the exposure it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamRecord {
    pub group: u64,
    pub record: MeasurementRecord,
}

/// Chronological record stream of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordStream {
    pub dim: usize,
    pub source: SourceModel,
    pub records: Vec<StreamRecord>,
}

impl RecordStream {
    /// Cumulative `(records consumed, N_emit)` after each exposure.
    pub fn exposure_boundaries(&self) -> Result<Vec<(usize, f64)>> {
        let mut boundaries = Vec::new();
        let mut seen = std::collections::HashSet::new();
        let mut total_time = 0.0;
        let mut i = 0;
        while i < self.records.len() {
            let group = self.records[i].group;
            if !seen.insert(group) {
                return Err(Error::InvalidRecord(format!(
                    "records of exposure {group} are not contiguous"
                )));
            }
            let mut exposure: f64 = 0.0;
            while i < self.records.len() && self.records[i].group == group {
                exposure = exposure.max(self.records[i].record.time());
                i += 1;
            }
            total_time += exposure;
            boundaries.push((i, emitted_copies(total_time, &self.source)));
        }
        Ok(boundaries)
    }

    fn likelihood_data(&self, prefix: usize) -> Result<LikelihoodData> {
        LikelihoodData::new(
            self.records[..prefix]
                .iter()
                .map(|r| r.record.clone())
                .collect(),
            self.source.detected_intensity(),
        )
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "# dim={} intensity={:.16e} efficiency={:.16e}",
            self.dim, self.source.intensity, self.source.efficiency
        )?;
        let mut columns = vec!["group_id".to_string()];
        for i in 0..self.dim {
            for j in 0..self.dim {
                columns.push(format!("re{i}{j}"));
                columns.push(format!("im{i}{j}"));
            }
        }
        columns.push("time".into());
        columns.push("counts".into());
        writeln!(w, "# {}", columns.join(","))?;
        for r in &self.records {
            write!(w, "{}", r.group)?;
            for z in r.record.element().matrix().as_slice() {
                write!(w, ",{:.16e},{:.16e}", z.re, z.im)?;
            }
            writeln!(w, ",{:.16e},{}", r.record.time(), r.record.counts())?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "empty record file".into(),
        })?;
        let header = header.map_err(|e| parse_error(1, e))?;
        let (dim, source) = parse_stream_header(&header)?;
        let mut records = Vec::new();
        for (index, line) in lines {
            let line_no = index + 1;
            let line = line.map_err(|e| parse_error(line_no, e))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let expected = 3 + 2 * dim * dim;
            if fields.len() != expected {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected {expected} fields, found {}", fields.len()),
                });
            }
            let group: u64 = fields[0].parse().map_err(|e| parse_error(line_no, e))?;
            let mut entries = Vec::with_capacity(dim * dim);
            for pair in fields[1..1 + 2 * dim * dim].chunks(2) {
                let re: f64 = pair[0].parse().map_err(|e| parse_error(line_no, e))?;
                let im: f64 = pair[1].parse().map_err(|e| parse_error(line_no, e))?;
                entries.push(Complex64::new(re, im));
            }
            let time: f64 = fields[expected - 2]
                .parse()
                .map_err(|e| parse_error(line_no, e))?;
            let counts: u64 = fields[expected - 1]
                .parse()
                .map_err(|e| parse_error(line_no, e))?;
            let element = CMatrix::from_row_major(entries)
                .and_then(PovmElement::new)
                .map_err(|e| parse_error(line_no, e))?;
            let record = MeasurementRecord::new(element, time, counts)
                .map_err(|e| parse_error(line_no, e))?;
            records.push(StreamRecord { group, record });
        }
        Ok(Self {
            dim,
            source,
            records,
        })
    }
}

fn parse_error(line: usize, e: impl std::fmt::Display) -> Error {
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

fn parse_stream_header(header: &str) -> Result<(usize, SourceModel)> {
    let body = header
        .strip_prefix('#')
        .ok_or_else(|| parse_error(1, "missing header line"))?;
    let mut dim = None;
    let mut intensity = None;
    let mut efficiency = 1.0;
    for token in body.split_whitespace() {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| parse_error(1, format!("bad header token '{token}'")))?;
        match key {
            "dim" => dim = Some(value.parse::<usize>().map_err(|e| parse_error(1, e))?),
            "intensity" => intensity = Some(value.parse::<f64>().map_err(|e| parse_error(1, e))?),
            "efficiency" => efficiency = value.parse::<f64>().map_err(|e| parse_error(1, e))?,
            _ => return Err(parse_error(1, format!("unknown header key '{key}'"))),
        }
    }
    let dim = dim
        .filter(|&d| d >= 1)
        .ok_or_else(|| parse_error(1, "missing dim"))?;
    let intensity = intensity.ok_or_else(|| parse_error(1, "missing intensity"))?;
    let source = SourceModel::new(intensity, efficiency).map_err(|e| parse_error(1, e))?;
    Ok((dim, source))
}

/// One logged estimation step.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    pub n_emit: f64,
    pub n_det: u64,
    pub estimate: DensityMatrix,
    /// Squared Bures distance to the reference state (the truth, or the final
    /// estimate for replayed data).
    pub d_bures_sq: f64,
    pub fidelity: f64,
    pub loglik: f64,
}

/// Per-iteration log of a tomography run.
#[derive(Debug, Clone, PartialEq)]
pub struct TomographyTrace {
    pub protocol: String,
    pub run_id: u64,
    pub seed: u64,
    pub entries: Vec<TraceEntry>,
}

impl TomographyTrace {
    pub fn final_entry(&self) -> Option<&TraceEntry> {
        self.entries.last()
    }

    /// `(N_emit, d_B^2)` pairs.
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.entries
            .iter()
            .map(|e| (e.n_emit, e.d_bures_sq))
            .collect()
    }
}

/// Everything a run needs besides the true state and its seed.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub protocol: Protocol,
    pub source: SourceModel,
    pub schedule: Schedule,
    pub mle: MleOptions,
    pub plan: PlanOptions,
    /// Start each estimation from the previous estimate instead of `1_D/D`.
    pub warm_start: bool,
    /// Measured at iteration 0 and transformed by the rank-preserving protocols.
    pub base: Povm,
}

impl RunConfig {
    pub fn new(protocol: Protocol) -> Self {
        Self {
            protocol,
            source: SourceModel::default(),
            schedule: Schedule::default(),
            mle: MleOptions::default(),
            plan: PlanOptions::default(),
            warm_start: false,
            base: mub_qubit(),
        }
    }
}

/// A finished run: its trace and the raw record stream.
#[derive(Debug, Clone)]
pub struct Run {
    pub trace: TomographyTrace,
    pub stream: RecordStream,
}

/// Deterministic random stream for `(seed, run, tag)`.
pub fn run_rng(seed: u64, run: u64, tag: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run.wrapping_mul(256).wrapping_add(tag));
    rng
}

/// Runs adaptive tomography of `truth` until `N_emit` reaches `n_max`.
///
/// Iteration 0 measures the base set with orthogonal members grouped; later
/// iterations follow the protocol's plan for the current estimate. Each
/// iteration spends its budget of expected emitted copies by solving
/// `base_time = budget / (I * sum of group exposure weights)`.
pub fn run_tomography<R: Rng + ?Sized>(
    config: &RunConfig,
    truth: &DensityMatrix,
    run_id: u64,
    seed: u64,
    rng: &mut R,
) -> Result<Run> {
    config.schedule.validate()?;
    config.mle.validate()?;
    let dim = truth.dim();
    if config.base.dim() != dim {
        return Err(Error::DimensionMismatch(config.base.dim(), dim));
    }
    let src = config.source;
    let sched = config.schedule;
    let target = sched.n_max * (1.0 - 1e-12);

    let mut estimate = maximally_mixed(dim);
    let mut records: Vec<StreamRecord> = Vec::new();
    let mut entries = Vec::new();
    let mut total_time = 0.0;
    let mut n_det = 0u64;
    let mut budget = sched.initial_budget;
    let mut next_group = 0u64;
    let mut iteration = 0;

    while emitted_copies(total_time, &src) < target {
        let plan = if iteration == 0 {
            base_plan(&config.base)?
        } else {
            next_plan(config.protocol, &estimate, &config.base, &config.plan, rng)?
        };
        let spend = budget.min(sched.n_max - emitted_copies(total_time, &src));
        let base_time = spend / (src.intensity * plan.total_exposure_weight());
        for (g, exposure) in plan.group_exposure_weights().iter().enumerate() {
            let counts = sample_group_counts(&plan, g, truth, &src, base_time, rng)?;
            for (&i, n) in plan.groups()[g].iter().zip(counts) {
                let m = &plan.measurements()[i];
                let record =
                    MeasurementRecord::new(m.projector.clone(), m.time_weight * base_time, n)?;
                n_det += n;
                records.push(StreamRecord {
                    group: next_group,
                    record,
                });
            }
            total_time += exposure * base_time;
            next_group += 1;
        }
        let n_emit = emitted_copies(total_time, &src);

        let data = LikelihoodData::new(
            records.iter().map(|r| r.record.clone()).collect(),
            src.detected_intensity(),
        )?;
        let start = config.warm_start.then_some(&estimate);
        let report =
            mle_estimate_from(&data, &config.mle, start).map_err(|e| Error::Estimation {
                iteration,
                n_emit,
                source: Box::new(e),
            })?;
        estimate = report.estimate;
        entries.push(TraceEntry {
            iteration,
            n_emit,
            n_det,
            d_bures_sq: bures_sq(truth, &estimate)?,
            fidelity: fidelity(truth, &estimate)?,
            loglik: log_likelihood(&data, &estimate)?,
            estimate: estimate.clone(),
        });
        budget *= sched.growth;
        iteration += 1;
    }

    Ok(Run {
        trace: TomographyTrace {
            protocol: config.protocol.name().to_string(),
            run_id,
            seed,
            entries,
        },
        stream: RecordStream {
            dim,
            source: src,
            records,
        },
    })
}

/// Distribution of true states for a campaign.
#[derive(Debug, Clone)]
pub enum StateEnsemble {
    PureHaar,
    BuresMixed,
    Fixed(DensityMatrix),
}

impl StateEnsemble {
    /// The true state of run `run`; shared by every protocol of a campaign.
    pub fn draw(&self, dim: usize, seed: u64, run: u64) -> DensityMatrix {
        let mut rng = run_rng(seed, run, 0);
        match self {
            StateEnsemble::PureHaar => random_pure_haar(dim, &mut rng),
            StateEnsemble::BuresMixed => random_bures_mixed(dim, &mut rng),
            StateEnsemble::Fixed(rho) => rho.clone(),
        }
    }
}

/// Independent runs `0..runs` in parallel; results come back in run order and
/// do not depend on thread scheduling.
pub fn run_campaign(
    config: &RunConfig,
    ensemble: &StateEnsemble,
    runs: u64,
    seed: u64,
) -> Vec<Result<Run>> {
    let dim = config.base.dim();
    (0..runs)
        .into_par_iter()
        .map(|run| {
            let truth = ensemble.draw(dim, seed, run);
            let mut rng = run_rng(seed, run, config.protocol.tag());
            run_tomography(config, &truth, run, seed, &mut rng)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ReplayOptions {
    /// `N` of the final assessment; the whole stream when `None`.
    pub n0: Option<f64>,
    /// Density of the logarithmic snapshot grid.
    pub points_per_decade: usize,
    pub mle: MleOptions,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        Self {
            n0: None,
            points_per_decade: 10,
            mle: MleOptions::default(),
        }
    }
}

/// Re-estimates on growing prefixes of a recorded stream and measures every
/// snapshot against the final assessment `rho(N0)`.
///
/// Prefixes end on exposure boundaries near logarithmically spaced `N`; the
/// last snapshot is `N0` itself, at distance zero.
pub fn replay_counts(stream: &RecordStream, opts: &ReplayOptions) -> Result<TomographyTrace> {
    if stream.records.is_empty() {
        return Err(Error::InvalidRecord("empty record stream".into()));
    }
    if opts.points_per_decade == 0 {
        return Err(Error::InvalidParameter(
            "points per decade must be positive".into(),
        ));
    }
    let boundaries = stream.exposure_boundaries()?;
    let total = boundaries.last().expect("non-empty").1;
    let n0 = opts.n0.unwrap_or(total);
    let eligible: Vec<(usize, f64)> = boundaries
        .iter()
        .copied()
        .filter(|&(_, n)| n <= n0 * (1.0 + 1e-12))
        .collect();
    let Some(&(final_prefix, final_n)) = eligible.last() else {
        return Err(Error::InvalidParameter(format!(
            "N0 = {n0} precedes the first exposure"
        )));
    };

    let first_n = eligible[0].1;
    let decades = (final_n / first_n).log10();
    let steps = (decades * opts.points_per_decade as f64).ceil() as usize;
    let mut chosen: Vec<(usize, f64)> = Vec::new();
    for s in 0..=steps {
        let target = if steps == 0 {
            final_n
        } else {
            first_n * (final_n / first_n).powf(s as f64 / steps as f64)
        };
        let pick = eligible
            .iter()
            .copied()
            .rfind(|&(_, n)| n <= target * (1.0 + 1e-12))
            .unwrap_or(eligible[0]);
        if chosen.last().is_none_or(|&(p, _)| p < pick.0) {
            chosen.push(pick);
        }
    }
    if chosen.last().map(|c| c.0) != Some(final_prefix) {
        chosen.push((final_prefix, final_n));
    }

    let reference_data = stream.likelihood_data(final_prefix)?;
    let reference = mle_estimate_from(&reference_data, &opts.mle, None)?.estimate;
    let mut entries = Vec::with_capacity(chosen.len());
    for (iteration, &(prefix, n_emit)) in chosen.iter().enumerate() {
        let data = stream.likelihood_data(prefix)?;
        let estimate = if prefix == final_prefix {
            reference.clone()
        } else {
            mle_estimate_from(&data, &opts.mle, None)?.estimate
        };
        let n_det = stream.records[..prefix]
            .iter()
            .map(|r| r.record.counts())
            .sum();
        entries.push(TraceEntry {
            iteration,
            n_emit,
            n_det,
            d_bures_sq: bures_sq(&reference, &estimate)?,
            fidelity: fidelity(&reference, &estimate)?,
            loglik: log_likelihood(&data, &estimate)?,
            estimate,
        });
    }
    Ok(TomographyTrace {
        protocol: "replay".into(),
        run_id: 0,
        seed: 0,
        entries,
    })
}
