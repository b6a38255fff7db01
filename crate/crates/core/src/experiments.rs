//! Replicate batches and parameter sweeps.
//!
//! Every replicate gets its own seed from [`derive_seed`], so a sweep is a
//! pure function of its `SweepSpec`. Jobs run on a rayon pool; results are
//! collected by job index, which makes the output independent of the worker
//! count and completion order.

use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{run_simulation, RunConfig, UpdateRule};
use crate::error::{Error, Result};
use crate::interaction::ParamMode;
use crate::model::InitScheme;

/// SplitMix64 finalizer: a bijection on 64-bit words.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// Largest temptation / loner index accepted by [`derive_seed`].
pub const MAX_AXIS_INDEX: u32 = u16::MAX as u32;

/// Seed for replicate `replicate` of cell `(t_index, l_index)`.
///
/// The indices are packed into one word (`t` in bits 48..64, `l` in bits
/// 32..48, replicate in bits 0..32), xored into the mixed master seed and
/// mixed again. For a fixed master seed the map is injective over the packed
/// index space because each stage is a bijection.
pub fn derive_seed(master_seed: u64, t_index: u32, l_index: u32, replicate: u32) -> u64 {
    debug_assert!(t_index <= MAX_AXIS_INDEX && l_index <= MAX_AXIS_INDEX);
    let word = ((t_index as u64) << 48) | ((l_index as u64) << 32) | replicate as u64;
    mix64(mix64(master_seed.wrapping_add(GOLDEN)) ^ word)
}

/// Final-step observables of one replicate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: u32,
    pub seed: u64,
    pub mean_epsilon: f64,
    pub mean_alpha: f64,
}

/// Mean and standard error over replicates for one parameter cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateCell {
    pub temptation: f64,
    pub loner: f64,
    pub mean_epsilon: f64,
    pub se_epsilon: f64,
    pub mean_alpha: f64,
    pub se_alpha: f64,
    pub raw: Vec<ReplicateRecord>,
}

/// Sample mean and `sd / sqrt(n)` (zero for a single value).
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl AggregateCell {
    pub fn from_records(temptation: f64, loner: f64, raw: Vec<ReplicateRecord>) -> Self {
        let eps: Vec<f64> = raw.iter().map(|r| r.mean_epsilon).collect();
        let alpha: Vec<f64> = raw.iter().map(|r| r.mean_alpha).collect();
        let (mean_epsilon, se_epsilon) = mean_and_se(&eps);
        let (mean_alpha, se_alpha) = mean_and_se(&alpha);
        AggregateCell {
            temptation,
            loner,
            mean_epsilon,
            se_epsilon,
            mean_alpha,
            se_alpha,
            raw,
        }
    }
}

/// Worker-pool settings shared by all batch operations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Execution {
    /// Number of worker threads; `None` uses `PDPA_THREADS` or all cores.
    pub workers: Option<usize>,
    /// Print cell completion counts to standard error.
    pub progress: bool,
}

impl Default for Execution {
    fn default() -> Self {
        Execution {
            workers: None,
            progress: false,
        }
    }
}

impl Execution {
    pub fn serial() -> Self {
        Execution {
            workers: Some(1),
            progress: false,
        }
    }

    fn resolved_workers(&self) -> usize {
        self.workers
            .or_else(|| std::env::var("PDPA_THREADS").ok().and_then(|v| v.parse().ok()))
            .filter(|&n| n > 0)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }
}

/// One parameter cell of a batch: a full run configuration (its seed field is
/// ignored) plus the axis indices that feed seed derivation.
#[derive(Clone, Debug)]
struct CellJob {
    config: RunConfig,
    t_index: u32,
    l_index: u32,
}

fn run_cells(cells: &[CellJob], replicates: u32, master_seed: u64, exec: Execution) -> Result<Vec<AggregateCell>> {
    if replicates == 0 {
        return Err(Error::param("replicates", "must be at least 1"));
    }
    for cell in cells {
        cell.config.validate()?;
    }
    let jobs: Vec<(usize, u32)> = (0..cells.len())
        .flat_map(|c| (0..replicates).map(move |r| (c, r)))
        .collect();
    let remaining: Vec<AtomicUsize> = cells.iter().map(|_| AtomicUsize::new(replicates as usize)).collect();
    let done = AtomicUsize::new(0);

    let run_job = |&(c, r): &(usize, u32)| -> Result<ReplicateRecord> {
        let cell = &cells[c];
        let seed = derive_seed(master_seed, cell.t_index, cell.l_index, r);
        let config = RunConfig { seed, ..cell.config.clone() };
        let result = run_simulation(&config).map_err(|e| Error::ReplicateFailed {
            seed,
            message: e.to_string(),
        })?;
        let stats = result.final_stats();
        if exec.progress && remaining[c].fetch_sub(1, Ordering::AcqRel) == 1 {
            let finished = done.fetch_add(1, Ordering::AcqRel) + 1;
            eprintln!("cells completed {finished}/{}", cells.len());
        }
        Ok(ReplicateRecord {
            replicate: r,
            seed,
            mean_epsilon: stats.mean_epsilon,
            mean_alpha: stats.mean_alpha,
        })
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(exec.resolved_workers())
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?;
    let records: Vec<ReplicateRecord> =
        pool.install(|| jobs.par_iter().map(run_job).collect::<Result<Vec<_>>>())?;

    Ok(cells
        .iter()
        .zip(records.chunks(replicates as usize))
        .map(|(cell, raw)| {
            AggregateCell::from_records(cell.config.params.temptation, cell.config.params.loner, raw.to_vec())
        })
        .collect())
}

/// Runs `replicates` independent simulations of `config` with seeds derived
/// from `master_seed` at cell `(0, 0)` and aggregates their final states.
pub fn run_replicates(config: &RunConfig, replicates: u32, master_seed: u64, exec: Execution) -> Result<AggregateCell> {
    let cell = CellJob {
        config: config.clone(),
        t_index: 0,
        l_index: 0,
    };
    Ok(run_cells(&[cell], replicates, master_seed, exec)?.remove(0))
}

/// A grid of temptation and loner values to sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub base: RunConfig,
    pub t_values: Vec<f64>,
    pub l_values: Vec<f64>,
    pub schemes: Vec<InitScheme>,
    pub rules: Vec<UpdateRule>,
    pub replicates: u32,
    pub master_seed: u64,
}

/// `start, start + step, …` up to and including `stop`, on a grid of
/// hundredths-exact values.
pub fn linspace_inclusive(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| round_to(start + i as f64 * step, 1e-9)).collect()
}

fn round_to(x: f64, quantum: f64) -> f64 {
    let scale = (1.0 / quantum).round();
    (x * scale).round() / scale
}

impl SweepSpec {
    /// Default T–L plane: both axes at 0.05 spacing with endpoints, OPD and
    /// PDPA schemes under both rules.
    pub fn default_plane(base: RunConfig) -> Self {
        SweepSpec {
            base: RunConfig { mode: ParamMode::Sweep, ..base },
            t_values: linspace_inclusive(1.0, 2.0, 0.05),
            l_values: linspace_inclusive(0.0, 1.0, 0.05),
            schemes: vec![InitScheme::Opd, InitScheme::Pdpa],
            rules: vec![UpdateRule::Synchronous, UpdateRule::Asynchronous],
            replicates: 100,
            master_seed: 1,
        }
    }

    /// Default temptation sweep at the base loner's payoff.
    pub fn default_temptation(base: RunConfig) -> Self {
        SweepSpec {
            t_values: vec![1.1, 1.4, 1.9],
            l_values: vec![base.params.loner],
            schemes: vec![InitScheme::Pd, InitScheme::Opd, InitScheme::Pdpa],
            rules: vec![UpdateRule::Synchronous, UpdateRule::Asynchronous],
            replicates: 100,
            master_seed: 1,
            base,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::param("replicates", "must be at least 1"));
        }
        for (key, values) in [("T", &self.t_values), ("L", &self.l_values)] {
            if values.is_empty() {
                return Err(Error::param(key, "value list is empty"));
            }
            if values.len() > MAX_AXIS_INDEX as usize + 1 {
                return Err(Error::param(key, "too many values"));
            }
            if values.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::param(key, "values must be strictly increasing"));
            }
        }
        if self.schemes.is_empty() {
            return Err(Error::param("scheme", "no schemes given"));
        }
        if self.rules.is_empty() {
            return Err(Error::param("rule", "no rules given"));
        }
        for cell in self.cells(&self.schemes[0], self.rules[0]) {
            cell.config.validate()?;
        }
        for scheme in &self.schemes {
            scheme.validate()?;
        }
        Ok(())
    }

    /// Cells in row-major (L, T) order.
    fn cells(&self, scheme: &InitScheme, rule: UpdateRule) -> Vec<CellJob> {
        let mut cells = Vec::with_capacity(self.t_values.len() * self.l_values.len());
        for (li, &l) in self.l_values.iter().enumerate() {
            for (ti, &t) in self.t_values.iter().enumerate() {
                let mut config = RunConfig {
                    scheme: scheme.clone(),
                    rule,
                    ..self.base.clone()
                };
                config.params.temptation = t;
                config.params.loner = l;
                cells.push(CellJob {
                    config,
                    t_index: ti as u32,
                    l_index: li as u32,
                });
            }
        }
        cells
    }

    /// Total number of simulations the sweep will run.
    pub fn total_runs(&self) -> usize {
        self.t_values.len() * self.l_values.len() * self.schemes.len() * self.rules.len() * self.replicates as usize
    }
}

/// The aggregated plane for one scheme and rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneResult {
    pub scheme: InitScheme,
    pub rule: UpdateRule,
    pub t_values: Vec<f64>,
    pub l_values: Vec<f64>,
    /// Row-major in (L, T): index `l * t_values.len() + t`.
    pub cells: Vec<AggregateCell>,
}

impl PlaneResult {
    pub fn cell(&self, t_index: usize, l_index: usize) -> &AggregateCell {
        &self.cells[l_index * self.t_values.len() + t_index]
    }

    /// `⟨ε⟩` as rows of L, columns of T.
    pub fn epsilon_matrix(&self) -> Vec<Vec<f64>> {
        self.cells
            .chunks(self.t_values.len())
            .map(|row| row.iter().map(|c| c.mean_epsilon).collect())
            .collect()
    }

    /// `⟨α⟩` as rows of L, columns of T.
    pub fn alpha_matrix(&self) -> Vec<Vec<f64>> {
        self.cells
            .chunks(self.t_values.len())
            .map(|row| row.iter().map(|c| c.mean_alpha).collect())
            .collect()
    }
}

/// Sweeps the full grid for every scheme and rule. Replicate seeds depend only
/// on (master seed, T index, L index, replicate), so different schemes and
/// rules share common random seeds.
pub fn sweep_tl(spec: &SweepSpec, exec: Execution) -> Result<Vec<PlaneResult>> {
    spec.validate()?;
    let combos: Vec<(InitScheme, UpdateRule)> = spec
        .schemes
        .iter()
        .flat_map(|s| spec.rules.iter().map(move |&r| (s.clone(), r)))
        .collect();
    let per_plane = spec.t_values.len() * spec.l_values.len();
    let cells: Vec<CellJob> = combos.iter().flat_map(|(s, r)| spec.cells(s, *r)).collect();
    let mut aggregated = run_cells(&cells, spec.replicates, spec.master_seed, exec)?.into_iter();
    Ok(combos
        .into_iter()
        .map(|(scheme, rule)| PlaneResult {
            scheme,
            rule,
            t_values: spec.t_values.clone(),
            l_values: spec.l_values.clone(),
            cells: aggregated.by_ref().take(per_plane).collect(),
        })
        .collect())
}

/// One row of a temptation sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scheme: InitScheme,
    pub rule: UpdateRule,
    pub cell: AggregateCell,
}

/// Temptation sweep at a single loner's payoff: one row per
/// (scheme, rule, T), in that nesting order.
pub fn sweep_temptation(spec: &SweepSpec, exec: Execution) -> Result<Vec<SweepRow>> {
    if spec.l_values.len() != 1 {
        return Err(Error::param("L", "a temptation sweep takes exactly one L value"));
    }
    Ok(sweep_tl(spec, exec)?
        .into_iter()
        .flat_map(|plane| {
            let (scheme, rule) = (plane.scheme, plane.rule);
            plane.cells.into_iter().map(move |cell| SweepRow {
                scheme: scheme.clone(),
                rule,
                cell,
            })
        })
        .collect())
}
