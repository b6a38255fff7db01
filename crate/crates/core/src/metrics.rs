//! Population observables, sampling schedules and lattice snapshots.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::model::{effective_cooperation, AgentState, AlphaLevel, Lattice, LatticeConfig, Strategy, ALPHA_LEVELS};

/// Aggregates over all agents at one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationStats {
    pub step: u64,
    pub mean_epsilon: f64,
    pub mean_alpha: f64,
    pub frac_cooperate: f64,
    pub frac_defect: f64,
    /// Fraction of agents at each α level.
    pub alpha_histogram: [f64; ALPHA_LEVELS],
    /// Fraction of agents per (strategy code, α level).
    pub joint_histogram: [[f64; ALPHA_LEVELS]; 2],
}

impl PopulationStats {
    /// Number of α levels held by at least one agent.
    pub fn alpha_levels_present(&self) -> usize {
        self.alpha_histogram.iter().filter(|&&f| f > 0.0).count()
    }

    /// Number of α levels whose frequency exceeds `threshold`.
    pub fn alpha_levels_above(&self, threshold: f64) -> usize {
        self.alpha_histogram.iter().filter(|&&f| f > threshold).count()
    }
}

/// Means are formed from exact integer counts: every observable is a
/// multiple of `1 / (2κ N)`, so a single division per quantity suffices.
pub fn population_stats(lattice: &Lattice, step: u64) -> PopulationStats {
    stats_from_states(lattice.states(), step)
}

fn stats_from_states(states: &[AgentState], step: u64) -> PopulationStats {
    let mut joint = [[0u64; ALPHA_LEVELS]; 2];
    for s in states {
        joint[s.strategy.code() as usize][s.alpha.level()] += 1;
    }
    let n = states.len() as f64;
    let max_level = (ALPHA_LEVELS - 1) as u64;
    let denom = n * max_level as f64;

    let mut alpha_num = 0u64;
    let mut eps_num = 0u64;
    let mut alpha_histogram = [0.0; ALPHA_LEVELS];
    let mut joint_histogram = [[0.0; ALPHA_LEVELS]; 2];
    for level in 0..ALPHA_LEVELS {
        let c = joint[0][level];
        let d = joint[1][level];
        alpha_num += (c + d) * level as u64;
        eps_num += c * (max_level - level as u64);
        alpha_histogram[level] = (c + d) as f64 / n;
        joint_histogram[0][level] = c as f64 / n;
        joint_histogram[1][level] = d as f64 / n;
    }
    let cooperators: u64 = joint[0].iter().sum();
    PopulationStats {
        step,
        mean_epsilon: eps_num as f64 / denom,
        mean_alpha: alpha_num as f64 / denom,
        frac_cooperate: cooperators as f64 / n,
        frac_defect: (states.len() as u64 - cooperators) as f64 / n,
        alpha_histogram,
        joint_histogram,
    }
}

/// Per-site grids of ε, α and strategy code at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotSet {
    pub step: u64,
    pub width: usize,
    pub height: usize,
    pub grid_epsilon: Vec<f64>,
    pub grid_alpha: Vec<f64>,
    pub grid_strategy: Vec<u8>,
}

impl SnapshotSet {
    /// Rebuilds the lattice the snapshot was taken from.
    pub fn to_lattice(&self) -> Result<Lattice> {
        let max = (ALPHA_LEVELS - 1) as f64;
        let states = self
            .grid_strategy
            .iter()
            .zip(&self.grid_alpha)
            .map(|(&code, &alpha)| {
                let strategy = Strategy::from_code(code)
                    .ok_or_else(|| Error::InvalidConfig(format!("strategy code {code} in snapshot")))?;
                let level = (alpha * max).round();
                if (level - alpha * max).abs() > 1e-6 {
                    return Err(Error::InvalidConfig(format!("α = {alpha} is not an admissible level")));
                }
                Ok(AgentState::new(strategy, AlphaLevel::new(level as u32)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Lattice::from_states(LatticeConfig::new(self.width, self.height)?, states)
    }
}

pub fn snapshot(lattice: &Lattice, step: u64) -> SnapshotSet {
    let states = lattice.states();
    SnapshotSet {
        step,
        width: lattice.config().width,
        height: lattice.config().height,
        grid_epsilon: states.iter().map(|&s| effective_cooperation(s)).collect(),
        grid_alpha: states.iter().map(|s| s.alpha.value()).collect(),
        grid_strategy: states.iter().map(|s| s.strategy.code()).collect(),
    }
}

/// Mean ε and α over recorded samples whose step lies in the trailing
/// `window` steps of the series.
pub fn trailing_mean(series: &[PopulationStats], window: u64) -> Option<(f64, f64)> {
    let last = series.last()?.step;
    let from = last.saturating_sub(window);
    let tail: Vec<_> = series.iter().filter(|s| s.step >= from).collect();
    let n = tail.len() as f64;
    Some((
        tail.iter().map(|s| s.mean_epsilon).sum::<f64>() / n,
        tail.iter().map(|s| s.mean_alpha).sum::<f64>() / n,
    ))
}

/// Which steps of a run have their statistics recorded.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SamplingMode {
    /// Every step up to 1000, then about 50 log-spaced points per decade.
    #[default]
    DenseEarly,
    EveryK(u64),
    All,
}

const DENSE_LIMIT: u64 = 1000;
const POINTS_PER_DECADE: f64 = 50.0;

/// Ordered, duplicate-free list of recorded steps; always contains 0 and
/// `step_count`.
pub fn sampling_schedule(step_count: u64, mode: SamplingMode) -> Vec<u64> {
    let mut steps = match mode {
        SamplingMode::All => (0..=step_count).collect(),
        SamplingMode::EveryK(k) => (0..=step_count).step_by(k.max(1) as usize).collect(),
        SamplingMode::DenseEarly => {
            let mut steps: Vec<u64> = (0..=step_count.min(DENSE_LIMIT)).collect();
            let mut k = 1.0;
            loop {
                let t = (DENSE_LIMIT as f64 * 10f64.powf(k / POINTS_PER_DECADE)).round() as u64;
                if t >= step_count {
                    break;
                }
                if t > *steps.last().unwrap() {
                    steps.push(t);
                }
                k += 1.0;
            }
            steps
        }
    };
    if steps.last() != Some(&step_count) {
        steps.push(step_count);
    }
    steps
}

impl fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SamplingMode::DenseEarly => f.write_str("dense-early"),
            SamplingMode::EveryK(k) => write!(f, "every-k:{k}"),
            SamplingMode::All => f.write_str("all"),
        }
    }
}

impl FromStr for SamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense-early" => Ok(SamplingMode::DenseEarly),
            "all" => Ok(SamplingMode::All),
            _ => {
                let k = s
                    .strip_prefix("every-k:")
                    .and_then(|k| k.parse::<u64>().ok())
                    .filter(|&k| k > 0)
                    .ok_or_else(|| {
                        Error::param(
                            "sampling",
                            format!("`{s}` (expected dense-early, all or every-k:<k> with k >= 1)"),
                        )
                    })?;
                Ok(SamplingMode::EveryK(k))
            }
        }
    }
}

impl Serialize for SamplingMode {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SamplingMode {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
