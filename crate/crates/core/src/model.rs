//! Agents, the toroidal lattice they live on, and population initialization.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Degree of every site on the von Neumann lattice.
pub const KAPPA: u32 = 4;

/// Number of admissible abstention levels, `2κ + 1` (both endpoints included).
pub const ALPHA_LEVELS: usize = 2 * KAPPA as usize + 1;

const MAX_LEVEL: u8 = 2 * KAPPA as u8;

/// Game strategy. The numeric code (`C = 0`, `D = 1`) enters the effective
/// cooperation formula and is fixed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    Cooperate,
    Defect,
}

impl Strategy {
    #[inline]
    pub fn code(self) -> u8 {
        match self {
            Strategy::Cooperate => 0,
            Strategy::Defect => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Strategy::Cooperate),
            1 => Some(Strategy::Defect),
            _ => None,
        }
    }
}

/// `level / (2κ)` for `0 <= level <= 2κ`.
pub fn alpha_value(level: u32, kappa: u32) -> Result<f64> {
    if kappa == 0 {
        return Err(Error::param("kappa", "must be at least 1"));
    }
    let max = 2 * kappa;
    if level > max {
        return Err(Error::AlphaOutOfRange { level, max });
    }
    Ok(level as f64 / max as f64)
}

/// Abstention probability, quantized to one of [`ALPHA_LEVELS`] levels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AlphaLevel(u8);

impl AlphaLevel {
    pub const NEVER: AlphaLevel = AlphaLevel(0);
    pub const ALWAYS: AlphaLevel = AlphaLevel(MAX_LEVEL);

    pub fn new(level: u32) -> Result<Self> {
        if level > MAX_LEVEL as u32 {
            return Err(Error::AlphaOutOfRange {
                level,
                max: MAX_LEVEL as u32,
            });
        }
        Ok(AlphaLevel(level as u8))
    }

    #[inline]
    pub fn level(self) -> usize {
        self.0 as usize
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0 as f64 / MAX_LEVEL as f64
    }

    /// True when participation is decided without randomness (`α ∈ {0, 1}`).
    #[inline]
    pub fn is_pure(self) -> bool {
        self.0 == 0 || self.0 == MAX_LEVEL
    }
}

impl fmt::Display for AlphaLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AgentState {
    pub strategy: Strategy,
    pub alpha: AlphaLevel,
}

impl AgentState {
    pub fn new(strategy: Strategy, alpha: AlphaLevel) -> Self {
        AgentState { strategy, alpha }
    }

    pub fn cooperator(alpha: AlphaLevel) -> Self {
        AgentState::new(Strategy::Cooperate, alpha)
    }

    pub fn defector(alpha: AlphaLevel) -> Self {
        AgentState::new(Strategy::Defect, alpha)
    }
}

/// Effective cooperation `ε = (1 − s)(1 − α)`.
#[inline]
pub fn effective_cooperation(state: AgentState) -> f64 {
    (1.0 - state.strategy.code() as f64) * (1.0 - state.alpha.value())
}

/// A `(row, col)` lattice coordinate.
pub type Site = (usize, usize);

/// Dimensions of a periodic square lattice with von Neumann adjacency.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeConfig {
    pub width: usize,
    pub height: usize,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        LatticeConfig {
            width: 102,
            height: 102,
        }
    }
}

impl LatticeConfig {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        let config = LatticeConfig { width, height };
        config.validate()?;
        Ok(config)
    }

    pub fn square(side: usize) -> Result<Self> {
        Self::new(side, side)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 3 || self.height < 3 {
            return Err(Error::InvalidLattice(format!(
                "{}x{} is too small; width and height must both be at least 3",
                self.width, self.height
            )));
        }
        if self.width.checked_mul(self.height).is_none_or(|n| n > u32::MAX as usize) {
            return Err(Error::InvalidLattice(format!(
                "{}x{} has too many sites",
                self.width, self.height
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn sites(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn index(&self, (row, col): Site) -> usize {
        row * self.width + col
    }

    #[inline]
    pub fn site(&self, index: usize) -> Site {
        (index / self.width, index % self.width)
    }
}

/// The four von Neumann neighbours of `site` in (up, down, left, right) order,
/// wrapping periodically on both axes.
pub fn neighbor_sites(config: &LatticeConfig, (row, col): Site) -> [Site; 4] {
    let (w, h) = (config.width, config.height);
    debug_assert!(row < h && col < w);
    [
        ((row + h - 1) % h, col),
        ((row + 1) % h, col),
        (row, (col + w - 1) % w),
        (row, (col + 1) % w),
    ]
}

pub(crate) const DOWN: usize = 1;
pub(crate) const RIGHT: usize = 3;

/// The population: a fully occupied toroidal grid of agents, stored row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lattice {
    config: LatticeConfig,
    states: Vec<AgentState>,
    neighbors: Vec<[u32; 4]>,
}

impl Lattice {
    pub fn from_states(config: LatticeConfig, states: Vec<AgentState>) -> Result<Self> {
        config.validate()?;
        if states.len() != config.sites() {
            return Err(Error::InvalidLattice(format!(
                "expected {} states for a {}x{} lattice, got {}",
                config.sites(),
                config.width,
                config.height,
                states.len()
            )));
        }
        let neighbors = (0..config.sites())
            .map(|i| neighbor_sites(&config, config.site(i)).map(|s| config.index(s) as u32))
            .collect();
        Ok(Lattice {
            config,
            states,
            neighbors,
        })
    }

    pub fn filled(config: LatticeConfig, state: AgentState) -> Result<Self> {
        Self::from_states(config, vec![state; config.sites()])
    }

    pub fn config(&self) -> &LatticeConfig {
        &self.config
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    #[inline]
    pub fn states(&self) -> &[AgentState] {
        &self.states
    }

    #[inline]
    pub fn state(&self, index: usize) -> AgentState {
        self.states[index]
    }

    pub fn get(&self, site: Site) -> AgentState {
        self.states[self.config.index(site)]
    }

    pub fn set(&mut self, site: Site, state: AgentState) {
        let i = self.config.index(site);
        self.states[i] = state;
    }

    #[inline]
    pub(crate) fn set_index(&mut self, index: usize, state: AgentState) {
        self.states[index] = state;
    }

    pub(crate) fn states_mut(&mut self) -> &mut [AgentState] {
        &mut self.states
    }

    /// Neighbour indices of site `index` in (up, down, left, right) order.
    #[inline]
    pub fn neighbors(&self, index: usize) -> &[u32; 4] {
        &self.neighbors[index]
    }

    /// True when every agent holds the same `(s, α)`; such a lattice is
    /// absorbing under both update rules.
    pub fn is_uniform(&self) -> bool {
        let first = self.states[0];
        self.states.iter().all(|&s| s == first)
    }
}

/// How initial abstention levels are drawn. Strategies are always C/D with
/// probability 1/2 each.
#[derive(Clone, Debug, PartialEq)]
pub enum InitScheme {
    /// Every agent has `α = 0`.
    Pd,
    /// `α ∈ {0, 1}` with equal probability.
    Opd,
    /// `α` uniform over all levels.
    Pdpa,
    /// Explicit weight per level, `ALPHA_LEVELS` entries summing to one.
    Custom(Vec<f64>),
}

impl InitScheme {
    pub fn validate(&self) -> Result<()> {
        if let InitScheme::Custom(weights) = self {
            if weights.len() != ALPHA_LEVELS {
                return Err(Error::param(
                    "scheme",
                    format!(
                        "custom scheme needs {ALPHA_LEVELS} weights, got {}",
                        weights.len()
                    ),
                ));
            }
            if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(Error::param("scheme", "custom weights must be non-negative"));
            }
            let total: f64 = weights.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::param(
                    "scheme",
                    format!("custom weights must sum to 1, got {total}"),
                ));
            }
        }
        Ok(())
    }

    /// Short name used on the command line and in file names.
    pub fn name(&self) -> &'static str {
        match self {
            InitScheme::Pd => "pd",
            InitScheme::Opd => "opd",
            InitScheme::Pdpa => "pdpa",
            InitScheme::Custom(_) => "custom",
        }
    }

    fn draw_alpha(&self, rng: &mut RngStream) -> AlphaLevel {
        match self {
            InitScheme::Pd => AlphaLevel::NEVER,
            InitScheme::Opd => {
                if rng.uniform() < 0.5 {
                    AlphaLevel::NEVER
                } else {
                    AlphaLevel::ALWAYS
                }
            }
            InitScheme::Pdpa => AlphaLevel(rng.index(ALPHA_LEVELS) as u8),
            InitScheme::Custom(weights) => {
                let u = rng.uniform();
                let mut acc = 0.0;
                let mut last = 0;
                for (level, &w) in weights.iter().enumerate() {
                    if w > 0.0 {
                        last = level;
                        acc += w;
                        if u < acc {
                            return AlphaLevel(level as u8);
                        }
                    }
                }
                // u landed in the rounding gap above the cumulative sum.
                AlphaLevel(last as u8)
            }
        }
    }
}

impl fmt::Display for InitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitScheme::Custom(weights) => {
                let parts: Vec<String> = weights.iter().map(|w| w.to_string()).collect();
                write!(f, "custom:{}", parts.join(","))
            }
            other => f.write_str(other.name()),
        }
    }
}

impl std::str::FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let scheme = match s {
            "pd" => InitScheme::Pd,
            "opd" => InitScheme::Opd,
            "pdpa" => InitScheme::Pdpa,
            _ => match s.strip_prefix("custom:") {
                Some(spec) => {
                    let weights = spec
                        .split(',')
                        .map(|w| {
                            w.trim().parse::<f64>().map_err(|_| {
                                Error::param("scheme", format!("`{w}` is not a number"))
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    InitScheme::Custom(weights)
                }
                None => {
                    return Err(Error::param(
                        "scheme",
                        format!("unknown scheme `{s}` (expected pd, opd, pdpa or custom:<w0,...,w8>)"),
                    ))
                }
            },
        };
        scheme.validate()?;
        Ok(scheme)
    }
}

impl Serialize for InitScheme {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for InitScheme {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Builds a random population. Sites are visited row-major; each consumes a
/// strategy draw followed by an α draw (no α draw for [`InitScheme::Pd`]).
pub fn initialize(scheme: &InitScheme, config: LatticeConfig, rng: &mut RngStream) -> Result<Lattice> {
    scheme.validate()?;
    config.validate()?;
    let states = (0..config.sites())
        .map(|_| {
            let strategy = if rng.uniform() < 0.5 {
                Strategy::Cooperate
            } else {
                Strategy::Defect
            };
            let alpha = scheme.draw_alpha(rng);
            AgentState::new(strategy, alpha)
        })
        .collect();
    Lattice::from_states(config, states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::model::Strategy;

    #[test]
    fn alpha_values() {
        assert_eq!(alpha_value(0, 4).unwrap(), 0.0);
        assert_eq!(alpha_value(8, 4).unwrap(), 1.0);
        assert_eq!(alpha_value(3, 4).unwrap(), 0.375);
        assert!(matches!(
            alpha_value(9, 4),
            Err(Error::AlphaOutOfRange { level: 9, max: 8 })
        ));
        assert!(alpha_value(0, 0).is_err());
    }

    #[test]
    fn admissible_set_for_degree_four() {
        let values: Vec<f64> = (0..ALPHA_LEVELS as u32)
            .map(|l| AlphaLevel::new(l).unwrap().value())
            .collect();
        assert_eq!(
            values,
            [0.0, 0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875, 1.0]
        );
        assert!(AlphaLevel::new(9).is_err());
    }

    #[test]
    fn neighbor_examples() {
        let big = LatticeConfig::square(102).unwrap();
        assert_eq!(
            neighbor_sites(&big, (0, 0)),
            [(101, 0), (1, 0), (0, 101), (0, 1)]
        );
        assert_eq!(
            neighbor_sites(&big, (50, 50)),
            [(49, 50), (51, 50), (50, 49), (50, 51)]
        );
        let small = LatticeConfig::square(3).unwrap();
        assert_eq!(
            neighbor_sites(&small, (2, 2)),
            [(1, 2), (0, 2), (2, 1), (2, 0)]
        );
    }

    #[test]
    fn tiny_lattices_rejected() {
        assert!(LatticeConfig::new(2, 5).is_err());
        assert!(LatticeConfig::new(5, 2).is_err());
        assert!(LatticeConfig::new(3, 3).is_ok());
    }

    #[test]
    fn effective_cooperation_examples() {
        let c0 = AgentState::cooperator(AlphaLevel::NEVER);
        let d_half = AgentState::defector(AlphaLevel::new(4).unwrap());
        let c_quarter = AgentState::cooperator(AlphaLevel::new(2).unwrap());
        assert_eq!(effective_cooperation(c0), 1.0);
        assert_eq!(effective_cooperation(d_half), 0.0);
        assert_eq!(effective_cooperation(c_quarter), 0.75);
    }

    #[test]
    fn scheme_parsing() {
        assert_eq!("pd".parse::<InitScheme>().unwrap(), InitScheme::Pd);
        assert_eq!("pdpa".parse::<InitScheme>().unwrap(), InitScheme::Pdpa);
        let custom: InitScheme = "custom:0.5,0,0,0,0,0,0,0,0.5".parse().unwrap();
        assert_eq!(custom.to_string().parse::<InitScheme>().unwrap(), custom);
        assert!("custom:0.5,0.5".parse::<InitScheme>().is_err());
        assert!("custom:0.6,0,0,0,0,0,0,0,0.5".parse::<InitScheme>().is_err());
        assert!("custom:-0.5,0,0,0,0,0,0,0,1.5".parse::<InitScheme>().is_err());
        assert!("loner".parse::<InitScheme>().is_err());
    }

    #[test]
    fn pd_scheme_all_never_abstain() {
        let mut rng = RngStream::new(5);
        let lattice = initialize(&InitScheme::Pd, LatticeConfig::square(20).unwrap(), &mut rng).unwrap();
        assert!(lattice.states().iter().all(|s| s.alpha == AlphaLevel::NEVER));
        // one strategy draw per site, no α draws
        assert_eq!(rng.words_consumed(), 400);
    }

    #[test]
    fn opd_scheme_is_binary_and_balanced() {
        let mut rng = RngStream::new(6);
        let lattice = initialize(&InitScheme::Opd, LatticeConfig::square(100).unwrap(), &mut rng).unwrap();
        let always = lattice
            .states()
            .iter()
            .inspect(|s| assert!(s.alpha.is_pure()))
            .filter(|s| s.alpha == AlphaLevel::ALWAYS)
            .count() as f64;
        let n = 10_000.0;
        assert!((always / n - 0.5).abs() < 4.0 * (0.25f64 / n).sqrt());
    }

    #[test]
    fn pdpa_scheme_frequencies() {
        let mut rng = RngStream::new(2024);
        let lattice = initialize(&InitScheme::Pdpa, LatticeConfig::square(100).unwrap(), &mut rng).unwrap();
        let n = lattice.len() as f64;
        let mut counts = [0usize; ALPHA_LEVELS];
        let mut cooperators = 0usize;
        for s in lattice.states() {
            counts[s.alpha.level()] += 1;
            cooperators += (s.strategy == Strategy::Cooperate) as usize;
        }
        let p = 1.0 / 9.0;
        let se = (p * (1.0 - p) / n).sqrt();
        for c in counts {
            assert!((c as f64 / n - p).abs() <= 4.0 * se, "{counts:?}");
        }
        assert!((cooperators as f64 / n - 0.5).abs() <= 4.0 * (0.25 / n).sqrt());
    }

    #[test]
    fn custom_scheme_respects_zero_weights() {
        let scheme: InitScheme = "custom:0,0,0.25,0,0.75,0,0,0,0".parse().unwrap();
        let mut rng = RngStream::new(1);
        let lattice = initialize(&scheme, LatticeConfig::square(30).unwrap(), &mut rng).unwrap();
        assert!(lattice
            .states()
            .iter()
            .all(|s| s.alpha.level() == 2 || s.alpha.level() == 4));
    }

    #[test]
    fn initialize_is_deterministic() {
        let config = LatticeConfig::new(17, 9).unwrap();
        let a = initialize(&InitScheme::Pdpa, config, &mut RngStream::new(99)).unwrap();
        let b = initialize(&InitScheme::Pdpa, config, &mut RngStream::new(99)).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn alpha_strictly_increasing(kappa in 1u32..16, level in 0u32..31) {
            prop_assume!(level < 2 * kappa);
            prop_assert!(alpha_value(level, kappa).unwrap() < alpha_value(level + 1, kappa).unwrap());
            prop_assert_eq!(alpha_value(2 * kappa, kappa).unwrap(), 1.0);
        }

        #[test]
        fn neighbors_symmetric_and_distinct(w in 3usize..12, h in 3usize..12, seed in any::<u64>()) {
            let config = LatticeConfig::new(w, h).unwrap();
            let mut rng = RngStream::new(seed);
            let site = config.site(rng.index(config.sites()));
            let nbrs = neighbor_sites(&config, site);
            for (i, a) in nbrs.iter().enumerate() {
                prop_assert_ne!(*a, site);
                for b in &nbrs[i + 1..] {
                    prop_assert_ne!(a, b);
                }
                prop_assert!(neighbor_sites(&config, *a).contains(&site));
            }
        }

        #[test]
        fn epsilon_plus_alpha_at_most_one(level in 0u32..9, defect in any::<bool>()) {
            let strategy = if defect { Strategy::Defect } else { Strategy::Cooperate };
            let state = AgentState::new(strategy, AlphaLevel::new(level).unwrap());
            let eps = effective_cooperation(state);
            prop_assert!((0.0..=1.0).contains(&eps));
            prop_assert!(eps + state.alpha.value() <= 1.0);
            if eps > 0.0 {
                prop_assert_eq!(state.strategy, Strategy::Cooperate);
            }
        }
    }
}
