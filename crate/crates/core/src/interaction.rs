//! Pairwise plays with probabilistic abstention and per-agent utilities.
//!
//! When both agents take part in a play they receive the weak prisoner's
//! dilemma payoffs (`R = 1`, `P = S = 0`, temptation `T`); if either abstains
//! both receive the loner's payoff `L`. Each endpoint abstains independently
//! with its own probability α.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AgentState, AlphaLevel, Lattice, Strategy, KAPPA};
use crate::rng::RngStream;

/// How strictly [`GameParams`] are checked against the dilemma ordering.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamMode {
    /// `1 < T < 2` and `0 < L < 1`.
    #[default]
    Strict,
    /// Closed intervals `1 <= T <= 2`, `0 <= L <= 1`; endpoints log a warning.
    Sweep,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameParams {
    #[serde(rename = "T")]
    pub temptation: f64,
    #[serde(rename = "L")]
    pub loner: f64,
    /// Selection noise of the Fermi rule.
    #[serde(rename = "K")]
    pub noise: f64,
}

impl Default for GameParams {
    fn default() -> Self {
        GameParams {
            temptation: 1.4,
            loner: 0.4,
            noise: 0.1,
        }
    }
}

impl GameParams {
    pub const REWARD: f64 = 1.0;
    pub const PUNISHMENT: f64 = 0.0;
    pub const SUCKER: f64 = 0.0;
    pub const KAPPA: u32 = KAPPA;

    pub fn new(temptation: f64, loner: f64) -> Self {
        GameParams {
            temptation,
            loner,
            ..Default::default()
        }
    }

    pub fn validate(&self, mode: ParamMode) -> Result<()> {
        let (t, l) = (self.temptation, self.loner);
        if !(self.noise.is_finite() && self.noise > 0.0) {
            return Err(Error::param("K", format!("noise must be positive, got {}", self.noise)));
        }
        match mode {
            ParamMode::Strict => {
                if !(t > 1.0 && t < 2.0) {
                    return Err(Error::param("T", format!("{t} violates 1 < T < 2")));
                }
                if !(l > 0.0 && l < 1.0) {
                    return Err(Error::param("L", format!("{l} violates 0 < L < 1")));
                }
            }
            ParamMode::Sweep => {
                if !(1.0..=2.0).contains(&t) {
                    return Err(Error::param("T", format!("{t} violates 1 <= T <= 2")));
                }
                if !(0.0..=1.0).contains(&l) {
                    return Err(Error::param("L", format!("{l} violates 0 <= L <= 1")));
                }
                if t == 1.0 || t == 2.0 {
                    log::warn!("T = {t} sits on the boundary of the dilemma region");
                }
                if l == 0.0 || l == 1.0 {
                    log::warn!("L = {l} sits on the boundary of the dilemma region");
                }
            }
        }
        Ok(())
    }

    /// Payoff to an agent playing `own` against `other` when both participate.
    #[inline]
    pub fn matrix(&self, own: Strategy, other: Strategy) -> f64 {
        match (own, other) {
            (Strategy::Cooperate, Strategy::Cooperate) => Self::REWARD,
            (Strategy::Cooperate, Strategy::Defect) => Self::SUCKER,
            (Strategy::Defect, Strategy::Cooperate) => self.temptation,
            (Strategy::Defect, Strategy::Defect) => Self::PUNISHMENT,
        }
    }

    /// Upper bound on a single agent's utility over its κ plays.
    pub fn max_utility(&self) -> f64 {
        KAPPA as f64 * self.temptation.max(Self::REWARD).max(self.loner)
    }
}

/// Result of one pairwise play.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeOutcome {
    pub played: bool,
    pub payoff_x: f64,
    pub payoff_y: f64,
}

/// `(1 − α_x)(1 − α_y)`: both endpoints decide independently to take part.
pub fn interaction_probability(alpha_x: f64, alpha_y: f64) -> f64 {
    (1.0 - alpha_x) * (1.0 - alpha_y)
}

/// Bernoulli participation draw. Pure levels resolve without consuming a word.
#[inline]
pub(crate) fn participates(alpha: AlphaLevel, rng: &mut RngStream) -> bool {
    if alpha == AlphaLevel::NEVER {
        true
    } else if alpha == AlphaLevel::ALWAYS {
        false
    } else {
        rng.uniform() >= alpha.value()
    }
}

/// Outcome class of a play, from the first endpoint's point of view.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub(crate) enum Play {
    Abstained,
    Mutual(Strategy),
    /// First endpoint defected against a cooperator.
    Tempts,
    /// First endpoint cooperated against a defector.
    Exploited,
}

#[inline]
pub(crate) fn play(x: AgentState, y: AgentState, rng: &mut RngStream) -> Play {
    if !participates(x.alpha, rng) || !participates(y.alpha, rng) {
        return Play::Abstained;
    }
    match (x.strategy, y.strategy) {
        (a, b) if a == b => Play::Mutual(a),
        (Strategy::Defect, _) => Play::Tempts,
        _ => Play::Exploited,
    }
}

/// Plays one game between `x` and `y`. `x`'s participation is drawn first;
/// `y`'s draw is skipped if `x` already abstained.
pub fn play_edge(x: AgentState, y: AgentState, params: &GameParams, rng: &mut RngStream) -> EdgeOutcome {
    match play(x, y, rng) {
        Play::Abstained => EdgeOutcome {
            played: false,
            payoff_x: params.loner,
            payoff_y: params.loner,
        },
        _ => EdgeOutcome {
            played: true,
            payoff_x: params.matrix(x.strategy, y.strategy),
            payoff_y: params.matrix(y.strategy, x.strategy),
        },
    }
}

/// Expected payoffs of [`play_edge`] in closed form.
pub fn expected_edge_payoff(x: AgentState, y: AgentState, params: &GameParams) -> (f64, f64) {
    let q = interaction_probability(x.alpha.value(), y.alpha.value());
    let l = params.loner;
    (
        q * params.matrix(x.strategy, y.strategy) + (1.0 - q) * l,
        q * params.matrix(y.strategy, x.strategy) + (1.0 - q) * l,
    )
}

/// Counts of non-zero payoff kinds collected by one agent over its plays,
/// packed as `25·n_T + 5·n_R + n_L`. Utilities are evaluated from the counts in
/// a fixed order, so agents with the same outcome mix get bit-identical
/// utilities regardless of the order their plays happened in.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub(crate) struct Tally(u8);

impl Tally {
    pub const TEMPTATION: u8 = 25;
    pub const REWARD: u8 = 5;
    pub const LONER: u8 = 1;
    pub const SLOTS: usize = 5 * 25;

    #[inline]
    pub fn add(&mut self, delta: u8) {
        self.0 += delta;
    }

    #[inline]
    pub fn code(self) -> usize {
        self.0 as usize
    }
}

/// Per-outcome tally increments for the two endpoints of a play.
#[inline]
pub(crate) fn tally_deltas(outcome: Play) -> (u8, u8) {
    match outcome {
        Play::Abstained => (Tally::LONER, Tally::LONER),
        Play::Mutual(Strategy::Cooperate) => (Tally::REWARD, Tally::REWARD),
        Play::Mutual(Strategy::Defect) => (0, 0),
        Play::Tempts => (Tally::TEMPTATION, 0),
        Play::Exploited => (0, Tally::TEMPTATION),
    }
}

/// Relative gap below which two utilities count as equal.
pub const UTILITY_TIE_TOLERANCE: f64 = 1e-9;

/// Utility lookup for every reachable [`Tally`].
///
/// Different outcome mixes can have the same real utility (with `T = 1.4`,
/// `L = 0.4` one temptation equals one reward plus one loner's payoff) while
/// their floating-point evaluations differ in the last bit. Values within
/// [`UTILITY_TIE_TOLERANCE`] of each other are therefore snapped to one
/// representative, so exact comparisons in the update rules see real ties.
#[derive(Clone, Debug)]
pub(crate) struct UtilityTable([f64; Tally::SLOTS]);

impl UtilityTable {
    pub fn new(params: &GameParams) -> Self {
        let mut table = [0.0; Tally::SLOTS];
        for (code, slot) in table.iter_mut().enumerate() {
            let n_t = (code / 25) as f64;
            let n_r = (code / 5 % 5) as f64;
            let n_l = (code % 5) as f64;
            *slot = n_t * params.temptation + n_r * GameParams::REWARD + n_l * params.loner;
        }
        let mut sorted = table.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut representative = Vec::with_capacity(sorted.len());
        let mut current = sorted[0];
        for &v in &sorted {
            if v - current > UTILITY_TIE_TOLERANCE * current.abs().max(1.0) {
                current = v;
            }
            representative.push((v, current));
        }
        for slot in table.iter_mut() {
            let i = representative.partition_point(|&(v, _)| v < *slot);
            *slot = representative[i].1;
        }
        UtilityTable(table)
    }

    #[inline]
    pub fn utility(&self, tally: Tally) -> f64 {
        self.0[tally.code()]
    }
}

#[inline]
pub(crate) fn gather_tally(lattice: &Lattice, index: usize, rng: &mut RngStream) -> Tally {
    let focal = lattice.state(index);
    let mut tally = Tally::default();
    for &n in lattice.neighbors(index) {
        let (dx, _) = tally_deltas(play(focal, lattice.state(n as usize), rng));
        tally.add(dx);
    }
    tally
}

/// Utility of the agent at `site` from four fresh plays against its
/// neighbours, visited up, down, left, right.
pub fn gather_utility(
    lattice: &Lattice,
    site: crate::model::Site,
    params: &GameParams,
    rng: &mut RngStream,
) -> f64 {
    let tally = gather_tally(lattice, lattice.config().index(site), rng);
    UtilityTable::new(params).utility(tally)
}
