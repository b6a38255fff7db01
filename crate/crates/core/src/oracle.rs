//! Reference checks that do not share code paths with the optimized engine.
//!
//! * [`exact_sync_distribution`] enumerates every participation pattern of a
//!   small lattice and applies the synchronous rule in exact integer
//!   arithmetic.
//! * [`edge_play_check`] compares Monte Carlo plays with the closed-form
//!   expectation.
//!
//! These back the `selftest` command and the test suites.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use crate::dynamics::{fermi_probability, run_simulation, RunConfig, Stepper};
use crate::interaction::{expected_edge_payoff, play_edge, GameParams};
use crate::model::{AgentState, AlphaLevel, InitScheme, Lattice, LatticeConfig, Strategy};
use crate::rng::RngStream;

/// Payoffs given as integers over a common denominator, so utilities can be
/// compared without rounding. `R = den`, `P = S = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExactPayoffs {
    pub temptation: i64,
    pub loner: i64,
    pub den: i64,
}

impl ExactPayoffs {
    pub fn to_params(self) -> GameParams {
        GameParams::new(
            self.temptation as f64 / self.den as f64,
            self.loner as f64 / self.den as f64,
        )
    }
}

/// Compact key of a whole lattice: `9 * strategy + level` per site.
pub fn lattice_key(states: &[AgentState]) -> Vec<u8> {
    states
        .iter()
        .map(|s| s.strategy.code() * 9 + s.alpha.level() as u8)
        .collect()
}

/// Exact distribution of the lattice after one synchronous step, keyed by
/// [`lattice_key`]. Enumerates all `2^E` played/abstained patterns of the
/// `E = 2N` undirected edges; feasible for `N <= 12` or so.
pub fn exact_sync_distribution(lattice: &Lattice, payoffs: ExactPayoffs) -> BTreeMap<Vec<u8>, f64> {
    let LatticeConfig { width: w, height: h } = *lattice.config();
    let at = |r: usize, c: usize| r * w + c;
    let states = lattice.states();

    let mut edges = Vec::new();
    for r in 0..h {
        for c in 0..w {
            edges.push((at(r, c), at(r, (c + 1) % w)));
            edges.push((at(r, c), at((r + 1) % h, c)));
        }
    }
    assert!(edges.len() < 26, "lattice too large to enumerate");
    let p_play: Vec<f64> = edges
        .iter()
        .map(|&(a, b)| (1.0 - states[a].alpha.value()) * (1.0 - states[b].alpha.value()))
        .collect();
    let hood: Vec<[usize; 5]> = (0..h)
        .flat_map(|r| (0..w).map(move |c| (r, c)))
        .map(|(r, c)| {
            [
                at(r, c),
                at((r + h - 1) % h, c),
                at((r + 1) % h, c),
                at(r, (c + w - 1) % w),
                at(r, (c + 1) % w),
            ]
        })
        .collect();

    let payoff = |own: Strategy, other: Strategy| match (own, other) {
        (Strategy::Cooperate, Strategy::Cooperate) => payoffs.den,
        (Strategy::Defect, Strategy::Cooperate) => payoffs.temptation,
        _ => 0,
    };

    let mut dist: HashMap<Vec<u8>, f64> = HashMap::new();
    let mut utility = vec![0i64; states.len()];
    for mask in 0u32..(1 << edges.len()) {
        let mut weight = 1.0;
        utility.iter_mut().for_each(|u| *u = 0);
        for (e, &(a, b)) in edges.iter().enumerate() {
            if mask >> e & 1 == 1 {
                weight *= p_play[e];
                utility[a] += payoff(states[a].strategy, states[b].strategy);
                utility[b] += payoff(states[b].strategy, states[a].strategy);
            } else {
                weight *= 1.0 - p_play[e];
                utility[a] += payoffs.loner;
                utility[b] += payoffs.loner;
            }
        }
        if weight == 0.0 {
            continue;
        }
        let next: Vec<AgentState> = hood
            .iter()
            .map(|closed| {
                let top = closed.iter().map(|&s| utility[s]).max().unwrap();
                let winners: Vec<usize> = closed.iter().copied().filter(|&s| utility[s] == top).collect();
                if winners.len() == 1 {
                    states[winners[0]]
                } else {
                    states[closed[0]]
                }
            })
            .collect();
        *dist.entry(lattice_key(&next)).or_default() += weight;
    }
    dist.into_iter().collect()
}

/// Result of comparing sampled outcome frequencies with exact probabilities.
#[derive(Clone, Debug)]
pub struct DistributionCheck {
    pub trials: u64,
    pub outcomes: usize,
    /// Outcomes tested individually (expected count at least `min_expected`).
    pub tested: usize,
    /// Largest |observed − expected| in standard errors over tested bins.
    pub worst_z: f64,
    /// Sampled outcomes that the enumeration says are impossible.
    pub impossible: u64,
    pub pass: bool,
}

/// Outcomes with fewer than this many expected hits are pooled into one bin.
pub const MIN_EXPECTED_COUNT: f64 = 5.0;

pub fn compare_distribution(
    exact: &BTreeMap<Vec<u8>, f64>,
    observed: &HashMap<Vec<u8>, u64>,
    trials: u64,
    sigmas: f64,
) -> DistributionCheck {
    let n = trials as f64;
    let impossible: u64 = observed
        .iter()
        .filter(|(k, _)| !exact.contains_key(*k))
        .map(|(_, &c)| c)
        .sum();
    let mut rare_p = 0.0;
    let mut rare_count = 0u64;
    let mut worst_z: f64 = 0.0;
    let mut tested = 0;
    let z = |count: u64, p: f64| {
        let se = (p * (1.0 - p) / n).sqrt();
        let diff = (count as f64 / n - p).abs();
        if se > 0.0 { diff / se } else if diff == 0.0 { 0.0 } else { f64::INFINITY }
    };
    for (key, &p) in exact {
        let count = observed.get(key).copied().unwrap_or(0);
        if p * n >= MIN_EXPECTED_COUNT {
            tested += 1;
            worst_z = worst_z.max(z(count, p));
        } else {
            rare_p += p;
            rare_count += count;
        }
    }
    if rare_p > 0.0 {
        tested += 1;
        worst_z = worst_z.max(z(rare_count, rare_p));
    }
    DistributionCheck {
        trials,
        outcomes: exact.len(),
        tested,
        worst_z,
        impossible,
        pass: impossible == 0 && worst_z <= sigmas,
    }
}

/// The 3×3 lattice used by the enumeration check: mostly intermediate α,
/// both strategies, one pure agent of each kind.
pub fn oracle_lattice() -> Lattice {
    let c = |l| AgentState::cooperator(AlphaLevel::new(l).unwrap());
    let d = |l| AgentState::defector(AlphaLevel::new(l).unwrap());
    let states = vec![
        c(2), d(5), c(4), //
        d(3), c(0), c(6), //
        c(1), d(0), d(7),
    ];
    Lattice::from_states(LatticeConfig::square(3).unwrap(), states).unwrap()
}

/// `T = 7/5`, `L = 2/5`.
pub const ORACLE_PAYOFFS: ExactPayoffs = ExactPayoffs {
    temptation: 7,
    loner: 2,
    den: 5,
};

/// Samples `trials` independent synchronous steps of `lattice` and checks
/// them against the exact enumeration.
pub fn sync_distribution_check(lattice: &Lattice, payoffs: ExactPayoffs, trials: u64, seed: u64) -> DistributionCheck {
    let exact = exact_sync_distribution(lattice, payoffs);
    let mut stepper = Stepper::new(payoffs.to_params());
    let mut rng = RngStream::new(seed);
    let mut observed: HashMap<Vec<u8>, u64> = HashMap::new();
    let mut scratch = lattice.clone();
    for _ in 0..trials {
        scratch.clone_from(lattice);
        stepper.sync_step(&mut scratch, &mut rng);
        *observed.entry(lattice_key(scratch.states())).or_default() += 1;
    }
    compare_distribution(&exact, &observed, trials, 4.0)
}

/// Monte Carlo mean payoffs of one edge against [`expected_edge_payoff`].
#[derive(Clone, Copy, Debug)]
pub struct EdgeCheck {
    pub expected: (f64, f64),
    pub mean: (f64, f64),
    pub se: (f64, f64),
}

impl EdgeCheck {
    /// Largest deviation in standard errors; deterministic plays must match
    /// exactly.
    pub fn worst_z(&self) -> f64 {
        let z = |m: f64, e: f64, se: f64| {
            if se > 0.0 {
                (m - e).abs() / se
            } else if m == e {
                0.0
            } else {
                f64::INFINITY
            }
        };
        z(self.mean.0, self.expected.0, self.se.0).max(z(self.mean.1, self.expected.1, self.se.1))
    }
}

pub fn edge_play_check(x: AgentState, y: AgentState, params: &GameParams, draws: u64, rng: &mut RngStream) -> EdgeCheck {
    let expected = expected_edge_payoff(x, y, params);
    // accumulate deviations so a deterministic play stays exact
    let (mut sx, mut sy, mut qx, mut qy) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..draws {
        let out = play_edge(x, y, params, rng);
        let (dx, dy) = (out.payoff_x - expected.0, out.payoff_y - expected.1);
        sx += dx;
        sy += dy;
        qx += dx * dx;
        qy += dy * dy;
    }
    let n = draws as f64;
    let (bx, by) = (sx / n, sy / n);
    let se = |q: f64, b: f64| ((q / n - b * b).max(0.0) / (n - 1.0)).sqrt();
    EdgeCheck {
        expected,
        mean: (expected.0 + bx, expected.1 + by),
        se: (se(qx, bx), se(qy, by)),
    }
}

/// Random `(state, state, params)` triples for the edge-play check.
pub fn random_edge_cases(count: usize, seed: u64) -> Vec<(AgentState, AgentState, GameParams)> {
    let mut rng = RngStream::new(seed);
    let state = |rng: &mut RngStream| {
        let strategy = if rng.uniform() < 0.5 { Strategy::Cooperate } else { Strategy::Defect };
        AgentState::new(strategy, AlphaLevel::new(rng.index(9) as u32).unwrap())
    };
    (0..count)
        .map(|_| {
            let x = state(&mut rng);
            let y = state(&mut rng);
            let params = GameParams::new(1.0 + rng.uniform(), rng.uniform());
            (x, y, params)
        })
        .collect()
}

/// Runs the quick oracle battery, writing one line per check. Returns true
/// when everything passed.
pub fn selftest(out: &mut dyn Write, seed: u64) -> std::io::Result<bool> {
    let mut all = true;
    let mut report = |out: &mut dyn Write, name: &str, pass: bool, detail: String| -> std::io::Result<()> {
        all &= pass;
        writeln!(out, "{} {name}: {detail}", if pass { "PASS" } else { "FAIL" })
    };

    let w0 = fermi_probability(1.0, 1.0, 0.1, 4).unwrap_or(f64::NAN);
    let w1 = fermi_probability(0.0, 0.4, 0.1, 4).unwrap_or(f64::NAN);
    let w2 = fermi_probability(0.4, 0.0, 0.1, 4).unwrap_or(f64::NAN);
    let e = std::f64::consts::E;
    let pass = (w0 - 0.5).abs() < 1e-9 && (w1 - 1.0 / (1.0 + 1.0 / e)).abs() < 1e-9 && (w2 - 1.0 / (1.0 + e)).abs() < 1e-9;
    report(out, "fermi", pass, format!("W = {w0:.9}, {w1:.9}, {w2:.9}"))?;

    let mut rng = RngStream::new(seed);
    let worst = random_edge_cases(20, seed ^ 0xed9e)
        .iter()
        .map(|(x, y, p)| edge_play_check(*x, *y, p, 100_000, &mut rng).worst_z())
        .fold(0.0, f64::max);
    report(out, "edge-play", worst <= 4.0, format!("worst deviation {worst:.2} standard errors over 20 cases"))?;

    let check = sync_distribution_check(&oracle_lattice(), ORACLE_PAYOFFS, 20_000, seed);
    report(
        out,
        "sync-enumeration",
        check.pass,
        format!(
            "{} outcomes, {} bins, worst {:.2} standard errors, {} impossible",
            check.outcomes, check.tested, check.worst_z, check.impossible
        ),
    )?;

    for scheme in [InitScheme::Pd, InitScheme::Opd] {
        let config = RunConfig {
            lattice: LatticeConfig::square(20).unwrap(),
            scheme: scheme.clone(),
            steps: 200,
            sampling: crate::metrics::SamplingMode::All,
            seed,
            ..Default::default()
        };
        let pass = match run_simulation(&config) {
            Ok(result) => result.series.iter().all(|s| match scheme {
                InitScheme::Pd => s.mean_alpha == 0.0,
                _ => s.alpha_histogram[1..8].iter().all(|&f| f == 0.0),
            }),
            Err(_) => false,
        };
        report(out, &format!("closure-{}", scheme.name()), pass, "α support preserved over 200 steps".into())?;
    }
    Ok(all)
}
