//! Block coordinate descent over the three sub-problems, and the baselines
//! that optimize a single block.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::channel;
use crate::scenario::{initial_feasible_point, DecisionVector, ScenarioConfig, ScenarioError};

use super::feasibility::check_feasibility;
use super::rounding::{repair_schedule, round_scheduling};
use super::subproblem::{build_program, build_subproblem1, Blocks, ScheduleMode};
use super::{solve_convex, SolveError, SolverSettings, SurrogateState};

/// Which blocks are optimized. Blocks left out keep their initial values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum BaselineMode {
    /// All three blocks.
    TOpt,
    /// Sensing schedule and sensing power only.
    UavSsPc,
    /// Trajectory, uplink power and UAV frequency only.
    UavTRa,
    /// BS power and frequency only.
    BsRa,
}

impl BaselineMode {
    pub const ALL: [BaselineMode; 4] = [Self::TOpt, Self::UavSsPc, Self::UavTRa, Self::BsRa];

    pub fn name(self) -> &'static str {
        match self {
            Self::TOpt => "t-opt",
            Self::UavSsPc => "uav-ss-pc",
            Self::UavTRa => "uav-t-ra",
            Self::BsRa => "bs-ra",
        }
    }

    fn blocks(self) -> [bool; 3] {
        match self {
            Self::TOpt => [true, true, true],
            Self::UavSsPc => [true, false, false],
            Self::UavTRa => [false, true, false],
            Self::BsRa => [false, false, true],
        }
    }
}

impl fmt::Display for BaselineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown mode {s:?}; expected one of t-opt, uav-ss-pc, uav-t-ra, bs-ra"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BcdOptions {
    pub max_outer: usize,
    /// Stop once the relative objective change of an outer iteration drops below this.
    pub rel_tol: f64,
    pub solver: SolverSettings,
    /// Relative slack used when auditing candidate points.
    pub feasibility_slack: f64,
}

impl Default for BcdOptions {
    fn default() -> Self {
        Self { max_outer: 20, rel_tol: 1e-3, solver: SolverSettings::default(), feasibility_slack: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcdResult {
    pub decision: DecisionVector,
    /// Total latency before the first iteration and after every outer iteration.
    pub trace: Vec<f64>,
    pub converged: bool,
}

impl BcdResult {
    pub fn objective(&self) -> f64 {
        *self.trace.last().expect("trace holds the initial objective")
    }

    /// Trace as CSV with columns `iteration,objective`.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iteration,objective\n");
        for (i, v) in self.trace.iter().enumerate() {
            out.push_str(&format!("{i},{v:.12e}\n"));
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// Runs the optimizer in `mode` from the scenario's initial feasible point.
pub fn bcd_optimize(cfg: &ScenarioConfig, mode: BaselineMode, opts: &BcdOptions) -> Result<BcdResult, OptimizeError> {
    cfg.validate().into_result()?;
    let start = initial_feasible_point(cfg)?;
    bcd_from(cfg, start, mode, opts)
}

/// Runs the optimizer from a given feasible point.
pub fn bcd_from(
    cfg: &ScenarioConfig,
    start: DecisionVector,
    mode: BaselineMode,
    opts: &BcdOptions,
) -> Result<BcdResult, OptimizeError> {
    let mut d = start;
    let mut obj = channel::system_latency(cfg, &d);
    let mut trace = vec![obj];
    let [b1, b2, b3] = mode.blocks();
    let mut converged = false;
    for _ in 0..opts.max_outer {
        let before = obj;
        if b1 {
            d = improve(cfg, d, opts, block1_candidates)?;
        }
        if b2 {
            d = improve(cfg, d, opts, |cfg, d, s| solve_blocks(cfg, d, s, Blocks { sensing: None, uav: true, bs: false }))?;
        }
        if b3 {
            d = improve(cfg, d, opts, |cfg, d, s| solve_blocks(cfg, d, s, Blocks { sensing: None, uav: false, bs: true }))?;
        }
        if b1 && b2 && b3 {
            // The sensing and UAV blocks draw on the same energy budget, so
            // alternating between them alone can stall with energy held by the
            // block that uses it worse. A joint step with the schedule fixed
            // trades energy between them.
            d = improve(cfg, d, opts, |cfg, d, s| {
                let sensing = Some(ScheduleMode::Fixed(&d.x));
                solve_blocks(cfg, d, s, Blocks { sensing, uav: true, bs: true })
            })?;
        }
        obj = channel::system_latency(cfg, &d);
        trace.push(obj);
        if (before - obj).abs() <= opts.rel_tol * before.abs() {
            converged = true;
            break;
        }
    }
    Ok(BcdResult { decision: d, trace, converged })
}

/// Replaces `d` by the best feasible candidate that does not increase the
/// total latency.
fn improve<F>(cfg: &ScenarioConfig, d: DecisionVector, opts: &BcdOptions, candidates: F) -> Result<DecisionVector, SolveError>
where
    F: Fn(&ScenarioConfig, &DecisionVector, &SolverSettings) -> Result<Vec<DecisionVector>, SolveError>,
{
    let mut best_obj = channel::system_latency(cfg, &d);
    let mut best = d;
    for cand in candidates(cfg, &best, &opts.solver)? {
        let obj = channel::system_latency(cfg, &cand);
        if obj <= best_obj && check_feasibility(cfg, &cand, opts.feasibility_slack).is_feasible() {
            best_obj = obj;
            best = cand;
        }
    }
    Ok(best)
}

/// Solver failures on a surrogate that contains the incumbent are numerical;
/// they only cost the candidate.
fn recoverable(e: &SolveError) -> bool {
    matches!(e, SolveError::Infeasible(_) | SolveError::Numerical(_))
}

fn block1_candidates(
    cfg: &ScenarioConfig,
    d: &DecisionVector,
    settings: &SolverSettings,
) -> Result<Vec<DecisionVector>, SolveError> {
    let state = SurrogateState::from_decision(cfg, d)?;
    let mut out = Vec::new();
    let mut tried_incumbent = false;
    let relaxed = build_subproblem1(cfg, d, &state, ScheduleMode::Relaxed)?;
    match solve_convex(&relaxed.program, settings) {
        Ok((sol, _)) => {
            let relaxed_x = relaxed.apply(cfg, &sol, d).x;
            if let Some(schedule) = repair_schedule(cfg, &round_scheduling(&relaxed_x), &relaxed_x) {
                tried_incumbent = schedule == d.x;
                let polish = build_subproblem1(cfg, d, &state, ScheduleMode::Fixed(&schedule))?;
                match solve_convex(&polish.program, settings) {
                    Ok((sol, _)) => out.push(polish.apply(cfg, &sol, d)),
                    Err(e) if recoverable(&e) => {}
                    Err(e) => return Err(e),
                }
            }
        }
        Err(e) if recoverable(&e) => {}
        Err(e) => return Err(e),
    }
    if !tried_incumbent {
        let polish = build_subproblem1(cfg, d, &state, ScheduleMode::Fixed(&d.x))?;
        match solve_convex(&polish.program, settings) {
            Ok((sol, _)) => out.push(polish.apply(cfg, &sol, d)),
            Err(e) if recoverable(&e) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

fn solve_blocks(
    cfg: &ScenarioConfig,
    d: &DecisionVector,
    settings: &SolverSettings,
    blocks: Blocks<'_>,
) -> Result<Vec<DecisionVector>, SolveError> {
    let state = SurrogateState::from_decision(cfg, d)?;
    let sub = build_program(cfg, d, &state, blocks)?;
    match solve_convex(&sub.program, settings) {
        Ok((sol, _)) => Ok(vec![sub.apply(cfg, &sol, d)]),
        Err(e) if recoverable(&e) => Ok(Vec::new()),
        Err(e) => Err(e),
    }
}
