//! Convex surrogate programs over any subset of the three variable blocks.
//!
//! * sensing: schedule and sensing power
//! * UAV: trajectory, uplink power and UAV computing frequency
//! * BS: BS transmit power and BS computing frequency
//!
//! Each round has an epigraph variable `t[k]` bounding every UAV's latency,
//! and each UAV an energy row. A block that is left out contributes its
//! incumbent time and energy as constants.
//!
//! Variables are normalized so that the incumbent sits near `1`: powers and
//! frequencies over their maxima, slacks over their incumbent values, and
//! waypoints in kilometres.

use std::f64::consts::LN_2;

use crate::scenario::{DecisionVector, ScenarioConfig};

use super::energy::EnergyRows;
use super::rounding::Schedule;
use super::{Atom, ConvexProgram, SolveError, SurrogateState, VarId};

/// How the schedule enters the sensing block.
#[derive(Debug, Clone, Copy)]
pub enum ScheduleMode<'a> {
    /// `x ∈ [0, 1]` is a variable, with the target and demand constraints.
    Relaxed,
    /// `x` is a given binary schedule; only scheduled pairs appear.
    Fixed(&'a Schedule),
}

/// Which blocks are free in a program.
#[derive(Debug, Clone, Copy)]
pub struct Blocks<'a> {
    pub sensing: Option<ScheduleMode<'a>>,
    pub uav: bool,
    pub bs: bool,
}

#[derive(Debug, Clone)]
pub struct Subproblem {
    pub program: ConvexProgram,
    p_se: Vec<Vec<Option<VarId>>>,
    x: Vec<Vec<Vec<Option<VarId>>>>,
    fixed: Option<Schedule>,
    relaxed: bool,
    /// `[k][u][t]` waypoint variables; `None` for the fixed first waypoint.
    waypoints: Vec<Vec<Vec<Option<(VarId, VarId)>>>>,
    p_cm: Vec<Vec<Vec<VarId>>>,
    f_u: Vec<Vec<VarId>>,
    p_bs: Vec<VarId>,
    f_bs: Vec<VarId>,
}

const FLOOR: f64 = 1e-6;
const DEMAND_ROOM: f64 = 1e-3;
const IDLE_POINT: f64 = 1e-3;
const KM: f64 = 1000.0;

/// Sensing block alone.
pub fn build_subproblem1(
    cfg: &ScenarioConfig,
    d: &DecisionVector,
    state: &SurrogateState,
    mode: ScheduleMode<'_>,
) -> Result<Subproblem, SolveError> {
    build_program(cfg, d, state, Blocks { sensing: Some(mode), uav: false, bs: false })
}

/// UAV block alone.
pub fn build_subproblem2(cfg: &ScenarioConfig, d: &DecisionVector, state: &SurrogateState) -> Result<Subproblem, SolveError> {
    build_program(cfg, d, state, Blocks { sensing: None, uav: true, bs: false })
}

/// BS block alone.
pub fn build_subproblem3(cfg: &ScenarioConfig, d: &DecisionVector, state: &SurrogateState) -> Result<Subproblem, SolveError> {
    build_program(cfg, d, state, Blocks { sensing: None, uav: false, bs: true })
}

pub fn build_program(
    cfg: &ScenarioConfig,
    d: &DecisionVector,
    state: &SurrogateState,
    blocks: Blocks<'_>,
) -> Result<Subproblem, SolveError> {
    if blocks.uav && !(cfg.p_cm_max > 0.0) {
        return Err(SolveError::Infeasible("uplink power".into()));
    }
    if blocks.bs && !(cfg.p_bs_max > 0.0) {
        return Err(SolveError::Infeasible("bs power".into()));
    }
    let (k_n, u_n, c_n) = (cfg.num_rounds, cfg.num_uavs, cfg.num_targets);
    let mut b = Builder {
        cfg,
        d,
        state,
        prog: ConvexProgram::new(),
        sub_p_se: vec![vec![None; u_n]; k_n],
        sub_x: vec![vec![vec![None; u_n]; c_n]; k_n],
        waypoints: vec![vec![Vec::new(); u_n]; k_n],
        p_cm: vec![vec![Vec::new(); u_n]; k_n],
        f_u: vec![Vec::new(); k_n],
        p_bs: Vec::new(),
        f_bs: Vec::new(),
        coverage: cfg.coverage(),
    };
    let mut energy = EnergyRows::new(cfg);
    let bs_cycles = cfg.server_iters as f64 * cfg.cycles_per_sample_bs * cfg.probe_set_size as f64;

    for k in 0..k_n {
        let lat = &state.latency[k];
        let t = b.prog.add_var_at(format!("t[{k}]"), 0.0, f64::INFINITY, lat.round_latency * 1.5 + 1.0);
        b.prog.minimize(t, 1.0);
        let bs_vars = if blocks.bs {
            let p = b.prog.add_var_at(format!("p_bs[{k}]"), FLOOR, 1.0, d.p_bs[k] / cfg.p_bs_max);
            let f = b.prog.add_var_at(format!("f_bs[{k}]"), FLOOR, 1.0, d.f_bs[k] / cfg.f_bs_max);
            b.p_bs.push(p);
            b.f_bs.push(f);
            Some((p, f))
        } else {
            None
        };
        let mut per_target: Vec<Vec<VarId>> = vec![Vec::new(); c_n];
        for u in 0..u_n {
            let e = &state.energy[k];
            let mut epigraph = vec![Atom::linear(t, -1.0)];
            let mut energy_atoms = Vec::new();
            match blocks.sensing {
                Some(mode) => b.sensing(k, u, mode, &mut per_target, &mut epigraph, &mut energy_atoms)?,
                None => {
                    epigraph.push(Atom::Constant(lat.t_sense[u]));
                    energy_atoms.push(Atom::Constant(e.e_sense[u] / cfg.e_max));
                }
            }
            if blocks.uav {
                b.uav(k, u, &mut epigraph, &mut energy_atoms);
            } else {
                epigraph.push(Atom::Constant(lat.t_train[u] + lat.t_embed_up[u] + lat.t_model_up[u]));
                energy_atoms.push(Atom::Constant((e.e_train[u] + e.e_embed_up[u] + e.e_model_up[u]) / cfg.e_max));
            }
            match bs_vars {
                Some((p, f)) => {
                    let theta_i = state.theta[k][u];
                    let xi_i = state.xi[k][u];
                    let p_i = d.p_bs[k] / cfg.p_bs_max;
                    let theta = b.prog.add_var_at(format!("theta[{k},{u}]"), FLOOR, f64::INFINITY, 1.0);
                    epigraph.push(Atom::reciprocal(f, bs_cycles / cfg.f_bs_max));
                    epigraph.push(Atom::linear(theta, theta_i));
                    b.prog.add_constraint(
                        format!("downlink rate[{k},{u}]"),
                        vec![
                            Atom::reciprocal(theta, cfg.global_payload * LN_2 / (cfg.bandwidth_bs * theta_i)),
                            Atom::reciprocal(p, xi_i * p_i / (xi_i + 1.0)),
                            Atom::Constant(-((1.0 + xi_i).ln() + xi_i / (xi_i + 1.0))),
                        ],
                    );
                }
                None => epigraph.push(Atom::Constant(lat.t_bs_train + lat.t_download[u])),
            }
            b.prog.add_constraint(format!("latency[{k},{u}]"), epigraph);
            if blocks.sensing.is_some() || blocks.uav {
                energy.add(&mut b.prog, k, u, energy_atoms, e.total_per_uav[u]);
            }
        }
        if matches!(blocks.sensing, Some(ScheduleMode::Relaxed)) {
            for (c, xs) in per_target.into_iter().enumerate() {
                if xs.is_empty() {
                    continue;
                }
                let mut atoms: Vec<Atom> = xs.into_iter().map(|v| Atom::linear(v, 1.0)).collect();
                atoms.push(Atom::Constant(-1.0));
                b.prog.add_constraint(format!("target exclusivity[{k},{c}]"), atoms);
            }
        }
    }
    energy.finish(&mut b.prog);
    let fixed = match blocks.sensing {
        Some(ScheduleMode::Fixed(x)) => Some(x.clone()),
        _ => None,
    };
    Ok(Subproblem {
        program: b.prog,
        p_se: b.sub_p_se,
        x: b.sub_x,
        fixed,
        relaxed: matches!(blocks.sensing, Some(ScheduleMode::Relaxed)),
        waypoints: b.waypoints,
        p_cm: b.p_cm,
        f_u: b.f_u,
        p_bs: b.p_bs,
        f_bs: b.f_bs,
    })
}

struct Builder<'a> {
    cfg: &'a ScenarioConfig,
    d: &'a DecisionVector,
    state: &'a SurrogateState,
    prog: ConvexProgram,
    sub_p_se: Vec<Vec<Option<VarId>>>,
    sub_x: Vec<Vec<Vec<Option<VarId>>>>,
    waypoints: Vec<Vec<Vec<Option<(VarId, VarId)>>>>,
    p_cm: Vec<Vec<Vec<VarId>>>,
    f_u: Vec<Vec<VarId>>,
    p_bs: Vec<VarId>,
    f_bs: Vec<VarId>,
    coverage: Vec<Vec<usize>>,
}

impl Builder<'_> {
    /// Slacks: `ψ̂ = ψ/ψ_i` sensing time, `ι̂ = ι/R_i` radar rate.
    fn sensing(
        &mut self,
        k: usize,
        u: usize,
        mode: ScheduleMode<'_>,
        per_target: &mut [Vec<VarId>],
        epigraph: &mut Vec<Atom>,
        energy_atoms: &mut Vec<Atom>,
    ) -> Result<(), SolveError> {
        let (cfg, d, state) = (self.cfg, self.d, self.state);
        let pairs: Vec<usize> = match mode {
            ScheduleMode::Relaxed => self.coverage[u].clone(),
            ScheduleMode::Fixed(x) => {
                let active: Vec<usize> = (0..cfg.num_targets).filter(|&c| x[k][c][u] >= 0.5).collect();
                if let Some(&c) = active.iter().find(|c| !self.coverage[u].contains(c)) {
                    return Err(SolveError::Structure(format!("UAV {u} scheduled on uncovered target {c}")));
                }
                active
            }
        };
        if pairs.is_empty() {
            return Ok(());
        }
        let log_per_rate = LN_2 / cfg.radar_params().rate_scale();
        let prog = &mut self.prog;
        let p_i = state.p_se[k][u] / cfg.p_se_max;
        let p = prog.add_var_at(format!("p_se[{k},{u}]"), FLOOR, 1.0, p_i);
        self.sub_p_se[k][u] = Some(p);
        let mut sensing_terms = Vec::new();
        // A UAV with a single candidate needs x = 1 exactly, which leaves the
        // relaxed program no interior; the relaxed demand gives it room.
        let mut demand = vec![Atom::Constant(1.0 - DEMAND_ROOM)];
        for &c in &pairs {
            let psi_i = state.psi[k][u][c];
            let lambda_i = state.lambda[k][u][c];
            let rate_i = state.iota[k][u][c];
            // Unscheduled pairs are linearized at a near-zero sensing time so
            // the relaxed program can keep them idle at no cost.
            let psi_point = match mode {
                ScheduleMode::Relaxed if d.x[k][c][u] < 0.5 => IDLE_POINT,
                _ => 1.0,
            };
            let psi = prog.add_var_at(format!("psi[{k},{c},{u}]"), FLOOR, f64::INFINITY, psi_point);
            let iota = prog.add_var_at(format!("iota[{k},{c},{u}]"), FLOOR, f64::INFINITY, 1.0);
            epigraph.push(Atom::linear(psi, psi_i));
            sensing_terms.push((psi, psi_i));
            let x_var = match mode {
                ScheduleMode::Relaxed => {
                    let x = prog.add_var_at(format!("x[{k},{c},{u}]"), 0.0, 1.0, d.x[k][c][u]);
                    self.sub_x[k][c][u] = Some(x);
                    per_target[c].push(x);
                    demand.push(Atom::linear(x, -1.0));
                    Some(x)
                }
                ScheduleMode::Fixed(_) => None,
            };
            let x_atom = |w: f64| x_var.map_or(Atom::Constant(w), |x| Atom::linear(x, w));
            let tangent = (1.0 + lambda_i).ln() + lambda_i / (lambda_i + 1.0);
            let curvature = lambda_i * p_i / (lambda_i + 1.0);
            // x ≤ ψ̂·ι̂ with the product minorized around (psi_point, 1).
            let sum_i = psi_point + 1.0;
            prog.add_constraint(
                format!("sensing time[{k},{c},{u}]"),
                vec![
                    x_atom(1.0),
                    Atom::Constant(0.25 * sum_i * sum_i),
                    Atom::linear(psi, -0.5 * sum_i),
                    Atom::linear(iota, -0.5 * sum_i),
                    Atom::square(0.25, vec![(psi, 1.0), (iota, -1.0)], 0.0),
                ],
            );
            prog.add_constraint(
                format!("radar rate[{k},{c},{u}]"),
                vec![Atom::reciprocal(p, curvature), Atom::linear(iota, rate_i * log_per_rate), Atom::Constant(-tangent)],
            );
            prog.add_constraint(
                format!("radar threshold[{k},{c},{u}]"),
                vec![Atom::reciprocal(p, curvature), x_atom(cfg.rate_threshold * log_per_rate), Atom::Constant(-tangent)],
            );
        }
        if matches!(mode, ScheduleMode::Relaxed) && cfg.require_sensing {
            prog.add_constraint(format!("sensing demand[{k},{u}]"), demand);
        }
        // p·S ≤ bilinear majorant around (p_i, S_i), S the total sensing time.
        let t_sense = state.latency[k].t_sense[u];
        let s_i = if t_sense > 0.0 {
            t_sense
        } else {
            pairs.iter().map(|&c| state.psi[k][u][c]).fold(f64::INFINITY, f64::min)
        };
        let scale = cfg.p_se_max / cfg.e_max;
        energy_atoms.push(Atom::square(0.5 * scale * s_i / p_i, vec![(p, 1.0)], 0.0));
        energy_atoms.push(Atom::square(0.5 * scale * p_i / s_i, sensing_terms, 0.0));
        Ok(())
    }

    /// Slacks per slot: `ĝ` upload time, `ẑ` rate (times `g_i / s_slot`),
    /// `γ̂` SNR and `α̂` squared distance.
    fn uav(&mut self, k: usize, u: usize, epigraph: &mut Vec<Atom>, energy_atoms: &mut Vec<Atom>) {
        let (cfg, d, state) = (self.cfg, self.d, self.state);
        let prog = &mut self.prog;
        let t_n = cfg.time_slots;
        let h2 = (cfg.altitude / KM).powi(2);
        let step2 = (cfg.max_step() / KM).powi(2);
        let slot_payload = (cfg.embed_payload + cfg.model_payload) / t_n as f64;
        let cycles = cfg.local_iters as f64 * cfg.cycles_per_sample[u] * cfg.samples_per_uav[u] as f64;
        let f = prog.add_var_at(format!("f_u[{k},{u}]"), FLOOR, 1.0, d.f_u[k][u] / cfg.f_u_max);
        self.f_u[k].push(f);
        epigraph.push(Atom::reciprocal(f, cycles / cfg.f_u_max));
        energy_atoms.push(Atom::square(cfg.switched_capacitance * cycles * cfg.f_u_max.powi(2) / cfg.e_max, vec![(f, 1.0)], 0.0));

        let xs = &d.traj_x[k][u];
        let ys = &d.traj_y[k][u];
        let mut prev: Option<(VarId, VarId)> = None;
        for s in 0..t_n {
            let alpha_km = state.alpha[k][u][s] / (KM * KM);
            let wp = if s == 0 {
                None
            } else {
                let x = prog.add_var_at(format!("x[{k},{u},{s}]"), f64::NEG_INFINITY, f64::INFINITY, xs[s] / KM);
                let y = prog.add_var_at(format!("y[{k},{u},{s}]"), f64::NEG_INFINITY, f64::INFINITY, ys[s] / KM);
                Some((x, y))
            };
            self.waypoints[k][u].push(wp);

            let p_i = state.p_cm[k][u][s] / cfg.p_cm_max;
            let g_i = state.g[k][u][s];
            let gamma_i = state.gamma[k][u][s];
            let p = prog.add_var_at(format!("p_cm[{k},{u},{s}]"), FLOOR, 1.0, p_i);
            let g = prog.add_var_at(format!("g[{k},{u},{s}]"), FLOOR, f64::INFINITY, 1.0);
            let z = prog.add_var_at(format!("z[{k},{u},{s}]"), FLOOR, f64::INFINITY, 1.0);
            let gamma = prog.add_var_at(format!("gamma[{k},{u},{s}]"), FLOOR, f64::INFINITY, 1.0);
            let alpha_floor = (h2 / alpha_km) * (1.0 - 1e-9);
            let alpha = prog.add_var_at(format!("alpha[{k},{u},{s}]"), alpha_floor, f64::INFINITY, 1.0);
            self.p_cm[k][u].push(p);
            epigraph.push(Atom::linear(g, g_i));
            energy_atoms.push(Atom::square(0.5 * cfg.p_cm_max * g_i * p_i / cfg.e_max, vec![(g, 1.0)], 0.0));
            energy_atoms.push(Atom::square(0.5 * cfg.p_cm_max * g_i / (p_i * cfg.e_max), vec![(p, 1.0)], 0.0));

            // ĝ·ẑ ≥ 1: the upload time covers the slot payload.
            prog.add_constraint(
                format!("upload time[{k},{u},{s}]"),
                vec![
                    Atom::Constant(2.0),
                    Atom::linear(g, -1.0),
                    Atom::linear(z, -1.0),
                    Atom::square(0.25, vec![(g, 1.0), (z, -1.0)], 0.0),
                ],
            );
            prog.add_constraint(
                format!("uplink rate[{k},{u},{s}]"),
                vec![
                    Atom::reciprocal(gamma, gamma_i / (gamma_i + 1.0)),
                    Atom::linear(z, slot_payload * LN_2 / (cfg.bandwidth_uav * g_i)),
                    Atom::Constant(-((1.0 + gamma_i).ln() + gamma_i / (gamma_i + 1.0))),
                ],
            );
            prog.add_constraint(
                format!("uplink snr[{k},{u},{s}]"),
                vec![
                    Atom::square(0.5 * p_i, vec![(alpha, 1.0)], 0.0),
                    Atom::square(0.5 * p_i, vec![(gamma, 1.0)], 0.0),
                    Atom::linear(p, -1.0),
                ],
            );
            let mut dist = vec![Atom::Constant(h2 / alpha_km), Atom::linear(alpha, -1.0)];
            match wp {
                Some((x, y)) => {
                    dist.push(Atom::square(1.0 / alpha_km, vec![(x, 1.0)], 0.0));
                    dist.push(Atom::square(1.0 / alpha_km, vec![(y, 1.0)], 0.0));
                    let (mx, my) = match prev {
                        Some((px, py)) => (
                            Atom::square(1.0 / step2, vec![(x, 1.0), (px, -1.0)], 0.0),
                            Atom::square(1.0 / step2, vec![(y, 1.0), (py, -1.0)], 0.0),
                        ),
                        None => (
                            Atom::square(1.0 / step2, vec![(x, 1.0)], -xs[0] / KM),
                            Atom::square(1.0 / step2, vec![(y, 1.0)], -ys[0] / KM),
                        ),
                    };
                    prog.add_constraint(format!("speed[{k},{u},{s}]"), vec![mx, my, Atom::Constant(-1.0)]);
                    prev = Some((x, y));
                }
                None => {
                    let r2 = (xs[0].powi(2) + ys[0].powi(2)) / (KM * KM);
                    dist.push(Atom::Constant(r2 / alpha_km));
                }
            }
            prog.add_constraint(format!("distance[{k},{u},{s}]"), dist);
        }
        // The download happens at the last waypoint and its surrogate uses the
        // incumbent distance, so that waypoint may not move away from the BS.
        if let Some((x, y)) = prev {
            let last = t_n - 1;
            let r2 = (xs[last].powi(2) + ys[last].powi(2)) / (KM * KM);
            let scale = r2 + h2;
            let room = r2 + 1e-6 * h2;
            prog.add_constraint(
                format!("download distance[{k},{u}]"),
                vec![
                    Atom::square(1.0 / scale, vec![(x, 1.0)], 0.0),
                    Atom::square(1.0 / scale, vec![(y, 1.0)], 0.0),
                    Atom::Constant(-room / scale),
                ],
            );
        }
    }
}

impl Subproblem {
    /// Writes a solution into a copy of `base`. A relaxed schedule is written
    /// with its fractional values.
    pub fn apply(&self, cfg: &ScenarioConfig, sol: &[f64], base: &DecisionVector) -> DecisionVector {
        let mut d = base.clone();
        for (k, row) in self.p_se.iter().enumerate() {
            for (u, v) in row.iter().enumerate() {
                if let Some(v) = v {
                    d.p_se[k][u] = (cfg.p_se_max * sol[*v]).min(cfg.p_se_max);
                }
            }
        }
        if let Some(x) = &self.fixed {
            d.x.clone_from(x);
        } else if self.relaxed {
            for (k, round) in self.x.iter().enumerate() {
                for (c, row) in round.iter().enumerate() {
                    for (u, v) in row.iter().enumerate() {
                        d.x[k][c][u] = v.map_or(0.0, |v| sol[v].clamp(0.0, 1.0));
                    }
                }
            }
        }
        for (k, round) in self.f_u.iter().enumerate() {
            for (u, &f) in round.iter().enumerate() {
                d.f_u[k][u] = (cfg.f_u_max * sol[f]).min(cfg.f_u_max);
                for (s, &p) in self.p_cm[k][u].iter().enumerate() {
                    d.p_cm[k][u][s] = (cfg.p_cm_max * sol[p]).min(cfg.p_cm_max);
                    if let Some((x, y)) = self.waypoints[k][u][s] {
                        d.traj_x[k][u][s] = KM * sol[x];
                        d.traj_y[k][u][s] = KM * sol[y];
                    }
                }
            }
        }
        for (k, (&p, &f)) in self.p_bs.iter().zip(&self.f_bs).enumerate() {
            d.p_bs[k] = (cfg.p_bs_max * sol[p]).min(cfg.p_bs_max);
            d.f_bs[k] = (cfg.f_bs_max * sol[f]).min(cfg.f_bs_max);
        }
        d
    }
}
