//! Grid-search reference optimum for single-UAV, single-target, single-round
//! instances.
//!
//! The search covers the schedule bit, the sensing power, the uplink power of
//! every slot, the BS power and frequency, and a one-parameter trajectory
//! family: the UAV heads straight for the BS at a fraction of its top speed.
//! Every slot's distance to the BS is then as small as the speed limit allows
//! when the fraction is one, so the family contains the optimal path. The UAV
//! frequency is set in closed form: training time falls with frequency, so
//! the best choice spends the energy left over, capped at the maximum.
//!
//! After the exhaustive grid the search zooms in on the best point a fixed
//! number of times, each time on a grid of the same size over a box of two
//! cells on either side.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::channel;
use crate::scenario::{DecisionVector, ScenarioConfig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("oracle needs one UAV, one target, one round and at most three slots")]
    TooLarge,
    #[error("grid of {0} points exceeds the limit of 1e7")]
    GridTooLarge(f64),
    #[error("no grid point is feasible")]
    NoFeasiblePoint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    /// Points per dimension, endpoints included.
    pub grid_points: usize,
    pub zoom_levels: usize,
    /// Restrict the schedule bit, e.g. to check the unscheduled objective.
    pub force_schedule: Option<bool>,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self { grid_points: 10, zoom_levels: 12, force_schedule: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub objective: f64,
    pub decision: DecisionVector,
    pub evaluations: usize,
}

/// Continuous coordinates of one grid point, each in `[0, 1]`: sensing
/// power, per-slot uplink power and trajectory speed fraction, all relative
/// to their maxima.
#[derive(Debug, Clone, PartialEq)]
struct Point {
    p_se: f64,
    p_cm: Vec<f64>,
    speed: f64,
}

struct Instance<'a> {
    cfg: &'a ScenarioConfig,
    start: [f64; 2],
    gain: f64,
    covered: bool,
    cycles: f64,
    slot_payload: f64,
    bs_latency: Box<dyn Fn(f64) -> f64 + 'a>,
}

const LOWEST: f64 = 1e-4;

pub fn brute_force_oracle(cfg: &ScenarioConfig, opts: &OracleOptions) -> Result<OracleResult, OracleError> {
    if cfg.num_uavs != 1 || cfg.num_targets != 1 || cfg.num_rounds != 1 || cfg.time_slots > 3 {
        return Err(OracleError::TooLarge);
    }
    let n = opts.grid_points.max(2);
    let dims = cfg.time_slots + 2;
    let size = 2.0 * (n as f64).powi(dims as i32);
    if size > 1e7 {
        return Err(OracleError::GridTooLarge(size));
    }
    let bs_grid: Vec<f64> = (1..=n).map(|i| i as f64 / n as f64).collect();
    let inst = Instance {
        cfg,
        start: cfg.uav_start_positions()[0],
        gain: channel::target_response(cfg.hover_point(0), cfg.target_positions[0], cfg.pathloss_const, cfg.target_reflectivity),
        covered: !cfg.coverage()[0].is_empty(),
        cycles: cfg.local_iters as f64 * cfg.cycles_per_sample[0] * cfg.samples_per_uav[0] as f64,
        slot_payload: (cfg.embed_payload + cfg.model_payload) / cfg.time_slots as f64,
        // BS power and frequency only enter through the server and download
        // times, so their grid is searched separately for each end point.
        bs_latency: Box::new(move |end_dist: f64| {
            let mut best = f64::INFINITY;
            for &f in &bs_grid {
                let t_bs = channel::server_train_time(cfg.server_iters, cfg.cycles_per_sample_bs, cfg.probe_set_size as f64, f * cfg.f_bs_max);
                for &p in &bs_grid {
                    let rate = channel::downlink_rate(p * cfg.p_bs_max, end_dist, cfg.bandwidth_bs, cfg.ref_snr());
                    best = best.min(t_bs + cfg.global_payload / rate);
                }
            }
            best
        }),
    };

    let schedules: Vec<bool> = match opts.force_schedule {
        Some(x) => vec![x],
        None => vec![false, true],
    };
    let mut best: Option<(f64, bool, Point)> = None;
    let mut evaluations = 0;
    for &x in &schedules {
        let full = vec![(0.0, 1.0); dims];
        let Some((mut obj, mut point)) = grid_search(&inst, x, &full, n, &mut evaluations) else {
            continue;
        };
        let mut cell = 1.0 / (n - 1) as f64;
        for _ in 0..opts.zoom_levels {
            let centre = point.coords();
            let boxes: Vec<(f64, f64)> = centre.iter().map(|&c| ((c - 2.0 * cell).max(0.0), (c + 2.0 * cell).min(1.0))).collect();
            cell *= 4.0 / (n - 1) as f64;
            if let Some((o, p)) = grid_search(&inst, x, &boxes, n, &mut evaluations) {
                if o <= obj {
                    obj = o;
                    point = p;
                }
            }
        }
        if best.as_ref().map_or(true, |b| obj < b.0) {
            best = Some((obj, x, point));
        }
    }
    let (objective, x, point) = best.ok_or(OracleError::NoFeasiblePoint)?;
    let decision = inst.decision(x, &point);
    Ok(OracleResult { objective, decision, evaluations })
}

impl Point {
    fn coords(&self) -> Vec<f64> {
        let mut c = vec![self.p_se, self.speed];
        c.extend(&self.p_cm);
        c
    }

    fn from_coords(c: &[f64]) -> Self {
        Self { p_se: c[0], speed: c[1], p_cm: c[2..].to_vec() }
    }
}

fn axis(lo: f64, hi: f64, n: usize, floor: f64) -> Vec<f64> {
    (0..n).map(|i| (lo + (hi - lo) * i as f64 / (n - 1) as f64).max(floor)).collect()
}

/// Best point of the grid spanned by `boxes` (`p_se`, speed, then the slots).
fn grid_search(inst: &Instance<'_>, x: bool, boxes: &[(f64, f64)], n: usize, evaluations: &mut usize) -> Option<(f64, Point)> {
    let cfg = inst.cfg;
    let t_n = cfg.time_slots;
    let p_se_axis = if x { axis(boxes[0].0, boxes[0].1, n, LOWEST) } else { vec![0.5] };
    let speed_axis = axis(boxes[1].0, boxes[1].1, n, 0.0);
    let slot_axes: Vec<Vec<f64>> = (0..t_n).map(|s| axis(boxes[2 + s].0, boxes[2 + s].1, n, LOWEST)).collect();
    let mut best: Option<(f64, Vec<f64>)> = None;

    for &speed in &speed_axis {
        let dists = inst.distances(speed);
        // Upload time and energy per slot and power level.
        let slot_cost: Vec<Vec<(f64, f64)>> = (0..t_n)
            .map(|s| {
                slot_axes[s]
                    .iter()
                    .map(|&p| {
                        let rate = channel::uplink_rate(p * cfg.p_cm_max, dists[s], cfg.bandwidth_uav, cfg.ref_snr());
                        let time = inst.slot_payload / rate;
                        (time, time * p * cfg.p_cm_max)
                    })
                    .collect()
            })
            .collect();
        let tail = (inst.bs_latency)(dists[t_n - 1]);
        for &p_se in &p_se_axis {
            let Some((t_se, e_se)) = inst.sensing(x, p_se) else { continue };
            let mut idx = vec![0usize; t_n];
            loop {
                *evaluations += 1;
                let (mut time, mut energy) = (t_se + tail, e_se);
                for s in 0..t_n {
                    let (t, e) = slot_cost[s][idx[s]];
                    time += t;
                    energy += e;
                }
                let left = cfg.e_max - energy;
                if left > 0.0 {
                    let f = (left / (cfg.switched_capacitance * inst.cycles)).sqrt().min(cfg.f_u_max);
                    let obj = time + inst.cycles / f;
                    if best.as_ref().map_or(true, |b| obj < b.0) {
                        let mut c = vec![p_se, speed];
                        c.extend((0..t_n).map(|s| slot_axes[s][idx[s]]));
                        best = Some((obj, c));
                    }
                }
                // Odometer over the slot power levels.
                let mut s = 0;
                while s < t_n {
                    idx[s] += 1;
                    if idx[s] < n {
                        break;
                    }
                    idx[s] = 0;
                    s += 1;
                }
                if s == t_n {
                    break;
                }
            }
        }
    }
    best.map(|(o, c)| (o, Point::from_coords(&c)))
}

impl Instance<'_> {
    fn waypoints(&self, speed: f64) -> Vec<[f64; 2]> {
        let [x0, y0] = self.start;
        let r = x0.hypot(y0);
        let step = speed * self.cfg.max_step();
        (0..self.cfg.time_slots)
            .map(|t| {
                if r == 0.0 {
                    return [x0, y0];
                }
                let keep = 1.0 - (t as f64 * step / r).min(1.0);
                [x0 * keep, y0 * keep]
            })
            .collect()
    }

    fn distances(&self, speed: f64) -> Vec<f64> {
        self.waypoints(speed).iter().map(|w| channel::uav_bs_distance(w[0], w[1], self.cfg.altitude)).collect()
    }

    /// Sensing time and energy, or `None` when the schedule bit breaks a constraint.
    fn sensing(&self, x: bool, p_se: f64) -> Option<(f64, f64)> {
        let cfg = self.cfg;
        if !x {
            return (!cfg.require_sensing).then_some((0.0, 0.0));
        }
        if !self.covered {
            return None;
        }
        let p = p_se * cfg.p_se_max;
        let rate = channel::radar_rate(p, self.gain, &cfg.radar_params());
        if rate < cfg.rate_threshold {
            return None;
        }
        let t = cfg.samples_per_uav[0] as f64 / rate;
        Some((t, p * t))
    }

    fn decision(&self, x: bool, point: &Point) -> DecisionVector {
        let cfg = self.cfg;
        let mut d = DecisionVector::zeros(cfg);
        d.x[0][0][0] = if x { 1.0 } else { 0.0 };
        d.p_se[0][0] = point.p_se * cfg.p_se_max;
        let dists = self.distances(point.speed);
        let mut energy = self.sensing(x, point.p_se).map_or(0.0, |s| s.1);
        for (s, w) in self.waypoints(point.speed).into_iter().enumerate() {
            d.traj_x[0][0][s] = w[0];
            d.traj_y[0][0][s] = w[1];
            let p = point.p_cm[s] * cfg.p_cm_max;
            d.p_cm[0][0][s] = p;
            energy += p * self.slot_payload / channel::uplink_rate(p, dists[s], cfg.bandwidth_uav, cfg.ref_snr());
        }
        let left = (cfg.e_max - energy).max(0.0);
        d.f_u[0][0] = (left / (cfg.switched_capacitance * self.cycles)).sqrt().min(cfg.f_u_max);
        d.p_bs[0] = cfg.p_bs_max;
        d.f_bs[0] = cfg.f_bs_max;
        d
    }
}

/// A randomized single-UAV instance small enough for the oracle. The slot
/// count alternates between two and three.
pub fn tiny_instance(seed: u64, index: usize) -> ScenarioConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9_7f4a_7c15_u64.wrapping_mul(index as u64 + 1)));
    let mut cfg = ScenarioConfig::seeded(seed);
    cfg.num_uavs = 1;
    cfg.num_targets = 1;
    cfg.num_modalities = 1;
    cfg.num_rounds = 1;
    cfg.time_slots = 2 + index % 2;
    cfg.start_pos = [rng.gen_range(400.0..1400.0), rng.gen_range(-200.0..200.0)];
    cfg.end_pos = [0.0, 0.0];
    let r = 40.0 * rng.gen::<f64>().sqrt();
    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
    cfg.target_positions = vec![[cfg.start_pos[0] + r * theta.cos(), cfg.start_pos[1] + r * theta.sin(), 0.0]];
    cfg.samples_per_uav = vec![rng.gen_range(150..=250)];
    cfg.cycles_per_sample = vec![rng.gen_range(0.8e6..1.2e6)];
    cfg.e_max = rng.gen_range(0.6..2.0);
    cfg.p_se_max = crate::scenario::dbm_to_watts(rng.gen_range(20.0..30.0));
    cfg.p_cm_max = crate::scenario::dbm_to_watts(rng.gen_range(20.0..30.0));
    cfg
}
