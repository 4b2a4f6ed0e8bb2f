//! Constraint audit of a full decision vector.

use serde::Serialize;

use crate::channel;
use crate::scenario::{DecisionVector, ScenarioConfig};

/// One violated constraint. `magnitude` is the violation scaled by the
/// constraint's natural size (the bound, the budget, or the step length).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintViolation {
    pub constraint: String,
    pub round: Option<usize>,
    pub uav: Option<usize>,
    pub magnitude: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ViolationReport {
    pub violations: Vec<ConstraintViolation>,
}

impl ViolationReport {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.violations.iter().map(|v| v.constraint.as_str()).collect()
    }

    pub fn worst(&self) -> Option<&ConstraintViolation> {
        self.violations.iter().max_by(|a, b| a.magnitude.total_cmp(&b.magnitude))
    }
}

struct Audit {
    slack: f64,
    report: ViolationReport,
}

impl Audit {
    fn check(&mut self, name: &str, round: Option<usize>, uav: Option<usize>, magnitude: f64) {
        if magnitude > self.slack || magnitude.is_nan() {
            self.report.violations.push(ConstraintViolation { constraint: name.to_string(), round, uav, magnitude });
        }
    }

    fn upper(&mut self, name: &str, round: usize, uav: Option<usize>, value: f64, bound: f64) {
        let scale = bound.abs().max(f64::MIN_POSITIVE);
        self.check(name, Some(round), uav, ((value - bound) / scale).max(-value / scale));
    }
}

/// Checks every constraint of the joint problem at `d`. Violations up to
/// `slack` (relative) are tolerated.
pub fn check_feasibility(cfg: &ScenarioConfig, d: &DecisionVector, slack: f64) -> ViolationReport {
    let mut a = Audit { slack, report: ViolationReport::default() };
    let radar = cfg.radar_params();
    let starts = cfg.uav_start_positions();
    let step = cfg.max_step();
    let coverage = cfg.coverage();
    for k in 0..cfg.num_rounds {
        a.upper("bs power", k, None, d.p_bs[k], cfg.p_bs_max);
        a.upper("bs frequency", k, None, d.f_bs[k], cfg.f_bs_max);
        for c in 0..cfg.num_targets {
            let total: f64 = d.x[k][c].iter().sum();
            a.check("target exclusivity", Some(k), None, total - 1.0);
        }
        for u in 0..cfg.num_uavs {
            a.upper("sensing power", k, Some(u), d.p_se[k][u], cfg.p_se_max);
            a.upper("uav frequency", k, Some(u), d.f_u[k][u], cfg.f_u_max);
            for &p in &d.p_cm[k][u] {
                a.upper("uplink power", k, Some(u), p, cfg.p_cm_max);
            }
            let mut sensed = 0.0;
            for c in 0..cfg.num_targets {
                let x = d.x[k][c][u];
                a.check("binary schedule", Some(k), Some(u), x.min(1.0 - x).max(x - 1.0).max(-x));
                if x >= 0.5 {
                    sensed += 1.0;
                    if !coverage[u].contains(&c) {
                        a.check("coverage", Some(k), Some(u), 1.0);
                    }
                    let rate = radar.rate_scale() * (1.0 + cfg.radar_snr_per_watt(u, c) * d.p_se[k][u]).log2();
                    a.check("radar threshold", Some(k), Some(u), (cfg.rate_threshold - rate) / cfg.rate_threshold);
                }
            }
            if cfg.require_sensing {
                a.check("sensing demand", Some(k), Some(u), 1.0 - sensed);
            }
            let xs = &d.traj_x[k][u];
            let ys = &d.traj_y[k][u];
            let off = (xs[0] - starts[u][0]).hypot(ys[0] - starts[u][1]);
            a.check("start position", Some(k), Some(u), off / step.max(1.0));
            for t in 1..xs.len() {
                let moved = (xs[t] - xs[t - 1]).hypot(ys[t] - ys[t - 1]);
                a.check("speed", Some(k), Some(u), (moved - step) / step);
            }
        }
    }
    match channel::evaluate(cfg, d) {
        Ok((_, energy)) => {
            if let Some(total) = channel::uav_total_energy(&energy) {
                for (u, &e) in total.total_per_uav.iter().enumerate() {
                    a.check("energy", None, Some(u), (e - cfg.e_max) / cfg.e_max);
                }
            }
        }
        Err(_) => a.check("positive rates", None, None, f64::INFINITY),
    }
    a.report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::initial_feasible_point;

    #[test]
    fn initial_point_is_feasible() {
        let cfg = ScenarioConfig::default();
        let d = initial_feasible_point(&cfg).unwrap();
        let report = check_feasibility(&cfg, &d, 1e-9);
        assert!(report.is_feasible(), "{:?}", report.names());
    }

    #[test]
    fn single_violations_are_named() {
        let cfg = ScenarioConfig::default();
        let base = initial_feasible_point(&cfg).unwrap();
        let mut d = base.clone();
        d.p_se[0][0] = 2.0 * cfg.p_se_max;
        assert_eq!(check_feasibility(&cfg, &d, 1e-6).names(), vec!["sensing power"]);

        let mut d = base.clone();
        d.p_bs[3] = 1.5 * cfg.p_bs_max;
        let report = check_feasibility(&cfg, &d, 1e-6);
        assert_eq!(report.names(), vec!["bs power"]);
        assert_eq!(report.violations[0].round, Some(3));
        assert!((report.violations[0].magnitude - 0.5).abs() < 1e-12);

        let mut d = base.clone();
        d.traj_x[0][0][1] += 2.0 * cfg.max_step();
        assert!(check_feasibility(&cfg, &d, 1e-6).names().contains(&"speed"));

        let mut d = base;
        d.x[0][0][0] = 0.5;
        assert!(check_feasibility(&cfg, &d, 1e-6).names().contains(&"binary schedule"));
    }
}
