use crate::channel;

use super::{DecisionVector, ScenarioConfig, ScenarioError};

/// `T` waypoints per UAV on the segment from its start position to the end
/// position, both endpoints included. Returns `(xs, ys)` per UAV.
pub fn straight_line_trajectory(cfg: &ScenarioConfig) -> Vec<(Vec<f64>, Vec<f64>)> {
    let t = cfg.time_slots;
    cfg.uav_start_positions()
        .into_iter()
        .map(|s| {
            (0..t)
                .map(|i| {
                    let a = if t == 1 { 0.0 } else { i as f64 / (t - 1) as f64 };
                    (s[0] + a * (cfg.end_pos[0] - s[0]), s[1] + a * (cfg.end_pos[1] - s[1]))
                })
                .unzip()
        })
        .collect()
}

/// Assigns every UAV a distinct target from its coverage list.
///
/// Each UAV tries its candidates in the order given by `rank` (lower is
/// preferred; list order when `None`), and conflicts are resolved with
/// augmenting paths, so the result is a complete matching whenever one
/// exists. Returns the target of each UAV.
pub fn sensing_matching(
    coverage: &[Vec<usize>],
    num_targets: usize,
    rank: Option<&dyn Fn(usize, usize) -> f64>,
) -> Option<Vec<usize>> {
    let ordered: Vec<Vec<usize>> = coverage
        .iter()
        .enumerate()
        .map(|(u, cands)| {
            let mut cands = cands.clone();
            if let Some(rank) = rank {
                cands.sort_by(|&a, &b| rank(u, a).total_cmp(&rank(u, b)).then(a.cmp(&b)));
            }
            cands
        })
        .collect();
    let mut owner: Vec<Option<usize>> = vec![None; num_targets];
    for u in 0..coverage.len() {
        let mut visited = vec![false; num_targets];
        if !augment(u, &ordered, &mut owner, &mut visited) {
            return None;
        }
    }
    let mut assignment = vec![0; coverage.len()];
    for (c, o) in owner.iter().enumerate() {
        if let Some(u) = o {
            assignment[*u] = c;
        }
    }
    Some(assignment)
}

fn augment(u: usize, cands: &[Vec<usize>], owner: &mut [Option<usize>], visited: &mut [bool]) -> bool {
    for &c in &cands[u] {
        if visited[c] {
            continue;
        }
        visited[c] = true;
        if owner[c].map_or(true, |v| augment(v, cands, owner, visited)) {
            owner[c] = Some(u);
            return true;
        }
    }
    false
}

/// Builds the optimizer's starting point: half of every power and frequency
/// limit, straight-line flights, and each UAV sensing its nearest available
/// target. Sensing power is raised to meet the radar threshold, then
/// computing frequency and transmit power are halved until every UAV meets
/// its energy budget.
pub fn initial_feasible_point(cfg: &ScenarioConfig) -> Result<DecisionVector, ScenarioError> {
    let mut d = DecisionVector::zeros(cfg);
    let traj = straight_line_trajectory(cfg);
    let hover: Vec<[f64; 3]> = (0..cfg.num_uavs).map(|u| cfg.hover_point(u)).collect();
    let dist = |u: usize, c: usize| {
        let q = cfg.target_positions[c];
        (q[0] - hover[u][0]).hypot(q[1] - hover[u][1])
    };
    let assignment: Vec<Option<usize>> = if cfg.require_sensing {
        sensing_matching(&cfg.coverage(), cfg.num_targets, Some(&dist))
            .ok_or_else(|| ScenarioError::Infeasible("sensing coverage".into()))?
            .into_iter()
            .map(Some)
            .collect()
    } else {
        vec![None; cfg.num_uavs]
    };

    let radar = cfg.radar_params();
    let mut p_se = vec![0.5 * cfg.p_se_max; cfg.num_uavs];
    for (u, target) in assignment.iter().enumerate() {
        let Some(c) = *target else { continue };
        let snr_per_watt = cfg.radar_snr_per_watt(u, c);
        let needed_snr = 2f64.powf(cfg.rate_threshold / radar.rate_scale()) - 1.0;
        let p_req = needed_snr / snr_per_watt;
        if p_req > cfg.p_se_max {
            return Err(ScenarioError::Infeasible("radar threshold".into()));
        }
        if p_req > p_se[u] {
            p_se[u] = (p_req * (1.0 + 1e-9)).min(cfg.p_se_max);
        }
    }

    for k in 0..cfg.num_rounds {
        for u in 0..cfg.num_uavs {
            if let Some(c) = assignment[u] {
                d.x[k][c][u] = 1.0;
            }
            d.p_se[k][u] = p_se[u];
            d.traj_x[k][u].clone_from(&traj[u].0);
            d.traj_y[k][u].clone_from(&traj[u].1);
        }
        d.p_bs[k] = 0.5 * cfg.p_bs_max;
        d.f_bs[k] = 0.5 * cfg.f_bs_max;
    }

    let mut scale = vec![1.0f64; cfg.num_uavs];
    for _ in 0..30 {
        for k in 0..cfg.num_rounds {
            for u in 0..cfg.num_uavs {
                d.f_u[k][u] = 0.5 * cfg.f_u_max * scale[u];
                d.p_cm[k][u].fill(0.5 * cfg.p_cm_max * scale[u]);
            }
        }
        let energy = match channel::evaluate(cfg, &d) {
            Ok((_, e)) => channel::uav_total_energy(&e),
            Err(_) => return Err(ScenarioError::Infeasible("rate".into())),
        };
        let Some(energy) = energy else { return Ok(d) };
        let mut ok = true;
        for u in 0..cfg.num_uavs {
            if energy.total_per_uav[u] > cfg.e_max {
                scale[u] *= 0.5;
                ok = false;
            }
        }
        if ok {
            return Ok(d);
        }
    }
    Err(ScenarioError::Infeasible("energy".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trajectory_degenerate_and_two_slot() {
        let cfg = ScenarioConfig {
            num_uavs: 1,
            start_pos: [5.0, 5.0],
            end_pos: [5.0, 5.0],
            ..ScenarioConfig::default()
        };
        let traj = straight_line_trajectory(&cfg);
        assert!(traj[0].0.iter().all(|&x| x == 5.0) && traj[0].1.iter().all(|&y| y == 5.0));

        let cfg = ScenarioConfig {
            num_uavs: 1,
            time_slots: 2,
            start_pos: [0.0, 0.0],
            end_pos: [1000.0, 0.0],
            ..ScenarioConfig::default()
        };
        let traj = straight_line_trajectory(&cfg);
        assert_eq!(traj[0].0, vec![0.0, 1000.0]);
        assert_eq!(traj[0].1, vec![0.0, 0.0]);
    }

    #[test]
    fn trajectory_step_is_within_speed_limit() {
        let cfg = ScenarioConfig::default();
        let starts = cfg.uav_start_positions();
        for (u, (xs, ys)) in straight_line_trajectory(&cfg).iter().enumerate() {
            let full = (starts[u][0] - cfg.end_pos[0]).hypot(starts[u][1] - cfg.end_pos[1]);
            for t in 1..xs.len() {
                let step = (xs[t] - xs[t - 1]).hypot(ys[t] - ys[t - 1]);
                assert!((step - full / (cfg.time_slots - 1) as f64).abs() < 1e-9);
                assert!(step <= cfg.max_step());
            }
        }
    }

    #[test]
    fn matching_prefers_rank_and_augments() {
        // UAV 0 prefers target 0, UAV 1 can only take target 0.
        let coverage = vec![vec![0, 1], vec![0]];
        let m = sensing_matching(&coverage, 2, None).unwrap();
        assert_eq!(m, vec![1, 0]);
        assert!(sensing_matching(&[vec![0], vec![0]], 1, None).is_none());
        let far_first = |_: usize, c: usize| -(c as f64);
        assert_eq!(sensing_matching(&[vec![0, 1]], 2, Some(&far_first)).unwrap(), vec![1]);
    }

    #[test]
    fn zero_energy_budget() {
        let cfg = ScenarioConfig { e_max: 0.0, ..ScenarioConfig::default() };
        assert!(matches!(initial_feasible_point(&cfg), Err(ScenarioError::Infeasible(m)) if m == "energy"));
    }

    #[test]
    fn unreachable_radar_threshold() {
        let cfg = ScenarioConfig { rate_threshold: 1e4, ..ScenarioConfig::default() };
        assert!(matches!(initial_feasible_point(&cfg), Err(ScenarioError::Infeasible(m)) if m == "radar threshold"));
    }

    #[test]
    fn default_point_uses_half_limits() {
        let cfg = ScenarioConfig::default();
        let d = initial_feasible_point(&cfg).unwrap();
        assert_eq!(d.p_bs[0], 0.5 * cfg.p_bs_max);
        assert_eq!(d.f_bs[0], 0.5 * cfg.f_bs_max);
        for k in 0..cfg.num_rounds {
            for u in 0..cfg.num_uavs {
                assert_eq!(d.sensed_targets(k, u).len(), 1);
            }
            for c in 0..cfg.num_targets {
                assert!(d.x[k][c].iter().sum::<f64>() <= 1.0);
            }
        }
    }
}
