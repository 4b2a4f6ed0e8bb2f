//! Turning a relaxed sensing schedule into a binary one.

use crate::scenario::{sensing_matching, ScenarioConfig};

/// Schedule indexed `[k][c][u]`.
pub type Schedule = Vec<Vec<Vec<f64>>>;

/// Thresholds every entry at 0.5, then keeps only the UAV with the largest
/// relaxed value on each target (lowest index on ties).
pub fn round_scheduling(x_relaxed: &Schedule) -> Schedule {
    x_relaxed
        .iter()
        .map(|round| {
            round
                .iter()
                .map(|row| {
                    let mut out = vec![0.0; row.len()];
                    let best = row
                        .iter()
                        .enumerate()
                        .filter(|(_, &v)| v >= 0.5)
                        .fold(None, |best: Option<(usize, f64)>, (u, &v)| match best {
                            Some((_, bv)) if bv >= v => best,
                            _ => Some((u, v)),
                        });
                    if let Some((u, _)) = best {
                        out[u] = 1.0;
                    }
                    out
                })
                .collect()
        })
        .collect()
}

/// Makes a rounded schedule satisfy the sensing demand. Rounds where some UAV
/// lost its target are re-assigned by a matching that prefers pairs with a
/// large relaxed value. Returns `None` when no complete matching exists.
pub fn repair_schedule(cfg: &ScenarioConfig, rounded: &Schedule, x_relaxed: &Schedule) -> Option<Schedule> {
    let mut out = rounded.clone();
    if !cfg.require_sensing {
        return Some(out);
    }
    let coverage = cfg.coverage();
    for k in 0..out.len() {
        let complete = (0..cfg.num_uavs).all(|u| (0..cfg.num_targets).any(|c| out[k][c][u] >= 0.5));
        if complete {
            continue;
        }
        let rank = |u: usize, c: usize| -x_relaxed[k][c][u];
        let assignment = sensing_matching(&coverage, cfg.num_targets, Some(&rank))?;
        for row in out[k].iter_mut() {
            row.fill(0.0);
        }
        for (u, c) in assignment.into_iter().enumerate() {
            out[k][c][u] = 1.0;
        }
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_and_conflicts() {
        let relaxed = vec![vec![vec![0.7, 0.9, 0.2], vec![0.5, 0.5, 0.49]]];
        let out = round_scheduling(&relaxed);
        assert_eq!(out, vec![vec![vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0]]]);
    }

    #[test]
    fn repair_fills_missing_uav() {
        let mut cfg = crate::scenario::ScenarioConfig::default();
        cfg.num_rounds = 1;
        let coverage = cfg.coverage();
        let mut relaxed = vec![vec![vec![0.0; cfg.num_uavs]; cfg.num_targets]];
        for u in 1..cfg.num_uavs {
            relaxed[0][coverage[u][0]][u] = 0.4;
        }
        let rounded = round_scheduling(&relaxed);
        let repaired = repair_schedule(&cfg, &rounded, &relaxed).unwrap();
        for u in 0..cfg.num_uavs {
            assert_eq!((0..cfg.num_targets).filter(|&c| repaired[0][c][u] == 1.0).count(), 1);
        }
        for c in 0..cfg.num_targets {
            assert!(repaired[0][c].iter().sum::<f64>() <= 1.0);
        }
    }
}
