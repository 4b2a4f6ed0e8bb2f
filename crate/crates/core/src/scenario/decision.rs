use serde::{Deserialize, Serialize};

use super::ScenarioConfig;

/// Every control variable of the latency minimization problem.
///
/// Indexing is always round first: `x[k][c][u]`, `p_se[k][u]`,
/// `p_cm[k][u][t]`, `traj_x[k][u][t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionVector {
    pub x: Vec<Vec<Vec<f64>>>,
    pub p_se: Vec<Vec<f64>>,
    pub p_cm: Vec<Vec<Vec<f64>>>,
    pub f_u: Vec<Vec<f64>>,
    pub traj_x: Vec<Vec<Vec<f64>>>,
    pub traj_y: Vec<Vec<Vec<f64>>>,
    pub p_bs: Vec<f64>,
    pub f_bs: Vec<f64>,
}

impl DecisionVector {
    /// All-zero decision with the shapes implied by `cfg`.
    pub fn zeros(cfg: &ScenarioConfig) -> Self {
        let (k, c, u, t) = (cfg.num_rounds, cfg.num_targets, cfg.num_uavs, cfg.time_slots);
        let per_slot = vec![vec![vec![0.0; t]; u]; k];
        Self {
            x: vec![vec![vec![0.0; u]; c]; k],
            p_se: vec![vec![0.0; u]; k],
            p_cm: per_slot.clone(),
            f_u: vec![vec![0.0; u]; k],
            traj_x: per_slot.clone(),
            traj_y: per_slot,
            p_bs: vec![0.0; k],
            f_bs: vec![0.0; k],
        }
    }

    pub fn num_rounds(&self) -> usize {
        self.p_bs.len()
    }

    /// Targets sensed by `uav` in round `k` (entries with x ≥ 0.5).
    pub fn sensed_targets(&self, k: usize, uav: usize) -> Vec<usize> {
        (0..self.x[k].len()).filter(|&c| self.x[k][c][uav] >= 0.5).collect()
    }

    /// Long-format rows `(variable, round, i, j, value)`; `i`/`j` are the
    /// remaining indices or empty when the variable has fewer dimensions.
    pub fn rows(&self) -> Vec<(String, usize, Option<usize>, Option<usize>, f64)> {
        let mut rows = Vec::new();
        for k in 0..self.num_rounds() {
            for (c, per_uav) in self.x[k].iter().enumerate() {
                for (u, &v) in per_uav.iter().enumerate() {
                    rows.push(("x".to_string(), k, Some(c), Some(u), v));
                }
            }
            for (u, &v) in self.p_se[k].iter().enumerate() {
                rows.push(("p_se".to_string(), k, Some(u), None, v));
            }
            for (u, &v) in self.f_u[k].iter().enumerate() {
                rows.push(("f_u".to_string(), k, Some(u), None, v));
            }
            for (name, table) in [("p_cm", &self.p_cm), ("traj_x", &self.traj_x), ("traj_y", &self.traj_y)] {
                for (u, slots) in table[k].iter().enumerate() {
                    for (t, &v) in slots.iter().enumerate() {
                        rows.push((name.to_string(), k, Some(u), Some(t), v));
                    }
                }
            }
            rows.push(("p_bs".to_string(), k, None, None, self.p_bs[k]));
            rows.push(("f_bs".to_string(), k, None, None, self.f_bs[k]));
        }
        rows
    }
}
