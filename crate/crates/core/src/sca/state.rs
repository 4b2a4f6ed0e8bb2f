//! Linearization points of the sub-problem surrogates, read off an incumbent decision.

use crate::channel::{self, EnergyBreakdown, LatencyBreakdown};
use crate::scenario::{DecisionVector, ScenarioConfig};

use super::SolveError;

/// Values of every slack at the incumbent, evaluated exactly so each
/// surrogate is tight there and the incumbent stays feasible.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateState {
    /// Sensing time `D_u / R_cu` of each candidate pair, `[k][u][c]` over all targets.
    pub psi: Vec<Vec<Vec<f64>>>,
    /// Radar rate `R_cu` of each pair, `[k][u][c]`.
    pub iota: Vec<Vec<Vec<f64>>>,
    /// Radar SNR `λ_cu` of each pair, `[k][u][c]`.
    pub lambda: Vec<Vec<Vec<f64>>>,
    pub p_se: Vec<Vec<f64>>,
    /// Upload time per slot, `[k][u][t]`.
    pub g: Vec<Vec<Vec<f64>>>,
    /// Uplink rate per slot.
    pub z: Vec<Vec<Vec<f64>>>,
    /// Uplink SNR per slot.
    pub gamma: Vec<Vec<Vec<f64>>>,
    /// Squared UAV-BS distance per slot.
    pub alpha: Vec<Vec<Vec<f64>>>,
    pub p_cm: Vec<Vec<Vec<f64>>>,
    /// Download time per UAV, `[k][u]`.
    pub theta: Vec<Vec<f64>>,
    /// Downlink SNR per UAV.
    pub xi: Vec<Vec<f64>>,
    /// Exact latency and energy breakdown of the incumbent.
    pub latency: Vec<LatencyBreakdown>,
    pub energy: Vec<EnergyBreakdown>,
}

impl SurrogateState {
    pub fn from_decision(cfg: &ScenarioConfig, d: &DecisionVector) -> Result<Self, SolveError> {
        let (latency, energy) = channel::evaluate(cfg, d).map_err(|e| SolveError::InvalidState(e.to_string()))?;
        let (k_n, u_n, c_n, t_n) = (cfg.num_rounds, cfg.num_uavs, cfg.num_targets, cfg.time_slots);
        let radar = cfg.radar_params();
        let gamma0 = cfg.ref_snr();
        let slot_payload = (cfg.embed_payload + cfg.model_payload) / t_n as f64;
        let per_slot = || vec![vec![vec![0.0; t_n]; u_n]; k_n];
        let per_pair = || vec![vec![vec![0.0; c_n]; u_n]; k_n];
        let mut s = Self {
            psi: per_pair(),
            iota: per_pair(),
            lambda: per_pair(),
            p_se: d.p_se.clone(),
            g: per_slot(),
            z: per_slot(),
            gamma: per_slot(),
            alpha: per_slot(),
            p_cm: d.p_cm.clone(),
            theta: vec![vec![0.0; u_n]; k_n],
            xi: vec![vec![0.0; u_n]; k_n],
            latency,
            energy,
        };
        let coverage = cfg.coverage();
        let snr_per_watt: Vec<Vec<f64>> =
            (0..u_n).map(|u| (0..c_n).map(|c| cfg.radar_snr_per_watt(u, c)).collect()).collect();
        for k in 0..k_n {
            for u in 0..u_n {
                let samples = cfg.samples_per_uav[u] as f64;
                for &c in &coverage[u] {
                    let lambda = snr_per_watt[u][c] * d.p_se[k][u];
                    let rate = radar.rate_scale() * (1.0 + lambda).log2();
                    if !(rate > 0.0) {
                        return Err(SolveError::InvalidState(format!("zero radar rate for UAV {u}, target {c}")));
                    }
                    s.lambda[k][u][c] = lambda;
                    s.iota[k][u][c] = rate;
                    s.psi[k][u][c] = samples / rate;
                }
                for t in 0..t_n {
                    let dist2 = d.traj_x[k][u][t].powi(2) + d.traj_y[k][u][t].powi(2) + cfg.altitude.powi(2);
                    let gamma = gamma0 * d.p_cm[k][u][t] / dist2;
                    let rate = cfg.bandwidth_uav * (1.0 + gamma).log2();
                    if !(rate > 0.0) {
                        return Err(SolveError::InvalidState(format!("zero uplink rate for UAV {u}, slot {t}")));
                    }
                    s.alpha[k][u][t] = dist2;
                    s.gamma[k][u][t] = gamma;
                    s.z[k][u][t] = rate;
                    s.g[k][u][t] = slot_payload / rate;
                }
                let last = t_n - 1;
                let dist2 = d.traj_x[k][u][last].powi(2) + d.traj_y[k][u][last].powi(2) + cfg.altitude.powi(2);
                let xi = gamma0 * d.p_bs[k] / dist2;
                let rate = cfg.bandwidth_bs * (1.0 + xi).log2();
                if !(rate > 0.0) {
                    return Err(SolveError::InvalidState(format!("zero downlink rate for UAV {u}")));
                }
                s.xi[k][u] = xi;
                s.theta[k][u] = cfg.global_payload / rate;
            }
        }
        Ok(s)
    }
}
