//! Channel gains, communication and radar rates, and the per-round latency
//! and energy components of every UAV.

use serde::Serialize;
use thiserror::Error;

use crate::scenario::{DecisionVector, ScenarioConfig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChannelError {
    #[error("{what}: {payload} bits over a zero rate")]
    ZeroRate { what: &'static str, payload: f64 },
}

/// Line-of-sight distance from a UAV at horizontal position (x, y) and
/// altitude `h` to the base station at the origin.
pub fn uav_bs_distance(x: f64, y: f64, h: f64) -> f64 {
    (x * x + y * y + h * h).sqrt()
}

/// Shannon rate of the UAV-to-BS link under free-space gain `gamma0 / d²`.
pub fn uplink_rate(p_cm: f64, d: f64, bandwidth: f64, gamma0: f64) -> f64 {
    bandwidth * (1.0 + gamma0 * p_cm / (d * d)).log2()
}

/// Shannon rate of the BS-to-UAV link; same form as the uplink.
pub fn downlink_rate(p_bs: f64, d: f64, bandwidth: f64, gamma0: f64) -> f64 {
    uplink_rate(p_bs, d, bandwidth, gamma0)
}

/// Constants of the radar estimation rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadarParams {
    pub duty_ratio: f64,
    pub pulse_duration: f64,
    pub waveform_const: f64,
    pub pred_var: f64,
    pub bandwidth: f64,
    pub noise_power: f64,
}

impl RadarParams {
    /// Rate prefactor δ/(2μ) in bits per second.
    pub fn rate_scale(&self) -> f64 {
        self.duty_ratio / (2.0 * self.pulse_duration)
    }
}

/// Target response G = g·β̂·g where g = α̂/‖q0 − q_c‖² is the free-space
/// amplitude gain between the sensing position `q0` and the target.
pub fn target_response(q0: [f64; 3], target: [f64; 3], pathloss_const: f64, reflectivity: f64) -> f64 {
    let dist2: f64 = q0.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum();
    let g = pathloss_const / dist2;
    g * reflectivity * g
}

/// The radar SNR term inside the logarithm of the estimation rate.
pub fn radar_snr(p_se: f64, gain: f64, radar: &RadarParams) -> f64 {
    2.0 * radar.pred_var * radar.waveform_const.powi(2) * radar.bandwidth.powi(3) * radar.pulse_duration * gain * p_se
        / radar.noise_power
}

/// Radar estimation information rate in bits per second.
pub fn radar_rate(p_se: f64, gain: f64, radar: &RadarParams) -> f64 {
    radar.rate_scale() * (1.0 + radar_snr(p_se, gain, radar)).log2()
}

/// Time to sense `samples` when `x` (0 or 1) selects the target.
pub fn sensing_time(x: f64, samples: f64, rate: f64) -> Result<f64, ChannelError> {
    if x == 0.0 || samples == 0.0 {
        return Ok(0.0);
    }
    if rate <= 0.0 {
        return Err(ChannelError::ZeroRate { what: "sensing", payload: x * samples });
    }
    Ok(x * samples / rate)
}

pub fn sensing_energy(p_se: f64, t_sense: f64) -> f64 {
    p_se * t_sense
}

pub fn local_train_time(iters: usize, cycles: f64, samples: f64, f: f64) -> f64 {
    iters as f64 * cycles * samples / f
}

pub fn local_train_energy(iters: usize, zeta: f64, cycles: f64, samples: f64, f: f64) -> f64 {
    iters as f64 * zeta * cycles * samples * f * f
}

/// Upload time per slot when the total `payload` is split equally over the slots.
#[derive(Debug, Clone, PartialEq)]
pub struct UploadTimes {
    pub per_slot: Vec<f64>,
    pub total: f64,
}

pub fn upload_time(payload: f64, rates: &[f64]) -> Result<UploadTimes, ChannelError> {
    let shard = payload / rates.len() as f64;
    let per_slot = rates
        .iter()
        .map(|&r| {
            if shard == 0.0 {
                Ok(0.0)
            } else if r <= 0.0 {
                Err(ChannelError::ZeroRate { what: "upload", payload: shard })
            } else {
                Ok(shard / r)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let total = per_slot.iter().sum();
    Ok(UploadTimes { per_slot, total })
}

pub fn upload_energy(times: &[f64], p_cm: &[f64]) -> f64 {
    times.iter().zip(p_cm).map(|(t, p)| t * p).sum()
}

/// Server training time over `samples` fused embeddings.
pub fn server_train_time(iters: usize, cycles: f64, samples: f64, f_bs: f64) -> f64 {
    iters as f64 * cycles * samples / f_bs
}

pub fn download_time(payload: f64, rate: f64) -> Result<f64, ChannelError> {
    if payload == 0.0 {
        Ok(0.0)
    } else if rate <= 0.0 {
        Err(ChannelError::ZeroRate { what: "download", payload })
    } else {
        Ok(payload / rate)
    }
}

/// Latency components of one round, per UAV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyBreakdown {
    pub t_sense: Vec<f64>,
    pub t_train: Vec<f64>,
    pub t_embed_up: Vec<f64>,
    pub t_model_up: Vec<f64>,
    pub t_bs_train: f64,
    pub t_download: Vec<f64>,
    pub round_latency: f64,
}

impl LatencyBreakdown {
    /// Builds a breakdown and sets `round_latency` to the slowest UAV's total.
    pub fn new(
        t_sense: Vec<f64>,
        t_train: Vec<f64>,
        t_embed_up: Vec<f64>,
        t_model_up: Vec<f64>,
        t_bs_train: f64,
        t_download: Vec<f64>,
    ) -> Self {
        let mut b = Self { t_sense, t_train, t_embed_up, t_model_up, t_bs_train, t_download, round_latency: 0.0 };
        b.round_latency = round_latency(&b.per_uav_totals());
        b
    }

    pub fn per_uav_totals(&self) -> Vec<f64> {
        (0..self.t_sense.len())
            .map(|u| {
                self.t_sense[u]
                    + self.t_train[u]
                    + self.t_embed_up[u]
                    + self.t_model_up[u]
                    + self.t_bs_train
                    + self.t_download[u]
            })
            .collect()
    }
}

/// Energy components of one round (or summed over rounds), per UAV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyBreakdown {
    pub e_sense: Vec<f64>,
    pub e_train: Vec<f64>,
    pub e_embed_up: Vec<f64>,
    pub e_model_up: Vec<f64>,
    pub total_per_uav: Vec<f64>,
}

impl EnergyBreakdown {
    pub fn new(e_sense: Vec<f64>, e_train: Vec<f64>, e_embed_up: Vec<f64>, e_model_up: Vec<f64>) -> Self {
        let total_per_uav = (0..e_sense.len())
            .map(|u| e_sense[u] + e_train[u] + e_embed_up[u] + e_model_up[u])
            .collect();
        Self { e_sense, e_train, e_embed_up, e_model_up, total_per_uav }
    }

    fn add(&mut self, other: &Self) {
        for (a, b) in [
            (&mut self.e_sense, &other.e_sense),
            (&mut self.e_train, &other.e_train),
            (&mut self.e_embed_up, &other.e_embed_up),
            (&mut self.e_model_up, &other.e_model_up),
            (&mut self.total_per_uav, &other.total_per_uav),
        ] {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

/// Round latency: the largest per-UAV total. Zero for an empty slice.
pub fn round_latency(per_uav_totals: &[f64]) -> f64 {
    per_uav_totals.iter().copied().fold(0.0, f64::max)
}

/// Total latency over rounds.
pub fn total_latency(rounds: &[LatencyBreakdown]) -> f64 {
    rounds.iter().map(|r| r.round_latency).sum()
}

/// Per-UAV energy summed over rounds.
pub fn uav_total_energy(rounds: &[EnergyBreakdown]) -> Option<EnergyBreakdown> {
    let mut iter = rounds.iter();
    let mut acc = iter.next()?.clone();
    iter.for_each(|r| acc.add(r));
    Some(acc)
}

/// Per-UAV sensing time and radar rate detail used by several callers.
pub fn uav_sensing_time(cfg: &ScenarioConfig, d: &DecisionVector, k: usize, u: usize) -> Result<f64, ChannelError> {
    let radar = cfg.radar_params();
    let mut total = 0.0;
    for c in 0..cfg.num_targets {
        let x = d.x[k][c][u];
        if x == 0.0 {
            continue;
        }
        let gain = target_response(cfg.hover_point(u), cfg.target_positions[c], cfg.pathloss_const, cfg.target_reflectivity);
        let rate = radar_rate(d.p_se[k][u], gain, &radar);
        total += sensing_time(x, cfg.samples_per_uav[u] as f64, rate)?;
    }
    Ok(total)
}

/// Upload rates of `uav` in each slot of round `k`.
pub fn uplink_rates(cfg: &ScenarioConfig, d: &DecisionVector, k: usize, u: usize) -> Vec<f64> {
    (0..cfg.time_slots)
        .map(|t| {
            let dist = uav_bs_distance(d.traj_x[k][u][t], d.traj_y[k][u][t], cfg.altitude);
            uplink_rate(d.p_cm[k][u][t], dist, cfg.bandwidth_uav, cfg.ref_snr())
        })
        .collect()
}

/// Download rate to `uav` in round `k`, evaluated at its final waypoint.
pub fn downlink_rate_at_end(cfg: &ScenarioConfig, d: &DecisionVector, k: usize, u: usize) -> f64 {
    let t = cfg.time_slots - 1;
    let dist = uav_bs_distance(d.traj_x[k][u][t], d.traj_y[k][u][t], cfg.altitude);
    downlink_rate(d.p_bs[k], dist, cfg.bandwidth_bs, cfg.ref_snr())
}

/// Latency and energy of every UAV in round `k` under decision `d`.
pub fn evaluate_round(
    cfg: &ScenarioConfig,
    d: &DecisionVector,
    k: usize,
) -> Result<(LatencyBreakdown, EnergyBreakdown), ChannelError> {
    let n = cfg.num_uavs;
    let mut lat = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut energy = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for u in 0..n {
        let samples = cfg.samples_per_uav[u] as f64;
        let t_se = uav_sensing_time(cfg, d, k, u)?;
        let f = d.f_u[k][u];
        let rates = uplink_rates(cfg, d, k, u);
        let embed = upload_time(cfg.embed_payload, &rates)?;
        let model = upload_time(cfg.model_payload, &rates)?;
        lat[0][u] = t_se;
        lat[1][u] = local_train_time(cfg.local_iters, cfg.cycles_per_sample[u], samples, f);
        lat[2][u] = embed.total;
        lat[3][u] = model.total;
        lat[4][u] = download_time(cfg.global_payload, downlink_rate_at_end(cfg, d, k, u))?;
        energy[0][u] = sensing_energy(d.p_se[k][u], t_se);
        energy[1][u] = local_train_energy(cfg.local_iters, cfg.switched_capacitance, cfg.cycles_per_sample[u], samples, f);
        energy[2][u] = upload_energy(&embed.per_slot, &d.p_cm[k][u]);
        energy[3][u] = upload_energy(&model.per_slot, &d.p_cm[k][u]);
    }
    let t_bs = server_train_time(cfg.server_iters, cfg.cycles_per_sample_bs, cfg.probe_set_size as f64, d.f_bs[k]);
    let [t_sense, t_train, t_embed_up, t_model_up, t_download] = lat;
    let [e_sense, e_train, e_embed_up, e_model_up] = energy;
    Ok((
        LatencyBreakdown::new(t_sense, t_train, t_embed_up, t_model_up, t_bs, t_download),
        EnergyBreakdown::new(e_sense, e_train, e_embed_up, e_model_up),
    ))
}

/// Latency and energy breakdowns of every round.
pub fn evaluate(
    cfg: &ScenarioConfig,
    d: &DecisionVector,
) -> Result<(Vec<LatencyBreakdown>, Vec<EnergyBreakdown>), ChannelError> {
    let mut lats = Vec::with_capacity(cfg.num_rounds);
    let mut energies = Vec::with_capacity(cfg.num_rounds);
    for k in 0..cfg.num_rounds {
        let (l, e) = evaluate_round(cfg, d, k)?;
        lats.push(l);
        energies.push(e);
    }
    Ok((lats, energies))
}

/// Total system latency of decision `d`; infinite when some payload meets a zero rate.
pub fn system_latency(cfg: &ScenarioConfig, d: &DecisionVector) -> f64 {
    match evaluate(cfg, d) {
        Ok((lats, _)) => total_latency(&lats),
        Err(_) => f64::INFINITY,
    }
}
