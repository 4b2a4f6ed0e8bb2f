//! The federated round loop: local encoder SGD, embedding and model
//! aggregation per modality, server-side decoder and attention training, and
//! broadcast.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::data::{synth_multimodal_dataset, FederatedData, Samples};
use super::model::{
    decoder_forward, encoder_forward, encoder_loss_grad, fused_input, server_loss_grad, AttentionState, LocalContext,
    ModelParams,
};
use super::FmlError;
use crate::scenario::ScenarioConfig;

/// Which modalities take part: all of them, or every UAV on one modality.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Multimodal,
    Unimodal(usize),
}

impl TrainMode {
    /// Modalities of the run, in slot order, and the slot of every UAV.
    fn layout(self, cfg: &ScenarioConfig) -> (Vec<usize>, Vec<usize>) {
        match self {
            TrainMode::Multimodal => ((0..cfg.num_modalities).collect(), (0..cfg.num_uavs).map(|u| cfg.modality_of(u)).collect()),
            TrainMode::Unimodal(m) => (vec![m], vec![0; cfg.num_uavs]),
        }
    }
}

/// Per-step losses of one local round next to the updated encoder.
#[derive(Debug, Clone)]
pub struct LocalUpdate {
    pub params: ModelParams,
    pub losses: Vec<f64>,
}

/// `steps` minibatch SGD steps of an encoder against a frozen server context.
/// The minibatch is drawn without replacement and capped at the partition
/// size.
pub fn local_sgd_round<R: Rng>(
    params: &ModelParams,
    ctx: &LocalContext,
    partition: &Samples,
    steps: usize,
    eta: f64,
    batch: usize,
    rng: &mut R,
) -> Result<LocalUpdate, FmlError> {
    let mut w = params.to_flat();
    let mut model = params.clone();
    let mut losses = Vec::with_capacity(steps);
    let b = batch.min(partition.len());
    for _ in 0..steps {
        if b == 0 {
            break;
        }
        let idx = rand::seq::index::sample(rng, partition.len(), b).into_vec();
        let mb = partition.select(&idx);
        let (loss, grad) = encoder_loss_grad(&model, ctx, mb.x.view(), &mb.y)?;
        losses.push(loss);
        for (wi, gi) in w.iter_mut().zip(grad.to_flat()) {
            *wi -= eta * gi;
        }
        model.set_flat(&w)?;
    }
    Ok(LocalUpdate { params: model, losses })
}

/// Arithmetic mean of per-UAV embedding batches.
pub fn aggregate_embeddings(per_uav: &[Array2<f64>]) -> Result<Array2<f64>, FmlError> {
    let first = per_uav.first().ok_or(FmlError::EmptyModality)?;
    let mut sum = Array2::zeros(first.dim());
    for h in per_uav {
        if h.dim() != first.dim() {
            return Err(FmlError::ShapeMismatch(format!("embedding batch {:?} vs {:?}", h.dim(), first.dim())));
        }
        sum += h;
    }
    Ok(sum / per_uav.len() as f64)
}

/// Column-wise concatenation in modality order.
pub fn concat_embeddings(per_modality: &[Array2<f64>]) -> Result<Array2<f64>, FmlError> {
    let views: Vec<ArrayView2<f64>> = per_modality.iter().map(|h| h.view()).collect();
    ndarray::concatenate(Axis(1), &views).map_err(|e| FmlError::ShapeMismatch(e.to_string()))
}

/// Data-size-weighted mean of the participating UAVs' parameters.
pub fn aggregate_models(params: &[ModelParams], active: &[bool], sizes: &[usize]) -> Result<ModelParams, FmlError> {
    if params.len() != active.len() || params.len() != sizes.len() {
        return Err(FmlError::ShapeMismatch("parameter, flag and size lists differ in length".into()));
    }
    let total: f64 = active.iter().zip(sizes).filter(|(a, _)| **a).map(|(_, &d)| d as f64).sum();
    if total <= 0.0 {
        return Err(FmlError::EmptyModality);
    }
    let template = &params[0];
    let mut acc = vec![0.0; template.len()];
    for ((p, _), &d) in params.iter().zip(active).zip(sizes).filter(|((_, a), _)| **a) {
        if p.shape() != template.shape() {
            return Err(FmlError::ShapeMismatch("models of one modality differ in shape".into()));
        }
        let weight = d as f64 / total;
        acc.iter_mut().zip(p.to_flat()).for_each(|(a, v)| *a += weight * v);
    }
    template.with_flat(&acc)
}

/// Encoder output on the probe rows of its modality.
pub fn extract_high_level_features(w: &ModelParams, probe: ArrayView2<f64>) -> Result<Array2<f64>, FmlError> {
    encoder_forward(w, probe)
}

fn column_means(z: &Array2<f64>) -> Array1<f64> {
    z.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(z.ncols()))
}

/// Softmax attention weights of the modality features.
pub fn attention_scores(z: &[Array2<f64>], state: &AttentionState) -> Vec<f64> {
    let means: Vec<Array1<f64>> = z.iter().map(column_means).collect();
    state.weights(&means)
}

/// `Σ α_m w_m / Σ α_m` over modality models of one shape.
pub fn fuse_global(models: &[ModelParams], alpha: &[f64]) -> Result<ModelParams, FmlError> {
    let first = models.first().ok_or(FmlError::EmptyModality)?;
    if alpha.len() != models.len() || models.iter().any(|m| m.shape() != first.shape()) {
        return Err(FmlError::ShapeMismatch("fusion needs one weight per model and equal model shapes".into()));
    }
    let total: f64 = alpha.iter().sum();
    let mut acc = vec![0.0; first.len()];
    for (m, a) in models.iter().zip(alpha) {
        acc.iter_mut().zip(m.to_flat()).for_each(|(s, v)| *s += a / total * v);
    }
    first.with_flat(&acc)
}

/// Starting encoder of every UAV: the aggregate of its modality slot.
pub fn broadcast(models: &[ModelParams], slots: &[usize]) -> Vec<ModelParams> {
    slots.iter().map(|&s| models[s].clone()).collect()
}

/// Data-size-weighted mean of per-UAV losses.
pub fn global_loss(losses: &[f64], sizes: &[usize]) -> f64 {
    let total: f64 = sizes.iter().map(|&d| d as f64).sum();
    losses.iter().zip(sizes).map(|(l, &d)| l * d as f64).sum::<f64>() / total
}

/// Top-1 accuracy of the encoder → fusion → decoder pipeline. `x[j]` holds
/// the rows of the modality encoded by `encoders[j]`.
pub fn evaluate_accuracy(
    decoder: &ModelParams,
    encoders: &[ModelParams],
    alpha: &[f64],
    x: &[Array2<f64>],
    y: &[usize],
) -> Result<f64, FmlError> {
    if y.is_empty() {
        return Ok(0.0);
    }
    let h = encoders.iter().zip(x).map(|(e, x)| encoder_forward(e, x.view())).collect::<Result<Vec<_>, _>>()?;
    let probs = decoder_forward(decoder, fused_input(&h, alpha).view())?;
    let hits = probs
        .rows()
        .into_iter()
        .zip(y)
        .filter(|(row, &label)| {
            let best = row.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
            best.0 == label
        })
        .count();
    Ok(hits as f64 / y.len() as f64)
}

/// Metrics of one global round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub alpha: Vec<f64>,
    /// Σ over modalities of the squared norm of the data-weighted full
    /// gradient at the round-start aggregate.
    pub grad_sq: f64,
}

/// Per-UAV full local gradients at one round start, one list per modality.
pub type GradientSnapshot = Vec<Vec<Vec<f64>>>;

/// Outcome of a training run.
#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub modalities: Vec<usize>,
    pub rounds: Vec<RoundRecord>,
    pub encoders: Vec<ModelParams>,
    pub decoder: ModelParams,
    pub attention: AttentionState,
    pub fused: ModelParams,
    pub snapshots: Vec<GradientSnapshot>,
}

impl TrainingRun {
    /// `round,loss,accuracy,alpha_1..alpha_M` with one row per round.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,loss,accuracy");
        for j in 1..=self.modalities.len() {
            out.push_str(&format!(",alpha_{j}"));
        }
        out.push('\n');
        for r in &self.rounds {
            out.push_str(&format!("{},{:.12e},{:.12e}", r.round, r.loss, r.accuracy));
            for a in &r.alpha {
                out.push_str(&format!(",{a:.12e}"));
            }
            out.push('\n');
        }
        out
    }
}

fn uav_rng(seed: u64, round: usize, uav: usize, uavs: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1_000 + (round * uavs + uav) as u64);
    rng
}

/// Synthetic data for `seed`, then [`train_on`].
pub fn run_federated_training(cfg: &ScenarioConfig, mode: TrainMode, seed: u64) -> Result<TrainingRun, FmlError> {
    let data = synth_multimodal_dataset(cfg, seed);
    train_on(cfg, &data, mode, seed)
}

/// K rounds of: local SGD on every UAV, probe embeddings and model
/// aggregation per modality, server training of the decoder and attention
/// heads on the probe set, fusion and broadcast.
pub fn train_on(cfg: &ScenarioConfig, data: &FederatedData, mode: TrainMode, seed: u64) -> Result<TrainingRun, FmlError> {
    let (modalities, slots) = mode.layout(cfg);
    if modalities.iter().any(|&m| m >= data.num_modalities()) {
        return Err(FmlError::EmptyModality);
    }
    if data.partitions.len() != slots.len() {
        return Err(FmlError::ShapeMismatch(format!("{} partitions for {} UAVs", data.partitions.len(), slots.len())));
    }
    let n_mod = modalities.len();
    let classes = data.num_classes.max(cfg.num_classes);
    let embed = cfg.embed_dim;
    let parts: Vec<Samples> = slots.iter().enumerate().map(|(u, &s)| data.partitions[u].modality(modalities[s])).collect();
    let sizes: Vec<usize> = parts.iter().map(Samples::len).collect();
    let probe_x: Vec<&Array2<f64>> = modalities.iter().map(|&m| &data.probe.x[m]).collect();
    let test_x: Vec<Array2<f64>> = modalities.iter().map(|&m| data.test.x[m].clone()).collect();

    let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
    init_rng.set_stream(10);
    let mut encoders: Vec<ModelParams> = modalities
        .iter()
        .map(|&m| ModelParams::encoder(data.probe.x[m].ncols(), cfg.hidden_dim, embed).randomized(&mut init_rng))
        .collect();
    let mut decoder = ModelParams::decoder(n_mod * embed, classes).randomized(&mut init_rng);
    let mut attention = AttentionState::new(n_mod, embed);
    let mut h: Vec<Array2<f64>> =
        encoders.iter().zip(&probe_x).map(|(e, x)| encoder_forward(e, x.view())).collect::<Result<_, _>>()?;
    let mut alpha = attention_scores(&h, &attention);

    let mut rounds = Vec::with_capacity(cfg.num_rounds);
    let mut snapshots = Vec::with_capacity(cfg.num_rounds);
    for k in 0..cfg.num_rounds {
        let scales: Vec<f64> = alpha.iter().map(|a| a * n_mod as f64).collect();
        let fill: Vec<Array1<f64>> = h.iter().map(column_means).collect();
        let start = broadcast(&encoders, &slots);
        let contexts: Vec<LocalContext> = (0..n_mod)
            .map(|slot| LocalContext { decoder: decoder.clone(), slot, scales: scales.clone(), fill: fill.clone() })
            .collect();

        // Full gradients at the broadcast point, for the convergence diagnostics.
        let mut snapshot: GradientSnapshot = vec![Vec::new(); n_mod];
        let mut grad_sq = 0.0;
        for (slot, list) in snapshot.iter_mut().enumerate() {
            let mut mean = vec![0.0; encoders[slot].len()];
            let total: usize = (0..slots.len()).filter(|&u| slots[u] == slot).map(|u| sizes[u]).sum();
            for u in (0..slots.len()).filter(|&u| slots[u] == slot) {
                let (_, g) = encoder_loss_grad(&start[u], &contexts[slot], parts[u].x.view(), &parts[u].y)?;
                let g = g.to_flat();
                mean.iter_mut().zip(&g).for_each(|(a, v)| *a += v * sizes[u] as f64 / total as f64);
                list.push(g);
            }
            grad_sq += mean.iter().map(|v| v * v).sum::<f64>();
        }
        snapshots.push(snapshot);

        let mut local = Vec::with_capacity(slots.len());
        let mut losses = Vec::with_capacity(slots.len());
        for (u, &slot) in slots.iter().enumerate() {
            let mut rng = uav_rng(seed, k, u, slots.len());
            let update =
                local_sgd_round(&start[u], &contexts[slot], &parts[u], cfg.local_iters, cfg.learning_rate, cfg.batch_size, &mut rng)?;
            let (loss, _) = encoder_loss_grad(&update.params, &contexts[slot], parts[u].x.view(), &parts[u].y)?;
            losses.push(loss);
            local.push(update.params);
        }

        for slot in 0..n_mod {
            let members: Vec<usize> = (0..slots.len()).filter(|&u| slots[u] == slot).collect();
            let per_uav =
                members.iter().map(|&u| encoder_forward(&local[u], probe_x[slot].view())).collect::<Result<Vec<_>, _>>()?;
            h[slot] = aggregate_embeddings(&per_uav)?;
            let active: Vec<bool> = slots.iter().map(|&s| s == slot).collect();
            encoders[slot] = aggregate_models(&local, &active, &sizes)?;
        }

        let z_mean: Vec<Array1<f64>> = encoders
            .iter()
            .zip(&probe_x)
            .map(|(e, x)| extract_high_level_features(e, x.view()).map(|z| column_means(&z)))
            .collect::<Result<_, _>>()?;
        for _ in 0..cfg.server_iters {
            let (_, g_dec, g_att) = server_loss_grad(&decoder, &attention, &h, &z_mean, &data.probe.y)?;
            let w: Vec<f64> = decoder.to_flat().iter().zip(g_dec.to_flat()).map(|(w, g)| w - cfg.learning_rate * g).collect();
            decoder.set_flat(&w)?;
            let a: Vec<f64> = attention.to_flat().iter().zip(g_att.to_flat()).map(|(w, g)| w - cfg.learning_rate * g).collect();
            attention.set_flat(&a);
        }
        alpha = attention.weights(&z_mean);
        let accuracy = evaluate_accuracy(&decoder, &encoders, &alpha, &test_x, &data.test.y)?;
        rounds.push(RoundRecord { round: k + 1, loss: global_loss(&losses, &sizes), accuracy, alpha: alpha.clone(), grad_sq });
    }
    let fused = fuse_global(&encoders, &alpha)?;
    Ok(TrainingRun { modalities, rounds, encoders, decoder, attention, fused, snapshots })
}

/// Test rows of the modalities of a run, for callers evaluating a finished run.
pub fn test_inputs(data: &FederatedData, modalities: &[usize]) -> (Vec<Array2<f64>>, Vec<usize>) {
    (modalities.iter().map(|&m| data.test.x[m].clone()).collect(), data.test.y.clone())
}

/// Smoothness L and noise σ² of the local objectives at the end of a run,
/// measured on the probe set of every modality through the final server
/// state: L from gradients at random pairs near the final encoder, σ² from
/// minibatch gradients around the full probe gradient. Returns the largest
/// value over modalities.
pub fn estimate_local_constants(cfg: &ScenarioConfig, data: &FederatedData, run: &TrainingRun, seed: u64) -> Result<(f64, f64), FmlError> {
    let n_mod = run.modalities.len();
    let alpha = run.rounds.last().map_or_else(|| vec![1.0 / n_mod as f64; n_mod], |r| r.alpha.clone());
    let probes: Vec<Samples> = run.modalities.iter().map(|&m| data.probe.modality(m)).collect();
    let fill: Vec<Array1<f64>> = run
        .encoders
        .iter()
        .zip(&probes)
        .map(|(e, p)| encoder_forward(e, p.x.view()).map(|z| column_means(&z)))
        .collect::<Result<_, _>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(20);
    let (mut l_max, mut s2_max) = (0.0f64, 0.0f64);
    for (slot, probe) in probes.iter().enumerate() {
        let ctx = LocalContext { decoder: run.decoder.clone(), slot, scales: alpha.iter().map(|a| a * n_mod as f64).collect(), fill: fill.clone() };
        let enc = &run.encoders[slot];
        let grad = |w: &[f64], rows: &Samples| -> Result<Vec<f64>, FmlError> {
            Ok(encoder_loss_grad(&enc.with_flat(w)?, &ctx, rows.x.view(), &rows.y)?.1.to_flat())
        };
        let base = enc.to_flat();
        let jitter = |rng: &mut ChaCha8Rng| base.iter().map(|v| v + 0.05 * rng.sample::<f64, _>(rand_distr::StandardNormal)).collect::<Vec<f64>>();
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..8).map(|_| (jitter(&mut rng), jitter(&mut rng))).collect();
        let l = crate::convergence::estimate_smoothness(&pairs, |w| grad(w, probe).expect("perturbed encoder keeps its shape"));
        let full = grad(&base, probe)?;
        let b = cfg.batch_size.min(probe.len());
        let mini: Vec<Vec<f64>> = (0..16)
            .map(|_| {
                let idx = rand::seq::index::sample(&mut rng, probe.len(), b).into_vec();
                grad(&base, &probe.select(&idx))
            })
            .collect::<Result<_, _>>()?;
        l_max = l_max.max(l);
        s2_max = s2_max.max(crate::convergence::estimate_noise_variance(&full, &mini, b));
    }
    Ok((l_max, s2_max))
}
