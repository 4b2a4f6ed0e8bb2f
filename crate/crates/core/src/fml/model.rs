//! Small dense networks with hand-written backpropagation: a two-layer tanh
//! encoder per modality, a softmax decoder over concatenated embeddings and a
//! linear attention scorer.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::FmlError;

/// One fully connected layer, `w` is `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { w: Array2::zeros((outputs, inputs)), b: Array1::zeros(outputs) }
    }

    fn affine(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.w.t()) + &self.b
    }
}

/// Layered weights of an encoder or decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<Dense>,
}

impl ModelParams {
    /// `input → hidden → embed`, all zero.
    pub fn encoder(input: usize, hidden: usize, embed: usize) -> Self {
        Self { layers: vec![Dense::zeros(input, hidden), Dense::zeros(hidden, embed)] }
    }

    /// `width → classes`, all zero.
    pub fn decoder(width: usize, classes: usize) -> Self {
        Self { layers: vec![Dense::zeros(width, classes)] }
    }

    /// Uniform Glorot initialization of the weights; biases stay zero.
    pub fn randomized<R: Rng>(mut self, rng: &mut R) -> Self {
        for layer in &mut self.layers {
            let (o, i) = layer.w.dim();
            let limit = (6.0 / (i + o) as f64).sqrt();
            layer.w.mapv_inplace(|_| rng.gen_range(-limit..limit));
        }
        self
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| l.w.dim()).collect()
    }

    /// Weights then bias of each layer, row-major.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<(), FmlError> {
        if flat.len() != self.len() {
            return Err(FmlError::ShapeMismatch(format!("flat length {} vs {}", flat.len(), self.len())));
        }
        let mut it = flat.iter();
        for l in &mut self.layers {
            l.w.iter_mut().chain(l.b.iter_mut()).for_each(|v| *v = *it.next().unwrap());
        }
        Ok(())
    }

    /// Same shape as `self` with the given flat values.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self, FmlError> {
        let mut out = self.clone();
        out.set_flat(flat)?;
        Ok(out)
    }

    fn check_input(&self, cols: usize) -> Result<(), FmlError> {
        let want = self.layers[0].w.ncols();
        if cols != want {
            return Err(FmlError::ShapeMismatch(format!("input width {cols}, model expects {want}")));
        }
        Ok(())
    }
}

/// Activations kept for the backward pass of an encoder.
struct EncoderCache {
    hidden: Array2<f64>,
    out: Array2<f64>,
}

fn encoder_pass(p: &ModelParams, x: ArrayView2<f64>) -> Result<EncoderCache, FmlError> {
    if p.layers.len() != 2 {
        return Err(FmlError::ShapeMismatch(format!("encoder needs 2 layers, got {}", p.layers.len())));
    }
    p.check_input(x.ncols())?;
    let hidden = p.layers[0].affine(x).mapv(f64::tanh);
    let out = p.layers[1].affine(hidden.view()).mapv(f64::tanh);
    Ok(EncoderCache { hidden, out })
}

/// Embeddings of a batch (`rows × input_dim` → `rows × embed_dim`).
pub fn encoder_forward(p: &ModelParams, x: ArrayView2<f64>) -> Result<Array2<f64>, FmlError> {
    Ok(encoder_pass(p, x)?.out)
}

fn softmax_rows(mut logits: Array2<f64>) -> Array2<f64> {
    for mut row in logits.rows_mut() {
        let top = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - top).exp());
        let total = row.sum();
        row /= total;
    }
    logits
}

/// Class probabilities of a batch of concatenated embeddings.
pub fn decoder_forward(p: &ModelParams, h: ArrayView2<f64>) -> Result<Array2<f64>, FmlError> {
    if p.layers.len() != 1 {
        return Err(FmlError::ShapeMismatch(format!("decoder needs 1 layer, got {}", p.layers.len())));
    }
    p.check_input(h.ncols())?;
    Ok(softmax_rows(p.layers[0].affine(h)))
}

/// Softmax over a score vector.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let top = scores.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
    let total: f64 = e.iter().sum();
    e.iter().map(|v| v / total).collect()
}

/// Mean cross-entropy of a decoder on `h`, with gradients for the decoder and
/// for `h`.
pub fn decoder_loss_grad(p: &ModelParams, h: ArrayView2<f64>, y: &[usize]) -> Result<(f64, ModelParams, Array2<f64>), FmlError> {
    let probs = decoder_forward(p, h)?;
    let n = h.nrows();
    if y.len() != n {
        return Err(FmlError::ShapeMismatch(format!("{} labels for {n} rows", y.len())));
    }
    let mut grad = ModelParams { layers: vec![Dense::zeros(h.ncols(), probs.ncols())] };
    if n == 0 {
        return Ok((0.0, grad, Array2::zeros(h.dim())));
    }
    let mut delta = probs;
    let mut loss = 0.0;
    for (i, &label) in y.iter().enumerate() {
        if label >= delta.ncols() {
            return Err(FmlError::ShapeMismatch(format!("label {label} with {} classes", delta.ncols())));
        }
        loss -= delta[[i, label]].max(f64::MIN_POSITIVE).ln();
        delta[[i, label]] -= 1.0;
    }
    let inv = 1.0 / n as f64;
    delta *= inv;
    grad.layers[0].w = delta.t().dot(&h);
    grad.layers[0].b = delta.sum_axis(Axis(0));
    let grad_h = delta.dot(&p.layers[0].w);
    Ok((loss * inv, grad, grad_h))
}

/// Frozen server state a UAV trains its encoder against: the round-start
/// decoder, the scale of every modality slot and the fill vector used for the
/// slots of the other modalities.
#[derive(Debug, Clone)]
pub struct LocalContext {
    pub decoder: ModelParams,
    pub slot: usize,
    pub scales: Vec<f64>,
    pub fill: Vec<Array1<f64>>,
}

impl LocalContext {
    fn embed_dim(&self) -> usize {
        self.fill[0].len()
    }
}

/// Local cross-entropy of an encoder through the frozen decoder, with the
/// encoder gradient.
pub fn encoder_loss_grad(p: &ModelParams, ctx: &LocalContext, x: ArrayView2<f64>, y: &[usize]) -> Result<(f64, ModelParams), FmlError> {
    let cache = encoder_pass(p, x)?;
    let e = ctx.embed_dim();
    if cache.out.ncols() != e || ctx.scales.len() != ctx.fill.len() || ctx.slot >= ctx.fill.len() {
        return Err(FmlError::ShapeMismatch("local context does not match encoder".into()));
    }
    let n = x.nrows();
    let mut h = Array2::zeros((n, e * ctx.fill.len()));
    for (j, (fill, &scale)) in ctx.fill.iter().zip(&ctx.scales).enumerate() {
        let mut block = h.slice_mut(s![.., j * e..(j + 1) * e]);
        if j == ctx.slot {
            block.assign(&(&cache.out * scale));
        } else {
            block.assign(&(fill * scale));
        }
    }
    let (loss, _, grad_h) = decoder_loss_grad(&ctx.decoder, h.view(), y)?;
    let slot = ctx.slot;
    let grad_out = grad_h.slice(s![.., slot * e..(slot + 1) * e]).to_owned() * ctx.scales[slot];
    // tanh' = 1 - tanh²
    let d_out = grad_out * cache.out.mapv(|v| 1.0 - v * v);
    let mut grad = ModelParams::encoder(x.ncols(), cache.hidden.ncols(), e);
    grad.layers[1].w = d_out.t().dot(&cache.hidden);
    grad.layers[1].b = d_out.sum_axis(Axis(0));
    let d_hidden = d_out.dot(&p.layers[1].w) * cache.hidden.mapv(|v| 1.0 - v * v);
    grad.layers[0].w = d_hidden.t().dot(&x);
    grad.layers[0].b = d_hidden.sum_axis(Axis(0));
    Ok((loss, grad))
}

/// Linear attention scorer, one head `(w, b)` per modality.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionState {
    pub w: Vec<Array1<f64>>,
    pub b: Vec<f64>,
}

impl AttentionState {
    /// All-zero heads, giving uniform weights.
    pub fn new(modalities: usize, embed: usize) -> Self {
        Self { w: vec![Array1::zeros(embed); modalities], b: vec![0.0; modalities] }
    }

    pub fn raw_scores(&self, z_mean: &[Array1<f64>]) -> Vec<f64> {
        self.w.iter().zip(&self.b).zip(z_mean).map(|((w, b), z)| w.dot(z) + b).collect()
    }

    /// Softmax of the raw scores.
    pub fn weights(&self, z_mean: &[Array1<f64>]) -> Vec<f64> {
        softmax(&self.raw_scores(z_mean))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.w.iter().flat_map(|w| w.iter().copied()).collect();
        out.extend(&self.b);
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let e = self.w.first().map_or(0, |w| w.len());
        for (m, w) in self.w.iter_mut().enumerate() {
            w.assign(&Array1::from(flat[m * e..(m + 1) * e].to_vec()));
        }
        let tail = flat.len() - self.b.len();
        self.b.copy_from_slice(&flat[tail..]);
    }
}

/// Decoder input for modality embeddings `h[j]` under weights `alpha`: block
/// `j` is `M·α_j·h_j`, so uniform weights leave the embeddings unchanged.
pub fn fused_input(h: &[Array2<f64>], alpha: &[f64]) -> Array2<f64> {
    let m = h.len() as f64;
    let blocks: Vec<Array2<f64>> = h.iter().zip(alpha).map(|(hj, a)| hj * (m * a)).collect();
    let views: Vec<ArrayView2<f64>> = blocks.iter().map(|b| b.view()).collect();
    ndarray::concatenate(Axis(1), &views).expect("embedding blocks share a row count")
}

/// Server loss on probe embeddings with gradients for the decoder and the
/// attention heads. `z_mean[j]` is the mean high-level feature of modality `j`.
pub fn server_loss_grad(
    decoder: &ModelParams,
    attention: &AttentionState,
    h: &[Array2<f64>],
    z_mean: &[Array1<f64>],
    y: &[usize],
) -> Result<(f64, ModelParams, AttentionState), FmlError> {
    if h.len() != attention.w.len() || z_mean.len() != h.len() {
        return Err(FmlError::ShapeMismatch("modality count differs between embeddings and scorer".into()));
    }
    let alpha = attention.weights(z_mean);
    let input = fused_input(h, &alpha);
    let (loss, grad_dec, grad_in) = decoder_loss_grad(decoder, input.view(), y)?;
    let m = h.len() as f64;
    let mut offset = 0;
    let d_alpha: Vec<f64> = h
        .iter()
        .map(|hj| {
            let e = hj.ncols();
            let g = (&grad_in.slice(s![.., offset..offset + e]) * hj).sum() * m;
            offset += e;
            g
        })
        .collect();
    let mean: f64 = alpha.iter().zip(&d_alpha).map(|(a, g)| a * g).sum();
    let mut grad_att = AttentionState::new(h.len(), attention.w[0].len());
    for j in 0..h.len() {
        let d_raw = alpha[j] * (d_alpha[j] - mean);
        grad_att.w[j] = &z_mean[j] * d_raw;
        grad_att.b[j] = d_raw;
    }
    Ok((loss, grad_dec, grad_att))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy() -> (ModelParams, LocalContext) {
        let mut enc = ModelParams::encoder(1, 1, 1);
        enc.set_flat(&[1.0, 0.0, 1.0, 0.0]).unwrap();
        let mut dec = ModelParams::decoder(1, 2);
        dec.set_flat(&[1.0, -1.0, 0.0, 0.0]).unwrap();
        let ctx = LocalContext { decoder: dec, slot: 0, scales: vec![1.0], fill: vec![Array1::zeros(1)] };
        (enc, ctx)
    }

    #[test]
    fn zero_weights_give_zero_embeddings_and_uniform_probabilities() {
        let x = Array2::from_elem((3, 4), 0.7);
        let z = encoder_forward(&ModelParams::encoder(4, 5, 2), x.view()).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
        let p = decoder_forward(&ModelParams::decoder(2, 4), z.view()).unwrap();
        assert!(p.iter().all(|&v| v == 0.25));
    }

    #[test]
    fn one_dimensional_forward_is_nested_tanh() {
        let (enc, _) = toy();
        let z = encoder_forward(&enc, array![[0.5]].view()).unwrap();
        assert_eq!(z[[0, 0]], 0.4318081805950961);
    }

    #[test]
    fn one_dimensional_gradient_matches_chain_rule() {
        let (enc, ctx) = toy();
        let (loss, g) = encoder_loss_grad(&enc, &ctx, array![[0.5]].view(), &[0]).unwrap();
        let want = [-0.18975703881196107, -0.37951407762392214, -0.22300269851412982, -0.48256745072258284];
        assert!((loss - 0.3518072935147871).abs() <= 1e-15);
        for (a, b) in g.to_flat().iter().zip(want) {
            assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn empty_batch_gives_empty_output() {
        let x = Array2::<f64>::zeros((0, 3));
        assert_eq!(encoder_forward(&ModelParams::encoder(3, 2, 2), x.view()).unwrap().dim(), (0, 2));
    }

    #[test]
    fn wrong_width_is_rejected() {
        let x = Array2::<f64>::zeros((2, 3));
        assert!(matches!(encoder_forward(&ModelParams::encoder(4, 2, 2), x.view()), Err(FmlError::ShapeMismatch(_))));
        assert!(matches!(decoder_forward(&ModelParams::decoder(4, 2), x.view()), Err(FmlError::ShapeMismatch(_))));
        assert!(ModelParams::decoder(2, 2).set_flat(&[1.0]).is_err());
    }

    #[test]
    fn saturated_scores_pick_one_modality() {
        let a = softmax(&[50.0, 0.0]);
        assert!((a[0] - 1.0).abs() <= 1e-9 && a[1] <= 1e-9);
        assert_eq!(softmax(&[0.3, 0.3, 0.3]), vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn flat_round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let p = ModelParams::encoder(3, 4, 2).randomized(&mut rng);
        assert_eq!(p.len(), 3 * 4 + 4 + 4 * 2 + 2);
        assert_eq!(p.with_flat(&p.to_flat()).unwrap(), p);
    }

    use rand::SeedableRng;
}
