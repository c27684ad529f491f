//! Desk-scale quantization-aware training with value-set restriction.
//!
//! Weights quantize per-tensor symmetric to codes in -127..127, project
//! onto the allowed weight set, and multiply unsigned 8-bit activation
//! codes into integer accumulators; hidden activations requantize to
//! 0..255 and project onto the allowed activation set. The backward pass
//! is a straight-through estimator: quantize-and-project steps count as
//! identity, so gradients land on the latent real-valued weights.

mod data;
mod schedule;

pub use data::{features_of, write_csv, DataFormat, Dataset, Split};
pub use schedule::{
    schedule_delay_thresholds, schedule_power_thresholds, DelayScheduleOutcome,
    PowerScheduleOutcome, ScheduleStep,
};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::select::Selection;

pub const WEIGHT_CODE_MAX: i32 = 127;
pub const ACT_CODE_MAX: i32 = 255;

/// Nearest allowed value by absolute difference; ties prefer the smaller
/// absolute value, then the negative one.
pub fn project_to_set(v: i32, allowed: &[i32]) -> i32 {
    assert!(!allowed.is_empty(), "allowed set must be non-empty");
    debug_assert!(allowed.windows(2).all(|w| w[0] < w[1]), "allowed set must be sorted");
    match allowed.binary_search(&v) {
        Ok(_) => v,
        Err(pos) => {
            let mut best: Option<i32> = None;
            for cand in [
                pos.checked_sub(1).map(|i| allowed[i]),
                allowed.get(pos).copied(),
            ]
            .into_iter()
            .flatten()
            {
                best = Some(match best {
                    None => cand,
                    Some(cur) => {
                        let key = |c: i32| ((v - c).abs(), c.abs(), (c >= 0) as i32);
                        if key(cand) < key(cur) {
                            cand
                        } else {
                            cur
                        }
                    }
                });
            }
            best.expect("at least one candidate")
        }
    }
}

/// Projection table over weight codes -127..=127.
#[derive(Debug, Clone)]
pub struct WeightLut {
    table: Vec<i8>,
}

impl WeightLut {
    pub fn new(sel: &Selection) -> Self {
        let allowed: Vec<i32> = sel.weights.iter().map(|&w| w as i32).collect();
        let table = (-127..=127)
            .map(|v| project_to_set(v, &allowed) as i8)
            .collect();
        WeightLut { table }
    }

    #[inline]
    pub fn project(&self, code: i32) -> i8 {
        self.table[(code + 127) as usize]
    }
}

/// Projection table over activation codes 0..=255; `None` when the full
/// set is allowed.
pub fn act_lut(sel: &Selection) -> Option<Vec<u8>> {
    if sel.acts.len() == 256 {
        return None;
    }
    let allowed: Vec<i32> = sel.acts.iter().map(|&a| a as i32).collect();
    Some((0..=255).map(|v| project_to_set(v, &allowed) as u8).collect())
}

// --- materialized (integer) network ---------------------------------------

/// One dense layer in hardware form: projected integer weights, scales,
/// bias in the accumulator domain, and the activation projection table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixedLayer {
    pub weights: Array2<i8>,
    pub bias_acc: Array1<i64>,
    pub w_scale: f32,
    pub in_scale: f32,
    /// Requantization scale of the layer output; `None` on the final
    /// layer, which emits raw scores.
    pub out_scale: Option<f32>,
    /// Projection of output codes onto the allowed activation set.
    pub act_lut: Option<Vec<u8>>,
}

impl FixedLayer {
    /// Reference integer matmul: `acc = codes * weights + bias`.
    pub fn accumulate(&self, codes: &Array2<u8>) -> Array2<i64> {
        let x = codes.mapv(|c| c as f64);
        let w = self.weights.mapv(|w| w as f64);
        let mut acc = x.dot(&w);
        for mut row in acc.rows_mut() {
            for (o, v) in row.iter_mut().enumerate() {
                *v += self.bias_acc[o] as f64;
            }
        }
        acc.mapv(|v| v.round() as i64)
    }

    pub fn real_scale(&self) -> f32 {
        self.w_scale * self.in_scale
    }

    /// Hidden-layer postprocessing: rectify, requantize, project.
    pub fn acc_to_codes(&self, acc: &Array2<i64>) -> Array2<u8> {
        let out_scale = self.out_scale.expect("hidden layer has an output scale");
        let scale = self.real_scale();
        acc.mapv(|a| {
            let pre = a as f32 * scale;
            let code = if pre <= 0.0 {
                0u8
            } else {
                ((pre / out_scale).round() as i64).clamp(0, ACT_CODE_MAX as i64) as u8
            };
            match &self.act_lut {
                Some(lut) => lut[code as usize],
                None => code,
            }
        })
    }

    /// Final-layer postprocessing: real-valued scores.
    pub fn acc_to_scores(&self, acc: &Array2<i64>) -> Array2<f32> {
        let scale = self.real_scale();
        acc.mapv(|a| a as f32 * scale)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixedNet {
    pub layers: Vec<FixedLayer>,
}

impl FixedNet {
    pub fn input_scale(&self) -> f32 {
        self.layers[0].in_scale
    }

    pub fn encode_input(&self, x: ArrayView2<f32>) -> Array2<u8> {
        encode_codes(x, self.input_scale())
    }

    /// Full inference; returns final scores.
    pub fn forward(&self, x: ArrayView2<f32>) -> Array2<f32> {
        let mut codes = self.encode_input(x);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let acc = layer.accumulate(&codes);
            if l == last {
                return layer.acc_to_scores(&acc);
            }
            codes = layer.acc_to_codes(&acc);
        }
        unreachable!("network has at least one layer")
    }

    pub fn accuracy(&self, x: ArrayView2<f32>, labels: &[u8]) -> f64 {
        accuracy_of(&self.forward(x), labels)
    }

    /// Distinct weight codes used anywhere in the network.
    pub fn used_weight_codes(&self) -> std::collections::BTreeSet<i8> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().copied())
            .collect()
    }
}

fn encode_codes(x: ArrayView2<f32>, scale: f32) -> Array2<u8> {
    assert!(scale > 0.0, "network is not calibrated");
    x.mapv(|v| ((v / scale).round() as i64).clamp(0, ACT_CODE_MAX as i64) as u8)
}

// --- trainable (latent) network --------------------------------------------

#[derive(Debug, Clone)]
pub struct DenseLayer {
    /// Latent real-valued master weights, in_dim x out_dim.
    pub w: Array2<f32>,
    pub b: Array1<f32>,
    /// Requantization scale for the layer output (running max / 255);
    /// 0 until calibrated. Unused on the final layer.
    pub act_scale_out: f32,
}

#[derive(Debug, Clone)]
pub struct QuantizedNet {
    pub layers: Vec<DenseLayer>,
    /// Scale of input activation codes (running max / 255); 0 until
    /// calibrated.
    pub input_scale: f32,
}

/// Per-layer tensors cached by the forward pass for the STE backward.
#[derive(Debug, Clone)]
pub struct LayerCache {
    pub in_codes: Array2<u8>,
    pub in_scale: f32,
    pub w_codes: Array2<i8>,
    pub w_scale: f32,
    /// Real-domain pre-activation (accumulator times scales).
    pub pre_real: Array2<f32>,
    pub out_codes: Option<Array2<u8>>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub layers: Vec<LayerCache>,
    pub scores: Array2<f32>,
}

/// Epoch record produced by [`QuantizedNet::train`].
#[derive(Debug, Clone, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Training hyperparameters and the two threshold schedules.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub seed: u64,
    pub power_start_uw: f64,
    pub power_step_uw: f64,
    pub power_floor_uw: f64,
    pub delay_start_ps: u64,
    pub delay_step_ps: u64,
    pub delay_floor_ps: u64,
    /// Relative accuracy-drop cutoff for the power-threshold schedule.
    pub power_stop_fraction: f64,
    /// Relative accuracy-drop cutoff for the delay-threshold schedule.
    pub delay_stop_fraction: f64,
    /// Conventional magnitude pruning: codes with |w| <= this snap to 0
    /// for the duration of training.
    pub prune_magnitude: Option<u8>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 64,
            learning_rate: 0.05,
            seed: 0,
            power_start_uw: 900.0,
            power_step_uw: 25.0,
            power_floor_uw: 500.0,
            delay_start_ps: 170,
            delay_step_ps: 10,
            delay_floor_ps: 10,
            power_stop_fraction: 0.01,
            delay_stop_fraction: 0.05,
            prune_magnitude: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.power_step_uw <= 0.0 || self.delay_step_ps == 0 {
            return Err(Error::Config("schedule steps must be positive".into()));
        }
        if self.power_start_uw < self.power_floor_uw || self.delay_start_ps < self.delay_floor_ps
        {
            return Err(Error::Config("schedule start must be at least its floor".into()));
        }
        Ok(())
    }
}

fn weight_scale(w: &Array2<f32>) -> f32 {
    let max = w.iter().fold(0.0f32, |m, &v| m.max(v.abs()));
    (max / WEIGHT_CODE_MAX as f32).max(1e-12)
}

impl QuantizedNet {
    /// Fresh MLP with He-normal latent weights and zero bias.
    pub fn new_mlp(dims: &[usize], seed: u64) -> QuantizedNet {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|d| {
                let (fan_in, fan_out) = (d[0], d[1]);
                let dist = Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt()).expect("normal");
                let w = Array2::from_shape_fn((fan_in, fan_out), |_| dist.sample(&mut rng));
                DenseLayer { w, b: Array1::zeros(fan_out), act_scale_out: 0.0 }
            })
            .collect();
        QuantizedNet { layers, input_scale: 0.0 }
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].w.nrows()];
        dims.extend(self.layers.iter().map(|l| l.w.ncols()));
        dims
    }

    /// Updates activation scales from a real-valued forward pass (running
    /// max, so scales never shrink).
    pub fn calibrate(&mut self, x: ArrayView2<f32>) {
        let in_max = x.iter().fold(0.0f32, |m, &v| m.max(v.abs()));
        self.input_scale = self.input_scale.max(in_max / ACT_CODE_MAX as f32).max(1e-9);
        let mut h = x.to_owned();
        let n_layers = self.layers.len();
        for (l, layer) in self.layers.iter_mut().enumerate() {
            let mut pre = h.dot(&layer.w);
            for mut row in pre.rows_mut() {
                row += &layer.b;
            }
            let relu = pre.mapv(|v| v.max(0.0));
            if l + 1 < n_layers {
                let out_max = relu.iter().fold(0.0f32, |m, &v| m.max(v));
                layer.act_scale_out =
                    layer.act_scale_out.max(out_max / ACT_CODE_MAX as f32).max(1e-9);
            }
            h = relu;
        }
    }

    /// Restricted quantized forward pass with cached tensors.
    pub fn forward(&self, x: ArrayView2<f32>, sel: &Selection) -> Result<ForwardCache> {
        if x.ncols() != self.layers[0].w.nrows() {
            return Err(Error::Input(format!(
                "batch has {} features, layer 0 expects {}",
                x.ncols(),
                self.layers[0].w.nrows()
            )));
        }
        if self.input_scale <= 0.0 {
            return Err(Error::Training("network is not calibrated".into()));
        }
        let wlut = WeightLut::new(sel);
        let alut = act_lut(sel);
        let mut codes = encode_codes(x, self.input_scale);
        let mut in_scale = self.input_scale;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut scores = None;
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let fixed = self.materialize_layer(layer, l == last, in_scale, &wlut, &alut);
            let acc = fixed.accumulate(&codes);
            let pre_real = fixed.acc_to_scores(&acc);
            let out = (l != last).then(|| fixed.acc_to_codes(&acc));
            if l == last {
                scores = Some(pre_real.clone());
            }
            caches.push(LayerCache {
                in_codes: std::mem::replace(
                    &mut codes,
                    out.clone().unwrap_or_else(|| Array2::zeros((0, 0))),
                ),
                in_scale,
                w_codes: fixed.weights,
                w_scale: fixed.w_scale,
                pre_real,
                out_codes: out,
            });
            if l != last {
                in_scale = layer.act_scale_out;
            }
        }
        Ok(ForwardCache { layers: caches, scores: scores.expect("at least one layer") })
    }

    fn materialize_layer(
        &self,
        layer: &DenseLayer,
        is_last: bool,
        in_scale: f32,
        wlut: &WeightLut,
        alut: &Option<Vec<u8>>,
    ) -> FixedLayer {
        let w_scale = weight_scale(&layer.w);
        let weights = layer.w.mapv(|v| {
            let code = (v / w_scale).round() as i32;
            wlut.project(code.clamp(-WEIGHT_CODE_MAX, WEIGHT_CODE_MAX))
        });
        let bias_acc = layer
            .b
            .mapv(|v| (v as f64 / (w_scale as f64 * in_scale as f64)).round() as i64);
        FixedLayer {
            weights,
            bias_acc,
            w_scale,
            in_scale,
            out_scale: (!is_last).then_some(layer.act_scale_out),
            act_lut: if is_last { None } else { alut.clone() },
        }
    }

    /// Snapshots the whole network in hardware form.
    pub fn materialize(&self, sel: &Selection) -> Result<FixedNet> {
        if self.input_scale <= 0.0 {
            return Err(Error::Training("network is not calibrated".into()));
        }
        let wlut = WeightLut::new(sel);
        let alut = act_lut(sel);
        let mut in_scale = self.input_scale;
        let last = self.layers.len() - 1;
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(l, layer)| {
                let fixed = self.materialize_layer(layer, l == last, in_scale, &wlut, &alut);
                if l != last {
                    in_scale = layer.act_scale_out;
                }
                fixed
            })
            .collect();
        Ok(FixedNet { layers })
    }

    /// STE gradients of the mean cross-entropy at the cached forward pass.
    pub fn gradients(
        &self,
        cache: &ForwardCache,
        labels: &[u8],
    ) -> (f64, Vec<Array2<f32>>, Vec<Array1<f32>>) {
        let (loss, mut dz) = softmax_ce(&cache.scores, labels);
        let mut gw = Vec::with_capacity(self.layers.len());
        let mut gb = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let lc = &cache.layers[l];
            let x_hat = lc.in_codes.mapv(|c| c as f32 * lc.in_scale);
            gw.push(x_hat.t().dot(&dz));
            gb.push(dz.sum_axis(Axis(0)));
            if l > 0 {
                let w_hat = lc.w_codes.mapv(|w| w as f32 * lc.w_scale);
                let dx_hat = dz.dot(&w_hat.t());
                let prev = &cache.layers[l - 1];
                dz = dx_hat * prev.pre_real.mapv(|v| (v > 0.0) as i32 as f32);
            }
        }
        gw.reverse();
        gb.reverse();
        (loss, gw, gb)
    }

    /// Minibatch SGD on cross-entropy with the straight-through estimator.
    /// Deterministic given the config seed.
    pub fn train(
        &mut self,
        data: &Dataset,
        cfg: &TrainConfig,
        sel: &Selection,
    ) -> Result<Vec<EpochStats>> {
        cfg.validate()?;
        let (x, y) = data.subset(Split::Train);
        if y.is_empty() {
            return Err(Error::Input("no training rows".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut history = Vec::with_capacity(cfg.epochs);

        // Conventional magnitude pruning: capture the zero mask up front
        // and re-apply it after each step.
        let prune_mask: Option<Vec<Array2<bool>>> = cfg.prune_magnitude.map(|thr| {
            self.layers
                .iter()
                .map(|layer| {
                    let s = weight_scale(&layer.w);
                    layer.w.mapv(|v| ((v / s).round().abs() as i32) <= thr as i32)
                })
                .collect()
        });
        if prune_mask.is_some() {
            self.apply_zero_mask(prune_mask.as_ref().unwrap());
        }

        for epoch in 0..cfg.epochs {
            self.calibrate(x.view());
            let mut order: Vec<usize> = (0..y.len()).collect();
            order.shuffle(&mut rng);
            let mut loss_sum = 0.0;
            let mut batches = 0usize;
            for chunk in order.chunks(cfg.batch_size) {
                let xb = select_rows(&x, chunk);
                let yb: Vec<u8> = chunk.iter().map(|&i| y[i]).collect();
                let cache = self.forward(xb.view(), sel)?;
                let (loss, gw, gb) = self.gradients(&cache, &yb);
                if !loss.is_finite() {
                    return Err(Error::Training(format!(
                        "loss diverged at epoch {epoch} (non-finite)"
                    )));
                }
                loss_sum += loss;
                batches += 1;
                for (layer, (dw, db)) in self.layers.iter_mut().zip(gw.iter().zip(&gb)) {
                    layer.w.scaled_add(-cfg.learning_rate, dw);
                    layer.b.scaled_add(-cfg.learning_rate, db);
                }
                if let Some(masks) = &prune_mask {
                    self.apply_zero_mask(masks);
                }
            }
            let accuracy = self.evaluate(data, sel)?;
            history.push(EpochStats {
                epoch,
                loss: loss_sum / batches.max(1) as f64,
                accuracy,
            });
        }
        Ok(history)
    }

    fn apply_zero_mask(&mut self, masks: &[Array2<bool>]) {
        for (layer, mask) in self.layers.iter_mut().zip(masks) {
            ndarray::Zip::from(&mut layer.w).and(mask).for_each(|w, &m| {
                if m {
                    *w = 0.0;
                }
            });
        }
    }

    /// Top-1 accuracy under the restricted forward pass, on the test split
    /// when one exists.
    pub fn evaluate(&self, data: &Dataset, sel: &Selection) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Input("empty dataset".into()));
        }
        let (x, y) = data.eval_set();
        let cache = self.forward(x.view(), sel)?;
        Ok(accuracy_of(&cache.scores, &y))
    }
}

fn select_rows(x: &Array2<f32>, rows: &[usize]) -> Array2<f32> {
    let mut out = Array2::zeros((rows.len(), x.ncols()));
    for (o, &i) in rows.iter().enumerate() {
        out.row_mut(o).assign(&x.row(i));
    }
    out
}

fn accuracy_of(scores: &Array2<f32>, labels: &[u8]) -> f64 {
    let correct = scores
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &label)| {
            // First maximum wins ties.
            let mut pred = 0usize;
            let mut best = f32::NEG_INFINITY;
            for (i, &v) in row.iter().enumerate() {
                if v > best {
                    best = v;
                    pred = i;
                }
            }
            pred == label as usize
        })
        .count();
    correct as f64 / labels.len().max(1) as f64
}

/// Stable softmax cross-entropy: mean loss and dL/dscores.
pub fn softmax_ce(scores: &Array2<f32>, labels: &[u8]) -> (f64, Array2<f32>) {
    let n = scores.nrows();
    let mut dz = scores.clone();
    let mut loss = 0.0f64;
    for (mut row, &label) in dz.rows_mut().into_iter().zip(labels) {
        let m = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let sum: f32 = row.sum();
        row.mapv_inplace(|v| v / sum);
        let p = row[label as usize];
        loss -= if p.is_finite() { (p.max(1e-30) as f64).ln() } else { f64::NAN };
        row[label as usize] -= 1.0;
    }
    dz.mapv_inplace(|v| v / n as f32);
    (loss / n as f64, dz)
}
