//! The noise-prediction network.
//!
//! Front stage: each triplet becomes a token by summing a feature
//! embedding, a linear projection of its value, and a sinusoidal time
//! encoding; target tokens additionally receive a diffusion-step
//! embedding (lookup table through two linear layers with a
//! nonlinearity). Back stage: three Transformer blocks, each two stacked
//! encoder-decoder layers; the decoder cross-attends to the block's top
//! encoder output. Per-block decoder outputs feed a convolutional
//! decoder through skip connections, which projects each target token to
//! a scalar noise estimate.
//!
//! Padding tokens (mask = 0) carry the reserved feature id, time 0 and
//! value 0; they are excluded from every attention softmax and the
//! network output is zeroed at padding target slots, so padding values
//! cannot influence the output.

use std::collections::HashMap;
use std::sync::Arc;

use vitalcast_numeric::element::Element;
use vitalcast_numeric::graph::{Graph, Padding, TensorId};
use vitalcast_numeric::rng::{derive_rng, uniform_init};
use vitalcast_numeric::tensor::Tensor;
use vitalcast_numeric::Checkpoint;

use crate::error::CoreError;
use crate::triplet::IcuSample;

pub const N_BLOCKS: usize = 3;
pub const PAIRS_PER_BLOCK: usize = 2;

/// Back-stage wiring variants. All three share identical parameter
/// shapes; they differ only in which block outputs reach the conv
/// decoder: `A` feeds it the last block three times (no skips), `B` adds
/// a skip from block 2, and `C` (the default) skips from blocks 1 and 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    A,
    B,
    C,
}

impl Topology {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "a" | "A" => Some(Topology::A),
            "b" | "B" => Some(Topology::B),
            "c" | "C" => Some(Topology::C),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Topology::A => "a",
            Topology::B => "b",
            Topology::C => "c",
        }
    }
}

#[derive(Debug, Clone)]
pub struct DenoiserConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    /// Width of the diffusion-step embedding table.
    pub d_step: usize,
    /// Number of real features; embedding table has one extra padding row.
    pub n_features: usize,
    /// Diffusion step count (rows of the step lookup table).
    pub n_steps: usize,
    pub cond_capacity: usize,
    pub target_capacity: usize,
    pub topology: Topology,
    pub ln_eps: f64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            d_model: 64,
            n_heads: 8,
            d_ff: 128,
            d_step: 128,
            n_features: 129,
            n_steps: 50,
            cond_capacity: 60,
            target_capacity: 30,
            topology: Topology::C,
            ln_eps: 1e-5,
        }
    }
}

impl DenoiserConfig {
    pub fn d_k(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(CoreError::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        for (name, v) in [
            ("d_ff", self.d_ff),
            ("d_step", self.d_step),
            ("n_features", self.n_features),
            ("n_steps", self.n_steps),
            ("cond_capacity", self.cond_capacity),
            ("target_capacity", self.target_capacity),
        ] {
            if v == 0 {
                return Err(CoreError::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// The tiny configuration used by gradient-check suites.
    pub fn tiny(n_features: usize) -> Self {
        DenoiserConfig {
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            d_step: 16,
            n_features,
            n_steps: 50,
            cond_capacity: 6,
            target_capacity: 3,
            topology: Topology::C,
            ln_eps: 1e-5,
        }
    }
}

/// Sinusoidal encoding of event times; at time 0 the channels alternate
/// `[0, 1, 0, 1, ...]`.
pub fn time_encoding<T: Element>(times: &[f64], d: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(times.len() * d);
    for &t in times {
        for j in 0..d {
            let pair = (j / 2) as f64;
            let freq = (10_000f64).powf(-2.0 * pair / d as f64);
            let angle = t * freq;
            out.push(T::from_f64(if j % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    out
}

/// A batch of samples packed into flat token arrays, trimmed to the
/// largest valid count in the batch (padding beyond that length cannot
/// influence any output, so dropping it is exact).
#[derive(Debug, Clone)]
pub struct PackedBatch<T: Element> {
    pub batch: usize,
    pub cond_len: usize,
    pub target_len: usize,
    pub cond_ids: Vec<usize>,
    pub cond_times: Vec<f64>,
    pub cond_values: Vec<T>,
    pub cond_mask: Vec<bool>,
    pub target_ids: Vec<usize>,
    pub target_times: Vec<f64>,
    pub target_mask: Vec<bool>,
    /// Clean standardized target values (0 at padding slots).
    pub x0: Vec<T>,
}

impl<T: Element> PackedBatch<T> {
    pub fn pack(samples: &[&IcuSample]) -> Self {
        let batch = samples.len();
        let cond_len = samples
            .iter()
            .map(|s| s.valid_conditional_count())
            .max()
            .unwrap_or(1)
            .max(1);
        let target_len = samples
            .iter()
            .map(|s| s.valid_target_count())
            .max()
            .unwrap_or(1)
            .max(1);

        let mut p = PackedBatch {
            batch,
            cond_len,
            target_len,
            cond_ids: Vec::with_capacity(batch * cond_len),
            cond_times: Vec::with_capacity(batch * cond_len),
            cond_values: Vec::with_capacity(batch * cond_len),
            cond_mask: Vec::with_capacity(batch * cond_len),
            target_ids: Vec::with_capacity(batch * target_len),
            target_times: Vec::with_capacity(batch * target_len),
            target_mask: Vec::with_capacity(batch * target_len),
            x0: Vec::with_capacity(batch * target_len),
        };
        for s in samples {
            for i in 0..cond_len {
                let t = s.conditional.get(i).copied().unwrap_or_else(crate::triplet::Triplet::padding);
                p.cond_ids.push(t.feature_id as usize);
                p.cond_times.push(f64::from(t.time));
                p.cond_values.push(T::from_f64(f64::from(t.value)));
                p.cond_mask.push(t.mask);
            }
            for i in 0..target_len {
                let t = s.target.get(i).copied().unwrap_or_else(crate::triplet::Triplet::padding);
                p.target_ids.push(t.feature_id as usize);
                p.target_times.push(f64::from(t.time));
                p.target_mask.push(t.mask);
                p.x0.push(T::from_f64(f64::from(t.value)));
            }
        }
        p
    }

    pub fn valid_target_count(&self) -> usize {
        self.target_mask.iter().filter(|&&m| m).count()
    }
}

/// Schedule-derived readout constants for one diffusion step.
#[derive(Debug, Clone, Copy)]
pub struct StepScale<T: Element> {
    /// `1 / sqrt(1 - alpha_t)`: how strongly the clean-value residual is
    /// amplified into the noise estimate.
    pub gain: T,
    /// `sqrt(alpha_t)`.
    pub sqrt_alpha: T,
}

/// Parameter ids registered on a graph, addressable by name.
#[derive(Debug)]
pub struct Bound {
    index: HashMap<String, TensorId>,
}

impl Bound {
    fn id(&self, name: &str) -> TensorId {
        *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("parameter '{name}' not bound"))
    }
}

pub struct Denoiser<T: Element> {
    pub config: DenoiserConfig,
    params: Vec<(String, Tensor<T>)>,
}

impl<T: Element> Denoiser<T> {
    /// Initialize all weights: matrices uniform on
    /// `(-1/sqrt(fan_in), +1/sqrt(fan_in))`, biases zero, layer-norm
    /// gains one.
    pub fn init(config: DenoiserConfig, seed: u64) -> Result<Self, CoreError> {
        config.validate()?;
        let d = config.d_model;
        let mut params: Vec<(String, Tensor<T>)> = Vec::new();
        let mut ordinal = 0u64;
        let mut matrix = |name: String, shape: Vec<usize>, fan_in: usize| {
            let n: usize = shape.iter().product();
            let mut rng = derive_rng(seed, "denoiser-init", ordinal);
            ordinal += 1;
            (name, Tensor::new(shape, uniform_init(&mut rng, fan_in, n)).unwrap())
        };
        let zeros = |name: String, shape: Vec<usize>| (name, Tensor::<T>::zeros(shape));
        let ones = |name: String, shape: Vec<usize>| (name, Tensor::<T>::filled(shape, T::one()));

        params.push(matrix(
            "front.feature_embed".into(),
            vec![config.n_features + 1, d],
            config.n_features + 1,
        ));
        params.push(matrix("front.value_w".into(), vec![1, d], 1));
        params.push(zeros("front.value_b".into(), vec![d]));
        params.push(matrix(
            "front.step_table".into(),
            vec![config.n_steps, config.d_step],
            config.n_steps,
        ));
        params.push(matrix(
            "front.step_fc1.w".into(),
            vec![config.d_step, config.d_step],
            config.d_step,
        ));
        params.push(zeros("front.step_fc1.b".into(), vec![config.d_step]));
        params.push(matrix(
            "front.step_fc2.w".into(),
            vec![config.d_step, d],
            config.d_step,
        ));
        params.push(zeros("front.step_fc2.b".into(), vec![d]));

        for blk in 1..=N_BLOCKS {
            for pair in 1..=PAIRS_PER_BLOCK {
                for (side, attns, lns) in [
                    ("enc", vec!["self"], 2usize),
                    ("dec", vec!["self", "cross"], 3usize),
                ] {
                    let base = format!("block{blk}.pair{pair}.{side}");
                    for attn in attns {
                        for w in ["wq", "wk", "wv", "wo"] {
                            params.push(matrix(format!("{base}.{attn}.{w}"), vec![d, d], d));
                        }
                        for b in ["bq", "bk", "bv", "bo"] {
                            params.push(zeros(format!("{base}.{attn}.{b}"), vec![d]));
                        }
                    }
                    params.push(matrix(format!("{base}.ff.w1"), vec![d, config.d_ff], d));
                    params.push(zeros(format!("{base}.ff.b1"), vec![config.d_ff]));
                    params.push(matrix(format!("{base}.ff.w2"), vec![config.d_ff, d], config.d_ff));
                    params.push(zeros(format!("{base}.ff.b2"), vec![d]));
                    for ln in 1..=lns {
                        params.push(ones(format!("{base}.ln{ln}.g"), vec![d]));
                        params.push(zeros(format!("{base}.ln{ln}.b"), vec![d]));
                    }
                }
            }
        }

        params.push(matrix("conv.w1".into(), vec![d, N_BLOCKS * d, 1], N_BLOCKS * d));
        params.push(zeros("conv.b1".into(), vec![d]));
        // the conv path estimates the clean value; zero-initialized so an
        // untrained model predicts zero noise exactly
        params.push(zeros("conv.w2".into(), vec![1, d, 1]));
        params.push(zeros("conv.b2".into(), vec![1]));
        // per-step scalar gate on the noise readout, opened by training
        params.push(zeros("head.gate.w".into(), vec![config.d_step, 1]));
        params.push(zeros("head.gate.b".into(), vec![1]));

        Ok(Denoiser { config, params })
    }

    pub fn params(&self) -> &[(String, Tensor<T>)] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [(String, Tensor<T>)] {
        &mut self.params
    }

    /// Exact number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn to_checkpoint(&self) -> Checkpoint<T> {
        Checkpoint::new(self.params.clone())
    }

    pub fn from_checkpoint(config: DenoiserConfig, ckpt: &Checkpoint<T>) -> Result<Self, CoreError> {
        let mut model = Denoiser::init(config, 0)?;
        for (name, tensor) in &mut model.params {
            let stored = ckpt.get(name).ok_or_else(|| {
                CoreError::Config(format!("checkpoint is missing parameter '{name}'"))
            })?;
            if stored.shape() != tensor.shape() {
                return Err(CoreError::Config(format!(
                    "parameter '{name}': checkpoint shape {:?} != config shape {:?}",
                    stored.shape(),
                    tensor.shape()
                )));
            }
            *tensor = stored.clone();
        }
        Ok(model)
    }

    /// Register every parameter on the graph (gradient-tracked leaves).
    pub fn bind(&self, g: &mut Graph<T>) -> Bound {
        let mut index = HashMap::with_capacity(self.params.len());
        for (name, t) in &self.params {
            index.insert(name.clone(), g.parameter(name.clone(), t.clone()));
        }
        Bound { index }
    }

    // ── Forward pieces ──────────────────────────────────────────────

    fn token_stage(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        ids: &[usize],
        times: &[f64],
        values: &[T],
    ) -> Result<TensorId, CoreError> {
        let d = self.config.d_model;
        let n = ids.len();
        let emb = g.embedding(bound.id("front.feature_embed"), Arc::new(ids.to_vec()))?;
        let vals = g.input(Tensor::new(vec![n, 1], values.to_vec())?);
        let val = g.matmul(vals, bound.id("front.value_w"))?;
        let val = g.add_row(val, bound.id("front.value_b"))?;
        let tok = g.add(emb, val)?;
        let enc = g.input(Tensor::new(vec![n, d], time_encoding(times, d))?);
        Ok(g.add(tok, enc)?)
    }

    /// Returns `(per-token step embedding, per-sample raw step vector)`.
    fn step_tokens(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        steps: &[usize],
        target_len: usize,
    ) -> Result<(TensorId, TensorId), CoreError> {
        for &t in steps {
            if t < 1 || t > self.config.n_steps {
                return Err(CoreError::StepOutOfRange {
                    t,
                    t_max: self.config.n_steps,
                });
            }
        }
        let ids: Vec<usize> = steps.iter().map(|&t| t - 1).collect();
        let se = g.embedding(bound.id("front.step_table"), Arc::new(ids))?;
        let h = g.matmul(se, bound.id("front.step_fc1.w"))?;
        let h = g.add_row(h, bound.id("front.step_fc1.b"))?;
        let h = g.gelu(h)?;
        let h = g.matmul(h, bound.id("front.step_fc2.w"))?;
        let h = g.add_row(h, bound.id("front.step_fc2.b"))?;
        Ok((g.repeat_rows(h, target_len)?, se))
    }

    /// Expand a per-(sample, key) mask to per-(sample, head, key).
    fn head_mask(mask: &[bool], batch: usize, len: usize, heads: usize) -> Arc<Vec<bool>> {
        let mut out = Vec::with_capacity(batch * heads * len);
        for bi in 0..batch {
            let row = &mask[bi * len..(bi + 1) * len];
            for _ in 0..heads {
                out.extend_from_slice(row);
            }
        }
        Arc::new(out)
    }

    #[allow(clippy::too_many_arguments)]
    fn multi_head(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        prefix: &str,
        queries: TensorId,
        kv_heads: Option<(TensorId, TensorId)>,
        kv_source: TensorId,
        batch: usize,
        q_len: usize,
        kv_len: usize,
        key_mask: &Arc<Vec<bool>>,
    ) -> Result<TensorId, CoreError> {
        let (h, dk) = (self.config.n_heads, self.config.d_k());
        let q = g.matmul(queries, bound.id(&format!("{prefix}.wq")))?;
        let q = g.add_row(q, bound.id(&format!("{prefix}.bq")))?;
        let qh = g.split_heads(q, batch, q_len, h, dk)?;
        let (kh, vh) = match kv_heads {
            Some(pair) => pair,
            None => {
                let k = g.matmul(kv_source, bound.id(&format!("{prefix}.wk")))?;
                let k = g.add_row(k, bound.id(&format!("{prefix}.bk")))?;
                let v = g.matmul(kv_source, bound.id(&format!("{prefix}.wv")))?;
                let v = g.add_row(v, bound.id(&format!("{prefix}.bv")))?;
                (
                    g.split_heads(k, batch, kv_len, h, dk)?,
                    g.split_heads(v, batch, kv_len, h, dk)?,
                )
            }
        };
        let ctx = g.attention(qh, kh, vh, key_mask.clone())?;
        let merged = g.merge_heads(ctx, batch, q_len, h, dk)?;
        let o = g.matmul(merged, bound.id(&format!("{prefix}.wo")))?;
        Ok(g.add_row(o, bound.id(&format!("{prefix}.bo")))?)
    }

    fn norm(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        x: TensorId,
        ln: &str,
    ) -> Result<TensorId, CoreError> {
        Ok(g.layer_norm(
            x,
            bound.id(&format!("{ln}.g")),
            bound.id(&format!("{ln}.b")),
            self.config.ln_eps,
        )?)
    }

    fn feed_forward(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        base: &str,
        x: TensorId,
    ) -> Result<TensorId, CoreError> {
        let h = g.matmul(x, bound.id(&format!("{base}.ff.w1")))?;
        let h = g.add_row(h, bound.id(&format!("{base}.ff.b1")))?;
        let h = g.gelu(h)?;
        let h = g.matmul(h, bound.id(&format!("{base}.ff.w2")))?;
        Ok(g.add_row(h, bound.id(&format!("{base}.ff.b2")))?)
    }

    /// Pre-norm residual layer: `x + attn(norm(x))`, `x + ff(norm(x))`.
    fn encoder_layer(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        base: &str,
        x: TensorId,
        batch: usize,
        len: usize,
        key_mask: &Arc<Vec<bool>>,
    ) -> Result<TensorId, CoreError> {
        let normed = self.norm(g, bound, x, &format!("{base}.ln1"))?;
        let attn = self.multi_head(
            g,
            bound,
            &format!("{base}.self"),
            normed,
            None,
            normed,
            batch,
            len,
            len,
            key_mask,
        )?;
        let x = g.add(x, attn)?;
        let normed = self.norm(g, bound, x, &format!("{base}.ln2"))?;
        let ff = self.feed_forward(g, bound, base, normed)?;
        Ok(g.add(x, ff)?)
    }

    #[allow(clippy::too_many_arguments)]
    fn decoder_layer(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        base: &str,
        x: TensorId,
        enc_kv: KvSource,
        batch: usize,
        target_len: usize,
        cond_len: usize,
        target_mask: &Arc<Vec<bool>>,
        cond_mask: &Arc<Vec<bool>>,
    ) -> Result<TensorId, CoreError> {
        let normed = self.norm(g, bound, x, &format!("{base}.ln1"))?;
        let attn = self.multi_head(
            g,
            bound,
            &format!("{base}.self"),
            normed,
            None,
            normed,
            batch,
            target_len,
            target_len,
            target_mask,
        )?;
        let x = g.add(x, attn)?;

        let kv_heads = match enc_kv {
            KvSource::Stream(_) => None,
            KvSource::Precomputed(k, v) => Some((k, v)),
        };
        let kv_source = match enc_kv {
            KvSource::Stream(id) => id,
            KvSource::Precomputed(k, _) => k, // unused when kv_heads is Some
        };
        let normed = self.norm(g, bound, x, &format!("{base}.ln2"))?;
        let cross = self.multi_head(
            g,
            bound,
            &format!("{base}.cross"),
            normed,
            kv_heads,
            kv_source,
            batch,
            target_len,
            cond_len,
            cond_mask,
        )?;
        let x = g.add(x, cross)?;

        let normed = self.norm(g, bound, x, &format!("{base}.ln3"))?;
        let ff = self.feed_forward(g, bound, base, normed)?;
        Ok(g.add(x, ff)?)
    }

    /// Conv decoder plus the noise readout. The conv path merges the
    /// skip streams into a clean-value estimate per target token; the
    /// head emits `gain_t * gate_t * (x_t - sqrt(alpha_t) * x0_hat)`,
    /// where the gate is a learned per-step scalar that starts closed so
    /// an untrained model predicts zero noise.
    #[allow(clippy::too_many_arguments)]
    fn conv_stage(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        block_outs: &[TensorId],
        step_vec: TensorId,
        noisy_values: &[T],
        batch: usize,
        target_len: usize,
        target_mask: &[bool],
        scales: &[StepScale<T>],
    ) -> Result<TensorId, CoreError> {
        let d = self.config.d_model;
        let streams: [TensorId; N_BLOCKS] = match self.config.topology {
            Topology::C => [block_outs[0], block_outs[1], block_outs[2]],
            Topology::B => [block_outs[1], block_outs[2], block_outs[2]],
            Topology::A => [block_outs[2], block_outs[2], block_outs[2]],
        };
        let mut channelized = Vec::with_capacity(N_BLOCKS);
        for s in streams {
            let r = g.reshape(s, vec![batch, target_len, d])?;
            channelized.push(g.transpose_last2(r)?);
        }
        let stacked = g.concat(&channelized, 1)?;
        let c1 = g.conv1d(stacked, bound.id("conv.w1"), bound.id("conv.b1"), Padding::Same)?;
        let c1 = g.gelu(c1)?;
        let c2 = g.conv1d(c1, bound.id("conv.w2"), bound.id("conv.b2"), Padding::Same)?;
        let x0_hat = g.reshape(c2, vec![batch * target_len])?;

        // learned per-step gate, zero at initialization
        let gate = g.matmul(step_vec, bound.id("head.gate.w"))?;
        let gate = g.add_row(gate, bound.id("head.gate.b"))?;
        let gate = g.repeat_rows(gate, target_len)?;
        let gate = g.reshape(gate, vec![batch * target_len])?;

        let n = batch * target_len;
        let mut gain_vals = Vec::with_capacity(n);
        let mut ra_vals = Vec::with_capacity(n);
        for scale in scales {
            for _ in 0..target_len {
                gain_vals.push(scale.gain);
                ra_vals.push(scale.sqrt_alpha);
            }
        }
        let gain_t = g.input(Tensor::new(vec![n], gain_vals)?);
        let ra_t = g.input(Tensor::new(vec![n], ra_vals)?);
        let xt = g.input(Tensor::new(vec![n], noisy_values.to_vec())?);

        let scaled_x0 = g.mul(x0_hat, ra_t)?;
        let residual = g.sub(xt, scaled_x0)?;
        let amplified = g.mul(residual, gain_t)?;
        let gated = g.mul(amplified, gate)?;

        // zero padding slots so mask=0 triplets can never reach the output
        let mask_vals: Vec<T> = target_mask
            .iter()
            .map(|&m| if m { T::one() } else { T::zero() })
            .collect();
        let mask_t = g.input(Tensor::new(vec![n], mask_vals)?);
        Ok(g.mul(gated, mask_t)?)
    }

    /// Full forward over an already-bound graph: noise prediction per
    /// target slot, shape `[batch * target_len]`, zero at padding slots.
    pub fn forward_bound(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        batch: &PackedBatch<T>,
        noisy_values: &[T],
        steps: &[usize],
        scales: &[StepScale<T>],
    ) -> Result<TensorId, CoreError> {
        if noisy_values.len() != batch.batch * batch.target_len {
            return Err(CoreError::Config(format!(
                "noisy values length {} != batch {} x target_len {}",
                noisy_values.len(),
                batch.batch,
                batch.target_len
            )));
        }
        if steps.len() != batch.batch || scales.len() != batch.batch {
            return Err(CoreError::Config(format!(
                "got {} diffusion steps and {} scales for batch of {}",
                steps.len(),
                scales.len(),
                batch.batch
            )));
        }
        let (b, lc, lt) = (batch.batch, batch.cond_len, batch.target_len);
        let h = self.config.n_heads;

        let cond_tok =
            self.token_stage(g, bound, &batch.cond_ids, &batch.cond_times, &batch.cond_values)?;
        let tgt_tok =
            self.token_stage(g, bound, &batch.target_ids, &batch.target_times, noisy_values)?;
        let (step_tok, step_vec) = self.step_tokens(g, bound, steps, lt)?;
        let tgt_tok = g.add(tgt_tok, step_tok)?;

        let cond_mask = Self::head_mask(&batch.cond_mask, b, lc, h);
        let tgt_mask = Self::head_mask(&batch.target_mask, b, lt, h);

        let mut enc = cond_tok;
        let mut dec = tgt_tok;
        let mut block_outs = Vec::with_capacity(N_BLOCKS);
        for blk in 1..=N_BLOCKS {
            for pair in 1..=PAIRS_PER_BLOCK {
                enc = self.encoder_layer(
                    g,
                    bound,
                    &format!("block{blk}.pair{pair}.enc"),
                    enc,
                    b,
                    lc,
                    &cond_mask,
                )?;
            }
            let top = enc;
            for pair in 1..=PAIRS_PER_BLOCK {
                dec = self.decoder_layer(
                    g,
                    bound,
                    &format!("block{blk}.pair{pair}.dec"),
                    dec,
                    KvSource::Stream(top),
                    b,
                    lt,
                    lc,
                    &tgt_mask,
                    &cond_mask,
                )?;
            }
            block_outs.push(dec);
        }

        self.conv_stage(
            g,
            bound,
            &block_outs,
            step_vec,
            noisy_values,
            b,
            lt,
            &batch.target_mask,
            scales,
        )
    }

    /// Bind parameters and run the forward pass in one call.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        batch: &PackedBatch<T>,
        noisy_values: &[T],
        steps: &[usize],
        scales: &[StepScale<T>],
    ) -> Result<(TensorId, Bound), CoreError> {
        let bound = self.bind(g);
        let out = self.forward_bound(g, &bound, batch, noisy_values, steps, scales)?;
        Ok((out, bound))
    }

    // ── Inference path with a cached conditional encoding ───────────

    /// Run the encoder side once for a single sample's conditional
    /// tokens and pre-project the cross-attention keys/values of every
    /// decoder layer. Neither depends on the diffusion state, so the
    /// cache is reused across all reverse steps and sample paths.
    pub fn encode_conditional(&self, batch: &PackedBatch<T>) -> Result<EncoderCache<T>, CoreError> {
        if batch.batch != 1 {
            return Err(CoreError::Config(
                "conditional caching expects a single sample".into(),
            ));
        }
        let (lc, h, dk) = (batch.cond_len, self.config.n_heads, self.config.d_k());
        let mut g = Graph::<T>::new();
        let bound = self.bind(&mut g);
        let cond_tok =
            self.token_stage(&mut g, &bound, &batch.cond_ids, &batch.cond_times, &batch.cond_values)?;
        let cond_mask = Self::head_mask(&batch.cond_mask, 1, lc, h);

        let mut enc = cond_tok;
        let mut kv = Vec::with_capacity(N_BLOCKS * PAIRS_PER_BLOCK);
        for blk in 1..=N_BLOCKS {
            for pair in 1..=PAIRS_PER_BLOCK {
                enc = self.encoder_layer(
                    &mut g,
                    &bound,
                    &format!("block{blk}.pair{pair}.enc"),
                    enc,
                    1,
                    lc,
                    &cond_mask,
                )?;
            }
            for pair in 1..=PAIRS_PER_BLOCK {
                let base = format!("block{blk}.pair{pair}.dec.cross");
                let k = g.matmul(enc, bound.id(&format!("{base}.wk")))?;
                let k = g.add_row(k, bound.id(&format!("{base}.bk")))?;
                let kh = g.split_heads(k, 1, lc, h, dk)?;
                let v = g.matmul(enc, bound.id(&format!("{base}.wv")))?;
                let v = g.add_row(v, bound.id(&format!("{base}.bv")))?;
                let vh = g.split_heads(v, 1, lc, h, dk)?;
                kv.push((g.value(kh).clone(), g.value(vh).clone()));
            }
        }
        Ok(EncoderCache {
            cond_len: lc,
            cond_mask: batch.cond_mask.clone(),
            cross_kv: kv,
        })
    }

    /// Noise prediction for `s_paths` parallel paths sharing one cached
    /// conditional. `noisy_values` is `[s_paths * target_len]`; every
    /// path uses the same diffusion step `t`.
    pub fn predict_with_cache(
        &self,
        cache: &EncoderCache<T>,
        batch: &PackedBatch<T>,
        noisy_values: &[T],
        t: usize,
        scale: StepScale<T>,
        s_paths: usize,
    ) -> Result<Vec<T>, CoreError> {
        let (lt, lc, h, dk) = (
            batch.target_len,
            cache.cond_len,
            self.config.n_heads,
            self.config.d_k(),
        );
        if noisy_values.len() != s_paths * lt {
            return Err(CoreError::Config(format!(
                "noisy values length {} != paths {} x target_len {}",
                noisy_values.len(),
                s_paths,
                lt
            )));
        }
        let mut g = Graph::<T>::new();
        let bound = self.bind(&mut g);

        // target token arrays tiled across paths
        let mut ids = Vec::with_capacity(s_paths * lt);
        let mut times = Vec::with_capacity(s_paths * lt);
        let mut mask = Vec::with_capacity(s_paths * lt);
        for _ in 0..s_paths {
            ids.extend_from_slice(&batch.target_ids);
            times.extend_from_slice(&batch.target_times);
            mask.extend_from_slice(&batch.target_mask);
        }
        let tgt_tok = self.token_stage(&mut g, &bound, &ids, &times, noisy_values)?;
        let steps = vec![t; s_paths];
        let (step_tok, step_vec) = self.step_tokens(&mut g, &bound, &steps, lt)?;
        let mut dec = g.add(tgt_tok, step_tok)?;

        let tgt_mask = Self::head_mask(&mask, s_paths, lt, h);
        let cond_mask = Self::head_mask(&tile_bools(&cache.cond_mask, s_paths), s_paths, lc, h);

        let mut block_outs = Vec::with_capacity(N_BLOCKS);
        let mut kv_iter = cache.cross_kv.iter();
        for blk in 1..=N_BLOCKS {
            let mut layer_kv = Vec::with_capacity(PAIRS_PER_BLOCK);
            for _ in 0..PAIRS_PER_BLOCK {
                let (k, v) = kv_iter.next().expect("cache layer count");
                let kt = g.input(tile_tensor(k, s_paths, &[s_paths * h, lc, dk]));
                let vt = g.input(tile_tensor(v, s_paths, &[s_paths * h, lc, dk]));
                layer_kv.push((kt, vt));
            }
            for pair in 1..=PAIRS_PER_BLOCK {
                let (kt, vt) = layer_kv[pair - 1];
                dec = self.decoder_layer(
                    &mut g,
                    &bound,
                    &format!("block{blk}.pair{pair}.dec"),
                    dec,
                    KvSource::Precomputed(kt, vt),
                    s_paths,
                    lt,
                    lc,
                    &tgt_mask,
                    &cond_mask,
                )?;
            }
            block_outs.push(dec);
        }
        let scales = vec![scale; s_paths];
        let out = self.conv_stage(
            &mut g,
            &bound,
            &block_outs,
            step_vec,
            noisy_values,
            s_paths,
            lt,
            &mask,
            &scales,
        )?;
        Ok(g.value(out).data().to_vec())
    }
}

#[derive(Clone, Copy)]
enum KvSource {
    /// Encoder stream on the same graph (training path).
    Stream(TensorId),
    /// Pre-projected key/value heads injected as inputs (inference path).
    Precomputed(TensorId, TensorId),
}

/// Cached conditional encoding: pre-projected cross-attention key/value
/// heads per decoder layer, `[n_heads, cond_len, d_k]` each.
pub struct EncoderCache<T: Element> {
    pub cond_len: usize,
    pub cond_mask: Vec<bool>,
    cross_kv: Vec<(Tensor<T>, Tensor<T>)>,
}

fn tile_bools(mask: &[bool], times: usize) -> Vec<bool> {
    let mut out = Vec::with_capacity(mask.len() * times);
    for _ in 0..times {
        out.extend_from_slice(mask);
    }
    out
}

fn tile_tensor<T: Element>(t: &Tensor<T>, times: usize, shape: &[usize]) -> Tensor<T> {
    let mut data = Vec::with_capacity(t.numel() * times);
    for _ in 0..times {
        data.extend_from_slice(t.data());
    }
    Tensor::new(shape.to_vec(), data).expect("tile shape consistent")
}
