//! Compact bidirectional transformer encoder over log-Mel frames.
//!
//! Pre-norm residual blocks, multi-head scaled dot-product attention with no
//! masking, GELU feed-forward, and a fixed sinusoidal positional table. The
//! query/key/value projections are routed through a caller-supplied callback
//! so adapters can replace them without the encoder knowing; everything else
//! always uses the stored weights.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndgrad::{NodeId, Tape, Tensor};

/// Variance floor inside layer normalization.
pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub n_mels: usize,
    /// Longest frame sequence the positional table covers.
    pub max_frames: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            n_layers: 2,
            n_heads: 4,
            d_model: 64,
            d_ff: 256,
            n_mels: 80,
            max_frames: 512,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 {
            return Err(Error::Config("n_layers must be at least 1".into()));
        }
        if self.n_heads == 0 {
            return Err(Error::Config("n_heads must be at least 1".into()));
        }
        if self.d_model == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_ff == 0 || self.n_mels == 0 || self.max_frames == 0 {
            return Err(Error::Config(
                "d_ff, n_mels, and max_frames must all be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Dense weights of one transformer block.
#[derive(Clone, Debug)]
pub struct LayerWeights {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub ln1_gamma: Tensor,
    pub ln1_beta: Tensor,
    pub ln2_gamma: Tensor,
    pub ln2_beta: Tensor,
}

/// Full encoder parameter set plus the fixed positional table.
#[derive(Clone, Debug)]
pub struct EncoderWeights {
    pub cfg: EncoderConfig,
    /// n_mels x d_model, no bias.
    pub input_proj: Tensor,
    pub layers: Vec<LayerWeights>,
    /// max_frames x d_model sinusoidal table; deterministic, never trained.
    pub pos: Tensor,
}

/// Which attention projection a forward pass is asking for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Proj {
    Q,
    K,
    V,
}

/// Per-group exact parameter counts. The positional table is excluded
/// because it is not a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ParameterCounts {
    pub input_projection: usize,
    pub attention: usize,
    pub ffn: usize,
    pub norms: usize,
}

impl ParameterCounts {
    pub fn total(&self) -> usize {
        self.input_projection + self.attention + self.ffn + self.norms
    }
}

/// Xavier-uniform draw for a rows x cols matrix: U(-b, b) with
/// b = sqrt(6 / (fan_in + fan_out)).
fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::new(&[rows, cols], data).expect("xavier draw is finite by construction")
}

pub(crate) fn sinusoidal_table(max_frames: usize, d_model: usize) -> Tensor {
    Tensor::from_fn(&[max_frames, d_model], |idx| {
        let (t, j) = (idx / d_model, idx % d_model);
        let pair = 2 * (j / 2);
        let angle = t as f64 / 10000f64.powf(pair as f64 / d_model as f64);
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Draws a fresh weight set from the config's seed. The draw order is fixed
/// (input projection, then per layer Wq, Wk, Wv, Wo, W1, W2) so identical
/// configs produce bit-identical weights.
pub fn init_weights(cfg: &EncoderConfig) -> Result<EncoderWeights> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.d_model;
    let input_proj = xavier(&mut rng, cfg.n_mels, d);
    let layers = (0..cfg.n_layers)
        .map(|_| LayerWeights {
            wq: xavier(&mut rng, d, d),
            wk: xavier(&mut rng, d, d),
            wv: xavier(&mut rng, d, d),
            wo: xavier(&mut rng, d, d),
            w1: xavier(&mut rng, d, cfg.d_ff),
            b1: Tensor::zeros(&[cfg.d_ff]),
            w2: xavier(&mut rng, cfg.d_ff, d),
            b2: Tensor::zeros(&[d]),
            ln1_gamma: Tensor::filled(&[d], 1.0),
            ln1_beta: Tensor::zeros(&[d]),
            ln2_gamma: Tensor::filled(&[d], 1.0),
            ln2_beta: Tensor::zeros(&[d]),
        })
        .collect();
    Ok(EncoderWeights {
        input_proj,
        layers,
        pos: sinusoidal_table(cfg.max_frames, d),
        cfg: cfg.clone(),
    })
}

impl EncoderWeights {
    /// Projects `input` with the stored (frozen) weight for one attention
    /// projection. This is the callback used when no adapters are attached.
    pub fn project(
        &self,
        tape: &mut Tape,
        layer: usize,
        proj: Proj,
        input: NodeId,
    ) -> Result<NodeId> {
        let w = match proj {
            Proj::Q => &self.layers[layer].wq,
            Proj::K => &self.layers[layer].wk,
            Proj::V => &self.layers[layer].wv,
        };
        let wn = tape.constant(w.clone());
        tape.matmul(input, wn)
    }

    /// Builds the full forward computation on `tape` and returns the hidden
    /// state node (T x d_model). `proj` supplies each layer's Q/K/V
    /// projection of the pre-norm input, which is how adapters hook in.
    pub fn forward_nodes(
        &self,
        tape: &mut Tape,
        features: &Tensor,
        mut proj: impl FnMut(&mut Tape, usize, Proj, NodeId) -> Result<NodeId>,
    ) -> Result<NodeId> {
        let cfg = &self.cfg;
        if features.rank() != 2 || features.cols() != cfg.n_mels {
            return Err(Error::Shape(format!(
                "encoder expects T x {} features, got {:?}",
                cfg.n_mels,
                features.shape()
            )));
        }
        let t = features.rows();
        if t > cfg.max_frames {
            return Err(Error::Length(format!(
                "{t} frames exceed the positional table ({} frames)",
                cfg.max_frames
            )));
        }
        let d = cfg.d_model;
        let dh = cfg.head_dim();

        let x = tape.constant(features.clone());
        let win = tape.constant(self.input_proj.clone());
        let mut h = tape.matmul(x, win)?;
        let pos = Tensor::new(&[t, d], self.pos.data()[..t * d].to_vec())?;
        let pos = tape.constant(pos);
        h = tape.add(h, pos)?;

        for (l, lw) in self.layers.iter().enumerate() {
            // Attention block with residual.
            let g1 = tape.constant(lw.ln1_gamma.clone());
            let b1 = tape.constant(lw.ln1_beta.clone());
            let u = tape.layer_norm(h, g1, b1, LN_EPS)?;
            let q = proj(tape, l, Proj::Q, u)?;
            let k = proj(tape, l, Proj::K, u)?;
            let v = proj(tape, l, Proj::V, u)?;
            let mut heads = Vec::with_capacity(cfg.n_heads);
            for head in 0..cfg.n_heads {
                let qh = tape.slice_cols(q, head * dh, dh)?;
                let kh = tape.slice_cols(k, head * dh, dh)?;
                let vh = tape.slice_cols(v, head * dh, dh)?;
                let scores = tape.matmul_nt(qh, kh)?;
                let scaled = tape.scale(scores, 1.0 / (dh as f64).sqrt());
                let weights = tape.softmax_rows(scaled)?;
                heads.push(tape.matmul(weights, vh)?);
            }
            let cat = tape.concat_cols(&heads)?;
            let wo = tape.constant(lw.wo.clone());
            let attn = tape.matmul(cat, wo)?;
            h = tape.add(h, attn)?;

            // Feed-forward block with residual.
            let g2 = tape.constant(lw.ln2_gamma.clone());
            let b2 = tape.constant(lw.ln2_beta.clone());
            let u = tape.layer_norm(h, g2, b2, LN_EPS)?;
            let w1 = tape.constant(lw.w1.clone());
            let fb1 = tape.constant(lw.b1.clone());
            let mut f = tape.matmul(u, w1)?;
            f = tape.add_row(f, fb1)?;
            f = tape.gelu(f);
            let w2 = tape.constant(lw.w2.clone());
            let fb2 = tape.constant(lw.b2.clone());
            let mut f2 = tape.matmul(f, w2)?;
            f2 = tape.add_row(f2, fb2)?;
            h = tape.add(h, f2)?;
        }
        Ok(h)
    }

    pub fn count_parameters(&self) -> ParameterCounts {
        let cfg = &self.cfg;
        let d = cfg.d_model;
        ParameterCounts {
            input_projection: cfg.n_mels * d,
            attention: cfg.n_layers * 4 * d * d,
            ffn: cfg.n_layers * (d * cfg.d_ff + cfg.d_ff + cfg.d_ff * d + d),
            norms: cfg.n_layers * 2 * 2 * d,
        }
    }
}

/// Plain (no-adapter) forward pass; T x n_mels in, T x d_model out.
pub fn encoder_forward(weights: &EncoderWeights, features: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let out = weights.forward_nodes(&mut tape, features, |t, l, p, x| {
        weights.project(t, l, p, x)
    })?;
    Ok(tape.value(out).clone())
}

/// softmax_rows(Q Kᵀ / sqrt(dₕ)) · V for plain rank-2 tensors, no masking.
pub fn scaled_dot_product_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    if q.rank() != 2 || k.rank() != 2 || v.rank() != 2 {
        return Err(Error::Shape("attention expects rank-2 Q, K, V".into()));
    }
    if q.cols() != k.cols() || k.rows() != v.rows() {
        return Err(Error::Shape(format!(
            "attention shapes Q {:?}, K {:?}, V {:?} do not agree",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    let mut tape = Tape::new();
    let qn = tape.constant(q.clone());
    let kn = tape.constant(k.clone());
    let vn = tape.constant(v.clone());
    let scores = tape.matmul_nt(qn, kn)?;
    let scaled = tape.scale(scores, 1.0 / (q.cols() as f64).sqrt());
    let weights = tape.softmax_rows(scaled)?;
    let out = tape.matmul(weights, vn)?;
    Ok(tape.value(out).clone())
}
