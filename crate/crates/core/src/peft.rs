//! Low-rank adapters (LoRA and DoRA) on the attention Q/K/V projections.
//!
//! The base encoder stays frozen; the only trainable encoder tensors are the
//! per-projection factors A and B (and, for DoRA, the magnitude vector m).
//! Effective weights are rebuilt on the tape every forward pass, and the
//! merge path reuses the exact same compositions, so a merged model
//! reproduces the adapted forward bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderWeights, Proj};
use crate::error::{Error, Result};
use crate::ndgrad::{NodeId, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterVariant {
    Lora,
    Dora,
}

impl std::fmt::Display for AdapterVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AdapterVariant::Lora => "lora",
            AdapterVariant::Dora => "dora",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterConfig {
    pub variant: AdapterVariant,
    pub rank: usize,
    /// Multiplier on the low-rank delta in the LoRA composition. The DoRA
    /// path normalizes columns, so it takes no scale.
    pub scale: f64,
    /// Standard deviation of the Gaussian init of A. Must be positive: with
    /// A = 0 as well as B = 0, both factors would have zero gradient and
    /// training could never leave the base model.
    pub init_stddev: f64,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            variant: AdapterVariant::Lora,
            rank: 8,
            scale: 1.0,
            init_stddev: 0.01,
        }
    }
}

impl AdapterConfig {
    /// Checks the config against the d x k shape of every targeted matrix.
    pub fn validate(&self, d: usize, k: usize) -> Result<()> {
        if self.rank == 0 || self.rank > d.min(k) {
            return Err(Error::Config(format!(
                "adapter rank {} outside 1..={} for a {d}x{k} target",
                self.rank,
                d.min(k)
            )));
        }
        if !(self.scale > 0.0) {
            return Err(Error::Config(format!("adapter scale {} must be > 0", self.scale)));
        }
        if !(self.init_stddev > 0.0) {
            return Err(Error::Config(format!(
                "adapter init_stddev {} must be > 0",
                self.init_stddev
            )));
        }
        Ok(())
    }
}

/// Trainable factors for one targeted projection matrix.
#[derive(Clone, Debug)]
pub struct Adapter {
    /// r x k, Gaussian-initialized.
    pub a: Tensor,
    /// d x r, zero-initialized so training starts exactly at the base weight.
    pub b: Tensor,
    /// Per-column magnitudes, length k; `Some` only for DoRA.
    pub m: Option<Tensor>,
}

/// Adapters for the three attention projections of one layer.
#[derive(Clone, Debug)]
pub struct LayerAdapters {
    pub q: Adapter,
    pub k: Adapter,
    pub v: Adapter,
}

impl LayerAdapters {
    fn get(&self, proj: Proj) -> &Adapter {
        match proj {
            Proj::Q => &self.q,
            Proj::K => &self.k,
            Proj::V => &self.v,
        }
    }
}

/// Frozen encoder plus trainable adapters.
#[derive(Clone, Debug)]
pub struct AdaptedModel {
    pub base: EncoderWeights,
    pub adapter_cfg: AdapterConfig,
    pub layers: Vec<LayerAdapters>,
}

const TARGETS: [Proj; 3] = [Proj::Q, Proj::K, Proj::V];

fn target_name(proj: Proj) -> &'static str {
    match proj {
        Proj::Q => "q",
        Proj::K => "k",
        Proj::V => "v",
    }
}

/// Column norms computed through the same kernel the DoRA composition uses,
/// so the initialization identity holds bitwise.
fn weight_column_norms(w: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let node = tape.constant(w.clone());
    let norms = tape.col_norms(node)?;
    Ok(tape.value(norms).clone())
}

/// Wraps a frozen encoder with fresh adapters on every layer's Wq/Wk/Wv.
/// Draw order is fixed (per layer: q, k, v) so the result is deterministic
/// per seed.
pub fn attach_adapters(
    base: EncoderWeights,
    cfg: &AdapterConfig,
    seed: u64,
) -> Result<AdaptedModel> {
    let d = base.cfg.d_model;
    cfg.validate(d, d)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = Normal::new(0.0, cfg.init_stddev)
        .map_err(|e| Error::Config(format!("adapter init distribution: {e}")))?;
    let mut layers = Vec::with_capacity(base.cfg.n_layers);
    for lw in &base.layers {
        let mut make = |w0: &Tensor| -> Result<Adapter> {
            let a = Tensor::from_fn(&[cfg.rank, d], |_| gauss.sample(&mut rng));
            let b = Tensor::zeros(&[d, cfg.rank]);
            let m = match cfg.variant {
                AdapterVariant::Lora => None,
                AdapterVariant::Dora => {
                    let norms = weight_column_norms(w0)?;
                    if norms.data().iter().any(|&n| n <= 1e-12) {
                        return Err(Error::Degenerate(
                            "base weight has a zero-norm column; DoRA magnitudes undefined".into(),
                        ));
                    }
                    Some(norms)
                }
            };
            Ok(Adapter { a, b, m })
        };
        layers.push(LayerAdapters {
            q: make(&lw.wq)?,
            k: make(&lw.wk)?,
            v: make(&lw.wv)?,
        });
    }
    Ok(AdaptedModel { base, adapter_cfg: *cfg, layers })
}

/// Tape composition `W0 + s * (B . A)`.
fn lora_nodes(tape: &mut Tape, w0: NodeId, a: NodeId, b: NodeId, s: f64) -> Result<NodeId> {
    let delta = tape.matmul(b, a)?;
    let scaled = tape.scale(delta, s);
    tape.add(w0, scaled)
}

/// Tape composition `column_j(W) = m_j * column_j(V) / ||column_j(V)||`
/// with `V = W0 + B . A`. Refuses degenerate columns instead of patching
/// them with an epsilon.
fn dora_nodes(tape: &mut Tape, w0: NodeId, a: NodeId, b: NodeId, m: NodeId) -> Result<NodeId> {
    let delta = tape.matmul(b, a)?;
    let v = tape.add(w0, delta)?;
    let norms = tape.col_norms(v)?;
    if let Some(min) = tape
        .value(norms)
        .data()
        .iter()
        .cloned()
        .reduce(f64::min)
    {
        if min <= 1e-12 {
            return Err(Error::Degenerate(format!(
                "DoRA direction column with norm {min:.3e} (<= 1e-12)"
            )));
        }
    }
    let ratio = tape.elem_div(m, norms)?;
    tape.scale_cols(v, ratio)
}

/// `W0 + s * (B . A)` as a plain tensor; differentiability lives on the tape
/// path, this is the merge/inspection form.
pub fn lora_effective_weight(w0: &Tensor, a: &Tensor, b: &Tensor, s: f64) -> Result<Tensor> {
    let mut tape = Tape::new();
    let w0n = tape.constant(w0.clone());
    let an = tape.constant(a.clone());
    let bn = tape.constant(b.clone());
    let out = lora_nodes(&mut tape, w0n, an, bn, s)?;
    Ok(tape.value(out).clone())
}

/// Magnitude-times-unit-direction weight as a plain tensor. Errors on any
/// direction column with norm at or below 1e-12.
pub fn dora_effective_weight(w0: &Tensor, a: &Tensor, b: &Tensor, m: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let w0n = tape.constant(w0.clone());
    let an = tape.constant(a.clone());
    let bn = tape.constant(b.clone());
    let mn = tape.constant(m.clone());
    let out = dora_nodes(&mut tape, w0n, an, bn, mn)?;
    Ok(tape.value(out).clone())
}

impl AdaptedModel {
    /// Builds the adapted forward pass on `tape`. Returns the hidden-state
    /// node and the adapter parameter nodes in canonical order (layer by
    /// layer; q, k, v; within each: a, b, then m for DoRA), matching
    /// [`AdaptedModel::trainable_params`].
    pub fn forward_nodes(
        &self,
        tape: &mut Tape,
        features: &Tensor,
    ) -> Result<(NodeId, Vec<NodeId>)> {
        let mut param_ids = Vec::new();
        // L x 3 effective-weight nodes, composed before the encoder body so
        // the projection callback stays a plain matmul.
        let mut effective: Vec<Vec<NodeId>> = Vec::with_capacity(self.layers.len());
        for (lw, ad) in self.base.layers.iter().zip(&self.layers) {
            let mut row = Vec::with_capacity(TARGETS.len());
            for proj in TARGETS {
                let w0 = match proj {
                    Proj::Q => &lw.wq,
                    Proj::K => &lw.wk,
                    Proj::V => &lw.wv,
                };
                let adapter = ad.get(proj);
                let w0n = tape.constant(w0.clone());
                let an = tape.param(adapter.a.clone());
                let bn = tape.param(adapter.b.clone());
                param_ids.push(an);
                param_ids.push(bn);
                let eff = match self.adapter_cfg.variant {
                    AdapterVariant::Lora => {
                        lora_nodes(tape, w0n, an, bn, self.adapter_cfg.scale)?
                    }
                    AdapterVariant::Dora => {
                        let m = adapter.m.as_ref().expect("DoRA adapter carries m");
                        let mn = tape.param(m.clone());
                        param_ids.push(mn);
                        dora_nodes(tape, w0n, an, bn, mn)?
                    }
                };
                row.push(eff);
            }
            effective.push(row);
        }
        let hidden = self.base.forward_nodes(tape, features, |tape, layer, proj, input| {
            let eff = effective[layer][proj as usize];
            tape.matmul(input, eff)
        })?;
        Ok((hidden, param_ids))
    }

    /// Adapted forward pass as plain tensors.
    pub fn forward(&self, features: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let (hidden, _) = self.forward_nodes(&mut tape, features)?;
        Ok(tape.value(hidden).clone())
    }

    /// Folds the adapters into a plain weight set. Uses the same effective-
    /// weight compositions as the forward pass, so the merged model's
    /// outputs match the adapted model's exactly.
    pub fn merge(&self) -> Result<EncoderWeights> {
        let mut merged = self.base.clone();
        for (lw, ad) in merged.layers.iter_mut().zip(&self.layers) {
            for proj in TARGETS {
                let w0 = match proj {
                    Proj::Q => &mut lw.wq,
                    Proj::K => &mut lw.wk,
                    Proj::V => &mut lw.wv,
                };
                let adapter = ad.get(proj);
                *w0 = match self.adapter_cfg.variant {
                    AdapterVariant::Lora => lora_effective_weight(
                        w0,
                        &adapter.a,
                        &adapter.b,
                        self.adapter_cfg.scale,
                    )?,
                    AdapterVariant::Dora => dora_effective_weight(
                        w0,
                        &adapter.a,
                        &adapter.b,
                        adapter.m.as_ref().expect("DoRA adapter carries m"),
                    )?,
                };
            }
        }
        Ok(merged)
    }

    /// Trainable tensors in canonical order; see [`AdaptedModel::forward_nodes`].
    pub fn trainable_params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for ad in &self.layers {
            for proj in TARGETS {
                let adapter = ad.get(proj);
                out.push(&adapter.a);
                out.push(&adapter.b);
                if let Some(m) = &adapter.m {
                    out.push(m);
                }
            }
        }
        out
    }

    pub fn trainable_params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for ad in &mut self.layers {
            for adapter in [&mut ad.q, &mut ad.k, &mut ad.v] {
                out.push(&mut adapter.a);
                out.push(&mut adapter.b);
                if let Some(m) = &mut adapter.m {
                    out.push(m);
                }
            }
        }
        out
    }

    /// Stable names aligned with the canonical parameter order.
    pub fn trainable_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (l, ad) in self.layers.iter().enumerate() {
            for proj in TARGETS {
                let t = target_name(proj);
                out.push(format!("layers.{l}.{t}.a"));
                out.push(format!("layers.{l}.{t}.b"));
                if ad.get(proj).m.is_some() {
                    out.push(format!("layers.{l}.{t}.m"));
                }
            }
        }
        out
    }

    pub fn n_trainable(&self) -> usize {
        self.trainable_params().iter().map(|t| t.len()).sum()
    }
}

/// Parameter-budget summary for an adapted model plus its classifier head.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TrainableReport {
    pub adapter: usize,
    pub head: usize,
    pub trainable: usize,
    pub total: usize,
    pub ratio: f64,
}

pub fn trainable_parameter_report(model: &AdaptedModel, n_classes: usize) -> TrainableReport {
    let adapter = model.n_trainable();
    let head = model.base.cfg.d_model * n_classes + n_classes;
    let trainable = adapter + head;
    let total = model.base.count_parameters().total() + trainable;
    TrainableReport {
        adapter,
        head,
        trainable,
        total,
        ratio: trainable as f64 / total as f64,
    }
}
