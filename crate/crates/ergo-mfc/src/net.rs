//! Neural scalar fields on the torus.
//!
//! A network evaluates to a jet (value, input gradient, input Laplacian)
//! in a single analytic forward sweep, layer by layer. The matching
//! reverse sweep turns adjoints of any of the three jet components into
//! parameter gradients, which is what the training tape consumes.
//!
//! Two exactly periodic modes are supported: a single hidden layer of
//! 2π-periodic sine units on raw coordinates, and an arbitrary-depth tanh
//! network fed through a (cos 2πx_i, sin 2πx_i) embedding.

use std::f64::consts::TAU;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{Field, FieldJet};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("checkpoint payload does not match its header")]
    CorruptCheckpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Sin,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Embedding {
    Raw,
    /// `x ↦ (cos 2πx_1, sin 2πx_1, …)`, making the field 1-periodic exactly.
    Trig,
}

/// Norm bounds of the constrained single-hidden-layer class: an L¹ bound
/// on the output weights and an L² bound on each unit's input row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintBounds {
    pub gamma1: f64,
    pub gamma2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkArch {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub embedding: Embedding,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint: Option<ConstraintBounds>,
}

impl NetworkArch {
    /// The theoretical class: one hidden layer of sine units on raw
    /// coordinates.
    pub fn sin_periodic(d: usize, units: usize) -> Self {
        NetworkArch {
            input_dim: d,
            hidden: vec![units],
            activation: Activation::Sin,
            embedding: Embedding::Raw,
            constraint: None,
        }
    }

    /// The practical class: tanh layers on a trigonometric embedding.
    pub fn tanh_embedded(d: usize, hidden: &[usize]) -> Self {
        NetworkArch {
            input_dim: d,
            hidden: hidden.to_vec(),
            activation: Activation::Tanh,
            embedding: Embedding::Trig,
            constraint: None,
        }
    }

    pub fn with_constraint(mut self, gamma1: f64, gamma2: f64) -> Self {
        self.constraint = Some(ConstraintBounds { gamma1, gamma2 });
        self
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.input_dim == 0 {
            return Err(NetError::InvalidArch("input dimension must be >= 1".into()));
        }
        if self.hidden.is_empty() || self.hidden.iter().any(|&w| w == 0) {
            return Err(NetError::InvalidArch(
                "at least one hidden layer with nonzero width is required".into(),
            ));
        }
        match (self.activation, self.embedding) {
            (Activation::Sin, Embedding::Raw) => {
                if self.hidden.len() != 1 {
                    return Err(NetError::InvalidArch(
                        "sine networks use exactly one hidden layer".into(),
                    ));
                }
            }
            (Activation::Tanh, Embedding::Trig) => {}
            _ => {
                return Err(NetError::InvalidArch(
                    "supported modes are sin on raw coordinates and tanh on the \
                     trigonometric embedding"
                        .into(),
                ));
            }
        }
        if let Some(c) = &self.constraint {
            if c.gamma1 <= 0.0 || c.gamma2 <= 0.0 {
                return Err(NetError::InvalidArch("constraint bounds must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn embedded_dim(&self) -> usize {
        match self.embedding {
            Embedding::Raw => self.input_dim,
            Embedding::Trig => 2 * self.input_dim,
        }
    }

    /// Unit counts per layer: embedded input, hidden layers, scalar output.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.embedded_dim());
        dims.extend_from_slice(&self.hidden);
        dims.push(1);
        dims
    }

    pub fn param_count(&self) -> usize {
        let dims = self.layer_dims();
        dims.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }

    /// Offset of layer `k`'s weight block; biases follow the weights.
    fn layer_offset(&self, k: usize) -> usize {
        let dims = self.layer_dims();
        dims.windows(2).take(k).map(|w| w[1] * (w[0] + 1)).sum()
    }
}

/// Flat trainable parameters of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(arch: &NetworkArch) -> Self {
        ParamVector {
            values: vec![0.0; arch.param_count()],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Deterministic initialization: hidden weights and biases uniform in
/// `[−a, a]` with `a = sqrt(6/(fan_in+fan_out))`; the output layer starts
/// at zero so the initial field is the zero field.
pub fn init_params(arch: &NetworkArch, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = arch.layer_dims();
    let n_layers = dims.len() - 1;
    let mut values = Vec::with_capacity(arch.param_count());
    for k in 0..n_layers {
        let (fan_in, fan_out) = (dims[k], dims[k + 1]);
        let count = fan_out * (fan_in + 1);
        if k + 1 == n_layers {
            values.extend(std::iter::repeat(0.0).take(count));
        } else if k == 0 && arch.activation == Activation::Sin {
            // Sine units need first-layer weights at the frequency scale
            // of the torus; gradient descent is far too slow at growing
            // frequencies from a unit-scale start.
            let a = 3.0 * TAU;
            values.extend((0..count).map(|_| rng.gen_range(-a..a)));
        } else {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            values.extend((0..count).map(|_| rng.gen_range(-a..a)));
        }
    }
    ParamVector { values }
}

/// Rescales the output weights onto the L¹ ball of radius γ₁ and each
/// hidden unit's input row (weights and bias) onto the L² ball of radius
/// γ₂. Radial projections, hence idempotent. No-op without bounds.
pub fn project_constraints(arch: &NetworkArch, params: &mut ParamVector) {
    let Some(bounds) = arch.constraint else {
        return;
    };
    let dims = arch.layer_dims();
    let n_layers = dims.len() - 1;
    let theta = &mut params.values;
    for k in 0..n_layers - 1 {
        let (n_in, n_out) = (dims[k], dims[k + 1]);
        let off = arch.layer_offset(k);
        for i in 0..n_out {
            let row = off + i * n_in;
            let bias = off + n_out * n_in + i;
            let mut sq: f64 = theta[row..row + n_in].iter().map(|w| w * w).sum();
            sq += theta[bias] * theta[bias];
            let norm = sq.sqrt();
            if norm > bounds.gamma2 {
                let scale = bounds.gamma2 / norm;
                for w in &mut theta[row..row + n_in] {
                    *w *= scale;
                }
                theta[bias] *= scale;
            }
        }
    }
    let off = arch.layer_offset(n_layers - 1);
    let n_in = dims[n_layers - 1];
    let l1: f64 = theta[off..off + n_in].iter().map(|w| w.abs()).sum();
    if l1 > bounds.gamma1 {
        let scale = bounds.gamma1 / l1;
        for w in &mut theta[off..off + n_in] {
            *w *= scale;
        }
    }
}

/// ψ, ψ', ψ'', ψ''' at `t`.
#[inline]
fn activation_derivs(act: Activation, t: f64) -> (f64, f64, f64, f64) {
    match act {
        Activation::Sin => {
            let (s, c) = t.sin_cos();
            (s, c, -s, -c)
        }
        Activation::Tanh => {
            let v = t.tanh();
            let d1 = 1.0 - v * v;
            (v, d1, -2.0 * v * d1, -2.0 * d1 * (1.0 - 3.0 * v * v))
        }
    }
}

#[derive(Debug, Clone, Default)]
struct LayerState {
    /// Pre-activations.
    s: Vec<f64>,
    /// Spatial gradient of the pre-activations, `n_out × d` row-major.
    gs: Vec<f64>,
    /// Spatial Laplacian of the pre-activations.
    ls: Vec<f64>,
    /// Post-activation value / gradient / Laplacian.
    a: Vec<f64>,
    g: Vec<f64>,
    l: Vec<f64>,
}

/// Reusable forward/backward storage for one network architecture.
#[derive(Debug, Clone, Default)]
pub struct JetWorkspace {
    // Embedding stage.
    a0: Vec<f64>,
    g0: Vec<f64>,
    l0: Vec<f64>,
    layers: Vec<LayerState>,
    // Adjoint scratch (ping-pong buffers over layer widths).
    abar: Vec<f64>,
    gbar: Vec<f64>,
    lbar: Vec<f64>,
    abar_prev: Vec<f64>,
    gbar_prev: Vec<f64>,
    lbar_prev: Vec<f64>,
    gsbar: Vec<f64>,
}

impl JetWorkspace {
    pub fn new() -> Self {
        Self::default()
    }
}

fn embed(arch: &NetworkArch, x: &[f64], ws: &mut JetWorkspace) {
    let d = arch.input_dim;
    match arch.embedding {
        Embedding::Raw => {
            ws.a0.clear();
            ws.a0.extend_from_slice(x);
            ws.g0.clear();
            ws.g0.resize(d * d, 0.0);
            for i in 0..d {
                ws.g0[i * d + i] = 1.0;
            }
            ws.l0.clear();
            ws.l0.resize(d, 0.0);
        }
        Embedding::Trig => {
            let e = 2 * d;
            ws.a0.clear();
            ws.a0.resize(e, 0.0);
            ws.g0.clear();
            ws.g0.resize(e * d, 0.0);
            ws.l0.clear();
            ws.l0.resize(e, 0.0);
            for i in 0..d {
                let (s, c) = (TAU * x[i]).sin_cos();
                ws.a0[2 * i] = c;
                ws.a0[2 * i + 1] = s;
                ws.g0[2 * i * d + i] = -TAU * s;
                ws.g0[(2 * i + 1) * d + i] = TAU * c;
                ws.l0[2 * i] = -TAU * TAU * c;
                ws.l0[2 * i + 1] = -TAU * TAU * s;
            }
        }
    }
}

/// Forward sweep computing the jet and retaining per-layer state for the
/// reverse sweep.
pub fn forward_jet(
    arch: &NetworkArch,
    theta: &[f64],
    x: &[f64],
    ws: &mut JetWorkspace,
) -> FieldJet {
    debug_assert_eq!(theta.len(), arch.param_count());
    let d = arch.input_dim;
    let dims = arch.layer_dims();
    let n_layers = dims.len() - 1;
    embed(arch, x, ws);
    ws.layers.resize_with(n_layers, LayerState::default);

    for k in 0..n_layers {
        let (n_in, n_out) = (dims[k], dims[k + 1]);
        let off = arch.layer_offset(k);
        let (w, b) = {
            let block = &theta[off..off + n_out * (n_in + 1)];
            block.split_at(n_out * n_in)
        };
        let last = k + 1 == n_layers;

        let (before, after) = ws.layers.split_at_mut(k);
        let layer = &mut after[0];
        let (prev_a, prev_g, prev_l): (&[f64], &[f64], &[f64]) = if k == 0 {
            (&ws.a0, &ws.g0, &ws.l0)
        } else {
            let prev = &before[k - 1];
            (&prev.a, &prev.g, &prev.l)
        };
        layer.s.clear();
        layer.s.resize(n_out, 0.0);
        layer.gs.clear();
        layer.gs.resize(n_out * d, 0.0);
        layer.ls.clear();
        layer.ls.resize(n_out, 0.0);
        layer.a.clear();
        layer.a.resize(n_out, 0.0);
        layer.g.clear();
        layer.g.resize(n_out * d, 0.0);
        layer.l.clear();
        layer.l.resize(n_out, 0.0);

        for i in 0..n_out {
            let wrow = &w[i * n_in..(i + 1) * n_in];
            let mut s = b[i];
            let mut ls = 0.0;
            for j in 0..n_in {
                s += wrow[j] * prev_a[j];
                ls += wrow[j] * prev_l[j];
            }
            let gs = &mut layer.gs[i * d..(i + 1) * d];
            for j in 0..n_in {
                let wj = wrow[j];
                if wj != 0.0 {
                    let gj = &prev_g[j * d..(j + 1) * d];
                    for k2 in 0..d {
                        gs[k2] += wj * gj[k2];
                    }
                }
            }
            layer.s[i] = s;
            layer.ls[i] = ls;
            if last {
                layer.a[i] = s;
                layer.g[i * d..(i + 1) * d].copy_from_slice(gs);
                layer.l[i] = ls;
            } else {
                let (v, d1, d2, _) = activation_derivs(arch.activation, s);
                let mut gs_sq = 0.0;
                for k2 in 0..d {
                    let gk = gs[k2];
                    layer.g[i * d + k2] = d1 * gk;
                    gs_sq += gk * gk;
                }
                layer.a[i] = v;
                layer.l[i] = d2 * gs_sq + d1 * ls;
            }
        }
    }

    let out = &ws.layers[n_layers - 1];
    FieldJet {
        value: out.a[0],
        grad: out.g[..d].to_vec(),
        laplacian: out.l[0],
    }
}

/// Reverse sweep. Given adjoints of the jet outputs, accumulates the
/// parameter gradient of `v̄·h + ḡ·∇h + l̄·Δh` into `grad[..]` (same layout
/// as `theta`). Must be called with the workspace left by `forward_jet`.
pub fn jet_vjp(
    arch: &NetworkArch,
    theta: &[f64],
    ws: &mut JetWorkspace,
    vbar: f64,
    gbar_x: &[f64],
    lbar: f64,
    grad: &mut [f64],
) {
    debug_assert_eq!(grad.len(), theta.len());
    let d = arch.input_dim;
    let dims = arch.layer_dims();
    let n_layers = dims.len() - 1;

    // Seed the output-layer adjoints.
    ws.abar.clear();
    ws.abar.push(vbar);
    ws.gbar.clear();
    ws.gbar.extend_from_slice(gbar_x);
    ws.lbar.clear();
    ws.lbar.push(lbar);

    for k in (0..n_layers).rev() {
        let (n_in, n_out) = (dims[k], dims[k + 1]);
        let off = arch.layer_offset(k);
        let w = &theta[off..off + n_out * n_in];
        let last = k + 1 == n_layers;
        let (before, after) = ws.layers.split_at(k);
        let layer = &after[0];
        let (prev_a, prev_g, prev_l): (&[f64], &[f64], &[f64]) = if k == 0 {
            (&ws.a0, &ws.g0, &ws.l0)
        } else {
            let prev = &before[k - 1];
            (&prev.a, &prev.g, &prev.l)
        };

        ws.abar_prev.clear();
        ws.abar_prev.resize(n_in, 0.0);
        ws.gbar_prev.clear();
        ws.gbar_prev.resize(n_in * d, 0.0);
        ws.lbar_prev.clear();
        ws.lbar_prev.resize(n_in, 0.0);
        ws.gsbar.resize(d, 0.0);

        for i in 0..n_out {
            let abar = ws.abar[i];
            let lbar = ws.lbar[i];
            let gs = &layer.gs[i * d..(i + 1) * d];

            // Adjoints of the pre-activation jet (s, ∇s, Δs).
            let (sbar, lsbar) = if last {
                for k2 in 0..d {
                    ws.gsbar[k2] = ws.gbar[i * d + k2];
                }
                (abar, lbar)
            } else {
                let (_, d1, d2, d3) = activation_derivs(arch.activation, layer.s[i]);
                let mut gs_sq = 0.0;
                let mut gbar_dot_gs = 0.0;
                for k2 in 0..d {
                    let gbar_k = ws.gbar[i * d + k2];
                    gs_sq += gs[k2] * gs[k2];
                    gbar_dot_gs += gbar_k * gs[k2];
                    ws.gsbar[k2] = d1 * gbar_k + 2.0 * lbar * d2 * gs[k2];
                }
                let sbar =
                    abar * d1 + d2 * gbar_dot_gs + lbar * (d3 * gs_sq + d2 * layer.ls[i]);
                (sbar, d1 * lbar)
            };

            let wrow_off = off + i * n_in;
            let bias_off = off + n_out * n_in + i;
            grad[bias_off] += sbar;
            for j in 0..n_in {
                let wj = w[i * n_in + j];
                let gj = &prev_g[j * d..(j + 1) * d];
                let mut wbar = sbar * prev_a[j] + lsbar * prev_l[j];
                for k2 in 0..d {
                    wbar += ws.gsbar[k2] * gj[k2];
                    ws.gbar_prev[j * d + k2] += ws.gsbar[k2] * wj;
                }
                grad[wrow_off + j] += wbar;
                ws.abar_prev[j] += sbar * wj;
                ws.lbar_prev[j] += lsbar * wj;
            }
        }

        std::mem::swap(&mut ws.abar, &mut ws.abar_prev);
        std::mem::swap(&mut ws.gbar, &mut ws.gbar_prev);
        std::mem::swap(&mut ws.lbar, &mut ws.lbar_prev);
    }
}

/// Value-only forward sweep; cheaper than `forward_jet` when no spatial
/// derivatives are needed. Retains pre-activations for `value_vjp`.
pub fn forward_value(arch: &NetworkArch, theta: &[f64], x: &[f64], ws: &mut JetWorkspace) -> f64 {
    debug_assert_eq!(theta.len(), arch.param_count());
    let dims = arch.layer_dims();
    let n_layers = dims.len() - 1;
    embed(arch, x, ws);
    ws.layers.resize_with(n_layers, LayerState::default);
    for k in 0..n_layers {
        let (n_in, n_out) = (dims[k], dims[k + 1]);
        let off = arch.layer_offset(k);
        let (w, b) = {
            let block = &theta[off..off + n_out * (n_in + 1)];
            block.split_at(n_out * n_in)
        };
        let last = k + 1 == n_layers;
        let (before, after) = ws.layers.split_at_mut(k);
        let layer = &mut after[0];
        let prev_a: &[f64] = if k == 0 { &ws.a0 } else { &before[k - 1].a };
        layer.s.clear();
        layer.s.resize(n_out, 0.0);
        layer.a.clear();
        layer.a.resize(n_out, 0.0);
        for i in 0..n_out {
            let wrow = &w[i * n_in..(i + 1) * n_in];
            let mut s = b[i];
            for j in 0..n_in {
                s += wrow[j] * prev_a[j];
            }
            layer.s[i] = s;
            layer.a[i] = if last {
                s
            } else {
                activation_derivs(arch.activation, s).0
            };
        }
    }
    ws.layers[n_layers - 1].a[0]
}

/// Reverse sweep matching `forward_value`: accumulates `v̄·∂h/∂θ`.
pub fn value_vjp(arch: &NetworkArch, theta: &[f64], ws: &mut JetWorkspace, vbar: f64, grad: &mut [f64]) {
    debug_assert_eq!(grad.len(), theta.len());
    let dims = arch.layer_dims();
    let n_layers = dims.len() - 1;
    ws.abar.clear();
    ws.abar.push(vbar);
    for k in (0..n_layers).rev() {
        let (n_in, n_out) = (dims[k], dims[k + 1]);
        let off = arch.layer_offset(k);
        let w = &theta[off..off + n_out * n_in];
        let last = k + 1 == n_layers;
        let (before, after) = ws.layers.split_at(k);
        let layer = &after[0];
        let prev_a: &[f64] = if k == 0 { &ws.a0 } else { &before[k - 1].a };
        ws.abar_prev.clear();
        ws.abar_prev.resize(n_in, 0.0);
        for i in 0..n_out {
            let abar = ws.abar[i];
            let sbar = if last {
                abar
            } else {
                abar * activation_derivs(arch.activation, layer.s[i]).1
            };
            grad[off + n_out * n_in + i] += sbar;
            for j in 0..n_in {
                grad[off + i * n_in + j] += sbar * prev_a[j];
                ws.abar_prev[j] += sbar * w[i * n_in + j];
            }
        }
        std::mem::swap(&mut ws.abar, &mut ws.abar_prev);
    }
}

/// One-shot jet evaluation.
pub fn eval_jet(arch: &NetworkArch, params: &ParamVector, x: &[f64]) -> FieldJet {
    let mut ws = JetWorkspace::new();
    forward_jet(arch, &params.values, x, &mut ws)
}

/// A network bound to its parameters, usable wherever an analytic field is.
pub struct NeuralField {
    pub arch: NetworkArch,
    pub params: ParamVector,
}

impl Field for NeuralField {
    fn dim(&self) -> usize {
        self.arch.input_dim
    }
    fn jet(&self, x: &[f64]) -> FieldJet {
        eval_jet(&self.arch, &self.params, x)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub arch: NetworkArch,
    pub seed: u64,
    pub iteration: u64,
    pub param_count: usize,
}

/// Writes a checkpoint: one JSON header line, then the parameters as a
/// flat little-endian f64 array.
pub fn save_checkpoint(
    path: &Path,
    arch: &NetworkArch,
    params: &ParamVector,
    seed: u64,
    iteration: u64,
) -> Result<(), NetError> {
    let meta = CheckpointMeta {
        arch: arch.clone(),
        seed,
        iteration,
        param_count: params.len(),
    };
    let mut file = std::fs::File::create(path)?;
    serde_json::to_writer(&mut file, &meta)?;
    file.write_all(b"\n")?;
    for v in &params.values {
        file.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointMeta, ParamVector), NetError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or(NetError::CorruptCheckpoint)?;
    let meta: CheckpointMeta = serde_json::from_slice(&bytes[..newline])?;
    let payload = &bytes[newline + 1..];
    if payload.len() != meta.param_count * 8 {
        return Err(NetError::CorruptCheckpoint);
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((meta, ParamVector { values }))
}
