//! Fully connected autoencoder with hand-written backpropagation, trained
//! either as a plain autoencoder or with the geometric bottleneck penalty
//! toward a reference embedding.
//!
//! # Checkpoint format
//!
//! All integers are little-endian `u64` and all floats little-endian IEEE
//! `f64`, in this order:
//!
//! | field | size |
//! |---|---|
//! | magic `GRAECKPT` | 8 bytes |
//! | version (`1`) | u64 |
//! | number of widths `w` | u64 |
//! | widths | `w` × u64 |
//! | number of parameters `p` | u64 |
//! | parameters in layer order (each layer: weights row-major `in×out`, then biases) | `p` × f64 |
//! | Adam step counter | u64 |
//! | Adam first moments | `p` × f64 |
//! | Adam second moments | `p` × f64 |
//! | config length `c` | u64 |
//! | training config as UTF-8 JSON | `c` bytes |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use log::debug;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GraeError, Result};
use crate::matrix::{gemm, DenseMatrix, MatRef};
use crate::mds::Embedding;
use crate::rng::seeded;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GRAECKPT";
pub const CHECKPOINT_VERSION: u64 = 1;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

#[derive(Clone, Copy, Debug)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    w: usize,
    b: usize,
}

/// Symmetric MLP autoencoder. Hidden layers use ReLU; the bottleneck and
/// the output are linear.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    widths: Vec<usize>,
    params: Vec<f64>,
    pub adam: AdamState,
}

fn check_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 3 || widths.len().is_multiple_of(2) {
        return Err(GraeError::invalid(format!(
            "widths must have an odd length >= 3, got {widths:?}"
        )));
    }
    if widths.contains(&0) {
        return Err(GraeError::invalid("layer widths must be >= 1"));
    }
    let n = widths.len();
    if (0..n / 2).any(|i| widths[i] != widths[n - 1 - i]) {
        return Err(GraeError::invalid(format!(
            "widths must be symmetric around the bottleneck, got {widths:?}"
        )));
    }
    Ok(())
}

fn param_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Network {
    /// He-uniform weights `U(−√(6/fan_in), √(6/fan_in))`, zero biases.
    pub fn init(widths: &[usize], seed: u64) -> Result<Self> {
        check_widths(widths)?;
        let mut net = Network::zeros(widths)?;
        let mut rng = seeded(seed);
        for l in 0..net.num_layers() {
            let layer = net.layer(l);
            let bound = (6.0 / layer.fan_in as f64).sqrt();
            for p in &mut net.params[layer.w..layer.b] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn zeros(widths: &[usize]) -> Result<Self> {
        check_widths(widths)?;
        let p = param_count(widths);
        Ok(Network {
            widths: widths.to_vec(),
            params: vec![0.0; p],
            adam: AdamState {
                m: vec![0.0; p],
                v: vec![0.0; p],
                step: 0,
            },
        })
    }

    pub fn from_params(widths: &[usize], params: Vec<f64>) -> Result<Self> {
        let mut net = Network::zeros(widths)?;
        if params.len() != net.params.len() {
            return Err(GraeError::shape(format!(
                "{} parameters given, widths need {}",
                params.len(),
                net.params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn latent_dim(&self) -> usize {
        self.widths[self.bottleneck()]
    }

    /// Index into `widths` of the bottleneck layer.
    pub fn bottleneck(&self) -> usize {
        self.widths.len() / 2
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn squared_norm(&self) -> f64 {
        self.params.iter().map(|p| p * p).sum()
    }

    fn layer(&self, l: usize) -> Layer {
        let mut off = 0;
        for k in 0..l {
            off += self.widths[k] * self.widths[k + 1] + self.widths[k + 1];
        }
        let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
        Layer {
            fan_in,
            fan_out,
            w: off,
            b: off + fan_in * fan_out,
        }
    }

    /// Weights of layer `l` as an `in×out` matrix.
    pub fn weights(&self, l: usize) -> DenseMatrix {
        let ly = self.layer(l);
        DenseMatrix::from_vec(ly.fan_in, ly.fan_out, self.params[ly.w..ly.b].to_vec())
            .expect("layer layout")
    }

    pub fn biases(&self, l: usize) -> &[f64] {
        let ly = self.layer(l);
        &self.params[ly.b..ly.b + ly.fan_out]
    }

    fn is_relu(&self, l: usize) -> bool {
        let out = l + 1;
        out != self.bottleneck() && out != self.widths.len() - 1
    }

    /// Runs layers `from..to`, returning every intermediate activation
    /// (the input first).
    fn forward_range(&self, x: &DenseMatrix, from: usize, to: usize) -> Vec<DenseMatrix> {
        let batch = x.rows();
        let mut acts = Vec::with_capacity(to - from + 1);
        acts.push(x.clone());
        for l in from..to {
            let ly = self.layer(l);
            let input = acts.last().expect("non-empty");
            let mut out = vec![0.0; batch * ly.fan_out];
            let bias = &self.params[ly.b..ly.b + ly.fan_out];
            for row in out.chunks_exact_mut(ly.fan_out) {
                row.copy_from_slice(bias);
            }
            gemm(
                batch,
                ly.fan_in,
                ly.fan_out,
                1.0,
                MatRef::new(input.as_slice(), ly.fan_in, false),
                MatRef::new(&self.params[ly.w..ly.b], ly.fan_out, false),
                1.0,
                &mut out,
            );
            if self.is_relu(l) {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(DenseMatrix::from_vec(batch, ly.fan_out, out).expect("layer output"));
        }
        acts
    }

    fn check_cols(&self, x: &DenseMatrix, expected: usize, what: &str) -> Result<()> {
        if x.cols() != expected {
            return Err(GraeError::shape(format!(
                "{what} expects {expected} columns, got {}",
                x.cols()
            )));
        }
        Ok(())
    }

    /// Encoder half: input rows to latent coordinates.
    pub fn encode(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_cols(x, self.input_dim(), "encode")?;
        Ok(self
            .forward_range(x, 0, self.bottleneck())
            .pop()
            .expect("non-empty"))
    }

    /// Decoder half: latent coordinates to reconstructions.
    pub fn decode(&self, z: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_cols(z, self.latent_dim(), "decode")?;
        Ok(self
            .forward_range(z, self.bottleneck(), self.num_layers())
            .pop()
            .expect("non-empty"))
    }

    pub fn reconstruct(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        self.decode(&self.encode(x)?)
    }
}

/// Loss components of one batch or one epoch. The weight-decay term is
/// not included in either component.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub reconstruction: f64,
    pub geometric: f64,
    pub lambda_current: f64,
    pub epoch: usize,
}

/// Loss and full gradient for one batch:
/// `MSE(x̂, x) + λ·mean_i ‖f(x_i) − e_i‖² + wd·‖θ‖²`.
///
/// With `e_batch = None` (or `λ = 0`) the geometric term is neither
/// differentiated nor added, so the result matches the plain autoencoder
/// bit for bit.
pub fn grae_loss_and_grads(
    net: &Network,
    x_batch: &DenseMatrix,
    e_batch: Option<&DenseMatrix>,
    lambda_current: f64,
    weight_decay: f64,
) -> Result<(LossReport, Vec<f64>)> {
    net.check_cols(x_batch, net.input_dim(), "loss")?;
    let batch = x_batch.rows();
    if batch == 0 {
        return Err(GraeError::EmptyMatrix);
    }
    if let Some(e) = e_batch {
        if e.rows() != batch || e.cols() != net.latent_dim() {
            return Err(GraeError::shape(format!(
                "reference batch is {}x{}, expected {batch}x{}",
                e.rows(),
                e.cols(),
                net.latent_dim()
            )));
        }
    }
    if !(lambda_current >= 0.0) {
        return Err(GraeError::invalid("lambda must be >= 0"));
    }
    let acts = net.forward_range(x_batch, 0, net.num_layers());
    let mid = net.bottleneck();
    let out = acts.last().expect("non-empty");
    let d_in = net.input_dim();
    let inv_entries = 1.0 / (batch * d_in) as f64;

    let mut recon = 0.0;
    let mut delta = vec![0.0; batch * d_in];
    for ((g, o), x) in delta.iter_mut().zip(out.as_slice()).zip(x_batch.as_slice()) {
        let r = o - x;
        recon += r * r;
        *g = 2.0 * r * inv_entries;
    }
    recon *= inv_entries;

    let mut geometric = 0.0;
    let mut geo_delta = None;
    if let Some(e) = e_batch {
        let z = &acts[mid];
        let inv_b = 1.0 / batch as f64;
        let mut gd = vec![0.0; z.as_slice().len()];
        for ((g, zv), ev) in gd.iter_mut().zip(z.as_slice()).zip(e.as_slice()) {
            let r = zv - ev;
            geometric += r * r;
            *g = 2.0 * lambda_current * r * inv_b;
        }
        geometric *= inv_b;
        if lambda_current != 0.0 {
            geo_delta = Some(gd);
        }
    }

    let mut grads = vec![0.0; net.num_params()];
    for l in (0..net.num_layers()).rev() {
        let ly = net.layer(l);
        if l + 1 == mid {
            if let Some(gd) = &geo_delta {
                delta.iter_mut().zip(gd).for_each(|(d, g)| *d += g);
            }
        }
        if net.is_relu(l) {
            for (d, a) in delta.iter_mut().zip(acts[l + 1].as_slice()) {
                if *a <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        let input = &acts[l];
        gemm(
            ly.fan_in,
            batch,
            ly.fan_out,
            1.0,
            MatRef::new(input.as_slice(), ly.fan_in, true),
            MatRef::new(&delta, ly.fan_out, false),
            0.0,
            &mut grads[ly.w..ly.b],
        );
        let gb = &mut grads[ly.b..ly.b + ly.fan_out];
        for row in delta.chunks_exact(ly.fan_out) {
            gb.iter_mut().zip(row).for_each(|(g, d)| *g += d);
        }
        if l > 0 {
            let mut next = vec![0.0; batch * ly.fan_in];
            gemm(
                batch,
                ly.fan_out,
                ly.fan_in,
                1.0,
                MatRef::new(&delta, ly.fan_out, false),
                MatRef::new(&net.params[ly.w..ly.b], ly.fan_out, true),
                0.0,
                &mut next,
            );
            delta = next;
        }
    }
    if weight_decay != 0.0 {
        for (g, p) in grads.iter_mut().zip(&net.params) {
            *g += 2.0 * weight_decay * p;
        }
    }
    Ok((
        LossReport {
            reconstruction: recon,
            geometric,
            lambda_current,
            epoch: 0,
        },
        grads,
    ))
}

/// Total objective value (including weight decay) for a batch.
pub fn total_loss(
    net: &Network,
    x_batch: &DenseMatrix,
    e_batch: Option<&DenseMatrix>,
    lambda_current: f64,
    weight_decay: f64,
) -> Result<f64> {
    let (r, _) = grae_loss_and_grads(net, x_batch, e_batch, lambda_current, weight_decay)?;
    let geo = if e_batch.is_some() && lambda_current != 0.0 {
        lambda_current * r.geometric
    } else {
        0.0
    };
    Ok(r.reconstruction + geo + weight_decay * net.squared_norm())
}

fn check_grad_len(net: &Network, grads: &[f64]) -> Result<()> {
    if grads.len() != net.num_params() {
        return Err(GraeError::shape(format!(
            "{} gradients for {} parameters",
            grads.len(),
            net.num_params()
        )));
    }
    Ok(())
}

/// One Adam update with bias correction.
pub fn adam_step(net: &mut Network, grads: &[f64], learning_rate: f64) -> Result<()> {
    check_grad_len(net, grads)?;
    let st = &mut net.adam;
    st.step += 1;
    let t = st.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (((p, g), m), v) in net
        .params
        .iter_mut()
        .zip(grads)
        .zip(st.m.iter_mut())
        .zip(st.v.iter_mut())
    {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let mh = *m / c1;
        let vh = *v / c2;
        *p -= learning_rate * mh / (vh.sqrt() + ADAM_EPS);
    }
    Ok(())
}

pub fn sgd_step(net: &mut Network, grads: &[f64], learning_rate: f64) -> Result<()> {
    check_grad_len(net, grads)?;
    net.params
        .iter_mut()
        .zip(grads)
        .for_each(|(p, g)| *p -= learning_rate * g);
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl OptimizerKind {
    pub fn step(self, net: &mut Network, grads: &[f64], learning_rate: f64) -> Result<()> {
        match self {
            OptimizerKind::Adam => adam_step(net, grads, learning_rate),
            OptimizerKind::Sgd => sgd_step(net, grads, learning_rate),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "adam" => Some(OptimizerKind::Adam),
            "sgd" => Some(OptimizerKind::Sgd),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Vanilla,
    Grae,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Vanilla => "ae",
            TrainMode::Grae => "grae",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda_max: f64,
    pub schedule_alpha: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub mode: TrainMode,
    pub optimizer: OptimizerKind,
    /// Encoder hidden widths; the decoder mirrors them.
    pub hidden_widths: Vec<usize>,
    pub latent_dim: usize,
    /// Shift the reference to zero mean and scale it to unit mean row norm.
    pub standardize_reference: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_max: 100.0,
            schedule_alpha: 0.2,
            epochs: 200,
            learning_rate: 1e-4,
            batch_size: 128,
            weight_decay: 1e-5,
            seed: 0,
            mode: TrainMode::Grae,
            optimizer: OptimizerKind::Adam,
            hidden_widths: vec![256, 128, 64],
            latent_dim: 2,
            standardize_reference: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_max >= 0.0) || !self.lambda_max.is_finite() {
            return Err(GraeError::invalid("lambda_max must be finite and >= 0"));
        }
        if !self.schedule_alpha.is_finite() {
            return Err(GraeError::invalid("schedule_alpha must be finite"));
        }
        if self.epochs == 0 {
            return Err(GraeError::invalid("epochs must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(GraeError::invalid("learning_rate must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(GraeError::invalid("batch_size must be >= 1"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(GraeError::invalid("weight_decay must be >= 0"));
        }
        if self.latent_dim == 0 || self.hidden_widths.contains(&0) {
            return Err(GraeError::invalid("layer widths must be >= 1"));
        }
        Ok(())
    }

    /// Full symmetric width list for inputs of dimension `input_dim`.
    pub fn widths_for(&self, input_dim: usize) -> Vec<usize> {
        let mut w = vec![input_dim];
        w.extend(&self.hidden_widths);
        w.push(self.latent_dim);
        w.extend(self.hidden_widths.iter().rev());
        w.push(input_dim);
        w
    }
}

/// Relaxation schedule: `λ_max − λ_max·σ((epoch − N_e/2)·α_s)`.
pub fn lambda_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let x = (epoch as f64 - cfg.epochs as f64 / 2.0) * cfg.schedule_alpha;
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    cfg.lambda_max - cfg.lambda_max * s
}

/// Zero mean, unit mean row norm.
pub fn standardize_embedding(e: &DenseMatrix) -> DenseMatrix {
    let mut out = e.clone();
    out.center_columns();
    let n = out.rows().max(1) as f64;
    let mean_norm = out
        .row_iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .sum::<f64>()
        / n;
    if mean_norm > 0.0 {
        out.scale_in_place(1.0 / mean_norm);
    }
    out
}

/// Called after every epoch with the epoch's mean losses.
pub type EpochCallback<'a> = dyn FnMut(&Network, &LossReport) + 'a;

pub fn train(
    net: Network,
    features: &DenseMatrix,
    reference: Option<&Embedding>,
    cfg: &TrainConfig,
) -> Result<(Network, Vec<LossReport>)> {
    train_with_callback(net, features, reference, cfg, &mut |_, _| {})
}

pub fn train_with_callback(
    mut net: Network,
    features: &DenseMatrix,
    reference: Option<&Embedding>,
    cfg: &TrainConfig,
    callback: &mut EpochCallback<'_>,
) -> Result<(Network, Vec<LossReport>)> {
    cfg.validate()?;
    net.check_cols(features, net.input_dim(), "train")?;
    let n = features.rows();
    if n == 0 {
        return Err(GraeError::EmptyMatrix);
    }
    let target = match (cfg.mode, reference) {
        (TrainMode::Vanilla, _) => None,
        (TrainMode::Grae, None) => {
            return Err(GraeError::invalid("GRAE training needs a reference embedding"))
        }
        (TrainMode::Grae, Some(r)) => {
            if r.coords.rows() != n || r.coords.cols() != net.latent_dim() {
                return Err(GraeError::shape(format!(
                    "reference is {}x{}, expected {n}x{}",
                    r.coords.rows(),
                    r.coords.cols(),
                    net.latent_dim()
                )));
            }
            Some(if cfg.standardize_reference {
                standardize_embedding(&r.coords)
            } else {
                r.coords.clone()
            })
        }
    };
    let mut rng = seeded(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lambda = match cfg.mode {
            TrainMode::Vanilla => 0.0,
            TrainMode::Grae => lambda_at(epoch, cfg),
        };
        order.shuffle(&mut rng);
        let mut sum = LossReport {
            epoch,
            lambda_current: lambda,
            ..Default::default()
        };
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let xb = features.select_rows(idx);
            let eb = target.as_ref().map(|t| t.select_rows(idx));
            let (rep, grads) = grae_loss_and_grads(&net, &xb, eb.as_ref(), lambda, cfg.weight_decay)?;
            if !rep.reconstruction.is_finite()
                || !rep.geometric.is_finite()
                || grads.iter().any(|g| !g.is_finite())
            {
                return Err(GraeError::Numeric(format!(
                    "non-finite loss at epoch {epoch}, batch {b}: reconstruction {}, geometric {}, lambda {lambda}",
                    rep.reconstruction, rep.geometric
                )));
            }
            cfg.optimizer.step(&mut net, &grads, cfg.learning_rate)?;
            let w = idx.len() as f64 / n as f64;
            sum.reconstruction += rep.reconstruction * w;
            sum.geometric += rep.geometric * w;
        }
        debug!(
            "epoch {epoch}: L_r {:.6e} L_g {:.6e} lambda {lambda:.4}",
            sum.reconstruction, sum.geometric
        );
        callback(&net, &sum);
        history.push(sum);
    }
    Ok((net, history))
}

/// Initializes a network from `cfg` and trains it.
pub fn fit(
    features: &DenseMatrix,
    reference: Option<&Embedding>,
    cfg: &TrainConfig,
) -> Result<(Network, Vec<LossReport>)> {
    cfg.validate()?;
    let net = Network::init(&cfg.widths_for(features.cols()), cfg.seed)?;
    train(net, features, reference, cfg)
}

/// Decodes `steps` evenly spaced points on the segment from `z_a` to `z_b`.
pub fn interpolate_path(net: &Network, z_a: &[f64], z_b: &[f64], steps: usize) -> Result<DenseMatrix> {
    if steps < 2 {
        return Err(GraeError::invalid("interpolation needs at least 2 steps"));
    }
    let d = net.latent_dim();
    if z_a.len() != d || z_b.len() != d {
        return Err(GraeError::shape(format!(
            "latent points must have {d} coordinates"
        )));
    }
    let z = DenseMatrix::from_fn(steps, d, |k, j| {
        let s = k as f64 / (steps - 1) as f64;
        if s <= 0.5 {
            z_a[j] + s * (z_b[j] - z_a[j])
        } else {
            z_b[j] - (1.0 - s) * (z_b[j] - z_a[j])
        }
    });
    net.decode(&z)
}

fn put_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f64s(w: &mut impl Write, vs: &[f64]) -> Result<()> {
    for v in vs {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn get_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

fn bad_checkpoint(msg: impl Into<String>) -> GraeError {
    GraeError::Parse {
        path: Default::default(),
        message: msg.into(),
    }
}

pub fn write_checkpoint<W: Write>(mut w: W, net: &Network, cfg: &TrainConfig) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    put_u64(&mut w, CHECKPOINT_VERSION)?;
    put_u64(&mut w, net.widths.len() as u64)?;
    for &x in &net.widths {
        put_u64(&mut w, x as u64)?;
    }
    put_u64(&mut w, net.params.len() as u64)?;
    put_f64s(&mut w, &net.params)?;
    put_u64(&mut w, net.adam.step)?;
    put_f64s(&mut w, &net.adam.m)?;
    put_f64s(&mut w, &net.adam.v)?;
    let json = serde_json::to_vec(cfg)?;
    put_u64(&mut w, json.len() as u64)?;
    w.write_all(&json)?;
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(Network, TrainConfig)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad_checkpoint("not a checkpoint (bad magic)"));
    }
    let version = get_u64(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad_checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let nw = get_u64(&mut r)? as usize;
    if nw > 1024 {
        return Err(bad_checkpoint("implausible width count"));
    }
    let widths: Vec<usize> = (0..nw)
        .map(|_| get_u64(&mut r).map(|v| v as usize))
        .collect::<Result<_>>()?;
    check_widths(&widths).map_err(|e| bad_checkpoint(e.to_string()))?;
    let np = get_u64(&mut r)? as usize;
    if np != param_count(&widths) {
        return Err(bad_checkpoint("parameter count does not match widths"));
    }
    let params = get_f64s(&mut r, np)?;
    let step = get_u64(&mut r)?;
    let m = get_f64s(&mut r, np)?;
    let v = get_f64s(&mut r, np)?;
    let clen = get_u64(&mut r)? as usize;
    if clen > 1 << 20 {
        return Err(bad_checkpoint("implausible config length"));
    }
    let mut json = vec![0u8; clen];
    r.read_exact(&mut json)?;
    let cfg: TrainConfig = serde_json::from_slice(&json)?;
    let mut net = Network::from_params(&widths, params)?;
    net.adam = AdamState { m, v, step };
    Ok((net, cfg))
}

pub fn save_checkpoint(path: &Path, net: &Network, cfg: &TrainConfig) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), net, cfg)
}

pub fn load_checkpoint(path: &Path) -> Result<(Network, TrainConfig)> {
    read_checkpoint(BufReader::new(File::open(path)?)).map_err(|e| match e {
        GraeError::Parse { message, .. } => GraeError::Parse {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}
