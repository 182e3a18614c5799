//! Model parameters and the forward pass.
//!
//! Pipeline: standardize the (power, voltage, current) window, project to the
//! hidden width, run a stack of temporal-attention encoder blocks, fan out to
//! one track per appliance through per-appliance decoders, apply the
//! dual-axis attention block (temporal per track, then across the appliance
//! axis per time step, residual both), and finish with per-appliance
//! regression (softplus, watts) and classification (sigmoid) heads.

use serde::{Deserialize, Serialize};

use super::tape::{Mat, NodeId, Tape};
use super::TrainConfig;
use crate::dataio::{Dataset, Sample};
use crate::digest::fnv1a64_hex;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Plain value tensor used at the public API boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            shape,
            data,
            grad: None,
        }
    }
}

/// Input standardization statistics and per-appliance power scales, all
/// estimated from the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub input_mean: Vec<f64>,
    pub input_sigma: Vec<f64>,
    pub power_scale: Vec<f64>,
}

impl NormStats {
    pub fn placeholder(n_appliances: usize) -> Self {
        NormStats {
            input_mean: vec![0.0; 3],
            input_sigma: vec![1.0; 3],
            power_scale: vec![1.0; n_appliances],
        }
    }

    pub fn validate(&self, n_appliances: usize) -> Result<()> {
        if self.input_mean.len() != 3 || self.input_sigma.len() != 3 {
            return Err(Error::Shape("normalization stats must cover 3 features".to_string()));
        }
        if self.power_scale.len() != n_appliances {
            return Err(Error::Shape(format!(
                "power_scale has {} entries for {} appliances",
                self.power_scale.len(),
                n_appliances
            )));
        }
        if self.input_sigma.iter().chain(&self.power_scale).any(|s| *s <= 0.0) {
            return Err(Error::Shape("normalization sigmas must be > 0".to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub w: Mat,
    pub b: Mat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mhsa {
    pub wq: Mat,
    pub bq: Mat,
    pub wk: Mat,
    pub bk: Mat,
    pub wv: Mat,
    pub bv: Mat,
    pub wo: Mat,
    pub bo: Mat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNormParams {
    pub gamma: Mat,
    pub beta: Mat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderBlock {
    pub attn: Mhsa,
    pub ln1: LayerNormParams,
    pub ffn1: Linear,
    pub ffn2: Linear,
    pub ln2: LayerNormParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoder {
    pub proj: Mat,
    pub embedding: Mat,
}

/// All learnable weights plus normalization statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: TrainConfig,
    pub norm: NormStats,
    pub input_proj: Linear,
    pub encoder: Vec<EncoderBlock>,
    pub decoders: Vec<Decoder>,
    pub temporal_attn: Mhsa,
    pub appliance_attn: Mhsa,
    pub reg_heads: Vec<Linear>,
    pub cls_heads: Vec<Linear>,
}

impl ModelParams {
    /// Canonical (name, tensor) listing; initialization, persistence and
    /// gradient collection all follow this order.
    pub fn param_list(&self) -> Vec<(String, &Mat)> {
        let mut out: Vec<(String, &Mat)> = vec![
            ("input_proj.w".into(), &self.input_proj.w),
            ("input_proj.b".into(), &self.input_proj.b),
        ];
        for (i, blk) in self.encoder.iter().enumerate() {
            for (suffix, mat) in mhsa_fields(&blk.attn) {
                out.push((format!("enc{i}.attn.{suffix}"), mat));
            }
            out.push((format!("enc{i}.ln1.gamma"), &blk.ln1.gamma));
            out.push((format!("enc{i}.ln1.beta"), &blk.ln1.beta));
            out.push((format!("enc{i}.ffn1.w"), &blk.ffn1.w));
            out.push((format!("enc{i}.ffn1.b"), &blk.ffn1.b));
            out.push((format!("enc{i}.ffn2.w"), &blk.ffn2.w));
            out.push((format!("enc{i}.ffn2.b"), &blk.ffn2.b));
            out.push((format!("enc{i}.ln2.gamma"), &blk.ln2.gamma));
            out.push((format!("enc{i}.ln2.beta"), &blk.ln2.beta));
        }
        for (a, dec) in self.decoders.iter().enumerate() {
            out.push((format!("dec{a}.proj"), &dec.proj));
            out.push((format!("dec{a}.emb"), &dec.embedding));
        }
        for (suffix, mat) in mhsa_fields(&self.temporal_attn) {
            out.push((format!("tdma.{suffix}"), mat));
        }
        for (suffix, mat) in mhsa_fields(&self.appliance_attn) {
            out.push((format!("adma.{suffix}"), mat));
        }
        for (a, head) in self.reg_heads.iter().enumerate() {
            out.push((format!("head{a}.reg.w"), &head.w));
            out.push((format!("head{a}.reg.b"), &head.b));
        }
        for (a, head) in self.cls_heads.iter().enumerate() {
            out.push((format!("head{a}.cls.w"), &head.w));
            out.push((format!("head{a}.cls.b"), &head.b));
        }
        out
    }

    /// Mutable twin of [`param_list`]; must stay in the same order.
    pub fn param_list_mut(&mut self) -> Vec<(String, &mut Mat)> {
        let mut out: Vec<(String, &mut Mat)> = vec![
            ("input_proj.w".into(), &mut self.input_proj.w),
            ("input_proj.b".into(), &mut self.input_proj.b),
        ];
        for (i, blk) in self.encoder.iter_mut().enumerate() {
            for (suffix, mat) in mhsa_fields_mut(&mut blk.attn) {
                out.push((format!("enc{i}.attn.{suffix}"), mat));
            }
            out.push((format!("enc{i}.ln1.gamma"), &mut blk.ln1.gamma));
            out.push((format!("enc{i}.ln1.beta"), &mut blk.ln1.beta));
            out.push((format!("enc{i}.ffn1.w"), &mut blk.ffn1.w));
            out.push((format!("enc{i}.ffn1.b"), &mut blk.ffn1.b));
            out.push((format!("enc{i}.ffn2.w"), &mut blk.ffn2.w));
            out.push((format!("enc{i}.ffn2.b"), &mut blk.ffn2.b));
            out.push((format!("enc{i}.ln2.gamma"), &mut blk.ln2.gamma));
            out.push((format!("enc{i}.ln2.beta"), &mut blk.ln2.beta));
        }
        for (a, dec) in self.decoders.iter_mut().enumerate() {
            out.push((format!("dec{a}.proj"), &mut dec.proj));
            out.push((format!("dec{a}.emb"), &mut dec.embedding));
        }
        for (suffix, mat) in mhsa_fields_mut(&mut self.temporal_attn) {
            out.push((format!("tdma.{suffix}"), mat));
        }
        for (suffix, mat) in mhsa_fields_mut(&mut self.appliance_attn) {
            out.push((format!("adma.{suffix}"), mat));
        }
        for (a, head) in self.reg_heads.iter_mut().enumerate() {
            out.push((format!("head{a}.reg.w"), &mut head.w));
            out.push((format!("head{a}.reg.b"), &mut head.b));
        }
        for (a, head) in self.cls_heads.iter_mut().enumerate() {
            out.push((format!("head{a}.cls.w"), &mut head.w));
            out.push((format!("head{a}.cls.b"), &mut head.b));
        }
        out
    }

    pub fn n_parameters(&self) -> usize {
        self.param_list().iter().map(|(_, m)| m.numel()).sum()
    }

    /// FNV-1a digest of the little-endian weight payload.
    pub fn payload_digest(&self) -> String {
        let mut bytes = Vec::with_capacity(self.n_parameters() * 8);
        for (_, mat) in self.param_list() {
            for v in &mat.data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        fnv1a64_hex(&bytes)
    }

    pub fn config_digest(&self) -> String {
        let json = serde_json::to_string(&self.config).expect("config serializes");
        fnv1a64_hex(json.as_bytes())
    }
}

fn mhsa_fields(m: &Mhsa) -> Vec<(&'static str, &Mat)> {
    vec![
        ("wq", &m.wq),
        ("bq", &m.bq),
        ("wk", &m.wk),
        ("bk", &m.bk),
        ("wv", &m.wv),
        ("bv", &m.bv),
        ("wo", &m.wo),
        ("bo", &m.bo),
    ]
}

fn mhsa_fields_mut(m: &mut Mhsa) -> Vec<(&'static str, &mut Mat)> {
    vec![
        ("wq", &mut m.wq),
        ("bq", &mut m.bq),
        ("wk", &mut m.wk),
        ("bk", &mut m.bk),
        ("wv", &mut m.wv),
        ("bv", &mut m.bv),
        ("wo", &mut m.wo),
        ("bo", &mut m.bo),
    ]
}

fn empty_linear(input: usize, output: usize) -> Linear {
    Linear {
        w: Mat::zeros(input, output),
        b: Mat::zeros(1, output),
    }
}

fn empty_mhsa(h: usize) -> Mhsa {
    Mhsa {
        wq: Mat::zeros(h, h),
        bq: Mat::zeros(1, h),
        wk: Mat::zeros(h, h),
        bk: Mat::zeros(1, h),
        wv: Mat::zeros(h, h),
        bv: Mat::zeros(1, h),
        wo: Mat::zeros(h, h),
        bo: Mat::zeros(1, h),
    }
}

fn empty_layer_norm(h: usize) -> LayerNormParams {
    LayerNormParams {
        gamma: Mat::zeros(1, h),
        beta: Mat::zeros(1, h),
    }
}

/// Allocates all parameter tensors (zeroed) for the given configuration.
pub(crate) fn empty_params(config: &TrainConfig) -> ModelParams {
    let h = config.hidden_size;
    let ffn = h * TrainConfig::FFN_EXPANSION;
    ModelParams {
        norm: NormStats::placeholder(config.n_appliances),
        input_proj: empty_linear(config.input_size, h),
        encoder: (0..TrainConfig::ENCODER_BLOCKS)
            .map(|_| EncoderBlock {
                attn: empty_mhsa(h),
                ln1: empty_layer_norm(h),
                ffn1: empty_linear(h, ffn),
                ffn2: empty_linear(ffn, h),
                ln2: empty_layer_norm(h),
            })
            .collect(),
        decoders: (0..config.n_appliances)
            .map(|_| Decoder {
                proj: Mat::zeros(h, h),
                embedding: Mat::zeros(1, h),
            })
            .collect(),
        temporal_attn: empty_mhsa(h),
        appliance_attn: empty_mhsa(h),
        reg_heads: (0..config.n_appliances)
            .map(|_| empty_linear(h, 1))
            .collect(),
        cls_heads: (0..config.n_appliances)
            .map(|_| empty_linear(h, 1))
            .collect(),
        config: config.clone(),
    }
}

/// Initializes a model: weights uniform in (-1/sqrt(fan_in), +1/sqrt(fan_in)),
/// biases zero, layer-norm gains one. Deterministic for a fixed seed.
pub fn init_model(config: &TrainConfig) -> Result<ModelParams> {
    config.validate()?;
    let mut params = empty_params(config);
    let hidden = config.hidden_size;
    let mut rng = Rng::new(config.seed);
    for (name, mat) in params.param_list_mut() {
        if name.ends_with(".gamma") {
            mat.data.fill(1.0);
        } else if is_bias_name(&name) {
            // already zero
        } else {
            let fan_in = if name.ends_with(".emb") { hidden } else { mat.rows };
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in mat.data.iter_mut() {
                *v = rng.range(-bound, bound);
            }
        }
    }
    Ok(params)
}

fn is_bias_name(name: &str) -> bool {
    name.ends_with(".b")
        || name.ends_with(".bq")
        || name.ends_with(".bk")
        || name.ends_with(".bv")
        || name.ends_with(".bo")
        || name.ends_with(".beta")
}

struct NodeLinear {
    w: NodeId,
    b: NodeId,
}

struct NodeMhsa {
    wq: NodeId,
    bq: NodeId,
    wk: NodeId,
    bk: NodeId,
    wv: NodeId,
    bv: NodeId,
    wo: NodeId,
    bo: NodeId,
}

struct NodeEncoderBlock {
    attn: NodeMhsa,
    ln1_gamma: NodeId,
    ln1_beta: NodeId,
    ffn1: NodeLinear,
    ffn2: NodeLinear,
    ln2_gamma: NodeId,
    ln2_beta: NodeId,
}

pub(crate) struct NodeParams {
    input_proj: NodeLinear,
    encoder: Vec<NodeEncoderBlock>,
    decoders: Vec<(NodeId, NodeId)>,
    temporal_attn: NodeMhsa,
    appliance_attn: NodeMhsa,
    reg_heads: Vec<NodeLinear>,
    cls_heads: Vec<NodeLinear>,
    /// Leaf ids in [`ModelParams::param_list`] order, for gradient collection.
    pub flat: Vec<NodeId>,
}

struct Registrar<'t> {
    tape: &'t mut Tape,
    flat: Vec<NodeId>,
}

impl Registrar<'_> {
    fn leaf(&mut self, mat: &Mat) -> NodeId {
        let id = self.tape.leaf(mat);
        self.flat.push(id);
        id
    }

    fn linear(&mut self, l: &Linear) -> NodeLinear {
        NodeLinear {
            w: self.leaf(&l.w),
            b: self.leaf(&l.b),
        }
    }

    fn mhsa(&mut self, m: &Mhsa) -> NodeMhsa {
        NodeMhsa {
            wq: self.leaf(&m.wq),
            bq: self.leaf(&m.bq),
            wk: self.leaf(&m.wk),
            bk: self.leaf(&m.bk),
            wv: self.leaf(&m.wv),
            bv: self.leaf(&m.bv),
            wo: self.leaf(&m.wo),
            bo: self.leaf(&m.bo),
        }
    }
}

/// Registers every parameter tensor as a tape leaf, in `param_list` order.
pub(crate) fn register_params(tape: &mut Tape, params: &ModelParams) -> NodeParams {
    let mut reg = Registrar { tape, flat: Vec::new() };
    let input_proj = reg.linear(&params.input_proj);
    let encoder = params
        .encoder
        .iter()
        .map(|blk| NodeEncoderBlock {
            attn: reg.mhsa(&blk.attn),
            ln1_gamma: reg.leaf(&blk.ln1.gamma),
            ln1_beta: reg.leaf(&blk.ln1.beta),
            ffn1: reg.linear(&blk.ffn1),
            ffn2: reg.linear(&blk.ffn2),
            ln2_gamma: reg.leaf(&blk.ln2.gamma),
            ln2_beta: reg.leaf(&blk.ln2.beta),
        })
        .collect();
    let decoders = params
        .decoders
        .iter()
        .map(|d| (reg.leaf(&d.proj), reg.leaf(&d.embedding)))
        .collect();
    let temporal_attn = reg.mhsa(&params.temporal_attn);
    let appliance_attn = reg.mhsa(&params.appliance_attn);
    let reg_heads = params.reg_heads.iter().map(|l| reg.linear(l)).collect();
    let cls_heads = params.cls_heads.iter().map(|l| reg.linear(l)).collect();
    debug_assert_eq!(reg.flat.len(), params.param_list().len());
    NodeParams {
        input_proj,
        encoder,
        decoders,
        temporal_attn,
        appliance_attn,
        reg_heads,
        cls_heads,
        flat: reg.flat,
    }
}

/// Raw (power, voltage, current) features of a run of samples, row-major
/// seq_len x 3. Every consumer of windows goes through this function so the
/// streaming and batch paths assemble bit-identical inputs.
pub fn window_features(samples: &[Sample]) -> Vec<f64> {
    let mut out = Vec::with_capacity(samples.len() * 3);
    for s in samples {
        out.push(s.main_p);
        out.push(s.main_v);
        out.push(s.main_i);
    }
    out
}

fn normalize_features(raw: &[f64], norm: &NormStats) -> Vec<f64> {
    raw.iter()
        .enumerate()
        .map(|(i, v)| (v - norm.input_mean[i % 3]) / norm.input_sigma[i % 3])
        .collect()
}

fn linear_node(tape: &mut Tape, x: NodeId, l: &NodeLinear) -> NodeId {
    let y = tape.matmul(x, l.w);
    tape.add_bias_row(y, l.b)
}

/// Standard multi-head self-attention over the time axis of x (T x hidden).
fn temporal_mhsa(
    tape: &mut Tape,
    x: NodeId,
    w: &NodeMhsa,
    n_heads: usize,
) -> NodeId {
    let (_, hidden) = tape.dims(x);
    let d = hidden / n_heads;
    let scale = 1.0 / (d as f64).sqrt();
    let q = tape.matmul(x, w.wq);
    let q = tape.add_bias_row(q, w.bq);
    let k = tape.matmul(x, w.wk);
    let k = tape.add_bias_row(k, w.bk);
    let v = tape.matmul(x, w.wv);
    let v = tape.add_bias_row(v, w.bv);
    let triples: Vec<(NodeId, NodeId, NodeId)> = (0..n_heads)
        .map(|h| {
            let qh = tape.col_slice(q, h * d, d);
            let kh = tape.col_slice(k, h * d, d);
            let vh = tape.col_slice(v, h * d, d);
            (qh, kh, vh)
        })
        .collect();
    let heads = tape.attention_many(&triples, scale);
    let cat = tape.concat_cols(&heads);
    let out = tape.matmul(cat, w.wo);
    tape.add_bias_row(out, w.bo)
}

/// Multi-head attention across the appliance axis, applied independently at
/// every time step. Scores between appliance tracks are per-row dot products
/// of their head slices, so the whole pass stays in T-row matrices.
fn appliance_axis_attention(
    tape: &mut Tape,
    tracks: &[NodeId],
    w: &NodeMhsa,
    n_heads: usize,
) -> Vec<NodeId> {
    let n_app = tracks.len();
    let (_, hidden) = tape.dims(tracks[0]);
    let d = hidden / n_heads;
    let scale = 1.0 / (d as f64).sqrt();

    let project = |tape: &mut Tape, wmat: NodeId, bias: NodeId| -> Vec<NodeId> {
        tracks
            .iter()
            .map(|&t| {
                let p = tape.matmul(t, wmat);
                tape.add_bias_row(p, bias)
            })
            .collect()
    };
    let q_all = project(tape, w.wq, w.bq);
    let k_all = project(tape, w.wk, w.bk);
    let v_all = project(tape, w.wv, w.bv);

    // Per-head slices of K and V for every appliance.
    let slice_heads = |tape: &mut Tape, xs: &[NodeId]| -> Vec<Vec<NodeId>> {
        xs.iter()
            .map(|&x| (0..n_heads).map(|h| tape.col_slice(x, h * d, d)).collect())
            .collect()
    };
    let k_heads = slice_heads(tape, &k_all);
    let v_heads = slice_heads(tape, &v_all);

    tracks
        .iter()
        .enumerate()
        .map(|(i, &track)| {
            let head_outputs: Vec<NodeId> = (0..n_heads)
                .map(|h| {
                    let qh = tape.col_slice(q_all[i], h * d, d);
                    let score_cols: Vec<NodeId> = (0..n_app)
                        .map(|j| tape.row_dot(qh, k_heads[j][h]))
                        .collect();
                    let scores = tape.concat_cols(&score_cols);
                    let scores = tape.scale(scores, scale);
                    let weights = tape.softmax_rows(scores);
                    let mut ctx: Option<NodeId> = None;
                    for j in 0..n_app {
                        let wj = tape.col_slice(weights, j, 1);
                        let term = tape.row_scale(v_heads[j][h], wj);
                        ctx = Some(match ctx {
                            Some(acc) => tape.add(acc, term),
                            None => term,
                        });
                    }
                    ctx.expect("at least one appliance")
                })
                .collect();
            let cat = tape.concat_cols(&head_outputs);
            let o = tape.matmul(cat, w.wo);
            let o = tape.add_bias_row(o, w.bo);
            tape.add(track, o)
        })
        .collect()
}

pub(crate) struct ForwardNodes {
    /// T x n_appliances predicted power, watts.
    pub power: NodeId,
    /// T x n_appliances ON probabilities.
    pub prob: NodeId,
    pub params: NodeParams,
}

/// Builds the full forward graph for one window of raw features (T x 3).
/// `dropout_rng` enables training-mode dropout.
pub(crate) fn forward_on_tape(
    tape: &mut Tape,
    params: &ModelParams,
    raw_window: &[f64],
    mut dropout_rng: Option<&mut Rng>,
) -> ForwardNodes {
    let cfg = &params.config;
    let t_len = raw_window.len() / cfg.input_size;
    let nodes = register_params(tape, params);

    let normalized = normalize_features(raw_window, &params.norm);
    let x_in = tape.leaf_from(t_len, cfg.input_size, &normalized);
    let mut x = linear_node(tape, x_in, &nodes.input_proj);

    let p_drop = cfg.dropout;
    let maybe_dropout = |tape: &mut Tape, id: NodeId, rng: &mut Option<&mut Rng>| -> NodeId {
        match rng {
            Some(r) if p_drop > 0.0 => tape.dropout(id, p_drop, || r.uniform()),
            _ => id,
        }
    };

    for blk in &nodes.encoder {
        let attn_out = temporal_mhsa(tape, x, &blk.attn, cfg.n_heads);
        let attn_out = maybe_dropout(tape, attn_out, &mut dropout_rng);
        let sum = tape.add(x, attn_out);
        let normed = tape.layer_norm_rows(sum, blk.ln1_gamma, blk.ln1_beta);
        let f1 = linear_node(tape, normed, &blk.ffn1);
        // Softplus rather than relu: the smooth activation keeps finite
        // difference gradient checks meaningful at epsilon = 1e-4.
        let f1 = tape.softplus(f1);
        let f2 = linear_node(tape, f1, &blk.ffn2);
        let f2 = maybe_dropout(tape, f2, &mut dropout_rng);
        let sum2 = tape.add(normed, f2);
        x = tape.layer_norm_rows(sum2, blk.ln2_gamma, blk.ln2_beta);
    }

    // Fan out to per-appliance tracks.
    let tracks: Vec<NodeId> = nodes
        .decoders
        .iter()
        .map(|&(proj, emb)| {
            let p = tape.matmul(x, proj);
            tape.add_bias_row(p, emb)
        })
        .collect();

    // Dual-axis attention: temporal within each track, then across the
    // appliance axis, residual connections on both.
    let tracks: Vec<NodeId> = tracks
        .iter()
        .map(|&t| {
            let a = temporal_mhsa(tape, t, &nodes.temporal_attn, cfg.n_heads);
            tape.add(t, a)
        })
        .collect();
    let tracks = appliance_axis_attention(tape, &tracks, &nodes.appliance_attn, cfg.n_heads);

    // Heads: softplus keeps regression output non-negative; the per-appliance
    // power scale maps it back to watts.
    let power_cols: Vec<NodeId> = tracks
        .iter()
        .zip(&nodes.reg_heads)
        .zip(&params.norm.power_scale)
        .map(|((&z, head), &scale)| {
            let raw = linear_node(tape, z, head);
            let pos = tape.softplus(raw);
            tape.scale_cols(pos, vec![scale])
        })
        .collect();
    let prob_cols: Vec<NodeId> = tracks
        .iter()
        .zip(&nodes.cls_heads)
        .map(|(&z, head)| {
            let raw = linear_node(tape, z, head);
            tape.sigmoid(raw)
        })
        .collect();

    ForwardNodes {
        power: tape.concat_cols(&power_cols),
        prob: tape.concat_cols(&prob_cols),
        params: nodes,
    }
}

/// Runs the model on one window of raw physical inputs (seq_len x 3).
/// Returns per-appliance power (watts) and ON probability, both shaped
/// `[n_appliances, seq_len]`. Dropout is active only in train mode, driven by
/// the configured seed.
pub fn forward(params: &ModelParams, window: &Tensor, train_mode: bool) -> Result<(Tensor, Tensor)> {
    let cfg = &params.config;
    if window.shape != [cfg.seq_len, cfg.input_size] {
        return Err(Error::Shape(format!(
            "window shape {:?} does not match [seq_len={}, input_size={}]",
            window.shape, cfg.seq_len, cfg.input_size
        )));
    }
    let mut tape = Tape::new(false);
    let mut rng = Rng::new(cfg.seed);
    let out = forward_on_tape(
        &mut tape,
        params,
        &window.data,
        train_mode.then_some(&mut rng),
    );
    let t_len = cfg.seq_len;
    let n_app = cfg.n_appliances;
    let transpose = |flat: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; flat.len()];
        for t in 0..t_len {
            for a in 0..n_app {
                out[a * t_len + t] = flat[t * n_app + a];
            }
        }
        out
    };
    let power = Tensor::new(vec![n_app, t_len], transpose(tape.value(out.power)));
    let prob = Tensor::new(vec![n_app, t_len], transpose(tape.value(out.prob)));
    Ok((power, prob))
}

/// One per-sample prediction extracted from a full-window inference.
#[derive(Debug, Clone, PartialEq)]
pub struct PointPrediction {
    pub timestamp: f64,
    pub power: Vec<f64>,
    pub on_prob: Vec<f64>,
}

/// Slides a window one sample at a time and emits the newest time step of
/// every full window, mirroring what the streaming pipeline produces.
pub fn batch_infer(params: &ModelParams, dataset: &Dataset) -> Result<Vec<PointPrediction>> {
    let seq = params.config.seq_len;
    let n = dataset.len();
    if n < seq {
        return Err(Error::Validation(format!(
            "dataset has {n} samples, shorter than seq_len {seq}"
        )));
    }
    let mut out = Vec::with_capacity(n - seq + 1);
    let mut tape = Tape::new(false);
    for end in seq..=n {
        let window = &dataset.samples[end - seq..end];
        let raw = window_features(window);
        tape.recycle();
        let nodes = forward_on_tape(&mut tape, params, &raw, None);
        let n_app = params.config.n_appliances;
        let power_flat = tape.value(nodes.power);
        let prob_flat = tape.value(nodes.prob);
        let last = seq - 1;
        out.push(PointPrediction {
            timestamp: window[last].timestamp,
            power: power_flat[last * n_app..(last + 1) * n_app].to_vec(),
            on_prob: prob_flat[last * n_app..(last + 1) * n_app].to_vec(),
        });
    }
    Ok(out)
}

/// Dense per-appliance predictions over a whole dataset using adjacent
/// windows (stride = seq_len); the final window is aligned to the end, so
/// every sample is covered once the dataset is at least one window long.
pub fn predict_series(params: &ModelParams, dataset: &Dataset) -> Result<Vec<Vec<f64>>> {
    predict_series_with_prob(params, dataset).map(|(power, _)| power)
}

/// Like [`predict_series`] but also returns the ON-probability series.
pub fn predict_series_with_prob(
    params: &ModelParams,
    dataset: &Dataset,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let seq = params.config.seq_len;
    let n_app = params.config.n_appliances;
    let n = dataset.len();
    if n < seq {
        return Err(Error::Validation(format!(
            "dataset has {n} samples, shorter than seq_len {seq}"
        )));
    }
    let mut power = vec![vec![0.0; n]; n_app];
    let mut prob = vec![vec![0.0; n]; n_app];
    let mut starts: Vec<usize> = (0..n.saturating_sub(seq) + 1).step_by(seq).collect();
    if let Some(&last) = starts.last() {
        if last + seq < n {
            starts.push(n - seq);
        }
    }
    let mut tape = Tape::new(false);
    for start in starts {
        let raw = window_features(&dataset.samples[start..start + seq]);
        tape.recycle();
        let nodes = forward_on_tape(&mut tape, params, &raw, None);
        let p_flat = tape.value(nodes.power);
        let c_flat = tape.value(nodes.prob);
        for t in 0..seq {
            for a in 0..n_app {
                power[a][start + t] = p_flat[t * n_app + a];
                prob[a][start + t] = c_flat[t * n_app + a];
            }
        }
    }
    Ok((power, prob))
}
