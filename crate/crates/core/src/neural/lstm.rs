use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::matrix::{axpy, gemv, gemv_acc, gemv_t_acc, ger_acc};
use super::{dropout, log_softmax};
use crate::error::{Error, Result};
use crate::lexicon::Phone;
use crate::rng::Rng;

/// Dimensions of a (possibly concept-conditioned) LSTM language model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmShape {
    /// Output classes and embedding rows: phone symbols plus eos.
    pub vocab: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    /// Number of concepts when the initial state is a projection of a
    /// one-hot concept vector.
    pub concepts: Option<usize>,
}

/// A named, contiguous block of the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct LayerOffsets {
    w_ih: usize,
    w_hh: usize,
    bias: usize,
    input_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Offsets {
    embedding: usize,
    layers: Vec<LayerOffsets>,
    init_proj: Option<usize>,
    out_w: usize,
    out_b: usize,
}

impl LstmShape {
    pub fn validate(&self) -> Result<()> {
        if self.vocab < 2 || self.embed_dim == 0 || self.hidden_dim == 0 || self.layers == 0 {
            return Err(Error::config(format!("degenerate LSTM shape {self:?}")));
        }
        if self.concepts == Some(0) {
            return Err(Error::config("conditional model needs at least one concept"));
        }
        Ok(())
    }

    /// Parameter blocks in storage order. Gate rows are ordered input, forget,
    /// cell candidate, output.
    pub fn segments(&self) -> Vec<Segment> {
        let h = self.hidden_dim;
        let mut segs = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, rows: usize, cols: usize| {
            segs.push(Segment {
                name,
                rows,
                cols,
                offset,
            });
            offset += rows * cols;
        };
        push("embedding".into(), self.vocab, self.embed_dim);
        for l in 0..self.layers {
            let input = if l == 0 { self.embed_dim } else { h };
            push(format!("layer{l}.w_ih"), 4 * h, input);
            push(format!("layer{l}.w_hh"), 4 * h, h);
            push(format!("layer{l}.bias"), 4 * h, 1);
        }
        if let Some(k) = self.concepts {
            push("init_proj".into(), h, k);
        }
        push("output.weight".into(), self.vocab, h);
        push("output.bias".into(), self.vocab, 1);
        segs
    }

    pub fn param_count(&self) -> usize {
        self.segments().iter().map(Segment::len).sum()
    }

    fn offsets(&self) -> Offsets {
        let segs = self.segments();
        let find = |name: &str| segs.iter().find(|s| s.name == name).map(|s| s.offset);
        Offsets {
            embedding: 0,
            layers: (0..self.layers)
                .map(|l| LayerOffsets {
                    w_ih: find(&format!("layer{l}.w_ih")).unwrap(),
                    w_hh: find(&format!("layer{l}.w_hh")).unwrap(),
                    bias: find(&format!("layer{l}.bias")).unwrap(),
                    input_dim: if l == 0 { self.embed_dim } else { self.hidden_dim },
                })
                .collect(),
            init_proj: find("init_proj"),
            out_w: find("output.weight").unwrap(),
            out_b: find("output.bias").unwrap(),
        }
    }
}

/// All trainable parameters, stored as one flat vector with named segments.
/// The same type doubles as the gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    shape: LstmShape,
    segments: Vec<Segment>,
    offsets: Offsets,
    values: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(shape: LstmShape) -> Result<Self> {
        shape.validate()?;
        let segments = shape.segments();
        let n = segments.iter().map(Segment::len).sum();
        Ok(Self {
            shape,
            offsets: shape.offsets(),
            segments,
            values: vec![0.0; n],
        })
    }

    /// Random initialization: embeddings ~ N(0, 1); recurrent, output and
    /// projection weights ~ U(-1/√fan, 1/√fan); forget-gate bias 1.
    pub fn init(shape: LstmShape, rng: &mut Rng) -> Result<Self> {
        let mut p = Self::zeros(shape)?;
        let h = shape.hidden_dim;
        let k_h = 1.0 / (h as f64).sqrt();
        for seg in p.segments.clone() {
            let bound = match seg.name.as_str() {
                "embedding" => None,
                "init_proj" => Some(1.0 / (seg.cols as f64).sqrt()),
                "output.bias" => Some(0.0),
                _ => Some(k_h),
            };
            for v in &mut p.values[seg.range()] {
                *v = match bound {
                    None => rng.sample(StandardNormal),
                    Some(0.0) => 0.0,
                    Some(b) => rng.random_range(-b..b),
                };
            }
            if seg.name.ends_with(".bias") && seg.name.starts_with("layer") {
                for v in &mut p.values[seg.offset + h..seg.offset + 2 * h] {
                    *v += 1.0;
                }
            }
        }
        Ok(p)
    }

    pub fn from_values(shape: LstmShape, values: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(shape)?;
        if values.len() != p.values.len() {
            return Err(Error::data(format!(
                "shape {shape:?} needs {} parameters, got {}",
                p.values.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(format!(
                "non-finite value in {}",
                p.segment_of(i).name
            )));
        }
        p.values = values;
        Ok(p)
    }

    pub fn shape(&self) -> &LstmShape {
        &self.shape
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Segment containing flat index `i`.
    pub fn segment_of(&self, i: usize) -> &Segment {
        self.segments
            .iter()
            .find(|s| s.range().contains(&i))
            .expect("index within parameter vector")
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        let s = self.segments.iter().find(|s| s.name == name)?;
        Some(&self.values[s.range()])
    }

    pub fn segment_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let r = self.segments.iter().find(|s| s.name == name)?.range();
        Some(&mut self.values[r])
    }

    pub fn fill_zero(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Zeroes the output projection, turning the model into a uniform
    /// predictor over `vocab` classes.
    pub fn zero_output_layer(&mut self) {
        for name in ["output.weight", "output.bias"] {
            self.segment_mut(name).unwrap().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    fn embedding_row(&self, id: Phone) -> &[f64] {
        let d = self.shape.embed_dim;
        let o = self.offsets.embedding + id as usize * d;
        &self.values[o..o + d]
    }

    /// Column `concept` of the initial-state projection.
    fn init_state(&self, concept: usize) -> Vec<f64> {
        let k = self.shape.concepts.expect("conditional model");
        let o = self.offsets.init_proj.expect("conditional model");
        (0..self.shape.hidden_dim)
            .map(|r| self.values[o + r * k + concept])
            .collect()
    }
}

/// Activations retained by [`lstm_forward`] for an exact backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    inputs: Vec<Phone>,
    h0: Vec<f64>,
    /// Per layer, `steps × input_dim`: layer input after dropout.
    x: Vec<Vec<f64>>,
    /// Per layer, dropout multipliers applied to the input.
    masks: Vec<Option<Vec<f64>>>,
    /// Per layer, `steps × 4H` activated gates (i, f, g, o).
    gates: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    tanh_c: Vec<Vec<f64>>,
    h: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn steps(&self) -> usize {
        self.inputs.len()
    }

    /// Top-layer hidden state after consuming input `t`.
    pub fn hidden(&self, t: usize) -> &[f64] {
        let top = self.h.len() - 1;
        let hd = self.h0.len();
        &self.h[top][t * hd..(t + 1) * hd]
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Runs the stacked LSTM over `input_ids`. `h0` initializes the first
/// layer's hidden state (zero when `None`); deeper layers and all cells start
/// at zero. Dropout, when given, is applied to the embeddings and to the
/// outputs passed between layers.
pub fn lstm_forward(
    params: &LstmParams,
    input_ids: &[Phone],
    h0: Option<&[f64]>,
    mut dropout_rng: Option<(f64, &mut Rng)>,
) -> Result<ForwardCache> {
    let s = &params.shape;
    let hd = s.hidden_dim;
    let steps = input_ids.len();
    if let Some(&bad) = input_ids.iter().find(|&&id| id as usize >= s.vocab) {
        return Err(Error::data(format!(
            "phone id {bad} out of range for vocabulary of {}",
            s.vocab
        )));
    }
    let h0 = match h0 {
        Some(v) if v.len() != hd => {
            return Err(Error::data(format!(
                "initial state has {} entries, hidden size is {hd}",
                v.len()
            )))
        }
        Some(v) => v.to_vec(),
        None => vec![0.0; hd],
    };
    let v = &params.values;
    let mut cache = ForwardCache {
        inputs: input_ids.to_vec(),
        h0,
        x: Vec::with_capacity(s.layers),
        masks: Vec::with_capacity(s.layers),
        gates: Vec::with_capacity(s.layers),
        c: Vec::with_capacity(s.layers),
        tanh_c: Vec::with_capacity(s.layers),
        h: Vec::with_capacity(s.layers),
    };

    let mut layer_in: Vec<f64> = Vec::with_capacity(steps * s.embed_dim);
    for &id in input_ids {
        layer_in.extend_from_slice(params.embedding_row(id));
    }
    let zeros = vec![0.0; hd];
    let mut pre = vec![0.0; 4 * hd];
    for (l, lo) in params.offsets.layers.iter().enumerate() {
        let din = lo.input_dim;
        let mask = match dropout_rng.as_mut() {
            Some((rate, rng)) => dropout(&mut layer_in, *rate, rng, true),
            None => None,
        };
        let w_ih = &v[lo.w_ih..lo.w_ih + 4 * hd * din];
        let w_hh = &v[lo.w_hh..lo.w_hh + 4 * hd * hd];
        let bias = &v[lo.bias..lo.bias + 4 * hd];
        let mut gates = vec![0.0; steps * 4 * hd];
        let mut c = vec![0.0; steps * hd];
        let mut tc = vec![0.0; steps * hd];
        let mut h = vec![0.0; steps * hd];
        for t in 0..steps {
            let (h_prev, c_prev): (&[f64], &[f64]) = if t == 0 {
                (if l == 0 { &cache.h0 } else { &zeros }, &zeros)
            } else {
                (&h[(t - 1) * hd..t * hd], &c[(t - 1) * hd..t * hd])
            };
            pre.copy_from_slice(bias);
            gemv_acc(4 * hd, din, w_ih, &layer_in[t * din..(t + 1) * din], &mut pre);
            gemv_acc(4 * hd, hd, w_hh, h_prev, &mut pre);
            let g = &mut gates[t * 4 * hd..(t + 1) * 4 * hd];
            let mut c_t = vec![0.0; hd];
            for j in 0..hd {
                let i_g = sigmoid(pre[j]);
                let f_g = sigmoid(pre[hd + j]);
                let g_g = pre[2 * hd + j].tanh();
                let o_g = sigmoid(pre[3 * hd + j]);
                g[j] = i_g;
                g[hd + j] = f_g;
                g[2 * hd + j] = g_g;
                g[3 * hd + j] = o_g;
                c_t[j] = f_g * c_prev[j] + i_g * g_g;
            }
            for j in 0..hd {
                let th = c_t[j].tanh();
                tc[t * hd + j] = th;
                h[t * hd + j] = g[3 * hd + j] * th;
            }
            c[t * hd..(t + 1) * hd].copy_from_slice(&c_t);
        }
        cache.x.push(std::mem::take(&mut layer_in));
        cache.masks.push(mask);
        cache.gates.push(gates);
        cache.c.push(c);
        cache.tanh_c.push(tc);
        layer_in = h.clone();
        cache.h.push(h);
    }
    Ok(cache)
}

/// `W·h + b` over all output classes.
pub fn next_phone_logits(params: &LstmParams, h: &[f64]) -> Vec<f64> {
    let s = &params.shape;
    let o = &params.offsets;
    let mut logits = vec![0.0; s.vocab];
    gemv(
        s.vocab,
        s.hidden_dim,
        &params.values[o.out_w..o.out_w + s.vocab * s.hidden_dim],
        h,
        &mut logits,
    );
    axpy(1.0, &params.values[o.out_b..o.out_b + s.vocab], &mut logits);
    logits
}

/// Backpropagates `d_top` (gradient w.r.t. every top-layer hidden state,
/// `steps × H`) through the whole sequence, accumulating parameter gradients
/// into `grads`. Returns the gradient w.r.t. the first layer's initial
/// hidden state.
pub fn backward(
    params: &LstmParams,
    cache: &ForwardCache,
    d_top: &[f64],
    grads: &mut LstmParams,
) -> Vec<f64> {
    let s = &params.shape;
    let hd = s.hidden_dim;
    let steps = cache.steps();
    let nl = s.layers;
    debug_assert_eq!(d_top.len(), steps * hd);
    let v = &params.values;
    let g = &mut grads.values;

    // d_in[l]: gradient flowing into layer l's hidden outputs from above.
    let mut d_from_above = d_top.to_vec();
    let mut dh0 = vec![0.0; hd];
    let zeros = vec![0.0; hd];
    let mut da = vec![0.0; 4 * hd];
    for l in (0..nl).rev() {
        let lo = &params.offsets.layers[l];
        let din = lo.input_dim;
        let w_ih = &v[lo.w_ih..lo.w_ih + 4 * hd * din];
        let w_hh = &v[lo.w_hh..lo.w_hh + 4 * hd * hd];
        let gates = &cache.gates[l];
        let c = &cache.c[l];
        let tc = &cache.tanh_c[l];
        let h = &cache.h[l];
        let x = &cache.x[l];
        let mut dx = vec![0.0; steps * din];
        let mut dh_next = vec![0.0; hd];
        let mut dc_next = vec![0.0; hd];
        for t in (0..steps).rev() {
            let gt = &gates[t * 4 * hd..(t + 1) * 4 * hd];
            let c_prev: &[f64] = if t == 0 {
                &zeros
            } else {
                &c[(t - 1) * hd..t * hd]
            };
            let h_prev: &[f64] = if t == 0 {
                if l == 0 {
                    &cache.h0
                } else {
                    &zeros
                }
            } else {
                &h[(t - 1) * hd..t * hd]
            };
            for j in 0..hd {
                let dh = d_from_above[t * hd + j] + dh_next[j];
                let (i_g, f_g, g_g, o_g) = (gt[j], gt[hd + j], gt[2 * hd + j], gt[3 * hd + j]);
                let th = tc[t * hd + j];
                let dc = dc_next[j] + dh * o_g * (1.0 - th * th);
                da[j] = dc * g_g * i_g * (1.0 - i_g);
                da[hd + j] = dc * c_prev[j] * f_g * (1.0 - f_g);
                da[2 * hd + j] = dc * i_g * (1.0 - g_g * g_g);
                da[3 * hd + j] = dh * th * o_g * (1.0 - o_g);
                dc_next[j] = dc * f_g;
            }
            ger_acc(din, &da, &x[t * din..(t + 1) * din], &mut g[lo.w_ih..lo.w_ih + 4 * hd * din]);
            ger_acc(hd, &da, h_prev, &mut g[lo.w_hh..lo.w_hh + 4 * hd * hd]);
            axpy(1.0, &da, &mut g[lo.bias..lo.bias + 4 * hd]);
            gemv_t_acc(din, w_ih, &da, &mut dx[t * din..(t + 1) * din]);
            dh_next.iter_mut().for_each(|d| *d = 0.0);
            gemv_t_acc(hd, w_hh, &da, &mut dh_next);
        }
        if l == 0 {
            dh0 = dh_next;
        }
        if let Some(mask) = &cache.masks[l] {
            for (d, m) in dx.iter_mut().zip(mask) {
                *d *= m;
            }
        }
        if l > 0 {
            d_from_above = dx;
        } else {
            let d = s.embed_dim;
            for (t, &id) in cache.inputs.iter().enumerate() {
                let o = params.offsets.embedding + id as usize * d;
                axpy(1.0, &dx[t * d..(t + 1) * d], &mut g[o..o + d]);
            }
        }
    }
    dh0
}

/// Forward pass over one word together with per-step next-phone
/// distributions.
#[derive(Clone, Debug)]
pub struct WordPass {
    pub cache: ForwardCache,
    pub targets: Vec<Phone>,
    pub concept: Option<usize>,
    /// Natural-log probability of each target phone.
    pub log_probs: Vec<f64>,
    /// `steps × vocab` log-softmax outputs.
    log_dist: Vec<f64>,
}

impl WordPass {
    pub fn total_log_prob(&self) -> f64 {
        self.log_probs.iter().sum()
    }

    /// Log-probabilities over all classes at step `t`.
    pub fn log_distribution(&self, t: usize) -> &[f64] {
        let v = self.log_dist.len() / self.targets.len();
        &self.log_dist[t * v..(t + 1) * v]
    }
}

fn check_concept(params: &LstmParams, concept: Option<usize>) -> Result<Option<Vec<f64>>> {
    match (concept, params.shape.concepts) {
        (None, _) => Ok(None),
        (Some(_), None) => Err(Error::config(
            "concept supplied to an unconditioned model",
        )),
        (Some(c), Some(k)) if c >= k => Err(Error::data(format!(
            "concept id {c} out of range for {k} concepts"
        ))),
        (Some(c), Some(_)) => Ok(Some(params.init_state(c))),
    }
}

/// Scores an eos-terminated phone sequence. The first input is eos (used as
/// the beginning-of-word symbol) and each later input is the previous
/// target, so every phone including the final eos is predicted once.
pub fn word_forward(
    params: &LstmParams,
    phones: &[Phone],
    concept: Option<usize>,
    dropout_rng: Option<(f64, &mut Rng)>,
) -> Result<WordPass> {
    if phones.is_empty() {
        return Err(Error::data("empty phone sequence"));
    }
    let vocab = params.shape.vocab;
    let bos = (vocab - 1) as Phone;
    let h0 = check_concept(params, concept)?;
    let mut inputs = Vec::with_capacity(phones.len());
    inputs.push(bos);
    inputs.extend_from_slice(&phones[..phones.len() - 1]);
    let cache = lstm_forward(params, &inputs, h0.as_deref(), dropout_rng)?;
    let mut log_dist = vec![0.0; phones.len() * vocab];
    let mut log_probs = Vec::with_capacity(phones.len());
    for (t, &target) in phones.iter().enumerate() {
        if target as usize >= vocab {
            return Err(Error::data(format!("target id {target} out of range")));
        }
        let logits = next_phone_logits(params, cache.hidden(t));
        let out = &mut log_dist[t * vocab..(t + 1) * vocab];
        log_softmax(&logits, out);
        log_probs.push(out[target as usize]);
    }
    Ok(WordPass {
        cache,
        targets: phones.to_vec(),
        concept,
        log_probs,
        log_dist,
    })
}

/// Accumulates gradients of `scale · Σₜ −ln p(targetₜ)` into `grads`.
pub fn word_backward(params: &LstmParams, pass: &WordPass, scale: f64, grads: &mut LstmParams) {
    let s = &params.shape;
    let (vocab, hd) = (s.vocab, s.hidden_dim);
    let o = params.offsets.clone();
    let steps = pass.targets.len();
    let mut d_top = vec![0.0; steps * hd];
    let mut dlogits = vec![0.0; vocab];
    for t in 0..steps {
        for (d, &lp) in dlogits.iter_mut().zip(pass.log_distribution(t)) {
            *d = scale * lp.exp();
        }
        dlogits[pass.targets[t] as usize] -= scale;
        let h = pass.cache.hidden(t);
        ger_acc(hd, &dlogits, h, &mut grads.values[o.out_w..o.out_w + vocab * hd]);
        axpy(1.0, &dlogits, &mut grads.values[o.out_b..o.out_b + vocab]);
        gemv_t_acc(
            hd,
            &params.values[o.out_w..o.out_w + vocab * hd],
            &dlogits,
            &mut d_top[t * hd..(t + 1) * hd],
        );
    }
    let dh0 = backward(params, &pass.cache, &d_top, grads);
    if let (Some(c), Some(k), Some(ip)) = (pass.concept, s.concepts, o.init_proj) {
        for (r, d) in dh0.iter().enumerate() {
            grads.values[ip + r * k + c] += d;
        }
    }
}

/// Evaluation-mode per-step natural-log probabilities of `phones`.
pub fn word_log_probs(
    params: &LstmParams,
    phones: &[Phone],
    concept: Option<usize>,
) -> Result<Vec<f64>> {
    Ok(word_forward(params, phones, concept, None)?.log_probs)
}
