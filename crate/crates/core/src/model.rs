//! Decoder-only transformer: pre-norm residual blocks, learned absolute
//! positions, GELU feed-forward, optional tied output head.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::kernels::row_nll;
use crate::numerics::{DetRng, Graph, Parameter, Real, Tensor, Var, LAYER_NORM_EPS};

/// Standard deviation of the normal initialization.
pub const INIT_STD: f64 = 0.02;

const PER_LAYER: usize = 12;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub preset: String,
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub seq_len: usize,
    pub vocab_size: usize,
    /// Share the token embedding with the output projection.
    #[serde(default)]
    pub tie_embeddings: bool,
}

impl ModelConfig {
    /// Desk-scale model: 2 layers, width 64, 2 heads, 128 positions, 512 tokens.
    pub fn nano() -> Self {
        Self {
            preset: "nano".into(),
            n_layers: 2,
            d_model: 64,
            n_heads: 2,
            seq_len: 128,
            vocab_size: 512,
            tie_embeddings: false,
        }
    }

    /// Full-scale architectures. These count parameters with a tied head.
    pub fn gpt_126m() -> Self {
        Self::full_scale_config("gpt-126m", 12, 768, 12)
    }

    pub fn gpt_356m() -> Self {
        Self::full_scale_config("gpt-356m", 24, 1024, 16)
    }

    pub fn gpt_1_3b() -> Self {
        Self::full_scale_config("gpt-1.3b", 24, 2048, 32)
    }

    fn full_scale_config(name: &str, n_layers: usize, d_model: usize, n_heads: usize) -> Self {
        Self {
            preset: name.into(),
            n_layers,
            d_model,
            n_heads,
            seq_len: 2048,
            vocab_size: 64_000,
            tie_embeddings: true,
        }
    }

    pub fn from_preset(name: &str) -> Result<Self> {
        match name {
            "nano" => Ok(Self::nano()),
            "gpt-126m" => Ok(Self::gpt_126m()),
            "gpt-356m" => Ok(Self::gpt_356m()),
            "gpt-1.3b" => Ok(Self::gpt_1_3b()),
            other => Err(Error::Config(format!(
                "unknown model preset {other:?} (expected nano, gpt-126m, gpt-356m, gpt-1.3b)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("vocab_size", self.vocab_size),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.seq_len < 2 {
            return Err(Error::Config(format!(
                "seq_len must be at least 2, got {}",
                self.seq_len
            )));
        }
        Ok(())
    }

    /// Names and shapes of every trainable tensor, in storage order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (d, v, t) = (self.d_model, self.vocab_size, self.seq_len);
        let mut out = vec![
            ("tok_embedding".to_string(), vec![v, d]),
            ("pos_embedding".to_string(), vec![t, d]),
        ];
        for l in 0..self.n_layers {
            let p = |s: &str| format!("layer{l}.{s}");
            out.extend([
                (p("ln1.gain"), vec![d]),
                (p("ln1.bias"), vec![d]),
                (p("attn.w_qkv"), vec![d, 3 * d]),
                (p("attn.b_qkv"), vec![3 * d]),
                (p("attn.w_out"), vec![d, d]),
                (p("attn.b_out"), vec![d]),
                (p("ln2.gain"), vec![d]),
                (p("ln2.bias"), vec![d]),
                (p("mlp.w_fc"), vec![d, 4 * d]),
                (p("mlp.b_fc"), vec![4 * d]),
                (p("mlp.w_proj"), vec![4 * d, d]),
                (p("mlp.b_proj"), vec![d]),
            ]);
        }
        out.push(("ln_f.gain".into(), vec![d]));
        out.push(("ln_f.bias".into(), vec![d]));
        if !self.tie_embeddings {
            out.push(("head".into(), vec![d, v]));
        }
        out
    }
}

/// Closed-form count of trainable parameters:
/// `V d + T d + L (12 d^2 + 13 d) + 2 d` plus `d V` for an untied head.
pub fn count_parameters(config: &ModelConfig) -> usize {
    let (l, d, t, v) = (config.n_layers, config.d_model, config.seq_len, config.vocab_size);
    let head = if config.tie_embeddings { 0 } else { d * v };
    v * d + t * d + l * (12 * d * d + 13 * d) + 2 * d + head
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub params: Vec<Parameter>,
}

impl ModelParams {
    pub fn names(&self) -> Vec<String> {
        self.config.parameter_shapes().into_iter().map(|(n, _)| n).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Parameter::len).sum()
    }

    pub fn reset_moments(&mut self) {
        for p in &mut self.params {
            p.reset_moments();
        }
    }

    /// Parameter values converted to another precision.
    pub fn values_as<T: Real>(&self) -> Vec<Tensor<T>> {
        self.params.iter().map(|p| p.value.cast()).collect()
    }
}

/// Normal(0, 0.02) weights, residual output projections scaled by
/// `1 / sqrt(2 n_layers)`, zero biases, unit layer-norm gains.
pub fn init_model(config: &ModelConfig, rng: &mut DetRng) -> Result<ModelParams> {
    config.validate()?;
    let resid_std = INIT_STD / ((2 * config.n_layers) as f64).sqrt();
    let params = config
        .parameter_shapes()
        .into_iter()
        .map(|(name, shape)| {
            let value = if name.ends_with(".gain") {
                Tensor::full(&shape, 1.0)
            } else if name.contains(".b_") || name.ends_with(".bias") {
                Tensor::zeros(&shape)
            } else if name.ends_with("w_out") || name.ends_with("w_proj") {
                rng.normal_tensor(&shape, resid_std)
            } else {
                rng.normal_tensor(&shape, INIT_STD)
            };
            Parameter::new(value)
        })
        .collect();
    Ok(ModelParams {
        config: config.clone(),
        params,
    })
}

fn check_tokens(config: &ModelConfig, tokens: &[Vec<u32>]) -> Result<usize> {
    let Some(first) = tokens.first() else {
        return Err(Error::Input("empty batch".into()));
    };
    let len = first.len();
    if len == 0 {
        return Err(Error::Input("empty sequence".into()));
    }
    if len > config.seq_len {
        return Err(Error::Input(format!(
            "sequence of {len} tokens exceeds seq_len {}",
            config.seq_len
        )));
    }
    for s in tokens {
        if s.len() != len {
            return Err(Error::Input(format!("ragged batch: lengths {len} and {}", s.len())));
        }
        if let Some(&bad) = s.iter().find(|&&id| id as usize >= config.vocab_size) {
            return Err(Error::Index(format!(
                "token id {bad} outside vocabulary of {}",
                config.vocab_size
            )));
        }
    }
    Ok(len)
}

/// Records the forward pass on `g` and returns the `[batch * len, vocab]`
/// logits node. `p` holds one variable per tensor of `parameter_shapes`.
pub fn build_logits<T: Real>(g: &mut Graph<T>, config: &ModelConfig, p: &[Var], tokens: &[Vec<u32>]) -> Result<Var> {
    let len = check_tokens(config, tokens)?;
    let batch = tokens.len();
    let ids: Vec<usize> = tokens.iter().flat_map(|s| s.iter().map(|&t| t as usize)).collect();
    let positions: Vec<usize> = (0..batch).flat_map(|_| 0..len).collect();

    let tok = g.embedding(p[0], &ids)?;
    let pos = g.embedding(p[1], &positions)?;
    let mut x = g.add(tok, pos)?;
    for l in 0..config.n_layers {
        let w = &p[2 + PER_LAYER * l..2 + PER_LAYER * (l + 1)];
        let h = g.layer_norm(x, w[0], w[1], LAYER_NORM_EPS)?;
        let qkv = g.matmul(h, w[2])?;
        let qkv = g.add_row(qkv, w[3])?;
        let att = g.causal_attention(qkv, batch, len, config.n_heads)?;
        let att = g.matmul(att, w[4])?;
        let att = g.add_row(att, w[5])?;
        x = g.add(x, att)?;

        let h = g.layer_norm(x, w[6], w[7], LAYER_NORM_EPS)?;
        let f = g.matmul(h, w[8])?;
        let f = g.add_row(f, w[9])?;
        let f = g.gelu(f)?;
        let f = g.matmul(f, w[10])?;
        let f = g.add_row(f, w[11])?;
        x = g.add(x, f)?;
    }
    let base = 2 + PER_LAYER * config.n_layers;
    let x = g.layer_norm(x, p[base], p[base + 1], LAYER_NORM_EPS)?;
    if config.tie_embeddings {
        g.matmul_bt(x, p[0])
    } else {
        g.matmul(x, p[base + 2])
    }
}

/// Splits packed sequences into model inputs (all but the last token) and
/// next-token targets (all but the first).
fn shift_batch(batch: &[Vec<u32>]) -> Result<(Vec<Vec<u32>>, Vec<usize>)> {
    if batch.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    let mut inputs = Vec::with_capacity(batch.len());
    let mut targets = Vec::new();
    for s in batch {
        if s.len() < 2 {
            return Err(Error::Input(format!(
                "sequence of {} tokens has no next-token target",
                s.len()
            )));
        }
        inputs.push(s[..s.len() - 1].to_vec());
        targets.extend(s[1..].iter().map(|&t| t as usize));
    }
    Ok((inputs, targets))
}

/// Mean next-token cross-entropy over a batch, recorded on `g`.
pub fn build_loss<T: Real>(g: &mut Graph<T>, config: &ModelConfig, p: &[Var], batch: &[Vec<u32>]) -> Result<Var> {
    let (inputs, targets) = shift_batch(batch)?;
    let logits = build_logits(g, config, p, &inputs)?;
    g.cross_entropy(logits, &targets)
}

/// Next-token logits shaped `(batch, positions, vocab)`.
pub fn forward(params: &ModelParams, tokens: &[Vec<u32>]) -> Result<Tensor> {
    let mut g = Graph::<f32>::new();
    let vars: Vec<Var> = params.params.iter().map(|p| g.constant(p.value.clone())).collect();
    let logits = build_logits(&mut g, &params.config, &vars, tokens)?;
    let len = tokens[0].len();
    g.value(logits)
        .clone()
        .reshape(&[tokens.len(), len, params.config.vocab_size])
}

/// Mean next-token loss of `batch` and the gradient for every parameter,
/// in storage order.
pub fn loss_and_grads(params: &ModelParams, batch: &[Vec<u32>]) -> Result<(f32, Vec<Tensor>)> {
    let mut g = Graph::<f32>::new();
    let vars: Vec<Var> = params.params.iter().map(|p| g.param(p.value.clone())).collect();
    let loss = build_loss(&mut g, &params.config, &vars, batch)?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("training loss is {value}")));
    }
    let mut grads = g.backward(loss)?;
    let out = vars
        .iter()
        .zip(&params.params)
        .map(|(v, p)| grads.take(*v).unwrap_or_else(|| Tensor::zeros(p.value.shape())))
        .collect();
    Ok((value, out))
}

/// Per-sequence summed negative log-likelihood (in `f64`) and the number of
/// predicted positions, one entry per sequence.
pub fn sequence_nll(params: &ModelParams, batch: &[Vec<u32>]) -> Result<Vec<(f64, usize)>> {
    let (inputs, targets) = shift_batch(batch)?;
    let logits = forward(params, &inputs)?;
    let v = params.config.vocab_size;
    let per = inputs[0].len();
    let data = logits.data();
    let mut row = vec![0f64; v];
    let mut out = Vec::with_capacity(inputs.len());
    for b in 0..inputs.len() {
        let mut total = 0.0;
        for t in 0..per {
            let r = b * per + t;
            for (dst, &src) in row.iter_mut().zip(&data[r * v..(r + 1) * v]) {
                *dst = src as f64;
            }
            total += row_nll(&row, targets[r]);
        }
        out.push((total, per));
    }
    Ok(out)
}

/// Draws the next token from `softmax(logits / temperature)` at the last
/// context position. Contexts longer than `seq_len` keep their tail.
pub fn sample_next(params: &ModelParams, context: &[u32], temperature: f64, rng: &mut DetRng) -> Result<u32> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::Parameter(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if context.is_empty() {
        return Err(Error::Input("sampling needs a non-empty context".into()));
    }
    let start = context.len().saturating_sub(params.config.seq_len);
    let ctx = context[start..].to_vec();
    let logits = forward(params, std::slice::from_ref(&ctx))?;
    let v = params.config.vocab_size;
    let last = &logits.data()[(ctx.len() - 1) * v..ctx.len() * v];
    let scaled: Vec<f64> = last.iter().map(|&l| l as f64 / temperature).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scaled.iter().map(|&s| (s - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let u = rng.uniform() * total;
    let mut cum = 0.0;
    for (i, w) in weights.iter().enumerate() {
        cum += w;
        if u < cum {
            return Ok(i as u32);
        }
    }
    // u landed on the rounding gap at the top; take the last nonzero entry.
    Ok(weights.iter().rposition(|&w| w > 0.0).unwrap_or(0) as u32)
}
