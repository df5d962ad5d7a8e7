use super::config::{ModelConfig, Variant};
use super::params::{
    ModelParams, FDEL_ECHO_BIAS, FDEL_ECHO_WEIGHT, FDEL_TEMPLATE_BIAS, FDEL_TEMPLATE_WEIGHT,
    HEAD_BIAS, HEAD_WEIGHT,
};
use crate::error::{Error, Result};
use crate::neural::{AttentionShape, Graph, Tensor2, Var};
use crate::signal::{ieo, ExpandedSpectrum, SpectralEngine, TimeSignal};

/// Echo and template features inside a graph, each `batch × embed_dim`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BranchPair {
    pub echo: Var,
    pub tem: Var,
}

/// Intermediate handles of one attention block, for inspection in tests.
#[derive(Debug, Clone, Copy)]
pub struct BlockTrace {
    /// Attention outputs; one for self-attention, two (echo, template
    /// queries) for cross attention.
    pub attention: [Option<Var>; 2],
    pub values: [Option<Var>; 2],
}

/// Graph handles for every parameter tensor, aligned with [`ModelParams`].
#[derive(Debug)]
pub struct ParamVars<'a> {
    params: &'a ModelParams,
    vars: Vec<Var>,
}

impl<'a> ParamVars<'a> {
    /// Registers every tensor as a leaf. `trainable` decides whether
    /// gradients flow to them.
    pub fn bind(g: &mut Graph, params: &'a ModelParams, trainable: bool) -> Self {
        let vars = params
            .tensors()
            .iter()
            .map(|t| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.input(t.clone())
                }
            })
            .collect();
        Self { params, vars }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.params
            .position(name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter {name}")))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Applies a `token_dim × token_dim` projection to every token of `x`.
fn project(g: &mut Graph, x: Var, w: Var, token_dim: usize) -> Result<Var> {
    let (rows, cols) = g.value(x).shape();
    if cols == token_dim {
        return g.matmul_t(x, w);
    }
    if cols % token_dim != 0 {
        return Err(Error::ShapeMismatch {
            op: "project",
            lhs: (rows, cols),
            rhs: g.value(w).shape(),
        });
    }
    let tokens = cols / token_dim;
    let split = g.reshape(x, rows * tokens, token_dim)?;
    let p = g.matmul_t(split, w)?;
    g.reshape(p, rows, cols)
}

/// `SiLU(LNorm(W·y + y + b))`.
fn feedforward(g: &mut Graph, p: &ParamVars, y: Var, prefix: &str, suffix: &str) -> Result<Var> {
    let w = p.var(&format!("{prefix}.ffn{suffix}.weight"))?;
    let b = p.var(&format!("{prefix}.ffn{suffix}.bias"))?;
    let gamma = p.var(&format!("{prefix}.ffn_norm{suffix}.gamma"))?;
    let beta = p.var(&format!("{prefix}.ffn_norm{suffix}.beta"))?;
    let wy = g.matmul_t(y, w)?;
    let s = g.add(wy, y)?;
    let s = g.add_bias(s, b)?;
    let n = g.layer_norm(s, gamma, beta)?;
    Ok(g.silu(n))
}

/// Embedding layer on pre-expanded spectra: `SiLU(W·u' + b)` per branch.
///
/// `echo` is `batch × 2L`; `tem` is either `1 × 2L` (shared template,
/// broadcast after projection) or `batch × 2L`.
pub fn fd_embed(g: &mut Graph, p: &ParamVars, echo: Var, tem: Var) -> Result<BranchPair> {
    let batch = g.value(echo).rows();
    let e = g.linear(echo, p.var(FDEL_ECHO_WEIGHT)?, p.var(FDEL_ECHO_BIAS)?)?;
    let e = g.silu(e);
    let t = g.linear(tem, p.var(FDEL_TEMPLATE_WEIGHT)?, p.var(FDEL_TEMPLATE_BIAS)?)?;
    let mut t = g.silu(t);
    let trows = g.value(t).rows();
    if trows == 1 && batch != 1 {
        t = g.broadcast_rows(t, batch)?;
    } else if trows != batch {
        return Err(Error::ShapeMismatch {
            op: "fd_embed",
            lhs: g.value(echo).shape(),
            rhs: g.value(tem).shape(),
        });
    }
    Ok(BranchPair { echo: e, tem: t })
}

/// Double-branch cross attention: echo queries attend to template keys and
/// values and vice versa, each followed by residual LayerNorm and the
/// feedforward stage. Parameter sets `1` serve the echo output, `2` the
/// template output.
pub fn dbc_block(
    g: &mut Graph,
    p: &ParamVars,
    cfg: &ModelConfig,
    block: usize,
    input: BranchPair,
) -> Result<(BranchPair, BlockTrace)> {
    let prefix = format!("blocks.{block}");
    let w = cfg.token_dim();
    let t = cfg.tokens_per_branch;
    let shape = AttentionShape {
        q_tokens: t,
        kv_tokens: t,
        width: w,
        heads: cfg.n_heads,
    };
    let mut outs = [input.echo; 2];
    let mut trace = BlockTrace {
        attention: [None; 2],
        values: [None; 2],
    };
    let branches = [
        ("1", input.echo, input.tem),
        ("2", input.tem, input.echo),
    ];
    for (i, (suffix, own, other)) in branches.into_iter().enumerate() {
        let q = project(g, own, p.var(&format!("{prefix}.q{suffix}"))?, w)?;
        let k = project(g, other, p.var(&format!("{prefix}.k{suffix}"))?, w)?;
        let v = project(g, other, p.var(&format!("{prefix}.v{suffix}"))?, w)?;
        let a = g.attention(q, k, v, shape)?;
        let r = g.add(own, a)?;
        let y = g.layer_norm(
            r,
            p.var(&format!("{prefix}.attn_norm{suffix}.gamma"))?,
            p.var(&format!("{prefix}.attn_norm{suffix}.beta"))?,
        )?;
        outs[i] = feedforward(g, p, y, &prefix, suffix)?;
        trace.attention[i] = Some(a);
        trace.values[i] = Some(v);
    }
    Ok((
        BranchPair {
            echo: outs[0],
            tem: outs[1],
        },
        trace,
    ))
}

/// Both branches as one token sequence through shared projections, then
/// per-branch residual LayerNorm and feedforward with shared weights.
pub fn self_attention_block(
    g: &mut Graph,
    p: &ParamVars,
    cfg: &ModelConfig,
    block: usize,
    input: BranchPair,
) -> Result<(BranchPair, BlockTrace)> {
    let prefix = format!("blocks.{block}");
    let d = cfg.embed_dim;
    let w = cfg.token_dim();
    let tokens = 2 * cfg.tokens_per_branch;
    let x = g.concat_cols(input.echo, input.tem)?;
    let q = project(g, x, p.var(&format!("{prefix}.q"))?, w)?;
    let k = project(g, x, p.var(&format!("{prefix}.k"))?, w)?;
    let v = project(g, x, p.var(&format!("{prefix}.v"))?, w)?;
    let shape = AttentionShape {
        q_tokens: tokens,
        kv_tokens: tokens,
        width: w,
        heads: cfg.n_heads,
    };
    let a = g.attention(q, k, v, shape)?;
    let r = g.add(x, a)?;
    let gamma = p.var(&format!("{prefix}.attn_norm.gamma"))?;
    let beta = p.var(&format!("{prefix}.attn_norm.beta"))?;
    let mut outs = [input.echo; 2];
    for (i, out) in outs.iter_mut().enumerate() {
        let part = g.slice_cols(r, i * d, d)?;
        let y = g.layer_norm(part, gamma, beta)?;
        *out = feedforward(g, p, y, &prefix, "")?;
    }
    Ok((
        BranchPair {
            echo: outs[0],
            tem: outs[1],
        },
        BlockTrace {
            attention: [Some(a), None],
            values: [Some(v), None],
        },
    ))
}

/// Concatenate both branches, project to two logits, SiLU (unless
/// disabled), softmax. Returns `batch × 2` probabilities.
pub fn denoise_head(g: &mut Graph, p: &ParamVars, cfg: &ModelConfig, features: BranchPair) -> Result<Var> {
    let c = g.concat_cols(features.echo, features.tem)?;
    let mut logits = g.linear(c, p.var(HEAD_WEIGHT)?, p.var(HEAD_BIAS)?)?;
    if !cfg.head_softmax_only {
        logits = g.silu(logits);
    }
    Ok(g.softmax_rows(logits))
}

/// Mask bit from a probability pair; ties go to class 0.
pub fn mask_bit(prob: [f64; 2]) -> u8 {
    u8::from(prob[1] > prob[0])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub prob: [f64; 2],
    pub mask_bit: u8,
}

/// A recorded forward pass over a batch.
#[derive(Debug)]
pub struct ForwardGraph<'a> {
    pub graph: Graph,
    pub params: ParamVars<'a>,
    pub embedding: BranchPair,
    pub traces: Vec<BlockTrace>,
    pub probs: Var,
}

impl<'a> ForwardGraph<'a> {
    /// Records embedding, `depth` blocks and head on `echo` (`batch × 2L`)
    /// against `template` (`1 × 2L` or `batch × 2L`).
    pub fn build(
        cfg: &ModelConfig,
        params: &'a ModelParams,
        echo: Tensor2,
        template: Tensor2,
        trainable: bool,
    ) -> Result<Self> {
        cfg.validate()?;
        if echo.cols() != cfg.input_dim() || template.cols() != cfg.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "forward",
                lhs: echo.shape(),
                rhs: (1, cfg.input_dim()),
            });
        }
        let mut graph = Graph::new();
        let pv = ParamVars::bind(&mut graph, params, trainable);
        let x_echo = graph.input(echo);
        let x_tem = graph.input(template);
        let embedding = fd_embed(&mut graph, &pv, x_echo, x_tem)?;
        let mut h = embedding;
        let mut traces = Vec::with_capacity(cfg.depth);
        for b in 0..cfg.depth {
            let (next, trace) = match cfg.variant {
                Variant::DbcAttention => dbc_block(&mut graph, &pv, cfg, b, h)?,
                Variant::SelfAttention => self_attention_block(&mut graph, &pv, cfg, b, h)?,
            };
            traces.push(trace);
            h = next;
        }
        let probs = denoise_head(&mut graph, &pv, cfg, h)?;
        Ok(Self {
            graph,
            params: pv,
            embedding,
            traces,
            probs,
        })
    }

    pub fn predictions(&self) -> Vec<Prediction> {
        let p = self.graph.value(self.probs);
        (0..p.rows())
            .map(|r| {
                let prob = [p.get(r, 0), p.get(r, 1)];
                Prediction {
                    prob,
                    mask_bit: mask_bit(prob),
                }
            })
            .collect()
    }

    /// Mean cross-entropy and the gradient of every parameter tensor, in
    /// storage order.
    pub fn loss_and_grads(mut self, targets: &[usize]) -> Result<(f64, Vec<Tensor2>)> {
        let loss = self.graph.cross_entropy(self.probs, targets)?;
        let value = self.graph.value(loss).data()[0];
        let grads = self.graph.backward(loss)?;
        let out = self
            .params
            .vars()
            .iter()
            .zip(self.params.params.tensors())
            .map(|(&v, t)| grads.get_or_zeros(v, t.shape()))
            .collect();
        Ok((value, out))
    }
}

/// Inference wrapper around immutable parameters.
#[derive(Debug, Clone)]
pub struct StreakNet {
    cfg: ModelConfig,
    params: ModelParams,
}

impl StreakNet {
    pub fn new(cfg: ModelConfig, params: ModelParams) -> Result<Self> {
        cfg.validate()?;
        params.check_layout(&cfg)?;
        Ok(Self { cfg, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    /// Predictions for a batch of expanded echo spectra (`batch × 2L`).
    pub fn predict_spectra(&self, echo: Tensor2, template: &ExpandedSpectrum) -> Result<Vec<Prediction>> {
        if echo.rows() == 0 {
            return Ok(Vec::new());
        }
        let tem = Tensor2::row_vector(template.values().to_vec());
        let fwd = ForwardGraph::build(&self.cfg, &self.params, echo, tem, false)?;
        Ok(fwd.predictions())
    }

    /// Single-row forward pass from raw time signals.
    pub fn forward(&self, engine: &SpectralEngine, v_echo: &TimeSignal, v_tem: &TimeSignal) -> Result<Prediction> {
        self.check_engine(engine)?;
        let u_echo = ieo(&engine.fft_truncate(v_echo.samples())?);
        let u_tem = ieo(&engine.fft_truncate(v_tem.samples())?);
        let echo = Tensor2::row_vector(u_echo.0);
        let mut out = self.predict_spectra(echo, &u_tem)?;
        Ok(out.remove(0))
    }

    /// Embedding outputs `(x_echo, x_tem)` for one row of raw signals.
    pub fn embed(&self, engine: &SpectralEngine, v_echo: &TimeSignal, v_tem: &TimeSignal) -> Result<(Tensor2, Tensor2)> {
        self.check_engine(engine)?;
        let u_echo = ieo(&engine.fft_truncate(v_echo.samples())?);
        let u_tem = ieo(&engine.fft_truncate(v_tem.samples())?);
        let mut g = Graph::new();
        let pv = ParamVars::bind(&mut g, &self.params, false);
        let e = g.input(Tensor2::row_vector(u_echo.0));
        let t = g.input(Tensor2::row_vector(u_tem.0));
        let pair = fd_embed(&mut g, &pv, e, t)?;
        Ok((g.value(pair.echo).clone(), g.value(pair.tem).clone()))
    }

    fn check_engine(&self, engine: &SpectralEngine) -> Result<()> {
        if engine.config().l_cut != self.cfg.l_cut {
            return Err(Error::Config(format!(
                "model expects l_cut {}, sampling config has {}",
                self.cfg.l_cut,
                engine.config().l_cut
            )));
        }
        Ok(())
    }
}
