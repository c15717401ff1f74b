//! Network building blocks recorded on a [`Graph`].

use std::ops::Range;

use crate::error::{shape_err, NnError, Result};
use crate::graph::{AttnGroup, Graph, Var};
use crate::params::{ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => g.relu(x),
            Activation::Tanh => g.tanh(x),
        }
    }
}

/// Affine layer `x·W + b` with `W: in × out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize) -> Result<Self> {
        let w = store.init_uniform(format!("{name}.w"), &[input, output], input)?;
        let b = Some(store.init_uniform(format!("{name}.b"), &[1, output], input)?);
        Ok(Self { w, b, input, output })
    }

    pub fn without_bias(store: &mut ParamStore, name: &str, input: usize, output: usize) -> Result<Self> {
        let w = store.init_uniform(format!("{name}.w"), &[input, output], input)?;
        Ok(Self {
            w,
            b: None,
            input,
            output,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        if g.value(x).cols() != self.input {
            return shape_err(
                "Linear::forward",
                format!("expected width {}, got {}", self.input, g.value(x).cols()),
            );
        }
        let w = g.param(store, self.w);
        let y = g.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = g.param(store, b);
                g.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Stack of linear layers with ReLU between them and a configurable output
/// activation.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub output_activation: Activation,
}

impl Mlp {
    /// `sizes = [input, hidden.., output]`.
    pub fn new(store: &mut ParamStore, name: &str, sizes: &[usize], output_activation: Activation) -> Result<Self> {
        if sizes.len() < 2 {
            return shape_err("Mlp::new", "need at least input and output sizes");
        }
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1]))
            .collect::<Result<_>>()?;
        Ok(Self {
            layers,
            output_activation,
        })
    }

    pub fn input(&self) -> usize {
        self.layers[0].input
    }

    pub fn output(&self) -> usize {
        self.layers.last().expect("non-empty").output
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, store, h)?;
            h = if i == last {
                self.output_activation.apply(g, h)
            } else {
                g.relu(h)
            };
        }
        Ok(h)
    }
}

/// Widths of a [`DeepSetEncoder`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DeepSetConfig {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

/// Permutation-invariant set encoder `f(e) = ρ(Σ_{ξ∈e} φ(ξ))`.
///
/// `φ` is `Linear → ReLU → Linear` and `ρ` is `Linear → ReLU → Linear`.
/// Because the last layer of `φ` is affine, the sum is taken over the hidden
/// activations and the affine map is applied once per element:
/// `Σ (W h_ξ + b) = W Σ h_ξ + |e|·b`.
#[derive(Clone, Debug)]
pub struct DeepSetEncoder {
    pub config: DeepSetConfig,
    phi_in: Linear,
    phi_out: Linear,
    rho_in: Linear,
    rho_out: Linear,
}

impl DeepSetEncoder {
    pub fn new(store: &mut ParamStore, name: &str, config: DeepSetConfig) -> Result<Self> {
        let h = config.hidden;
        Ok(Self {
            config,
            phi_in: Linear::new(store, &format!("{name}.phi.0"), config.input, h)?,
            phi_out: Linear::new(store, &format!("{name}.phi.1"), h, h)?,
            rho_in: Linear::new(store, &format!("{name}.rho.0"), h, h)?,
            rho_out: Linear::new(store, &format!("{name}.rho.1"), h, config.output)?,
        })
    }

    /// Encodes every element; `points` holds the point rows of all elements
    /// back to back and `segments[e]` is the row range of element `e`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, points: Var, segments: &[Range<usize>]) -> Result<Var> {
        if segments.iter().any(|s| s.is_empty()) {
            return Err(NnError::Empty("DeepSetEncoder element"));
        }
        let h = self.phi_in.forward(g, store, points)?;
        let h = g.relu(h);
        let pooled_hidden = g.segment_sum(h, segments.to_vec())?;
        let counts: Vec<f64> = segments.iter().map(|s| s.len() as f64).collect();
        let counts = g.constant(crate::Tensor::column(&counts));
        let w = g.param(store, self.phi_out.w);
        let mut pooled = g.matmul(pooled_hidden, w)?;
        if let Some(b) = self.phi_out.b {
            let b = g.param(store, b);
            let bias = g.matmul(counts, b)?;
            pooled = g.add(pooled, bias)?;
        }
        self.rho(g, store, pooled)
    }

    /// Per-point transform `φ`, exposed for tests and diagnostics.
    pub fn phi(&self, g: &mut Graph, store: &ParamStore, points: Var) -> Result<Var> {
        let h = self.phi_in.forward(g, store, points)?;
        let h = g.relu(h);
        self.phi_out.forward(g, store, h)
    }

    pub fn rho(&self, g: &mut Graph, store: &ParamStore, pooled: Var) -> Result<Var> {
        let h = self.rho_in.forward(g, store, pooled)?;
        let h = g.relu(h);
        self.rho_out.forward(g, store, h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionConfig {
    pub d_model: usize,
    pub n_heads: usize,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            d_model: 160,
            n_heads: 4,
        }
    }
}

impl AttentionConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return shape_err(
                "AttentionConfig",
                format!("{} heads do not divide d_model {}", self.n_heads, self.d_model),
            );
        }
        Ok(())
    }
}

/// Multi-head attention with learned per-type embeddings added to the keys
/// before projection.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub config: AttentionConfig,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub type_embedding: Option<ParamId>,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, config: AttentionConfig, n_types: usize) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let type_embedding = if n_types > 0 {
            Some(store.init_uniform(format!("{name}.type"), &[n_types, d], d)?)
        } else {
            None
        };
        Ok(Self {
            config,
            wq: Linear::new(store, &format!("{name}.q"), d, d)?,
            wk: Linear::without_bias(store, &format!("{name}.k"), d, d)?,
            wv: Linear::new(store, &format!("{name}.v"), d, d)?,
            wo: Linear::new(store, &format!("{name}.o"), d, d)?,
            type_embedding,
        })
    }

    /// Returns `(output, attention node)`; the second handle exposes the
    /// softmax weights through [`Graph::attention_weights`].
    #[allow(clippy::too_many_arguments)]
    pub fn forward_with_weights(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        q_in: Var,
        k_in: Var,
        v_in: Var,
        key_types: Option<&[usize]>,
        groups: Vec<AttnGroup>,
    ) -> Result<(Var, Var)> {
        let keys = match (self.type_embedding, key_types) {
            (Some(emb), Some(types)) => {
                if types.len() != g.value(k_in).rows() {
                    return shape_err("MultiHeadAttention", "one type per key row required");
                }
                let table = g.param(store, emb);
                let rows = g.gather_rows(table, types.to_vec())?;
                g.add(k_in, rows)?
            }
            (None, Some(_)) => return shape_err("MultiHeadAttention", "no type embedding configured"),
            (_, None) => k_in,
        };
        let q = self.wq.forward(g, store, q_in)?;
        let k = self.wk.forward(g, store, keys)?;
        let v = self.wv.forward(g, store, v_in)?;
        let att = g.attention(q, k, v, groups, self.config.n_heads)?;
        let out = self.wo.forward(g, store, att)?;
        Ok((out, att))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        q_in: Var,
        k_in: Var,
        v_in: Var,
        key_types: Option<&[usize]>,
        groups: Vec<AttnGroup>,
    ) -> Result<Var> {
        Ok(self
            .forward_with_weights(g, store, q_in, k_in, v_in, key_types, groups)?
            .0)
    }
}

/// Single-head attention over all keys with an optional boolean key mask
/// (`true` = keep).
pub fn attention(g: &mut Graph, q: Var, k: Var, v: Var, mask: Option<&[bool]>) -> Result<Var> {
    let nk = g.value(k).rows();
    let keys: Vec<usize> = match mask {
        Some(m) if m.len() != nk => return shape_err("attention", "mask length != key count"),
        Some(m) => (0..nk).filter(|&i| m[i]).collect(),
        None => (0..nk).collect(),
    };
    let rows = g.value(q).rows();
    g.attention(q, k, v, vec![AttnGroup { queries: 0..rows, keys }], 1)
}
