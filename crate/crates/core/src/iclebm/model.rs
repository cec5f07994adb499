//! Causal pre-LayerNorm transformer emitting one scalar energy per position.
//!
//! Two forward paths share the parameters. The real path runs over a whole
//! sequence and keeps every layer's keys and values. The candidate path
//! scores extra points, each placed at some position `p` of that sequence:
//! the point attends to the real prefix `0..p` through the cached keys and
//! values and to itself through its own. A candidate equal to the real token
//! at `p` reproduces the real energy at `p` bit for bit.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::numerics::{math, Rng, Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct IclEbmConfig {
    pub d_in: usize,
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    /// Longest sequence the positional table covers.
    pub max_len: usize,
    /// Hidden width of each feedforward block as a multiple of `width`.
    pub mlp_ratio: usize,
    pub ln_eps: f64,
}

impl Default for IclEbmConfig {
    fn default() -> Self {
        IclEbmConfig { d_in: 2, width: 32, layers: 2, heads: 4, max_len: 65, mlp_ratio: 4, ln_eps: 1e-5 }
    }
}

impl IclEbmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.width == 0 || self.layers == 0 || self.heads == 0 {
            return Err(Error::invalid("d_in, width, layers and heads must be positive"));
        }
        if self.width % self.heads != 0 {
            return Err(Error::invalid(format!(
                "width {} is not divisible by {} heads",
                self.width, self.heads
            )));
        }
        if self.max_len < 2 {
            return Err(Error::invalid("max_len must be at least 2"));
        }
        if self.mlp_ratio == 0 {
            return Err(Error::invalid("mlp_ratio must be positive"));
        }
        if !(self.ln_eps > 0.0 && self.ln_eps.is_finite()) {
            return Err(Error::invalid("ln_eps must be positive"));
        }
        Ok(())
    }

    fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    /// Names and shapes of every parameter block, in storage order.
    pub fn param_shapes(&self) -> Vec<(String, usize, usize)> {
        let (w, h) = (self.width, self.width * self.mlp_ratio);
        let mut out = vec![
            (String::from("w_in"), self.d_in, w),
            (String::from("b_in"), 1, w),
            (String::from("pos"), self.max_len, w),
        ];
        for l in 0..self.layers {
            for (name, r, c) in [
                ("ln1_g", 1, w),
                ("ln1_b", 1, w),
                ("w_qkv", w, 3 * w),
                ("b_qkv", 1, 3 * w),
                ("w_o", w, w),
                ("b_o", 1, w),
                ("ln2_g", 1, w),
                ("ln2_b", 1, w),
                ("w_1", w, h),
                ("b_1", 1, h),
                ("w_2", h, w),
                ("b_2", 1, w),
            ] {
                out.push((format!("layer{l}.{name}"), r, c));
            }
        }
        out.push((String::from("lnf_g"), 1, w));
        out.push((String::from("lnf_b"), 1, w));
        out.push((String::from("w_head"), w, 1));
        out.push((String::from("b_head"), 1, 1));
        out
    }
}

const GLOBAL: usize = 3;
const PER_LAYER: usize = 12;

#[derive(Clone, Debug, PartialEq)]
pub struct IclEbmModel {
    config: IclEbmConfig,
    params: Vec<Tensor>,
}

/// Parameters placed on a tape.
pub(crate) struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub(crate) fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Per-head keys and values of one layer of the real path.
pub(crate) struct LayerCache {
    k: Vec<Var>,
    v: Vec<Var>,
}

/// Cached keys and values as plain values, for reuse on later tapes.
#[derive(Clone, Debug)]
pub(crate) struct CacheValues {
    layers: Vec<(Vec<Tensor>, Vec<Tensor>)>,
    len: usize,
}

impl CacheValues {
    pub(crate) fn len(&self) -> usize {
        self.len
    }

    pub(crate) fn on_tape(&self, tape: &mut Tape) -> Vec<LayerCache> {
        self.layers
            .iter()
            .map(|(k, v)| LayerCache {
                k: k.iter().map(|t| tape.constant(t.clone())).collect(),
                v: v.iter().map(|t| tape.constant(t.clone())).collect(),
            })
            .collect()
    }
}

pub(crate) struct RealPass {
    /// `L × 1` energies, row `p` scoring token `p` given tokens `0..p`.
    pub(crate) energies: Var,
    pub(crate) caches: Vec<LayerCache>,
    pub(crate) len: usize,
}

impl RealPass {
    pub(crate) fn cache_values(&self, tape: &Tape) -> CacheValues {
        let grab = |vs: &[Var]| vs.iter().map(|&v| tape.value(v).clone()).collect::<Vec<_>>();
        CacheValues {
            layers: self.caches.iter().map(|c| (grab(&c.k), grab(&c.v))).collect(),
            len: self.len,
        }
    }
}

impl IclEbmModel {
    /// Random initialization: `N(0, 1/d_in)` input projection, `N(0, 0.02²)`
    /// elsewhere with residual output projections shrunk by `√(2·layers)`,
    /// unit LayerNorm gains and zero biases.
    pub fn new(config: IclEbmConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(seed);
        let resid = 0.02 / math::sqrt(2.0 * config.layers as f64);
        let params = config
            .param_shapes()
            .into_iter()
            .map(|(name, r, c)| {
                let base = name.rsplit('.').next().unwrap_or(&name);
                let data = if base.ends_with("_g") {
                    vec![1.0; r * c]
                } else if base.starts_with("b_") || base.ends_with("_b") {
                    vec![0.0; r * c]
                } else {
                    let std = match base {
                        "w_in" => 1.0 / math::sqrt(config.d_in as f64),
                        "w_o" | "w_2" => resid,
                        _ => 0.02,
                    };
                    (0..r * c).map(|_| std * rng.normal()).collect()
                };
                Tensor::matrix(r, c, data)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(IclEbmModel { config, params })
    }

    /// Rebuild from stored blocks; shapes must match [`IclEbmConfig::param_shapes`].
    pub fn from_params(config: IclEbmConfig, params: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let shapes = config.param_shapes();
        if shapes.len() != params.len() {
            return Err(Error::DimensionMismatch { expected: shapes.len(), got: params.len() });
        }
        for ((name, r, c), p) in shapes.iter().zip(&params) {
            if p.rows() != *r || p.cols() != *c {
                return Err(Error::invalid(format!(
                    "parameter {name}: expected {r}x{c}, got {}x{}",
                    p.rows(),
                    p.cols()
                )));
            }
            if !p.is_finite() {
                return Err(Error::NonFinite(format!("parameter {name} is not finite")));
            }
        }
        Ok(IclEbmModel { config, params })
    }

    pub fn config(&self) -> &IclEbmConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub(crate) fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| if trainable { tape.leaf(p.clone()) } else { tape.constant(p.clone()) })
            .collect();
        Bound { vars }
    }

    fn layer_param(b: &Bound, layer: usize, i: usize) -> Var {
        b.vars[GLOBAL + layer * PER_LAYER + i]
    }

    fn final_param(&self, b: &Bound, i: usize) -> Var {
        b.vars[GLOBAL + self.config.layers * PER_LAYER + i]
    }

    pub(crate) fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.cols() != self.config.d_in {
            return Err(Error::DimensionMismatch { expected: self.config.d_in, got: x.cols() });
        }
        if x.rows() > self.config.max_len {
            return Err(Error::invalid(format!(
                "sequence length {} exceeds max_len {}",
                x.rows(),
                self.config.max_len
            )));
        }
        Ok(())
    }

    /// Real path over an `L × d_in` sequence.
    pub(crate) fn real_forward(&self, tape: &mut Tape, b: &Bound, x: Var) -> Result<RealPass> {
        let cfg = &self.config;
        let (l, w, dh) = (tape.value(x).rows(), cfg.width, cfg.head_dim());
        let scale = 1.0 / math::sqrt(dh as f64);
        let mut h = tape.matmul(x, b.vars[0])?;
        h = tape.add_row(h, b.vars[1])?;
        let pos = tape.slice(b.vars[2], (0, l), (0, w))?;
        h = tape.add(h, pos)?;
        let limits: Vec<usize> = (1..=l).collect();
        let mut caches = Vec::with_capacity(cfg.layers);
        for layer in 0..cfg.layers {
            let p = |i| Self::layer_param(b, layer, i);
            let a = tape.layer_norm_rows(h, p(0), p(1), cfg.ln_eps, true)?;
            let qkv = tape.matmul(a, p(2))?;
            let qkv = tape.add_row(qkv, p(3))?;
            let mut heads = Vec::with_capacity(cfg.heads);
            let mut cache = LayerCache { k: Vec::new(), v: Vec::new() };
            for hd in 0..cfg.heads {
                let c0 = hd * dh;
                let q = tape.slice(qkv, (0, l), (c0, c0 + dh))?;
                let k = tape.slice(qkv, (0, l), (w + c0, w + c0 + dh))?;
                let v = tape.slice(qkv, (0, l), (2 * w + c0, 2 * w + c0 + dh))?;
                let s = tape.matmul_nt(q, k)?;
                let s = tape.scale(s, scale);
                let att = tape.masked_softmax_rows(s, limits.clone())?;
                heads.push(tape.matmul(att, v)?);
                cache.k.push(k);
                cache.v.push(v);
            }
            caches.push(cache);
            h = self.finish_layer(tape, b, layer, h, &heads)?;
        }
        let energies = self.head(tape, b, h)?;
        Ok(RealPass { energies, caches, len: l })
    }

    /// Candidate path: row `i` of `xc` sits at position `positions[i]` of
    /// the sequence behind `caches`. Returns `M × 1` energies.
    pub(crate) fn candidate_forward(
        &self,
        tape: &mut Tape,
        b: &Bound,
        caches: &[LayerCache],
        cache_len: usize,
        xc: Var,
        positions: &[usize],
    ) -> Result<Var> {
        let cfg = &self.config;
        let (m, w, dh) = (tape.value(xc).rows(), cfg.width, cfg.head_dim());
        if positions.len() != m {
            return Err(Error::DimensionMismatch { expected: m, got: positions.len() });
        }
        if positions.iter().any(|&p| p >= cache_len) {
            return Err(Error::invalid("candidate position beyond the cached sequence"));
        }
        let scale = 1.0 / math::sqrt(dh as f64);
        let mut h = tape.matmul(xc, b.vars[0])?;
        h = tape.add_row(h, b.vars[1])?;
        let pos = tape.gather_rows(b.vars[2], positions)?;
        h = tape.add(h, pos)?;
        let limits: Vec<usize> = positions.iter().map(|p| p + 1).collect();
        let zeros = tape.constant(Tensor::zeros(m, 1));
        for (layer, cache) in caches.iter().enumerate() {
            let p = |i| Self::layer_param(b, layer, i);
            let a = tape.layer_norm_rows(h, p(0), p(1), cfg.ln_eps, true)?;
            let qkv = tape.matmul(a, p(2))?;
            let qkv = tape.add_row(qkv, p(3))?;
            let mut heads = Vec::with_capacity(cfg.heads);
            for hd in 0..cfg.heads {
                let c0 = hd * dh;
                let q = tape.slice(qkv, (0, m), (c0, c0 + dh))?;
                let k = tape.slice(qkv, (0, m), (w + c0, w + c0 + dh))?;
                let v = tape.slice(qkv, (0, m), (2 * w + c0, 2 * w + c0 + dh))?;
                let cross = tape.matmul_nt(q, cache.k[hd])?;
                let cross = tape.scale(cross, scale);
                let own = tape.mul(q, k)?;
                let own = tape.sum_rows(own);
                let own = tape.scale(own, scale);
                let s = tape.set_cols(cross, own, positions)?;
                let att = tape.masked_softmax_rows(s, limits.clone())?;
                let att_own = tape.pick_cols(att, positions)?;
                let att_prefix = tape.set_cols(att, zeros, positions)?;
                let from_prefix = tape.matmul(att_prefix, cache.v[hd])?;
                let from_own = tape.mul_col(v, att_own)?;
                heads.push(tape.add(from_prefix, from_own)?);
            }
            h = self.finish_layer(tape, b, layer, h, &heads)?;
        }
        self.head(tape, b, h)
    }

    fn finish_layer(&self, tape: &mut Tape, b: &Bound, layer: usize, h: Var, heads: &[Var]) -> Result<Var> {
        let p = |i| Self::layer_param(b, layer, i);
        let o = tape.concat_cols(heads)?;
        let o = tape.matmul(o, p(4))?;
        let o = tape.add_row(o, p(5))?;
        let h = tape.add(h, o)?;
        let a = tape.layer_norm_rows(h, p(6), p(7), self.config.ln_eps, true)?;
        let f = tape.matmul(a, p(8))?;
        let f = tape.add_row(f, p(9))?;
        let f = tape.gelu(f);
        let f = tape.matmul(f, p(10))?;
        let f = tape.add_row(f, p(11))?;
        tape.add(h, f)
    }

    fn head(&self, tape: &mut Tape, b: &Bound, h: Var) -> Result<Var> {
        let a = tape.layer_norm_rows(h, self.final_param(b, 0), self.final_param(b, 1), self.config.ln_eps, true)?;
        let e = tape.matmul(a, self.final_param(b, 2))?;
        tape.add_row(e, self.final_param(b, 3))
    }

    /// Energies of every position of an `L × d_in` sequence, position 0 included.
    pub fn all_energies(&self, sequence: &Tensor) -> Result<Vec<f64>> {
        self.check_input(sequence)?;
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let x = tape.constant(sequence.clone());
        let pass = self.real_forward(&mut tape, &b, x)?;
        Ok(tape.value(pass.energies).data().to_vec())
    }

    /// Real-path keys and values of `sequence`.
    pub(crate) fn prefix_cache(&self, sequence: &Tensor) -> Result<CacheValues> {
        self.check_input(sequence)?;
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let x = tape.constant(sequence.clone());
        let pass = self.real_forward(&mut tape, &b, x)?;
        Ok(pass.cache_values(&tape))
    }

    /// Energies of the rows of `points` (M × d_in) at `positions`, given the
    /// cached sequence, and optionally their gradients with respect to the points.
    pub(crate) fn candidate_energies(
        &self,
        cache: &CacheValues,
        points: &Tensor,
        positions: &[usize],
        with_grad: bool,
    ) -> Result<(Vec<f64>, Option<Tensor>)> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let caches = cache.on_tape(&mut tape);
        let xc = if with_grad { tape.leaf(points.clone()) } else { tape.constant(points.clone()) };
        let e = self.candidate_forward(&mut tape, &b, &caches, cache.len(), xc, positions)?;
        let energies = tape.value(e).data().to_vec();
        if !with_grad {
            return Ok((energies, None));
        }
        let total = tape.sum(e);
        let grads = tape.backward(total)?;
        let g = grads.get_or_zeros(xc, points.rows(), points.cols());
        Ok((energies, Some(g)))
    }
}
