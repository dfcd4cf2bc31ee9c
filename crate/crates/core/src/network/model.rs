use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::layers::{
    attention, attention_backward, gelu, gelu_grad, layer_norm, layer_norm_backward, rope_in_place, NormCache, RopeTable,
};
use super::{LayerParams, ModelConfig, ModelParams, NetworkError, Result};
use crate::schema::SourceId;

/// Head outputs. Rows at or beyond `valid_frames` (padding) are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub boundary_logits: Array1<f64>,
    pub function_logits: Array2<f64>,
    pub frames_out: usize,
    pub valid_frames: usize,
}

/// Gradient of a scalar loss with respect to [`ForwardOutput`].
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGrad {
    pub boundary: Array1<f64>,
    pub function: Array2<f64>,
}

impl OutputGrad {
    pub fn zeros(frames: usize, classes: usize) -> Self {
        OutputGrad { boundary: Array1::zeros(frames), function: Array2::zeros((frames, classes)) }
    }
}

struct LayerCache {
    norm1: NormCache,
    a: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    attn_mask: Option<Array2<f64>>,
    norm2: NormCache,
    b: Array2<f64>,
    u: Array2<f64>,
    g: Array2<f64>,
    ffn_mask: Option<Array2<f64>>,
}

/// Activations kept from a forward pass for [`Network::backward`].
pub struct ForwardCache {
    x: Array2<f64>,
    conv: Array2<f64>,
    pooled: Array2<f64>,
    src: SourceId,
    valid: usize,
    rope: RopeTable,
    layers: Vec<LayerCache>,
    final_norm: NormCache,
    z: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub config: ModelConfig,
    pub params: ModelParams,
}

fn dropout_mask(rng: &mut ChaCha8Rng, shape: (usize, usize), p: f64) -> Array2<f64> {
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < p { 0.0 } else { keep })
}

impl Network {
    /// Fresh network with seeded initialization.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(&config);
        Ok(Network { config, params })
    }

    /// Pairs a config with existing parameters, checking every shape.
    pub fn from_parts(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        let expected = ModelParams::expected_shapes(&config);
        let got = params.tensors();
        if expected.len() != got.len() {
            return Err(NetworkError::BadConfig(format!(
                "{} parameter arrays, config implies {}",
                got.len(),
                expected.len()
            )));
        }
        for ((name, shape), (_, t)) in expected.iter().zip(&got) {
            if t.shape() != shape.as_slice() {
                return Err(NetworkError::ShapeMismatch { name: name.clone(), got: t.shape().to_vec(), expected: shape.clone() });
            }
        }
        drop(got);
        Ok(Network { config, params })
    }

    fn check_input(&self, x: &ArrayView2<f64>, src: SourceId) -> Result<()> {
        let f = self.config.downsample_factor;
        if x.nrows() < f {
            return Err(NetworkError::InputTooShort { frames: x.nrows(), factor: f });
        }
        if x.ncols() != self.config.input_dim {
            return Err(NetworkError::InputDimMismatch { got: x.ncols(), expected: self.config.input_dim });
        }
        if src.0 >= self.config.n_sources {
            return Err(NetworkError::UnknownSource(src, self.config.n_sources));
        }
        Ok(())
    }

    fn downsample_parts(&self, x: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let cfg = &self.config;
        let p = &self.params.down;
        let (t, din) = x.dim();
        let f = cfg.downsample_factor;
        let n = t / f;
        let offset = (f as isize - cfg.dw_kernel as isize).div_euclid(2);

        let mut conv = Array2::zeros((n, din));
        let mut pooled = Array2::zeros((n, din));
        for j in 0..n {
            let mut crow = conv.row_mut(j);
            crow.assign(&p.dw_bias);
            for k in 0..cfg.dw_kernel {
                let idx = (f * j) as isize + offset + k as isize;
                if idx >= 0 && (idx as usize) < t {
                    crow.scaled_add(1.0, &(&p.dw_weight.row(k) * &x.row(idx as usize)));
                }
            }
            let mut prow = pooled.row_mut(j);
            for i in 0..f {
                prow += &x.row(f * j + i);
            }
            prow /= f as f64;
        }
        let h = conv.dot(&p.pw_conv) + pooled.dot(&p.pw_pool) + &p.bias;
        (h, conv, pooled)
    }

    /// Residual downsampling: depthwise-conv and average-pool branches,
    /// each followed by a pointwise projection, summed. `T -> floor(T / f)`.
    pub fn downsample(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x, SourceId::HX)?;
        Ok(self.downsample_parts(x).0)
    }

    /// Adds the source's embedding row to every frame.
    pub fn add_source(&self, h: &mut Array2<f64>, src: SourceId) -> Result<()> {
        if src.0 >= self.config.n_sources {
            return Err(NetworkError::UnknownSource(src, self.config.n_sources));
        }
        *h += &self.params.source_embed.row(src.0);
        Ok(())
    }

    fn layer_forward(
        &self,
        h: &Array2<f64>,
        lp: &LayerParams,
        rope: &RopeTable,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> (Array2<f64>, LayerCache) {
        let cfg = &self.config;
        let (a, norm1) = layer_norm(h.view(), &lp.norm1_gamma, &lp.norm1_beta, cfg.norm_eps);
        let mut q = a.dot(&lp.wq);
        let mut k = a.dot(&lp.wk);
        let v = a.dot(&lp.wv);
        rope_in_place(&mut q.view_mut(), cfg.n_heads, rope, false);
        rope_in_place(&mut k.view_mut(), cfg.n_heads, rope, false);
        let (ctx, probs) = attention(&q, &k, &v, cfg.n_heads);
        let mut attn = ctx.dot(&lp.wo) + &lp.bo;
        let attn_mask = rng.as_deref_mut().filter(|_| cfg.dropout > 0.0).map(|r| dropout_mask(r, attn.dim(), cfg.dropout));
        if let Some(m) = &attn_mask {
            attn *= m;
        }
        let h1 = h + &attn;

        let (b, norm2) = layer_norm(h1.view(), &lp.norm2_gamma, &lp.norm2_beta, cfg.norm_eps);
        let u = b.dot(&lp.w1) + &lp.b1;
        let g = u.mapv(gelu);
        let mut ffn = g.dot(&lp.w2) + &lp.b2;
        let ffn_mask = rng.filter(|_| cfg.dropout > 0.0).map(|r| dropout_mask(r, ffn.dim(), cfg.dropout));
        if let Some(m) = &ffn_mask {
            ffn *= m;
        }
        let out = &h1 + &ffn;
        (out, LayerCache { norm1, a, q, k, v, probs, ctx, attn_mask, norm2, b, u, g, ffn_mask })
    }

    /// Runs the transformer stack on all rows of `h` (eval mode).
    pub fn encode(&self, h: ArrayView2<f64>) -> Array2<f64> {
        let rope = RopeTable::new(h.nrows(), self.config.head_dim(), self.config.rope_base);
        let mut cur = h.to_owned();
        for lp in &self.params.layers {
            cur = self.layer_forward(&cur, lp, &rope, None).0;
        }
        cur
    }

    /// Eval-mode forward pass.
    pub fn forward(&self, x: ArrayView2<f64>, src: SourceId) -> Result<ForwardOutput> {
        Ok(self.forward_train(x, src, None, None)?.0)
    }

    /// Forward pass keeping activations for [`Network::backward`].
    ///
    /// `valid_frames` marks trailing output frames as padding: they are
    /// excluded from attention (neither attend nor are attended to) and
    /// their logits are zero. Dropout is active only when `rng` is given.
    pub fn forward_train(
        &self,
        x: ArrayView2<f64>,
        src: SourceId,
        valid_frames: Option<usize>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(ForwardOutput, ForwardCache)> {
        self.check_input(&x, src)?;
        let cfg = &self.config;
        let (mut h, conv, pooled) = self.downsample_parts(x);
        let frames_out = h.nrows();
        let valid = valid_frames.unwrap_or(frames_out).min(frames_out);
        self.add_source(&mut h, src)?;

        let rope = RopeTable::new(valid, cfg.head_dim(), cfg.rope_base);
        let mut cur = h.slice(s![..valid, ..]).to_owned();
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for lp in &self.params.layers {
            let (next, cache) = self.layer_forward(&cur, lp, &rope, rng.as_deref_mut());
            layers.push(cache);
            cur = next;
        }
        let (z, final_norm) = layer_norm(cur.view(), &self.params.final_gamma, &self.params.final_beta, cfg.norm_eps);

        let mut boundary_logits = Array1::zeros(frames_out);
        boundary_logits.slice_mut(s![..valid]).assign(&(z.dot(&self.params.boundary_w) + self.params.boundary_b[0]));
        let mut function_logits = Array2::zeros((frames_out, cfg.n_classes));
        function_logits
            .slice_mut(s![..valid, ..])
            .assign(&(z.dot(&self.params.function_w) + &self.params.function_b));

        let out = ForwardOutput { boundary_logits, function_logits, frames_out, valid_frames: valid };
        let cache = ForwardCache { x: x.to_owned(), conv, pooled, src, valid, rope, layers, final_norm, z };
        Ok((out, cache))
    }

    fn layer_backward(
        &self,
        gh: Array2<f64>,
        lp: &LayerParams,
        c: &LayerCache,
        rope: &RopeTable,
        gp: &mut LayerParams,
    ) -> Array2<f64> {
        let cfg = &self.config;
        // h2 = h1 + ffn
        let mut g_ffn = gh.clone();
        if let Some(m) = &c.ffn_mask {
            g_ffn *= m;
        }
        gp.w2 += &c.g.t().dot(&g_ffn);
        gp.b2 += &g_ffn.sum_axis(Axis(0));
        let mut g_u = g_ffn.dot(&lp.w2.t());
        g_u.zip_mut_with(&c.u, |g, &u| *g *= gelu_grad(u));
        gp.w1 += &c.b.t().dot(&g_u);
        gp.b1 += &g_u.sum_axis(Axis(0));
        let g_b = g_u.dot(&lp.w1.t());
        let mut g_h1 = gh;
        g_h1 += &layer_norm_backward(g_b.view(), &c.norm2, &lp.norm2_gamma, &mut gp.norm2_gamma, &mut gp.norm2_beta);

        // h1 = h + attn
        let mut g_attn = g_h1.clone();
        if let Some(m) = &c.attn_mask {
            g_attn *= m;
        }
        gp.wo += &c.ctx.t().dot(&g_attn);
        gp.bo += &g_attn.sum_axis(Axis(0));
        let g_ctx = g_attn.dot(&lp.wo.t());
        let (mut gq, mut gk, gv) = attention_backward(&g_ctx, &c.q, &c.k, &c.v, &c.probs);
        rope_in_place(&mut gq.view_mut(), cfg.n_heads, rope, true);
        rope_in_place(&mut gk.view_mut(), cfg.n_heads, rope, true);
        gp.wq += &c.a.t().dot(&gq);
        gp.wk += &c.a.t().dot(&gk);
        gp.wv += &c.a.t().dot(&gv);
        let g_a = gq.dot(&lp.wq.t()) + gk.dot(&lp.wk.t()) + gv.dot(&lp.wv.t());
        let mut g_h = g_h1;
        g_h += &layer_norm_backward(g_a.view(), &c.norm1, &lp.norm1_gamma, &mut gp.norm1_gamma, &mut gp.norm1_beta);
        g_h
    }

    /// Exact gradients of a scalar loss with respect to every parameter,
    /// given the loss gradient with respect to the head outputs.
    pub fn backward(&self, cache: &ForwardCache, upstream: &OutputGrad) -> ModelParams {
        let cfg = &self.config;
        let p = &self.params;
        let mut grads = p.zeros_like();
        let n = cache.valid;
        let gb = upstream.boundary.slice(s![..n]);
        let gf = upstream.function.slice(s![..n, ..]);

        grads.boundary_w += &cache.z.t().dot(&gb);
        grads.boundary_b[0] += gb.sum();
        grads.function_w += &cache.z.t().dot(&gf);
        grads.function_b += &gf.sum_axis(Axis(0));
        let mut gz = gf.dot(&p.function_w.t());
        for (mut row, &g) in gz.rows_mut().into_iter().zip(gb.iter()) {
            row.scaled_add(g, &p.boundary_w);
        }
        let mut gh = layer_norm_backward(gz.view(), &cache.final_norm, &p.final_gamma, &mut grads.final_gamma, &mut grads.final_beta);

        for ((lp, lc), gl) in p.layers.iter().zip(&cache.layers).zip(grads.layers.iter_mut()).rev() {
            gh = self.layer_backward(gh, lp, lc, &cache.rope, gl);
        }

        // padded rows carry no gradient
        grads.source_embed.row_mut(cache.src.0).assign(&gh.sum_axis(Axis(0)));
        let frames_out = cache.conv.nrows();
        let mut g_down = Array2::zeros((frames_out, cfg.d_model));
        g_down.slice_mut(s![..n, ..]).assign(&gh);

        let d = &mut grads.down;
        d.pw_conv += &cache.conv.t().dot(&g_down);
        d.pw_pool += &cache.pooled.t().dot(&g_down);
        d.bias += &g_down.sum_axis(Axis(0));
        let g_conv = g_down.dot(&p.down.pw_conv.t());
        d.dw_bias += &g_conv.sum_axis(Axis(0));
        let f = cfg.downsample_factor;
        let t = cache.x.nrows();
        let offset = (f as isize - cfg.dw_kernel as isize).div_euclid(2);
        for j in 0..frames_out {
            for k in 0..cfg.dw_kernel {
                let idx = (f * j) as isize + offset + k as isize;
                if idx >= 0 && (idx as usize) < t {
                    let contrib = &g_conv.row(j) * &cache.x.row(idx as usize);
                    d.dw_weight.row_mut(k).scaled_add(1.0, &contrib);
                }
            }
        }
        grads
    }
}
