use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use super::params::{LayerOffsets, ParamLayout};
use super::real::{gemm, Real};
use crate::error::ModelError;
use crate::rope::{rotation_angles, ScalingFactors};

const NORM_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// Cosine/sine of every (position, pair) rotation angle.
#[derive(Debug, Clone)]
pub struct RotaryTable<T> {
    len: usize,
    pairs: usize,
    cos: Vec<T>,
    sin: Vec<T>,
}

impl<T: Real> RotaryTable<T> {
    /// Table for positions `0..len` using the scaled angles of `factors`.
    pub fn new(
        cfg: &ModelConfig,
        factors: &ScalingFactors,
        len: usize,
    ) -> Result<Self, ModelError> {
        let rope = cfg.rope()?;
        factors.check_len(&rope)?;
        let per_position: Vec<Vec<f64>> = (0..len)
            .map(|m| rotation_angles(&rope, factors, m))
            .collect::<Result<_, _>>()?;
        Ok(Self::from_angles(len, rope.num_pairs(), |m, i| {
            per_position[m][i]
        }))
    }

    /// Table from an arbitrary angle function `(position, pair) -> radians`.
    pub fn from_angles(len: usize, pairs: usize, angle: impl Fn(usize, usize) -> f64) -> Self {
        let mut cos = Vec::with_capacity(len * pairs);
        let mut sin = Vec::with_capacity(len * pairs);
        for m in 0..len {
            for i in 0..pairs {
                let (s, c) = angle(m, i).sin_cos();
                cos.push(T::from_f64_lossy(c));
                sin.push(T::from_f64_lossy(s));
            }
        }
        Self {
            len,
            pairs,
            cos,
            sin,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Activations of one block kept for the backward pass.
struct LayerCache<T> {
    x_in: Vec<T>,
    inv1: Vec<T>,
    a: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    probs: Vec<T>,
    ctx: Vec<T>,
    x_mid: Vec<T>,
    inv2: Vec<T>,
    b: Vec<T>,
    u: Vec<T>,
    g: Vec<T>,
}

/// Small pre-norm decoder-only transformer with rotary attention.
///
/// All parameters live in one flat vector described by [`ParamLayout`].
#[derive(Debug, Clone)]
pub struct ToyModel<T: Real = f32> {
    config: ModelConfig,
    layout: ParamLayout,
    params: Vec<T>,
}

impl<T: Real> PartialEq for ToyModel<T> {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params
    }
}

impl<T: Real> ToyModel<T> {
    /// Seeded initialization. The output head starts at zero, so an
    /// untrained model predicts the uniform distribution.
    pub fn init(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        let mut params = vec![T::zero(); layout.total()];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.d_model as f64;
        let m = config.mlp_hidden() as f64;
        let residual_scale = 1.0 / (2.0 * config.n_layers as f64).sqrt();
        let mut fill = |range: std::ops::Range<usize>, std: f64| {
            let normal = Normal::new(0.0, std).expect("positive std");
            for p in &mut params[range] {
                *p = T::from_f64_lossy(normal.sample(&mut rng));
            }
        };
        for spec in layout.tensors() {
            let name = spec.name.as_str();
            if name == "tok_emb" {
                fill(spec.range(), 1.0);
            } else if name.ends_with("norm") || name == "head" {
                continue;
            } else if name.ends_with(".wo") {
                fill(spec.range(), residual_scale / d.sqrt());
            } else if name.ends_with(".w2") {
                fill(spec.range(), residual_scale / m.sqrt());
            } else {
                fill(spec.range(), 1.0 / d.sqrt());
            }
        }
        for spec in layout.tensors() {
            if spec.name.ends_with("norm") {
                params[spec.range()].fill(T::one());
            }
        }
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn from_params(config: ModelConfig, params: Vec<T>) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        if params.len() != layout.total() {
            return Err(ModelError::Config(format!(
                "expected {} parameters, got {}",
                layout.total(),
                params.len()
            )));
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(ModelError::Config(format!("parameter {i} is not finite")));
        }
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        self.layout.get(name).map(|s| &self.params[s.range()])
    }

    pub fn cast<U: Real>(&self) -> ToyModel<U> {
        ToyModel {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self
                .params
                .iter()
                .map(|p| U::from_f64_lossy(p.to_f64_lossy()))
                .collect(),
        }
    }

    pub fn rotary(
        &self,
        factors: &ScalingFactors,
        len: usize,
    ) -> Result<RotaryTable<T>, ModelError> {
        RotaryTable::new(&self.config, factors, len)
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<(), ModelError> {
        let vocab = self.config.vocab_size;
        match tokens.iter().position(|&t| t as usize >= vocab) {
            Some(position) => Err(ModelError::TokenOutOfVocab {
                token: tokens[position],
                position,
                vocab,
            }),
            None => Ok(()),
        }
    }

    fn check_table(&self, table: &RotaryTable<T>, len: usize) -> Result<(), ModelError> {
        if table.pairs != self.config.num_pairs() || table.len < len {
            return Err(ModelError::Config(format!(
                "rotary table covers {} positions x {} pairs, need {} x {}",
                table.len,
                table.pairs,
                len,
                self.config.num_pairs()
            )));
        }
        Ok(())
    }

    /// Next-token negative log-likelihoods for positions `1..L`.
    pub fn forward_nll(
        &self,
        factors: &ScalingFactors,
        tokens: &[u32],
    ) -> Result<Vec<f64>, ModelError> {
        let table = self.rotary(factors, tokens.len())?;
        self.forward_nll_with(&table, tokens)
    }

    pub fn forward_nll_with(
        &self,
        table: &RotaryTable<T>,
        tokens: &[u32],
    ) -> Result<Vec<f64>, ModelError> {
        if tokens.len() < 2 {
            return Err(ModelError::SequenceTooShort(tokens.len()));
        }
        self.check_tokens(tokens)?;
        self.check_table(table, tokens.len())?;
        let x = self.run_blocks(table, tokens, None);
        let (f, _) = self.final_norm(&x, tokens.len());
        let logits = self.logits(&f, tokens.len() - 1);
        Ok(row_nll(&logits, &tokens[1..], self.config.vocab_size))
    }

    /// Logits for the token following `tokens`.
    pub fn next_token_logits(
        &self,
        table: &RotaryTable<T>,
        tokens: &[u32],
    ) -> Result<Vec<T>, ModelError> {
        if tokens.is_empty() {
            return Err(ModelError::SequenceTooShort(0));
        }
        self.check_tokens(tokens)?;
        self.check_table(table, tokens.len())?;
        let d = self.config.d_model;
        let x = self.run_blocks(table, tokens, None);
        let last = &x[(tokens.len() - 1) * d..];
        let (f, _) = self.final_norm(last, 1);
        Ok(self.logits(&f, 1))
    }

    /// Adds `scale * d(sum of NLL)/d(params)` into `grad` and returns the
    /// summed NLL over positions `1..L`.
    pub fn accumulate_grad(
        &self,
        table: &RotaryTable<T>,
        tokens: &[u32],
        scale: T,
        grad: &mut [T],
    ) -> Result<f64, ModelError> {
        let len = tokens.len();
        if len < 2 {
            return Err(ModelError::SequenceTooShort(len));
        }
        self.check_tokens(tokens)?;
        self.check_table(table, len)?;
        assert_eq!(grad.len(), self.params.len(), "gradient buffer size");

        let (d, vocab) = (self.config.d_model, self.config.vocab_size);
        let mut caches = Vec::with_capacity(self.config.n_layers);
        let x = self.run_blocks(table, tokens, Some(&mut caches));
        let (f, inv_f) = self.final_norm(&x, len);
        let rows = len - 1;
        let mut dlogits = self.logits(&f, rows);
        let nll = row_nll(&dlogits, &tokens[1..], vocab);

        // softmax - onehot, scaled
        for (r, row) in dlogits.chunks_mut(vocab).enumerate() {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for z in row.iter_mut() {
                *z = (*z - max).exp();
                sum += *z;
            }
            for z in row.iter_mut() {
                *z = *z / sum * scale;
            }
            row[tokens[r + 1] as usize] -= scale;
        }

        let head = self.layout.head;
        gemm(
            d,
            rows,
            vocab,
            &f,
            true,
            &dlogits,
            false,
            T::one(),
            &mut grad[head..head + d * vocab],
        );
        let mut df = vec![T::zero(); len * d];
        gemm(
            rows,
            vocab,
            d,
            &dlogits,
            false,
            &self.params[head..head + d * vocab],
            true,
            T::zero(),
            &mut df,
        );

        let fo = self.layout.final_norm;
        let mut dx = vec![T::zero(); len * d];
        rmsnorm_backward(
            &x,
            &self.params[fo..fo + d],
            &inv_f,
            &df,
            &mut dx,
            &mut grad[fo..fo + d],
        );

        for (layer, cache) in self.layout.layers.iter().zip(&caches).rev() {
            dx = self.block_backward(layer, cache, table, &dx, grad);
        }

        let emb = self.layout.tok_emb;
        for (t, &tok) in tokens.iter().enumerate() {
            let row = emb + tok as usize * d;
            for (g, v) in grad[row..row + d].iter_mut().zip(&dx[t * d..(t + 1) * d]) {
                *g += *v;
            }
        }
        Ok(nll.iter().sum())
    }

    fn run_blocks(
        &self,
        table: &RotaryTable<T>,
        tokens: &[u32],
        mut caches: Option<&mut Vec<LayerCache<T>>>,
    ) -> Vec<T> {
        let d = self.config.d_model;
        let emb = self.layout.tok_emb;
        let mut x = Vec::with_capacity(tokens.len() * d);
        for &tok in tokens {
            let row = emb + tok as usize * d;
            x.extend_from_slice(&self.params[row..row + d]);
        }
        for layer in &self.layout.layers {
            let cache = self.block_forward(layer, table, x, tokens.len());
            x = add(&cache.x_mid, &mlp_out(self, layer, &cache));
            if let Some(c) = caches.as_deref_mut() {
                c.push(cache);
            }
        }
        x
    }

    fn block_forward(
        &self,
        layer: &LayerOffsets,
        table: &RotaryTable<T>,
        x_in: Vec<T>,
        len: usize,
    ) -> LayerCache<T> {
        let d = self.config.d_model;
        let p = &self.params;
        let (a, inv1) = rmsnorm(&x_in, &p[layer.attn_norm..layer.attn_norm + d], len, d);
        let mut q = vec![T::zero(); len * d];
        let mut k = vec![T::zero(); len * d];
        let mut v = vec![T::zero(); len * d];
        gemm(
            len,
            d,
            d,
            &a,
            false,
            &p[layer.wq..layer.wq + d * d],
            false,
            T::zero(),
            &mut q,
        );
        gemm(
            len,
            d,
            d,
            &a,
            false,
            &p[layer.wk..layer.wk + d * d],
            false,
            T::zero(),
            &mut k,
        );
        gemm(
            len,
            d,
            d,
            &a,
            false,
            &p[layer.wv..layer.wv + d * d],
            false,
            T::zero(),
            &mut v,
        );
        self.rotate(&mut q, table, len, false);
        self.rotate(&mut k, table, len, false);
        let (probs, ctx) = self.attention(&q, &k, &v, len);
        let mut o = vec![T::zero(); len * d];
        gemm(
            len,
            d,
            d,
            &ctx,
            false,
            &p[layer.wo..layer.wo + d * d],
            false,
            T::zero(),
            &mut o,
        );
        let x_mid = add(&x_in, &o);
        let (b, inv2) = rmsnorm(&x_mid, &p[layer.mlp_norm..layer.mlp_norm + d], len, d);
        let hidden = self.config.mlp_hidden();
        let mut u = vec![T::zero(); len * hidden];
        gemm(
            len,
            d,
            hidden,
            &b,
            false,
            &p[layer.w1..layer.w1 + d * hidden],
            false,
            T::zero(),
            &mut u,
        );
        let g = u.iter().map(|&z| gelu(z)).collect();
        LayerCache {
            x_in,
            inv1,
            a,
            q,
            k,
            v,
            probs,
            ctx,
            x_mid,
            inv2,
            b,
            u,
            g,
        }
    }

    /// Rotates every head's interleaved pairs in place; `inverse` rotates
    /// by the negative angle (used to pull gradients back).
    fn rotate(&self, x: &mut [T], table: &RotaryTable<T>, len: usize, inverse: bool) {
        let (d, hd, pairs) = (self.config.d_model, self.config.head_dim, table.pairs);
        for t in 0..len {
            let row = &mut x[t * d..(t + 1) * d];
            let cos = &table.cos[t * pairs..(t + 1) * pairs];
            let sin = &table.sin[t * pairs..(t + 1) * pairs];
            for head in row.chunks_mut(hd) {
                for i in 0..pairs {
                    let (c, s) = (cos[i], if inverse { -sin[i] } else { sin[i] });
                    let (x0, x1) = (head[2 * i], head[2 * i + 1]);
                    head[2 * i] = x0 * c - x1 * s;
                    head[2 * i + 1] = x0 * s + x1 * c;
                }
            }
        }
    }

    /// Causal softmax attention per head; returns `(probs, ctx)` with probs
    /// laid out `[head][query][key]`.
    fn attention(&self, q: &[T], k: &[T], v: &[T], len: usize) -> (Vec<T>, Vec<T>) {
        let (d, hd, heads) = (
            self.config.d_model,
            self.config.head_dim,
            self.config.n_heads,
        );
        let scale = T::from_f64_lossy(1.0 / (hd as f64).sqrt());
        let mut probs = vec![T::zero(); heads * len * len];
        let mut ctx = vec![T::zero(); len * d];
        for h in 0..heads {
            let off = h * hd;
            for i in 0..len {
                let qi = &q[i * d + off..i * d + off + hd];
                let row = &mut probs[(h * len + i) * len..(h * len + i) * len + len];
                let mut max = T::neg_infinity();
                for j in 0..=i {
                    let kj = &k[j * d + off..j * d + off + hd];
                    let s = dot(qi, kj) * scale;
                    row[j] = s;
                    max = max.max(s);
                }
                let mut sum = T::zero();
                for z in &mut row[..=i] {
                    *z = (*z - max).exp();
                    sum += *z;
                }
                let out = &mut ctx[i * d + off..i * d + off + hd];
                for j in 0..=i {
                    row[j] = row[j] / sum;
                    let w = row[j];
                    for (o, vv) in out.iter_mut().zip(&v[j * d + off..j * d + off + hd]) {
                        *o += w * *vv;
                    }
                }
            }
        }
        (probs, ctx)
    }

    fn final_norm(&self, x: &[T], len: usize) -> (Vec<T>, Vec<T>) {
        let d = self.config.d_model;
        let fo = self.layout.final_norm;
        rmsnorm(x, &self.params[fo..fo + d], len, d)
    }

    fn logits(&self, f: &[T], rows: usize) -> Vec<T> {
        let (d, vocab) = (self.config.d_model, self.config.vocab_size);
        let head = self.layout.head;
        let mut out = vec![T::zero(); rows * vocab];
        gemm(
            rows,
            d,
            vocab,
            f,
            false,
            &self.params[head..head + d * vocab],
            false,
            T::zero(),
            &mut out,
        );
        out
    }

    fn block_backward(
        &self,
        layer: &LayerOffsets,
        c: &LayerCache<T>,
        table: &RotaryTable<T>,
        dout: &[T],
        grad: &mut [T],
    ) -> Vec<T> {
        let (d, hidden) = (self.config.d_model, self.config.mlp_hidden());
        let len = dout.len() / d;
        let p = &self.params;

        // MLP
        gemm(
            hidden,
            len,
            d,
            &c.g,
            true,
            dout,
            false,
            T::one(),
            &mut grad[layer.w2..layer.w2 + hidden * d],
        );
        let mut dg = vec![T::zero(); len * hidden];
        gemm(
            len,
            d,
            hidden,
            dout,
            false,
            &p[layer.w2..layer.w2 + hidden * d],
            true,
            T::zero(),
            &mut dg,
        );
        for (dz, &z) in dg.iter_mut().zip(&c.u) {
            *dz *= gelu_grad(z);
        }
        gemm(
            d,
            len,
            hidden,
            &c.b,
            true,
            &dg,
            false,
            T::one(),
            &mut grad[layer.w1..layer.w1 + d * hidden],
        );
        let mut db = vec![T::zero(); len * d];
        gemm(
            len,
            hidden,
            d,
            &dg,
            false,
            &p[layer.w1..layer.w1 + d * hidden],
            true,
            T::zero(),
            &mut db,
        );
        let mut dx_mid = dout.to_vec();
        rmsnorm_backward(
            &c.x_mid,
            &p[layer.mlp_norm..layer.mlp_norm + d],
            &c.inv2,
            &db,
            &mut dx_mid,
            &mut grad[layer.mlp_norm..layer.mlp_norm + d],
        );

        // attention output projection
        gemm(
            d,
            len,
            d,
            &c.ctx,
            true,
            &dx_mid,
            false,
            T::one(),
            &mut grad[layer.wo..layer.wo + d * d],
        );
        let mut dctx = vec![T::zero(); len * d];
        gemm(
            len,
            d,
            d,
            &dx_mid,
            false,
            &p[layer.wo..layer.wo + d * d],
            true,
            T::zero(),
            &mut dctx,
        );

        let (mut dq, mut dk, dv) = self.attention_backward(c, &dctx, len);
        self.rotate(&mut dq, table, len, true);
        self.rotate(&mut dk, table, len, true);

        let mut da = vec![T::zero(); len * d];
        for (w, dw) in [(layer.wq, &dq), (layer.wk, &dk), (layer.wv, &dv)] {
            gemm(
                d,
                len,
                d,
                &c.a,
                true,
                dw,
                false,
                T::one(),
                &mut grad[w..w + d * d],
            );
            gemm(
                len,
                d,
                d,
                dw,
                false,
                &p[w..w + d * d],
                true,
                T::one(),
                &mut da,
            );
        }
        let mut dx = dx_mid;
        rmsnorm_backward(
            &c.x_in,
            &p[layer.attn_norm..layer.attn_norm + d],
            &c.inv1,
            &da,
            &mut dx,
            &mut grad[layer.attn_norm..layer.attn_norm + d],
        );
        dx
    }

    fn attention_backward(
        &self,
        c: &LayerCache<T>,
        dctx: &[T],
        len: usize,
    ) -> (Vec<T>, Vec<T>, Vec<T>) {
        let (d, hd, heads) = (
            self.config.d_model,
            self.config.head_dim,
            self.config.n_heads,
        );
        let scale = T::from_f64_lossy(1.0 / (hd as f64).sqrt());
        let mut dq = vec![T::zero(); len * d];
        let mut dk = vec![T::zero(); len * d];
        let mut dv = vec![T::zero(); len * d];
        let mut dp = vec![T::zero(); len];
        for h in 0..heads {
            let off = h * hd;
            for i in 0..len {
                let row = &c.probs[(h * len + i) * len..(h * len + i) * len + len];
                let dci = &dctx[i * d + off..i * d + off + hd];
                let mut weighted = T::zero();
                for j in 0..=i {
                    dp[j] = dot(dci, &c.v[j * d + off..j * d + off + hd]);
                    weighted += row[j] * dp[j];
                    let w = row[j];
                    for (g, x) in dv[j * d + off..j * d + off + hd].iter_mut().zip(dci) {
                        *g += w * *x;
                    }
                }
                for j in 0..=i {
                    let ds = row[j] * (dp[j] - weighted) * scale;
                    if ds == T::zero() {
                        continue;
                    }
                    for e in 0..hd {
                        dq[i * d + off + e] += ds * c.k[j * d + off + e];
                        dk[j * d + off + e] += ds * c.q[i * d + off + e];
                    }
                }
            }
        }
        (dq, dk, dv)
    }
}

fn mlp_out<T: Real>(model: &ToyModel<T>, layer: &LayerOffsets, cache: &LayerCache<T>) -> Vec<T> {
    let (d, hidden) = (model.config.d_model, model.config.mlp_hidden());
    let len = cache.x_mid.len() / d;
    let mut y = vec![T::zero(); len * d];
    gemm(
        len,
        hidden,
        d,
        &cache.g,
        false,
        &model.params[layer.w2..layer.w2 + hidden * d],
        false,
        T::zero(),
        &mut y,
    );
    y
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + *x * *y)
}

fn add<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(x, y)| *x + *y).collect()
}

fn rmsnorm<T: Real>(x: &[T], gain: &[T], len: usize, d: usize) -> (Vec<T>, Vec<T>) {
    let eps = T::from_f64_lossy(NORM_EPS);
    let dn = T::from_usize(d).expect("small int");
    let mut out = vec![T::zero(); len * d];
    let mut inv = Vec::with_capacity(len);
    for t in 0..len {
        let row = &x[t * d..(t + 1) * d];
        let ms = row.iter().fold(T::zero(), |acc, v| acc + *v * *v) / dn;
        let r = (ms + eps).sqrt().recip();
        inv.push(r);
        for ((o, v), g) in out[t * d..(t + 1) * d].iter_mut().zip(row).zip(gain) {
            *o = *v * r * *g;
        }
    }
    (out, inv)
}

/// Adds the input gradient into `dx` and the gain gradient into `dgain`.
fn rmsnorm_backward<T: Real>(
    x: &[T],
    gain: &[T],
    inv: &[T],
    dy: &[T],
    dx: &mut [T],
    dgain: &mut [T],
) {
    let d = gain.len();
    let dn = T::from_usize(d).expect("small int");
    for (t, &r) in inv.iter().enumerate() {
        let xs = &x[t * d..(t + 1) * d];
        let dys = &dy[t * d..(t + 1) * d];
        let mut proj = T::zero();
        for j in 0..d {
            proj += dys[j] * gain[j] * xs[j];
            dgain[j] += dys[j] * xs[j] * r;
        }
        let coef = r * r * r * proj / dn;
        for j in 0..d {
            dx[t * d + j] += dys[j] * gain[j] * r - coef * xs[j];
        }
    }
}

fn gelu<T: Real>(z: T) -> T {
    let half = T::from_f64_lossy(0.5);
    let c = T::from_f64_lossy(GELU_C);
    let k = T::from_f64_lossy(GELU_K);
    half * z * (T::one() + (c * (z + k * z * z * z)).tanh())
}

fn gelu_grad<T: Real>(z: T) -> T {
    let half = T::from_f64_lossy(0.5);
    let c = T::from_f64_lossy(GELU_C);
    let k = T::from_f64_lossy(GELU_K);
    let three = T::from_f64_lossy(3.0);
    let t = (c * (z + k * z * z * z)).tanh();
    half * (T::one() + t) + half * z * (T::one() - t * t) * c * (T::one() + three * k * z * z)
}

/// Per-row `logsumexp(row) - row[target]`, accumulated in f64.
fn row_nll<T: Real>(logits: &[T], targets: &[u32], vocab: usize) -> Vec<f64> {
    logits
        .chunks(vocab)
        .zip(targets)
        .map(|(row, &target)| {
            let max = row
                .iter()
                .copied()
                .fold(T::neg_infinity(), T::max)
                .to_f64_lossy();
            let sum: f64 = row.iter().map(|z| (z.to_f64_lossy() - max).exp()).sum();
            max + sum.ln() - row[target as usize].to_f64_lossy()
        })
        .collect()
}
