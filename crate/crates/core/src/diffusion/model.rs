//! MLP noise predictor.
//!
//! ```text
//! e   = silu(cond · We + be)                    conditioning encoder
//! x   = [noisy chunk | emb(k) | e]
//! out = silu(silu(x · W1 + b1) · W2 + b2) · W3 + b3
//! ```
//!
//! All parameters live in one flat vector so optimizers and checkpoints can
//! treat them uniformly; gradients use the same layout.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub state_dim: usize,
    pub action_dim: usize,
    pub h_act: usize,
    pub h_obs: usize,
    pub width: usize,
    pub enc_width: usize,
    pub emb_dim: usize,
    /// Whether the normalized delay is appended to the conditioning input.
    pub delay_conditioned: bool,
}

impl ModelDims {
    pub fn chunk_dim(&self) -> usize {
        self.h_act * self.action_dim
    }

    pub fn cond_dim(&self) -> usize {
        self.h_obs * self.state_dim + usize::from(self.delay_conditioned)
    }

    pub fn input_dim(&self) -> usize {
        self.chunk_dim() + self.emb_dim + self.enc_width
    }

    /// `(fan_in, fan_out)` of encoder, hidden 1, hidden 2, output.
    pub fn layers(&self) -> [(usize, usize); 4] {
        [
            (self.cond_dim(), self.enc_width),
            (self.input_dim(), self.width),
            (self.width, self.width),
            (self.width, self.chunk_dim()),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|(i, o)| i * o + o).sum()
    }

    fn offsets(&self) -> [usize; 4] {
        let mut off = [0; 4];
        let mut acc = 0;
        for (l, (i, o)) in self.layers().iter().enumerate() {
            off[l] = acc;
            acc += i * o + o;
        }
        off
    }

    pub fn check(&self) -> Result<()> {
        let dims = [
            self.state_dim,
            self.action_dim,
            self.h_act,
            self.h_obs,
            self.width,
            self.enc_width,
        ];
        if dims.contains(&0) || !self.emb_dim.is_multiple_of(2) {
            return Err(Error::Config(format!("invalid model dimensions {self:?}")));
        }
        Ok(())
    }
}

/// Sinusoidal embedding of diffusion step `k`.
pub fn step_embedding(k: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(1000f64.ln()) * i as f64 / half.max(1) as f64).exp();
        let arg = k as f64 * freq;
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    out
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    pub dims: ModelDims,
    pub theta: Vec<f64>,
}

/// Activations kept for the backward pass.
pub(crate) struct Cache {
    cond: Array2<f64>,
    ze: Array2<f64>,
    x: Array2<f64>,
    z1: Array2<f64>,
    h1: Array2<f64>,
    z2: Array2<f64>,
    h2: Array2<f64>,
    pub(crate) out: Array2<f64>,
}

impl Denoiser {
    /// Weights ~ N(0, 1/fan_in), biases zero.
    pub fn init(dims: ModelDims, rng: &mut impl Rng) -> Result<Self> {
        dims.check()?;
        let mut theta = Vec::with_capacity(dims.param_count());
        for (i, o) in dims.layers() {
            let std = (1.0 / i as f64).sqrt();
            for _ in 0..i * o {
                let z: f64 = StandardNormal.sample(rng);
                theta.push(std * z);
            }
            theta.extend(std::iter::repeat_n(0.0, o));
        }
        Ok(Denoiser { dims, theta })
    }

    pub fn from_params(dims: ModelDims, theta: Vec<f64>) -> Result<Self> {
        dims.check()?;
        if theta.len() != dims.param_count() {
            return Err(Error::Shape {
                expected: dims.param_count(),
                found: theta.len(),
            });
        }
        Ok(Denoiser { dims, theta })
    }

    fn layer(&self, l: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let (i, o) = self.dims.layers()[l];
        let off = self.dims.offsets()[l];
        let w = ArrayView2::from_shape((i, o), &self.theta[off..off + i * o]).expect("layout");
        let b = ArrayView1::from(&self.theta[off + i * o..off + i * o + o]);
        (w, b)
    }

    /// Predicted noise for a batch; rows of `noisy` and `cond` are items.
    pub fn predict(
        &self,
        noisy: ArrayView2<f64>,
        steps: &[usize],
        cond: ArrayView2<f64>,
    ) -> Array2<f64> {
        self.forward(noisy, steps, cond).out
    }

    pub(crate) fn forward(
        &self,
        noisy: ArrayView2<f64>,
        steps: &[usize],
        cond: ArrayView2<f64>,
    ) -> Cache {
        let d = &self.dims;
        let b = noisy.nrows();
        assert_eq!(noisy.ncols(), d.chunk_dim());
        assert_eq!(cond.ncols(), d.cond_dim());
        assert_eq!(steps.len(), b);

        let (we, be) = self.layer(0);
        let ze = cond.dot(&we) + be;
        let e = ze.mapv(silu);

        let mut x = Array2::zeros((b, d.input_dim()));
        let (ca, cm) = (d.chunk_dim(), d.chunk_dim() + d.emb_dim);
        x.slice_mut(s![.., ..ca]).assign(&noisy);
        for (r, &k) in steps.iter().enumerate() {
            let emb = step_embedding(k, d.emb_dim);
            x.slice_mut(s![r, ca..cm]).assign(&ArrayView1::from(&emb));
        }
        x.slice_mut(s![.., cm..]).assign(&e);

        let (w1, b1) = self.layer(1);
        let z1 = x.dot(&w1) + b1;
        let h1 = z1.mapv(silu);
        let (w2, b2) = self.layer(2);
        let z2 = h1.dot(&w2) + b2;
        let h2 = z2.mapv(silu);
        let (w3, b3) = self.layer(3);
        let out = h2.dot(&w3) + b3;
        Cache {
            cond: cond.to_owned(),
            ze,
            x,
            z1,
            h1,
            z2,
            h2,
            out,
        }
    }

    /// Gradient of a scalar loss with respect to `theta`, given
    /// `dout = dLoss/dout`.
    pub(crate) fn backward(&self, cache: &Cache, dout: &Array2<f64>) -> Vec<f64> {
        let d = &self.dims;
        let mut grad = vec![0.0; d.param_count()];
        let offs = d.offsets();
        let mut put = |l: usize, gw: &Array2<f64>, gb: &Array1<f64>| {
            let off = offs[l];
            let n = gw.len();
            for (dst, src) in grad[off..off + n].iter_mut().zip(gw.iter()) {
                *dst = *src;
            }
            for (dst, src) in grad[off + n..off + n + gb.len()].iter_mut().zip(gb.iter()) {
                *dst = *src;
            }
        };

        let (w3, _) = self.layer(3);
        put(3, &cache.h2.t().dot(dout), &dout.sum_axis(Axis(0)));
        let dh2 = dout.dot(&w3.t());
        let dz2 = dh2 * &cache.z2.mapv(silu_grad);

        let (w2, _) = self.layer(2);
        put(2, &cache.h1.t().dot(&dz2), &dz2.sum_axis(Axis(0)));
        let dh1 = dz2.dot(&w2.t());
        let dz1 = dh1 * &cache.z1.mapv(silu_grad);

        let (w1, _) = self.layer(1);
        put(1, &cache.x.t().dot(&dz1), &dz1.sum_axis(Axis(0)));
        let dx = dz1.dot(&w1.t());
        let cm = d.chunk_dim() + d.emb_dim;
        let de = dx.slice(s![.., cm..]).to_owned();
        let dze = de * &cache.ze.mapv(silu_grad);
        put(0, &cache.cond.t().dot(&dze), &dze.sum_axis(Axis(0)));
        grad
    }
}
