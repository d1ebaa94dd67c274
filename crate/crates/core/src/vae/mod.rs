//! MLP variational autoencoder trained on clamped mini-batches.
//!
//! Each training batch varies a single scene factor. The latent units that
//! do not belong to that factor are replaced by their batch mean before
//! decoding, and receive a small gradient pulling them toward that mean, so
//! they learn to ignore the factor.

mod render;
mod train;

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{kl_slice, sigmoid, DenseLayer, PreluSite};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub use render::{
    make_clamped_batch, render_sprite, sweep, ClampedBatch, LatentLayout, SceneParams, Transform, AZIMUTH_RANGE,
    ELEVATION_RANGE, INTRINSIC_DIM, LIGHT_RANGE,
};
pub use train::{
    clamp_to_mean, clamped_train_step, draw_transform, dump_images, invariance_gradient, latent_variances,
    max_variance_latent, spearman, train_vae, write_pgm, VaeDiagnostics,
};

/// Log-variances are clamped to `+-LOGVAR_LIMIT` so sigma stays positive
/// and finite in f64; the gradient is zero outside that band.
pub const LOGVAR_LIMIT: f64 = 700.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeConfig {
    /// Images are `side x side`.
    pub side: usize,
    pub hidden: usize,
    /// Width of `y_e`, the encoder output that both latent heads read.
    pub encoder_out: usize,
    pub layout: LatentLayout,
    pub batch_size: usize,
    /// Scale of the invariance gradient on clamped latents.
    pub kappa: f64,
    /// Relative frequency of azimuth, elevation, light and intrinsic batches.
    pub ratio: [f64; 4],
    /// Steps between invariance diagnostics in the training log.
    pub diag_every: u64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            side: 32,
            hidden: 256,
            encoder_out: 64,
            layout: LatentLayout::default(),
            batch_size: 20,
            kappa: 0.01,
            ratio: [1.0, 1.0, 1.0, 10.0],
            diag_every: 1000,
        }
    }
}

impl VaeConfig {
    pub fn image_dim(&self) -> usize {
        self.side * self.side
    }

    pub fn latent_dim(&self) -> usize {
        self.layout.total_dim()
    }

    pub fn validate(&self, prefix: &str) -> Result<()> {
        let k = |f: &str| format!("{prefix}.{f}");
        if self.side < 8 {
            return Err(Error::config(k("side"), "must be >= 8"));
        }
        if self.hidden == 0 {
            return Err(Error::config(k("hidden"), "must be >= 1"));
        }
        if self.encoder_out == 0 {
            return Err(Error::config(k("encoder_out"), "must be >= 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::config(k("batch_size"), "must be >= 2"));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(Error::config(k("kappa"), "must be >= 0"));
        }
        if self.ratio.iter().any(|r| !(*r >= 0.0 && r.is_finite())) || self.ratio.iter().sum::<f64>() <= 0.0 {
            return Err(Error::config(k("ratio"), "entries must be >= 0 with a positive sum"));
        }
        if self.diag_every == 0 {
            return Err(Error::config(k("diag_every"), "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct VaeModel {
    pub config: VaeConfig,
    enc1: DenseLayer,
    enc1_act: PreluSite,
    enc2: DenseLayer,
    enc2_act: PreluSite,
    /// `W_e`: rows `0..L` give `mu`, rows `L..2L` the log-variance.
    latent: DenseLayer,
    dec1: DenseLayer,
    dec1_act: PreluSite,
    dec2: DenseLayer,
    pub params: ParamStore,
}

/// Encoder activations for a batch, row-major `[batch, width]`.
#[derive(Debug, Clone)]
pub(crate) struct EncodeTrace {
    h1_pre: Vec<f64>,
    h1: Vec<f64>,
    ye_pre: Vec<f64>,
    ye: Vec<f64>,
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
    pub sigma: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct DecodeTrace {
    d1_pre: Vec<f64>,
    d1: Vec<f64>,
    pub xhat: Vec<f64>,
}

/// Per-batch outcome of a forward/backward pass.
#[derive(Debug, Clone)]
#[cfg_attr(not(test), allow(dead_code))]
pub(crate) struct Pass {
    /// Mean over the batch of reconstruction plus KL.
    pub loss: f64,
    /// Sampled codes before clamping.
    pub z: Vec<f64>,
    /// Codes the decoder saw.
    pub z_dec: Vec<f64>,
    /// Per-sample gradient at the latent layer (before averaging over the batch).
    pub dz: Vec<f64>,
}

impl VaeModel {
    pub fn new(config: VaeConfig, seed: u64) -> Result<Self> {
        config.validate("vae")?;
        let (p, h, y, l) = (config.image_dim(), config.hidden, config.encoder_out, config.latent_dim());
        let mut model = VaeModel {
            enc1: DenseLayer::new("vae.enc1", p, h),
            enc1_act: PreluSite::new("vae.enc1"),
            enc2: DenseLayer::new("vae.enc2", h, y),
            enc2_act: PreluSite::new("vae.enc2"),
            latent: DenseLayer::linear("vae.latent", y, 2 * l),
            dec1: DenseLayer::new("vae.dec1", l, h),
            dec1_act: PreluSite::new("vae.dec1"),
            dec2: DenseLayer::new("vae.dec2", h, p),
            params: ParamStore::new(),
            config,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        model.enc1.init(&mut params, &mut rng);
        model.enc1_act.init(&mut params, &mut rng);
        model.enc2.init(&mut params, &mut rng);
        model.enc2_act.init(&mut params, &mut rng);
        model.latent.init(&mut params, &mut rng);
        model.dec1.init(&mut params, &mut rng);
        model.dec1_act.init(&mut params, &mut rng);
        model.dec2.init(&mut params, &mut rng);
        model.params = params;
        Ok(model)
    }

    pub fn layout(&self) -> &LatentLayout {
        &self.config.layout
    }

    pub(crate) fn encode_batch(&self, xs: &[f64]) -> EncodeTrace {
        let (p, h, y, l) = self.dims();
        let b = xs.len() / p;
        let mut h1_pre = vec![0.0; b * h];
        self.enc1.forward_batch(&self.params, xs, &mut h1_pre);
        let mut h1 = vec![0.0; b * h];
        self.enc1_act.forward_into(&self.params, &h1_pre, &mut h1);
        let mut ye_pre = vec![0.0; b * y];
        self.enc2.forward_batch(&self.params, &h1, &mut ye_pre);
        let mut ye = vec![0.0; b * y];
        self.enc2_act.forward_into(&self.params, &ye_pre, &mut ye);
        let mut head = vec![0.0; b * 2 * l];
        self.latent.forward_batch(&self.params, &ye, &mut head);
        let mut mu = Vec::with_capacity(b * l);
        let mut logvar = Vec::with_capacity(b * l);
        for row in head.chunks_exact(2 * l) {
            mu.extend_from_slice(&row[..l]);
            logvar.extend_from_slice(&row[l..]);
        }
        let sigma = logvar
            .iter()
            .map(|v: &f64| (0.5 * v.clamp(-LOGVAR_LIMIT, LOGVAR_LIMIT)).exp())
            .collect();
        EncodeTrace {
            h1_pre,
            h1,
            ye_pre,
            ye,
            mu,
            logvar,
            sigma,
        }
    }

    pub(crate) fn decode_batch(&self, zs: &[f64]) -> DecodeTrace {
        let (p, h, _, l) = self.dims();
        let b = zs.len() / l;
        let mut d1_pre = vec![0.0; b * h];
        self.dec1.forward_batch(&self.params, zs, &mut d1_pre);
        let mut d1 = vec![0.0; b * h];
        self.dec1_act.forward_into(&self.params, &d1_pre, &mut d1);
        let mut xhat = vec![0.0; b * p];
        self.dec2.forward_batch(&self.params, &d1, &mut xhat);
        xhat.iter_mut().for_each(|v| *v = sigmoid(*v));
        DecodeTrace { d1_pre, d1, xhat }
    }

    /// `(mu, sigma)` of the approximate posterior for one image.
    pub fn encode(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        x.expect_vector(self.config.image_dim(), "vae encode input")?;
        let t = self.encode_batch(x.data());
        Ok((Tensor::vector(t.mu), Tensor::vector(t.sigma)))
    }

    /// Posterior means for a list of images, one row per image.
    pub fn encode_means(&self, images: &[Tensor]) -> Result<Vec<Vec<f64>>> {
        let p = self.config.image_dim();
        let mut flat = Vec::with_capacity(images.len() * p);
        for img in images {
            img.expect_vector(p, "vae encode input")?;
            flat.extend_from_slice(img.data());
        }
        let l = self.config.latent_dim();
        Ok(self.encode_batch(&flat).mu.chunks_exact(l).map(<[f64]>::to_vec).collect())
    }

    /// Image in `[0, 1]` for the code `z`.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        z.expect_vector(self.config.latent_dim(), "vae decode input")?;
        Ok(Tensor::vector(self.decode_batch(z.data()).xhat))
    }

    fn dims(&self) -> (usize, usize, usize, usize) {
        let c = &self.config;
        (c.image_dim(), c.hidden, c.encoder_out, c.latent_dim())
    }

    /// Backpropagates `dxhat` (gradient w.r.t. the sigmoid outputs) through the
    /// decoder, accumulating parameter gradients. Returns the gradient w.r.t. `zs`.
    fn decoder_backward(&mut self, zs: &[f64], t: &DecodeTrace, dxhat: &[f64]) -> Vec<f64> {
        let (_, h, _, l) = self.dims();
        let b = zs.len() / l;
        let d_out: Vec<f64> = dxhat.iter().zip(&t.xhat).map(|(d, s)| d * s * (1.0 - s)).collect();
        let mut dd1 = vec![0.0; b * h];
        self.dec2.backward_batch(&mut self.params, &t.d1, &d_out, Some(&mut dd1));
        self.dec1_act.backward_in_place(&mut self.params, &t.d1_pre, &mut dd1);
        let mut dz = vec![0.0; b * l];
        self.dec1.backward_batch(&mut self.params, zs, &dd1, Some(&mut dz));
        dz
    }

    fn encoder_backward(&mut self, xs: &[f64], t: &EncodeTrace, dmu: &[f64], dlogvar: &[f64]) {
        let (_, h, y, l) = self.dims();
        let b = xs.len() / self.config.image_dim();
        let mut dhead = Vec::with_capacity(b * 2 * l);
        for (m, v) in dmu.chunks_exact(l).zip(dlogvar.chunks_exact(l)) {
            dhead.extend_from_slice(m);
            dhead.extend_from_slice(v);
        }
        let mut dye = vec![0.0; b * y];
        self.latent.backward_batch(&mut self.params, &t.ye, &dhead, Some(&mut dye));
        self.enc2_act.backward_in_place(&mut self.params, &t.ye_pre, &mut dye);
        let mut dh1 = vec![0.0; b * h];
        self.enc2.backward_batch(&mut self.params, &t.h1, &dye, Some(&mut dh1));
        self.enc1_act.backward_in_place(&mut self.params, &t.h1_pre, &mut dh1);
        self.enc1.backward_batch(&mut self.params, xs, &dh1, None);
    }

    /// Forward and backward for a batch with fixed noise `eps`. Overwrites the
    /// gradients with those of the mean batch loss. With `trained = Some(r)`
    /// the latents outside `r` are replaced by their batch mean before
    /// decoding and get the invariance gradient `kappa (z - mean)` instead of
    /// the decoder's; latents in `r` keep the decoder's gradient.
    pub(crate) fn pass(&mut self, xs: &[f64], eps: &[f64], trained: Option<Range<usize>>) -> Pass {
        let (p, _, _, l) = self.dims();
        let b = xs.len() / p;
        debug_assert_eq!(eps.len(), b * l);
        self.params.zero_grads();
        let enc = self.encode_batch(xs);
        let z: Vec<f64> = (0..b * l).map(|i| enc.mu[i] + enc.sigma[i] * eps[i]).collect();
        let (z_dec, mean) = match &trained {
            Some(r) => {
                let (zc, mean) = clamp_to_mean(&z, l, r.clone());
                (zc, Some(mean))
            }
            None => (z.clone(), None),
        };
        let dec = self.decode_batch(&z_dec);

        let mut loss = 0.0;
        for k in 0..b {
            let (x, xh) = (&xs[k * p..(k + 1) * p], &dec.xhat[k * p..(k + 1) * p]);
            let recon: f64 = 0.5 * x.iter().zip(xh).map(|(a, c)| (a - c) * (a - c)).sum::<f64>();
            loss += recon + kl_slice(&enc.mu[k * l..(k + 1) * l], &enc.sigma[k * l..(k + 1) * l]);
        }
        loss /= b as f64;

        let dxhat: Vec<f64> = dec.xhat.iter().zip(xs).map(|(h, x)| h - x).collect();
        let mut dz = self.decoder_backward(&z_dec, &dec, &dxhat);
        if let (Some(r), Some(mean)) = (&trained, &mean) {
            let kappa = self.config.kappa;
            for k in 0..b {
                for i in (0..l).filter(|i| !r.contains(i)) {
                    dz[k * l + i] = kappa * (z[k * l + i] - mean[i]);
                }
            }
        }
        let mut dmu = vec![0.0; b * l];
        let mut dlogvar = vec![0.0; b * l];
        for i in 0..b * l {
            let s = enc.sigma[i];
            dmu[i] = dz[i] + enc.mu[i];
            if enc.logvar[i].abs() <= LOGVAR_LIMIT {
                dlogvar[i] = dz[i] * eps[i] * 0.5 * s + 0.5 * (s * s - 1.0);
            }
        }
        self.encoder_backward(xs, &enc, &dmu, &dlogvar);

        let inv = 1.0 / b as f64;
        for (_, param) in self.params.iter_mut() {
            param.grad.data_mut().iter_mut().for_each(|g| *g *= inv);
        }
        Pass { loss, z, z_dec, dz }
    }

    /// Mean batch loss with fixed noise and no clamping; leaves gradients alone.
    pub fn batch_loss(&self, xs: &[f64], eps: &[f64]) -> f64 {
        let (p, _, _, l) = self.dims();
        let b = xs.len() / p;
        let enc = self.encode_batch(xs);
        let z: Vec<f64> = (0..b * l).map(|i| enc.mu[i] + enc.sigma[i] * eps[i]).collect();
        let dec = self.decode_batch(&z);
        let mut loss = 0.0;
        for k in 0..b {
            let (x, xh) = (&xs[k * p..(k + 1) * p], &dec.xhat[k * p..(k + 1) * p]);
            loss += 0.5 * x.iter().zip(xh).map(|(a, c)| (a - c) * (a - c)).sum::<f64>();
            loss += kl_slice(&enc.mu[k * l..(k + 1) * l], &enc.sigma[k * l..(k + 1) * l]);
        }
        loss / b as f64
    }

    /// Gradient of [`batch_loss`](Self::batch_loss), written into `params`.
    pub fn batch_gradient(&mut self, xs: &[f64], eps: &[f64]) -> f64 {
        self.pass(xs, eps, None).loss
    }
}

/// `z = mu + sigma * eps` with `eps ~ N(0, I)`.
pub fn reparameterize<R: Rng + ?Sized>(mu: &Tensor, sigma: &Tensor, rng: &mut R) -> Result<Tensor> {
    let eps: Vec<f64> = (0..mu.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    reparameterize_with(mu, sigma, &eps)
}

/// Reparameterization with caller-supplied noise.
pub fn reparameterize_with(mu: &Tensor, sigma: &Tensor, eps: &[f64]) -> Result<Tensor> {
    if mu.shape() != sigma.shape() {
        return Err(Error::dim("reparameterize sigma", mu.shape(), sigma.shape()));
    }
    if eps.len() != mu.len() {
        return Err(Error::dim("reparameterize noise", &[mu.len()], &[eps.len()]));
    }
    if let Some(s) = sigma.data().iter().find(|s| !(**s > 0.0)) {
        return Err(Error::Domain(format!("sigma must be positive, got {s}")));
    }
    let z = mu.data().iter().zip(sigma.data()).zip(eps).map(|((m, s), e)| m + s * e).collect();
    Ok(Tensor::new(mu.shape().to_vec(), z).expect("same length"))
}

/// Reconstruction `0.5 ||x - decode(z)||^2` plus the KL of the posterior for `x`.
pub fn vae_loss(model: &VaeModel, x: &Tensor, z: &Tensor) -> Result<f64> {
    let (mu, sigma) = model.encode(x)?;
    let xhat = model.decode(z)?;
    let recon = 0.5 * x.data().iter().zip(xhat.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    Ok(recon + kl_slice(mu.data(), sigma.data()))
}
