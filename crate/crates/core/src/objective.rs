//! The training cost and its gradient.
//!
//! For a batch of `n` rows with selected pseudo-inputs `u⁽ⁱ⁾` and noise `εᵢ`,
//!
//! ```text
//! z_d,i = μ(u⁽ⁱ⁾) + exp(ℓ(u⁽ⁱ⁾)/2) ⊙ εᵢ
//! L = (1/n) Σ β‖xᵢ − D(z_d,i)‖² + (1−β)‖xᵢ − D(E(xᵢ))‖² + α‖E(xᵢ) − z_d,i‖²
//! ```
//!
//! The gradient is taken with respect to the encoder, decoder, prior network
//! and the pseudo-inputs themselves. Which pseudo-input a row was matched to
//! is an input here, not something differentiated.

use crate::error::{Error, Result};
use crate::model::{sample_conditional, split_moments, SwaeModel, LOGVAR_MAX, LOGVAR_MIN};
use crate::nncore::{ForwardCache, MlpParams, Parameters, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub beta: f64,
    pub alpha: f64,
}

impl LossWeights {
    pub fn new(beta: f64, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::InvalidArgument(format!(
                "beta must lie in [0, 1], got {beta}"
            )));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        Ok(Self { beta, alpha })
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            beta: 1.0,
            alpha: 1.0,
        }
    }
}

/// Per-term coefficients `(β, 1 − β, α)`. Lets callers weight the three
/// terms independently, e.g. to scale the whole cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermWeights {
    pub x: f64,
    pub recon: f64,
    pub z: f64,
}

impl TermWeights {
    pub fn scaled(self, c: f64) -> Self {
        Self {
            x: self.x * c,
            recon: self.recon * c,
            z: self.z * c,
        }
    }

    pub fn total(&self, x_loss: f64, recon_loss: f64, z_loss: f64) -> f64 {
        self.x * x_loss + self.recon * recon_loss + self.z * z_loss
    }
}

impl From<LossWeights> for TermWeights {
    fn from(w: LossWeights) -> Self {
        Self {
            x: w.beta,
            recon: 1.0 - w.beta,
            z: w.alpha,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub x_loss: f64,
    pub z_loss: f64,
    pub recon_loss: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn combine(
        weights: impl Into<TermWeights>,
        x_loss: f64,
        recon_loss: f64,
        z_loss: f64,
    ) -> Self {
        let total = weights.into().total(x_loss, recon_loss, z_loss);
        Self {
            x_loss,
            z_loss,
            recon_loss,
            total,
        }
    }

    /// Names the first non-finite term, if any.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        [
            ("x_loss", self.x_loss),
            ("recon_loss", self.recon_loss),
            ("z_loss", self.z_loss),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(name, _)| name)
    }
}

/// Mean over rows of the squared Euclidean distance between matching rows.
pub fn mean_sq_distance(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.ensure_same_shape(b, "squared-distance loss")?;
    let total: f64 = a
        .iter_rows()
        .zip(b.iter_rows())
        .map(|(r, s)| crate::nncore::tensor::sq_dist(r, s))
        .sum();
    Ok(total / a.rows() as f64)
}

pub fn x_loss(x_e: &Tensor, x_gen: &Tensor) -> Result<f64> {
    mean_sq_distance(x_e, x_gen)
}

pub fn z_loss(z_e: &Tensor, z_d: &Tensor) -> Result<f64> {
    mean_sq_distance(z_e, z_d)
}

pub fn recon_loss(x_e: &Tensor, x_rec: &Tensor) -> Result<f64> {
    mean_sq_distance(x_e, x_rec)
}

/// All three terms and the weighted total for given prior draws `z_d`.
pub fn swae_loss(
    model: &SwaeModel,
    x: &Tensor,
    z_d: &Tensor,
    weights: LossWeights,
) -> Result<LossBreakdown> {
    if x.rows() != z_d.rows() {
        return Err(Error::Dimension(format!(
            "{} data rows but {} prior draws",
            x.rows(),
            z_d.rows()
        )));
    }
    let z_e = model.encode(x)?;
    let x_gen = model.decode(z_d)?;
    let x_rec = model.decode(&z_e)?;
    Ok(LossBreakdown::combine(
        weights,
        x_loss(x, &x_gen)?,
        recon_loss(x, &x_rec)?,
        z_loss(&z_e, z_d)?,
    ))
}

/// Draws `z_d` row by row from the selected conditionals with the given noise.
pub fn draw_conditionals(model: &SwaeModel, u_indices: &[usize], eps: &Tensor) -> Result<Tensor> {
    eps.ensure_cols(model.dim_z(), "prior noise")?;
    if eps.rows() != u_indices.len() {
        return Err(Error::Dimension(format!(
            "{} noise rows for {} pseudo-input selections",
            eps.rows(),
            u_indices.len()
        )));
    }
    let u = model.pseudo_inputs.select_rows(u_indices)?;
    let comps = model.conditional_prior(&u)?;
    let mut data = Vec::with_capacity(eps.len());
    for (g, e) in comps.iter().zip(eps.iter_rows()) {
        data.extend(sample_conditional(g, e)?);
    }
    Tensor::matrix(u_indices.len(), model.dim_z(), data)
}

/// [`swae_loss`] with `z_d` drawn from the selected pseudo-inputs' conditionals.
pub fn swae_loss_with_noise(
    model: &SwaeModel,
    x: &Tensor,
    u_indices: &[usize],
    eps: &Tensor,
    weights: LossWeights,
) -> Result<LossBreakdown> {
    let z_d = draw_conditionals(model, u_indices, eps)?;
    swae_loss(model, x, &z_d, weights)
}

/// Gradients shaped like the model's four parameter groups.
#[derive(Debug, Clone, PartialEq)]
pub struct SwaeGrads {
    pub encoder: MlpParams,
    pub decoder: MlpParams,
    pub prior_net: MlpParams,
    pub pseudo_inputs: Tensor,
}

impl SwaeGrads {
    pub fn zeros_like(model: &SwaeModel) -> Self {
        Self {
            encoder: MlpParams::zeros(&model.encoder.spec),
            decoder: MlpParams::zeros(&model.decoder.spec),
            prior_net: MlpParams::zeros(&model.prior_net.spec),
            pseudo_inputs: Tensor::zeros(model.pseudo_inputs.shape()),
        }
    }
}

impl Parameters for SwaeGrads {
    fn for_each_slice(&self, f: &mut dyn FnMut(&[f64])) {
        self.encoder.for_each_slice(f);
        self.decoder.for_each_slice(f);
        self.prior_net.for_each_slice(f);
        f(self.pseudo_inputs.data());
    }

    fn for_each_slice_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.encoder.for_each_slice_mut(f);
        self.decoder.for_each_slice_mut(f);
        self.prior_net.for_each_slice_mut(f);
        f(self.pseudo_inputs.data_mut());
    }
}

/// Loss and exact gradient for one batch.
pub fn swae_grad(
    model: &SwaeModel,
    x: &Tensor,
    u_indices: &[usize],
    eps: &Tensor,
    weights: impl Into<TermWeights>,
) -> Result<(LossBreakdown, SwaeGrads)> {
    let (_, enc_cache) = model.encoder.forward(x)?;
    swae_grad_encoded(model, &enc_cache, u_indices, eps, weights)
}

/// [`swae_grad`] reusing an encoder forward pass over the batch.
pub fn swae_grad_encoded(
    model: &SwaeModel,
    enc_cache: &ForwardCache,
    u_indices: &[usize],
    eps: &Tensor,
    weights: impl Into<TermWeights>,
) -> Result<(LossBreakdown, SwaeGrads)> {
    let weights = weights.into();
    let x = enc_cache.input();
    let z_e = enc_cache.output();
    let n = x.rows();
    let dim_z = model.dim_z();
    eps.ensure_cols(dim_z, "prior noise")?;
    if eps.rows() != n || u_indices.len() != n {
        return Err(Error::Dimension(format!(
            "batch of {n} rows with {} selections and {} noise rows",
            u_indices.len(),
            eps.rows()
        )));
    }

    // Step 3: reparameterized draws from the selected conditionals.
    let u = model.pseudo_inputs.select_rows(u_indices)?;
    let (raw, prior_cache) = model.prior_net.forward(&u)?;
    let (mean, logvar) = split_moments(&raw, dim_z);
    let mut z_d = mean.clone();
    let mut std = logvar.clone();
    for ((z, s), e) in z_d
        .data_mut()
        .iter_mut()
        .zip(std.data_mut())
        .zip(eps.data())
    {
        *s = (0.5 * *s).exp();
        *z += *s * e;
    }
    z_d.ensure_finite("prior draw z_d")?;

    let (x_gen, gen_cache) = model.decoder.forward(&z_d)?;
    let (x_rec, rec_cache) = model.decoder.forward(z_e)?;

    let losses = LossBreakdown::combine(
        weights,
        x_loss(x, &x_gen)?,
        recon_loss(x, &x_rec)?,
        z_loss(z_e, &z_d)?,
    );
    if let Some(term) = losses.non_finite_term() {
        return Err(Error::NonFinite(format!("loss term {term}")));
    }

    let inv_n = 1.0 / n as f64;
    let c_x = 2.0 * weights.x * inv_n;
    let c_rec = 2.0 * weights.recon * inv_n;
    let c_z = 2.0 * weights.z * inv_n;

    let mut grads = SwaeGrads::zeros_like(model);
    let mut dz_d = Tensor::zeros(&[n, dim_z]);
    let mut dz_e = Tensor::zeros(&[n, dim_z]);

    if c_x != 0.0 {
        let d_gen = scaled_diff(&x_gen, x, c_x);
        let (dz, g) = model.decoder.backward(&gen_cache, &d_gen)?;
        grads.decoder.add_assign(&g);
        add_into(&mut dz_d, &dz);
    }
    if c_rec != 0.0 {
        let d_rec = scaled_diff(&x_rec, x, c_rec);
        let (dz, g) = model.decoder.backward(&rec_cache, &d_rec)?;
        grads.decoder.add_assign(&g);
        add_into(&mut dz_e, &dz);
    }
    // z-loss: ∂/∂z_e = c_z (z_e − z_d), ∂/∂z_d = −c_z (z_e − z_d).
    for ((ge, gd), (a, b)) in dz_e
        .data_mut()
        .iter_mut()
        .zip(dz_d.data_mut())
        .zip(z_e.data().iter().zip(z_d.data()))
    {
        let d = c_z * (a - b);
        *ge += d;
        *gd -= d;
    }

    let (_, g_enc) = model.encoder.backward(enc_cache, &dz_e)?;
    grads.encoder = g_enc;

    // Through z_d = μ + exp(ℓ/2) ε with ℓ = clamp(raw): the clamp passes
    // gradient only strictly inside its range.
    let mut d_raw = Tensor::zeros(&[n, 2 * dim_z]);
    for i in 0..n {
        let dz = dz_d.row(i);
        let (s, e, r) = (std.row(i), eps.row(i), raw.row(i));
        let out = d_raw.row_mut(i);
        out[..dim_z].copy_from_slice(dz);
        for j in 0..dim_z {
            let l_raw = r[dim_z + j];
            out[dim_z + j] = if l_raw > LOGVAR_MIN && l_raw < LOGVAR_MAX {
                dz[j] * e[j] * 0.5 * s[j]
            } else {
                0.0
            };
        }
    }
    let (du, g_prior) = model.prior_net.backward(&prior_cache, &d_raw)?;
    grads.prior_net = g_prior;
    for (row, &k) in du.iter_rows().zip(u_indices) {
        for (acc, v) in grads.pseudo_inputs.row_mut(k).iter_mut().zip(row) {
            *acc += v;
        }
    }
    Ok((losses, grads))
}

fn scaled_diff(a: &Tensor, b: &Tensor, c: f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| c * (x - y))
        .collect();
    Tensor::new(a.shape().to_vec(), data).unwrap()
}

fn add_into(acc: &mut Tensor, other: &Tensor) {
    for (a, b) in acc.data_mut().iter_mut().zip(other.data()) {
        *a += b;
    }
}
