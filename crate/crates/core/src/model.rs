//! Encoder, decoder, conditional-prior network and pseudo-inputs.
//!
//! The encoder and decoder are deterministic. The prior over latents is the
//! uniform mixture `p(z) = (1/K) Σ_k N(z; μ(u_k), diag(exp ℓ(u_k)))` where
//! `(μ, ℓ)` come from the prior network applied to pseudo-input `u_k`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::nncore::{Activation, Mlp, MlpSpec, Parameters, RandomStream, Rng, Tensor};

pub const LOGVAR_MIN: f64 = -6.0;
pub const LOGVAR_MAX: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub dim_x: usize,
    pub dim_z: usize,
    pub hidden: Vec<usize>,
    /// Number of pseudo-inputs.
    pub k: usize,
    pub hidden_activation: Activation,
    /// Sigmoid for image data, identity for unbounded features.
    pub decoder_output: Activation,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim_x == 0 || self.dim_z == 0 {
            return Err(Error::InvalidArgument("dimensions must be positive".into()));
        }
        if self.k == 0 {
            return Err(Error::InvalidArgument(
                "need at least one pseudo-input".into(),
            ));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidArgument(
                "hidden widths must be positive".into(),
            ));
        }
        Ok(())
    }

    /// A latent space at least as wide as the data is allowed but unusual.
    pub fn latent_not_smaller(&self) -> bool {
        self.dim_z >= self.dim_x
    }

    fn encoder_spec(&self) -> Result<MlpSpec> {
        MlpSpec::stack(
            self.dim_x,
            &self.hidden,
            self.dim_z,
            self.hidden_activation,
            Activation::Identity,
        )
    }

    fn decoder_spec(&self) -> Result<MlpSpec> {
        let hidden: Vec<usize> = self.hidden.iter().rev().copied().collect();
        MlpSpec::stack(
            self.dim_z,
            &hidden,
            self.dim_x,
            self.hidden_activation,
            self.decoder_output,
        )
    }

    fn prior_spec(&self) -> Result<MlpSpec> {
        MlpSpec::stack(
            self.dim_x,
            &self.hidden,
            2 * self.dim_z,
            self.hidden_activation,
            Activation::Identity,
        )
    }
}

/// Mean and clamped log-variance of one diagonal Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    pub mean: Vec<f64>,
    pub logvar: Vec<f64>,
}

#[inline]
pub fn clamp_logvar(raw: f64) -> f64 {
    raw.clamp(LOGVAR_MIN, LOGVAR_MAX)
}

/// `μ + exp(ℓ/2) ⊙ ε`.
pub fn sample_conditional(g: &GaussianParams, eps: &[f64]) -> Result<Vec<f64>> {
    if eps.len() != g.mean.len() || g.logvar.len() != g.mean.len() {
        return Err(Error::Dimension(format!(
            "noise has {} entries for a {}-dimensional Gaussian",
            eps.len(),
            g.mean.len()
        )));
    }
    Ok(g.mean
        .iter()
        .zip(&g.logvar)
        .zip(eps)
        .map(|((m, l), e)| m + (0.5 * l).exp() * e)
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwaeModel {
    pub config: ModelConfig,
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub prior_net: Mlp,
    /// `K × dim_x`.
    pub pseudo_inputs: Tensor,
}

impl SwaeModel {
    /// Glorot-initialized networks; pseudo-inputs are `K` distinct rows of
    /// `data` chosen with `rng`.
    pub fn init(config: ModelConfig, data: &Tensor, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        data.ensure_cols(config.dim_x, "initialization data")?;
        if config.k > data.rows() {
            return Err(Error::InvalidArgument(format!(
                "cannot draw {} pseudo-inputs from {} rows",
                config.k,
                data.rows()
            )));
        }
        let encoder = Mlp::glorot(config.encoder_spec()?, rng);
        let decoder = Mlp::glorot(config.decoder_spec()?, rng);
        let prior_net = Mlp::glorot(config.prior_spec()?, rng);
        let rows = rng.sample_without_replacement(data.rows(), config.k);
        let pseudo_inputs = data.select_rows(&rows)?;
        Ok(Self {
            config,
            encoder,
            decoder,
            prior_net,
            pseudo_inputs,
        })
    }

    /// All-zero networks and pseudo-inputs with the shapes `config` implies.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let zero = |spec: MlpSpec| {
            let params = crate::nncore::MlpParams::zeros(&spec);
            Mlp { spec, params }
        };
        Ok(Self {
            encoder: zero(config.encoder_spec()?),
            decoder: zero(config.decoder_spec()?),
            prior_net: zero(config.prior_spec()?),
            pseudo_inputs: Tensor::zeros(&[config.k, config.dim_x]),
            config,
        })
    }

    pub fn from_parts(
        config: ModelConfig,
        encoder: Mlp,
        decoder: Mlp,
        prior_net: Mlp,
        pseudo_inputs: Tensor,
    ) -> Result<Self> {
        config.validate()?;
        if encoder.spec != config.encoder_spec()?
            || decoder.spec != config.decoder_spec()?
            || prior_net.spec != config.prior_spec()?
        {
            return Err(Error::Dimension(
                "network shapes disagree with the model config".into(),
            ));
        }
        if pseudo_inputs.shape() != [config.k, config.dim_x] {
            return Err(Error::Dimension(format!(
                "pseudo-inputs have shape {:?}, expected [{}, {}]",
                pseudo_inputs.shape(),
                config.k,
                config.dim_x
            )));
        }
        Ok(Self {
            config,
            encoder,
            decoder,
            prior_net,
            pseudo_inputs,
        })
    }

    pub fn dim_x(&self) -> usize {
        self.config.dim_x
    }

    pub fn dim_z(&self) -> usize {
        self.config.dim_z
    }

    pub fn k(&self) -> usize {
        self.config.k
    }

    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        self.encoder.apply(x)
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        self.decoder.apply(z)
    }

    /// Raw prior-network output split into means and clamped log-variances,
    /// each `batch × dim_z`.
    pub fn prior_moments(&self, u: &Tensor) -> Result<(Tensor, Tensor)> {
        let raw = self.prior_net.apply(u)?;
        Ok(split_moments(&raw, self.dim_z()))
    }

    pub fn conditional_prior(&self, u: &Tensor) -> Result<Vec<GaussianParams>> {
        let (mean, logvar) = self.prior_moments(u)?;
        Ok(mean
            .iter_rows()
            .zip(logvar.iter_rows())
            .map(|(m, l)| GaussianParams {
                mean: m.to_vec(),
                logvar: l.to_vec(),
            })
            .collect())
    }

    /// One draw from the mixture prior: a uniform component, then its Gaussian.
    pub fn sample_prior<R: RandomStream + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        let k = rng.index(self.k());
        let u = self.pseudo_inputs.select_rows(&[k])?;
        let g = self
            .conditional_prior(&u)?
            .pop()
            .expect("one row in, one out");
        let eps: Vec<f64> = (0..self.dim_z()).map(|_| rng.standard_normal()).collect();
        sample_conditional(&g, &eps)
    }

    /// `n` mixture draws as an `n × dim_z` matrix. Components are evaluated once.
    pub fn sample_prior_batch<R: RandomStream + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
    ) -> Result<Tensor> {
        let comps = self.conditional_prior(&self.pseudo_inputs)?;
        let mut data = Vec::with_capacity(n * self.dim_z());
        for _ in 0..n {
            let k = rng.index(self.k());
            let eps: Vec<f64> = (0..self.dim_z()).map(|_| rng.standard_normal()).collect();
            data.extend(sample_conditional(&comps[k], &eps)?);
        }
        Tensor::matrix(n, self.dim_z(), data)
    }

    /// `log p(z)` under the mixture prior, via log-sum-exp.
    pub fn prior_log_density(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.dim_z() {
            return Err(Error::Dimension(format!(
                "latent has {} entries, expected {}",
                z.len(),
                self.dim_z()
            )));
        }
        let comps = self.conditional_prior(&self.pseudo_inputs)?;
        Ok(mixture_log_density(&comps, z))
    }

    /// Generated data: decoded mixture-prior draws.
    pub fn generate<R: RandomStream + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Tensor> {
        let z = self.sample_prior_batch(n, rng)?;
        self.decode(&z)
    }
}

pub(crate) fn split_moments(raw: &Tensor, dim_z: usize) -> (Tensor, Tensor) {
    let n = raw.rows();
    let mut mean = Vec::with_capacity(n * dim_z);
    let mut logvar = Vec::with_capacity(n * dim_z);
    for row in raw.iter_rows() {
        mean.extend_from_slice(&row[..dim_z]);
        logvar.extend(row[dim_z..].iter().map(|&l| clamp_logvar(l)));
    }
    (
        Tensor::matrix(n, dim_z, mean).unwrap(),
        Tensor::matrix(n, dim_z, logvar).unwrap(),
    )
}

pub fn gaussian_log_density(g: &GaussianParams, z: &[f64]) -> f64 {
    g.mean
        .iter()
        .zip(&g.logvar)
        .zip(z)
        .map(|((m, l), x)| -0.5 * ((2.0 * PI).ln() + l + (x - m).powi(2) * (-l).exp()))
        .sum()
}

pub fn mixture_log_density(components: &[GaussianParams], z: &[f64]) -> f64 {
    let logs: Vec<f64> = components
        .iter()
        .map(|g| gaussian_log_density(g, z))
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logs.iter().map(|l| (l - max).exp()).sum();
    max + sum.ln() - (components.len() as f64).ln()
}

impl Parameters for SwaeModel {
    fn for_each_slice(&self, f: &mut dyn FnMut(&[f64])) {
        self.encoder.params.for_each_slice(f);
        self.decoder.params.for_each_slice(f);
        self.prior_net.params.for_each_slice(f);
        f(self.pseudo_inputs.data());
    }

    fn for_each_slice_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.encoder.params.for_each_slice_mut(f);
        self.decoder.params.for_each_slice_mut(f);
        self.prior_net.params.for_each_slice_mut(f);
        f(self.pseudo_inputs.data_mut());
    }
}
