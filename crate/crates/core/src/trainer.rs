//! The training loop: sample a batch, match each row to its nearest
//! pseudo-input, draw from that pseudo-input's conditional prior, then take one
//! Adam step on encoder, decoder, prior network and pseudo-inputs together.

use std::time::{Duration, Instant};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, SwaeModel};
use crate::nncore::tensor::sq_dist;
use crate::nncore::{Activation, AdamConfig, AdamState, Rng, Tensor};
use crate::objective::{swae_grad_encoded, LossBreakdown, LossWeights};

/// Where nearest-pseudo-input search compares distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NearestMode {
    /// `‖x − u_k‖²` in data space.
    Data,
    /// `‖E(x) − E(u_k)‖²`, cheaper when `dim_z ≪ dim_x`.
    Latent,
}

impl NearestMode {
    pub fn name(self) -> &'static str {
        match self {
            NearestMode::Data => "data",
            NearestMode::Latent => "latent",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "data" => Some(NearestMode::Data),
            "latent" => Some(NearestMode::Latent),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub k: usize,
    pub dim_z: usize,
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub nearest_mode: NearestMode,
    pub decoder_output: Activation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            k: 500,
            dim_z: 8,
            hidden: vec![256, 256],
            batch_size: 100,
            epochs: 10,
            adam: AdamConfig::default(),
            seed: 0,
            nearest_mode: NearestMode::Data,
            decoder_output: Activation::Sigmoid,
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self, dim_x: usize) -> ModelConfig {
        ModelConfig {
            dim_x,
            dim_z: self.dim_z,
            hidden: self.hidden.clone(),
            k: self.k,
            hidden_activation: Activation::Tanh,
            decoder_output: self.decoder_output,
        }
    }

    pub fn validate(&self) -> Result<()> {
        LossWeights::new(self.weights.beta, self.weights.alpha)?;
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "batch size must be at least 1".into(),
            ));
        }
        if self.adam.lr.is_nan() || self.adam.lr <= 0.0 {
            return Err(Error::InvalidArgument(
                "learning rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    /// Mean of the per-step breakdowns, one entry per completed epoch.
    pub epochs: Vec<LossBreakdown>,
    /// `total` for every optimizer step, in order.
    pub step_totals: Vec<f64>,
    pub steps: u64,
    /// Rows pushed through the encoder, counting pseudo-inputs encoded for
    /// latent-space matching.
    pub encoder_rows: u64,
    pub duration: Duration,
}

/// Index of the pseudo-input closest to `x` (lowest index on ties).
pub fn nearest_pseudo_input(x: &[f64], model: &SwaeModel, mode: NearestMode) -> Result<usize> {
    let x = Tensor::matrix(1, x.len(), x.to_vec())?;
    let idx = match mode {
        NearestMode::Data => nearest_rows(&x, &model.pseudo_inputs)?,
        NearestMode::Latent => {
            let zx = model.encode(&x)?;
            let zu = model.encode(&model.pseudo_inputs)?;
            nearest_rows(&zx, &zu)?
        }
    };
    Ok(idx[0])
}

/// For each row of `queries`, the index of the nearest row of `candidates`
/// under squared L2, ties to the lowest index.
pub fn nearest_rows(queries: &Tensor, candidates: &Tensor) -> Result<Vec<usize>> {
    if queries.cols() != candidates.cols() {
        return Err(Error::Dimension(format!(
            "queries have {} columns, candidates {}",
            queries.cols(),
            candidates.cols()
        )));
    }
    Ok(queries
        .iter_rows()
        .map(|q| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (k, c) in candidates.iter_rows().enumerate() {
                let d = sq_dist(q, c);
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            best
        })
        .collect())
}

pub struct Trainer {
    pub model: SwaeModel,
    config: TrainConfig,
    adam: AdamState,
    rng: Rng,
    log: TrainLog,
}

impl Trainer {
    pub fn new(data: &Tensor, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(config.seed);
        let mut init_rng = rng.fork(0);
        let model = SwaeModel::init(config.model_config(data.cols()), data, &mut init_rng)?;
        let adam = AdamState::for_params(&model, config.adam);
        // Keep the batching/noise stream independent of initialization draws.
        rng = rng.fork(1);
        Ok(Self {
            model,
            config,
            adam,
            rng,
            log: TrainLog::default(),
        })
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    /// One step on the given batch rows.
    pub fn step(&mut self, x: &Tensor) -> Result<LossBreakdown> {
        let (z_e, enc_cache) = self.model.encoder.forward(x)?;
        self.log.encoder_rows += x.rows() as u64;
        let u_indices = match self.config.nearest_mode {
            NearestMode::Data => nearest_rows(x, &self.model.pseudo_inputs)?,
            NearestMode::Latent => {
                // U moves every step, so its encodings are never reused.
                let zu = self.model.encode(&self.model.pseudo_inputs)?;
                self.log.encoder_rows += self.model.k() as u64;
                nearest_rows(&z_e, &zu)?
            }
        };
        let mut eps = Tensor::zeros(&[x.rows(), self.model.dim_z()]);
        self.rng.fill_normal(eps.data_mut());
        let (losses, grads) = swae_grad_encoded(
            &self.model,
            &enc_cache,
            &u_indices,
            &eps,
            self.config.weights,
        )
        .map_err(|e| match e {
            Error::NonFinite(what) => {
                Error::NonFinite(format!("{what} at step {}", self.log.steps + 1))
            }
            other => other,
        })?;
        self.adam.step(&mut self.model, &grads)?;
        self.log.steps += 1;
        self.log.step_totals.push(losses.total);
        Ok(losses)
    }

    /// One pass over `data` in a fresh seeded order.
    pub fn epoch(&mut self, data: &Tensor) -> Result<LossBreakdown> {
        let n = data.rows();
        let order = self.rng.permutation(n);
        let mut sum = LossBreakdown::default();
        let mut count = 0usize;
        for chunk in order.chunks(self.config.batch_size) {
            let x = data.select_rows(chunk)?;
            let l = self.step(&x)?;
            sum.x_loss += l.x_loss;
            sum.z_loss += l.z_loss;
            sum.recon_loss += l.recon_loss;
            sum.total += l.total;
            count += 1;
        }
        let c = count as f64;
        let mean = LossBreakdown {
            x_loss: sum.x_loss / c,
            z_loss: sum.z_loss / c,
            recon_loss: sum.recon_loss / c,
            total: sum.total / c,
        };
        self.log.epochs.push(mean);
        Ok(mean)
    }

    pub fn finish(self) -> (SwaeModel, TrainLog) {
        (self.model, self.log)
    }
}

/// Runs the full epoch budget on `dataset`.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<(SwaeModel, TrainLog)> {
    train_with(dataset, config, |_, _| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with<F>(
    dataset: &Dataset,
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<(SwaeModel, TrainLog)>
where
    F: FnMut(usize, &LossBreakdown),
{
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let start = Instant::now();
    let data = &dataset.features;
    let mut trainer = Trainer::new(data, config.clone())?;
    for e in 0..config.epochs {
        let l = trainer.epoch(data)?;
        on_epoch(e, &l);
    }
    let (model, mut log) = trainer.finish();
    log.duration = start.elapsed();
    Ok((model, log))
}

/// The model `train` starts from for this data and config.
pub fn initial_model(dataset: &Dataset, config: &TrainConfig) -> Result<SwaeModel> {
    Ok(Trainer::new(&dataset.features, config.clone())?.model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gmm_generate;
    use crate::nncore::{LayerParams, Mlp, MlpParams, MlpSpec, RandomStream};

    fn model_with_pseudo_inputs(u: Vec<Vec<f64>>) -> SwaeModel {
        let data = Tensor::from_rows(&u).unwrap();
        let cfg = ModelConfig {
            dim_x: data.cols(),
            dim_z: data.cols(),
            hidden: vec![],
            k: data.rows(),
            hidden_activation: Activation::Tanh,
            decoder_output: Activation::Identity,
        };
        let mut m = SwaeModel::init(cfg, &data, &mut Rng::new(0)).unwrap();
        m.pseudo_inputs = data;
        m
    }

    #[test]
    fn nearest_in_data_space() {
        let m = model_with_pseudo_inputs(vec![vec![1.0, 0.0], vec![3.0, 4.0]]);
        assert_eq!(
            nearest_pseudo_input(&[0.0, 0.0], &m, NearestMode::Data).unwrap(),
            0
        );
        assert_eq!(
            nearest_pseudo_input(&[3.0, 3.0], &m, NearestMode::Data).unwrap(),
            1
        );
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let m = model_with_pseudo_inputs(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(
            nearest_pseudo_input(&[0.0, 0.0], &m, NearestMode::Data).unwrap(),
            0
        );
    }

    #[test]
    fn isometric_encoder_agrees_with_data_mode() {
        let mut rng = Rng::new(4);
        let u: Vec<Vec<f64>> = (0..7)
            .map(|_| (0..3).map(|_| rng.standard_normal()).collect())
            .collect();
        let mut m = model_with_pseudo_inputs(u);
        // Coordinate permutation (x0, x1, x2) ↦ (x2, x0, x1).
        let spec = MlpSpec::new(vec![3, 3], vec![Activation::Identity]).unwrap();
        let params = MlpParams {
            layers: vec![LayerParams {
                weight: Tensor::from_rows(&[
                    vec![0.0, 0.0, 1.0],
                    vec![1.0, 0.0, 0.0],
                    vec![0.0, 1.0, 0.0],
                ])
                .unwrap(),
                bias: vec![0.0; 3],
            }],
        };
        m.encoder = Mlp::new(spec, params).unwrap();
        for _ in 0..200 {
            let x: Vec<f64> = (0..3).map(|_| 2.0 * rng.standard_normal()).collect();
            assert_eq!(
                nearest_pseudo_input(&x, &m, NearestMode::Data).unwrap(),
                nearest_pseudo_input(&x, &m, NearestMode::Latent).unwrap()
            );
        }
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            k: 10,
            dim_z: 2,
            hidden: vec![16],
            batch_size: 16,
            epochs: 2,
            seed: 5,
            decoder_output: Activation::Identity,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let d = gmm_generate(3, 4, 50, 1).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..small_config()
        };
        let (m, log) = train(&d, &cfg).unwrap();
        assert_eq!(m, initial_model(&d, &cfg).unwrap());
        assert!(log.epochs.is_empty());
        assert_eq!(log.steps, 0);
    }

    #[test]
    fn training_is_deterministic() {
        let d = gmm_generate(3, 4, 60, 2).unwrap();
        let cfg = small_config();
        let (m1, l1) = train(&d, &cfg).unwrap();
        let (m2, l2) = train(&d, &cfg).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(l1.epochs, l2.epochs);
        assert_eq!(l1.step_totals, l2.step_totals);
    }

    #[test]
    fn steps_and_encoder_budget() {
        let d = gmm_generate(3, 4, 50, 3).unwrap();
        for (mode, per_step_extra) in [(NearestMode::Data, 0u64), (NearestMode::Latent, 10)] {
            let cfg = TrainConfig {
                nearest_mode: mode,
                ..small_config()
            };
            let (_, log) = train(&d, &cfg).unwrap();
            // 50 rows in batches of 16: 16, 16, 16, 2.
            assert_eq!(log.steps, 8);
            assert_eq!(log.epochs.len(), 2);
            assert_eq!(log.encoder_rows, 2 * 50 + log.steps * per_step_extra);
        }
    }

    #[test]
    fn epoch_order_covers_every_row_once() {
        let mut rng = Rng::new(8);
        for n in [1, 7, 100] {
            let mut p = rng.permutation(n);
            p.sort_unstable();
            assert_eq!(p, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn loss_decreases_on_gmm() {
        let d = gmm_generate(3, 4, 200, 4).unwrap();
        let cfg = TrainConfig {
            epochs: 30,
            ..small_config()
        };
        let (_, log) = train(&d, &cfg).unwrap();
        let first = log.epochs.first().unwrap().total;
        let last = log.epochs.last().unwrap().total;
        assert!(last < 0.5 * first, "{first} -> {last}");
    }

    #[test]
    fn invalid_configs_rejected() {
        let d = gmm_generate(2, 3, 20, 1).unwrap();
        for cfg in [
            TrainConfig {
                k: 0,
                ..small_config()
            },
            TrainConfig {
                batch_size: 0,
                ..small_config()
            },
            TrainConfig {
                adam: AdamConfig {
                    lr: 0.0,
                    ..AdamConfig::default()
                },
                ..small_config()
            },
            TrainConfig {
                k: 21,
                ..small_config()
            },
        ] {
            assert!(train(&d, &cfg).is_err());
        }
    }
}
