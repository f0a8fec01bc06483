use std::path::{Path, PathBuf};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::{
    denoise_report, generation_quality, knn_accuracy, mean_local_structure, reconstruction_error,
    EvalReport,
};
use crate::model::SwaeModel;
use crate::nncore::{Activation, RandomStream, Rng, Tensor};
use crate::ot::verify_joint_transport_perturbed;
use crate::trainer::{train_with, TrainLog};

use super::checkpoint::{load_checkpoint, save_checkpoint};
use super::config::RunConfig;
use super::output::{
    append_csv, fmt_real, grid_columns, indexed_header, matrix_csv, pgm_grid, real_row,
    square_side, write_file,
};

pub const METRICS_HEADER: &str = "epoch,x_loss,recon_loss,z_loss,total";
pub const EVAL_HEADER: &str = "metric,value,n,seed,k_or_sigma";
pub const CHECKPOINT_NAME: &str = "model.ckpt";
pub const METRICS_NAME: &str = "metrics.csv";

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub log: TrainLog,
}

/// Trains from a config file and writes `model.ckpt` and `metrics.csv` into
/// the output directory (`output_override` wins over the config).
pub fn cmd_train(config_path: &Path, output_override: Option<&Path>) -> Result<TrainOutcome> {
    let config = RunConfig::load(config_path)?;
    let out_dir = output_override
        .map(Path::to_path_buf)
        .unwrap_or(config.output_dir.clone());
    let (train, _) = config.dataset.load()?;
    let model_config = config.train.model_config(train.dim());
    if model_config.latent_not_smaller() {
        eprintln!(
            "warning: dim_z = {} is not smaller than dim_x = {}",
            model_config.dim_z, model_config.dim_x
        );
    }
    let (model, log) = train_with(&train, &config.train, |e, l| {
        eprintln!("epoch {}: total {:.6}", e + 1, l.total);
    })?;
    let checkpoint = out_dir.join(CHECKPOINT_NAME);
    let metrics = out_dir.join(METRICS_NAME);
    write_file(&metrics, metrics_csv(&log).as_bytes())?;
    save_checkpoint(&model, &checkpoint)?;
    Ok(TrainOutcome {
        checkpoint,
        metrics,
        log,
    })
}

pub fn metrics_csv(log: &TrainLog) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for (e, l) in log.epochs.iter().enumerate() {
        out.push_str(&real_row(
            &[(e + 1).to_string()],
            &[l.x_loss, l.recon_loss, l.z_loss, l.total],
        ));
    }
    out
}

fn is_image_model(model: &SwaeModel) -> Option<usize> {
    if model.config.decoder_output == Activation::Sigmoid {
        square_side(model.dim_x())
    } else {
        None
    }
}

/// Samples as a PGM grid for square sigmoid-output models, CSV otherwise.
pub fn generate_bytes(model: &SwaeModel, n: usize, seed: u64) -> Result<Vec<u8>> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let samples = model.generate(n, &mut Rng::new(seed))?;
    samples.ensure_finite("generated samples")?;
    Ok(match is_image_model(model) {
        Some(side) => {
            let tiles: Vec<&[f64]> = samples.iter_rows().collect();
            pgm_grid(&tiles, side, grid_columns(n))
        }
        None => matrix_csv(&indexed_header(&[("x", model.dim_x())]), &samples).into_bytes(),
    })
}

pub fn cmd_generate(ckpt: &Path, n: usize, seed: u64, out: &Path) -> Result<()> {
    let model = load_checkpoint(ckpt)?;
    write_file(out, &generate_bytes(&model, n, seed)?)
}

/// Originals beside reconstructions: a grid two tiles wide with one row per
/// sample for image models, otherwise CSV with `x*` then `r*` columns.
pub fn reconstruct_bytes(model: &SwaeModel, d: &Dataset) -> Result<Vec<u8>> {
    let rec = model.decode(&model.encode(&d.features)?)?;
    rec.ensure_finite("reconstructions")?;
    Ok(match is_image_model(model) {
        Some(side) => {
            let tiles: Vec<&[f64]> = d
                .features
                .iter_rows()
                .zip(rec.iter_rows())
                .flat_map(|(a, b)| [a, b])
                .collect();
            pgm_grid(&tiles, side, 2)
        }
        None => {
            let joined = Tensor::matrix(
                d.len(),
                2 * d.dim(),
                d.features
                    .iter_rows()
                    .zip(rec.iter_rows())
                    .flat_map(|(a, b)| a.iter().chain(b).copied())
                    .collect(),
            )?;
            matrix_csv(&indexed_header(&[("x", d.dim()), ("r", d.dim())]), &joined).into_bytes()
        }
    })
}

/// Reconstructs the first `n` test samples of the config's dataset.
pub fn cmd_reconstruct(ckpt: &Path, config_path: &Path, n: usize, out: &Path) -> Result<()> {
    let model = load_checkpoint(ckpt)?;
    let (_, test) = RunConfig::load(config_path)?.dataset.load()?;
    let d = test.head(n.min(test.len()))?;
    write_file(out, &reconstruct_bytes(&model, &d)?)
}

/// Latent codes as CSV: `index,label,z0,...`; label is empty when absent.
pub fn latents_csv(model: &SwaeModel, d: &Dataset) -> Result<String> {
    let z = model.encode(&d.features)?;
    let mut out = indexed_header(&[("z", model.dim_z())]).replacen("index", "index,label", 1);
    out.push('\n');
    for (i, r) in z.iter_rows().enumerate() {
        let label = d
            .labels
            .as_ref()
            .map(|l| l[i].to_string())
            .unwrap_or_default();
        out.push_str(&real_row(&[i.to_string(), label], r));
    }
    Ok(out)
}

pub fn cmd_encode(ckpt: &Path, config_path: &Path, split: Split, out: &Path) -> Result<()> {
    let model = load_checkpoint(ckpt)?;
    let (train, test) = RunConfig::load(config_path)?.dataset.load()?;
    let d = match split {
        Split::Train => train,
        Split::Test => test,
    };
    write_file(out, latents_csv(&model, &d)?.as_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Metric {
    Knn,
    Local,
    Recon,
    Denoise,
    Genquality,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Knn => "knn",
            Metric::Local => "local",
            Metric::Recon => "recon",
            Metric::Denoise => "denoise",
            Metric::Genquality => "genquality",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalFlags {
    /// Neighbours for `knn`.
    pub k: usize,
    /// Noise level for `denoise`.
    pub sigma: f64,
    pub seed: u64,
    /// Target points for `local`.
    pub targets: usize,
    /// Test points `local` ranks distances over.
    pub points: usize,
    /// Sample count for `genquality`.
    pub n_gen: usize,
    pub p: u32,
}

impl Default for EvalFlags {
    fn default() -> Self {
        Self {
            k: 5,
            sigma: 0.3,
            seed: 0,
            targets: 20,
            points: 100,
            n_gen: 500,
            p: 2,
        }
    }
}

/// Runs one metric on the test split (`knn` also encodes the training split).
///
/// `denoise` reports the ratio of reconstruction-to-clean error over
/// noisy-to-clean error, so values below 1 mean the model removes noise.
pub fn evaluate(
    model: &SwaeModel,
    train: &Dataset,
    test: &Dataset,
    metric: Metric,
    f: &EvalFlags,
) -> Result<EvalReport> {
    let (value, n, param) = match metric {
        Metric::Knn => {
            let labels = |d: &Dataset| {
                d.labels
                    .clone()
                    .ok_or_else(|| Error::InvalidArgument("k-NN needs labelled data".into()))
            };
            let acc = knn_accuracy(
                &model.encode(&train.features)?,
                &labels(train)?,
                &model.encode(&test.features)?,
                &labels(test)?,
                f.k,
            )?;
            (acc, test.len(), f.k as f64)
        }
        Metric::Local => {
            let d = test.head(f.points.min(test.len()))?;
            let rho = mean_local_structure(
                &d.features,
                &model.encode(&d.features)?,
                f.targets.min(d.len()),
            )?;
            (rho, d.len(), f.targets as f64)
        }
        Metric::Recon => (reconstruction_error(model, test)?, test.len(), 0.0),
        Metric::Denoise => {
            let r = denoise_report(model, test, f.sigma, f.seed)?;
            (
                r.mse_recon_to_clean / r.mse_noisy_to_clean,
                test.len(),
                f.sigma,
            )
        }
        Metric::Genquality => {
            if test.len() < f.n_gen {
                return Err(Error::Size(format!(
                    "need {} held-out samples, test split has {}",
                    f.n_gen,
                    test.len()
                )));
            }
            let held_out = test.head(f.n_gen)?;
            (
                generation_quality(model, &held_out, f.n_gen, f.seed, f.p)?,
                f.n_gen,
                f.p as f64,
            )
        }
    };
    if !value.is_finite() {
        return Err(Error::NonFinite(format!(
            "{} evaluated to {value}",
            metric.name()
        )));
    }
    Ok(EvalReport {
        metric: metric.name().to_string(),
        value,
        n,
        seed: f.seed,
        param,
    })
}

pub fn eval_row(r: &EvalReport) -> String {
    format!(
        "{},{},{},{},{}\n",
        r.metric,
        fmt_real(r.value),
        r.n,
        r.seed,
        fmt_real(r.param)
    )
}

/// Evaluates and appends one row to the CSV at `out`.
pub fn cmd_eval(
    ckpt: &Path,
    config_path: &Path,
    metric: Metric,
    flags: &EvalFlags,
    out: &Path,
) -> Result<EvalReport> {
    let model = load_checkpoint(ckpt)?;
    let (train, test) = RunConfig::load(config_path)?.dataset.load()?;
    let report = evaluate(&model, &train, &test, metric, flags)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    append_csv(out, EVAL_HEADER, &eval_row(&report))?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    /// Each trial draws its atom count from `1..=n`.
    pub n: usize,
    pub dim_x: usize,
    pub dim_z: usize,
    pub trials: usize,
    pub seed: u64,
    pub p: u32,
    /// Added to the first row of the joint cost matrix; nonzero values
    /// exercise the failure path.
    pub perturb: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            n: 8,
            dim_x: 4,
            dim_z: 2,
            trials: 50,
            seed: 0,
            p: 2,
            perturb: 0.0,
        }
    }
}

pub const VERIFY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub gaps: Vec<f64>,
    pub max_gap: f64,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.max_gap < VERIFY_TOLERANCE
    }
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let mut data = vec![0.0; rows * cols];
    rng.fill_normal(&mut data);
    Tensor::matrix(rows, cols, data).expect("positive extents")
}

/// `x · Wᵀ` for `W` of shape `out × in`.
fn linear(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    x.ensure_cols(w.cols(), "linear map input")?;
    let data = x
        .iter_rows()
        .flat_map(|r| {
            w.iter_rows()
                .map(move |wr| wr.iter().zip(r).map(|(a, b)| a * b).sum::<f64>())
        })
        .collect();
    Tensor::matrix(x.rows(), w.rows(), data)
}

/// Compares joint and split transport costs on random instances with
/// Gaussian atoms and random linear encoder and decoder.
pub fn cmd_verify_ot(o: &VerifyOptions) -> Result<VerifyReport> {
    if o.n == 0 || o.dim_x == 0 || o.dim_z == 0 || o.trials == 0 {
        return Err(Error::InvalidArgument(
            "n, dims and trials must be positive".into(),
        ));
    }
    let mut rng = Rng::new(o.seed);
    let mut gaps = Vec::with_capacity(o.trials);
    for _ in 0..o.trials {
        let n = 1 + rng.index(o.n);
        let dx = 1 + rng.index(o.dim_x);
        let dz = 1 + rng.index(o.dim_z);
        let e = gaussian_matrix(dz, dx, &mut rng);
        let d = gaussian_matrix(dx, dz, &mut rng);
        let x = gaussian_matrix(n, dx, &mut rng);
        let z = gaussian_matrix(n, dz, &mut rng);
        let check = verify_joint_transport_perturbed(
            &x,
            &z,
            |t| linear(t, &e),
            |t| linear(t, &d),
            o.p,
            o.perturb,
        )?;
        gaps.push(check.gap);
    }
    let max_gap = gaps.iter().copied().fold(0.0, f64::max);
    Ok(VerifyReport { gaps, max_gap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn model(dim_x: usize, out: Activation) -> SwaeModel {
        let config = ModelConfig {
            dim_x,
            dim_z: 2,
            hidden: vec![3],
            k: 2,
            hidden_activation: Activation::Tanh,
            decoder_output: out,
        };
        let data =
            Tensor::matrix(2, dim_x, (0..2 * dim_x).map(|i| i as f64 / 10.0).collect()).unwrap();
        SwaeModel::init(config, &data, &mut Rng::new(1)).unwrap()
    }

    #[test]
    fn verify_passes_and_single_atom_has_zero_gap() {
        let r = cmd_verify_ot(&VerifyOptions::default()).unwrap();
        assert_eq!(r.gaps.len(), 50);
        assert!(r.passed(), "max gap {}", r.max_gap);
        let one = cmd_verify_ot(&VerifyOptions {
            n: 1,
            trials: 1,
            ..VerifyOptions::default()
        })
        .unwrap();
        // One atom leaves one coupling; only summation order can differ.
        assert!(one.max_gap < 1e-12, "gap {}", one.max_gap);
    }

    #[test]
    fn verify_perturbed_fails() {
        let r = cmd_verify_ot(&VerifyOptions {
            perturb: 1.0,
            ..VerifyOptions::default()
        })
        .unwrap();
        assert!(!r.passed());
    }

    #[test]
    fn generate_image_grid_header() {
        let bytes = generate_bytes(&model(16, Activation::Sigmoid), 10, 0).unwrap();
        let header = b"P5\n20 8\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(bytes.len(), header.len() + 20 * 8);
    }

    #[test]
    fn generate_csv_for_unbounded_models() {
        let text =
            String::from_utf8(generate_bytes(&model(3, Activation::Identity), 1, 0).unwrap())
                .unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], "index,x0,x1,x2");
        assert!(lines[1].starts_with("0,"));
    }

    #[test]
    fn reconstruct_grid_is_two_tiles_wide() {
        let m = model(4, Activation::Sigmoid);
        let d = Dataset::new(Tensor::matrix(3, 4, vec![0.5; 12]).unwrap(), None).unwrap();
        let bytes = reconstruct_bytes(&m, &d).unwrap();
        assert!(bytes.starts_with(b"P5\n4 6\n255\n"));
    }

    #[test]
    fn latent_csv_has_labels() {
        let m = model(3, Activation::Identity);
        let d = Dataset::new(
            Tensor::matrix(2, 3, vec![0.0; 6]).unwrap(),
            Some(vec![4, 1]),
        )
        .unwrap();
        let text = latents_csv(&m, &d).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "index,label,z0,z1");
        assert!(lines[1].starts_with("0,4,"));
        assert!(lines[2].starts_with("1,1,"));
    }

    #[test]
    fn metrics_csv_empty_body() {
        assert_eq!(
            metrics_csv(&TrainLog::default()),
            format!("{METRICS_HEADER}\n")
        );
    }
}
