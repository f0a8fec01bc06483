//! Evaluation protocols: latent k-NN classification, local-structure rank
//! correlation, reconstruction error, denoising and generation quality.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::data::{add_noise, Dataset};
use crate::error::{Error, Result};
use crate::model::SwaeModel;
use crate::nncore::tensor::sq_dist;
use crate::nncore::{Rng, Tensor};
use crate::objective::mean_sq_distance;
use crate::ot::{empirical_wasserstein, EmpiricalDistribution, MAX_ATOMS};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub metric: String,
    pub value: f64,
    pub n: usize,
    pub seed: u64,
    /// `k` for k-NN, `sigma` for denoising, otherwise whatever knob applies.
    pub param: f64,
}

/// Fraction of test points whose k nearest training latents vote for the
/// right label. Distance ties go to the lower training index, vote ties to
/// the smaller label.
pub fn knn_accuracy(
    train_z: &Tensor,
    train_y: &[u32],
    test_z: &Tensor,
    test_y: &[u32],
    k: usize,
) -> Result<f64> {
    let n_train = train_y.len();
    if n_train == 0 || train_z.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if train_z.rows() != n_train || test_z.rows() != test_y.len() {
        return Err(Error::Dimension(
            "latents and labels disagree in count".into(),
        ));
    }
    if train_z.cols() != test_z.cols() {
        return Err(Error::Dimension(
            "train and test latents differ in width".into(),
        ));
    }
    if k == 0 || k > n_train {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must lie in 1..={n_train}"
        )));
    }
    if test_y.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    train_z.ensure_finite("training latents")?;
    test_z.ensure_finite("test latents")?;

    let mut correct = 0usize;
    let mut dists: Vec<(f64, usize)> = Vec::with_capacity(n_train);
    for (q, &truth) in test_z.iter_rows().zip(test_y) {
        dists.clear();
        dists.extend(
            train_z
                .iter_rows()
                .enumerate()
                .map(|(i, r)| (sq_dist(q, r), i)),
        );
        let cmp = |a: &(f64, usize), b: &(f64, usize)| {
            a.0.partial_cmp(&b.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
        };
        if k < n_train {
            dists.select_nth_unstable_by(k - 1, cmp);
        }
        let mut votes: BTreeMap<u32, usize> = BTreeMap::new();
        for &(_, i) in &dists[..k] {
            *votes.entry(train_y[i]).or_default() += 1;
        }
        // Labels come out ascending and only a strictly larger count takes
        // the lead, so vote ties go to the smallest label.
        let mut best = (0u32, 0usize);
        for (&label, &count) in &votes {
            if count > best.1 {
                best = (label, count);
            }
        }
        if best.0 == truth {
            correct += 1;
        }
    }
    Ok(correct as f64 / test_y.len() as f64)
}

/// Average ranks (1-based) with ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = r;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankCorrelation {
    pub rho: f64,
    /// Set when one side has no spread (all distances equal); `rho` is 0.
    pub degenerate: bool,
}

/// Spearman correlation of two samples, computed as the Pearson correlation
/// of their average ranks. Without ties this is `1 − 6Σd²/(m(m²−1))`.
pub fn spearman(a: &[f64], b: &[f64]) -> RankCorrelation {
    assert_eq!(a.len(), b.len());
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let m = ra.len() as f64;
    let mean = (m + 1.0) / 2.0;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        let (dx, dy) = (x - mean, y - mean);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return RankCorrelation {
            rho: 0.0,
            degenerate: true,
        };
    }
    RankCorrelation {
        rho: (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0),
        degenerate: false,
    }
}

/// Rank agreement between data-space and latent-space distances from one
/// target point to every other point.
pub fn local_structure_spearman(
    data: &Tensor,
    latents: &Tensor,
    target: usize,
) -> Result<RankCorrelation> {
    let n = data.rows();
    if latents.rows() != n {
        return Err(Error::Dimension(format!(
            "{n} data points but {} latents",
            latents.rows()
        )));
    }
    if n < 3 {
        return Err(Error::InvalidArgument("need at least 3 points".into()));
    }
    if target >= n {
        return Err(Error::InvalidArgument(format!(
            "target {target} out of range for {n} points"
        )));
    }
    let others = (0..n).filter(|&i| i != target);
    let dx: Vec<f64> = others
        .clone()
        .map(|i| sq_dist(data.row(target), data.row(i)))
        .collect();
    let dz: Vec<f64> = others
        .map(|i| sq_dist(latents.row(target), latents.row(i)))
        .collect();
    Ok(spearman(&dx, &dz))
}

/// Mean of `local_structure_spearman` over targets `0..targets`.
pub fn mean_local_structure(data: &Tensor, latents: &Tensor, targets: usize) -> Result<f64> {
    if targets == 0 {
        return Err(Error::InvalidArgument("need at least one target".into()));
    }
    let mut sum = 0.0;
    for t in 0..targets {
        sum += local_structure_spearman(data, latents, t)?.rho;
    }
    Ok(sum / targets as f64)
}

/// Mean over samples of `‖x − D(E(x))‖²`.
pub fn reconstruction_error(model: &SwaeModel, d: &Dataset) -> Result<f64> {
    d.features.ensure_cols(model.dim_x(), "dataset")?;
    let rec = model.decode(&model.encode(&d.features)?)?;
    mean_sq_distance(&d.features, &rec)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenoiseReport {
    pub mse_noisy_to_clean: f64,
    pub mse_recon_to_clean: f64,
}

pub fn denoise_report(
    model: &SwaeModel,
    clean: &Dataset,
    sigma: f64,
    seed: u64,
) -> Result<DenoiseReport> {
    clean.features.ensure_cols(model.dim_x(), "dataset")?;
    let noisy = add_noise(clean, sigma, seed)?;
    let rec = model.decode(&model.encode(&noisy.features)?)?;
    Ok(DenoiseReport {
        mse_noisy_to_clean: mean_sq_distance(&noisy.features, &clean.features)?,
        mse_recon_to_clean: mean_sq_distance(&rec, &clean.features)?,
    })
}

/// Empirical `W_p` between `n_gen` generated samples and `held_out`, which
/// must hold exactly `n_gen` samples.
pub fn generation_quality(
    model: &SwaeModel,
    held_out: &Dataset,
    n_gen: usize,
    seed: u64,
    p: u32,
) -> Result<f64> {
    if n_gen == 0 || n_gen > MAX_ATOMS {
        return Err(Error::InvalidArgument(format!(
            "generated sample count must lie in 1..={MAX_ATOMS}, got {n_gen}"
        )));
    }
    if held_out.len() != n_gen {
        return Err(Error::Size(format!(
            "{n_gen} generated samples against {} held-out samples",
            held_out.len()
        )));
    }
    let generated = model.generate(n_gen, &mut Rng::new(seed))?;
    empirical_wasserstein(
        &EmpiricalDistribution::new(generated)?,
        &EmpiricalDistribution::new(held_out.features.clone())?,
        p,
    )
}
