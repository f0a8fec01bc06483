//! Exact optimal transport between uniform empirical measures of equal size.
//!
//! With uniform weights `1/n` on both sides the optimal coupling can be taken
//! to be a permutation, so every transport problem here is an assignment
//! problem solved exactly by the Hungarian method.

use crate::error::{Error, Result};
use crate::nncore::Tensor;

pub const MAX_ATOMS: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    atoms: Tensor,
}

impl EmpiricalDistribution {
    pub fn new(atoms: Tensor) -> Result<Self> {
        if atoms.shape().len() != 2 {
            return Err(Error::Dimension("atoms must be an n × d matrix".into()));
        }
        atoms.ensure_finite("atoms")?;
        Ok(Self { atoms })
    }

    pub fn atoms(&self) -> &Tensor {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.atoms.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// Row `i` is matched to column `permutation[i]`.
    pub permutation: Vec<usize>,
    /// `(1/n) Σ_i C[i, σ(i)]`.
    pub cost: f64,
}

/// Mean cost of a permutation, summed in row order.
pub fn permutation_cost(cost: &Tensor, perm: &[usize]) -> f64 {
    let n = perm.len();
    let sum: f64 = perm.iter().enumerate().map(|(i, &j)| cost.row(i)[j]).sum();
    sum / n as f64
}

/// Minimum-cost perfect matching on a square cost matrix.
pub fn min_cost_assignment(cost: &Tensor) -> Result<Assignment> {
    let shape = cost.shape();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(Error::Dimension(format!(
            "cost matrix must be square, got {shape:?}"
        )));
    }
    let n = shape[0];
    if n > MAX_ATOMS {
        return Err(Error::InvalidArgument(format!(
            "assignment size {n} exceeds the limit of {MAX_ATOMS}"
        )));
    }
    cost.ensure_finite("cost matrix")?;
    let permutation = hungarian(n, |i, j| cost.row(i)[j]);
    let c = permutation_cost(cost, &permutation);
    Ok(Assignment {
        permutation,
        cost: c,
    })
}

/// Shortest-augmenting-path Hungarian algorithm with row/column potentials,
/// O(n³). Returns the column assigned to each row.
fn hungarian(n: usize, c: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    // 1-based with a virtual column 0, as in the classic formulation.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut min_v = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = c(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < min_v[j] {
                    min_v[j] = cur;
                    way[j] = j0;
                }
                if min_v[j] < delta {
                    delta = min_v[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_v[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; n];
    for j in 1..=n {
        perm[row_of[j] - 1] = j - 1;
    }
    perm
}

/// Pairwise cost matrix `C[i][j] = cost(a_i, b_j)`.
pub fn cost_matrix(a: &Tensor, b: &Tensor, cost: impl Fn(&[f64], &[f64]) -> f64) -> Result<Tensor> {
    let data = a
        .iter_rows()
        .flat_map(|r| b.iter_rows().map(|s| cost(r, s)).collect::<Vec<_>>())
        .collect();
    Tensor::matrix(a.rows(), b.rows(), data)
}

/// `W_p(A, B) = (min_σ (1/n) Σ ‖a_i − b_σ(i)‖₂^p)^{1/p}` for `p ∈ {1, 2}`.
pub fn empirical_wasserstein(
    a: &EmpiricalDistribution,
    b: &EmpiricalDistribution,
    p: u32,
) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Size(format!(
            "empirical measures have {} and {} atoms",
            a.len(),
            b.len()
        )));
    }
    if a.dim() != b.dim() {
        return Err(Error::Dimension(format!(
            "atoms live in {} and {} dimensions",
            a.dim(),
            b.dim()
        )));
    }
    let c = match p {
        1 => cost_matrix(a.atoms(), b.atoms(), |x, y| euclidean_sq(x, y).sqrt())?,
        2 => cost_matrix(a.atoms(), b.atoms(), euclidean_sq)?,
        _ => {
            return Err(Error::InvalidArgument(format!("p must be 1 or 2, got {p}")));
        }
    };
    let cost = min_cost_assignment(&c)?.cost.max(0.0);
    Ok(if p == 1 { cost } else { cost.sqrt() })
}

fn euclidean_sq(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `Σ_i |x_i − y_i|^p`: the p-th power of the ℓ_p distance.
pub fn lp_cost(x: &[f64], y: &[f64], p: u32) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b).abs().powi(p as i32))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointTransportCheck {
    /// Optimal cost with the joint cost on concatenated `(x, z)` vectors.
    pub lhs: f64,
    /// Optimal cost with the data-space plus latent-space split cost.
    pub rhs: f64,
    pub gap: f64,
}

/// Compares transport between the encoding measure `{(x_i, E(x_i))}` and the
/// decoding measure `{(D(z_j), z_j)}` under two independently built cost
/// matrices: the joint ℓ_p^p cost on concatenated vectors, and the sum of the
/// data-space and latent-space ℓ_p^p costs.
pub fn verify_joint_transport<E, D>(
    x_atoms: &Tensor,
    z_atoms: &Tensor,
    encode: E,
    decode: D,
    p: u32,
) -> Result<JointTransportCheck>
where
    E: Fn(&Tensor) -> Result<Tensor>,
    D: Fn(&Tensor) -> Result<Tensor>,
{
    verify_joint_transport_perturbed(x_atoms, z_atoms, encode, decode, p, 0.0)
}

/// [`verify_joint_transport`] with `perturbation` added to every entry of
/// the joint cost matrix's first row. Used to check the failure path.
pub fn verify_joint_transport_perturbed<E, D>(
    x_atoms: &Tensor,
    z_atoms: &Tensor,
    encode: E,
    decode: D,
    p: u32,
    perturbation: f64,
) -> Result<JointTransportCheck>
where
    E: Fn(&Tensor) -> Result<Tensor>,
    D: Fn(&Tensor) -> Result<Tensor>,
{
    if x_atoms.rows() != z_atoms.rows() {
        return Err(Error::Dimension(format!(
            "{} data atoms but {} latent atoms",
            x_atoms.rows(),
            z_atoms.rows()
        )));
    }
    if p == 0 {
        return Err(Error::InvalidArgument("p must be positive".into()));
    }
    let zx = encode(x_atoms)?;
    let xz = decode(z_atoms)?;
    zx.ensure_cols(z_atoms.cols(), "encoder output")?;
    xz.ensure_cols(x_atoms.cols(), "decoder output")?;
    let n = x_atoms.rows();

    // Joint atoms e_i = (x_i, E(x_i)) and d_j = (D(z_j), z_j).
    let concat = |a: &Tensor, b: &Tensor| -> Result<Tensor> {
        let mut data = Vec::with_capacity(n * (a.cols() + b.cols()));
        for (r, s) in a.iter_rows().zip(b.iter_rows()) {
            data.extend_from_slice(r);
            data.extend_from_slice(s);
        }
        Tensor::matrix(n, a.cols() + b.cols(), data)
    };
    let e = concat(x_atoms, &zx)?;
    let d = concat(&xz, z_atoms)?;
    let mut joint = cost_matrix(&e, &d, |a, b| lp_cost(a, b, p))?;
    for v in joint.row_mut(0) {
        *v += perturbation;
    }

    let mut split = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            split.row_mut(i)[j] =
                lp_cost(x_atoms.row(i), xz.row(j), p) + lp_cost(zx.row(i), z_atoms.row(j), p);
        }
    }

    let lhs = min_cost_assignment(&joint)?.cost;
    let rhs = min_cost_assignment(&split)?.cost;
    Ok(JointTransportCheck {
        lhs,
        rhs,
        gap: (lhs - rhs).abs(),
    })
}
