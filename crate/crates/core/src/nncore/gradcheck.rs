//! Central finite differences, used as the independent oracle for every
//! hand-written backward pass.

use crate::nncore::mlp::Parameters;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Entries whose magnitude falls below this are compared absolutely.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-4;

/// `(f(p + h·e_i) − f(p − h·e_i)) / 2h` for every coordinate `i`.
pub fn fd_gradient_flat<F>(mut loss: F, params: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut p = params.to_vec();
    let mut grad = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let up = loss(&p);
        p[i] = orig - h;
        let down = loss(&p);
        p[i] = orig;
        grad.push((up - down) / (2.0 * h));
    }
    grad
}

/// Finite-difference gradient shaped like `params`.
pub fn fd_gradient<P, F>(mut loss: F, params: &P, h: f64) -> P
where
    P: Parameters + Clone,
    F: FnMut(&P) -> f64,
{
    let mut scratch = params.clone();
    let flat = fd_gradient_flat(
        |x| {
            scratch.copy_from_flat(x).expect("length is preserved");
            loss(&scratch)
        },
        &params.to_flat(),
        h,
    );
    let mut out = params.clone();
    out.copy_from_flat(&flat).expect("length is preserved");
    out
}

/// `max_i |a_i − b_i| / max(|a_i|, |b_i|, RELATIVE_ERROR_FLOOR)`.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(RELATIVE_ERROR_FLOOR))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_loss_has_zero_gradient() {
        let g = fd_gradient_flat(|_| 3.5, &[1.0, -2.0, 0.0], DEFAULT_STEP);
        assert_eq!(g, vec![0.0; 3]);
    }

    #[test]
    fn square_at_three() {
        let g = fd_gradient_flat(|p| p[0] * p[0], &[3.0], 1e-5);
        assert!((g[0] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn quadratic_form_matches_analytic() {
        // L(p) = ½ pᵀ A p + cᵀ p with symmetric A  ⇒  ∇L = A p + c.
        let a = [[2.0, 0.5, -1.0], [0.5, 3.0, 0.25], [-1.0, 0.25, 1.5]];
        let c = [0.3, -0.7, 1.1];
        let p = [0.9, -1.3, 2.2];
        let loss = |x: &[f64]| {
            let mut s = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    s += 0.5 * x[i] * a[i][j] * x[j];
                }
                s += c[i] * x[i];
            }
            s
        };
        let g = fd_gradient_flat(loss, &p, DEFAULT_STEP);
        for i in 0..3 {
            let analytic: f64 = (0..3).map(|j| a[i][j] * p[j]).sum::<f64>() + c[i];
            assert!(
                (g[i] - analytic).abs() < 1e-8,
                "{i}: {} vs {analytic}",
                g[i]
            );
        }
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(max_relative_error(&[1.0], &[1.0]), 0.0);
        assert!((max_relative_error(&[2.0], &[1.0]) - 0.5).abs() < 1e-15);
        assert!((max_relative_error(&[0.0], &[1e-9]) - 1e-5).abs() < 1e-15);
    }
}
