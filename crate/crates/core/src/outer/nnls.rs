//! Lawson–Hanson active-set method for `min ‖Aλ − b‖` subject to `λ >= 0`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

fn solve_passive(a: &DMatrix<f64>, b: &DVector<f64>, passive: &[usize]) -> DVector<f64> {
    let sub = a.select_columns(passive);
    let scale = sub.nrows().max(sub.ncols()) as f64;
    if sub.nrows() >= sub.ncols() {
        let qr = sub.clone().qr();
        let r = qr.r();
        let rmax = r.diagonal().amax();
        if r.diagonal().iter().all(|d| d.abs() > f64::EPSILON * rmax * scale) {
            let qtb = qr.q().tr_mul(b);
            if let Some(z) = r.solve_upper_triangular(&qtb) {
                return z;
            }
        }
    }
    let svd = sub.svd(true, true);
    let tol = f64::EPSILON * svd.singular_values.max() * scale;
    svd.solve(b, tol).expect("svd was computed with u and v").column(0).into_owned()
}

/// Nonnegative least squares.
///
/// The outer loop is capped at `10 · columns` additions to the passive set.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() != b.len() {
        return Err(Error::Dimension {
            expected: a.nrows(),
            got: b.len(),
        });
    }
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    if n == 0 {
        return Ok(x);
    }
    let max_iter = 10 * n;
    let col_sum_max = (0..n)
        .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let tol = 10.0 * f64::EPSILON * col_sum_max * a.nrows().max(n) as f64;

    let mut passive = vec![false; n];
    // Columns that were just rejected because their unconstrained
    // coefficient came out nonpositive; cleared whenever x moves.
    let mut blocked = vec![false; n];
    let mut w = a.tr_mul(&(b - a * &x));
    let mut iter = 0;

    loop {
        let candidate = (0..n)
            .filter(|&j| !passive[j] && !blocked[j] && w[j] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(t) = candidate else {
            break;
        };
        iter += 1;
        if iter > max_iter {
            return Err(Error::NnlsIterations(max_iter));
        }
        passive[t] = true;

        let mut first = true;
        loop {
            let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
            let zp = solve_passive(a, b, &idx);
            let mut z = DVector::zeros(n);
            for (k, &j) in idx.iter().enumerate() {
                z[j] = zp[k];
            }
            if idx.iter().all(|&j| z[j] > 0.0) {
                x = z;
                blocked.iter_mut().for_each(|f| *f = false);
                break;
            }
            if first && z[t] <= 0.0 {
                passive[t] = false;
                blocked[t] = true;
                break;
            }
            first = false;
            let (jmin, step) = idx
                .iter()
                .filter(|&&j| z[j] <= 0.0)
                .map(|&j| (j, x[j] / (x[j] - z[j])))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("some passive coefficient is nonpositive");
            x += (&z - &x) * step;
            x[jmin] = 0.0;
            for &j in &idx {
                if x[j] <= tol {
                    x[j] = 0.0;
                    passive[j] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                x.fill(0.0);
                break;
            }
        }
        w = a.tr_mul(&(b - a * &x));
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn clamped_identity() {
        let x = nnls(&DMatrix::identity(2, 2), &DVector::from_vec(vec![1.0, -1.0])).unwrap();
        assert_eq!(x.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn zero_rhs() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(nnls(&a, &DVector::zeros(2)).unwrap(), DVector::zeros(2));
    }

    #[test]
    fn no_columns() {
        assert_eq!(nnls(&DMatrix::zeros(3, 0), &DVector::zeros(3)).unwrap().len(), 0);
    }

    #[test]
    fn zero_column_is_ignored() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 1.0]);
        let x = nnls(&a, &DVector::from_vec(vec![2.0, 2.0])).unwrap();
        assert_eq!(x[0], 0.0);
        assert!((x[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn random_instances_satisfy_kkt() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let a = DMatrix::from_fn(5, 3, |_, _| rng.random_range(-1.0..1.0));
            let b = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
            let x = nnls(&a, &b).unwrap();
            let grad = a.tr_mul(&(&a * &x - &b));
            assert!(x.iter().all(|&v| v >= 0.0));
            assert!(grad.iter().all(|&g| g >= -1e-10), "{grad}");
            assert!(x.dot(&grad).abs() <= 1e-10);
        }
    }
}
