//! Cubic B-spline baseline: clamped uniform knots, penalized least squares.

use nalgebra::{DMatrix, DVector};

use crate::error::{QuirkError, Result};

pub const DEFAULT_DEGREE: usize = 3;

/// Value of basis function `i` of the given degree at `x` (Cox–de Boor).
///
/// Zero outside the knot span. The right end of the span belongs to the last
/// non-empty interval so clamped bases still sum to one there.
pub fn basis_eval(knots: &[f64], degree: usize, i: usize, x: f64) -> f64 {
    let m = knots.len();
    if i + degree + 1 >= m {
        return 0.0;
    }
    let (lo, hi) = (knots[0], knots[m - 1]);
    if !(x >= lo && x <= hi) {
        return 0.0;
    }
    cox_de_boor(knots, degree, i, x)
}

fn in_interval(knots: &[f64], j: usize, x: f64) -> bool {
    let (a, b) = (knots[j], knots[j + 1]);
    if a == b {
        return false;
    }
    let last = *knots.last().unwrap();
    // The last non-empty interval is closed on the right.
    x >= a && (x < b || (x == last && b == last))
}

fn cox_de_boor(knots: &[f64], degree: usize, i: usize, x: f64) -> f64 {
    if degree == 0 {
        return if in_interval(knots, i, x) { 1.0 } else { 0.0 };
    }
    let mut v = 0.0;
    let d1 = knots[i + degree] - knots[i];
    if d1 > 0.0 {
        v += (x - knots[i]) / d1 * cox_de_boor(knots, degree - 1, i, x);
    }
    let d2 = knots[i + degree + 1] - knots[i + 1];
    if d2 > 0.0 {
        v += (knots[i + degree + 1] - x) / d2 * cox_de_boor(knots, degree - 1, i + 1, x);
    }
    v
}

/// Clamped knot vector with uniform interior knots over `[lo, hi]`,
/// sized for `n_coeffs` basis functions.
pub fn clamped_uniform_knots(lo: f64, hi: f64, n_coeffs: usize, degree: usize) -> Result<Vec<f64>> {
    if n_coeffs < degree + 1 {
        return Err(QuirkError::invalid(format!(
            "need at least {} coefficients for degree {degree}, got {n_coeffs}",
            degree + 1
        )));
    }
    if !(lo < hi) {
        return Err(QuirkError::invalid(format!("knot range [{lo}, {hi}] is empty")));
    }
    let segments = n_coeffs - degree;
    let mut knots = vec![lo; degree];
    for s in 0..=segments {
        knots.push(lo + (hi - lo) * s as f64 / segments as f64);
    }
    *knots.last_mut().unwrap() = hi;
    knots.extend(std::iter::repeat(hi).take(degree));
    Ok(knots)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BSplineModel {
    pub degree: usize,
    pub knots: Vec<f64>,
    pub coeffs: Vec<f64>,
    /// Weight of the second-difference penalty the fit used.
    pub smoothness: f64,
}

impl BSplineModel {
    pub fn new(degree: usize, knots: Vec<f64>, coeffs: Vec<f64>, smoothness: f64) -> Result<Self> {
        if knots.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(QuirkError::invalid("knot vector must be non-decreasing"));
        }
        if knots.len() < degree + 2 || coeffs.len() != knots.len() - degree - 1 {
            return Err(QuirkError::Shape {
                what: "spline coefficients",
                expected: knots.len().saturating_sub(degree + 1),
                got: coeffs.len(),
            });
        }
        Ok(BSplineModel { degree, knots, coeffs, smoothness })
    }

    /// Parameter count: coefficients only; the knots are fixed.
    pub fn param_count(&self) -> usize {
        self.coeffs.len()
    }

    pub fn eval(&self, x: f64) -> f64 {
        let x = x.clamp(self.knots[0], *self.knots.last().unwrap());
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| c * basis_eval(&self.knots, self.degree, i, x))
            .sum()
    }

    /// Greville abscissae: the knot averages at which each coefficient acts.
    pub fn greville(&self) -> Vec<f64> {
        greville(&self.knots, self.degree, self.coeffs.len())
    }
}

fn greville(knots: &[f64], degree: usize, n: usize) -> Vec<f64> {
    if degree == 0 {
        return (0..n).map(|i| (knots[i] + knots[i + 1]) / 2.0).collect();
    }
    (0..n)
        .map(|i| knots[i + 1..=i + degree].iter().sum::<f64>() / degree as f64)
        .collect()
}

/// Second-difference operator on the coefficients, taken with respect to the
/// Greville abscissae and scaled by the mean abscissa spacing. On uniform
/// spacing a row is exactly `c[i-1] - 2c[i] + c[i+1]`; its null space is the
/// coefficient sequences that represent straight lines.
fn penalty_matrix(knots: &[f64], degree: usize, n: usize) -> DMatrix<f64> {
    let rows = n.saturating_sub(2);
    let mut d = DMatrix::zeros(rows, n);
    if rows == 0 {
        return d;
    }
    let g = greville(knots, degree, n);
    let h = (g[n - 1] - g[0]) / (n - 1) as f64;
    for r in 0..rows {
        let (a, b) = (g[r + 1] - g[r], g[r + 2] - g[r + 1]);
        d[(r, r)] = h / a;
        d[(r, r + 1)] = -h / a - h / b;
        d[(r, r + 2)] = h / b;
    }
    d
}

/// Fits a cubic spline with `n_coeffs` coefficients on clamped uniform knots
/// spanning the sample range, minimizing
/// `mean((y - ŷ)²) + smoothness · |D c|²`.
pub fn fit(xs: &[f64], ys: &[f64], n_coeffs: usize, smoothness: f64) -> Result<BSplineModel> {
    fit_with_degree(xs, ys, n_coeffs, smoothness, DEFAULT_DEGREE)
}

pub fn fit_with_degree(xs: &[f64], ys: &[f64], n_coeffs: usize, smoothness: f64, degree: usize) -> Result<BSplineModel> {
    if xs.len() != ys.len() {
        return Err(QuirkError::Shape {
            what: "spline targets",
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if !(smoothness >= 0.0 && smoothness.is_finite()) {
        return Err(QuirkError::invalid("smoothness must be a non-negative number"));
    }
    if xs.len() < n_coeffs {
        return Err(QuirkError::invalid(format!(
            "{} samples cannot determine {n_coeffs} coefficients",
            xs.len()
        )));
    }
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let knots = clamped_uniform_knots(lo, hi, n_coeffs, degree)?;
    fit_on_knots(xs, ys, knots, degree, smoothness)
}

/// Penalized least squares on a given knot vector.
pub fn fit_on_knots(xs: &[f64], ys: &[f64], knots: Vec<f64>, degree: usize, smoothness: f64) -> Result<BSplineModel> {
    let n = knots.len().checked_sub(degree + 1).filter(|&n| n > 0).ok_or_else(|| {
        QuirkError::invalid(format!("{} knots are too few for degree {degree}", knots.len()))
    })?;
    let inv_n = 1.0 / xs.len() as f64;
    let mut gram = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    let mut row = vec![0.0; n];
    for (&x, &y) in xs.iter().zip(ys) {
        for (i, r) in row.iter_mut().enumerate() {
            *r = basis_eval(&knots, degree, i, x);
        }
        for i in 0..n {
            if row[i] == 0.0 {
                continue;
            }
            rhs[i] += inv_n * row[i] * y;
            for j in 0..n {
                gram[(i, j)] += inv_n * row[i] * row[j];
            }
        }
    }
    if smoothness > 0.0 {
        let d = penalty_matrix(&knots, degree, n);
        gram += smoothness * d.transpose() * d;
    }
    let coeffs = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => {
            let ridge = 1e-10 * (gram.trace() / n as f64).max(1e-300);
            log::warn!("spline normal equations are singular; adding ridge {ridge:e}");
            let mut g = gram;
            for i in 0..n {
                g[(i, i)] += ridge;
            }
            g.cholesky()
                .ok_or_else(|| QuirkError::invalid("spline system is singular even after regularization"))?
                .solve(&rhs)
        }
    };
    BSplineModel::new(degree, knots, coeffs.iter().copied().collect(), smoothness)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    // Independent evaluation: de Boor's algorithm on the knot span.
    fn de_boor(knots: &[f64], degree: usize, coeffs: &[f64], x: f64) -> f64 {
        let mut k = degree;
        while k + 1 < knots.len() - degree - 1 && x >= knots[k + 1] {
            k += 1;
        }
        let mut d: Vec<f64> = (0..=degree).map(|j| coeffs[j + k - degree]).collect();
        for r in 1..=degree {
            for j in (r..=degree).rev() {
                let i = j + k - degree;
                let alpha = (x - knots[i]) / (knots[i + degree + 1 - r] - knots[i]);
                d[j] = (1.0 - alpha) * d[j - 1] + alpha * d[j];
            }
        }
        d[degree]
    }

    #[test]
    fn knot_layout() {
        let k = clamped_uniform_knots(0.0, 1.0, 7, 3).unwrap();
        assert_eq!(k, vec![0.0, 0.0, 0.0, 0.0, 0.25, 0.5, 0.75, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(k.len() - 3 - 1, 7);
        assert!(clamped_uniform_knots(0.0, 1.0, 3, 3).is_err());
    }

    #[test]
    fn degree_zero_is_an_indicator() {
        let k = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(basis_eval(&k, 0, 1, 1.5), 1.0);
        assert_eq!(basis_eval(&k, 0, 1, 0.5), 0.0);
        assert_eq!(basis_eval(&k, 0, 0, 0.0), 1.0);
        assert_eq!(basis_eval(&k, 0, 2, 3.0), 1.0);
        assert_eq!(basis_eval(&k, 0, 0, -0.1), 0.0);
    }

    #[test]
    fn matches_de_boor_at_midpoints() {
        let knots = clamped_uniform_knots(-2.0, 3.0, 9, 3).unwrap();
        let coeffs: Vec<f64> = (0..9).map(|i| ((i * 7) % 5) as f64 - 1.3).collect();
        let s = BSplineModel::new(3, knots.clone(), coeffs.clone(), 0.0).unwrap();
        for w in knots.windows(2).filter(|w| w[0] < w[1]) {
            let mid = (w[0] + w[1]) / 2.0;
            assert!((s.eval(mid) - de_boor(&knots, 3, &coeffs, mid)).abs() < 1e-12);
        }
        // One basis function alone equals de Boor with a unit coefficient.
        let mut unit = vec![0.0; 9];
        unit[4] = 1.0;
        let x = 0.7;
        assert!((basis_eval(&knots, 3, 4, x) - de_boor(&knots, 3, &unit, x)).abs() < 1e-14);
    }

    #[test]
    fn recovers_spline_generated_data() {
        let knots = clamped_uniform_knots(0.0, 10.0, 12, 3).unwrap();
        let truth: Vec<f64> = (0..12).map(|i| (i as f64 * 0.9).sin()).collect();
        let s = BSplineModel::new(3, knots.clone(), truth.clone(), 0.0).unwrap();
        let xs: Vec<f64> = (0..400).map(|i| 10.0 * i as f64 / 399.0).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| s.eval(x)).collect();
        let f = fit(&xs, &ys, 12, 0.0).unwrap();
        assert_eq!(f.knots, knots);
        for (a, b) in f.coeffs.iter().zip(&truth) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn heavy_penalty_gives_the_least_squares_line() {
        let xs: Vec<f64> = (0..200).map(|i| i as f64 / 199.0 * 4.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x.sin() * 3.0 + x).collect();
        let f = fit(&xs, &ys, 10, 1e9).unwrap();
        // Ordinary least-squares line as the oracle.
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let b = sxy / sxx;
        let a = my - b * mx;
        for &x in &[0.0, 0.3, 1.7, 2.9, 4.0] {
            assert!((f.eval(x) - (a + b * x)).abs() < 1e-4, "{x}: {} vs {}", f.eval(x), a + b * x);
        }
    }

    #[test]
    fn more_coefficients_never_hurt() {
        let xs: Vec<f64> = (0..600).map(|i| -6.0 + 12.0 * i as f64 / 599.0).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| (x.sin()).exp() * x.powi(3) / 300.0).collect();
        let err = |n| {
            let f = fit(&xs, &ys, n, 0.05).unwrap();
            let sq: f64 = xs.iter().zip(&ys).map(|(&x, y)| (f.eval(x) - y).powi(2)).sum();
            (sq / xs.len() as f64).sqrt()
        };
        let (e10, e22, e46) = (err(10), err(22), err(46));
        assert!(e46 <= e22 && e22 <= e10, "{e10} {e22} {e46}");
    }

    #[test]
    fn too_few_samples_or_coefficients() {
        assert!(fit(&[0.0, 1.0], &[0.0, 1.0], 4, 0.0).is_err());
        assert!(fit(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0], 2, 0.0).is_err());
        assert!(fit(&[0.0, 1.0], &[0.0], 4, 0.0).is_err());
    }

    #[test]
    fn singular_system_falls_back_to_ridge() {
        // All samples in one knot interval leave most bases unconstrained.
        let mut xs = vec![0.0, 10.0];
        let mut ys = vec![0.0, 1.0];
        for i in 0..30 {
            xs.push(0.1 + i as f64 * 1e-3);
            ys.push(0.5);
        }
        let f = fit(&xs, &ys, 12, 0.0).unwrap();
        assert!(f.coeffs.iter().all(|c| c.is_finite()));
    }

    proptest! {
        #[test]
        fn partition_of_unity(n in 4usize..30, x in 0.0f64..1.0, degree in 0usize..4) {
            let n = n.max(degree + 1);
            let k = clamped_uniform_knots(-1.5, 2.5, n, degree).unwrap();
            let x = -1.5 + 4.0 * x;
            let total: f64 = (0..n).map(|i| basis_eval(&k, degree, i, x)).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn bases_are_nonnegative(x in -1.0f64..2.0, i in 0usize..8) {
            let k = clamped_uniform_knots(0.0, 1.0, 8, 3).unwrap();
            prop_assert!(basis_eval(&k, 3, i, x) >= 0.0);
        }
    }
}
