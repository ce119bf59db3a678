use crate::error::{Error, Result};
use crate::io::Range;

use super::transport::transport_uniform;

/// Exact 1-Wasserstein distance between two empirical distributions with
/// uniform weights: the area between their CDFs.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("wasserstein_1d samples"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut x = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - x);
        x = next;
        while a.get(i) == Some(&next) {
            i += 1;
        }
        while b.get(j) == Some(&next) {
            j += 1;
        }
    }
    Ok(total)
}

/// Earth mover's distance with Euclidean ground cost between two equal-weight
/// 2-D point clouds. Each coordinate is first divided by the span of its
/// range (a zero span leaves the coordinate unscaled).
pub fn wasserstein_2d(a: &[[f64; 2]], b: &[[f64; 2]], ranges: [Range; 2]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("wasserstein_2d points"));
    }
    let scale = ranges.map(|r| if r.span() > 0.0 { 1.0 / r.span() } else { 1.0 });
    let cost: Vec<Vec<f64>> = a
        .iter()
        .map(|p| b.iter().map(|q| ((p[0] - q[0]) * scale[0]).hypot((p[1] - q[1]) * scale[1])).collect())
        .collect();
    Ok(transport_uniform(&cost))
}

#[cfg(test)]
mod tests {
    use super::*;

    const UNIT: Range = Range { min: 0.0, max: 1.0 };

    #[test]
    fn identical_is_zero() {
        assert_eq!(wasserstein_1d(&[1.0, 2.0, 5.0], &[5.0, 1.0, 2.0]).unwrap(), 0.0);
        let pts = [[0.1, 0.2], [0.5, 0.9]];
        assert!(wasserstein_2d(&pts, &pts, [UNIT, UNIT]).unwrap().abs() < 1e-15);
    }

    #[test]
    fn hand_computed_shift() {
        assert!((wasserstein_1d(&[0.0, 1.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        let a = [0.3, -2.0, 4.5, 1.25];
        let b: Vec<f64> = a.iter().map(|x| x + 0.75).collect();
        assert!((wasserstein_1d(&a, &b).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn unequal_sizes() {
        // {0} vs {0, 1}: half the mass moves distance 1.
        assert!((wasserstein_1d(&[0.0], &[0.0, 1.0]).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn single_pair_is_euclidean() {
        let d = wasserstein_2d(&[[0.0, 0.0]], &[[3.0, 4.0]], [UNIT, UNIT]).unwrap();
        assert!((d - 5.0).abs() < 1e-12);
        let scaled =
            wasserstein_2d(&[[0.0, 0.0]], &[[3.0, 4.0]], [Range { min: 0.0, max: 3.0 }, Range { min: 0.0, max: 4.0 }])
                .unwrap();
        assert!((scaled - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn empty_is_error() {
        assert!(wasserstein_1d(&[], &[1.0]).is_err());
        assert!(wasserstein_2d(&[], &[[1.0, 1.0]], [UNIT, UNIT]).is_err());
    }
}
