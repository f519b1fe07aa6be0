//! Two-component PCA by power iteration with deflation.

use crate::error::{Error, Result};

pub const PCA_TOLERANCE: f64 = 1e-10;
pub const PCA_MAX_ITERATIONS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    pub components: [Vec<f64>; 2],
    /// Variance along each component (eigenvalues of the covariance).
    pub variances: [f64; 2],
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn mat_vec(c: &[f64], v: &[f64]) -> Vec<f64> {
    let d = v.len();
    (0..d).map(|i| dot(&c[i * d..(i + 1) * d], v)).collect()
}

/// Dominant unit eigenvector of the symmetric PSD matrix `c` (`d × d`), or `None` if `c` is zero.
fn power_iteration(c: &[f64], d: usize, avoid: Option<&[f64]>) -> Option<Vec<f64>> {
    // deterministic start that is not orthogonal to any axis
    let mut v: Vec<f64> = (0..d).map(|i| 1.0 + i as f64 / d as f64).collect();
    if let Some(u) = avoid {
        let p = dot(&v, u);
        v.iter_mut().zip(u).for_each(|(x, y)| *x -= p * y);
    }
    normalize(&mut v);
    for _ in 0..PCA_MAX_ITERATIONS {
        let mut w = mat_vec(c, &v);
        if let Some(u) = avoid {
            let p = dot(&w, u);
            w.iter_mut().zip(u).for_each(|(x, y)| *x -= p * y);
        }
        if normalize(&mut w) < 1e-300 {
            return None;
        }
        if dot(&w, &v) < 0.0 {
            w.iter_mut().for_each(|x| *x = -*x);
        }
        let change = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = w;
        if change < PCA_TOLERANCE {
            break;
        }
    }
    Some(v)
}

/// Any unit vector orthogonal to `u`.
fn orthogonal_to(u: &[f64]) -> Vec<f64> {
    let k = (0..u.len()).min_by(|&a, &b| u[a].abs().total_cmp(&u[b].abs())).unwrap_or(0);
    let mut e = vec![0.0; u.len()];
    e[k] = 1.0;
    let p = dot(&e, u);
    e.iter_mut().zip(u).for_each(|(x, y)| *x -= p * y);
    normalize(&mut e);
    e
}

pub fn pca_2d(points: &[Vec<f64>]) -> Result<Pca> {
    if points.len() < 2 {
        return Err(Error::usage("PCA needs at least two points"));
    }
    let d = points[0].len();
    if d == 0 || points.iter().any(|p| p.len() != d) {
        return Err(Error::usage("PCA points must share a positive dimension"));
    }
    let n = points.len() as f64;
    let mut mean = vec![0.0; d];
    for p in points {
        mean.iter_mut().zip(p).for_each(|(m, x)| *m += x / n);
    }
    let mut c = vec![0.0; d * d];
    for p in points {
        let x: Vec<f64> = p.iter().zip(&mean).map(|(a, m)| a - m).collect();
        for i in 0..d {
            for j in 0..d {
                c[i * d + j] += x[i] * x[j] / n;
            }
        }
    }
    let first = power_iteration(&c, d, None).unwrap_or_else(|| {
        let mut e = vec![0.0; d];
        e[0] = 1.0;
        e
    });
    let l1 = dot(&first, &mat_vec(&c, &first));
    let mut deflated = c.clone();
    for i in 0..d {
        for j in 0..d {
            deflated[i * d + j] -= l1 * first[i] * first[j];
        }
    }
    let second = if d == 1 {
        vec![0.0]
    } else {
        power_iteration(&deflated, d, Some(&first)).unwrap_or_else(|| orthogonal_to(&first))
    };
    let l2 = if d == 1 { 0.0 } else { dot(&second, &mat_vec(&c, &second)).max(0.0) };
    Ok(Pca { mean, components: [first, second], variances: [l1, l2] })
}

impl Pca {
    pub fn project(&self, p: &[f64]) -> [f64; 2] {
        let x: Vec<f64> = p.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        [dot(&x, &self.components[0]), dot(&x, &self.components[1])]
    }
}
