//! Slow reference implementations for cross-checking `keyface`.
//!
//! Nothing here shares code with the library under test. Every routine works
//! on plain arrays and favours the most literal formulation available:
//! exhaustive enumeration, scalar loops, cyclic Jacobi rotations.

#![allow(clippy::needless_range_loop)]

pub mod keystroke {
    /// Scalar recomputation of durations, latencies and normalized features
    /// from `(press, release)` pairs.
    #[derive(Debug, Clone, PartialEq)]
    pub struct Recomputed {
        pub durations: Vec<i128>,
        pub latencies: Vec<i128>,
        pub total: i128,
        pub norm_durations: Vec<f64>,
        pub norm_latencies: Vec<f64>,
    }

    pub fn recompute(events: &[(u64, u64)]) -> Recomputed {
        let mut durations = Vec::new();
        let mut latencies = Vec::new();
        for i in 0..events.len() {
            durations.push(events[i].1 as i128 - events[i].0 as i128);
            if i + 1 < events.len() {
                latencies.push(events[i + 1].0 as i128 - events[i].1 as i128);
            }
        }
        let total = events[events.len() - 1].1 as i128 - events[0].0 as i128;
        let norm = |v: &i128| *v as f64 / total as f64;
        Recomputed {
            norm_durations: durations.iter().map(norm).collect(),
            norm_latencies: latencies.iter().map(norm).collect(),
            durations,
            latencies,
            total,
        }
    }
}

pub mod hmm {
    use std::f64::consts::PI;

    /// A two-state HMM with bivariate Gaussian emissions.
    #[derive(Debug, Clone, PartialEq)]
    pub struct Hmm2 {
        pub initial: [f64; 2],
        pub transition: [[f64; 2]; 2],
        pub means: [[f64; 2]; 2],
        pub covariances: [[[f64; 2]; 2]; 2],
    }

    /// Closed-form bivariate normal log-density.
    pub fn log_density(x: [f64; 2], mean: [f64; 2], cov: [[f64; 2]; 2]) -> f64 {
        let (a, b, c) = (cov[0][0], cov[0][1], cov[1][1]);
        let det = a * c - b * b;
        let dx = x[0] - mean[0];
        let dy = x[1] - mean[1];
        let q = (c * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det;
        -(2.0 * PI).ln() - 0.5 * det.ln() - 0.5 * q
    }

    /// All `2^T` state paths in lexicographic order.
    pub fn all_paths(t: usize) -> impl Iterator<Item = Vec<usize>> {
        (0..1usize << t).map(move |mask| (0..t).map(|i| (mask >> (t - 1 - i)) & 1).collect())
    }

    pub fn path_log_joint(model: &Hmm2, obs: &[[f64; 2]], path: &[usize]) -> f64 {
        let mut lp = model.initial[path[0]].ln();
        for t in 0..obs.len() {
            if t > 0 {
                lp += model.transition[path[t - 1]][path[t]].ln();
            }
            let s = path[t];
            lp += log_density(obs[t], model.means[s], model.covariances[s]);
        }
        lp
    }

    /// `log P(obs)` by summing over every path.
    pub fn brute_force_log_likelihood(model: &Hmm2, obs: &[[f64; 2]]) -> f64 {
        let terms: Vec<f64> = all_paths(obs.len())
            .map(|p| path_log_joint(model, obs, &p))
            .collect();
        let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return max;
        }
        max + terms.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
    }

    /// The best path (first in lexicographic order among exact ties) and its log-joint.
    pub fn brute_force_viterbi(model: &Hmm2, obs: &[[f64; 2]]) -> (Vec<usize>, f64) {
        let mut best = (Vec::new(), f64::NEG_INFINITY);
        for p in all_paths(obs.len()) {
            let lp = path_log_joint(model, obs, &p);
            if lp > best.1 || best.0.is_empty() {
                best = (p, lp);
            }
        }
        best
    }
}

pub mod linalg {
    pub type Matrix = Vec<Vec<f64>>;

    pub fn transpose(a: &Matrix) -> Matrix {
        if a.is_empty() {
            return Vec::new();
        }
        (0..a[0].len()).map(|j| a.iter().map(|row| row[j]).collect()).collect()
    }

    pub fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
        let inner = b.len();
        let cols = if inner == 0 { 0 } else { b[0].len() };
        a.iter()
            .map(|row| {
                (0..cols)
                    .map(|j| (0..inner).map(|k| row[k] * b[k][j]).sum())
                    .collect()
            })
            .collect()
    }

    pub fn matvec(a: &Matrix, x: &[f64]) -> Vec<f64> {
        a.iter()
            .map(|row| row.iter().zip(x).map(|(r, v)| r * v).sum())
            .collect()
    }

    pub fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    pub fn norm(a: &[f64]) -> f64 {
        dot(a, a).sqrt()
    }

    /// Cyclic Jacobi eigen-decomposition of a symmetric matrix.
    ///
    /// Returns eigenvalues in descending order and the matching unit
    /// eigenvectors, one per entry.
    pub fn jacobi_eigen(sym: &Matrix) -> (Vec<f64>, Vec<Vec<f64>>) {
        let n = sym.len();
        let mut a = sym.clone();
        let mut v: Matrix = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let scale: f64 = a.iter().flatten().map(|x| x * x).sum::<f64>().max(f64::MIN_POSITIVE);
        for _sweep in 0..100 {
            let mut off = 0.0;
            for p in 0..n {
                for q in p + 1..n {
                    off += a[p][q] * a[p][q];
                }
            }
            if off <= 1e-32 * scale {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[p][q] == 0.0 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                    let t = sign / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for row in a.iter_mut() {
                        let (kp, kq) = (row[p], row[q]);
                        row[p] = c * kp - s * kq;
                        row[q] = s * kp + c * kq;
                    }
                    for k in 0..n {
                        let (pk, qk) = (a[p][k], a[q][k]);
                        a[p][k] = c * pk - s * qk;
                        a[q][k] = s * pk + c * qk;
                    }
                    for row in v.iter_mut() {
                        let (kp, kq) = (row[p], row[q]);
                        row[p] = c * kp - s * kq;
                        row[q] = s * kp + c * kq;
                    }
                }
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
        let values = order.iter().map(|&i| a[i][i]).collect();
        let vectors = order.iter().map(|&i| v.iter().map(|row| row[i]).collect()).collect();
        (values, vectors)
    }

    /// Modified Gram-Schmidt, applied twice.
    pub fn orthonormalize(vectors: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = Vec::new();
        for v in vectors {
            let mut w = v.clone();
            for _ in 0..2 {
                for q in &out {
                    let d = dot(&w, q);
                    for (wi, qi) in w.iter_mut().zip(q) {
                        *wi -= d * qi;
                    }
                }
            }
            let n = norm(&w);
            if n > 1e-12 * norm(v).max(f64::MIN_POSITIVE) {
                out.push(w.iter().map(|x| x / n).collect());
            }
        }
        out
    }

    /// Largest principal angle between the spans of `a` and `b`, in radians.
    ///
    /// Computed from the sine side (the residual of `b` after projecting onto
    /// `a`), which stays accurate for tiny angles. Spans of different
    /// dimension give `pi / 2`.
    pub fn max_principal_angle(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        let qa = orthonormalize(a);
        let qb = orthonormalize(b);
        if qa.len() != qb.len() {
            return std::f64::consts::FRAC_PI_2;
        }
        if qb.is_empty() {
            return 0.0;
        }
        let residuals: Matrix = qb
            .iter()
            .map(|v| {
                let mut r = v.clone();
                for q in &qa {
                    let d = dot(v, q);
                    for (ri, qi) in r.iter_mut().zip(q) {
                        *ri -= d * qi;
                    }
                }
                r
            })
            .collect();
        let gram: Matrix = residuals
            .iter()
            .map(|x| residuals.iter().map(|y| dot(x, y)).collect())
            .collect();
        let (values, _) = jacobi_eigen(&gram);
        values[0].max(0.0).sqrt().min(1.0).asin()
    }
}

pub mod nearest {
    /// Index of the nearest mean by squared Euclidean distance; among exact
    /// ties the lexicographically smallest label wins.
    pub fn nearest_mean(probe: &[f64], labels: &[String], means: &[Vec<f64>]) -> (usize, f64) {
        let mut best: Option<(usize, f64)> = None;
        for (i, m) in means.iter().enumerate() {
            let d2: f64 = probe.iter().zip(m).map(|(p, q)| (p - q) * (p - q)).sum();
            best = match best {
                None => Some((i, d2)),
                Some((j, e)) if d2 < e || (d2 == e && labels[i] < labels[j]) => Some((i, d2)),
                keep => keep,
            };
        }
        let (i, d2) = best.expect("at least one mean");
        (i, d2.sqrt())
    }
}

pub mod fusion {
    /// The product rule decided in the log domain.
    ///
    /// Zero probabilities are compared directly since their logarithms are
    /// not finite.
    pub fn product_accepts(key: (f64, f64), face: (f64, f64)) -> bool {
        let true_zero = key.0 == 0.0 || face.0 == 0.0;
        let false_zero = key.1 == 0.0 || face.1 == 0.0;
        match (true_zero, false_zero) {
            (true, _) => false,
            (false, true) => true,
            (false, false) => key.0.ln() + face.0.ln() > key.1.ln() + face.1.ln(),
        }
    }
}

pub mod rates {
    /// `(false accepts, imposters, false rejects, genuines)` by direct counting.
    pub fn recount(attempts: &[(bool, bool)]) -> (usize, usize, usize, usize) {
        let imposters = attempts.iter().filter(|a| !a.0).count();
        let genuines = attempts.len() - imposters;
        let false_accepts = attempts.iter().filter(|a| !a.0 && a.1).count();
        let false_rejects = attempts.iter().filter(|a| a.0 && !a.1).count();
        (false_accepts, imposters, false_rejects, genuines)
    }

    /// Smallest `max(FAR, FRR)` over every cut point, with `score >= t` accepted.
    pub fn min_max_error(genuine: &[f64], imposter: &[f64]) -> f64 {
        let mut cuts: Vec<f64> = genuine.iter().chain(imposter).copied().collect();
        cuts.push(f64::INFINITY);
        cuts.iter()
            .map(|&t| {
                let frr = genuine.iter().filter(|&&s| s < t).count() as f64 / genuine.len() as f64;
                let far = imposter.iter().filter(|&&s| s >= t).count() as f64 / imposter.len() as f64;
                far.max(frr)
            })
            .fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::linalg::*;

    #[test]
    fn jacobi_diagonalizes() {
        let a = vec![
            vec![4.0, 1.0, 0.5],
            vec![1.0, 3.0, 0.2],
            vec![0.5, 0.2, 1.0],
        ];
        let (values, vectors) = jacobi_eigen(&a);
        assert!(values.windows(2).all(|w| w[0] >= w[1]));
        for (lambda, v) in values.iter().zip(&vectors) {
            let av = matvec(&a, v);
            for (x, y) in av.iter().zip(v) {
                assert!((x - lambda * y).abs() < 1e-12);
            }
            assert!((norm(v) - 1.0).abs() < 1e-12);
        }
        assert!((values.iter().sum::<f64>() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn principal_angle_of_rotated_plane() {
        let a = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        let theta: f64 = 1e-7;
        let b = vec![vec![1.0, 0.0, 0.0], vec![0.0, theta.cos(), theta.sin()]];
        assert!((max_principal_angle(&a, &b) - theta).abs() < 1e-12);
        assert!(max_principal_angle(&a, &a) < 1e-15);
    }

    #[test]
    fn path_enumeration_is_lexicographic() {
        let paths: Vec<Vec<usize>> = super::hmm::all_paths(2).collect();
        assert_eq!(paths, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
    }
}
