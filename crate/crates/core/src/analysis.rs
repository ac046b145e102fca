//! Weight-matrix statistics that govern how noise accumulates.
//!
//! For each `W^n` (shape `N_{n-1} x N_n`): the mean `μ`, its square `μ²`,
//! the mean square `η = mean(W²)` and the amplification factor
//! `N_{n-1} · η`. Noise injected after the activation of layer `n` has its
//! variance scaled by the amplification of every later matrix.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathcore::Matrix;
use crate::network::DenseNetwork;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightStats {
    /// Layer `n` fed by this matrix.
    pub layer: usize,
    pub rows: usize,
    pub cols: usize,
    pub mean: f64,
    pub mean_squared: f64,
    pub mean_square: f64,
    pub amplification: f64,
}

pub fn matrix_stats(layer: usize, w: &Matrix) -> WeightStats {
    let n = w.len() as f64;
    let (sum, sum_sq) = w.as_slice().iter().fold((0.0, 0.0), |(s, q), &v| (s + v, q + v * v));
    let mean = sum / n;
    let mean_square = sum_sq / n;
    WeightStats {
        layer,
        rows: w.rows(),
        cols: w.cols(),
        mean,
        mean_squared: mean * mean,
        mean_square,
        amplification: w.rows() as f64 * mean_square,
    }
}

/// Statistics of `W^2 .. W^L`.
pub fn weight_stats(net: &DenseNetwork) -> Vec<WeightStats> {
    net.weights()
        .iter()
        .enumerate()
        .map(|(k, w)| matrix_stats(k + 2, w))
        .collect()
}

/// Product of the amplification factors of every matrix after the noisy
/// layer: `Π_{k = layer}^{L-1} N_k · η(W^{k+1})`.
///
/// A heuristic for after-activation noise only: a larger value predicts a
/// larger accuracy loss, with no calibrated numeric link.
pub fn variance_amplification_estimate(net: &DenseNetwork, injection_layer: usize) -> Result<f64> {
    let topo = net.topology();
    if !topo.is_hidden(injection_layer) {
        return Err(Error::Spec(format!(
            "layer {injection_layer} is not a hidden layer of {topo}"
        )));
    }
    Ok(((injection_layer + 1)..=topo.depth())
        .map(|n| matrix_stats(n, net.matrix(n)).amplification)
        .product())
}

/// Fixed-width table with rows μ, μ², η, N·η and one column per matrix.
pub fn format_stats_table(stats: &[WeightStats]) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<10}", "Matrix");
    for s in stats {
        let _ = write!(out, "{:>14}", format!("W^{}", s.layer));
    }
    out.push('\n');
    type Field = fn(&WeightStats) -> f64;
    let rows: [(&str, Field); 4] = [
        ("mu", |s| s.mean),
        ("mu^2", |s| s.mean_squared),
        ("eta", |s| s.mean_square),
        ("N*eta", |s| s.amplification),
    ];
    for (name, get) in rows {
        let _ = write!(out, "{name:<10}");
        for s in stats {
            let _ = write!(out, "{:>14.6}", get(s));
        }
        out.push('\n');
    }
    out
}

/// CSV with one row per matrix.
pub fn stats_csv(stats: &[WeightStats]) -> String {
    let mut out = String::from("matrix,rows,cols,mean,mean_squared,mean_square,amplification\n");
    for s in stats {
        let _ = writeln!(
            out,
            "W{},{},{},{},{},{},{}",
            s.layer, s.rows, s.cols, s.mean, s.mean_squared, s.mean_square, s.amplification
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mathcore::GaussianSource;
    use crate::network::NetworkTopology;
    use proptest::prelude::*;

    fn oracle(w: &Matrix) -> (f64, f64) {
        let mut s = 0.0;
        let mut q = 0.0;
        for r in 0..w.rows() {
            for c in 0..w.cols() {
                s += w.get(r, c);
                q += w.get(r, c) * w.get(r, c);
            }
        }
        let n = (w.rows() * w.cols()) as f64;
        (s / n, q / n)
    }

    fn random_matrix(g: &mut GaussianSource, rows: usize, cols: usize, shift: f64) -> Matrix {
        Matrix::new(rows, cols, g.draw(rows * cols).into_iter().map(|v| v + shift).collect()).unwrap()
    }

    #[test]
    fn symmetric_entries() {
        let w = Matrix::from_rows(&[vec![1.0, -1.0], vec![1.0, -1.0]]).unwrap();
        let s = matrix_stats(2, &w);
        assert_eq!(s.mean, 0.0);
        assert_eq!(s.mean_square, 1.0);
        assert_eq!(s.amplification, 2.0);
    }

    #[test]
    fn matches_double_loop_oracle() {
        let mut g = GaussianSource::new(20);
        for _ in 0..100 {
            let w = random_matrix(&mut g, 20, 10, 0.3);
            let s = matrix_stats(2, &w);
            let (m, e) = oracle(&w);
            assert!((s.mean - m).abs() <= 1e-12 * m.abs().max(1.0));
            assert!((s.mean_square - e).abs() <= 1e-12 * e.abs().max(1.0));
            assert!(s.mean_square >= s.mean_squared);
            assert_eq!(s.amplification, 20.0 * s.mean_square);
        }
    }

    #[test]
    fn estimate_is_product_of_suffix_factors() {
        let topo = NetworkTopology::new(vec![3, 4, 4, 4, 2]).unwrap();
        let mut g = GaussianSource::new(2);
        let w: Vec<Matrix> = topo
            .sizes()
            .windows(2)
            .map(|p| random_matrix(&mut g, p[0], p[1], 1.0))
            .collect();
        let net = DenseNetwork::new(topo, w).unwrap();
        let stats = weight_stats(&net);
        let last = variance_amplification_estimate(&net, 4).unwrap();
        assert_eq!(last, stats[3].amplification);
        assert!(stats.iter().all(|s| s.amplification > 1.0));
        let l3 = variance_amplification_estimate(&net, 3).unwrap();
        let l2 = variance_amplification_estimate(&net, 2).unwrap();
        assert!(l2 > l3 && l3 > last);
        assert!(variance_amplification_estimate(&net, 1).is_err());
        assert!(variance_amplification_estimate(&net, 5).is_err());
    }

    #[test]
    fn table_has_four_rows_and_a_column_per_matrix() {
        let net = DenseNetwork::zeros(NetworkTopology::new(vec![3, 2, 2]).unwrap());
        let table = format_stats_table(&weight_stats(&net));
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[0].contains("W^2") && lines[0].contains("W^3"));
        assert!(lines[4].starts_with("N*eta"));
        assert_eq!(stats_csv(&weight_stats(&net)).lines().count(), 3);
    }

    proptest! {
        #[test]
        fn eta_bounds_mu_squared_and_permutation_invariance(seed in any::<u64>(), shift in -2.0f64..2.0) {
            let mut g = GaussianSource::new(seed);
            let w = random_matrix(&mut g, 5, 4, shift);
            let s = matrix_stats(2, &w);
            prop_assert!(s.mean_square >= s.mean_squared);
            // Reverse rows and columns.
            let p = Matrix::from_fn(5, 4, |r, c| w.get(4 - r, 3 - c)).unwrap();
            let sp = matrix_stats(2, &p);
            prop_assert!((s.mean - sp.mean).abs() < 1e-12);
            prop_assert!((s.mean_square - sp.mean_square).abs() < 1e-12);
        }
    }
}
