//! Road graph construction and its spectral operators.
//!
//! Nodes are sensors; an edge exists where the Gaussian kernel of the
//! road-network distance clears a threshold. The forecaster consumes the
//! graph through the normalized Laplacian, its rescaled variant with
//! spectrum in [−1, 1], and the Chebyshev polynomial basis built on it.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-node metadata carried through from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeMeta {
    pub latitude: f64,
    pub longitude: f64,
    pub lane_count: u32,
}

/// Sensor network with pairwise road distances.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadGraph {
    pub node_ids: Vec<String>,
    /// N×N symmetric road distances in km; `INFINITY` marks "no route
    /// recorded", the diagonal is zero.
    pub distances: Tensor,
    /// N×N binary adjacency (diagonal zero).
    pub adjacency: Tensor,
    pub metadata: Vec<NodeMeta>,
}

impl RoadGraph {
    /// Builds the graph from distances, thresholding the Gaussian kernel
    /// at `r`. When `sigma` is `None` the standard deviation of all
    /// finite off-diagonal distances is used.
    pub fn new(
        node_ids: Vec<String>,
        distances: Tensor,
        metadata: Vec<NodeMeta>,
        sigma: Option<f64>,
        r: f64,
    ) -> Result<Self> {
        let n = node_ids.len();
        if distances.shape() != [n, n] {
            return Err(Error::shape_mismatch(format!(
                "distance matrix {:?} for {n} nodes",
                distances.shape()
            )));
        }
        if metadata.len() != n {
            return Err(Error::shape_mismatch(format!(
                "{} metadata rows for {n} nodes",
                metadata.len()
            )));
        }
        for i in 0..n {
            if distances.at2(i, i) != 0.0 {
                return Err(Error::Inconsistency(format!(
                    "distance diagonal must be zero (node {i})"
                )));
            }
            for j in 0..n {
                let d = distances.at2(i, j);
                if d < 0.0 {
                    return Err(Error::Inconsistency(format!(
                        "negative distance between {i} and {j}"
                    )));
                }
                if (d - distances.at2(j, i)).abs() > 1e-9 {
                    return Err(Error::Inconsistency(format!(
                        "distances not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        let sigma = match sigma {
            Some(s) => s,
            None => distance_std(&distances),
        };
        let adjacency = build_adjacency(&distances, sigma, r)?;
        Ok(RoadGraph {
            node_ids,
            distances,
            adjacency,
            metadata,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.node_ids.len()
    }
}

/// Standard deviation of the finite off-diagonal distances.
pub fn distance_std(distances: &Tensor) -> f64 {
    let n = distances.shape()[0];
    let mut vals = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let d = distances.at2(i, j);
            if i != j && d.is_finite() {
                vals.push(d);
            }
        }
    }
    if vals.is_empty() {
        return 1.0;
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
    var.sqrt().max(f64::MIN_POSITIVE)
}

/// A_{ij} = 1 iff exp(−l²_{ij}/σ²) ≥ r and i ≠ j.
///
/// The kernel rule alone would put ones on the diagonal (exp(0) = 1);
/// self-loops are dropped so the Laplacian below is the standard one.
pub fn build_adjacency(distances: &Tensor, sigma: f64, r: f64) -> Result<Tensor> {
    if !(sigma > 0.0) {
        return Err(Error::invalid_config("sigma must be positive"));
    }
    let n = distances.shape()[0];
    let mut adj = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let l = distances.at2(i, j);
            if !l.is_finite() {
                continue;
            }
            if (-l * l / (sigma * sigma)).exp() >= r {
                *adj.at2_mut(i, j) = 1.0;
            }
        }
    }
    Ok(adj)
}

/// Normalized Laplacian L = I − D^{−1/2} A D^{−1/2}. Isolated nodes get
/// an identity row so downstream rescaling stays well defined.
pub fn normalized_laplacian(adjacency: &Tensor) -> Result<Tensor> {
    let n = adjacency.shape()[0];
    if adjacency.shape() != [n, n] {
        return Err(Error::shape_mismatch("adjacency must be square"));
    }
    let mut inv_sqrt_deg = vec![0.0; n];
    for i in 0..n {
        let deg: f64 = (0..n).map(|j| adjacency.at2(i, j)).sum();
        inv_sqrt_deg[i] = if deg > 0.0 { 1.0 / deg.sqrt() } else { 0.0 };
    }
    let mut lap = Tensor::eye(n);
    for i in 0..n {
        for j in 0..n {
            let a = adjacency.at2(i, j);
            if a != 0.0 {
                *lap.at2_mut(i, j) -= inv_sqrt_deg[i] * a * inv_sqrt_deg[j];
            }
        }
    }
    Ok(lap)
}

const POWER_ITER_TOL: f64 = 1e-9;
const POWER_ITER_CAP: usize = 10_000;

/// Largest eigenvalue of a symmetric matrix by shifted power iteration.
pub fn max_eigenvalue(matrix: &Tensor) -> Result<f64> {
    let n = matrix.shape()[0];
    if matrix.shape() != [n, n] {
        return Err(Error::shape_mismatch("eigenvalue of non-square matrix"));
    }
    if n == 0 {
        return Err(Error::invalid_input("empty matrix"));
    }
    // Positive shift keeps the top eigenvalue dominant in magnitude for
    // any PSD input and breaks ±λ ties for general symmetric ones.
    let shift = 1.0;
    // Deterministic start with unequal components so it is unlikely to
    // be orthogonal to the dominant eigenspace.
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64 + 1.0).recip()).collect();
    normalize(&mut v);
    let mut estimate = 0.0;
    for _ in 0..POWER_ITER_CAP {
        let mut next = vec![0.0; n];
        for i in 0..n {
            let mut acc = shift * v[i];
            for j in 0..n {
                acc += matrix.at2(i, j) * v[j];
            }
            next[i] = acc;
        }
        let rayleigh: f64 = v.iter().zip(&next).map(|(a, b)| a * b).sum();
        estimate = rayleigh - shift;
        // Residual ‖(M+σI)v − ρv‖∞ with v normalized.
        let residual = v
            .iter()
            .zip(&next)
            .fold(0.0_f64, |m, (vi, ni)| m.max((ni - rayleigh * vi).abs()));
        if residual < POWER_ITER_TOL {
            return Ok(estimate);
        }
        normalize(&mut next);
        v = next;
    }
    Err(Error::NonConvergence {
        last_estimate: estimate,
    })
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}

/// Chebyshev polynomials of the rescaled Laplacian:
/// T_0 = I, T_1 = L̂, T_m = 2·L̂·T_{m−1} − T_{m−2}.
pub fn chebyshev_basis(scaled_laplacian: &Tensor, order: usize) -> Result<Vec<Tensor>> {
    if order < 1 {
        return Err(Error::invalid_config("chebyshev order must be at least 1"));
    }
    let n = scaled_laplacian.shape()[0];
    let mut basis = Vec::with_capacity(order);
    basis.push(Tensor::eye(n));
    if order >= 2 {
        basis.push(scaled_laplacian.clone());
    }
    for m in 2..order {
        let prod = scaled_laplacian.matmul(&basis[m - 1])?;
        let next = prod.scale(2.0).sub(&basis[m - 2])?;
        basis.push(next);
    }
    Ok(basis)
}

/// Spectral operators derived once per graph and shared read-only.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralOps {
    pub laplacian: Tensor,
    pub scaled_laplacian: Tensor,
    pub lambda_max: f64,
    pub cheb_basis: Vec<Tensor>,
}

impl SpectralOps {
    /// L̂ = 2L/λ_max − I with the Chebyshev basis up to `order` terms.
    pub fn build(adjacency: &Tensor, order: usize) -> Result<Self> {
        let laplacian = normalized_laplacian(adjacency)?;
        let lambda_max = max_eigenvalue(&laplacian)?;
        let n = laplacian.shape()[0];
        let mut scaled = laplacian.scale(2.0 / lambda_max);
        for i in 0..n {
            *scaled.at2_mut(i, i) -= 1.0;
        }
        let cheb_basis = chebyshev_basis(&scaled, order)?;
        Ok(SpectralOps {
            laplacian,
            scaled_laplacian: scaled,
            lambda_max,
            cheb_basis,
        })
    }

    pub fn order(&self) -> usize {
        self.cheb_basis.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.laplacian.shape()[0]
    }
}

/// Dense CSV export of a matrix with node-id headers, for inspection at
/// small N.
pub fn write_matrix_csv(matrix: &Tensor, node_ids: &[String], out: &mut impl Write) -> Result<()> {
    writeln!(out, "node_id,{}", node_ids.join(","))?;
    let n = matrix.shape()[0];
    for i in 0..n {
        let row: Vec<String> = (0..n).map(|j| matrix.at2(i, j).to_string()).collect();
        writeln!(out, "{},{}", node_ids[i], row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dist3() -> Tensor {
        // l₁₂=1, l₁₃=3, l₂₃=2 (1-indexed in the comment, 0-indexed here)
        Tensor::from_vec(&[3, 3], vec![0.0, 1.0, 3.0, 1.0, 0.0, 2.0, 3.0, 2.0, 0.0]).unwrap()
    }

    #[test]
    fn adjacency_threshold_vacuous_at_zero() {
        let adj = build_adjacency(&dist3(), 2.0, 0.0).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(adj.at2(i, j), if i == j { 0.0 } else { 1.0 });
            }
        }
    }

    #[test]
    fn adjacency_empty_above_one() {
        let adj = build_adjacency(&dist3(), 2.0, 1.0 + 1e-12).unwrap();
        assert!(adj.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adjacency_hand_example() {
        // σ=2, r=0.5: exp(−1/4)=0.779 ≥ 0.5 keeps 1–2 only.
        let adj = build_adjacency(&dist3(), 2.0, 0.5).unwrap();
        assert_eq!(adj.at2(0, 1), 1.0);
        assert_eq!(adj.at2(1, 0), 1.0);
        assert_eq!(adj.at2(0, 2), 0.0);
        assert_eq!(adj.at2(1, 2), 0.0);
        assert_eq!(adj.at2(2, 2), 0.0);
    }

    #[test]
    fn adjacency_rejects_bad_sigma() {
        assert!(build_adjacency(&dist3(), 0.0, 0.5).is_err());
        assert!(build_adjacency(&dist3(), -1.0, 0.5).is_err());
    }

    #[test]
    fn laplacian_two_connected_nodes() {
        let adj = Tensor::from_vec(&[2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let lap = normalized_laplacian(&adj).unwrap();
        assert_eq!(lap.data(), &[1.0, -1.0, -1.0, 1.0]);
        // Eigenvalues {0, 2}: trace 2, determinant 0.
        assert!((max_eigenvalue(&lap).unwrap() - 2.0).abs() < 1e-8);
    }

    #[test]
    fn laplacian_empty_graph_is_identity() {
        let adj = Tensor::zeros(&[4, 4]);
        let lap = normalized_laplacian(&adj).unwrap();
        assert_eq!(lap, Tensor::eye(4));
    }

    #[test]
    fn laplacian_complete_graph_spectrum() {
        // K₃ normalized Laplacian has eigenvalues {0, 1.5, 1.5}.
        let mut adj = Tensor::filled(&[3, 3], 1.0);
        for i in 0..3 {
            *adj.at2_mut(i, i) = 0.0;
        }
        let lap = normalized_laplacian(&adj).unwrap();
        assert!((max_eigenvalue(&lap).unwrap() - 1.5).abs() < 1e-8);
        let trace: f64 = (0..3).map(|i| lap.at2(i, i)).sum();
        assert!((trace - 3.0).abs() < 1e-12);
    }

    #[test]
    fn max_eigenvalue_identity() {
        assert!((max_eigenvalue(&Tensor::eye(5)).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn chebyshev_first_terms() {
        let l_hat = Tensor::from_vec(&[2, 2], vec![0.5, -0.5, -0.5, 0.5]).unwrap();
        let basis1 = chebyshev_basis(&l_hat, 1).unwrap();
        assert_eq!(basis1, vec![Tensor::eye(2)]);
        let basis2 = chebyshev_basis(&l_hat, 2).unwrap();
        assert_eq!(basis2[1], l_hat);
        assert!(chebyshev_basis(&l_hat, 0).is_err());
    }

    #[test]
    fn chebyshev_t2_hand_check() {
        // 3-node path graph.
        let adj =
            Tensor::from_vec(&[3, 3], vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        let ops = SpectralOps::build(&adj, 3).unwrap();
        let l_hat = &ops.scaled_laplacian;
        let want = l_hat
            .matmul(l_hat)
            .unwrap()
            .scale(2.0)
            .sub(&Tensor::eye(3))
            .unwrap();
        assert!(ops.cheb_basis[2].max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn chebyshev_t3_identity() {
        // T_3 = 4L̂³ − 3L̂ for any argument with spectral radius ≤ 1.
        let l_hat = Tensor::from_vec(
            &[3, 3],
            vec![0.2, -0.3, 0.1, -0.3, 0.4, -0.2, 0.1, -0.2, 0.0],
        )
        .unwrap();
        let basis = chebyshev_basis(&l_hat, 4).unwrap();
        let cube = l_hat.matmul(&l_hat).unwrap().matmul(&l_hat).unwrap();
        let want = cube.scale(4.0).sub(&l_hat.scale(3.0)).unwrap();
        assert!(basis[3].max_abs_diff(&want) < 1e-8);
    }

    #[test]
    fn scaled_laplacian_spectrum_in_unit_interval() {
        let dists = dist3();
        let g = RoadGraph::new(
            vec!["a".into(), "b".into(), "c".into()],
            dists,
            vec![
                NodeMeta {
                    latitude: 0.0,
                    longitude: 0.0,
                    lane_count: 2
                };
                3
            ],
            None,
            0.1,
        )
        .unwrap();
        let ops = SpectralOps::build(&g.adjacency, 3).unwrap();
        let top = max_eigenvalue(&ops.scaled_laplacian).unwrap();
        assert!(top <= 1.0 + 1e-6, "top of L̂ spectrum {top}");
    }

    #[test]
    fn graph_rejects_asymmetric_distances() {
        let bad = Tensor::from_vec(&[2, 2], vec![0.0, 1.0, 2.0, 0.0]).unwrap();
        assert!(RoadGraph::new(
            vec!["a".into(), "b".into()],
            bad,
            vec![
                NodeMeta {
                    latitude: 0.0,
                    longitude: 0.0,
                    lane_count: 1
                };
                2
            ],
            Some(1.0),
            0.5,
        )
        .is_err());
    }

    #[test]
    fn matrix_csv_header() {
        let m = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let mut buf = Vec::new();
        write_matrix_csv(&m, &["a".into(), "b".into()], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "node_id,a,b\na,1,0\nb,0,1\n"
        );
    }

    fn random_adjacency(n: usize, seed: u64) -> Tensor {
        let mut state = seed;
        let mut adj = Tensor::zeros(&[n, n]);
        for i in 0..n {
            for j in (i + 1)..n {
                state = state
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                if state >> 63 == 1 {
                    *adj.at2_mut(i, j) = 1.0;
                    *adj.at2_mut(j, i) = 1.0;
                }
            }
        }
        adj
    }

    #[test]
    fn laplacian_eigenvalues_within_bounds() {
        for seed in 0..5u64 {
            let adj = random_adjacency(16, seed + 1);
            let lap = normalized_laplacian(&adj).unwrap();
            let top = max_eigenvalue(&lap).unwrap();
            assert!(top <= 2.0 + 1e-8, "λ_max {top}");
        }
    }

    proptest! {
        #[test]
        fn adjacency_monotone_in_r(
            seed in 0u64..1000,
            r1 in 0.0f64..1.0,
            r2 in 0.0f64..1.0,
        ) {
            let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            let mut dists = Tensor::zeros(&[4, 4]);
            let mut state = seed.wrapping_add(1);
            for i in 0..4 {
                for j in (i + 1)..4 {
                    state = state.wrapping_mul(2862933555777941757).wrapping_add(3037000493);
                    let d = (state >> 11) as f64 / (1u64 << 53) as f64 * 5.0;
                    *dists.at2_mut(i, j) = d;
                    *dists.at2_mut(j, i) = d;
                }
            }
            let loose = build_adjacency(&dists, 2.0, lo).unwrap();
            let tight = build_adjacency(&dists, 2.0, hi).unwrap();
            for (a, b) in loose.data().iter().zip(tight.data()) {
                prop_assert!(b <= a, "raising r added an edge");
            }
        }

        #[test]
        fn laplacian_is_psd(seed in 0u64..500) {
            let adj = random_adjacency(8, seed + 1);
            let lap = normalized_laplacian(&adj).unwrap();
            let mut state = seed.wrapping_add(99);
            let x: Vec<f64> = (0..8)
                .map(|_| {
                    state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
                })
                .collect();
            let mut quad = 0.0;
            for i in 0..8 {
                for j in 0..8 {
                    quad += x[i] * lap.at2(i, j) * x[j];
                }
            }
            prop_assert!(quad >= -1e-10, "xᵀLx = {quad}");
        }
    }
}
