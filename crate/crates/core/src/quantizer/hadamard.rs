use crate::error::{Error, Result};
use crate::tensor::Real;

/// Unnormalized fast Walsh–Hadamard transform in Sylvester order.
///
/// Computes `x · H_n` for `H_{2n} = [[H_n, H_n], [H_n, −H_n]]`. The length
/// must be a power of two.
pub fn fwht_in_place<T: Real>(x: &mut [T]) {
    let n = x.len();
    debug_assert!(n.is_power_of_two());
    let mut stride = 1;
    while stride < n {
        for i in (0..n).step_by(stride * 2) {
            for j in i..i + stride {
                let a = x[j];
                let b = x[j + stride];
                x[j] = a + b;
                x[j + stride] = a - b;
            }
        }
        stride *= 2;
    }
}

fn check<T: Real>(tile: &[T], pivot: usize) -> Result<()> {
    let g = tile.len();
    if g == 0 || !g.is_power_of_two() {
        return Err(Error::UnsupportedTileSize(g));
    }
    if pivot >= g {
        return Err(Error::InvalidInput(format!("pivot {pivot} out of range for tile size {g}")));
    }
    Ok(())
}

fn orthonormal_in_place<T: Real>(x: &mut [T]) {
    fwht_in_place(x);
    let scale = T::one() / T::from_f64(x.len() as f64).sqrt();
    for v in x.iter_mut() {
        *v = *v * scale;
    }
}

/// Swaps elements `0` and `pivot`, then applies `(1/√G) H_G`.
pub fn forward_hadamard<T: Real>(tile: &[T], pivot: usize) -> Result<Vec<T>> {
    check(tile, pivot)?;
    let mut out = tile.to_vec();
    out.swap(0, pivot);
    orthonormal_in_place(&mut out);
    Ok(out)
}

/// Left inverse of [`forward_hadamard`]: applies `(1/√G) H_Gᵀ`, then swaps
/// `0` and `pivot` back.
pub fn inverse_hadamard<T: Real>(tile: &[T], pivot: usize) -> Result<Vec<T>> {
    check(tile, pivot)?;
    let mut out = tile.to_vec();
    // Sylvester H_G is symmetric, so Hᵀ = H.
    orthonormal_in_place(&mut out);
    out.swap(0, pivot);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Dense Sylvester matrix, built by the block recursion.
    fn sylvester(n: usize) -> Vec<Vec<f64>> {
        let mut h = vec![vec![1.0]];
        while h.len() < n {
            let m = h.len();
            let mut next = vec![vec![0.0; 2 * m]; 2 * m];
            for i in 0..m {
                for j in 0..m {
                    next[i][j] = h[i][j];
                    next[i][j + m] = h[i][j];
                    next[i + m][j] = h[i][j];
                    next[i + m][j + m] = -h[i][j];
                }
            }
            h = next;
        }
        h
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn g2_examples() {
        let s = std::f64::consts::SQRT_2;
        let out = forward_hadamard(&[3.0f64, 1.0], 0).unwrap();
        assert!(close(&out, &[4.0 / s, 2.0 / s], 1e-12));
        let swapped = forward_hadamard(&[1.0f64, 3.0], 1).unwrap();
        assert_eq!(out, swapped);
        let back = inverse_hadamard(&[2.8284f64, 1.4142], 1).unwrap();
        assert!(close(&back, &[1.0, 3.0], 1e-4));
    }

    #[test]
    fn spike_spreads_evenly() {
        let out = forward_hadamard(&[8.0f32, 0.0, 0.0, 0.0], 0).unwrap();
        assert_eq!(out, vec![4.0; 4]);
        let back = inverse_hadamard(&out, 0).unwrap();
        assert_eq!(back, vec![8.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn matches_dense_matrix() {
        for g in [2usize, 4, 8, 16, 32] {
            let h = sylvester(g);
            let x: Vec<f64> = (0..g).map(|i| (i as f64 * 0.37).sin()).collect();
            let fast = forward_hadamard(&x, 0).unwrap();
            let dense: Vec<f64> = (0..g)
                .map(|j| (0..g).map(|i| x[i] * h[i][j]).sum::<f64>() / (g as f64).sqrt())
                .collect();
            assert!(close(&fast, &dense, 1e-12), "g={g}");
        }
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(matches!(
            forward_hadamard(&[1.0f32, 2.0, 3.0], 0),
            Err(Error::UnsupportedTileSize(3))
        ));
        assert!(forward_hadamard(&[1.0f32, 2.0], 2).is_err());
        assert!(inverse_hadamard::<f32>(&[], 0).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_and_norm(
            log_g in 1u32..8,
            seed in prop::collection::vec(-100.0f64..100.0, 128),
            pivot_seed in 0usize..1000,
        ) {
            let g = 1usize << log_g;
            let x = &seed[..g];
            let d = pivot_seed % g;
            let y = forward_hadamard(x, d).unwrap();
            let n_x: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let n_y: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((n_x - n_y).abs() <= 1e-10 * n_x.max(1e-300));
            let back = inverse_hadamard(&y, d).unwrap();
            let err: f64 = x.iter().zip(&back).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            prop_assert!(err <= 1e-10 * n_x.max(1e-300));
        }
    }
}
