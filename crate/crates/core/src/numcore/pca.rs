//! Symmetric eigendecomposition (cyclic Jacobi) and PCA projection.

use super::tensor::Tensor;
use crate::error::{contract, Result};

/// Eigenpairs of a symmetric matrix, sorted by descending eigenvalue.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    /// Column `j` of this `p×p` row-major matrix is the eigenvector for `values[j]`.
    pub vectors: Tensor,
}

const MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi rotations until the off-diagonal mass vanishes.
///
/// Each eigenvector is sign-normalised so that its largest-magnitude entry is
/// positive (the first such entry on exact ties).
pub fn symmetric_eigen(matrix: &Tensor) -> Result<SymmetricEigen> {
    let shape = matrix.shape();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(contract(format!(
            "eigendecomposition needs a square matrix, got {shape:?}"
        )));
    }
    let p = shape[0];
    let mut a = matrix.data().to_vec();
    for i in 0..p {
        for j in 0..i {
            let (x, y) = (a[i * p + j], a[j * p + i]);
            let tol = 1e-9 * (1.0 + x.abs().max(y.abs()));
            if (x - y).abs() > tol {
                return Err(contract("eigendecomposition needs a symmetric matrix"));
            }
            let avg = 0.5 * (x + y);
            a[i * p + j] = avg;
            a[j * p + i] = avg;
        }
    }
    let mut v = Tensor::eye(p).into_vec();

    let scale: f64 = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(f64::MIN_POSITIVE);
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..p)
            .flat_map(|i| (0..p).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * p + j] * a[i * p + j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for k in 0..p {
            for l in k + 1..p {
                let akl = a[k * p + l];
                if akl == 0.0 {
                    continue;
                }
                let theta = (a[l * p + l] - a[k * p + k]) / (2.0 * akl);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..p {
                    let (ark, arl) = (a[r * p + k], a[r * p + l]);
                    a[r * p + k] = c * ark - s * arl;
                    a[r * p + l] = s * ark + c * arl;
                }
                for r in 0..p {
                    let (akr, alr) = (a[k * p + r], a[l * p + r]);
                    a[k * p + r] = c * akr - s * alr;
                    a[l * p + r] = s * akr + c * alr;
                }
                for r in 0..p {
                    let (vrk, vrl) = (v[r * p + k], v[r * p + l]);
                    v[r * p + k] = c * vrk - s * vrl;
                    v[r * p + l] = s * vrk + c * vrl;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| a[j * p + j].total_cmp(&a[i * p + i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[i * p + i]).collect();
    let mut vectors = vec![0.0; p * p];
    for (col, &src) in order.iter().enumerate() {
        let mut pivot = 0;
        for r in 0..p {
            if v[r * p + src].abs() > v[pivot * p + src].abs() {
                pivot = r;
            }
        }
        let sign = if v[pivot * p + src] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..p {
            vectors[r * p + col] = sign * v[r * p + src];
        }
    }
    Ok(SymmetricEigen {
        values,
        vectors: Tensor::new([p, p], vectors)?,
    })
}

/// Column-centred rows projected onto the top-`d` principal directions.
pub fn pca_project(rows: &Tensor, d: usize) -> Result<Tensor> {
    Ok(pca_fit(rows, d)?.0)
}

/// Like [`pca_project`], also returning the column means and the `p×d` basis.
pub fn pca_fit(rows: &Tensor, d: usize) -> Result<(Tensor, Vec<f64>, Tensor)> {
    let shape = rows.shape();
    if shape.len() != 2 {
        return Err(contract(format!("PCA needs a 2-D input, got {shape:?}")));
    }
    let (n, p) = (shape[0], shape[1]);
    if d == 0 || d > n.min(p) {
        return Err(contract(format!(
            "PCA dimension {d} must lie in 1..={} for a {n}×{p} input",
            n.min(p)
        )));
    }
    let x = rows.data();
    let means: Vec<f64> = (0..p)
        .map(|j| (0..n).map(|i| x[i * p + j]).sum::<f64>() / n as f64)
        .collect();
    let centered: Vec<f64> = (0..n * p).map(|idx| x[idx] - means[idx % p]).collect();
    let mut cov = vec![0.0; p * p];
    for i in 0..n {
        let row = &centered[i * p..(i + 1) * p];
        for a in 0..p {
            for b in 0..p {
                cov[a * p + b] += row[a] * row[b];
            }
        }
    }
    let denom = (n.max(2) - 1) as f64;
    cov.iter_mut().for_each(|c| *c /= denom);
    let eig = symmetric_eigen(&Tensor::new([p, p], cov)?)?;
    let basis = eig.vectors.slice_axis(1, 0, d)?;
    let projected = super::tensor::matmul(&Tensor::new([n, p], centered)?, &basis)?;
    Ok((projected, means, basis))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::rng::set_seed;
    use crate::numcore::tensor::matmul;

    fn pairwise(t: &Tensor) -> Vec<f64> {
        let (n, p) = (t.shape()[0], t.shape()[1]);
        let x = t.data();
        let mut out = vec![];
        for i in 0..n {
            for j in i + 1..n {
                out.push(
                    (0..p)
                        .map(|k| (x[i * p + k] - x[j * p + k]).powi(2))
                        .sum::<f64>()
                        .sqrt(),
                );
            }
        }
        out
    }

    #[test]
    fn eigen_reconstructs_symmetric_matrix() {
        let r = set_seed(42).uniform_tensor([5, 5], 1.0);
        let sym = r.add(&r.transpose().unwrap()).unwrap();
        let eig = symmetric_eigen(&sym).unwrap();
        let lambda = {
            let mut d = vec![0.0; 25];
            for i in 0..5 {
                d[i * 5 + i] = eig.values[i];
            }
            Tensor::new([5, 5], d).unwrap()
        };
        let recon = matmul(
            &matmul(&eig.vectors, &lambda).unwrap(),
            &eig.vectors.transpose().unwrap(),
        )
        .unwrap();
        assert!(recon.max_abs_diff(&sym).unwrap() < 1e-9);
        assert!(eig.values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn sign_convention_largest_entry_positive() {
        let r = set_seed(9).uniform_tensor([6, 6], 1.0);
        let sym = r.add(&r.transpose().unwrap()).unwrap();
        let v = symmetric_eigen(&sym).unwrap().vectors;
        for col in 0..6 {
            let column: Vec<f64> = (0..6).map(|r| v.get(&[r, col])).collect();
            let max = column
                .iter()
                .cloned()
                .fold(0.0_f64, |m, x| if x.abs() > m.abs() { x } else { m });
            assert!(max > 0.0);
        }
    }

    #[test]
    fn full_rank_projection_preserves_distances() {
        let mut raw = set_seed(1).uniform_tensor([6, 4], 2.0).into_vec();
        for j in 0..4 {
            let m = (0..6).map(|i| raw[i * 4 + j]).sum::<f64>() / 6.0;
            (0..6).for_each(|i| raw[i * 4 + j] -= m);
        }
        let rows = Tensor::new([6, 4], raw).unwrap();
        let z = pca_project(&rows, 4).unwrap();
        for (a, b) in pairwise(&rows).iter().zip(pairwise(&z)) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn identical_rows_project_identically() {
        let mut raw = set_seed(2).uniform_tensor([5, 5], 1.0).into_vec();
        let copy: Vec<f64> = raw[0..5].to_vec();
        raw[15..20].copy_from_slice(&copy);
        let z = pca_project(&Tensor::new([5, 5], raw).unwrap(), 3).unwrap();
        for k in 0..3 {
            assert_eq!(z.get(&[0, k]), z.get(&[3, k]));
        }
    }

    #[test]
    fn rank_deficient_input_is_fine_and_reconstructs() {
        // Rank-1 centred data: every row is a multiple of one direction.
        let dir = [0.6, -0.8, 0.0];
        let coeffs = [-2.0, -1.0, 0.0, 1.0, 2.0];
        let rows: Vec<f64> = coeffs
            .iter()
            .flat_map(|c| dir.iter().map(move |d| c * d))
            .collect();
        let rows = Tensor::new([5, 3], rows).unwrap();
        let (z, means, basis) = pca_fit(&rows, 1).unwrap();
        let back = matmul(&z, &basis.transpose().unwrap()).unwrap();
        let centered = rows.sub(&Tensor::new([3], means).unwrap()).unwrap();
        assert!(back.max_abs_diff(&centered).unwrap() < 1e-9);
        assert!(pca_project(&rows, 3).is_ok());
    }

    #[test]
    fn dimension_out_of_range() {
        let rows = Tensor::zeros([3, 5]);
        assert!(pca_project(&rows, 0).is_err());
        assert!(pca_project(&rows, 4).is_err());
    }
}
