//! Empirical dependence and discrepancy estimators.
//!
//! * [`hsic_biased`]: `tr(K_z H K_g H) / (N-1)^2` over paired rows of `z` and `g`.
//! * [`hsic_linear_covariance`]: the same quantity for a linear kernel on
//!   column-centered features, written as a squared Frobenius norm of `Z^T G`.
//! * [`mmd_biased`]: the V-statistic MMD between the two row sets.
//! * [`permutation_independence_test`]: p-value for HSIC under row shuffles of `g`.

use crate::error::{Error, Result};
use crate::kernels::{center_matrix, cross_backward, gram_backward, kernel_matrix, cross_kernel, KernelSpec};
use crate::numerics::{Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HsicEstimate {
    pub value: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PermutationTestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub permutations: usize,
}

fn check_paired(z: &Matrix, g: &Matrix, op: &'static str) -> Result<usize> {
    if z.rows() != g.rows() {
        return Err(Error::mismatch(op, format!("{} paired rows", z.rows()), g.rows()));
    }
    if z.rows() < 2 {
        return Err(Error::contract(format!("{op} needs at least 2 rows, got {}", z.rows())));
    }
    Ok(z.rows())
}

/// `sum_ij a_ij b_ji`, i.e. `tr(A B)` without forming the product.
fn trace_of_product(a: &Matrix, b: &Matrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += a.get(i, j) * b.get(j, i);
        }
    }
    s
}

/// `H K H`: rows and columns both mean-centered.
fn double_center(k: &Matrix) -> Matrix {
    center_matrix(&center_matrix(k).transpose())
}

pub fn hsic_biased(z: &Matrix, g: &Matrix, spec: &KernelSpec) -> Result<HsicEstimate> {
    let n = check_paired(z, g, "hsic_biased")?;
    let kz = kernel_matrix(z, spec)?;
    let kg = kernel_matrix(g, spec)?;
    let kh_z = center_matrix(&kz.k);
    let kh_g = center_matrix(&kg.k);
    let denom = ((n - 1) * (n - 1)) as f64;
    Ok(HsicEstimate {
        value: trace_of_product(&kh_z, &kh_g) / denom,
        n,
    })
}

/// HSIC value with its gradients w.r.t. `z` and `g`.
pub fn hsic_with_grad(z: &Matrix, g: &Matrix, spec: &KernelSpec) -> Result<(f64, Matrix, Matrix)> {
    let n = check_paired(z, g, "hsic_with_grad")?;
    let kz = kernel_matrix(z, spec)?;
    let kg = kernel_matrix(g, spec)?;
    let denom = ((n - 1) * (n - 1)) as f64;
    let value = trace_of_product(&center_matrix(&kz.k), &center_matrix(&kg.k)) / denom;
    // d tr(Kz H Kg H) / dKz = H Kg H (symmetric), and vice versa.
    let up_z = double_center(&kg.k).scale(1.0 / denom);
    let up_g = double_center(&kz.k).scale(1.0 / denom);
    let dz = gram_backward(z, &up_z, spec)?;
    let dg = gram_backward(g, &up_g, spec)?;
    Ok((value, dz, dg))
}

/// `|Z^T G|_F^2 / (N-1)^2`. Callers pass column-centered features.
pub fn hsic_linear_covariance(z: &Matrix, g: &Matrix) -> Result<f64> {
    let n = check_paired(z, g, "hsic_linear_covariance")?;
    let c = z.t_matmul(g)?;
    Ok(c.frobenius_sq() / ((n - 1) * (n - 1)) as f64)
}

/// Biased MMD^2: `mean(K_zz) - 2 mean(K_zg) + mean(K_gg)`, diagonals included.
pub fn mmd_biased(z: &Matrix, g: &Matrix, spec: &KernelSpec) -> Result<f64> {
    if z.cols() != g.cols() {
        return Err(Error::mismatch("mmd_biased", format!("{} feature columns", z.cols()), g.cols()));
    }
    let kzz = cross_kernel(z, z, spec)?;
    let kgg = cross_kernel(g, g, spec)?;
    let kzg = cross_kernel(z, g, spec)?;
    Ok(kzz.mean() - 2.0 * kzg.mean() + kgg.mean())
}

/// MMD value with its gradients w.r.t. `z` and `g`.
pub fn mmd_with_grad(z: &Matrix, g: &Matrix, spec: &KernelSpec) -> Result<(f64, Matrix, Matrix)> {
    let value = mmd_biased(z, g, spec)?;
    let (n, m) = (z.rows() as f64, g.rows() as f64);
    let mut dz = gram_backward(z, &Matrix::filled(z.rows(), z.rows(), 1.0 / (n * n)), spec)?;
    let mut dg = gram_backward(g, &Matrix::filled(g.rows(), g.rows(), 1.0 / (m * m)), spec)?;
    let (cz, cg) = cross_backward(z, g, &Matrix::filled(z.rows(), g.rows(), -2.0 / (n * m)), spec)?;
    dz.add_scaled(&cz, 1.0)?;
    dg.add_scaled(&cg, 1.0)?;
    Ok((value, dz, dg))
}

/// Permutation test of independence between paired rows of `z` and `g`.
///
/// The null distribution is built by shuffling the rows of `g`, which breaks
/// the pairing while keeping both marginals. Permuted statistics reuse the
/// double-centered Gram matrices, since `H P K P^T H = P (H K H) P^T`.
pub fn permutation_independence_test(
    z: &Matrix,
    g: &Matrix,
    spec: &KernelSpec,
    permutations: usize,
    rng: &mut Rng,
) -> Result<PermutationTestResult> {
    if permutations < 99 {
        return Err(Error::contract(format!("need at least 99 permutations, got {permutations}")));
    }
    let statistic = hsic_biased(z, g, spec)?.value;
    let n = z.rows();
    let lz = double_center(&kernel_matrix(z, spec)?.k);
    let lg = double_center(&kernel_matrix(g, spec)?.k);
    let permuted_trace = |perm: &[usize]| -> f64 {
        let mut s = 0.0;
        for (i, &pi) in perm.iter().enumerate() {
            for (j, &pj) in perm.iter().enumerate() {
                s += lz.get(i, j) * lg.get(pi, pj);
            }
        }
        s
    };
    let identity: Vec<usize> = (0..n).collect();
    let observed = permuted_trace(&identity);
    let mut exceed = 0usize;
    for _ in 0..permutations {
        let perm = rng.permutation(n);
        if permuted_trace(&perm) >= observed {
            exceed += 1;
        }
    }
    Ok(PermutationTestResult {
        statistic,
        p_value: (1 + exceed) as f64 / (permutations + 1) as f64,
        permutations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{gaussian_sample, Rng};
    use proptest::prelude::*;

    /// Direct dense evaluation with an explicit centering matrix.
    fn hsic_oracle(kz: &Matrix, kg: &Matrix) -> f64 {
        let n = kz.rows();
        let h = Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } - 1.0 / n as f64);
        let prod = kz.matmul(&h).unwrap().matmul(kg).unwrap().matmul(&h).unwrap();
        prod.trace() / ((n - 1) * (n - 1)) as f64
    }

    fn random(rng: &mut Rng, n: usize, d: usize) -> Matrix {
        Matrix::from_fn(n, d, |_, _| rng.normal())
    }

    fn specs() -> [KernelSpec; 3] {
        [KernelSpec::rbf(1.0), KernelSpec::linear(), KernelSpec::imq(1.0)]
    }

    #[test]
    fn constant_z_gives_zero() {
        let z = Matrix::filled(10, 3, 2.5);
        let g = random(&mut Rng::new(1), 10, 3);
        for spec in specs() {
            assert!(hsic_biased(&z, &g, &spec).unwrap().value.abs() < 1e-12);
        }
    }

    #[test]
    fn hand_evaluated_linear_case() {
        let z = Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap();
        let g = z.clone();
        let spec = KernelSpec::linear();
        let kz = kernel_matrix(&z, &spec).unwrap().k;
        let oracle = hsic_oracle(&kz, &kz);
        assert!((oracle - 0.25).abs() < 1e-15);
        assert!((hsic_biased(&z, &g, &spec).unwrap().value - 0.25).abs() < 1e-15);
    }

    #[test]
    fn matches_dense_oracle() {
        let mut rng = Rng::new(42);
        for spec in specs() {
            let z = random(&mut rng, 9, 3);
            let g = random(&mut rng, 9, 2);
            let kz = kernel_matrix(&z, &spec).unwrap().k;
            let kg = kernel_matrix(&g, &spec).unwrap().k;
            let got = hsic_biased(&z, &g, &spec).unwrap().value;
            assert!((got - hsic_oracle(&kz, &kg)).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_row_mismatch() {
        let z = Matrix::zeros(4, 2);
        let g = Matrix::zeros(5, 2);
        assert!(hsic_biased(&z, &g, &KernelSpec::default()).is_err());
        assert!(hsic_linear_covariance(&z, &g).is_err());
    }

    #[test]
    fn covariance_form_zero_cases() {
        let z = random(&mut Rng::new(5), 6, 3).center_columns();
        assert_eq!(hsic_linear_covariance(&z, &Matrix::zeros(6, 3)).unwrap(), 0.0);
        // Columns of z supported on rows 0..3, columns of g on rows 3..6.
        let mut a = Matrix::zeros(6, 2);
        let mut b = Matrix::zeros(6, 2);
        for i in 0..3 {
            a.set(i, 0, i as f64);
            a.set(i, 1, 1.0);
            b.set(i + 3, 0, 2.0);
            b.set(i + 3, 1, -(i as f64));
        }
        assert!(hsic_linear_covariance(&a, &b).unwrap().abs() < 1e-12);
    }

    #[test]
    fn covariance_identity_with_linear_kernel() {
        let mut rng = Rng::new(77);
        for _ in 0..20 {
            let z = random(&mut rng, 12, 4).center_columns();
            let g = random(&mut rng, 12, 3).center_columns();
            let a = hsic_biased(&z, &g, &KernelSpec::linear()).unwrap().value;
            let b = hsic_linear_covariance(&z, &g).unwrap();
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1e-300));
        }
    }

    #[test]
    fn mmd_identical_samples_zero() {
        let z = random(&mut Rng::new(6), 15, 3);
        for spec in specs() {
            assert!(mmd_biased(&z, &z, &spec).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn mmd_far_clusters_lose_cross_term() {
        let mut rng = Rng::new(9);
        let z = gaussian_sample(&mut rng, 20, 2, &[0.0, 0.0], 0.5).unwrap();
        let g = gaussian_sample(&mut rng, 20, 2, &[100.0, 0.0], 0.5).unwrap();
        let spec = KernelSpec::rbf(1.0);
        let kzz = kernel_matrix(&z, &spec).unwrap().k.mean();
        let kgg = kernel_matrix(&g, &spec).unwrap().k.mean();
        assert!((mmd_biased(&z, &g, &spec).unwrap() - (kzz + kgg)).abs() < 1e-6);
    }

    #[test]
    fn mmd_matches_double_loop() {
        let mut rng = Rng::new(10);
        for spec in specs() {
            let z = random(&mut rng, 7, 3);
            let g = random(&mut rng, 5, 3);
            let mut szz = 0.0;
            let mut sgg = 0.0;
            let mut szg = 0.0;
            for i in 0..7 {
                for j in 0..7 {
                    szz += spec.eval(z.row(i), z.row(j));
                }
                for j in 0..5 {
                    szg += spec.eval(z.row(i), g.row(j));
                }
            }
            for i in 0..5 {
                for j in 0..5 {
                    sgg += spec.eval(g.row(i), g.row(j));
                }
            }
            let oracle = szz / 49.0 - 2.0 * szg / 35.0 + sgg / 25.0;
            assert!((mmd_biased(&z, &g, &spec).unwrap() - oracle).abs() < 1e-12);
        }
    }

    fn fd_check(f: impl Fn(&Matrix, &Matrix) -> f64, z: &Matrix, g: &Matrix, dz: &Matrix, dg: &Matrix) {
        let h = 1e-6;
        for idx in 0..z.data().len() {
            let (mut p, mut q) = (z.clone(), z.clone());
            p.data_mut()[idx] += h;
            q.data_mut()[idx] -= h;
            let fd = (f(&p, g) - f(&q, g)) / (2.0 * h);
            assert!((fd - dz.data()[idx]).abs() < 1e-7 * (1.0 + fd.abs()), "dz {fd} {}", dz.data()[idx]);
        }
        for idx in 0..g.data().len() {
            let (mut p, mut q) = (g.clone(), g.clone());
            p.data_mut()[idx] += h;
            q.data_mut()[idx] -= h;
            let fd = (f(z, &p) - f(z, &q)) / (2.0 * h);
            assert!((fd - dg.data()[idx]).abs() < 1e-7 * (1.0 + fd.abs()), "dg {fd} {}", dg.data()[idx]);
        }
    }

    #[test]
    fn estimator_gradients_match_finite_differences() {
        let mut rng = Rng::new(31);
        for spec in specs() {
            let z = random(&mut rng, 6, 3);
            let g = random(&mut rng, 6, 3);
            let (v, dz, dg) = hsic_with_grad(&z, &g, &spec).unwrap();
            assert_eq!(v, hsic_biased(&z, &g, &spec).unwrap().value);
            fd_check(|a, b| hsic_biased(a, b, &spec).unwrap().value, &z, &g, &dz, &dg);
            let g2 = random(&mut rng, 4, 3);
            let (_, dz, dg) = mmd_with_grad(&z, &g2, &spec).unwrap();
            fd_check(|a, b| mmd_biased(a, b, &spec).unwrap(), &z, &g2, &dz, &dg);
        }
    }

    #[test]
    fn permutation_p_value_floor() {
        let z = random(&mut Rng::new(3), 40, 2);
        let r = permutation_independence_test(&z, &z, &KernelSpec::rbf(1.0), 99, &mut Rng::new(4)).unwrap();
        assert_eq!(r.p_value, 0.01);
        assert_eq!(r.permutations, 99);
    }

    #[test]
    fn permutation_requires_enough_draws() {
        let z = random(&mut Rng::new(3), 10, 2);
        assert!(permutation_independence_test(&z, &z, &KernelSpec::default(), 98, &mut Rng::new(1)).is_err());
    }

    #[test]
    fn permuted_statistic_matches_direct_evaluation() {
        let mut rng = Rng::new(12);
        let z = random(&mut rng, 10, 2);
        let g = random(&mut rng, 10, 2);
        let spec = KernelSpec::rbf(1.0);
        let perm = rng.permutation(10);
        let n = 10;
        let lz = double_center(&kernel_matrix(&z, &spec).unwrap().k);
        let lg = double_center(&kernel_matrix(&g, &spec).unwrap().k);
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += lz.get(i, j) * lg.get(perm[i], perm[j]);
            }
        }
        let direct = hsic_biased(&z, &g.select_rows(&perm), &spec).unwrap().value;
        assert!((s / 81.0 - direct).abs() < 1e-12);
    }

    #[test]
    fn mean_hsic_decays_with_n_under_independence() {
        let spec = KernelSpec::rbf(1.0);
        let mut prev = f64::INFINITY;
        for n in [16, 64, 256] {
            let mut total = 0.0;
            for seed in 0..50 {
                let mut rng = Rng::new(1000 + seed);
                let z = random(&mut rng, n, 2);
                let g = random(&mut rng, n, 2);
                total += hsic_biased(&z, &g, &spec).unwrap().value;
            }
            let mean = total / 50.0;
            assert!(mean < prev, "n={n}: {mean} !< {prev}");
            prev = mean;
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn nonnegative_symmetric_and_permutation_invariant(seed in any::<u64>(), n in 2usize..14, kind in 0usize..3) {
            let spec = specs()[kind];
            let mut rng = Rng::new(seed);
            let z = Matrix::from_fn(n, 3, |_, _| 2.0 * rng.normal());
            let g = Matrix::from_fn(n, 2, |_, _| 2.0 * rng.normal());
            let a = hsic_biased(&z, &g, &spec).unwrap().value;
            let b = hsic_biased(&g, &z, &spec).unwrap().value;
            prop_assert!(a >= -1e-12);
            prop_assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
            let perm = rng.permutation(n);
            let c = hsic_biased(&z.select_rows(&perm), &g.select_rows(&perm), &spec).unwrap().value;
            prop_assert!((a - c).abs() < 1e-12 * (1.0 + a.abs()));
        }
    }
}
