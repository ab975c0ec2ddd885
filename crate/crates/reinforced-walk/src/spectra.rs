//! Linearization of the flow at the uniform pair and the appendix Hessian
//! matrices: dense symmetric builds, closed-form spectra, and a cyclic
//! Jacobi eigensolver used as the numeric cross-check.

use crate::error::{Error, Result};
use crate::flow;
use crate::model::Params;
use serde::Serialize;

/// Numeric eigenvalues are clustered into multiplicities at this tolerance;
/// it sits far above the solver error and far below every eigenvalue gap of
/// the shipped matrices.
pub const CLUSTER_TOLERANCE: f64 = 1e-8;

/// Small dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m.data[i * n + j] = f(i, j);
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// `M · 1` computed row by row in index order.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j)).sum())
            .collect()
    }
}

/// Sorted eigenvalues of a symmetric matrix by cyclic Jacobi rotations,
/// iterated until the off-diagonal Frobenius norm falls below `1e-12`.
/// At the shipped dimensions (`<= 16`) the per-eigenvalue error stays well
/// under `1e-10`.
pub fn numeric_eigenvalues(m: &Matrix) -> Result<Vec<f64>> {
    let asym = m.max_asymmetry();
    if asym > 1e-12 {
        return Err(Error::NotSymmetric(asym));
    }
    let n = m.dim();
    let mut a = m.clone();
    const MAX_SWEEPS: usize = 100;
    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += 2.0 * a.get(p, q) * a.get(p, q);
            }
        }
        if off.sqrt() < 1e-12 {
            let mut eig: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
            eig.sort_by(|x, y| x.partial_cmp(y).expect("non-finite eigenvalue"));
            return Ok(eig);
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let tau = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // rotate rows/columns p and q
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
            }
        }
    }
    Err(Error::EigenNoConvergence)
}

/// An eigenvalue with multiplicity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EigenPair {
    pub value: f64,
    pub multiplicity: usize,
}

/// A matrix spectrum: numeric values clustered into multiplicities next to
/// the closed form, with the worst discrepancy after sorted matching.
#[derive(Debug, Clone, Serialize)]
pub struct SpectrumReport {
    pub dimension: usize,
    pub numeric: Vec<EigenPair>,
    pub closed_form: Vec<EigenPair>,
    pub max_discrepancy: f64,
}

fn cluster(sorted: &[f64]) -> Vec<EigenPair> {
    let mut out: Vec<EigenPair> = Vec::new();
    for &v in sorted {
        match out.last_mut() {
            Some(c) if (v - c.value).abs() <= CLUSTER_TOLERANCE => c.multiplicity += 1,
            _ => out.push(EigenPair {
                value: v,
                multiplicity: 1,
            }),
        }
    }
    out
}

/// Builds a report comparing the numeric spectrum of `m` against a closed
/// form given as `(value, multiplicity)` pairs.
pub fn spectrum_report(m: &Matrix, closed_form: &[(f64, usize)]) -> Result<SpectrumReport> {
    let numeric = numeric_eigenvalues(m)?;
    let mut expanded: Vec<f64> = closed_form
        .iter()
        .flat_map(|(v, k)| std::iter::repeat_n(*v, *k))
        .collect();
    if expanded.len() != numeric.len() {
        return Err(Error::Domain(format!(
            "closed-form multiplicities sum to {}, dimension is {}",
            expanded.len(),
            numeric.len()
        )));
    }
    expanded.sort_by(|x, y| x.partial_cmp(y).expect("non-finite closed form"));
    let max_discrepancy = numeric
        .iter()
        .zip(&expanded)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    let mut cf: Vec<EigenPair> = closed_form
        .iter()
        .filter(|(_, k)| *k > 0)
        .map(|&(value, multiplicity)| EigenPair {
            value,
            multiplicity,
        })
        .collect();
    cf.sort_by(|a, b| a.value.partial_cmp(&b.value).expect("non-finite"));
    Ok(SpectrumReport {
        dimension: m.dim(),
        numeric: cluster(&numeric),
        closed_form: cf,
        max_discrepancy,
    })
}

/// The Jacobian of the vector field at the uniform pair: the block matrix
/// `[[-I, B], [B, -I]]` with `B = -α I + (α/d) J`. The parameter constraint
/// `δ < 1/d` keeps the uniform pair off the floor, where the field is
/// differentiable.
pub fn jacobian_at_uniform(params: &Params) -> Matrix {
    let d = params.d();
    let alpha = params.alpha();
    let b_off = alpha / d as f64;
    let b_diag = b_off - alpha;
    Matrix::from_fn(2 * d, |i, j| {
        let (bi, ii) = (i / d, i % d);
        let (bj, jj) = (j / d, j % d);
        if bi == bj {
            if ii == jj {
                -1.0
            } else {
                0.0
            }
        } else if ii == jj {
            b_diag
        } else {
            b_off
        }
    })
}

/// Closed-form spectrum of the Jacobian at the uniform pair:
/// `-1` twice, `-1 + α` and `-1 - α` each with multiplicity `d - 1`
/// (from `B`'s spectrum `{0, -α}` and the `±` block coupling).
pub fn closed_form_jacobian_eigenvalues(params: &Params) -> Vec<(f64, usize)> {
    let d = params.d();
    let alpha = params.alpha();
    vec![
        (-1.0 - alpha, d - 1),
        (-1.0, 2),
        (-1.0 + alpha, d - 1),
    ]
}

/// Spectrum report for the Jacobian at the uniform pair.
pub fn jacobian_spectrum(params: &Params) -> Result<SpectrumReport> {
    spectrum_report(
        &jacobian_at_uniform(params),
        &closed_form_jacobian_eigenvalues(params),
    )
}

/// Central-difference Jacobian of the vector field at the uniform pair,
/// column by column. The formula extends smoothly to the off-simplex
/// perturbations `U ± h e_i` as long as `h` keeps coordinates inside
/// `(δ, 1)`.
pub fn finite_difference_jacobian(params: &Params, h: f64) -> Result<Matrix> {
    let d = params.d();
    if !(h > 0.0 && h < 1.0 / d as f64 - params.delta()) {
        return Err(Error::InvalidParams(format!(
            "finite-difference step {h} leaves the smooth neighborhood"
        )));
    }
    let mut z = vec![1.0 / d as f64; 2 * d];
    let mut fp = vec![0.0; 2 * d];
    let mut fm = vec![0.0; 2 * d];
    let mut out = Matrix::zeros(2 * d);
    for j in 0..2 * d {
        z[j] += h;
        {
            let (u, v) = z.split_at(d);
            let (ou, ov) = fp.split_at_mut(d);
            flow::field_into(u, v, params, ou, ov);
        }
        z[j] -= 2.0 * h;
        {
            let (u, v) = z.split_at(d);
            let (ou, ov) = fm.split_at_mut(d);
            flow::field_into(u, v, params, ou, ov);
        }
        z[j] += h;
        for i in 0..2 * d {
            out.set(i, j, (fp[i] - fm[i]) / (2.0 * h));
        }
    }
    Ok(out)
}

/// Linear stability of the uniform pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Stability {
    Unstable,
    Attracting,
    Marginal,
}

/// Classifies the uniform pair from the numeric spectrum of the Jacobian:
/// unstable when the top eigenvalue exceeds `1e-10`, attracting when it
/// falls below `-1e-10`, marginal otherwise (`α = 1`).
pub fn classify_equilibrium(params: &Params) -> Result<Stability> {
    let eig = numeric_eigenvalues(&jacobian_at_uniform(params))?;
    let top = *eig.last().expect("nonempty spectrum");
    Ok(if top > 1e-10 {
        Stability::Unstable
    } else if top < -1e-10 {
        Stability::Attracting
    } else {
        Stability::Marginal
    })
}

/// The appendix Hessian pair: `M` (the scaled Hessian of the near-uniform
/// comparison function on the diagonal) and `N = M - (α+1) I`.
#[derive(Debug, Clone, Serialize)]
pub struct AppendixMatrices {
    pub m: Matrix,
    pub n: Matrix,
    pub m_spectrum: SpectrumReport,
    pub n_spectrum: SpectrumReport,
    /// Max |row sum| of `d·M`, whose entries are exact for integer-valued
    /// `(α+2)`-combinations; the zero-row-sum identity is checked there so
    /// per-entry division roundoff cannot blur it.
    pub scaled_m_row_sum_max: f64,
}

/// Builds `M` and `N` with their spectra.
///
/// `M` is assembled as `A / d` where `A = d·M` has the entries
/// `d(α+1) - (α+2)` (leading diagonal), `-(α+2)` (leading off-block),
/// `d - (α+2)` (last row/column) and `d(α+1) - (α+2) + d(2-d)` (corner);
/// for integer `α` these are exact and `A·1 = 0` holds exactly.
///
/// Closed-form spectra: `λ^M = {α+1 (×(d-2)), 0, α+2-d}` and
/// `λ^N = {0 (×(d-2)), -(α+1), -(d-1)}`. (The eigenvector of the zero
/// eigenvalue of `M` is the all-ones diagonal direction; for `α > d-2`
/// every other eigenvalue of `M` is strictly positive.)
pub fn appendix_matrices(d: usize, alpha: f64) -> Result<AppendixMatrices> {
    if d < 2 {
        return Err(Error::InvalidParams(format!("d = {d} must be >= 2")));
    }
    if !(alpha > 0.0) {
        return Err(Error::InvalidParams(format!("alpha = {alpha} must be > 0")));
    }
    let df = d as f64;
    let a_diag = df * (alpha + 1.0) - (alpha + 2.0);
    let a_off = -(alpha + 2.0);
    let a_last = df - (alpha + 2.0);
    let a_corner = a_diag + df * (2.0 - df);
    let scaled = Matrix::from_fn(d, |i, j| {
        if i == d - 1 && j == d - 1 {
            a_corner
        } else if i == d - 1 || j == d - 1 {
            a_last
        } else if i == j {
            a_diag
        } else {
            a_off
        }
    });
    let scaled_m_row_sum_max = scaled
        .row_sums()
        .iter()
        .map(|s| s.abs())
        .fold(0.0f64, f64::max);
    let m = Matrix::from_fn(d, |i, j| scaled.get(i, j) / df);
    let n = Matrix::from_fn(d, |i, j| m.get(i, j) - if i == j { alpha + 1.0 } else { 0.0 });

    let m_closed: Vec<(f64, usize)> = vec![
        (alpha + 1.0, d - 2),
        (0.0, 1),
        (alpha + 2.0 - df, 1),
    ];
    let n_closed: Vec<(f64, usize)> = vec![
        (0.0, d - 2),
        (-(alpha + 1.0), 1),
        (-(df - 1.0), 1),
    ];
    let m_spectrum = spectrum_report(&m, &m_closed)?;
    let n_spectrum = spectrum_report(&n, &n_closed)?;
    Ok(AppendixMatrices {
        m,
        n,
        m_spectrum,
        n_spectrum,
        scaled_m_row_sum_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(d: usize, alpha: f64) -> Params {
        Params::new(d, alpha, 0.1 / d as f64).unwrap()
    }

    #[test]
    fn jacobi_on_diagonal_matrices() {
        let m = Matrix::from_fn(4, |i, j| if i == j { 1.0 } else { 0.0 });
        assert_eq!(numeric_eigenvalues(&m).unwrap(), vec![1.0; 4]);
        let m = Matrix::from_fn(3, |i, j| {
            if i == j {
                [3.0, -1.0, 2.0][i]
            } else {
                0.0
            }
        });
        assert_eq!(numeric_eigenvalues(&m).unwrap(), vec![-1.0, 2.0, 3.0]);
    }

    #[test]
    fn jacobi_matches_a_hand_solved_spectrum() {
        // [[2, 0, 0], [0, 3, 4], [0, 4, 9]]: eigenvalues 1, 2, 11
        let vals = [[2.0, 0.0, 0.0], [0.0, 3.0, 4.0], [0.0, 4.0, 9.0]];
        let m = Matrix::from_fn(3, |i, j| vals[i][j]);
        let eig = numeric_eigenvalues(&m).unwrap();
        for (a, b) in eig.iter().zip([1.0, 2.0, 11.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobi_rejects_asymmetric_input() {
        let mut m = Matrix::zeros(2);
        m.set(0, 1, 1.0);
        assert!(matches!(
            numeric_eigenvalues(&m),
            Err(Error::NotSymmetric(_))
        ));
    }

    #[test]
    fn jacobian_entries_match_the_block_form() {
        // d = 3, alpha = 2: off-block diagonal -4/3, off-block off-diagonal 2/3
        let m = jacobian_at_uniform(&params(3, 2.0));
        assert_eq!(m.dim(), 6);
        assert_eq!(m.get(0, 0), -1.0);
        assert_eq!(m.get(0, 1), 0.0);
        assert!((m.get(0, 3) - (-4.0 / 3.0)).abs() < 1e-15);
        assert!((m.get(0, 4) - (2.0 / 3.0)).abs() < 1e-15);
        assert_eq!(m.max_asymmetry(), 0.0);
        // each row sums to -1 (B's rows sum to zero)
        for s in m.row_sums() {
            assert!((s + 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn jacobian_spectrum_examples() {
        // d = 3, alpha = 2: {-3, -3, -1, -1, 1, 1}
        let rep = jacobian_spectrum(&params(3, 2.0)).unwrap();
        assert!(rep.max_discrepancy < 1e-10);
        let got: Vec<(f64, usize)> = rep
            .numeric
            .iter()
            .map(|p| (p.value, p.multiplicity))
            .collect();
        assert_eq!(got.len(), 3);
        assert!((got[0].0 + 3.0).abs() < 1e-10 && got[0].1 == 2);
        assert!((got[1].0 + 1.0).abs() < 1e-10 && got[1].1 == 2);
        assert!((got[2].0 - 1.0).abs() < 1e-10 && got[2].1 == 2);
        // d = 2, alpha = 3: {-4, -1, -1, 2}
        let rep = jacobian_spectrum(&params(2, 3.0)).unwrap();
        assert!(rep.max_discrepancy < 1e-10);
        let flat: Vec<f64> = rep
            .numeric
            .iter()
            .flat_map(|p| std::iter::repeat_n(p.value, p.multiplicity))
            .collect();
        for (a, b) in flat.iter().zip([-4.0, -1.0, -1.0, 2.0]) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn jacobian_spectrum_grid() {
        for d in 2..=8 {
            for alpha in [0.5, 1.0, 2.0, 5.0, 10.0] {
                let rep = jacobian_spectrum(&Params::new(d, alpha, 0.05 / d as f64).unwrap()).unwrap();
                assert!(
                    rep.max_discrepancy < 1e-10,
                    "d={d} alpha={alpha}: {:e}",
                    rep.max_discrepancy
                );
            }
        }
    }

    #[test]
    fn block_eigenvector_residuals() {
        // (1|1) and (1|-1) span the -1 pair
        let p = params(3, 2.0);
        let m = jacobian_at_uniform(&p);
        for sign in [1.0, -1.0] {
            let v: Vec<f64> = (0..6).map(|i| if i < 3 { 1.0 } else { sign }).collect();
            for i in 0..6 {
                let mut acc = 0.0;
                for j in 0..6 {
                    acc += m.get(i, j) * v[j];
                }
                assert!((acc + v[i]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn finite_difference_jacobian_agrees() {
        for alpha in [0.5, 2.0, 10.0] {
            let p = params(3, alpha);
            let fd = finite_difference_jacobian(&p, 1e-6).unwrap();
            let cf = jacobian_at_uniform(&p);
            for i in 0..6 {
                for j in 0..6 {
                    assert!(
                        (fd.get(i, j) - cf.get(i, j)).abs() < 1e-6,
                        "alpha={alpha} entry ({i},{j}): {} vs {}",
                        fd.get(i, j),
                        cf.get(i, j)
                    );
                }
            }
        }
    }

    #[test]
    fn stability_classification() {
        assert_eq!(classify_equilibrium(&params(3, 2.0)).unwrap(), Stability::Unstable);
        assert_eq!(
            classify_equilibrium(&params(3, 0.5)).unwrap(),
            Stability::Attracting
        );
        assert_eq!(classify_equilibrium(&params(3, 1.0)).unwrap(), Stability::Marginal);
    }

    #[test]
    fn appendix_matrices_structure() {
        let ap = appendix_matrices(3, 5.0).unwrap();
        // M = (alpha+1) I + N entrywise
        for i in 0..3 {
            for j in 0..3 {
                let shift = if i == j { 6.0 } else { 0.0 };
                assert!((ap.m.get(i, j) - (ap.n.get(i, j) + shift)).abs() < 1e-15);
            }
        }
        assert_eq!(ap.m.max_asymmetry(), 0.0);
        assert_eq!(ap.scaled_m_row_sum_max, 0.0);
        // displayed entries: diagonal -(alpha+2)/d + alpha+1, off -(alpha+2)/d,
        // last column 1 - (alpha+2)/d, corner with the extra 2 - d
        assert!((ap.m.get(0, 0) - (6.0 - 7.0 / 3.0)).abs() < 1e-14);
        assert!((ap.m.get(0, 1) - (-7.0 / 3.0)).abs() < 1e-14);
        assert!((ap.m.get(0, 2) - (1.0 - 7.0 / 3.0)).abs() < 1e-14);
        assert!((ap.m.get(2, 2) - (6.0 - 7.0 / 3.0 - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn appendix_spectra_match_closed_forms() {
        // The numeric spectrum is the authority here; for d=3, alpha=5 it is
        // {6, 0, 4}, i.e. {alpha+1, 0, alpha+2-d}.
        let ap = appendix_matrices(3, 5.0).unwrap();
        assert!(ap.m_spectrum.max_discrepancy < 1e-10);
        assert!(ap.n_spectrum.max_discrepancy < 1e-10);
        let m_vals: Vec<f64> = ap.m_spectrum.numeric.iter().map(|p| p.value).collect();
        assert_eq!(m_vals.len(), 3);
        assert!((m_vals[0] - 0.0).abs() < 1e-10);
        assert!((m_vals[1] - 4.0).abs() < 1e-10);
        assert!((m_vals[2] - 6.0).abs() < 1e-10);
        for (dd, aa) in [(3usize, 3.0), (4, 4.0), (5, 5.0), (4, 8.0), (6, 6.0)] {
            let ap = appendix_matrices(dd, aa).unwrap();
            assert!(ap.m_spectrum.max_discrepancy < 1e-10, "d={dd} alpha={aa}");
            assert!(ap.n_spectrum.max_discrepancy < 1e-10, "d={dd} alpha={aa}");
        }
    }

    #[test]
    fn appendix_positivity_above_hessian_threshold() {
        // alpha > d-2: one zero eigenvalue of M, all others positive
        for d in 3..=6usize {
            for alpha in [d as f64 - 1.5, d as f64, 2.0 * d as f64] {
                let ap = appendix_matrices(d, alpha).unwrap();
                let flat: Vec<f64> = ap
                    .m_spectrum
                    .numeric
                    .iter()
                    .flat_map(|p| std::iter::repeat_n(p.value, p.multiplicity))
                    .collect();
                let zeros = flat.iter().filter(|v| v.abs() <= 1e-10).count();
                let positive = flat.iter().filter(|v| **v > 1e-10).count();
                assert_eq!(zeros, 1, "d={d} alpha={alpha}");
                assert_eq!(positive, d - 1, "d={d} alpha={alpha}");
            }
        }
    }

    #[test]
    fn appendix_handles_the_two_vertex_graph() {
        // d = 2: the (d-2)-fold eigenvalue disappears
        let ap = appendix_matrices(2, 3.0).unwrap();
        assert!(ap.m_spectrum.max_discrepancy < 1e-10);
        let flat: Vec<f64> = ap
            .m_spectrum
            .numeric
            .iter()
            .flat_map(|p| std::iter::repeat_n(p.value, p.multiplicity))
            .collect();
        assert!((flat[0] - 0.0).abs() < 1e-10);
        assert!((flat[1] - 3.0).abs() < 1e-10); // alpha + 2 - d = 3
    }
}
