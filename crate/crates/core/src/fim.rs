//! Exact Fisher information of the Gaussian family in `(x, A)` coordinates.
//!
//! The Fisher matrix is block diagonal with `d + 1` blocks. Block 0 is the
//! precision `C⁻¹`. Block `k ≥ 1` is `D_k + a_{k,k}⁻² e₁e₁ᵀ`, where `D_k` is
//! the trailing `(d+1−k)`-square submatrix of `C⁻¹`.
//!
//! [`FimInverseStream`] produces the inverted blocks from `k = d` down to
//! `k = 0` with a rank-one bordering recurrence: each step grows the running
//! inverse `D_{k+1}⁻¹` by one row and column, so no block is ever inverted
//! directly and only a single `d × d` work matrix is kept alive between
//! steps.

use nalgebra::{DMatrix, DVector};

use crate::distribution::{check_diagonal, ThetaLayout};
use crate::error::{EnesError, Result};

/// `C⁻¹ = A⁻¹A⁻ᵀ`, symmetrized.
pub fn precision_matrix(chol: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_diagonal(chol)?;
    let d = chol.nrows();
    let inv = chol
        .solve_upper_triangular(&DMatrix::identity(d, d))
        .expect("factor diagonal is positive");
    let mut cinv = &inv * inv.transpose();
    symmetrize(&mut cinv);
    Ok(cinv)
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Dense `d_s × d_s` Fisher matrix assembled entry by entry.
///
/// This is the O(d⁴) reference form; it exists to check the recurrence and
/// should not be used inside the optimizer.
pub fn assemble_fim_dense(chol: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let cinv = precision_matrix(chol)?;
    let d = chol.nrows();
    let layout = ThetaLayout::new(d);
    let ds = layout.len();
    let mut fim = DMatrix::zeros(ds, ds);
    fim.view_mut((0, 0), (d, d)).copy_from(&cinv);
    for m in d..ds {
        let (im, jm) = layout.entry_at(m).expect("factor entry");
        for n in d..ds {
            let (in_, jn) = layout.entry_at(n).expect("factor entry");
            let mut value = 0.0;
            if im == in_ {
                value += cinv[(jn, jm)];
            }
            if im == in_ && im == jm && jm == jn {
                value += chol[(im, in_)].powi(-2);
            }
            fim[(m, n)] = value;
        }
    }
    Ok(fim)
}

/// The inverted diagonal blocks of the Fisher matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FimInverseBlocks {
    /// Inverse of block 0, i.e. the covariance `C = AᵀA`.
    pub block0: DMatrix<f64>,
    /// `blocks[k - 1]` is the inverse of block `k`, of size `d + 1 − k`.
    pub blocks: Vec<DMatrix<f64>>,
}

impl FimInverseBlocks {
    pub fn block(&self, k: usize) -> &DMatrix<f64> {
        if k == 0 {
            &self.block0
        } else {
            &self.blocks[k - 1]
        }
    }

    /// `F⁻¹ θ` for a flat vector laid out per [`ThetaLayout`].
    pub fn apply(&self, theta: &DVector<f64>) -> DVector<f64> {
        let layout = ThetaLayout::new(self.block0.nrows());
        let mut out = DVector::zeros(layout.len());
        for k in 0..layout.groups() {
            let r = layout.group_range(k);
            let part = self.block(k) * theta.rows(r.start, r.len());
            out.rows_mut(r.start, r.len()).copy_from(&part);
        }
        out
    }
}

/// Collects every inverted block. Retains `O(d³)` storage; the optimizer
/// uses [`FimInverseStream`] directly instead.
pub fn fim_inverse_blocks(chol: &DMatrix<f64>, cinv: &DMatrix<f64>) -> Result<FimInverseBlocks> {
    let d = chol.nrows();
    let mut blocks = vec![DMatrix::zeros(0, 0); d];
    let mut block0 = None;
    for item in FimInverseStream::new(chol, cinv)? {
        let (k, block) = item?;
        if k == 0 {
            block0 = Some(block);
        } else {
            blocks[k - 1] = block;
        }
    }
    Ok(FimInverseBlocks {
        block0: block0.expect("stream ends with block 0"),
        blocks,
    })
}

/// Where a bordering step takes `u = D_{k+1}⁻¹v` and the Schur complements
/// `w − vᵀu`, `w_F − vᵀu` from.
#[derive(Debug, Clone, Copy)]
enum Source<'a> {
    /// Formed from the precision matrix as written.
    Precision(&'a DMatrix<f64>),
    /// Read off the factor: `u = −a_pp⁻¹ A_{p,k:d}ᵀ`, `w − vᵀu = a_pp⁻²` and
    /// `w_F − vᵀu = 2a_pp⁻²`.
    Factor,
}

/// Yields `(k, F_k⁻¹)` for `k = d, d−1, …, 1, 0`.
///
/// Between items the only state is the `d × d` work matrix whose trailing
/// square holds the current `D_k⁻¹`. Each yielded block is owned by the
/// caller and can be dropped as soon as it has been used.
///
/// [`FimInverseStream::new`] forms every intermediate from `C⁻¹`; the
/// differences `w − vᵀu` lose all precision once `C` is badly conditioned.
/// [`FimInverseStream::from_factor`] runs the same bordering steps with the
/// intermediates read off `A` and stays accurate there.
#[derive(Debug)]
pub struct FimInverseStream<'a> {
    chol: &'a DMatrix<f64>,
    source: Source<'a>,
    work: DMatrix<f64>,
    next: Option<usize>,
    multiplications: u64,
}

impl<'a> FimInverseStream<'a> {
    pub fn new(chol: &'a DMatrix<f64>, cinv: &'a DMatrix<f64>) -> Result<Self> {
        let d = chol.nrows();
        if cinv.nrows() != d || cinv.ncols() != d {
            return Err(EnesError::DimensionMismatch {
                expected: d,
                actual: cinv.nrows(),
            });
        }
        Self::with_source(chol, Source::Precision(cinv))
    }

    pub fn from_factor(chol: &'a DMatrix<f64>) -> Result<Self> {
        Self::with_source(chol, Source::Factor)
    }

    fn with_source(chol: &'a DMatrix<f64>, source: Source<'a>) -> Result<Self> {
        check_diagonal(chol)?;
        let d = chol.nrows();
        Ok(Self {
            chol,
            source,
            work: DMatrix::zeros(d, d),
            next: Some(d),
            multiplications: 0,
        })
    }

    /// Floating-point multiplications (and divisions) performed so far.
    pub fn multiplications(&self) -> u64 {
        self.multiplications
    }

    fn last_block(&mut self) -> Result<DMatrix<f64>> {
        let d = self.chol.nrows();
        let p = d - 1;
        let a_inv2 = self.chol[(p, p)].powi(-2);
        let w = match self.source {
            Source::Precision(cinv) => cinv[(p, p)],
            Source::Factor => a_inv2,
        };
        let w_f = w + a_inv2;
        self.multiplications += 4;
        if !(w > 0.0 && w_f > 0.0 && w_f.is_finite()) {
            return Err(EnesError::NumericalBreakdown { k: d });
        }
        self.work[(p, p)] = w.recip();
        Ok(DMatrix::from_element(1, 1, w_f.recip()))
    }

    /// One bordering step: `D_{k+1}⁻¹ → (F_k⁻¹, D_k⁻¹)`, `1 ≤ k < d`.
    fn border(&mut self, k: usize) -> Result<DMatrix<f64>> {
        let d = self.chol.nrows();
        let p = k - 1;
        let tail = d - k;

        let (u, q, q_f, c, c_f) = match self.source {
            Source::Precision(cinv) => {
                let v = cinv.view_range(k..d, p);
                let w = cinv[(p, p)];
                let u: DVector<f64> = self.work.view((k, k), (tail, tail)) * v;
                let s = v.dot(&u);
                let w_f = w + self.chol[(p, p)].powi(-2);
                self.multiplications += (tail * tail + tail + 11) as u64;
                if !(w - s > 0.0) || !(w_f - s > 0.0) {
                    return Err(EnesError::NumericalBreakdown { k });
                }
                let q = (w - s).recip();
                let q_f = (w_f - s).recip();
                (u, q, q_f, -(1.0 + q * s) / w, -(1.0 + q_f * s) / w_f)
            }
            Source::Factor => {
                let a = self.chol[(p, p)];
                let u = self.chol.view_range(p, k..d).transpose() / -a;
                let q = a * a;
                self.multiplications += (tail + 2) as u64;
                if !(q.is_finite() && u.iter().all(|x| x.is_finite())) {
                    return Err(EnesError::NumericalBreakdown { k });
                }
                (u, q, 0.5 * q, -q, -0.5 * q)
            }
        };

        let mut f = DMatrix::zeros(tail + 1, tail + 1);
        f[(0, 0)] = q_f;
        for i in 0..tail {
            let edge = c_f * u[i];
            f[(0, i + 1)] = edge;
            f[(i + 1, 0)] = edge;
            let scaled = q_f * u[i];
            for j in 0..tail {
                f[(i + 1, j + 1)] = self.work[(k + i, k + j)] + scaled * u[j];
            }
        }
        self.multiplications += (tail * tail + 2 * tail) as u64;

        // D_k⁻¹ overwrites D_{k+1}⁻¹ in place, growing by one row and column.
        self.work[(p, p)] = q;
        for i in 0..tail {
            let edge = c * u[i];
            self.work[(p, k + i)] = edge;
            self.work[(k + i, p)] = edge;
            let scaled = q * u[i];
            for j in 0..tail {
                self.work[(k + i, k + j)] += scaled * u[j];
            }
        }
        self.multiplications += (tail * tail + 2 * tail) as u64;
        Ok(f)
    }

    /// `AᵀA` using only the upper triangle of `A`.
    fn covariance_block(&mut self) -> DMatrix<f64> {
        let d = self.chol.nrows();
        let mut cov = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in i..d {
                let mut acc = 0.0;
                for l in 0..=i {
                    acc += self.chol[(l, i)] * self.chol[(l, j)];
                }
                self.multiplications += (i + 1) as u64;
                cov[(i, j)] = acc;
                cov[(j, i)] = acc;
            }
        }
        cov
    }
}

impl Iterator for FimInverseStream<'_> {
    type Item = Result<(usize, DMatrix<f64>)>;

    fn next(&mut self) -> Option<Self::Item> {
        let k = self.next?;
        let d = self.chol.nrows();
        let block = if k == 0 {
            Ok(self.covariance_block())
        } else if k == d {
            self.last_block()
        } else {
            self.border(k)
        };
        self.next = match (&block, k) {
            (Err(_), _) | (_, 0) => None,
            _ => Some(k - 1),
        };
        Some(block.map(|b| (k, b)))
    }
}
