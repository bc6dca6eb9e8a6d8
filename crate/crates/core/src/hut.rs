//! Hadamard updated transformation.
//!
//! The adapted weight is a rank-1 elementwise modulation of the frozen base
//! weight,
//!
//! ```text
//! W_new = (m_A m_B) ⊙ W0,   m_A = row_mean(M_A) (d×1),  m_B = col_mean(M_B) (1×k)
//! h     = γ ⊙ (x × W_new) + β
//! ```
//!
//! which is the same as multiplying `W0` by the all-ones-expanded
//! `(M_A × 1_A)/r` and `(1_B × M_B)/r`. The ones matrices are never built.
//! For inference the whole transformation folds into a dense weight
//! `γ ⊙ (m_A m_B) ⊙ W0` and bias `β`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adapter::{check_rank, expect_shape, MergedLayer, ParamGrads, WeightAdapter};
use crate::error::{HutError, Result};
use crate::tensor::{gaussian_with, DenseMatrix};

/// Frozen base weight plus the trainable HUT parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct HutAdapterState {
    w0: DenseMatrix,
    pub ma: DenseMatrix,
    pub mb: DenseMatrix,
    pub gamma: DenseMatrix,
    pub beta: DenseMatrix,
    rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HutGradients {
    pub d_ma: DenseMatrix,
    pub d_mb: DenseMatrix,
    pub d_gamma: DenseMatrix,
    pub d_beta: DenseMatrix,
}

impl HutGradients {
    pub fn into_vec(self) -> Vec<DenseMatrix> {
        vec![self.d_ma, self.d_mb, self.d_gamma, self.d_beta]
    }
}

impl HutAdapterState {
    /// `M_A`, `M_B` start at all-ones plus `N(0, noise_std)` noise, `γ = 1`,
    /// `β = 0`. With `noise_std = 0` the adapted layer reproduces `W0`
    /// exactly.
    pub fn init(w0: DenseMatrix, rank: usize, noise_std: f64, seed: u64) -> Result<Self> {
        check_rank(&w0, rank, None)?;
        let (d, k) = w0.shape();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ma = gaussian_with(d, rank, 1.0, noise_std, &mut rng)?;
        let mb = gaussian_with(rank, k, 1.0, noise_std, &mut rng)?;
        Ok(HutAdapterState {
            w0,
            ma,
            mb,
            gamma: DenseMatrix::ones(1, k),
            beta: DenseMatrix::zeros(1, k),
            rank,
        })
    }

    pub fn from_parts(
        w0: DenseMatrix,
        ma: DenseMatrix,
        mb: DenseMatrix,
        gamma: DenseMatrix,
        beta: DenseMatrix,
    ) -> Result<Self> {
        let (d, k) = w0.shape();
        let rank = ma.cols();
        check_rank(&w0, rank, None)?;
        expect_shape(&ma, (d, rank), "hut M_A")?;
        expect_shape(&mb, (rank, k), "hut M_B")?;
        expect_shape(&gamma, (1, k), "hut gamma")?;
        expect_shape(&beta, (1, k), "hut beta")?;
        Ok(HutAdapterState {
            w0,
            ma,
            mb,
            gamma,
            beta,
            rank,
        })
    }

    pub fn w0(&self) -> &DenseMatrix {
        &self.w0
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// `(m_A, m_B)`.
    pub fn means(&self) -> (DenseMatrix, DenseMatrix) {
        (self.ma.row_mean(), self.mb.col_mean())
    }

    pub fn compute_w_new(&self) -> DenseMatrix {
        let (a, b) = self.means();
        let modulation = DenseMatrix::outer(&a, &b).expect("column times row");
        modulation.hadamard(&self.w0).expect("state shapes are consistent")
    }

    /// `h = γ ⊙ (x × W_new) + β`.
    pub fn forward(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_input(x)?;
        x.matmul(&self.compute_w_new())?
            .scale_shift(&self.gamma, &self.beta)
    }

    /// The folded weight `γ ⊙ (m_A m_B) ⊙ W0`, with `γ` broadcast over rows.
    ///
    /// Cost: `rd + rk` for the two means, `dk` each for the outer product,
    /// the product with `W0`, the row broadcast of `γ` and the product with
    /// it; `4dk + rd + rk` total.
    pub fn reduced_weight(&self) -> DenseMatrix {
        let (d, _) = self.w0.shape();
        let (a, b) = self.means();
        let modulated = DenseMatrix::outer(&a, &b)
            .and_then(|m| m.hadamard(&self.w0))
            .expect("state shapes are consistent");
        let gamma = self.gamma.broadcast_rows(d).expect("gamma is 1xk");
        gamma.hadamard(&modulated).expect("same shape")
    }

    /// `h = x × (γ ⊙ m_A m_B ⊙ W0) + β`.
    pub fn forward_reduced(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_input(x)?;
        x.matmul(&self.reduced_weight())?.add_row(&self.beta)
    }

    pub fn merge(&self) -> MergedLayer {
        MergedLayer {
            weight: self.reduced_weight(),
            bias: self.beta.clone(),
        }
    }

    /// Exact gradients of `L = Σ upstream ⊙ h` with respect to the trainable
    /// tensors.
    pub fn backward(&self, x: &DenseMatrix, upstream: &DenseMatrix) -> Result<HutGradients> {
        self.backward_with_input(x, upstream).map(|(g, _)| g)
    }

    /// As [`backward`](Self::backward), also returning `∂L/∂x`.
    pub fn backward_with_input(
        &self,
        x: &DenseMatrix,
        upstream: &DenseMatrix,
    ) -> Result<(HutGradients, DenseMatrix)> {
        self.check_input(x)?;
        let (d, k) = self.w0.shape();
        expect_shape(upstream, (x.rows(), k), "hut backward upstream")?;
        let r = self.rank as f64;

        let (a, b) = self.means();
        let w_new = DenseMatrix::outer(&a, &b)?.hadamard(&self.w0)?;
        let y = x.matmul(&w_new)?;

        let d_beta = upstream.col_sum();
        let d_gamma = upstream.hadamard(&y)?.col_sum();
        let d_y = upstream.mul_row(&self.gamma)?;
        let d_w_new = x.transpose().matmul(&d_y)?;
        let through_w0 = d_w_new.hadamard(&self.w0)?;
        // da: d×1, db: 1×k
        let da = through_w0.matmul(&b.transpose())?;
        let db = a.transpose().matmul(&through_w0)?;

        let d_ma = DenseMatrix::from_fn(d, self.rank, |i, _| da.get(i, 0) / r);
        let d_mb = DenseMatrix::from_fn(self.rank, k, |_, j| db.get(0, j) / r);
        let d_x = d_y.matmul(&w_new.transpose())?;
        Ok((
            HutGradients {
                d_ma,
                d_mb,
                d_gamma,
                d_beta,
            },
            d_x,
        ))
    }

    fn check_input(&self, x: &DenseMatrix) -> Result<()> {
        if x.cols() != self.w0.rows() {
            return Err(HutError::Shape {
                op: "hut forward",
                left: x.shape(),
                right: self.w0.shape(),
            });
        }
        Ok(())
    }
}

impl WeightAdapter for HutAdapterState {
    fn base_weight(&self) -> &DenseMatrix {
        &self.w0
    }

    fn rank(&self) -> usize {
        self.rank
    }

    fn forward(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        HutAdapterState::forward(self, x)
    }

    fn backward(
        &self,
        x: &DenseMatrix,
        upstream: &DenseMatrix,
    ) -> Result<(ParamGrads, DenseMatrix)> {
        let (g, dx) = self.backward_with_input(x, upstream)?;
        Ok((ParamGrads(g.into_vec()), dx))
    }

    fn merge(&self) -> Result<MergedLayer> {
        Ok(HutAdapterState::merge(self))
    }

    fn params(&self) -> Vec<(&'static str, &DenseMatrix)> {
        vec![
            ("MA", &self.ma),
            ("MB", &self.mb),
            ("gamma", &self.gamma),
            ("beta", &self.beta),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut DenseMatrix> {
        vec![&mut self.ma, &mut self.mb, &mut self.gamma, &mut self.beta]
    }
}
