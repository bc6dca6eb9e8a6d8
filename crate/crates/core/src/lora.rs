//! Low-rank additive adapter: `h = x W0 + s · x W_A W_B`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adapter::{check_rank, expect_shape, MergedLayer, ParamGrads, WeightAdapter};
use crate::error::{HutError, Result};
use crate::tensor::{gaussian_with, DenseMatrix};

pub const LORA_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapterState {
    w0: DenseMatrix,
    pub wa: DenseMatrix,
    pub wb: DenseMatrix,
    scale: f64,
    rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoraGradients {
    pub d_wa: DenseMatrix,
    pub d_wb: DenseMatrix,
}

fn check_scale(scale: f64) -> Result<()> {
    if !(scale >= 1.0 && scale.is_finite()) {
        return Err(HutError::InvalidArgument(format!(
            "LoRA scale must be finite and >= 1, got {scale}"
        )));
    }
    Ok(())
}

impl LoraAdapterState {
    /// `W_A ~ N(0, 0.02)`, `W_B = 0`, so the update is zero at step 0.
    pub fn init(w0: DenseMatrix, rank: usize, scale: f64, seed: u64) -> Result<Self> {
        check_rank(&w0, rank, None)?;
        check_scale(scale)?;
        let (d, k) = w0.shape();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let wa = gaussian_with(d, rank, 0.0, LORA_INIT_STD, &mut rng)?;
        Ok(LoraAdapterState {
            w0,
            wa,
            wb: DenseMatrix::zeros(rank, k),
            scale,
            rank,
        })
    }

    pub fn from_parts(
        w0: DenseMatrix,
        wa: DenseMatrix,
        wb: DenseMatrix,
        scale: f64,
    ) -> Result<Self> {
        let (d, k) = w0.shape();
        let rank = wa.cols();
        check_rank(&w0, rank, None)?;
        check_scale(scale)?;
        expect_shape(&wa, (d, rank), "lora W_A")?;
        expect_shape(&wb, (rank, k), "lora W_B")?;
        Ok(LoraAdapterState {
            w0,
            wa,
            wb,
            scale,
            rank,
        })
    }

    pub fn w0(&self) -> &DenseMatrix {
        &self.w0
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Evaluated as `x×W0 + s·((x×W_A)×W_B)`.
    pub fn forward(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_input(x)?;
        let base = x.matmul(&self.w0)?;
        let update = x.matmul(&self.wa)?.matmul(&self.wb)?.scale(self.scale);
        base.add(&update)
    }

    /// `W0 + s·W_A×W_B`, costing `(2r + 1)·d·k`.
    pub fn merged_weight(&self) -> DenseMatrix {
        let delta = self
            .wa
            .matmul(&self.wb)
            .expect("state shapes are consistent")
            .scale(self.scale);
        self.w0.add(&delta).expect("same shape")
    }

    pub fn merge(&self) -> MergedLayer {
        MergedLayer {
            weight: self.merged_weight(),
            bias: DenseMatrix::zeros(1, self.w0.cols()),
        }
    }

    pub fn backward(&self, x: &DenseMatrix, upstream: &DenseMatrix) -> Result<LoraGradients> {
        self.backward_with_input(x, upstream).map(|(g, _)| g)
    }

    pub fn backward_with_input(
        &self,
        x: &DenseMatrix,
        upstream: &DenseMatrix,
    ) -> Result<(LoraGradients, DenseMatrix)> {
        self.check_input(x)?;
        expect_shape(upstream, (x.rows(), self.w0.cols()), "lora backward upstream")?;
        let xa = x.matmul(&self.wa)?;
        let g_wbt = upstream.matmul(&self.wb.transpose())?;
        let d_wb = xa.transpose().matmul(upstream)?.scale(self.scale);
        let d_wa = x.transpose().matmul(&g_wbt)?.scale(self.scale);
        let d_x = upstream
            .matmul(&self.w0.transpose())?
            .add(&g_wbt.matmul(&self.wa.transpose())?.scale(self.scale))?;
        Ok((LoraGradients { d_wa, d_wb }, d_x))
    }

    fn check_input(&self, x: &DenseMatrix) -> Result<()> {
        if x.cols() != self.w0.rows() {
            return Err(HutError::Shape {
                op: "lora forward",
                left: x.shape(),
                right: self.w0.shape(),
            });
        }
        Ok(())
    }
}

impl WeightAdapter for LoraAdapterState {
    fn base_weight(&self) -> &DenseMatrix {
        &self.w0
    }

    fn rank(&self) -> usize {
        self.rank
    }

    fn forward(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        LoraAdapterState::forward(self, x)
    }

    fn backward(
        &self,
        x: &DenseMatrix,
        upstream: &DenseMatrix,
    ) -> Result<(ParamGrads, DenseMatrix)> {
        let (g, dx) = self.backward_with_input(x, upstream)?;
        Ok((ParamGrads(vec![g.d_wa, g.d_wb]), dx))
    }

    fn merge(&self) -> Result<MergedLayer> {
        Ok(LoraAdapterState::merge(self))
    }

    fn params(&self) -> Vec<(&'static str, &DenseMatrix)> {
        vec![("WA", &self.wa), ("WB", &self.wb)]
    }

    fn params_mut(&mut self) -> Vec<&mut DenseMatrix> {
        vec![&mut self.wa, &mut self.wb]
    }
}
