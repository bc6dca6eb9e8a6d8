//! Closed-form forward-pass FLOP counts for HUT and LoRA, checked against the
//! instrumented counter in [`crate::tensor`].
//!
//! Counting convention (shared with the counter): a multiply or add is one
//! operation, a length-`r` dot product is `2r - 1`, a mean over `r` values
//! is `r`, materialising a broadcast is one operation per entry.
//!
//! HUT, evaluated through its folded weight `W' = γ ⊙ (m_A m_B) ⊙ W0`:
//!
//! | step                      | cost        |
//! |---------------------------|-------------|
//! | `m_A`, `m_B` means        | `rd + rk`   |
//! | outer product `m_A m_B`   | `dk`        |
//! | `⊙ W0`                    | `dk`        |
//! | broadcast `γ` over rows   | `dk`        |
//! | `γ ⊙`                     | `dk`        |
//! | `x × W'`                  | `(2d-1)Nk`  |
//!
//! LoRA, evaluated through `W' = W0 + s·W_A W_B`: `(2r-1)dk` for the
//! product, `dk` for the scale, `dk` for the add, then `(2d-1)Nk`.
//!
//! The `+ β` (or bias) add costs `Nk` and is reported separately; it is not
//! part of either closed form.

use std::fmt;
use std::io::Write;

use crate::adapter::{Adapter, MergedLayer};
use crate::error::{HutError, Result};
use crate::hut::HutAdapterState;
use crate::lora::LoraAdapterState;
use crate::tensor::{DenseMatrix, FlopScope};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FlopsMethod {
    Hut,
    Lora,
    MergedDense,
}

impl fmt::Display for FlopsMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FlopsMethod::Hut => "HUT",
            FlopsMethod::Lora => "LoRA",
            FlopsMethod::MergedDense => "MergedDense",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlopsReport {
    pub method: FlopsMethod,
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub r: usize,
    pub theoretical: u64,
    pub measured: u64,
    /// Cost of the trailing bias / `β` add, excluded from both counts above.
    pub bias_add: u64,
}

impl FlopsReport {
    pub fn exact(&self) -> bool {
        self.theoretical == self.measured
    }
}

fn check_dims(n: usize, d: usize, k: usize, r: usize) -> Result<()> {
    if n == 0 || d == 0 || k == 0 {
        return Err(HutError::InvalidArgument(format!(
            "N, d, k must be positive, got N={n} d={d} k={k}"
        )));
    }
    if r == 0 {
        return Err(HutError::InvalidArgument("rank must be >= 1".into()));
    }
    Ok(())
}

/// `(2d - 1)Nk + 4dk + rd + rk`.
pub fn flops_hut(n: usize, d: usize, k: usize, r: usize) -> Result<u64> {
    check_dims(n, d, k, r)?;
    let (n, d, k, r) = (n as u64, d as u64, k as u64, r as u64);
    Ok((2 * d - 1) * n * k + 4 * d * k + r * d + r * k)
}

/// `(2d - 1)Nk + (2r + 1)dk`.
pub fn flops_lora(n: usize, d: usize, k: usize, r: usize) -> Result<u64> {
    check_dims(n, d, k, r)?;
    let (n, d, k, r) = (n as u64, d as u64, k as u64, r as u64);
    Ok((2 * d - 1) * n * k + (2 * r + 1) * d * k)
}

/// Cost of LoRA evaluated on activations, `x W0 + s·((x W_A) W_B)`, which is
/// what the training forward does. Not the closed form above.
pub fn flops_lora_activation_path(n: usize, d: usize, k: usize, r: usize) -> Result<u64> {
    check_dims(n, d, k, r)?;
    let (n, d, k, r) = (n as u64, d as u64, k as u64, r as u64);
    Ok((2 * d - 1) * n * k + (2 * d - 1) * n * r + (2 * r - 1) * n * k + 2 * n * k)
}

/// `(2d - 1)Nk + Nk`: a plain dense layer with bias.
pub fn flops_merged(n: usize, d: usize, k: usize) -> Result<u64> {
    check_dims(n, d, k, 1)?;
    let (n, d, k) = (n as u64, d as u64, k as u64);
    Ok((2 * d - 1) * n * k + n * k)
}

/// `FLOPs_LoRA - FLOPs_HUT` for a square `d×d` weight:
/// `2rd² - 3d² - 2rd`, keeping the `2rd` term.
pub fn delta_flops(d: usize, r: usize) -> i128 {
    let (d, r) = (d as i128, r as i128);
    2 * r * d * d - 3 * d * d - 2 * r * d
}

fn measure_hut(state: &HutAdapterState, x: &DenseMatrix) -> Result<FlopsReport> {
    let (d, k) = state.w0().shape();
    if x.cols() != d {
        return Err(HutError::Shape {
            op: "measure_forward_flops",
            left: x.shape(),
            right: (d, k),
        });
    }
    let scope = FlopScope::begin()?;
    let y = x.matmul(&state.reduced_weight())?;
    let measured = scope.count();
    y.add_row(&state.beta)?;
    let bias_add = scope.count() - measured;
    Ok(FlopsReport {
        method: FlopsMethod::Hut,
        n: x.rows(),
        d,
        k,
        r: state.rank(),
        theoretical: flops_hut(x.rows(), d, k, state.rank())?,
        measured,
        bias_add,
    })
}

fn measure_lora(state: &LoraAdapterState, x: &DenseMatrix) -> Result<FlopsReport> {
    let (d, k) = state.w0().shape();
    if x.cols() != d {
        return Err(HutError::Shape {
            op: "measure_forward_flops",
            left: x.shape(),
            right: (d, k),
        });
    }
    let scope = FlopScope::begin()?;
    x.matmul(&state.merged_weight())?;
    let measured = scope.count();
    Ok(FlopsReport {
        method: FlopsMethod::Lora,
        n: x.rows(),
        d,
        k,
        r: state.rank(),
        theoretical: flops_lora(x.rows(), d, k, state.rank())?,
        measured,
        bias_add: 0,
    })
}

/// Runs one forward pass inside a fresh counting scope. Fails with
/// [`HutError::NestedScope`] if a scope is already open on this thread.
pub fn measure_forward_flops(adapter: &Adapter, x: &DenseMatrix) -> Result<FlopsReport> {
    match adapter {
        Adapter::Hut(s) => measure_hut(s, x),
        Adapter::Lora(s) => measure_lora(s, x),
    }
}

/// Measures a merged layer; the bias add is part of this count. `r` is only
/// carried through for reporting.
pub fn measure_merged_flops(layer: &MergedLayer, x: &DenseMatrix, r: usize) -> Result<FlopsReport> {
    let (d, k) = layer.weight.shape();
    let scope = FlopScope::begin()?;
    layer.forward(x)?;
    let measured = scope.count();
    Ok(FlopsReport {
        method: FlopsMethod::MergedDense,
        n: x.rows(),
        d,
        k,
        r,
        theoretical: flops_merged(x.rows(), d, k)?,
        measured,
        bias_add: 0,
    })
}

pub const FLOPS_CSV_HEADER: &str = "method,N,d,k,r,theoretical,measured";

pub fn write_flops_csv<W: Write>(mut out: W, reports: &[FlopsReport]) -> std::io::Result<()> {
    writeln!(out, "{FLOPS_CSV_HEADER}")?;
    for r in reports {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.method, r.n, r.d, r.k, r.r, r.theoretical, r.measured
        )?;
    }
    Ok(())
}
