//! Measured vs closed-form forward FLOPs for HUT, LoRA and the merged layer.
//!
//! ```bash
//! cargo run --release -p hut --example flops_table > flops.csv
//! ```

use hut::cli::flops_rows;
use hut::flops::write_flops_csv;

fn main() -> hut::Result<()> {
    let rows = flops_rows(0, &[1, 16], &[4, 16, 64], None, &[1, 2, 4, 8])?;
    write_flops_csv(std::io::stdout().lock(), &rows).expect("stdout");
    let mismatches = rows.iter().filter(|r| !r.exact()).count();
    eprintln!("{} rows, {mismatches} mismatches", rows.len());
    Ok(())
}
