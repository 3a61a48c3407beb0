//! Generates a Swiss roll and writes features and factors as CSV.
//!
//! cargo run --example swiss_roll -- [n] [seed] [out_dir]

use std::path::PathBuf;

use grae::datasets::make_swiss_roll;
use grae::io::save_matrix_csv;

fn main() -> grae::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n = args.first().and_then(|s| s.parse().ok()).unwrap_or(1000);
    let seed = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let out = PathBuf::from(args.get(2).map(String::as_str).unwrap_or("swiss_roll_out"));
    std::fs::create_dir_all(&out)?;

    let ds = make_swiss_roll(n, seed)?;
    save_matrix_csv(&out.join("features.csv"), &ds.features, Some(&["x", "y", "z"]))?;
    save_matrix_csv(&out.join("factors.csv"), &ds.factors, Some(&["u", "h"]))?;
    println!("{} points, {} features -> {}", ds.len(), ds.features.cols(), out.display());
    Ok(())
}
