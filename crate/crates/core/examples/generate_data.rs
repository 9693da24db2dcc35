//! Builds the spurious-correlation benchmark, prints its group layout and
//! writes the three splits as CSV.
//!
//! cargo run --release --example generate_data -- [out_dir]

use bamlab::data::{save_csv, DatasetSpec, SplitDataset};

fn main() -> bamlab::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "bench_data".into());
    let spec = DatasetSpec::spurious_benchmark(10_000, 0.1, 0);
    let split = SplitDataset::generate(&spec)?;

    println!("features: {} core + {} spurious", spec.core_dim, spec.spurious_dim);
    println!("group counts (y,a): {:?}", spec.group_counts());
    for (name, part) in [("train", &split.train), ("validation", &split.validation), ("test", &split.test)] {
        let mut counts = vec![0; spec.num_groups()];
        for e in part.iter() {
            counts[e.group().unwrap()] += 1;
        }
        println!("{name:>10}: {} examples, per group {counts:?}", part.len());
    }
    for w in &split.warnings {
        println!("warning: {w}");
    }

    save_csv(&split, std::path::Path::new(&out))?;
    println!("wrote {out}/");
    Ok(())
}
