//! Worst-group test accuracy of ERM, JTT and the two-stage method on the
//! benchmark, over three seeds.
//!
//! cargo run --release --example bam_vs_erm

use bamlab::{run_experiment, ExperimentConfig, SplitDataset};

fn main() -> bamlab::Result<()> {
    let seeds = [0u64, 1, 2];
    let mut rows = vec![("erm", vec![]), ("jtt", vec![]), ("bam", vec![])];
    for &seed in &seeds {
        let cfg = ExperimentConfig::default().with_override("seed", &seed.to_string())?;
        let split = SplitDataset::generate(&cfg.dataset)?;
        for (name, accs) in rows.iter_mut() {
            let mut c = cfg.clone();
            c.run = match *name {
                "erm" => cfg.run.erm(),
                "jtt" => cfg.run.jtt(),
                _ => cfg.run.clone(),
            };
            let s = run_experiment(&c, &split)?;
            accs.push(s.test_worst_group_accuracy().unwrap());
            println!(
                "seed {seed} {name}: worst-group {:.3} average {:.3} (epoch {}, |E| = {})",
                accs.last().unwrap(),
                s.test_average_accuracy(),
                s.selected_epoch,
                s.error_set_size
            );
        }
    }
    println!();
    for (name, accs) in &rows {
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        println!("{name}: mean worst-group test accuracy {:.1}", 100.0 * mean);
    }
    Ok(())
}
