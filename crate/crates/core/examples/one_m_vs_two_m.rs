//! Continue the bias-amplified model in Stage 2, or start a fresh one? Both
//! variants see the same error set for each number of Stage-1 epochs.
//!
//! cargo run --release --example one_m_vs_two_m

use bamlab::config::Stage2Mode;
use bamlab::pipeline::{build_error_set, stage1_for, stage2_from, PreparedData, SplitKind};
use bamlab::{ExperimentConfig, SplitDataset};

fn main() -> bamlab::Result<()> {
    let seeds = [0u64, 1, 2];
    let splits: Vec<(ExperimentConfig, SplitDataset)> = seeds
        .iter()
        .map(|s| {
            let cfg = ExperimentConfig::default().with_override("seed", &s.to_string())?;
            let split = SplitDataset::generate(&cfg.dataset)?;
            Ok((cfg, split))
        })
        .collect::<bamlab::Result<_>>()?;

    println!("T   one_m   two_m");
    for t in [2usize, 4, 8] {
        let mut sums = [0.0; 2];
        for (cfg, split) in &splits {
            let data = PreparedData::new(split)?;
            let mut run = cfg.run.clone();
            run.stage1_epochs = t;
            let (biased, _, _) = stage1_for(&run, &data.train)?;
            let errors = build_error_set(&biased, &data.train)?;
            for (i, mode) in [Stage2Mode::OneM, Stage2Mode::TwoM].into_iter().enumerate() {
                run.mode = mode;
                let (out, sel) = stage2_from(&biased, &errors, &run, &data)?;
                let test = out
                    .records
                    .iter()
                    .find(|r| r.split == SplitKind::Test && r.epoch == sel.epoch)
                    .unwrap();
                sums[i] += test.worst_group_accuracy.unwrap();
            }
        }
        let n = splits.len() as f64;
        println!("{t:<3} {:.1}    {:.1}", 100.0 * sums[0] / n, 100.0 * sums[1] / n);
    }
    Ok(())
}
