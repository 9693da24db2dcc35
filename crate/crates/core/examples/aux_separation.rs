//! Runs Stage 1 on the benchmark and shows how the auxiliary variables of
//! minority-group examples grow larger than those of the majority.
//!
//! cargo run --release --example aux_separation -- [seed] [aux_bank.csv]

use bamlab::auxvar::separation_stats;
use bamlab::pipeline::{build_error_set, stage1_for};
use bamlab::{ExperimentConfig, SplitDataset};

fn main() -> bamlab::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));
    let dump = args.next();

    let cfg = ExperimentConfig::default().with_override("seed", &seed.to_string())?;
    let split = SplitDataset::generate(&cfg.dataset)?;
    let train = split.train_data()?;
    let (biased, bank, losses) = stage1_for(&cfg.run, &train)?;
    let bank = bank.expect("stage1_epochs > 0");
    println!("stage 1 losses: {losses:.4?}");

    let groups: Vec<usize> = split.train.iter().map(|e| e.group().unwrap()).collect();
    let stats = separation_stats(&bank, train.labels(), &groups, cfg.dataset.num_groups())?;
    println!("group  count  b[y]     b[other]  |b|");
    for g in &stats.groups {
        println!(
            "{:>5}  {:>5}  {:+.4}  {:+.4}   {:.4}",
            g.group, g.count, g.mean_true_logit, g.mean_other_logit, g.mean_norm
        );
    }

    let errors = build_error_set(&biased, &train)?;
    let mut per_group = vec![0; cfg.dataset.num_groups()];
    for &i in errors.indices() {
        per_group[groups[i]] += 1;
    }
    println!("error set: {} examples, per group {per_group:?}", errors.len());

    if let Some(path) = dump {
        let g: Vec<Option<usize>> = groups.iter().map(|&g| Some(g)).collect();
        bank.write_csv(std::path::Path::new(&path), &g)?;
        println!("wrote {path}");
    }
    Ok(())
}
