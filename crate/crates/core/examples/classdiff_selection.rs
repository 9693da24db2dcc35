//! Model selection without group labels. The validation split has its
//! attribute annotations removed and the epoch is chosen by the smallest
//! difference between per-class accuracies. The group-labelled trajectory
//! is printed alongside for comparison.
//!
//! cargo run --release --example classdiff_selection -- [seed]

use bamlab::config::Criterion;
use bamlab::metrics::spearman;
use bamlab::pipeline::SplitKind;
use bamlab::{run_experiment, ExperimentConfig, SplitDataset};

fn main() -> bamlab::Result<()> {
    let seed = std::env::args().nth(1).unwrap_or_else(|| "0".into());
    let cfg = ExperimentConfig::default().with_override("seed", &seed)?;
    let split = SplitDataset::generate(&cfg.dataset)?;

    let oracle = run_experiment(&cfg, &split)?;

    let mut blind_split = split.clone();
    blind_split.withhold_validation_groups();
    let mut blind_cfg = cfg.clone();
    blind_cfg.run.criterion = Criterion::ClassDiff;
    let blind = run_experiment(&blind_cfg, &blind_split)?;

    println!("epoch  classdiff  wg-val  wg-test");
    let mut cd = Vec::new();
    let mut wv = Vec::new();
    for r in oracle.records(SplitKind::Validation).filter(|r| r.epoch > 0) {
        let test = oracle.record(SplitKind::Test, r.epoch).unwrap();
        let w = r.worst_group_accuracy.unwrap();
        println!(
            "{:>5}  {:.4}     {:.3}   {:.3}",
            r.epoch,
            r.class_diff,
            w,
            test.worst_group_accuracy.unwrap()
        );
        cd.push(r.class_diff);
        wv.push(w);
    }
    if let Some(rho) = spearman(&cd, &wv)? {
        println!("spearman(classdiff, wg-val) = {rho:.2}");
    }
    println!(
        "worst-group-val picks epoch {} -> test {:.3}",
        oracle.selected_epoch,
        oracle.test_worst_group_accuracy().unwrap()
    );
    println!(
        "class-diff picks epoch {} -> test {:.3}{}",
        blind.selected_epoch,
        blind.test_worst_group_accuracy().unwrap(),
        if blind.selection_fallback { " (fallback)" } else { "" }
    );
    Ok(())
}
