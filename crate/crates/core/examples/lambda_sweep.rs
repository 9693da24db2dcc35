//! Sensitivity to the auxiliary coefficient. λ = 0 is the plain
//! misclassification-based error set; any positive λ amplifies the bias.
//!
//! cargo run --release --example lambda_sweep -- [lambda ...]

use bamlab::{run_experiment, ExperimentConfig, SplitDataset};

fn main() -> bamlab::Result<()> {
    let mut lambdas: Vec<String> = std::env::args().skip(1).collect();
    if lambdas.is_empty() {
        lambdas = ["0", "1", "5", "20", "50"].map(String::from).to_vec();
    }
    let data: Vec<(ExperimentConfig, SplitDataset)> = (0..3u64)
        .map(|s| {
            let cfg = ExperimentConfig::default().with_override("seed", &s.to_string())?;
            let split = SplitDataset::generate(&cfg.dataset)?;
            Ok((cfg, split))
        })
        .collect::<bamlab::Result<_>>()?;

    println!("lambda  worst-group  |E|");
    for l in &lambdas {
        let mut acc = 0.0;
        let mut e = 0;
        for (cfg, split) in &data {
            let s = run_experiment(&cfg.with_override("lambda", l)?, split)?;
            acc += s.test_worst_group_accuracy().unwrap();
            e += s.error_set_size;
        }
        let n = data.len();
        println!("{l:>6}  {:>11.1}  {}", 100.0 * acc / n as f64, e / n);
    }
    Ok(())
}
