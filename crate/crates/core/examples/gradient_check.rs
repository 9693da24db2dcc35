//! Compares the analytic Stage-1 gradients with central differences on a
//! tiny random network, for both the weights and the auxiliary bank.
//!
//! cargo run --example gradient_check

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bamlab::auxvar::{stage1_gradients, AuxBank};
use bamlab::data::TrainingData;
use bamlab::model::ModelParams;
use bamlab::numkit::Matrix;

fn main() -> bamlab::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (n, d, c) = (4, 3, 3);
    let model = ModelParams::init(&[d, 5, c], 9)?;
    let x = Matrix::from_vec(n, d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let data = TrainingData::new(x, vec![0, 2, 1, 2], c)?;
    let bank = AuxBank::from_values(
        Matrix::from_vec(n, c, (0..n * c).map(|_| rng.random_range(-0.5..0.5)).collect())?,
        2.0,
    )?;
    let batch = [0, 1, 3, 3];

    let g = stage1_gradients(&model, &bank, &batch, &data)?;
    let loss = |m: &ModelParams, b: &AuxBank| stage1_gradients(m, b, &batch, &data).map(|g| g.loss);
    let h = 1e-5;
    println!("loss {:.6}", g.loss);

    let mut worst: f64 = 0.0;
    for (p, grad) in g.theta.iter().enumerate() {
        for k in 0..grad.values().len() {
            let (mut plus, mut minus) = (model.clone(), model.clone());
            plus.params_mut()[p].values_mut()[k] += h;
            minus.params_mut()[p].values_mut()[k] -= h;
            let fd = (loss(&plus, &bank)? - loss(&minus, &bank)?) / (2.0 * h);
            worst = worst.max((fd - grad.values()[k]).abs());
        }
    }
    println!("weights: max |analytic - numeric| = {worst:.2e}");

    // row 2 is not in the batch, so its gradient is zero
    for i in 0..n {
        let analytic = g.aux.get(&i).cloned().unwrap_or_else(|| vec![0.0; c]);
        let numeric: Vec<f64> = (0..c)
            .map(|k| {
                let shift = |delta: f64| {
                    let mut v = bank.values().clone();
                    v.set(i, k, v.get(i, k) + delta);
                    AuxBank::from_values(v, bank.lambda())
                };
                Ok((loss(&model, &shift(h)?)? - loss(&model, &shift(-h)?)?) / (2.0 * h))
            })
            .collect::<bamlab::Result<_>>()?;
        println!("b_{i}: analytic {analytic:+.5?}\n     numeric  {numeric:+.5?}");
    }
    Ok(())
}
