//! The straight-through Gumbel-softmax used by the generators: hard one-hot
//! samples forward, relaxed gradients backward. Empirical sample
//! frequencies should match the softmax of the logits.
//!
//! cargo run --release --example gumbel_relaxation -- [temperature]

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seqreward::nn::st_gumbel_softmax;

fn main() -> anyhow::Result<()> {
    let temperature: f64 = std::env::args()
        .nth(1)
        .map(|a| a.parse())
        .transpose()?
        .unwrap_or(0.8);
    let logits = [1.0, 0.0, -1.0, 2.0];
    let z: f64 = logits.iter().map(|l: &f64| l.exp()).sum();
    let n = 20_000;
    let batch = Array2::from_shape_fn((n, logits.len()), |(_, j)| logits[j]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let sample = st_gumbel_softmax(&batch, temperature, &mut rng)?;

    let mut counts = vec![0usize; logits.len()];
    for &i in &sample.indices {
        counts[i] += 1;
    }
    println!("class  softmax  sampled  mean relaxed");
    for (j, l) in logits.iter().enumerate() {
        let relaxed = sample.soft.column(j).mean().unwrap_or(0.0);
        println!(
            "{j:>5}  {:.4}   {:.4}   {:.4}",
            l.exp() / z,
            counts[j] as f64 / n as f64,
            relaxed
        );
    }
    let row_sums_ok = sample.hard.rows().into_iter().all(|r| r.sum() == 1.0);
    println!("hard rows are one-hot: {row_sums_ok}");
    Ok(())
}
