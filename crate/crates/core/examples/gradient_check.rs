//! Compare reverse-mode gradients with central differences on a small
//! attention-style expression.
//!
//! cargo run --release --example gradient_check

use caum::autodiff::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// `sum(log σ(tanh(softmax(x wᵀ) x) v))` for a masked 4-row input.
fn build(g: &mut Graph, x: &Tensor, w: &Tensor, v: &Tensor) -> caum::Result<(f64, Vec<Vec<f64>>)> {
    let xs = [x, w, v].map(|t| g.leaf(t.clone(), true));
    let logits = g.matmul_nt(xs[0], xs[1])?;
    let att = g.softmax(logits, Some(&[true, true, false, true]))?;
    let mixed = g.matmul(att, xs[0])?;
    let h = g.tanh(mixed);
    let out = g.matmul(h, xs[2])?;
    let ls = g.log_sigmoid(out);
    let loss = g.sum(ls);
    g.backward(loss)?;
    let grads = xs.iter().map(|&x| g.grad(x).unwrap().to_vec()).collect();
    Ok((g.scalar(loss), grads))
}

fn main() -> caum::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let inputs = [random(&mut rng, 4, 3), random(&mut rng, 4, 3), random(&mut rng, 3, 2)];
    let eval = |ts: &[Tensor]| build(&mut Graph::new(), &ts[0], &ts[1], &ts[2]).map(|r| r.0);
    let (loss, analytic) = build(&mut Graph::new(), &inputs[0], &inputs[1], &inputs[2])?;
    println!("loss {loss:.6}");

    let eps = 1e-5;
    for (which, name) in ["x", "w", "v"].iter().enumerate() {
        let mut worst: f64 = 0.0;
        for i in 0..inputs[which].len() {
            let mut plus = inputs.clone();
            let mut minus = inputs.clone();
            plus[which] = nudge(&inputs[which], i, eps);
            minus[which] = nudge(&inputs[which], i, -eps);
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * eps);
            let a = analytic[which][i];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8));
        }
        println!("{name}: worst relative error {worst:.2e}");
    }
    Ok(())
}

fn nudge(t: &Tensor, i: usize, by: f64) -> Tensor {
    let mut data = t.data().to_vec();
    data[i] += by;
    Tensor::new(t.shape().to_vec(), data).unwrap()
}
