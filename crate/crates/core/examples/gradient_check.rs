//! Compares reverse-mode gradients against central finite differences on a
//! tiny conv -> max pool -> dense -> sigmoid -> BCE network.
//!
//! ```bash
//! cargo run --release --example gradient_check -- [seed]
//! ```

use chipscan::nn::{Tape, Tensor};
use chipscan::rng;
use rand::Rng;

fn loss(params: &[Tensor], input: &[f64], target: f64) -> (f64, Vec<Vec<f64>>) {
    let mut tape = Tape::new();
    let v: Vec<_> = params.iter().map(|p| tape.leaf(p)).collect();
    let x = tape.constant(vec![1, 8, 8], input.to_vec()).unwrap();
    let h = tape.conv2d(x, v[0], v[1], 1, 1).unwrap();
    let h = tape.maxpool2d(h, 2).unwrap();
    let h = tape.flatten(h);
    let z = tape.dense(h, v[2], v[3]).unwrap();
    let p = tape.sigmoid(z);
    let l = tape.bce_loss(p, &[target]).unwrap();
    let value = tape.value(l)[0];
    tape.backward(l).unwrap();
    (value, v.iter().map(|&p| tape.grad(p).unwrap().to_vec()).collect())
}

fn main() {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut r = rng::stream(seed, 0);
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| r.gen_range(-0.5..0.5)).collect() };
    let mut params = vec![
        Tensor::param(vec![2, 1, 3, 3], draw(18)).unwrap(),
        Tensor::param(vec![2], draw(2)).unwrap(),
        Tensor::param(vec![1, 32], draw(32)).unwrap(),
        Tensor::param(vec![1], draw(1)).unwrap(),
    ];
    let input = draw(64);
    let (l, grads) = loss(&params, &input, 1.0);
    println!("loss {l:.6}");

    let eps = 1e-3;
    let names = ["conv.weight", "conv.bias", "dense.weight", "dense.bias"];
    for (t, name) in names.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for i in 0..params[t].numel() {
            let orig = params[t].values()[i];
            params[t].values_mut()[i] = orig + eps;
            let up = loss(&params, &input, 1.0).0;
            params[t].values_mut()[i] = orig - eps;
            let down = loss(&params, &input, 1.0).0;
            params[t].values_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = grads[t][i];
            let scale = a.abs().max(numeric.abs());
            if scale > 0.0 {
                worst = worst.max((a - numeric).abs() / scale);
            }
        }
        println!("{name:>13}: {:>2} entries, max relative error {worst:.2e}", params[t].numel());
    }
}
