//! Weighted cross-entropy and its gradient on a tiny logit matrix.
use keyweight::loss::{loss_and_gradient, mean_cross_entropy, LogitMatrix};
use keyweight::spanmap::WeightVector;

fn main() {
    let logits =
        LogitMatrix::from_rows(3, 4, vec![2.0, 0.5, -1.0, 0.0, 0.1, 0.2, 0.3, 0.4, -2.0, 1.0, 3.0, 0.0]).unwrap();
    let targets = [0, 3, 2];
    for gamma in [1.0, 2.0, 6.0] {
        let w = WeightVector::from_lambdas(vec![1.0, gamma, 1.0]).unwrap();
        let r = loss_and_gradient(&logits, &targets, &w).unwrap();
        println!("gamma={gamma}: loss={:.6} per-token={:?}", r.value, r.per_token);
        println!("  gradient row 1: {:?}", r.gradient.unwrap().row(1).to_vec());
    }
    println!("mean CE = {:.6}", mean_cross_entropy(&logits, &targets).unwrap());
}
