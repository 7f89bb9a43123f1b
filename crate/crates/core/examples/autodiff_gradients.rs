//! Builds a small graph, runs backward, and compares one gradient entry with
//! a central difference.

use paramspec::autodiff::Graph;
use paramspec::{ActivationKind, Tensor};

fn loss(x: &Tensor, w: &Tensor) -> paramspec::Result<(f32, Tensor)> {
    let mut g = Graph::new();
    let xv = g.param(x.clone());
    let wv = g.param(w.clone());
    let h = g.matmul(xv, wv)?;
    let a = g.activation(h, ActivationKind::Gelu)?;
    let l = g.cross_entropy(a, &[Some(0), Some(2)])?;
    g.backward(l)?;
    Ok((g.value(l).item()?, g.grad(wv).cloned().expect("w is trainable")))
}

fn main() -> paramspec::Result<()> {
    let x = Tensor::from_rows(&[vec![0.5, -1.0, 0.25], vec![1.5, 0.3, -0.7]]);
    let w = Tensor::from_rows(&[vec![0.2, -0.1, 0.4], vec![0.7, 0.3, -0.5], vec![-0.6, 0.1, 0.9]]);
    let (l, grad) = loss(&x, &w)?;
    println!("loss {l:.6}");
    println!("dL/dW {:?}", grad.data());

    let h = 1e-3;
    let mut plus = w.clone();
    plus.data_mut()[4] += h;
    let mut minus = w.clone();
    minus.data_mut()[4] -= h;
    let fd = (loss(&x, &plus)?.0 - loss(&x, &minus)?.0) / (2.0 * h);
    println!("W[1,1]: backward {:.5}, central difference {fd:.5}", grad.data()[4]);
    Ok(())
}
