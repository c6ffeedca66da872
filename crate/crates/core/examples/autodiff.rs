//! Fits a linear model with the tape engine and checks one gradient by hand.

use tta_core::engine::{Graph, Tensor};

fn main() -> tta_core::Result<()> {
    // y = 2 x0 - 3 x1 + 0.5
    let xs = Tensor::new(vec![4, 2], vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0])?;
    let ys = Tensor::new(vec![4, 1], vec![0.5, 2.5, -2.5, -0.5])?;
    let mut w = Tensor::zeros(&[2, 1]);
    let mut b = Tensor::zeros(&[1]);

    for step in 0..200 {
        let mut g = Graph::new();
        let (wv, bv) = (g.variable(w.clone()), g.variable(b.clone()));
        let x = g.constant(xs.clone());
        let y = g.constant(ys.clone());
        let xw = g.matmul(x, wv)?;
        let pred = g.add(xw, bv)?;
        let err = g.sub(pred, y)?;
        let sq = g.mul(err, err)?;
        let loss = g.mean(sq)?;
        let grads = g.backward(loss)?;
        if step % 50 == 0 {
            println!("step {step:>3}  loss {:.6}", g.value(loss).item()?);
        }
        for (t, gt) in [(&mut w, grads.get(wv)), (&mut b, grads.get(bv))] {
            for (v, d) in t.data_mut().iter_mut().zip(gt.data()) {
                *v -= 0.5 * d;
            }
        }
    }
    println!("w = {:?}, b = {:?}", w.data(), b.data());

    // d/dz sum(softmax(z) * c) at z = 0 is (c - mean(c)) / K.
    let mut g = Graph::new();
    let z = g.variable(Tensor::zeros(&[1, 3]));
    let c = g.constant(Tensor::new(vec![3], vec![1.0, 2.0, 6.0])?);
    let p = g.softmax(z)?;
    let pc = g.mul(p, c)?;
    let s = g.sum(pc)?;
    println!("softmax grad {:?} (expect [-0.667, -0.333, 1.0])", g.backward(s)?.get(z).data());
    Ok(())
}
