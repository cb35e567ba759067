//! Fits a two-layer perceptron to XOR with manual backprop and Adam.

use dlport::nn::{softmax_cross_entropy, Activation, Adam, LrSchedule, Mlp};
use ndarray::array;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut net = Mlp::new(&[2, 8, 2], Activation::Relu, 0.0, &mut rng)?;
    let x = array![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]];
    let y = [0, 1, 1, 0];
    let mut adam = Adam::for_params(&net.param_slices_mut());
    let schedule = LrSchedule::new(0.05, 0.1, 500);
    for step in 0..500 {
        let (logits, cache) = net.forward(x.view(), true, &mut rng)?;
        let (loss, grad) = softmax_cross_entropy(logits.view(), &y, 0.0)?;
        let (grads, _) = net.backward(&cache, grad.view())?;
        adam.update(
            &mut net.param_slices_mut(),
            &grads.slices(),
            schedule.lr_at(step),
        );
        if step % 100 == 0 {
            println!("step {step:>3} loss {loss:.4}");
        }
    }
    println!("{:.2}", net.predict(x.view())?);
    Ok(())
}
