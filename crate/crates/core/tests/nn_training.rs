use fairvec::nn::{softmax_xent, Dense, Layer, Mode, Optimizer, OptimizerConfig, Parameterized, Relu, Sequential, Tensor2};
use fairvec::rng::{seeded, Stream};
use rand::Rng;

fn toy(n: usize) -> (Tensor2<f64>, Vec<usize>) {
    let mut rng = seeded(11, Stream::Synthetic);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..n {
        let class = i % 2;
        let shift = if class == 0 { 1.5 } else { -1.5 };
        x.push(shift + rng.random_range(-0.5..0.5));
        x.push(rng.random_range(-1.0..1.0));
        y.push(class);
    }
    (Tensor2::new(n, 2, x).unwrap(), y)
}

fn net() -> Sequential<f64> {
    let mut rng = seeded(5, Stream::Init);
    Sequential::new(vec![
        Layer::Dense(Dense::glorot(2, 8, &mut rng)),
        Layer::Relu(Relu::new()),
        Layer::Dense(Dense::glorot(8, 2, &mut rng)),
    ])
}

fn run(steps: usize) -> Vec<f64> {
    let (x, y) = toy(64);
    let mut model = net();
    let mut opt = Optimizer::new(OptimizerConfig::sgd(0.1, 0.9, 0.0)).unwrap();
    let mut rng = seeded(0, Stream::Dropout);
    let mut losses = Vec::new();
    for _ in 0..steps {
        model.zero_grad();
        let out = softmax_xent(&model.forward(&x, Mode::Train, &mut rng).unwrap(), &y).unwrap();
        model.backward(&out.grad).unwrap();
        opt.step(model.params()).unwrap();
        losses.push(out.loss);
    }
    losses
}

#[test]
fn separable_toy_converges_within_500_steps() {
    let losses = run(500);
    let first = losses.iter().position(|&l| l < 0.1);
    assert!(first.is_some(), "final loss {}", losses.last().unwrap());
}

#[test]
fn seeded_trajectories_are_bit_identical() {
    let a = run(50);
    let b = run(50);
    assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}
