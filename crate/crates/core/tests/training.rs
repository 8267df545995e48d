use kore_core::fixtures::random_matrix;
use kore_core::linalg::spd_inverse;
use kore_core::model::finite_diff_check;
use kore_core::trainer::{lr_at, train, warmup_steps, TrainConfig};
use kore_core::{Activation, Example, LinearLayer, Loss, Matrix, ToyModel};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn linear_problem(seed: u64) -> (ToyModel, Vec<Example>, Matrix, Matrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_matrix(4, 20, &mut rng);
    let t = random_matrix(3, 20, &mut rng);
    let data = (0..20).map(|j| Example::new(x.column(j), t.column(j))).collect();
    let layer = LinearLayer::new("dense", Matrix::zeros(3, 4), None, Activation::Identity).unwrap();
    (ToyModel::new(4, vec![layer]).unwrap(), data, x, t)
}

#[test]
fn single_step_matches_hand_gradient() {
    let (mut model, data, x, t) = linear_problem(1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let w = random_matrix(3, 4, &mut rng);
    model = model.map_weights(|_, _| Ok(w.clone())).unwrap();
    let cfg = TrainConfig { base_lr: 0.1, warmup_ratio: 0.0, epochs: 1, batch_size: 20, ..TrainConfig::default() };
    train(&mut model, &data, &cfg).unwrap();
    // d/dW mean((WX − T)²) = 2/(N·d_out) · (WX − T)Xᵀ
    let resid = w.matmul(&x).unwrap().sub(&t).unwrap();
    let grad = resid.matmul(&x.transpose()).unwrap().scale(2.0 / 60.0);
    let expected = w.sub(&grad.scale(0.1)).unwrap();
    let got = model.layers()[0].w();
    assert!(got.sub(&expected).unwrap().max_abs() <= 1e-14);
}

#[test]
fn gradient_descent_reaches_the_normal_equations_solution() {
    let (mut model, data, x, t) = linear_problem(3);
    let cfg = TrainConfig {
        base_lr: 1.0,
        warmup_ratio: 0.0,
        epochs: 4000,
        batch_size: 20,
        ..TrainConfig::default()
    };
    train(&mut model, &data, &cfg).unwrap();
    let oracle = t
        .matmul(&x.transpose())
        .unwrap()
        .matmul(&spd_inverse(&x.gram()).unwrap())
        .unwrap();
    let got = model.layers()[0].w();
    assert!(got.sub(&oracle).unwrap().max_abs() <= 1e-6, "{got:?} vs {oracle:?}");
}

#[test]
fn histories_are_bitwise_reproducible() {
    let (model, data, _, _) = linear_problem(4);
    let cfg = TrainConfig { base_lr: 0.05, epochs: 5, batch_size: 6, shuffle: true, seed: 9, ..TrainConfig::default() };
    let (mut a, mut b) = (model.clone(), model);
    let ha = train(&mut a, &data, &cfg).unwrap();
    let hb = train(&mut b, &data, &cfg).unwrap();
    let bits = |h: &kore_core::TrainHistory| h.records.iter().map(|r| r.loss.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&ha), bits(&hb));
    assert_eq!(a, b);
}

fn architecture(seed: u64) -> (ToyModel, Matrix, Matrix, Loss) {
    use Activation::*;
    let specs: [(&[usize], &[Activation], Loss); 5] = [
        (&[5, 3], &[Tanh], Loss::Mse),
        (&[6, 4, 3], &[Tanh, Identity], Loss::Mse),
        (&[4, 5, 5, 2], &[Relu, Tanh, Identity], Loss::Mse),
        (&[7, 6, 4], &[Tanh, Identity], Loss::SoftmaxXent),
        (&[3, 8, 3], &[Relu, Identity], Loss::SoftmaxXent),
    ];
    let (dims, acts, loss) = specs[seed as usize];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = acts
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let bias = Some(random_matrix(dims[i + 1], 1, &mut rng).into_vec());
            LinearLayer::new(format!("l{i}"), random_matrix(dims[i + 1], dims[i], &mut rng), bias, a).unwrap()
        })
        .collect();
    let model = ToyModel::new(dims[0], layers).unwrap();
    let x = random_matrix(dims[0], 6, &mut rng);
    let out = *dims.last().unwrap();
    let target = match loss {
        Loss::Mse => random_matrix(out, 6, &mut rng),
        Loss::SoftmaxXent => Matrix::from_fn(out, 6, |i, j| f64::from(i == j % out)),
    };
    (model, x, target, loss)
}

#[test]
fn finite_differences_on_five_architectures() {
    for seed in 0..5 {
        let (model, x, target, loss) = architecture(seed);
        let err = finite_diff_check(&model, &x, loss, &target, 1e-5).unwrap();
        assert!(err <= 1e-4, "architecture {seed}: {err:e}");
    }
}

proptest! {
    #[test]
    fn schedule_rises_then_falls(total in 1usize..400, ratio in 0.0f64..0.5) {
        let cfg = TrainConfig { warmup_ratio: ratio, ..TrainConfig::default() };
        let w = warmup_steps(total, ratio);
        let lrs: Vec<f64> = (0..total).map(|s| lr_at(s, total, &cfg).unwrap()).collect();
        for s in 1..total {
            if s < w {
                prop_assert!(lrs[s] >= lrs[s - 1]);
            } else if s > w {
                prop_assert!(lrs[s] <= lrs[s - 1] + 1e-18);
            }
        }
        prop_assert!(lrs.iter().all(|&l| (0.0..=cfg.base_lr).contains(&l)));
    }
}
