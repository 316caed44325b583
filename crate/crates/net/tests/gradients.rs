#[path = "support/oracles.rs"]
mod oracles;

use eit3d_net::{mse_loss, Architecture, TnNet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn desk_network_matches_central_differences() {
    let t = std::time::Instant::now();
    let report = oracles::gradient_check(Architecture::desk(), 50, 2, 11);
    for (name, n, err) in &report.layers {
        eprintln!("{name:>8}: {n:4} entries, max rel err {err:.2e}");
    }
    eprintln!("gradient check took {:.1?}, {} picks skipped", t.elapsed(), report.skipped);
    assert!(report.min_checked() >= 50);
    assert!(report.max_error() < 1e-3, "max relative error {}", report.max_error());
}

#[test]
fn tiny_network_with_dropout_active_matches_differences() {
    // With a fixed mask the network is still a smooth function of its
    // parameters, so the check holds with dropout on as well.
    let mut arch = Architecture::tiny();
    arch.dropout_rate = 0.3;
    let report = oracles::gradient_check_with_dropout(arch, 20, 3, 5);
    assert!(report.min_checked() >= 20);
    assert!(report.max_error() < 1e-4, "max relative error {}", report.max_error());
}

#[test]
fn doubling_the_loss_doubles_every_gradient() {
    let arch = Architecture::tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let net = TnNet::<f64>::init(&arch, &mut rng).unwrap();
    let x: Vec<f64> = (0..2 * 208).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = (0..2 * net.output_len()).map(|_| rng.random_range(-0.5..0.5)).collect();
    let (out, cache) = net.forward_train(&x, 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let (_, g) = mse_loss(&out, &y);
    let g2: Vec<f64> = g.iter().map(|v| 2.0 * v).collect();
    let a = net.backward(&cache, &g).unwrap();
    let b = net.backward(&cache, &g2).unwrap();
    for (ta, tb) in a.tensors.iter().zip(&b.tensors) {
        for (&u, &v) in ta.iter().zip(tb) {
            assert_eq!(v, 2.0 * u);
        }
    }
}

#[test]
fn eval_mode_is_bit_deterministic() {
    // Eval inference is deterministic bit for bit.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let net = TnNet::<f32>::init(&Architecture::desk(), &mut rng).unwrap();
    let x: Vec<f32> = (0..208).map(|_| rng.random_range(-0.05..0.05)).collect();
    let a = net.forward(&x, 1).unwrap();
    let b = net.forward(&x, 1).unwrap();
    assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
    assert!(a.iter().all(|v| v.abs() < 1.0));
}
