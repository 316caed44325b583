use eit3d_core::dataset::add_awgn_f32;
use eit3d_core::voxel::{voxel_coords, VoxelVolume, VOXEL_COUNT};
use eit3d_net::train::{evaluation_loss, noise_seed};
use eit3d_net::{train_model, Architecture, TrainConfig, TrainData};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn blob(cx: f64, cy: f64, cz: f64, value: f32) -> VoxelVolume {
    let mut v = VoxelVolume::zeros();
    for lin in 0..VOXEL_COUNT {
        let (i, j, k) = voxel_coords(lin);
        let d = (i as f64 - cx).powi(2) + (j as f64 - cy).powi(2) + (k as f64 - cz).powi(2);
        if d < 36.0 {
            v.data[lin] = value;
        }
    }
    v.apply_mask();
    v
}

fn synthetic(n: usize, seed: u64) -> (Vec<Vec<f32>>, Vec<VoxelVolume>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = (0..n).map(|_| (0..208).map(|_| rng.random_range(-0.03..0.03)).collect()).collect();
    let vols = (0..n)
        .map(|_| blob(rng.random_range(10.0..22.0), rng.random_range(10.0..22.0), rng.random_range(8.0..32.0), -0.5))
        .collect();
    (frames, vols)
}

#[test]
fn one_sample_is_memorized() {
    let (frames, vols) = synthetic(1, 1);
    let data = TrainData { frames: &frames, targets: &vols, train: &[0], validation: &[0] };
    let cfg = TrainConfig { epochs: 50, batch_size: 1, seed: 3, ..Default::default() };
    let model = train_model(&data, &Architecture::tiny(), &cfg, |_| {}).unwrap();
    let first = model.history[0].train_loss;
    let last = model.history.last().unwrap().train_loss;
    eprintln!("train loss {first:.3e} -> {last:.3e}");
    assert_eq!(model.history.len(), 50);
    assert!(last <= 0.1 * first, "{first} -> {last}");
    let best = model.history.iter().map(|r| r.validation_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(evaluation_loss(&model.net, &data, &[0]).unwrap(), best);
}

#[test]
fn identical_runs_give_identical_histories() {
    let (frames, vols) = synthetic(6, 2);
    let data = TrainData { frames: &frames, targets: &vols, train: &[0, 1, 2, 3], validation: &[4, 5] };
    let cfg = TrainConfig { epochs: 3, batch_size: 2, seed: 9, ..Default::default() };
    let mut seen = Vec::new();
    let a = train_model(&data, &Architecture::tiny(), &cfg, |r| seen.push(*r)).unwrap();
    let b = train_model(&data, &Architecture::tiny(), &cfg, |_| {}).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.history, seen);
    assert_eq!(a.net, b.net);
    let c = train_model(&data, &Architecture::tiny(), &TrainConfig { seed: 10, ..cfg }, |_| {}).unwrap();
    assert_ne!(a.history, c.history);
}

#[test]
fn best_snapshot_is_the_minimum_validation_epoch() {
    let (frames, vols) = synthetic(6, 4);
    let data = TrainData { frames: &frames, targets: &vols, train: &[0, 1, 2, 3], validation: &[4, 5] };
    let cfg = TrainConfig { epochs: 6, batch_size: 2, seed: 1, ..Default::default() };
    let m = train_model(&data, &Architecture::tiny(), &cfg, |_| {}).unwrap();
    assert_eq!(Some(m.best_epoch), eit3d_net::train::best_epoch(&m.history));
    let want = m.history[m.best_epoch - 1].validation_loss;
    assert_eq!(evaluation_loss(&m.net, &data, data.validation).unwrap(), want);
}

#[test]
fn noise_differs_between_epochs() {
    let frame: Vec<f32> = (0..208).map(|i| ((i as f32) * 0.37).sin() * 0.01).collect();
    let a = add_awgn_f32(&frame, 35.0, noise_seed(5, 0, 0, 0)).unwrap();
    let b = add_awgn_f32(&frame, 35.0, noise_seed(5, 1, 0, 0)).unwrap();
    let c = add_awgn_f32(&frame, 35.0, noise_seed(5, 0, 1, 0)).unwrap();
    assert_ne!(a, b);
    assert_ne!(a, c);
    assert_eq!(a, add_awgn_f32(&frame, 35.0, noise_seed(5, 0, 0, 0)).unwrap());
}

#[test]
fn empty_validation_split_rejected() {
    let (frames, vols) = synthetic(2, 5);
    let data = TrainData { frames: &frames, targets: &vols, train: &[0, 1], validation: &[] };
    let cfg = TrainConfig { epochs: 1, batch_size: 2, ..Default::default() };
    assert!(train_model(&data, &Architecture::tiny(), &cfg, |_| {}).is_err());
}
