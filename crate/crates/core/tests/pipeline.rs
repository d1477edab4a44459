use bcskit::allocation::{assign, presample, proportions, RateAssignment};
use bcskit::fixtures::{piecewise_smooth, toy_images};
use bcskit::image::partition;
use bcskit::linalg::norm2;
use bcskit::metrics::psnr;
use bcskit::neural::{NetConfig, NetParams};
use bcskit::recon::{reconstruct, Algorithm, ReconConfig};
use bcskit::sampling::{sample_block, sample_image, BankSpec, Measurements};
use bcskit::Image;
use proptest::prelude::*;

fn image(h: usize, w: usize, seed: u64) -> Image {
    let base = piecewise_smooth(h.max(w), seed);
    Image::from_fn(h, w, |r, c| base.get(r, c))
}

fn residuals(out: &Image, meas: &Measurements, bank: &bcskit::sampling::ChannelBank) -> f64 {
    let grid = partition(out, meas.block_size).unwrap();
    meas.entries
        .iter()
        .zip(&grid.blocks)
        .map(|(e, blk)| {
            let y = sample_block(bank, e.channel, blk).unwrap();
            let d: Vec<f64> = y.iter().zip(&e.y).map(|(a, b)| a - b).collect();
            norm2(&d) / norm2(&e.y)
        })
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn engines_keep_dims_and_are_deterministic(
        h in 9usize..40, w in 9usize..40, seed in 0u64..1000, j in 0usize..3,
    ) {
        let img = image(h, w, seed);
        let bank = BankSpec { block_size: 8, rates: vec![0.2, 0.4, 0.6], orthonormal: false, seed }
            .build()
            .unwrap();
        let k = partition(&img, 8).unwrap().len();
        let meas = sample_image(&bank, &RateAssignment::uniform(&bank, j, k), &img).unwrap();
        let cfg = ReconConfig { max_iters: 4, seed, ..Default::default() };
        for algo in [Algorithm::BcsSpl, Algorithm::Damp, Algorithm::BcsDamp] {
            let out = reconstruct(algo, &meas, &bank, &cfg).unwrap();
            prop_assert_eq!(out.dims(), (h, w));
            prop_assert!(out.data.iter().all(|v| v.is_finite()));
            let again = reconstruct(algo, &meas, &bank, &cfg).unwrap();
            prop_assert_eq!(&out, &again);
        }
    }

    #[test]
    fn network_keeps_shapes(
        h in 8usize..40, w in 8usize..40, phases in 0usize..3, seed in 0u64..1000,
    ) {
        let cfg = NetConfig { block_size: 8, rates: vec![0.25, 0.5], features: 3, kernel: 3, phases };
        let mut p = NetParams::new(cfg, seed).unwrap();
        p.cache_pinv().unwrap();
        let img = image(h, w, seed);
        let bank = p.channel_bank().unwrap();
        let k = partition(&img, 8).unwrap().len();
        let channels = (0..k).map(|i| i % 2).collect();
        let asg = RateAssignment::from_channels(&bank, channels, 0.375).unwrap();
        let meas = sample_image(&bank, &asg, &img).unwrap();
        let out = p.forward_full(&meas).unwrap();
        prop_assert_eq!(out.dims(), (h, w));
        prop_assert!(out.data.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn full_row_rank_engines_end_on_the_measurements() {
    let img = image(48, 48, 3);
    let bank = BankSpec { block_size: 16, rates: vec![0.1, 0.3], orthonormal: false, seed: 2 }.build().unwrap();
    let asg = RateAssignment::from_channels(&bank, (0..9).map(|i| i % 2).collect(), 0.2).unwrap();
    let meas = sample_image(&bank, &asg, &img).unwrap();
    let cfg = ReconConfig { max_iters: 6, ..Default::default() };
    for algo in [Algorithm::BcsSpl, Algorithm::Damp, Algorithm::BcsDamp] {
        let out = reconstruct(algo, &meas, &bank, &cfg).unwrap();
        let r = residuals(&out, &meas, &bank);
        assert!(r < 1e-6, "{}: residual {r:e}", algo.name());
    }
}

#[test]
fn measurements_survive_json() {
    let img = piecewise_smooth(64, 4);
    let bank = BankSpec { block_size: 16, rates: vec![0.05, 0.1, 0.2], orthonormal: true, seed: 9 }.build().unwrap();
    let p = proportions(&presample(&img).unwrap(), 16).unwrap();
    let asg = assign(&p, 0.1, &bank).unwrap();
    let meas = sample_image(&bank, &asg, &img).unwrap();
    let text = serde_json::to_string(&meas).unwrap();
    let back: Measurements = serde_json::from_str(&text).unwrap();
    assert_eq!(back, meas);
    back.validate(&bank).unwrap();
    let asg_back: RateAssignment = serde_json::from_str(&serde_json::to_string(&asg).unwrap()).unwrap();
    assert_eq!(asg_back, asg);
    let cfg = ReconConfig { max_iters: 10, ..Default::default() };
    let out = reconstruct(Algorithm::BcsDamp, &back, &bank, &cfg).unwrap();
    assert!(psnr(&img, &out).unwrap() > 20.0);
}

#[test]
fn untrained_network_reconstructs_toy_images() {
    let mut p = NetParams::new(NetConfig::desk(), 2).unwrap();
    p.cache_pinv().unwrap();
    let img = &toy_images(1, 48, 5)[0];
    let bank = p.channel_bank().unwrap();
    let meas = sample_image(&bank, &RateAssignment::uniform(&bank, 2, 9), img).unwrap();
    assert_eq!(p.forward_full(&meas).unwrap().dims(), (48, 48));
    assert!(p.initial_image(&meas).unwrap().data.iter().all(|v| v.is_finite()));
}
