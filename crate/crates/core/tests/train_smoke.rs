use sonarcodec::codec::{train, CodecConfig, TrainClip, TrainConfig};
use sonarcodec::proxy::{proxy_clip, ProxyConfig};
use sonarcodec::sonargen::{gen_scene, render_clip, SceneConfig};

fn clips(sc: &SceneConfig, seeds: std::ops::Range<u64>) -> Vec<TrainClip> {
    seeds
        .map(|s| {
            let r = render_clip(&gen_scene(sc, s).unwrap(), sc).unwrap();
            let pairs = proxy_clip(&r.noisy, &ProxyConfig::default()).unwrap();
            TrainClip { noisy: r.noisy, pairs }
        })
        .collect()
}

#[test]
fn one_epoch_on_four_full_clips_lowers_the_loss() {
    let data = clips(&SceneConfig::default(), 40..44);
    let tc = TrainConfig { epochs: 1, frames_per_clip: 64, ..TrainConfig::default() };
    let (_, log) = train(CodecConfig::default(), &data, &tc, |_, _| {}).unwrap();
    assert_eq!(log.step_losses.len(), 32);
    let first = log.step_losses[0];
    let tail = log.step_losses[24..].iter().sum::<f64>() / 8.0;
    assert!(tail < first, "first step {first}, last eight {tail}");
    assert!(log.epochs[0].loss < first);
}

#[test]
fn same_seed_gives_bitwise_identical_parameters() {
    let sc = SceneConfig { width: 64, height: 64, n_frames: 6, n_objects: 2, ..SceneConfig::default() };
    let data = clips(&sc, 0..2);
    let cfg = CodecConfig {
        k: 2,
        latent_dim: 8,
        codebook_size: 16,
        frame_width: 64,
        frame_height: 64,
        ..CodecConfig::default()
    };
    let tc = TrainConfig { epochs: 2, frames_per_clip: 3, batch_size: 2, ..TrainConfig::default() };
    let (a, la) = train(cfg.clone(), &data, &tc, |_, _| {}).unwrap();
    let (b, lb) = train(cfg.clone(), &data, &tc, |_, _| {}).unwrap();
    assert_eq!(a, b);
    assert_eq!(la, lb);
    let (c, _) = train(cfg, &data, &TrainConfig { seed: 1, ..tc }, |_, _| {}).unwrap();
    assert_ne!(a.params, c.params);
}
