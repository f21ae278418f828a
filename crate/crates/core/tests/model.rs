use facetrace::model::{
    decode, encode, fuse, reconstruct_batch, reconstruct_original, trace, trace_batch, FaceImage, FeaturePyramid,
    ModelConfig, ModelParams,
};
use facetrace::tensor::FeatureMap;
use facetrace::training::init_params;
use facetrace::ErrorKind;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(r: usize, seed: u64) -> FaceImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let px = (0..r * r * 3).map(|_| rng.random::<f32>()).collect();
    FaceImage::new(r, r, px).unwrap()
}

fn desk() -> (ModelConfig, ModelParams) {
    let c = ModelConfig::desk();
    let p = init_params(&c, 42).unwrap();
    (c, p)
}

#[test]
fn level_schedule_at_32_with_default_widths() {
    let c = ModelConfig {
        resolution: 32,
        ..ModelConfig::default()
    };
    assert_eq!(c.level_schedule(), [(16, 64), (8, 128), (4, 256), (4, 512)]);
    let p = ModelParams::<f32>::zeros(&c).unwrap();
    let (pyr, emb) = encode(&random_image(32, 1), &p.id_encoder, &c).unwrap();
    assert_eq!(pyr.schedule(), vec![(16, 64), (8, 128), (4, 256), (4, 512)]);
    assert_eq!(emb.len(), 512);
}

#[test]
fn desk_pyramid_follows_the_schedule() {
    let (c, p) = desk();
    let (pyr, emb) = encode(&random_image(32, 2), &p.attr_encoder, &c).unwrap();
    assert_eq!(pyr.schedule(), vec![(16, 16), (8, 32), (4, 64), (4, 128)]);
    assert_eq!(emb.len(), 64);
    assert_eq!(pyr.deepest().width, 4);
}

#[test]
fn zero_input_stays_finite() {
    let (c, p) = desk();
    let black = FaceImage::filled(32, 32, 0.0);
    let (pyr, emb) = encode(&black, &p.id_encoder, &c).unwrap();
    assert!(pyr.levels.iter().all(FeatureMap::all_finite));
    assert!(emb.iter().all(|v| v.is_finite()));
    let t = trace(&black, &p).unwrap();
    assert!(t.image.pixels().iter().all(|v| v.is_finite()));
}

#[test]
fn forward_passes_are_deterministic() {
    let (c, p) = desk();
    let img = random_image(32, 3);
    let a = encode(&img, &p.id_encoder, &c).unwrap();
    let b = encode(&img, &p.id_encoder, &c).unwrap();
    assert_eq!(a, b);
    let t1 = trace(&img, &p).unwrap();
    let t2 = trace(&img, &p).unwrap();
    assert_eq!(t1.image, t2.image);
    assert_eq!(t1.traced_identity, t2.traced_identity);
}

#[test]
fn wrong_resolution_is_a_config_error() {
    let (c, p) = desk();
    let e = encode(&random_image(16, 0), &p.id_encoder, &c).unwrap_err();
    assert_eq!(e.kind(), ErrorKind::Config);
    assert!(reconstruct_original(&random_image(64, 0), &p).is_err());
}

#[test]
fn fusion_concatenates_identity_first() {
    let (c, p) = desk();
    let img = random_image(32, 4);
    let (id, _) = encode(&img, &p.id_encoder, &c).unwrap();
    let (attr, _) = encode(&img, &p.attr_encoder, &c).unwrap();
    let f = fuse(&id, &attr).unwrap();
    assert_eq!(f.channel_counts(), vec![32, 64, 128, 256]);
    for (k, level) in f.levels.iter().enumerate() {
        let (a, b) = level.split_channels(id.levels[k].channels);
        assert_eq!(a, id.levels[k]);
        assert_eq!(b, attr.levels[k]);
    }
    let selfie = fuse(&id, &id).unwrap();
    for level in &selfie.levels {
        let (a, b) = level.split_channels(level.channels / 2);
        assert_eq!(a, b);
    }
}

#[test]
fn default_fused_channel_counts() {
    let c = ModelConfig {
        resolution: 32,
        ..ModelConfig::default()
    };
    let p = ModelParams::<f32>::zeros(&c).unwrap();
    let img = random_image(32, 5);
    let (id, _) = encode(&img, &p.id_encoder, &c).unwrap();
    let f = fuse(&id, &id).unwrap();
    assert_eq!(f.channel_counts(), vec![128, 256, 512, 1024]);
}

#[test]
fn misaligned_pyramids_are_rejected() {
    let (c, p) = desk();
    let img = random_image(32, 6);
    let (id, _) = encode(&img, &p.id_encoder, &c).unwrap();
    let mut shifted = id.clone();
    shifted.levels.swap(0, 1);
    let e = fuse(&id, &shifted).unwrap_err();
    assert_eq!(e.kind(), ErrorKind::Config);
    assert!(e.to_string().contains("level 0"), "{e}");

    let short = FeaturePyramid {
        levels: id.levels[..3].to_vec(),
    };
    let f = fuse(&short, &short).unwrap();
    assert!(decode(&f, &p.decoder, &c).is_err());
}

#[test]
fn composition_matches_the_manual_pipeline() {
    let (c, p) = desk();
    let img = random_image(32, 7);
    let (id, id_vec) = encode(&img, &p.id_encoder, &c).unwrap();
    let (attr, attr_vec) = encode(&img, &p.attr_encoder, &c).unwrap();
    let manual = decode(&fuse(&id, &attr).unwrap(), &p.decoder, &c).unwrap();
    let r = reconstruct_original(&img, &p).unwrap();
    assert_eq!(r.image, manual);
    assert_eq!(r.identity.0, id_vec);
    assert_eq!(r.attribute.0, attr_vec);
}

#[test]
fn trace_reuses_the_identity_encoder_on_its_output() {
    let (c, p) = desk();
    let fake = random_image(32, 8);
    let t = trace(&fake, &p).unwrap();
    let r = reconstruct_original(&fake, &p).unwrap();
    // both paths share E_attr, D and E_id: same input gives the same image
    assert_eq!(t.image, r.image);
    assert_eq!(t.generated_identity, r.identity);
    assert_eq!(t.fake_attribute, r.attribute);
    let (_, re) = encode(&t.image, &p.id_encoder, &c).unwrap();
    assert_eq!(t.traced_identity.0.len(), 64);
    for (a, b) in t.traced_identity.0.iter().zip(&re) {
        assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn batched_paths_agree_with_single_sample_paths() {
    let (_, p) = desk();
    let imgs: Vec<_> = (0..3).map(|s| random_image(32, 20 + s)).collect();
    let refs: Vec<_> = imgs.iter().collect();
    let rb = reconstruct_batch(&refs, &p).unwrap();
    let tb = trace_batch(&refs, &p).unwrap();
    for (i, img) in imgs.iter().enumerate() {
        assert_eq!(rb[i].image, reconstruct_original(img, &p).unwrap().image);
        assert_eq!(tb[i].traced_identity, trace(img, &p).unwrap().traced_identity);
    }
}

#[test]
fn decoder_output_is_in_unit_range_for_extreme_weights() {
    let (_, mut p) = desk();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for param in p.params_mut() {
        param.data.iter_mut().for_each(|v| *v = rng.random_range(-3.0..3.0));
    }
    let out = trace(&random_image(32, 10), &p).unwrap();
    let (lo, hi) = out
        .image
        .pixels()
        .iter()
        .fold((f32::MAX, f32::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    assert!(lo >= 0.0 && hi <= 1.0, "[{lo}, {hi}]");
}

#[test]
fn parameter_shapes_follow_the_config() {
    let (c, p) = desk();
    let again = ModelParams::<f32>::zeros(&c).unwrap();
    let shapes = |m: &ModelParams| {
        m.params()
            .iter()
            .map(|q| (q.name.clone(), q.shape.clone()))
            .collect::<Vec<_>>()
    };
    assert_eq!(shapes(&p), shapes(&again));
    assert_eq!(p.num_parameters(), 1_110_227);
    let first = &p.id_encoder.stages[0].conv1.weight;
    assert_eq!(first.shape, vec![16, 3, 3, 3]);
    assert_eq!(
        p.id_encoder.head.weight.shape.iter().product::<usize>(),
        128 * 4 * 4 * 64
    );
}
