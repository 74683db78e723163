use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use solo_core::audio::{load_wav, preprocess, NormalizeConfig};
use solo_core::mixture::{
    build_dataset, read_manifest, synthesize_mixture, write_manifest, AugmentConfig, Blocklist, BuildOptions,
    MixConfig, MixInputs, MixtureRecord, PooledClip, SourcePool, TargetSource,
};
use solo_core::segmenter::{Segment, SegmenterConfig};
use solo_core::synthetic::{toy_noise, toy_source, TOY_CLASSES};
use solo_core::Label;

fn pools() -> (SourcePool, SourcePool) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let single = TOY_CLASSES
        .iter()
        .flat_map(|c| (0..3).map(move |k| (c, k)))
        .map(|(c, k)| PooledClip {
            path: format!("{c}_{k}.wav"),
            class_label: c.to_string(),
            clip: toy_source(c, rng.gen_range(0.8..2.5), &mut rng).unwrap(),
        })
        .collect();
    let noise = vec![PooledClip {
        path: "n.wav".into(),
        class_label: "noise".into(),
        clip: toy_noise("white", 1.5, &mut rng).unwrap(),
    }];
    (SourcePool::from_clips(single), SourcePool::from_clips(noise))
}

fn build(n: usize, seed: u64, out: Option<&std::path::Path>) -> Vec<MixtureRecord> {
    let (single, noise) = pools();
    let (mix, aug, seg, norm) = (
        MixConfig::default(),
        AugmentConfig::default(),
        SegmenterConfig::default(),
        NormalizeConfig::default(),
    );
    build_dataset(
        &single,
        &noise,
        &Blocklist::default(),
        &BuildOptions {
            n_examples: n,
            mix_cfg: &mix,
            aug_cfg: &aug,
            seg_cfg: &seg,
            norm_cfg: &norm,
            out_dir: out,
            seed,
        },
    )
    .unwrap()
}

#[test]
fn blocklisted_classes_never_interfere() {
    let (single, noise) = pools();
    let mut blocklist = Blocklist::default();
    blocklist.insert("sine", "vibrato");
    blocklist.insert("sine", "chirp");
    blocklist.insert("pulses", "tremolo");
    let (mix, seg, norm) = (MixConfig::default(), SegmenterConfig::default(), NormalizeConfig::default());
    let inputs = MixInputs {
        cfg: &mix,
        seg_cfg: &seg,
        interferer_pool: &single,
        noise_pool: &noise,
        blocklist: &blocklist,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut seen = 0;
    for _ in 0..10_000 {
        let src = &single.clips[rng.gen_range(0..single.len())];
        let (target, _, gain) = preprocess(&src.clip, &norm).unwrap();
        let ts = TargetSource {
            file: src.path.clone(),
            segment: Segment::of(&target, 0, target.len()),
            class_label: src.class_label.clone(),
        };
        let cond = mix.draw_condition(&mut rng);
        let (_, rec) = synthesize_mixture(&target, ts, gain, cond, &inputs, &norm, &mut rng).unwrap();
        for i in &rec.interferer_sources {
            assert!(blocklist.allows(&rec.target_source.class_label, &i.class_label));
            assert_ne!(i.class_label, rec.target_source.class_label);
            seen += 1;
        }
        rec.check(&blocklist).unwrap();
    }
    assert!(seen > 5_000);
}

#[test]
fn four_records_are_two_and_two() {
    let recs = build(4, 1, None);
    let singles: Vec<bool> = recs.iter().map(|r| r.label == Label::Single).collect();
    assert_eq!(singles, vec![true, false, true, false]);
}

#[test]
fn same_seed_same_manifest_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    write_manifest(&a, &build(40, 5, None)).unwrap();
    write_manifest(&b, &build(40, 5, None)).unwrap();
    write_manifest(&c, &build(40, 6, None)).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
    assert_eq!(read_manifest(&a).unwrap(), build(40, 5, None));
}

#[test]
fn thread_count_does_not_change_records() {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    assert_eq!(one.install(|| build(30, 2, None)), four.install(|| build(30, 2, None)));
}

#[test]
fn written_audio_is_finite_and_within_full_scale() {
    let dir = tempfile::tempdir().unwrap();
    let recs = build(60, 3, Some(dir.path()));
    for r in &recs {
        let clip = load_wav(dir.path().join(r.output_path.as_ref().unwrap())).unwrap();
        assert!(clip.samples.iter().all(|x| x.is_finite() && x.abs() <= 1.0), "{}", r.id);
        assert!((clip.duration_s() - r.duration_s).abs() < 1e-9);
        r.check(&Blocklist::default()).unwrap();
    }
}
