use facecloak::backends::{load_toy_weights, save_toy_weights, FaceEmbedder, ToyArchitecture, ToyBackend, ToyBackendWeights};
use facecloak::corpus::{render_face, write_corpus, ToyCorpusConfig};
use facecloak::eval::{EvalReport, PerceptualSummary, RobustnessRow, TransformSpec};
use facecloak::ingestion::{manifest_path_for, scan_dataset, DatasetManifest};
use facecloak::optimizer::apply_cloak;
use facecloak::{load_cloak, read_cloak_header, save_cloak, BudgetMap, CloakMask, Error, ImagePlane, Shape};
use proptest::prelude::*;

fn cloak_from(shape: Shape, raw: &[f32], eps_a: f64) -> CloakMask {
    let budget = BudgetMap::uniform(shape, eps_a).unwrap();
    let delta: Vec<f32> = raw.iter().map(|v| v * eps_a as f32).collect();
    let attention: Vec<f32> = raw.iter().map(|v| v.abs()).collect();
    CloakMask::new(delta, attention, budget, "toy-test", "ab".repeat(32), "cd".repeat(32)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn cloak_files_round_trip_bit_exactly(
        h in 16usize..24,
        w in 16usize..24,
        seed in any::<u64>(),
        eps_a in 0.01f64..0.3,
    ) {
        use rand::{Rng, SeedableRng};
        let shape = Shape::new(h, w);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<f32> = (0..shape.len()).map(|_| rng.gen_range(-1.0f32..=1.0)).collect();
        let cloak = cloak_from(shape, &raw, eps_a);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.fclk");
        save_cloak(&cloak, &path).unwrap();
        let back = load_cloak(&path).unwrap();
        prop_assert_eq!(&back, &cloak);
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(back.delta()), bits(cloak.delta()));
        prop_assert_eq!(read_cloak_header(&path).unwrap(), cloak.header());

        // Saving the loaded cloak reproduces the file byte for byte.
        let again = dir.path().join("d.fclk");
        save_cloak(&back, &again).unwrap();
        prop_assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }
}

#[test]
fn loaded_cloak_protects_identically() {
    let cfg = ToyCorpusConfig::default();
    let face = render_face(&cfg, 0, 0).unwrap();
    let shape = face.shape();
    let raw: Vec<f32> = (0..shape.len()).map(|i| ((i * 37 % 11) as f32 / 5.0) - 1.0).collect();
    let cloak = cloak_from(shape, &raw, 32.0 / 255.0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.fclk");
    save_cloak(&cloak, &path).unwrap();
    let a = apply_cloak(&face, &cloak).unwrap();
    let b = apply_cloak(&face, &load_cloak(&path).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn toy_weights_round_trip_gives_identical_embeddings() {
    let weights = ToyBackendWeights::random(ToyArchitecture::default(), 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.fctw");
    save_toy_weights(&weights, &path).unwrap();
    let loaded = load_toy_weights(&path).unwrap();
    let (a, b) = (ToyBackend::new(weights), ToyBackend::new(loaded));
    assert_eq!(a.descriptor(), b.descriptor());
    let face = render_face(&ToyCorpusConfig::default(), 3, 1).unwrap();
    assert_eq!(a.embed(&face).unwrap(), b.embed(&face).unwrap());

    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 5);
    std::fs::write(&path, &bytes).unwrap();
    assert!(load_toy_weights(&path).is_err());
}

#[test]
fn cloak_shape_must_match_image() {
    let shape = Shape::new(20, 20);
    let cloak = CloakMask::zero(shape, 0.0, 0.0).unwrap();
    let img = ImagePlane::new(16, 16, vec![0.5; 16 * 16 * 3]).unwrap();
    assert!(matches!(apply_cloak(&img, &cloak), Err(Error::ShapeMismatch { .. })));
}

#[test]
fn report_json_round_trips_with_infinite_psnr() {
    let report = EvalReport {
        config_digest: "0".repeat(64),
        backend_id: "toy-x".into(),
        probes: 3,
        cloaked_identities: 0,
        top1_psr: 0.0,
        top5_psr: 0.0,
        verification: None,
        perceptual: PerceptualSummary::from_pairs(&[(1.0, f64::INFINITY)]),
        robustness: vec![RobustnessRow {
            label: "jpeg q30".into(),
            transform: TransformSpec::Jpeg { quality: 30 },
            n: 1,
            psr: 0.0,
        }],
    };
    let json = report.to_json();
    assert!(json.contains("\"psnr_min\": null"));
    assert_eq!(EvalReport::from_json(&json).unwrap(), report);
}

#[test]
fn manifest_round_trips_next_to_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("faces");
    let cfg = ToyCorpusConfig { identities: 4, images_per_identity: 3, ..Default::default() };
    write_corpus(&cfg, &root, 2).unwrap();
    let manifest = scan_dataset(&root).unwrap();
    let path = manifest_path_for(&root);
    assert_eq!(path, dir.path().join("faces.manifest.json"));
    manifest.save(&path).unwrap();
    assert_eq!(DatasetManifest::load(&path).unwrap(), manifest);
    assert_eq!(manifest.entries.len(), 12);
}
