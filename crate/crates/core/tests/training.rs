use cardiomodal::manifest::Split;
use cardiomodal::registry::{build_dataset, build_registry, DecomposeConfig, DEFAULT_TEST_KIND};
use cardiomodal::synth::{make_toy_classes, ToyConfig};
use cardiomodal::trainer::{evaluate_samples, train, TrainConfig};
use cardiomodal::vit::{VitConfig, VitParams};

#[test]
fn tiny_vit_fits_the_toy_classes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    std::fs::create_dir_all(&data).unwrap();
    let toy = ToyConfig { per_class: 5, seed: 3, ..ToyConfig::default() };
    let manifest = make_toy_classes(&toy, &data).unwrap();
    let reg = dir.path().join("registry");
    let index = build_registry(&manifest, &data, &reg, &DecomposeConfig::default(), 4).unwrap();
    let spec = build_dataset(&index, reg.join("index.json"), 1, [0.6, 0.2, 0.2], 3, DEFAULT_TEST_KIND).unwrap();
    let train_set = spec.samples(dir.path(), Split::Train).unwrap();
    let val_set = spec.samples(dir.path(), Split::Val).unwrap();

    let model = VitConfig::tiny(4);
    let cfg = TrainConfig { max_iters: 300, seed: 3, ..TrainConfig::default() };
    let init = VitParams::init(&model, 3).unwrap();
    let report = train(&model, &spec.classes, init, &train_set, &val_set, &cfg, &dir.path().join("run"), false).unwrap();
    let (_, acc) = evaluate_samples(&report.params, &model, &train_set).unwrap();
    assert!(acc >= 0.90, "train accuracy {acc}");
}
