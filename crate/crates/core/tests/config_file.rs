use std::path::PathBuf;

use cm2::experiment::ExperimentConfig;

#[test]
fn shipped_desk_config_matches_defaults() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml");
    let cfg = ExperimentConfig::load(&path).unwrap();
    let d = ExperimentConfig::default();
    assert_eq!(cfg.model, d.model);
    assert_eq!(cfg.train, d.train);
    assert_eq!(cfg.loss, d.loss);
    assert_eq!(cfg.retrieval, d.retrieval);
    assert_eq!(cfg.data.train_annotations, Some(PathBuf::from("data/train.json")));
    assert!(cfg.data.memory.is_none());
}
