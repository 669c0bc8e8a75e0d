use std::path::Path;

use ell_core::pipeline::PipelineConfig;

#[test]
fn shipped_default_config_matches_builtin_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
    let loaded = PipelineConfig::load(&path).unwrap();
    assert_eq!(loaded.to_toml(), PipelineConfig::default().to_toml());
    loaded.validate().unwrap();
}

#[test]
fn empty_config_is_default() {
    let cfg = PipelineConfig::from_toml("").unwrap();
    assert_eq!(cfg.to_toml(), PipelineConfig::default().to_toml());
}
