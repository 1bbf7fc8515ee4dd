use std::path::{Path, PathBuf};

use predictive_cbf::{BarrierField, ScenarioConfig};

pub fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

#[allow(dead_code)]
/// `--field <path>` loads a prebuilt field, otherwise the scenario's grid
/// is swept here.
pub fn field_for(cfg: &ScenarioConfig) -> BarrierField {
    let args: Vec<String> = std::env::args().collect();
    if let Some(i) = args.iter().position(|a| a == "--field") {
        let (field, meta) = BarrierField::load(Path::new(&args[i + 1])).expect("readable field");
        cfg.check_provenance(&meta).expect("field built from this scenario");
        return field;
    }
    eprintln!("sweeping {} nodes (pass --field to reuse a build)", cfg.grid.node_count());
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    cfg.build_field(threads).expect("sweep").0
}
