//! Sweeps a scenario grid and writes the CBF1 field.
//!
//! cargo run --release --example build_field -- [scenario.json] [out.cbf]

use std::path::PathBuf;
use std::time::Instant;

use predictive_cbf::ScenarioConfig;

mod common;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let scenario = args.first().map(PathBuf::from).unwrap_or_else(|| common::scenario_path("example4.json"));
    let out = args.get(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("example4.cbf"));
    let cfg = ScenarioConfig::load(&scenario).unwrap();
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let started = Instant::now();
    let (field, stats, meta) = cfg.build_field(threads).unwrap();
    field.save(&out, &meta).unwrap();
    println!("{stats:?}");
    println!("feasible fraction {}", stats.feasible_fraction());
    println!("{:?}", field.lipschitz_report());
    println!("wrote {} in {:.1} s", out.display(), started.elapsed().as_secs_f64());
}
