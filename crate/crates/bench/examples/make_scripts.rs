//! Writes the mock scripts for the bundled cases.
//!
//! cargo run -p gridsynth-bench --example make_scripts [-- <cases dir> <out dir>]

use std::path::PathBuf;

use gridsynth_agents::AgentConfig;
use gridsynth_bench::{load_cases, scripts::shipped_scripts};

fn main() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..");
    let mut args = std::env::args().skip(1);
    let cases_dir = args.next().map(PathBuf::from).unwrap_or_else(|| root.join("cases"));
    let out_dir = args.next().map(PathBuf::from).unwrap_or_else(|| root.join("scripts"));
    let cases = load_cases(&cases_dir).expect("cases load");
    std::fs::create_dir_all(&out_dir).expect("output directory");
    for (name, text) in shipped_scripts(&cases, &AgentConfig::default()) {
        let path = out_dir.join(name);
        std::fs::write(&path, text).expect("write script");
        println!("{}", path.display());
    }
}
