//! Prints the size chain, parameter count and 1x1 geometry check of every
//! built-in network preset, plus any configs given on the command line.
//!
//! cargo run --example inspect_presets -- "1Deconv(3)&2Conv@13"

use adsm_stereo::network::preset_names;
use adsm_stereo::pipeline::inspect;

fn main() -> adsm_stereo::Result<()> {
    let mut configs = preset_names();
    configs.extend(std::env::args().skip(1));
    for name in configs {
        let report = inspect(&name, 64)?;
        let chain: Vec<String> = report.size_chain().iter().map(|s| s.to_string()).collect();
        println!(
            "{:<24} {:<44} {:>9} params  {}",
            report.name,
            chain.join("->"),
            report.parameters,
            if report.passes() { "PASS" } else { "FAIL" }
        );
    }
    Ok(())
}
