//! Per-layer multiply-accumulate counts for every architecture on a 3x64x64 input.
//!
//!     cargo run --example mac_report

use orbitfilter::Arch;

fn main() -> orbitfilter::Result<()> {
    for arch in Arch::ALL {
        let report = arch.build(0)?.mac_report()?;
        println!("{} ({})", arch.display_name(), arch.name());
        for l in &report.layers {
            if l.macs > 0 {
                println!("  {:>3} {:<10} {:>10}  -> {:?}", l.index, l.kind, l.macs, l.output);
            }
        }
        println!("  total {} MACs, {} parameters\n", report.total, report.params);
    }
    Ok(())
}
