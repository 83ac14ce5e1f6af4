//! Finite-difference gradient check of every parameterised module.
//!
//! cargo run --release --example gradient_check -- [seed]

use sentctx::harness::module_gradient_checks;
use sentctx::numcore::GradCheckOptions;

fn main() -> sentctx::Result<()> {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let opts = GradCheckOptions {
        seed,
        ..Default::default()
    };
    for check in module_gradient_checks(seed, &opts)? {
        println!(
            "{:22} {}  max rel error {:.2e}",
            check.module,
            if check.report.passed() {
                "ok  "
            } else {
                "FAIL"
            },
            check.report.max_rel_error()
        );
        for p in &check.report.params {
            println!("    {:40} {:.2e}", p.name, p.max_rel_error);
        }
    }
    Ok(())
}
