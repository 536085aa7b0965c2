//! Compare analytic BPTT gradients with finite differences on small random models, one
//! line per parameter group.
//!
//! ```text
//! cargo run --release --example gradient_check [seed]
//! ```

use ftsqa::loss::LossKind;
use ftsqa::optim::{gradient_check, random_instance};
use ftsqa::{OutputMode, Variant};

fn main() -> ftsqa::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(0);
    let configs = [
        (Variant::Fts, OutputMode::Affine),
        (Variant::Shared, OutputMode::Affine),
        (Variant::Shared, OutputMode::Concat),
    ];
    for (variant, mode) in configs {
        for kind in [LossKind::FullTime, LossKind::Pooling] {
            let (model, example) = random_instance(variant, mode, kind, seed)?;
            let report = gradient_check(&model, &example, 1e-5)?;
            let (name, err) = report.worst().unwrap_or(("-", 0.0));
            println!(
                "{:<30} {} groups, worst {name} {err:.2e} {}",
                format!("{variant:?}/{mode:?}/{kind:?}"),
                report.groups.len(),
                if report.passed { "ok" } else { "FAILED" }
            );
        }
    }
    Ok(())
}
