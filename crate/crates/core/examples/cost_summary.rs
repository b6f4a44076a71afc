use kutralnet::cost::analyze;
use kutralnet::{build_variant, Variant};

fn main() -> kutralnet::Result<()> {
    let targets = [
        (138_910.0, 76.85e6),
        (173_090.0, 43.27e6),
        (125_730.0, 29.98e6),
        (185_250.0, 24.59e6),
    ];
    for (v, (p, f)) in Variant::ALL.into_iter().zip(targets) {
        let m = build_variant::<f32>(v, 0)?;
        let r = analyze(&m, (84, 84))?;
        println!(
            "{:<26} params {:>8} ({:+.2}%)  flops {:>10} ({:+.2}%)",
            v.name(),
            r.total_params,
            100.0 * (r.total_params as f64 / p - 1.0),
            r.total_flops,
            100.0 * (r.total_flops as f64 / f - 1.0)
        );
    }
    Ok(())
}
