// Timing probe: one SCA run on the desk scenario.
use isac_core::beamformer::*;
use isac_core::rng::SeedRng;
use isac_core::scenario::presets::desk_scenario;
use std::time::Instant;

fn main() {
    let sc = desk_scenario();
    let th = DesignThresholds::default();
    let t0 = Instant::now();
    let expansion = initialize(&sc, &th, SeedRng::seed(7));
    println!("init power {:.6} (budget {})", expansion.total_power(), sc.power_budget);
    let t1 = Instant::now();
    match solve_iteration(&sc, &th, &expansion) {
        Ok((pt, steps)) => {
            println!(
                "iter1: eta_b {:.4e} ({:.2} dB) power {:.3} newton {} in {:.2?}",
                pt.eta_b,
                10.0 * pt.eta_b.log10(),
                pt.design.total_power(),
                steps,
                t1.elapsed()
            );
            let t2 = Instant::now();
            match solve_iteration(&sc, &th, &pt.design) {
                Ok((pt2, steps2)) => println!(
                    "iter2: eta_b {:.4e} newton {} in {:.2?}",
                    pt2.eta_b, steps2, t2.elapsed()
                ),
                Err(e) => println!("iter2 failed: {e}"),
            }
        }
        Err(e) => println!("iter1 failed: {e}"),
    }
    println!("total {:.2?}", t0.elapsed());
}
