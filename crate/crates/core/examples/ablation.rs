//! The four component toggles on one frame: how each changes the input the
//! network sees and its untrained logits. Pass a step count to also train
//! and evaluate every variant (slow).
//!
//!     cargo run --release --example ablation -- [steps]

use radarocc::commands::{ablation_csv, ablation_label, cmd_ablate, logit_digest};
use radarocc::config::{RunConfig, ABLATION_NAMES};
use radarocc::dataset::simulate_tensors;
use radarocc::network::Network;
use radarocc::reduction::{range_coverage, reduce};
use radarocc::sim::random_scene;

fn main() -> radarocc::Result<()> {
    let base = RunConfig::default();
    let (tensors, _) = simulate_tensors(&random_scene(31, 1), &base.radar())?;
    let mut variants = vec![(None, base.clone())];
    for n in ABLATION_NAMES {
        variants.push((Some(n), base.ablated(n)?));
    }
    for (name, c) in &variants {
        let input = reduce(&tensors[0], &c.reduce())?;
        let net = Network::new(c.net())?;
        let params = net.init_params(c.seed)?;
        let (_, h) = range_coverage(&input);
        println!(
            "{:<8} {} params, {} input cells (range entropy {h:.3}), logits {:016x}",
            ablation_label(*name),
            params.iter().map(|p| p.value.len()).sum::<usize>(),
            input.num_entries(),
            logit_digest(c, &params, &input)?
        );
    }

    if let Some(steps) = std::env::args().nth(1) {
        let cfg = RunConfig {
            max_steps: Some(steps.parse().expect("steps")),
            out_dir: std::env::temp_dir().join("rocc_ablation"),
            ..base
        };
        print!("{}", ablation_csv(&cmd_ablate(&cfg)?));
    }
    Ok(())
}
