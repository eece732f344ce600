//! Trains the desk model on random scenes and compares held-out IoU
//! before and after.
//!
//!     cargo run --release --example train_desk -- [steps]

use std::time::Instant;

use radarocc::commands::load_datasets;
use radarocc::config::RunConfig;
use radarocc::train::{evaluate, run_training, Trainer};

fn main() -> radarocc::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let steps = std::env::args().nth(1).map_or(300, |s| s.parse().expect("steps"));
    let mut cfg = RunConfig {
        max_steps: Some(steps),
        out_dir: std::env::temp_dir().join("rocc_train_desk"),
        ..RunConfig::default()
    };
    if let Ok(w) = std::env::var("ROCC_WEIGHTS") {
        cfg.class_weights = if w == "uniform" { radarocc::config::WeightMode::Uniform } else { cfg.class_weights };
    }
    let t0 = Instant::now();
    let (train, val) = load_datasets(&cfg)?;
    println!("data: {} train / {} val frames in {:.1?}", train.len(), val.len(), t0.elapsed());

    let init = Trainer::new(&cfg, &train)?;
    let before = evaluate(&init.net, &init.params, &val, cfg.hfov_deg, &cfg.ranges)?;
    let t1 = Instant::now();
    let (tr, out) = run_training(&cfg, &train, &val, None, None)?;
    println!("trained {} steps in {:.1?}", out.log.len(), t1.elapsed());
    let after = evaluate(&tr.net, &tr.params, &val, cfg.hfov_deg, &cfg.ranges)?;

    for (k, block) in out.log.chunks(50).enumerate() {
        let raw: f64 = block.iter().map(|l| l.report.raw().iter().sum::<f64>()).sum::<f64>() / block.len() as f64;
        let tot: f64 = block.iter().map(|l| l.report.total).sum::<f64>() / block.len() as f64;
        println!("steps {:>3}..{:<3} raw {raw:.4} normalised {tot:.4}", 50 * k, 50 * k + block.len());
    }
    println!("untrained\n{}", before.to_text());
    println!("trained\n{}", after.to_text());
    Ok(())
}
