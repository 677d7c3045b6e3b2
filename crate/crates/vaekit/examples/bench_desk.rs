use std::time::Instant;
use vaekit::datasets::generate_synthetic;
use vaekit::models::ArchitectureConfig;
use vaekit::objectives::ObjectiveConfig;
use vaekit::trainer::{train, TrainConfig};

fn main() {
    let ds = generate_synthetic(32, &[8, 8, 3], 0).unwrap();
    let arch = ArchitectureConfig::desk();
    for batch in [16usize, 32] {
        let cfg = TrainConfig::quick(100, batch, 0);
        let t = Instant::now();
        let out = train(&arch, &ObjectiveConfig::beta(1.0), &cfg, &ds.images, None).unwrap();
        let dt = t.elapsed().as_secs_f64();
        println!(
            "batch {batch}: 100 steps in {dt:.2}s ({:.1} ms/step) final total {:.3}",
            dt * 10.0,
            out.log.records.last().unwrap().total
        );
    }
}
