//! Runs the toy long-tail experiment over several seeds and prints the
//! rare-category recall of both training runs.

use vil_core::toy::{run_seed, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seeds: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(5);
    let cfg: ExperimentConfig = match std::env::args().nth(2) {
        Some(path) => toml::from_str(&std::fs::read_to_string(path)?)?,
        None => ExperimentConfig::default(),
    };
    let mut wins = 0;
    for seed in 0..seeds {
        let o = run_seed(&cfg, seed)?;
        let last = o.vil_epochs.last();
        println!(
            "seed {seed}: pretrained {:.3} baseline {:.3} vil {:.3} margin {:+.3} (virtual {}, kappa {:.2}, tau {:?}, triplets {:?}, {:.1}s)",
            o.pretrained.value(),
            o.baseline.value(),
            o.vil.value(),
            o.margin(),
            o.virtual_images,
            o.kappa,
            last.and_then(|r| r.tau_bin),
            last.map(|r| r.pseudo_triplets),
            o.seconds
        );
        wins += (o.margin() > 0.0) as usize;
    }
    println!("{wins}/{seeds} seeds improved");
    Ok(())
}
