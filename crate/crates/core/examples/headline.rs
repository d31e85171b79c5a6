//! Mini-SynCaps experiment: train with and without the text-text objective
//! and compare R@1 on Test versus Test^rev.
//!
//! Environment knobs: EPOCHS, SEEDS (count), LAMBDA, LR, INIT, BANDS, CLIPS, JOBS.

use std::time::Instant;

use chronoret::audio::{FeatureConfig, SoundBank};
use chronoret::corpus::{LossConfig, Split};
use chronoret::cue::CueLexicon;
use chronoret::data::extract_features;
use chronoret::eval::{evaluate, Direction, EvalConfig};
use chronoret::syncaps::{generate, SynCapsConfig};
use chronoret::train::{run_seeds, TrainConfig};

fn env<T: std::str::FromStr>(k: &str, d: T) -> T {
    std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d)
}

fn main() -> chronoret::Result<()> {
    let t0 = Instant::now();
    let bands: usize = env("BANDS", 8);
    let jobs: usize = env("JOBS", 4);
    let bank = SoundBank::builtin(16, env("CLIPS", 20), 16_000, 0)?;
    let m = generate(&bank, &SynCapsConfig { sizes: (800, 100, 100), seed: 0, ..Default::default() })?;
    let feats = extract_features(&m, &Split::ALL, None, FeatureConfig { frame_s: 0.5, bands }, jobs)?;
    eprintln!("data ready in {:.1}s", t0.elapsed().as_secs_f64());
    let lex = CueLexicon::default();
    let seeds: Vec<u64> = (0..env("SEEDS", 3u64)).collect();
    for lambda in [0.0, env("LAMBDA", 10.0)] {
        let mut cfg = TrainConfig { epochs: env("EPOCHS", 40), ..Default::default() };
        cfg.adam.lr = env("LR", 1e-3);
        cfg.model.init_scale = env("INIT", 1.0);
        cfg.loss = LossConfig { lambda, ..LossConfig::default() };
        let t = Instant::now();
        let cks = run_seeds(&m, &feats, &cfg, &lex, &seeds, jobs)?;
        let rep = evaluate(&cks, &m, &feats, &lex, &EvalConfig::default())?;
        println!("lambda={lambda} ({:.1}s)", t.elapsed().as_secs_f64());
        for ck in &cks {
            println!("  seed {} best epoch {} last {:?}", ck.seed, ck.best_epoch, ck.history.last().unwrap());
        }
        print!("{}", rep.to_table());
        let d = Direction::TextToAudio;
        println!("  gap T->A {:.2}", rep.gap("Test^rev", d).unwrap());
    }
    eprintln!("total {:.1}s", t0.elapsed().as_secs_f64());
    Ok(())
}
