//! Trains on the default synthetic preset for a few seeds and prints the
//! ablation table for each.

use ldsel::config::Config;
use ldsel::eval::{build_report, render_ablation, render_text};
use ldsel::params::ModelParams;
use ldsel::pipeline::{prepare, run_documents, train_all};
use ldsel::synth::{gen_corpus, gen_kb, split};

fn main() -> ldsel::Result<()> {
    let seeds: Vec<u64> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let seeds = if seeds.is_empty() { vec![0] } else { seeds };
    let mut reports = Vec::new();
    for seed in seeds {
        let cfg = Config::default().with_seed(seed);
        let world = gen_kb(&cfg.synth)?;
        let docs = gen_corpus(&cfg.synth, &world.kb)?;
        let (train, _dev, test) = split(&docs);
        let train = prepare(&train, &world.kb, &world.lexicon, cfg.candidates)?;
        let test = prepare(&test, &world.kb, &world.lexicon, cfg.candidates)?;
        let mut params = ModelParams::new(world.kb.dim());
        let t = std::time::Instant::now();
        let stages = train_all(&mut params, &train, &world.kb, &cfg)?;
        for s in &stages {
            let last = s
                .train
                .as_ref()
                .and_then(|r| r.epoch_losses.last().copied());
            eprintln!(
                "seed {seed} {:?}: last loss {last:?} {:?}",
                s.stage,
                s.h2.as_ref().map(|h| (h.negatives, h.positives_available))
            );
        }
        eprintln!("trained in {:.1?}", t.elapsed());
        let runs = run_documents(&test, &world.kb, &params, &cfg, &[])?;
        let report = build_report(
            &format!("seed {seed}"),
            &runs,
            0.25,
            10,
            serde_json::Value::Null,
        )?;
        eprintln!("{}", render_text(&report));
        reports.push(report);
    }
    println!("{}", render_ablation(&reports));
    Ok(())
}
