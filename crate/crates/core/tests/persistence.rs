//! Artifacts written to disk reload to the same values and the same
//! downstream results.

use ldsel::config::Config;
use ldsel::corpus::{load_corpus, save_corpus, Lexicon};
use ldsel::kb::KnowledgeBase;
use ldsel::params::ModelParams;
use ldsel::pipeline::{doc_scores, prepare, run_documents, train_all, Stage};
use ldsel::synth::{gen_corpus, gen_kb, split, SynthConfig};
use ldsel::Error;

fn small_config(seed: u64) -> Config {
    let mut cfg = Config::default().with_seed(seed);
    cfg.synth = SynthConfig {
        documents: 18,
        entities: 60,
        seed,
        ..Default::default()
    };
    cfg
}

#[test]
fn world_round_trips_through_files() {
    let cfg = small_config(4);
    let world = gen_kb(&cfg.synth).unwrap();
    let docs = gen_corpus(&cfg.synth, &world.kb).unwrap();
    let dir = tempfile::tempdir().unwrap();
    world.kb.save(dir.path().join("kb")).unwrap();
    world.lexicon.save(dir.path().join("lex.jsonl")).unwrap();
    save_corpus(&docs, dir.path().join("docs.jsonl")).unwrap();

    let kb = KnowledgeBase::load(dir.path().join("kb")).unwrap();
    let lexicon = Lexicon::load(dir.path().join("lex.jsonl")).unwrap();
    let back = load_corpus(dir.path().join("docs.jsonl")).unwrap();
    assert_eq!(kb, world.kb);
    assert_eq!(lexicon, world.lexicon);
    assert_eq!(back, docs);
    assert_eq!(
        prepare(&back, &kb, &lexicon, 5).unwrap(),
        prepare(&docs, &world.kb, &world.lexicon, 5).unwrap()
    );
}

#[test]
fn trained_parameters_reload_to_identical_predictions() {
    let cfg = small_config(6);
    let world = gen_kb(&cfg.synth).unwrap();
    let docs = gen_corpus(&cfg.synth, &world.kb).unwrap();
    let (train, _, test) = split(&docs);
    let train = prepare(&train, &world.kb, &world.lexicon, cfg.candidates).unwrap();
    let test = prepare(&test, &world.kb, &world.lexicon, cfg.candidates).unwrap();
    let mut params = ModelParams::new(world.kb.dim());
    let reports = train_all(&mut params, &train, &world.kb, &cfg).unwrap();
    assert_eq!(
        reports.iter().map(|r| r.stage.unwrap()).collect::<Vec<_>>(),
        Stage::ALL.to_vec()
    );

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    params.save(&path).unwrap();
    let loaded = ModelParams::load(&path).unwrap();
    assert_eq!(loaded, params);
    for inst in &test {
        let a = doc_scores(inst, &world.kb, &params, cfg.window, false).unwrap();
        let b = doc_scores(inst, &world.kb, &loaded, cfg.window, false).unwrap();
        assert_eq!(a.psi(), b.psi());
    }
    assert_eq!(
        run_documents(&test, &world.kb, &params, &cfg, &[]).unwrap(),
        run_documents(&test, &world.kb, &loaded, &cfg, &[]).unwrap()
    );
}

#[test]
fn unknown_parameter_version_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    let mut params = ModelParams::new(4);
    params.version = 99;
    std::fs::write(&path, serde_json::to_string(&params).unwrap()).unwrap();
    assert!(ModelParams::load(&path).is_err());
    assert!(matches!(
        ModelParams::load(dir.path().join("absent.json")),
        Err(Error::Missing(_))
    ));
}

#[test]
fn config_round_trips_through_toml() {
    let mut cfg = small_config(3);
    cfg.search.beam = 2;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    assert_eq!(Config::load(&path).unwrap(), cfg);
}
