use std::path::{Path, PathBuf};
use std::time::Instant;

use seqreward::pipeline::{
    file_hash, ExperimentConfig, Pipeline, RewardVariant, Stage, AGENT_SUMMARY_FILE, METRICS_FILE,
    REPORT_FILE,
};
use seqreward::Error;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn micro(out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::load(configs().join("micro.toml")).unwrap();
    c.out_dir = out.to_path_buf();
    c
}

/// Two domains so the wrong-domain analysis has negatives.
const TWO_DOMAIN: &str = r#"
domains = ["restaurant", "hotel"]
acts = ["inform", "request"]
slots = ["area", "phone"]
state_dim = 40
valid_triples = [
    ["restaurant", "inform", "area"], ["restaurant", "inform", "phone"],
    ["restaurant", "request", "area"], ["restaurant", "request", "phone"],
    ["hotel", "inform", "area"], ["hotel", "inform", "phone"],
    ["hotel", "request", "area"], ["hotel", "request", "phone"],
]

[roles]
inform = "inform"
request = "request"
constraint_slots = ["area"]
request_slots = ["phone"]
"#;

fn two_domain(dir: &Path) -> ExperimentConfig {
    std::fs::write(dir.join("two.toml"), TWO_DOMAIN).unwrap();
    let mut c = micro(&dir.join("out"));
    c.ontology = Some(dir.join("two.toml"));
    c
}

fn manifest_bytes(out: &Path) -> Vec<Vec<u8>> {
    Stage::ALL
        .iter()
        .map(|s| std::fs::read(out.join("manifests").join(format!("{}.json", s.name()))).unwrap())
        .collect()
}

#[test]
fn micro_reproduce_is_fast_hash_linked_and_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(micro(dir.path())).unwrap();
    let t = Instant::now();
    let outcomes = p.reproduce().unwrap();
    assert!(
        t.elapsed().as_secs() < 60,
        "micro pipeline took {:?}",
        t.elapsed()
    );
    assert!(outcomes.iter().all(|o| !o.skipped));

    // each stage's inputs are exactly its upstream outputs
    let m: Vec<_> = outcomes.iter().map(|o| &o.manifest).collect();
    assert!(m[0].inputs.is_empty());
    assert_eq!(m[1].inputs, m[0].outputs);
    for (k, v) in m[0].outputs.iter().chain(&m[1].outputs) {
        assert_eq!(m[2].inputs.get(k), Some(v));
    }
    let report = std::fs::read_to_string(dir.path().join(REPORT_FILE)).unwrap();
    for o in &outcomes {
        for h in o.manifest.outputs.values() {
            assert!(
                report.contains(h.as_str()),
                "report misses artifact hash {h}"
            );
        }
    }
    let summaries = p.read_agent_summaries().unwrap();
    assert_eq!(
        summaries.len(),
        9,
        "three algorithms by three reward variants"
    );

    let before = (
        manifest_bytes(dir.path()),
        std::fs::read(dir.path().join(REPORT_FILE)).unwrap(),
    );
    let again = p.reproduce().unwrap();
    assert!(again.iter().all(|o| o.skipped));
    let after = (
        manifest_bytes(dir.path()),
        std::fs::read(dir.path().join(REPORT_FILE)).unwrap(),
    );
    assert_eq!(before, after);

    // forcing a rerun rewrites identical bytes
    Pipeline::new(micro(dir.path()))
        .unwrap()
        .force(true)
        .reproduce()
        .unwrap();
    assert_eq!(manifest_bytes(dir.path()), before.0);
}

#[test]
fn master_seed_decides_everything() {
    let (a, b, c) = (
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
    );
    for d in [&a, &b] {
        Pipeline::new(micro(d.path()))
            .unwrap()
            .run_stage(Stage::Corpus)
            .unwrap();
    }
    let mut other = micro(c.path());
    other.seed = 1;
    Pipeline::new(other)
        .unwrap()
        .run_stage(Stage::Corpus)
        .unwrap();
    let h = |d: &tempfile::TempDir| file_hash(&d.path().join("corpus.txt")).unwrap();
    assert_eq!(h(&a), h(&b));
    assert_ne!(h(&a), h(&c));
}

#[test]
fn stale_upstream_artifacts_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(micro(dir.path())).unwrap();
    p.run_stage(Stage::Corpus).unwrap();
    p.run_stage(Stage::Dae).unwrap();

    // downstream of a missing stage
    let err = p.run_stage(Stage::Eval).unwrap_err();
    assert!(
        matches!(err, Error::Configuration(ref m) if m.contains("train-gan")),
        "{err}"
    );

    // tampered corpus: the DAE stage names both hashes
    let corpus = dir.path().join("corpus.txt");
    let original = std::fs::read(&corpus).unwrap();
    let recorded = file_hash(&corpus).unwrap();
    let mut edited = original.clone();
    edited.extend_from_slice(b"\n");
    std::fs::write(&corpus, &edited).unwrap();
    let err = p.run_stage(Stage::Gan).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::Configuration(_)));
    assert!(
        msg.contains(&recorded[..12]) && msg.contains("corpus.txt"),
        "{msg}"
    );
    std::fs::write(&corpus, &original).unwrap();

    // config drift after a stage ran
    let mut changed = micro(dir.path());
    changed.dae.latent += 1;
    let err = Pipeline::new(changed)
        .unwrap()
        .run_stage(Stage::Gan)
        .unwrap_err();
    assert!(err.to_string().contains("rerun `train-dae`"), "{err}");

    // corpus regenerated with another seed: the old DAE is stale
    let mut reseeded = micro(dir.path());
    reseeded.seed = 9;
    let p2 = Pipeline::new(reseeded).unwrap();
    p2.run_stage(Stage::Corpus).unwrap();
    let err = p2.run_stage(Stage::Gan).unwrap_err();
    assert!(err.to_string().contains("dae"), "{err}");
}

#[test]
fn shaping_knobs_do_not_invalidate_the_reward_model() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(micro(dir.path())).unwrap();
    for s in [Stage::Corpus, Stage::Dae, Stage::Gan] {
        p.run_stage(s).unwrap();
    }
    let mut c = micro(dir.path());
    c.shaping.alpha = 1.0;
    let p = Pipeline::new(c).unwrap();
    assert!(p.verify(Stage::Gan).is_ok());
    assert_eq!(p.load_estimator().unwrap().config().alpha, 1.0);
}

#[test]
fn eval_table_lists_every_score_variant() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(two_domain(dir.path())).unwrap();
    for s in [Stage::Corpus, Stage::Dae, Stage::Gan, Stage::Eval] {
        p.run_stage(s).unwrap();
    }
    let out = dir.path().join("out");
    let table = std::fs::read_to_string(out.join(METRICS_FILE)).unwrap();
    let mut lines = table.lines();
    let columns = lines.next().unwrap().split(',').count();
    let rows: Vec<&str> = lines.collect();
    let names: Vec<&str> = rows.iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(names, ["r_d", "r_a", "r_s", "seqavg", "seqprd"]);
    assert!(rows.iter().all(|r| r.split(',').count() == columns));
    for n in names {
        assert!(out.join(format!("eval/hist_{n}.svg")).exists());
    }
    let first = std::fs::read(out.join(METRICS_FILE)).unwrap();
    Pipeline::new(two_domain(dir.path()))
        .unwrap()
        .force(true)
        .run_stage(Stage::Eval)
        .unwrap();
    assert_eq!(std::fs::read(out.join(METRICS_FILE)).unwrap(), first);
}

#[test]
fn interrupted_agent_stage_resumes_per_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = micro(dir.path());
    c.agents.variants = vec![RewardVariant::Vanilla];
    let p = Pipeline::new(c.clone()).unwrap();
    p.reproduce().unwrap();
    let summary = std::fs::read(dir.path().join(AGENT_SUMMARY_FILE)).unwrap();
    // lose the stage manifest and one run, as if killed midway
    std::fs::remove_file(p.manifest_path(Stage::Agents)).unwrap();
    std::fs::remove_file(dir.path().join("agents/dqn-vanilla/run1.csv")).unwrap();
    let o = Pipeline::new(c).unwrap().run_stage(Stage::Agents).unwrap();
    assert!(!o.skipped);
    assert_eq!(
        std::fs::read(dir.path().join(AGENT_SUMMARY_FILE)).unwrap(),
        summary
    );
}

#[test]
fn config_files_resolve_and_validate() {
    let c = ExperimentConfig::load(configs().join("micro.toml")).unwrap();
    assert!(c.ontology.as_ref().unwrap().is_file());
    let desk = ExperimentConfig::load(configs().join("desk.toml")).unwrap();
    assert_eq!(
        desk,
        ExperimentConfig::default(),
        "desk.toml restates the defaults"
    );

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "ontology = \"nowhere.toml\"\n").unwrap();
    assert!(matches!(
        ExperimentConfig::load(&path),
        Err(Error::Configuration(_))
    ));
}
