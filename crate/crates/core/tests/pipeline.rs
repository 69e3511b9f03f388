use cmc_forge::ablation::{run_ablation_suite, RunCache, Suite};
use cmc_forge::container::Container;
use cmc_forge::dataset::Dataset;
use cmc_forge::trainer::{run_experiment, Branches, Evaluator, ExperimentConfig, RunOptions};

fn tiny() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.dataset.train_scenes = 2;
    c.dataset.eval_scenes = 1;
    c.dataset.rig.views = 4;
    c.dataset.rig.width = 24;
    c.dataset.rig.height = 24;
    c.dataset.rig.focal = 20.0;
    c.sampling.budget = 200;
    c.schedule.total_epochs = 2;
    c.schedule.base_epochs = 1;
    c.schedule.ramp_epochs = 1;
    c
}

#[test]
fn checkpoint_reload_reproduces_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny();
    let data = Dataset::generate(&config.dataset, config.seed).unwrap();
    let out = dir.path().join("run");
    let summary = run_experiment(&config, &data, &RunOptions { out_dir: Some(out.clone()), ..Default::default() }).unwrap();
    let (container, _) = Container::read(summary.last_checkpoint.as_ref().unwrap()).unwrap();
    let mut branches = Branches::init(&config);
    branches.load(&container).unwrap();
    assert_eq!(branches, summary.branches);
    let again = Evaluator::new(&data).unwrap().evaluate(&branches, config.schedule.total_epochs).unwrap();
    assert_eq!(&again, summary.final_metrics());
}

#[test]
fn paired_variants_share_init_and_cache() {
    let cache = RunCache::default();
    let seeds = [0, 1, 2, 3, 4];
    let first = run_ablation_suite(Suite::Main, &tiny(), &seeds, &cache).unwrap();
    for s in seeds {
        let inits: Vec<&str> = first.runs.iter().filter(|r| r.seed == s).map(|r| r.init_hash.as_str()).collect();
        assert_eq!(inits.len(), 2);
        assert_eq!(inits[0], inits[1]);
    }
    let distinct: std::collections::HashSet<_> = first.runs.iter().map(|r| &r.init_hash).collect();
    assert_eq!(distinct.len(), seeds.len());

    // a second pass is served from the cache and must agree exactly
    let second = run_ablation_suite(Suite::Main, &tiny(), &seeds, &cache).unwrap();
    assert_eq!(first, second);
    assert_eq!(first.trends.len(), 2);
    assert!(first.trends.iter().all(|t| t.seeds.len() == seeds.len() && (0.0..=1.0).contains(&t.p_value)));
}
