use std::sync::OnceLock;

use pgt_core::continual::{
    collect_task_datasets, continual_table, final_results, fisher_diag, pretrained_results,
    run_baseline, run_mtl, run_pgt_cl, Baseline, ContinualConfig, ReplayBuffer, TaskPrompt,
};
use pgt_core::env::{EnvVariant, TaskId};
use pgt_core::eval::Cell;
use pgt_core::policy::{demo_trajectory, pretrain, Adapter, PolicyBundle, PretrainConfig};
use pgt_core::tuning::{tune, Objective, PreferenceDataset, Trainable, TuneConfig};

const TASKS: [TaskId; 3] = [TaskId::Craft, TaskId::Hunt, TaskId::Place];

struct Setup {
    bundle: PolicyBundle,
    prompts: Vec<TaskPrompt>,
    datasets: Vec<PreferenceDataset>,
}

fn config() -> ContinualConfig {
    ContinualConfig {
        tune: TuneConfig {
            collect_n: 30,
            k_pos: 8,
            k_neg: 8,
            epochs: 6,
            eval_n: 12,
            ..TuneConfig::default()
        },
        replay_quota: 5,
        ..ContinualConfig::default()
    }
}

fn setup() -> &'static Setup {
    static SETUP: OnceLock<Setup> = OnceLock::new();
    SETUP.get_or_init(|| {
        let pc = PretrainConfig {
            epochs: 3,
            demos_per_task: 10,
            ..PretrainConfig::default()
        };
        let (bundle, _) = pretrain(&TaskId::ALL, &pc).unwrap();
        let prompts: Vec<TaskPrompt> = TASKS
            .iter()
            .map(|&task| TaskPrompt {
                task,
                latent: bundle
                    .encode_prompt(
                        &demo_trajectory(task, EnvVariant::in_distribution(), 0.3, 1000).unwrap(),
                    )
                    .unwrap(),
            })
            .collect();
        let datasets = collect_task_datasets(&bundle, &prompts, &config().tune).unwrap();
        Setup {
            bundle,
            prompts,
            datasets,
        }
    })
}

fn run(method: Baseline, cc: &ContinualConfig) -> pgt_core::continual::BaselineRun {
    let s = setup();
    run_baseline(&s.bundle, &s.prompts, &s.datasets, cc, method).unwrap()
}

fn distance(a: &Adapter, b: &Adapter) -> f64 {
    a.params
        .iter()
        .zip(&b.params)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[test]
fn latent_store_has_zero_forgetting() {
    let s = setup();
    let pgt = run_pgt_cl(&s.bundle, &s.prompts, &s.datasets, &config()).unwrap();
    assert_eq!(pgt.store.len(), TASKS.len());
    assert_eq!(pgt.store.footprint(), TASKS.len() * s.bundle.latent_dim());
    for i in 0..TASKS.len() {
        for j in i..TASKS.len() {
            assert_eq!(
                pgt.stages[j][i], pgt.stages[i][i],
                "task {i} changed at stage {j}"
            );
        }
    }
}

#[test]
fn disabled_regularizers_reduce_to_naive_sequential_tuning() {
    let ncl = run(Baseline::Ncl, &config());
    let ewc = run(
        Baseline::Ewc,
        &ContinualConfig {
            lambda_ewc: 0.0,
            ..config()
        },
    );
    let er = run(
        Baseline::Er,
        &ContinualConfig {
            replay_quota: 0,
            ..config()
        },
    );
    let kd = run(
        Baseline::Kd,
        &ContinualConfig {
            lambda_kd: 0.0,
            ..config()
        },
    );
    for other in [&ewc, &er, &kd] {
        assert_eq!(other.snapshots, ncl.snapshots, "{}", other.method);
        assert_eq!(other.stages, ncl.stages, "{}", other.method);
    }
}

#[test]
fn first_stage_equals_single_task_full_tuning() {
    let s = setup();
    let ncl = run(Baseline::Ncl, &config());
    let cfg = TuneConfig {
        trainable: Trainable::Full,
        ..config().tune
    };
    let single = tune(&s.bundle, &s.prompts[0].latent, &s.datasets[0], &cfg).unwrap();
    assert_eq!(ncl.snapshots[0], single.adapter);
}

#[test]
fn a_huge_ewc_weight_pins_the_parameters_the_first_task_relies_on() {
    let s = setup();
    let ncl = run(Baseline::Ncl, &config());
    let ewc = run(
        Baseline::Ewc,
        &ContinualConfig {
            lambda_ewc: 1e9,
            ..config()
        },
    );
    assert_eq!(ewc.snapshots[0], ncl.snapshots[0]);
    let cfg = TuneConfig {
        trainable: Trainable::Full,
        ..config().tune
    };
    let fisher = fisher_diag(
        &s.bundle.net,
        &ncl.snapshots[0],
        &s.datasets[0].pairs,
        &s.prompts[0].latent,
        TASKS[0],
        &Objective::from_config(&cfg),
    )
    .unwrap();
    // Fisher-weighted drift away from the first-stage weights; Adam keeps
    // jittering pinned weights by about one step, so the bound is relative
    let drift = |a: &Adapter, b: &Adapter| -> f64 {
        a.params
            .iter()
            .zip(&b.params)
            .zip(&fisher.values)
            .map(|((x, y), f)| f * (x - y).powi(2))
            .sum()
    };
    let pinned = drift(&ewc.snapshots[1], &ewc.snapshots[0]);
    let free = drift(&ncl.snapshots[1], &ncl.snapshots[0]);
    assert!(free > 0.0);
    assert!(
        pinned < 0.05 * free,
        "EWC drift {pinned} vs unregularized {free}"
    );
    assert!(
        distance(&ewc.snapshots[1], &ewc.snapshots[0])
            < distance(&ncl.snapshots[1], &ncl.snapshots[0])
    );
}

#[test]
fn replay_and_distillation_change_later_stages_only() {
    let ncl = run(Baseline::Ncl, &config());
    for method in [Baseline::Er, Baseline::Kd, Baseline::Ewc] {
        let r = run(method, &config());
        assert_eq!(r.snapshots[0], ncl.snapshots[0], "{method}");
        assert_ne!(r.snapshots[1], ncl.snapshots[1], "{method}");
    }
}

#[test]
fn replay_buffer_keeps_the_quota_per_task() {
    let s = setup();
    let mut buf = ReplayBuffer::new(5);
    for (p, d) in s.prompts.iter().zip(&s.datasets) {
        buf.store(p.task, &p.latent, d).unwrap();
    }
    assert_eq!(buf.len(), 5 * TASKS.len());
    assert_eq!(buf.pairs(TaskId::Hunt).unwrap(), &s.datasets[1].pairs[..5]);
    assert!(buf
        .store(TaskId::Hunt, &s.prompts[1].latent, &s.datasets[1])
        .is_err());
    let mut big = ReplayBuffer::new(10_000);
    big.store(TaskId::Craft, &s.prompts[0].latent, &s.datasets[0])
        .unwrap();
    assert_eq!(big.len(), s.datasets[0].pairs.len());
}

#[test]
fn tables_have_the_lower_triangular_layout() {
    let s = setup();
    let cc = config();
    let pretrained = pretrained_results(&s.bundle, &s.prompts, &cc.tune).unwrap();
    let pgt = run_pgt_cl(&s.bundle, &s.prompts, &s.datasets, &cc).unwrap();
    let ncl = run(Baseline::Ncl, &cc);
    let table = continual_table(&TASKS, &ncl.stages, &pretrained, &final_results(&pgt)).unwrap();
    assert_eq!(table.rows.len(), TASKS.len() - 1);
    assert_eq!(table.columns.len(), 1 + TASKS.len() + 2);
    // task 2 (row 1) is not evaluated before it is trained
    assert_eq!(table.rows[1][1], Cell::Empty);
    assert!(matches!(table.rows[0][1], Cell::Value { .. }));

    let mtl = run_mtl(&s.bundle, &s.prompts, &s.datasets, &cc).unwrap();
    assert_eq!(
        mtl.union_pairs,
        s.datasets.iter().map(|d| d.pairs.len()).sum::<usize>()
    );
    assert_eq!(
        (mtl.results.len(), mtl.ensemble.len()),
        (TASKS.len(), TASKS.len())
    );
}

#[test]
fn continual_configs_are_validated() {
    let s = setup();
    for bad in [
        ContinualConfig {
            lambda_ewc: -1.0,
            ..config()
        },
        ContinualConfig {
            lambda_kd: f64::NAN,
            ..config()
        },
    ] {
        assert!(run_baseline(&s.bundle, &s.prompts, &s.datasets, &bad, Baseline::Ewc).is_err());
    }
    let twice = vec![s.prompts[0].clone(), s.prompts[0].clone()];
    let data = vec![s.datasets[0].clone(), s.datasets[0].clone()];
    assert!(run_pgt_cl(&s.bundle, &twice, &data, &config()).is_err());
}
