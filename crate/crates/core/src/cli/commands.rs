use std::fmt::Write as _;
use std::path::Path;

use super::config::{claim_output_dir, RunConfig};
use super::serve::{serve, LabelServer};
use super::CliError;
use crate::continual::{
    collect_task_datasets, continual_table, final_results, pretrained_results, run_baseline,
    run_mtl, run_pgt_cl, Baseline, TaskPrompt,
};
use crate::env::{EnvVariant, TaskId};
use crate::eval::{
    beta_sweep, eval_table, evaluate, prompt_study, report, Cell, EvalResult, Format, Table,
};
use crate::policy::{
    demo_trajectory, load_adapter, load_bundle, pretrain, save_adapter, save_bundle, Adapter,
    GoalLatent, PolicyBundle,
};
use crate::rng::{stream_seed, Namespace};
use crate::rollout::{collect, load_set, save_set, TrajectorySet};
use crate::tuning::{
    apply_labels, build_dataset, collect_dataset, dataset_from_rewards, iterative_rounds,
    labels_map, load_labels, load_latent, save_latent, tune, LabelSource, LatentMeta,
    PreferenceDataset, Trainable,
};

/// Dispatch a resolved config to its subcommand. Returns the stdout summary.
pub fn run_command(name: &str, config: &RunConfig) -> Result<String, CliError> {
    match name {
        "pretrain" => cmd_pretrain(config),
        "collect" => cmd_collect(config),
        "tune" => cmd_tune(config),
        "eval" => cmd_eval(config),
        "iterate" => cmd_iterate(config),
        "continual" => cmd_continual(config),
        "sweep-beta" => cmd_sweep_beta(config),
        "prompt-study" => cmd_prompt_study(config),
        "label-serve" => cmd_label_serve(config),
        other => Err(CliError::Usage(format!("unknown command '{other}'"))),
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    std::fs::write(&path, contents)
        .map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display())))
}

fn bundle(config: &RunConfig) -> Result<PolicyBundle, CliError> {
    Ok(load_bundle(&config.input("bundle", &config.bundle)?)?)
}

/// The encoded noisy-expert demo of `task` for prompt seed `seed`.
fn prompt_latent(
    bundle: &PolicyBundle,
    task: TaskId,
    config: &RunConfig,
    seed: u64,
) -> Result<GoalLatent, CliError> {
    let demo = demo_trajectory(
        task,
        EnvVariant::in_distribution(),
        config.prompt_noise,
        seed,
    )?;
    Ok(bundle.encode_prompt(&demo)?)
}

/// Initial latent: the latent file when given, else the encoded prompt.
fn initial_latent(
    bundle: &PolicyBundle,
    config: &RunConfig,
) -> Result<(GoalLatent, String), CliError> {
    if config.latent.is_some() {
        let (g, meta) = load_latent(&config.input("latent", &config.latent)?)?;
        crate::error::ensure_dim("latent file", bundle.latent_dim(), g.dim())?;
        let provenance = if meta.prompt_checksum.is_empty() {
            g.checksum()
        } else {
            meta.prompt_checksum
        };
        return Ok((g, provenance));
    }
    let g = prompt_latent(bundle, config.task, config, config.prompt_seed)?;
    let checksum = g.checksum();
    Ok((g, checksum))
}

fn adapter(bundle: &PolicyBundle, config: &RunConfig) -> Result<Adapter, CliError> {
    match &config.adapter {
        Some(_) => Ok(load_adapter(
            &config.input("adapter", &config.adapter)?,
            bundle,
        )?),
        None => Ok(Adapter::none()),
    }
}

fn csv(table: &Table) -> String {
    report(table, Format::Csv)
}

fn cmd_pretrain(config: &RunConfig) -> Result<String, CliError> {
    let cfg = config.pretrain_config();
    let hash = claim_output_dir(config, "pretrain")?;
    let (b, rep) = pretrain(&TaskId::ALL, &cfg)?;
    save_bundle(&b, &config.out.join("bundle.bin"))?;
    let mut losses = String::from("epoch,loss\n");
    for (e, l) in rep.losses.iter().enumerate() {
        let _ = writeln!(losses, "{e},{l:?}");
    }
    write(&config.out, "pretrain_losses.csv", &losses)?;
    Ok(format!(
        "bundle {} ({} demos, {} steps, final loss {:.4}) config {hash}",
        b.checksum(),
        rep.demos,
        rep.steps,
        rep.losses.last().copied().unwrap_or(f64::NAN)
    ))
}

fn cmd_collect(config: &RunConfig) -> Result<String, CliError> {
    let b = bundle(config)?;
    let a = adapter(&b, config)?;
    let (g, _) = initial_latent(&b, config)?;
    let variant = config.env_variant()?;
    let hash = claim_output_dir(config, "collect")?;
    let seed = stream_seed(config.seed, Namespace::Round, 1);
    let set = collect(
        &b,
        &a,
        &g,
        config.task,
        variant,
        config.collect_n,
        seed,
        config.workers,
    )?;
    save_set(&set, &config.out.join("trajectories.jsonl"))?;
    Ok(format!(
        "{} trajectories, mean reward {:.4}, config {hash}",
        set.len(),
        set.mean_reward()
    ))
}

/// A trajectory file must come from this bundle and this initial latent.
fn check_set(
    set: &TrajectorySet,
    b: &PolicyBundle,
    g: &GoalLatent,
    task: TaskId,
) -> Result<(), CliError> {
    let header = set
        .header
        .as_ref()
        .ok_or_else(|| CliError::Data("trajectory file has no header".into()))?;
    if header.policy_checksum != b.checksum() || header.latent_checksum != g.checksum() {
        return Err(CliError::Data(
            "trajectory file was collected under a different bundle or latent; refusing to mix artifacts".into(),
        ));
    }
    if header.task != task {
        return Err(CliError::Data(format!(
            "trajectory file holds {} episodes, not {task}",
            header.task
        )));
    }
    Ok(())
}

fn tuning_dataset(
    b: &PolicyBundle,
    g: &GoalLatent,
    config: &RunConfig,
) -> Result<PreferenceDataset, CliError> {
    let tc = config.tune_config();
    let pair_seed = stream_seed(config.seed, Namespace::Pairing, 1);
    if config.label_source == LabelSource::Human {
        let set = load_set(&config.input("trajectories", &config.trajectories)?)?;
        check_set(&set, b, g, config.task)?;
        let labels = labels_map(&load_labels(&config.input("labels", &config.labels)?)?);
        let partition = apply_labels(set.len(), &labels)?;
        return Ok(build_dataset(
            &set.trajectories,
            &partition,
            LabelSource::Human,
            pair_seed,
            g.checksum(),
        )?);
    }
    if config.trajectories.is_some() {
        let set = load_set(&config.input("trajectories", &config.trajectories)?)?;
        check_set(&set, b, g, config.task)?;
        return Ok(dataset_from_rewards(
            &set.trajectories,
            &tc,
            pair_seed,
            g.checksum(),
        )?);
    }
    let variant = config.env_variant()?;
    let (_, ds) = collect_dataset(
        b,
        g,
        config.task,
        variant,
        &tc,
        stream_seed(config.seed, Namespace::Round, 1),
        pair_seed,
    )?;
    Ok(ds)
}

fn losses_csv(losses: &[f64]) -> String {
    let mut s = String::from("epoch,loss\n");
    for (e, l) in losses.iter().enumerate() {
        let _ = writeln!(s, "{e},{l:?}");
    }
    s
}

fn cmd_tune(config: &RunConfig) -> Result<String, CliError> {
    let b = bundle(config)?;
    let (g0, provenance) = initial_latent(&b, config)?;
    let tc = config.tune_config();
    tc.validate()?;
    let ds = tuning_dataset(&b, &g0, config)?;
    let hash = claim_output_dir(config, "tune")?;
    let out = tune(&b, &g0, &ds, &tc)?;
    let meta = LatentMeta {
        prompt_checksum: provenance,
        rounds: 1,
        config_hash: hash.clone(),
    };
    save_latent(&config.out.join("latent.txt"), &out.latent, &meta)?;
    if tc.trainable != Trainable::GoalLatent {
        save_adapter(&config.out.join("adapter.json"), &out.adapter, &b)?;
    }
    write(&config.out, "losses.csv", &losses_csv(&out.losses))?;
    Ok(format!(
        "{} pairs, loss {:.6} -> {:.6}, latent {} config {hash}",
        ds.pairs.len(),
        out.losses[0],
        out.losses[out.losses.len() - 1],
        out.latent.checksum()
    ))
}

fn cmd_eval(config: &RunConfig) -> Result<String, CliError> {
    let b = bundle(config)?;
    let a = adapter(&b, config)?;
    let (g, _) = initial_latent(&b, config)?;
    let variant = config.env_variant()?;
    if config.eval_n == 0 {
        return Err(CliError::Usage("eval_n must be at least 1".into()));
    }
    let hash = claim_output_dir(config, "eval")?;
    let r = evaluate(
        &b,
        &a,
        &g,
        config.task,
        variant,
        config.eval_n,
        config.seed,
        config.workers,
    )?;
    let method = if a.params.is_empty() {
        "latent"
    } else {
        a.kind.as_str()
    };
    let table = eval_table(&[(method.to_string(), r.clone())]);
    write(&config.out, "eval.csv", &csv(&table))?;
    Ok(format!(
        "{} {} {} = {:.4} ± {:.4} config {hash}",
        r.task,
        variant.kind,
        r.metric.as_str(),
        r.value,
        r.stderr
    ))
}

fn value_cell(r: &EvalResult) -> Cell {
    Cell::Value {
        value: r.value,
        stderr: Some(r.stderr),
    }
}

fn cmd_iterate(config: &RunConfig) -> Result<String, CliError> {
    let b = bundle(config)?;
    let (g0, provenance) = initial_latent(&b, config)?;
    let variant = config.env_variant()?;
    let tc = config.tune_config();
    tc.validate()?;
    let hash = claim_output_dir(config, "iterate")?;
    let raw = evaluate(
        &b,
        &Adapter::none(),
        &g0,
        config.task,
        variant,
        tc.eval_n,
        tc.seed,
        tc.workers,
    )?;
    let rounds = iterative_rounds(&b, &g0, config.task, variant, &tc)?;
    let mut table = Table {
        columns: ["round", "collected_mean_reward", "final_loss", "value"]
            .map(String::from)
            .to_vec(),
        rows: vec![vec![
            Cell::Text("0".into()),
            Cell::Empty,
            Cell::Empty,
            value_cell(&raw),
        ]],
        best_groups: Vec::new(),
    };
    for r in &rounds {
        let meta = LatentMeta {
            prompt_checksum: provenance.clone(),
            rounds: r.round,
            config_hash: hash.clone(),
        };
        save_latent(
            &config.out.join(format!("latent_round_{}.txt", r.round)),
            &r.latent,
            &meta,
        )?;
        table.rows.push(vec![
            Cell::Text(r.round.to_string()),
            Cell::Value {
                value: r.collected_mean_reward,
                stderr: None,
            },
            Cell::Value {
                value: *r.losses.last().expect("epochs + 1 entries"),
                stderr: None,
            },
            value_cell(&r.eval),
        ]);
    }
    write(&config.out, "rounds.csv", &csv(&table))?;
    let last = rounds.last().expect("rounds ≥ 1");
    Ok(format!(
        "round 0 {:.4} -> round {} {:.4} config {hash}",
        raw.value, last.round, last.eval.value
    ))
}

fn cmd_continual(config: &RunConfig) -> Result<String, CliError> {
    let b = bundle(config)?;
    let cc = config.continual_config();
    cc.validate()?;
    let methods: Vec<&str> = config.methods.iter().map(String::as_str).collect();
    for m in &methods {
        if !matches!(*m, "pgt" | "mtl") && m.parse::<Baseline>().is_err() {
            return Err(CliError::Usage(format!("unknown continual method '{m}'")));
        }
    }
    let tasks = &config.tasks;
    let prompts = tasks
        .iter()
        .map(|&task| {
            Ok(TaskPrompt {
                task,
                latent: prompt_latent(&b, task, config, config.prompt_seed)?,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let hash = claim_output_dir(config, "continual")?;
    let datasets = collect_task_datasets(&b, &prompts, &cc.tune)?;
    let pretrained = pretrained_results(&b, &prompts, &cc.tune)?;
    // the PGT column of every table needs the latent-store run
    let pgt = run_pgt_cl(&b, &prompts, &datasets, &cc)?;
    let pgt_final = final_results(&pgt);
    let mut summary = Vec::new();
    if methods.contains(&"pgt") {
        write(
            &config.out,
            "pgt.csv",
            &csv(&continual_table(
                tasks,
                &pgt.stages,
                &pretrained,
                &pgt_final,
            )?),
        )?;
        for (task, g) in pgt.store.iter() {
            let meta = LatentMeta {
                prompt_checksum: pgt.store.provenance(task).unwrap_or_default().to_string(),
                rounds: 1,
                config_hash: hash.clone(),
            };
            save_latent(&config.out.join(format!("latent_{task}.txt")), g, &meta)?;
        }
        summary.push(format!("pgt store {} reals", pgt.store.footprint()));
    }
    for m in &methods {
        let Ok(method) = m.parse::<Baseline>() else {
            continue;
        };
        let run = run_baseline(&b, &prompts, &datasets, &cc, method)?;
        write(
            &config.out,
            &format!("{method}.csv"),
            &csv(&continual_table(
                tasks,
                &run.stages,
                &pretrained,
                &pgt_final,
            )?),
        )?;
        summary.push(format!("{method} done"));
    }
    if methods.contains(&"mtl") {
        let mtl = run_mtl(&b, &prompts, &datasets, &cc)?;
        let table = Table {
            columns: ["task", "mtl", "ensemble", "pretrained", "pgt"]
                .map(String::from)
                .to_vec(),
            rows: tasks
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    vec![
                        Cell::Text(t.to_string()),
                        value_cell(&mtl.results[i]),
                        value_cell(&mtl.ensemble[i]),
                        value_cell(&pretrained[i]),
                        value_cell(&pgt_final[i]),
                    ]
                })
                .collect(),
            best_groups: vec![vec![1, 2, 3, 4]],
        };
        write(&config.out, "mtl.csv", &csv(&table))?;
        summary.push(format!("mtl on {} pairs", mtl.union_pairs));
    }
    Ok(format!("{} config {hash}", summary.join(", ")))
}

fn cmd_sweep_beta(config: &RunConfig) -> Result<String, CliError> {
    let b = bundle(config)?;
    let (g0, _) = initial_latent(&b, config)?;
    let variant = config.env_variant()?;
    let tc = config.tune_config();
    tc.validate()?;
    let hash = claim_output_dir(config, "sweep-beta")?;
    let rows = beta_sweep(&b, &g0, config.task, variant, &config.betas, &tc)?;
    let table = Table {
        columns: ["beta", "value", "final_loss", "data_checksum"]
            .map(String::from)
            .to_vec(),
        rows: rows
            .iter()
            .map(|r| {
                vec![
                    Cell::Text(format!("{}", r.beta)),
                    value_cell(&r.eval),
                    Cell::Value {
                        value: r.final_loss,
                        stderr: None,
                    },
                    Cell::Text(r.data_checksum.clone()),
                ]
            })
            .collect(),
        best_groups: Vec::new(),
    };
    write(&config.out, "beta_sweep.csv", &csv(&table))?;
    Ok(format!("{} betas config {hash}", rows.len()))
}

fn cmd_prompt_study(config: &RunConfig) -> Result<String, CliError> {
    let b = bundle(config)?;
    let variant = config.env_variant()?;
    let tc = config.tune_config();
    tc.validate()?;
    let demos = (0..config.prompts as u64)
        .map(|i| {
            demo_trajectory(
                config.task,
                EnvVariant::in_distribution(),
                config.prompt_noise,
                config.prompt_seed + i,
            )
        })
        .collect::<crate::Result<Vec<_>>>()?;
    let hash = claim_output_dir(config, "prompt-study")?;
    let study = prompt_study(&b, &demos, config.task, variant, &tc)?;
    let mut columns = vec!["prompt".to_string()];
    columns.extend((0..=tc.rounds).map(|r| format!("round_{r}")));
    let table = Table {
        columns,
        rows: study
            .series
            .iter()
            .enumerate()
            .map(|(p, series)| {
                let mut row = vec![Cell::Text(format!("{}", config.prompt_seed + p as u64))];
                row.extend(series.iter().map(value_cell));
                row
            })
            .collect(),
        best_groups: Vec::new(),
    };
    write(&config.out, "prompt_study.csv", &csv(&table))?;
    Ok(format!(
        "best raw prompt {} at {:.4} config {hash}",
        config.prompt_seed + study.best_raw as u64,
        study.best_raw_result().value
    ))
}

fn cmd_label_serve(config: &RunConfig) -> Result<String, CliError> {
    let set = load_set(&config.input("trajectories", &config.trajectories)?)?;
    let labels = config
        .labels
        .clone()
        .ok_or_else(|| CliError::Usage("--labels is required".into()))?;
    if let Some(dir) = &config.static_dir {
        if !dir.is_dir() {
            return Err(CliError::Usage(format!(
                "--static-dir {} is not a directory",
                dir.display()
            )));
        }
    }
    let mut state = LabelServer::new(
        set,
        labels,
        config.reveal_rewards,
        config.labeler_id.clone(),
        config.static_dir.clone(),
    )?;
    let server = tiny_http::Server::http(&config.bind)
        .map_err(|e| CliError::Usage(format!("cannot bind {}: {e}", config.bind)))?;
    eprintln!("label server on http://{}", server.server_addr());
    let stop = std::sync::atomic::AtomicBool::new(false);
    serve(&server, &mut state, &stop)?;
    Ok(String::new())
}
