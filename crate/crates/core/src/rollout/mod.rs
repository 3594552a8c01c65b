//! Running controllers in the environment, and persisting and rendering the
//! resulting trajectories.

mod io;
mod render;
mod trajectory;

pub use io::{load_set, parse_set, save_set, set_to_string, FORMAT_VERSION};
pub use render::render_trajectory;
pub use trajectory::{Source, Step, Trajectory};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{env_reset, scripted_expert, EnvVariant, TaskId, NUM_ACTIONS};
use crate::error::{Error, Result};
use crate::policy::{Adapter, GoalLatent, PolicyActor, PolicyBundle};
use crate::rng::{stream_seed, Namespace, Rng};

/// What chooses actions during an episode.
#[derive(Debug, Clone, Copy)]
pub enum Controller<'a> {
    Policy {
        bundle: &'a PolicyBundle,
        adapter: &'a Adapter,
        latent: &'a GoalLatent,
    },
    /// Uniformly random actions.
    Random,
    /// Scripted expert with the given action noise.
    Expert { noise: f64 },
}

impl Controller<'_> {
    fn source(&self) -> Source {
        match self {
            Controller::Expert { .. } => Source::ScriptedExpert,
            _ => Source::PolicyRollout,
        }
    }
}

/// Run one episode to completion. All randomness derives from `seed`.
pub fn run_episode(
    controller: Controller<'_>,
    task: TaskId,
    variant: EnvVariant,
    seed: u64,
) -> Result<Trajectory> {
    let (mut world, mut obs) = env_reset(task, variant, seed);
    let mut rng = Rng::substream(seed, Namespace::Policy, 0);
    let mut steps = Vec::new();
    enum Live {
        Policy(PolicyActor),
        Random,
        Expert(crate::env::ScriptedExpert),
    }
    let mut live = match controller {
        Controller::Policy {
            bundle,
            adapter,
            latent,
        } => Live::Policy(PolicyActor::new(bundle, adapter, latent)?),
        Controller::Random => Live::Random,
        Controller::Expert { noise } => Live::Expert(scripted_expert(
            task,
            noise,
            stream_seed(seed, Namespace::Expert, 0),
        )?),
    };
    while !world.is_done() {
        let a = match &mut live {
            Live::Policy(actor) => actor.sample(&obs.features, &mut rng),
            Live::Random => rng.below(NUM_ACTIONS),
            Live::Expert(e) => e.act(&world),
        };
        let (next, r, _) = world.step(a)?;
        steps.push(Step {
            obs: std::mem::replace(&mut obs, next).features,
            action: a,
            reward: r,
        });
    }
    Ok(Trajectory {
        task,
        variant,
        seed,
        steps,
        total_reward: world.total_reward,
        success: world.success,
        source: controller.source(),
        final_obs: obs.features,
    })
}

/// Run `n` episodes with seeds `stream_seed(root, namespace, i)` on a pool of
/// `workers` threads. Output order is episode order whatever the scheduling.
pub fn run_episodes(
    controller: Controller<'_>,
    task: TaskId,
    variant: EnvVariant,
    n: usize,
    root_seed: u64,
    namespace: Namespace,
    workers: usize,
) -> Result<Vec<Trajectory>> {
    let job = |i: usize| {
        run_episode(
            controller,
            task,
            variant,
            stream_seed(root_seed, namespace, i as u64),
        )
    };
    if workers <= 1 {
        return (0..n).map(job).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::contract(format!("cannot start worker pool: {e}")))?;
    pool.install(|| (0..n).into_par_iter().map(job).collect())
}

/// Provenance carried by a trajectory file's header line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetHeader {
    pub format_version: u32,
    pub task: TaskId,
    pub variant: EnvVariant,
    pub policy_checksum: String,
    pub latent_checksum: String,
    pub root_seed: u64,
}

/// Trajectories of one task plus their provenance. A set read from an empty
/// file has no header.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySet {
    pub header: Option<SetHeader>,
    pub trajectories: Vec<Trajectory>,
}

impl TrajectorySet {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn mean_reward(&self) -> f64 {
        if self.trajectories.is_empty() {
            return 0.0;
        }
        self.trajectories
            .iter()
            .map(|t| t.total_reward)
            .sum::<f64>()
            / self.len() as f64
    }
}

/// Collect `n` policy episodes under latent `g`.
#[allow(clippy::too_many_arguments)]
pub fn collect(
    bundle: &PolicyBundle,
    adapter: &Adapter,
    g: &GoalLatent,
    task: TaskId,
    variant: EnvVariant,
    n: usize,
    root_seed: u64,
    workers: usize,
) -> Result<TrajectorySet> {
    if n == 0 {
        return Err(Error::contract("collect needs n ≥ 1"));
    }
    let controller = Controller::Policy {
        bundle,
        adapter,
        latent: g,
    };
    let trajectories = run_episodes(
        controller,
        task,
        variant,
        n,
        root_seed,
        Namespace::Collect,
        workers,
    )?;
    let mut policy_checksum = bundle.checksum();
    if !adapter.params.is_empty() {
        policy_checksum.push('+');
        policy_checksum.push_str(&crate::policy::adapter_checksum(adapter));
    }
    Ok(TrajectorySet {
        header: Some(SetHeader {
            format_version: FORMAT_VERSION,
            task,
            variant,
            policy_checksum,
            latent_checksum: g.checksum(),
            root_seed,
        }),
        trajectories,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::VariantKind;

    #[test]
    fn worker_count_does_not_change_results() {
        let mut rng = Rng::new(1);
        let b = PolicyBundle::init(4, &[8, 8], &mut rng).unwrap();
        let g = GoalLatent(vec![0.2, -0.1, 0.4, 0.0]);
        let v = EnvVariant::in_distribution();
        let one = collect(&b, &Adapter::none(), &g, TaskId::Craft, v, 12, 5, 1).unwrap();
        let many = collect(&b, &Adapter::none(), &g, TaskId::Craft, v, 12, 5, 8).unwrap();
        assert_eq!(one, many);
    }

    #[test]
    fn zero_episodes_rejected() {
        let b = PolicyBundle::init(4, &[8], &mut Rng::new(2)).unwrap();
        let g = GoalLatent::zeros(4);
        let v = EnvVariant::in_distribution();
        assert!(collect(&b, &Adapter::none(), &g, TaskId::Craft, v, 0, 5, 1).is_err());
    }

    #[test]
    fn trajectories_respect_invariants() {
        let b = PolicyBundle::init(4, &[8], &mut Rng::new(3)).unwrap();
        let g = GoalLatent::zeros(4);
        let v = EnvVariant {
            kind: VariantKind::OodLayout,
            seed: 9,
        };
        let set = collect(&b, &Adapter::none(), &g, TaskId::Explore, v, 6, 1, 2).unwrap();
        for t in &set.trajectories {
            let sum: f64 = t.steps.iter().map(|s| s.reward).sum();
            assert_eq!(sum, t.total_reward);
            assert!(t.len() <= crate::env::HORIZON);
            assert_eq!(t.success, TaskId::Explore.spec().is_success(t.total_reward));
        }
    }

    #[test]
    fn expert_controller_matches_demo_generator() {
        let v = EnvVariant::in_distribution();
        let a = run_episode(Controller::Expert { noise: 0.2 }, TaskId::Place, v, 77).unwrap();
        let b = crate::policy::demo_trajectory(TaskId::Place, v, 0.2, 77).unwrap();
        assert_eq!(a, b);
    }
}
