//! GoalGrid: a seeded 9×9 goal-conditioned gridworld with five tasks and
//! four out-of-distribution perturbation kinds.

mod expert;
mod task;
mod world;

pub use expert::{greedy_action, scripted_expert, ScriptedExpert};
pub use task::{make_variant, EnvVariant, RewardKind, TaskId, TaskSpec, VariantKind};
pub use world::{
    env_reset, Action, Cell, GridWorld, Inventory, Observation, Pos, CRAFT_COST, EXPLORE_RADIUS,
    GRID_SIZE, HORIZON, NUM_ACTIONS, NUM_CELL_KINDS, OBS_DIM, WINDOW,
};
