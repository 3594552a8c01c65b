use std::fmt::Write;

use super::Trajectory;
use crate::env::{Action, Observation, GRID_SIZE, WINDOW};

const CELL: usize = 12;
const FRAME_H: usize = WINDOW * CELL + 16;
const WIDTH: usize = 380;
const COLORS: [&str; 5] = ["#f4f1e8", "#4a4a4a", "#3c9a3c", "#b5722e", "#c43d6b"];
const KIND_NAMES: [&str; 5] = ["empty", "wall", "resource", "bench", "marker"];

fn action_name(a: usize) -> &'static str {
    match Action::from_index(a) {
        Ok(Action::Up) => "up",
        Ok(Action::Down) => "down",
        Ok(Action::Left) => "left",
        Ok(Action::Right) => "right",
        Ok(Action::Interact) => "interact",
        Ok(Action::Craft) => "craft",
        Err(_) => "?",
    }
}

fn draw_window(out: &mut String, obs: &Observation, y0: usize) {
    let half = (WINDOW / 2) as isize;
    for wy in 0..WINDOW {
        for wx in 0..WINDOW {
            let kind = obs
                .window_kind(wx as isize - half, wy as isize - half)
                .unwrap_or(0);
            let _ = write!(
                out,
                r#"<rect x="{}" y="{}" width="{CELL}" height="{CELL}" fill="{}" data-kind="{}"/>"#,
                8 + wx * CELL,
                y0 + wy * CELL,
                COLORS[kind],
                KIND_NAMES[kind]
            );
        }
    }
    let c = 8 + 2 * CELL + CELL / 2;
    let _ = write!(
        out,
        r##"<circle cx="{c}" cy="{}" r="{}" fill="#1f5fbf"/>"##,
        y0 + 2 * CELL + CELL / 2,
        CELL / 3
    );
}

fn grid_pos(obs: &Observation) -> (usize, usize) {
    let (x, y) = obs.position();
    let scale = (GRID_SIZE - 1) as f64;
    ((x * scale).round() as usize, (y * scale).round() as usize)
}

/// SVG with one frame per step (egocentric window, position, inventory,
/// action and reward) followed by a summary panel. Frames are `<g>`
/// elements with class `frame`; the summary also carries class `summary`.
pub fn render_trajectory(traj: &Trajectory) -> String {
    let height = (traj.steps.len() + 1) * FRAME_H + 8;
    let mut out = String::new();
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="monospace" font-size="11">"#
    );
    let mut cumulative = 0.0;
    for (i, step) in traj.steps.iter().enumerate() {
        let y0 = i * FRAME_H + 4;
        cumulative += step.reward;
        let obs = Observation {
            features: step.obs.clone(),
        };
        let inv = obs.inventory();
        let (x, y) = grid_pos(&obs);
        let _ = write!(out, r#"<g class="frame" data-step="{i}">"#);
        draw_window(&mut out, &obs, y0);
        let tx = 8 + WINDOW * CELL + 10;
        let _ = write!(
            out,
            r#"<text x="{tx}" y="{}">step {i}  pos ({x},{y})</text><text x="{tx}" y="{}">inv r={} p={} t={}</text><text x="{tx}" y="{}">action {}  reward {}  total {}</text></g>"#,
            y0 + 12,
            y0 + 28,
            inv.resource,
            inv.product,
            inv.tool,
            y0 + 44,
            action_name(step.action),
            step.reward,
            cumulative
        );
    }
    let y0 = traj.steps.len() * FRAME_H + 4;
    let final_obs = Observation {
        features: traj.final_obs.clone(),
    };
    let inv = final_obs.inventory();
    let _ = write!(out, r#"<g class="frame summary">"#);
    draw_window(&mut out, &final_obs, y0);
    let tx = 8 + WINDOW * CELL + 10;
    let _ = write!(
        out,
        r#"<text x="{tx}" y="{}">task {}  variant {}  seed {}</text><text x="{tx}" y="{}" data-total-reward="{}">total reward {}  success {}</text><text x="{tx}" y="{}" data-final-resource="{}">final inventory r={} p={} t={}  steps {}</text></g></svg>"#,
        y0 + 12,
        traj.task,
        traj.variant.kind,
        traj.seed,
        y0 + 28,
        traj.total_reward,
        traj.total_reward,
        traj.success,
        y0 + 44,
        inv.resource,
        inv.resource,
        inv.product,
        inv.tool,
        traj.steps.len()
    );
    out.push('\n');
    out
}
