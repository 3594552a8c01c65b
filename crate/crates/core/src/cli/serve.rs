//! Local HTTP endpoint for the labeler UI. Requests are handled one at a
//! time, so the labels file has a single writer.

use std::collections::BTreeMap;
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::Deserialize;
use serde_json::{json, Value};

use super::CliError;
use crate::rollout::{render_trajectory, TrajectorySet};
use crate::tuning::{append_label, labels_map, load_labels, Label, LabelRecord};

const FALLBACK_PAGE: &str = "<!doctype html>\n<html><head><meta charset=\"utf-8\"><title>pgt labeler</title></head>\
<body><p>No UI assets configured. Start the server with <code>--static-dir</code> pointing at the built labeler UI, \
or use the JSON API under <code>/api/</code>.</p></body></html>\n";

#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub status: u16,
    pub content_type: &'static str,
    pub body: Vec<u8>,
}

impl Reply {
    fn json(status: u16, v: &Value) -> Self {
        Reply {
            status,
            content_type: "application/json",
            body: v.to_string().into_bytes(),
        }
    }

    fn error(status: u16, message: impl Into<String>) -> Self {
        Reply::json(status, &json!({ "error": message.into() }))
    }

    fn no_content() -> Self {
        Reply {
            status: 204,
            content_type: "text/plain",
            body: Vec::new(),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelBody {
    index: usize,
    label: Label,
}

/// Server state: the trajectories on offer and the labels recorded so far.
pub struct LabelServer {
    set: TrajectorySet,
    labels_path: PathBuf,
    labels: BTreeMap<usize, Label>,
    reveal_rewards: bool,
    labeler_id: String,
    static_dir: Option<PathBuf>,
}

impl LabelServer {
    /// Existing records in `labels_path` count as already labeled.
    pub fn new(
        set: TrajectorySet,
        labels_path: PathBuf,
        reveal_rewards: bool,
        labeler_id: String,
        static_dir: Option<PathBuf>,
    ) -> Result<Self, CliError> {
        let labels = if labels_path.exists() {
            labels_map(&load_labels(&labels_path)?)
        } else {
            BTreeMap::new()
        };
        if let Some(&i) = labels.keys().find(|&&i| i >= set.len()) {
            return Err(CliError::Data(format!(
                "labels file refers to trajectory {i} but the set holds {}",
                set.len()
            )));
        }
        Ok(LabelServer {
            set,
            labels_path,
            labels,
            reveal_rewards,
            labeler_id,
            static_dir,
        })
    }

    pub fn handle(&mut self, method: &str, url: &str, body: &[u8]) -> Reply {
        let path = url.split(['?', '#']).next().unwrap_or("");
        let segments: Vec<&str> = path.trim_matches('/').split('/').collect();
        match (method, segments.as_slice()) {
            ("GET", ["api", "trajectories"]) => self.list(),
            ("GET", ["api", "trajectories", i, "render"]) => self.render(i),
            ("POST", ["api", "labels"]) => self.label(body),
            ("GET", ["api", "progress"]) => self.progress(),
            (_, ["api", ..]) => Reply::error(404, format!("no endpoint {method} {path}")),
            ("GET", _) => self.asset(path),
            _ => Reply::error(405, format!("{method} not allowed")),
        }
    }

    fn list(&self) -> Reply {
        let items: Vec<Value> = self
            .set
            .trajectories
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let mut item = json!({
                    "index": i,
                    "task": t.task.as_str(),
                    "labeled": self.labels.contains_key(&i),
                });
                if self.reveal_rewards {
                    item["total_reward"] = json!(t.total_reward);
                }
                item
            })
            .collect();
        Reply::json(200, &Value::Array(items))
    }

    fn render(&self, index: &str) -> Reply {
        match index
            .parse::<usize>()
            .ok()
            .and_then(|i| self.set.trajectories.get(i))
        {
            Some(t) => Reply {
                status: 200,
                content_type: "image/svg+xml",
                body: render_trajectory(t).into_bytes(),
            },
            None => Reply::error(404, format!("no trajectory '{index}'")),
        }
    }

    fn label(&mut self, body: &[u8]) -> Reply {
        let parsed: LabelBody = match serde_json::from_slice(body) {
            Ok(b) => b,
            Err(e) => return Reply::error(400, format!("body must be {{index, label}}: {e}")),
        };
        if parsed.index >= self.set.len() {
            return Reply::error(404, format!("no trajectory {}", parsed.index));
        }
        let record = LabelRecord {
            traj_index: parsed.index,
            label: parsed.label,
            labeler_id: self.labeler_id.clone(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        };
        if let Err(e) = append_label(&self.labels_path, &record) {
            return Reply::error(500, e.to_string());
        }
        self.labels.insert(parsed.index, parsed.label);
        Reply::no_content()
    }

    fn progress(&self) -> Reply {
        let count = |l: Label| self.labels.values().filter(|&&x| x == l).count();
        Reply::json(
            200,
            &json!({
                "total": self.set.len(),
                "labeled": self.labels.len(),
                "positive": count(Label::Positive),
                "negative": count(Label::Negative),
                "skip": count(Label::Skip),
            }),
        )
    }

    fn asset(&self, path: &str) -> Reply {
        let rel = path.trim_start_matches('/');
        let rel = if rel.is_empty() { "index.html" } else { rel };
        let Some(dir) = &self.static_dir else {
            return if rel == "index.html" {
                Reply {
                    status: 200,
                    content_type: "text/html; charset=utf-8",
                    body: FALLBACK_PAGE.as_bytes().to_vec(),
                }
            } else {
                Reply::error(404, "not found")
            };
        };
        let rel = Path::new(rel);
        if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
            return Reply::error(404, "not found");
        }
        match std::fs::read(dir.join(rel)) {
            Ok(body) => Reply {
                status: 200,
                content_type: content_type(rel),
                body,
            },
            Err(_) => Reply::error(404, "not found"),
        }
    }
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js" | "mjs") => "text/javascript",
        Some("css") => "text/css",
        Some("svg") => "image/svg+xml",
        Some("json") => "application/json",
        Some("png") => "image/png",
        _ => "application/octet-stream",
    }
}

/// Answer requests until `stop` is set.
pub fn serve(
    server: &tiny_http::Server,
    state: &mut LabelServer,
    stop: &AtomicBool,
) -> Result<(), CliError> {
    while !stop.load(Ordering::Relaxed) {
        let mut request = match server.recv_timeout(Duration::from_millis(100)) {
            Ok(Some(r)) => r,
            Ok(None) => continue,
            Err(e) => return Err(CliError::Internal(format!("label server failed: {e}"))),
        };
        let mut body = Vec::new();
        let reply = match request.as_reader().read_to_end(&mut body) {
            Ok(_) => state.handle(request.method().as_str(), request.url(), &body),
            Err(e) => Reply::error(400, format!("unreadable body: {e}")),
        };
        let header = tiny_http::Header::from_bytes("Content-Type", reply.content_type)
            .expect("static header");
        let response = tiny_http::Response::from_data(reply.body)
            .with_status_code(reply.status)
            .with_header(header);
        // a client that hung up is not a server failure
        let _ = request.respond(response);
    }
    Ok(())
}
