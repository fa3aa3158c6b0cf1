//! Problem instances: data model, random generator and JSON files.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stn::{finish_node, start_node, Stn, SCHEDULE_FINISH, SCHEDULE_START};

/// Current version of the instance file layout.
pub const INSTANCE_FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: usize,
    pub duration: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deadline: Option<f64>,
    pub location: usize,
}

/// Task `task` may start only `delay` after task `after` finishes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaitConstraint {
    #[serde(rename = "i")]
    pub task: usize,
    #[serde(rename = "j")]
    pub after: usize,
    pub delay: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub num_robots: usize,
    pub num_locations: usize,
    pub tasks: Vec<TaskSpec>,
    pub waits: Vec<WaitConstraint>,
    pub seed: u64,
}

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("generator gave up after {attempts} inconsistent draws")]
    ResampleBudget { attempts: usize },
    #[error("invalid generator config: {0}")]
    Config(String),
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> InstanceError {
    InstanceError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

impl ProblemInstance {
    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// Checks every field invariant; the error names the offending field.
    pub fn validate(&self) -> Result<(), InstanceError> {
        if self.num_robots == 0 {
            return Err(invalid("num_robots", "must be at least 1"));
        }
        if self.num_locations == 0 {
            return Err(invalid("num_locations", "must be at least 1"));
        }
        for (idx, task) in self.tasks.iter().enumerate() {
            let field = |name: &str| format!("tasks[{idx}].{name}");
            if task.id != idx {
                return Err(invalid(field("id"), format!("expected {idx}, found {}", task.id)));
            }
            if !(task.duration.is_finite() && task.duration >= 1.0) {
                return Err(invalid(field("duration"), "must be finite and >= 1"));
            }
            if let Some(d) = task.deadline {
                if !(d.is_finite() && d > 0.0) {
                    return Err(invalid(field("deadline"), "must be finite and > 0"));
                }
            }
            if task.location >= self.num_locations {
                return Err(invalid(
                    field("location"),
                    format!("{} out of range 0..{}", task.location, self.num_locations),
                ));
            }
        }
        let t = self.tasks.len();
        for (idx, w) in self.waits.iter().enumerate() {
            let field = |name: &str| format!("waits[{idx}].{name}");
            if w.task >= t {
                return Err(invalid(field("i"), format!("task {} out of range", w.task)));
            }
            if w.after >= t {
                return Err(invalid(field("j"), format!("task {} out of range", w.after)));
            }
            if w.task == w.after {
                return Err(invalid(field("j"), "a task cannot wait on itself"));
            }
            if !(w.delay.is_finite() && w.delay >= 0.0) {
                return Err(invalid(field("delay"), "must be finite and >= 0"));
            }
        }
        Ok(())
    }

    /// Wait constraints whose waiting task is `task`.
    pub fn waits_of(&self, task: usize) -> impl Iterator<Item = &WaitConstraint> {
        self.waits.iter().filter(move |w| w.task == task)
    }

    /// Unsolved-instance penalty used by the evaluation metric and rewards.
    pub fn unsolved_penalty(&self) -> f64 {
        20.0 * self.num_tasks() as f64
    }

    /// STN carrying durations, deadlines and waits, with every event pinned
    /// between `s_0` and `f_0`. No ordering decisions yet.
    pub fn initial_stn(&self) -> Stn {
        let mut stn = Stn::new(self.num_tasks());
        let ok = "nodes come from the instance";
        stn.add_lower_bound(SCHEDULE_START, SCHEDULE_FINISH, 0.0).expect(ok);
        for task in &self.tasks {
            let (s, f) = (start_node(task.id), finish_node(task.id));
            stn.add_constraint(s, f, task.duration).expect(ok);
            stn.add_constraint(f, s, -task.duration).expect(ok);
            stn.add_lower_bound(SCHEDULE_START, s, 0.0).expect(ok);
            stn.add_lower_bound(f, SCHEDULE_FINISH, 0.0).expect(ok);
            if let Some(d) = task.deadline {
                stn.add_constraint(SCHEDULE_START, f, d).expect(ok);
            }
        }
        for w in &self.waits {
            stn.add_lower_bound(finish_node(w.after), start_node(w.task), w.delay)
                .expect(ok);
        }
        stn
    }

    pub fn to_json(&self) -> String {
        let file = InstanceFile {
            version: INSTANCE_FILE_VERSION,
            seed: self.seed,
            num_robots: self.num_robots,
            num_locations: self.num_locations,
            tasks: self.tasks.clone(),
            waits: self.waits.clone(),
        };
        serde_json::to_string_pretty(&file).expect("instance serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, InstanceError> {
        let file: InstanceFile = serde_json::from_str(text)?;
        if file.version != INSTANCE_FILE_VERSION {
            return Err(invalid(
                "version",
                format!("unsupported version {} (expected {INSTANCE_FILE_VERSION})", file.version),
            ));
        }
        let p = ProblemInstance {
            num_robots: file.num_robots,
            num_locations: file.num_locations,
            tasks: file.tasks,
            waits: file.waits,
            seed: file.seed,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), InstanceError> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|source| InstanceError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, InstanceError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| InstanceError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}

impl fmt::Display for ProblemInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "instance(seed={}, robots={}, locations={}, tasks={}, waits={})",
            self.seed,
            self.num_robots,
            self.num_locations,
            self.tasks.len(),
            self.waits.len()
        )
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    version: u32,
    seed: u64,
    num_robots: usize,
    num_locations: usize,
    tasks: Vec<TaskSpec>,
    waits: Vec<WaitConstraint>,
}

/// Distributions for random instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    /// Inclusive range for the task count.
    pub num_tasks_range: (usize, usize),
    pub num_robots: usize,
    /// Defaults to `num_robots` when absent.
    pub num_locations: Option<usize>,
    pub deadline_fraction: f64,
    pub wait_fraction: f64,
    /// Inclusive integer range for durations.
    pub duration_range: (u32, u32),
    /// Inclusive integer range for wait delays.
    pub wait_range: (u32, u32),
    /// Deadlines are drawn from `U[1, deadline_scale * T]`.
    pub deadline_scale: f64,
    pub max_resamples: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            num_tasks_range: (16, 20),
            num_robots: 2,
            num_locations: None,
            deadline_fraction: 0.25,
            wait_fraction: 0.25,
            duration_range: (1, 10),
            wait_range: (1, 10),
            deadline_scale: 5.0,
            max_resamples: 10_000,
        }
    }
}

impl GeneratorConfig {
    /// Two robots, 16 to 20 tasks.
    pub fn small_two_robot() -> Self {
        Self::default()
    }

    /// Two robots, 40 to 50 tasks.
    pub fn large_two_robot() -> Self {
        GeneratorConfig {
            num_tasks_range: (40, 50),
            ..Self::default()
        }
    }

    pub fn with_tasks(lo: usize, hi: usize) -> Self {
        GeneratorConfig {
            num_tasks_range: (lo, hi),
            ..Self::default()
        }
    }

    pub fn locations(&self) -> usize {
        self.num_locations.unwrap_or(self.num_robots)
    }

    pub fn validate(&self) -> Result<(), InstanceError> {
        let bad = |m: &str| Err(InstanceError::Config(m.to_string()));
        let (lo, hi) = self.num_tasks_range;
        if lo == 0 || lo > hi {
            return bad("num_tasks_range must be non-empty and start at 1 or more");
        }
        if self.num_robots == 0 || self.locations() == 0 {
            return bad("robot and location counts must be positive");
        }
        for (name, p) in [("deadline_fraction", self.deadline_fraction), ("wait_fraction", self.wait_fraction)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        if self.duration_range.0 < 1 || self.duration_range.0 > self.duration_range.1 {
            return bad("duration_range must be non-empty with minimum >= 1");
        }
        if self.wait_range.0 > self.wait_range.1 {
            return bad("wait_range must be non-empty");
        }
        if !(self.deadline_scale.is_finite() && self.deadline_scale * lo as f64 > 1.0) {
            return bad("deadline_scale * min tasks must exceed 1");
        }
        if self.max_resamples == 0 {
            return bad("max_resamples must be positive");
        }
        Ok(())
    }

    /// Draws one instance. The stream is ChaCha8 seeded from `seed`; draw order
    /// is the task count, then per task: duration, deadline flag, deadline,
    /// wait flag, wait partner, wait delay, location. Draws whose initial STN
    /// is inconsistent are discarded and the stream continues.
    pub fn generate(&self, seed: u64) -> Result<ProblemInstance, InstanceError> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..self.max_resamples {
            let p = self.draw(&mut rng, seed);
            if p.initial_stn().is_consistent() {
                return Ok(p);
            }
        }
        Err(InstanceError::ResampleBudget {
            attempts: self.max_resamples,
        })
    }

    fn draw(&self, rng: &mut ChaCha8Rng, seed: u64) -> ProblemInstance {
        let (lo, hi) = self.num_tasks_range;
        let t = rng.gen_range(lo..=hi);
        let m = self.locations();
        let deadline_hi = self.deadline_scale * t as f64;
        let mut tasks = Vec::with_capacity(t);
        let mut waits = Vec::new();
        for id in 0..t {
            let duration = rng.gen_range(self.duration_range.0..=self.duration_range.1) as f64;
            let deadline = if rng.gen_bool(self.deadline_fraction) {
                Some(rng.gen_range(1.0..=deadline_hi))
            } else {
                None
            };
            if rng.gen_bool(self.wait_fraction) && t > 1 {
                // uniform over the other t - 1 tasks
                let mut after = rng.gen_range(0..t - 1);
                if after >= id {
                    after += 1;
                }
                let delay = rng.gen_range(self.wait_range.0..=self.wait_range.1) as f64;
                waits.push(WaitConstraint {
                    task: id,
                    after,
                    delay,
                });
            }
            let location = rng.gen_range(0..m);
            tasks.push(TaskSpec {
                id,
                duration,
                deadline,
                location,
            });
        }
        ProblemInstance {
            num_robots: self.num_robots,
            num_locations: m,
            tasks,
            waits,
            seed,
        }
    }
}
