//! The search loop: selection, top-k expansion, one-step look-ahead simulation and
//! backpropagation, with environment state recovered by reset-and-replay.

use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{ActionCommand, EnvError, Environment, Observation, ObservationDigest, TraceFile, TraceFileStep};
use crate::oracle::{
    ExpandRequest, Expander, HistoryEntry, OracleError, SimulateRequest, Simulator, HISTORY_LIMIT,
};
use crate::tree::{LevelConfig, NodeId, NodeStatus, SearchTree, SelectionPolicy, TreeError};
use crate::{AblationFlags, Scalar};

/// Actions taken by one random rollout under the `standard_rollout` ablation.
pub const ROLLOUT_HORIZON: usize = 10;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("fatal oracle failure: {0}")]
    Oracle(#[from] OracleError),
    #[error("replay diverged at step {step} ({action}): expected digest {expected}, observed {actual}")]
    Determinism { step: usize, action: String, expected: ObservationDigest, actual: ObservationDigest },
    #[error("invalid search configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub k: usize,
    pub iteration_budget: u64,
    pub wall_clock_budget: Duration,
    pub max_depth: usize,
    pub levels: LevelConfig,
    pub policy: SelectionPolicy,
    pub ablation: AblationFlags,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            k: 3,
            iteration_budget: 200,
            wall_clock_budget: Duration::from_secs(30 * 60),
            max_depth: 25,
            levels: LevelConfig::default(),
            policy: SelectionPolicy::default(),
            ablation: AblationFlags::default(),
        }
    }
}

impl SearchConfig {
    /// Sets the expansion width, keeping the level constraint's `k` in step.
    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self.levels.k = k as u32;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.policy.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.k < 1 {
            return Err(EngineError::Config("k must be at least 1".into()));
        }
        if self.levels.k as usize != self.k {
            return Err(EngineError::Config(format!(
                "level constraint checked for k={} but expansion width is {}",
                self.levels.k, self.k
            )));
        }
        if self.iteration_budget == 0 || self.wall_clock_budget.is_zero() {
            return Err(EngineError::Config("budgets must be positive".into()));
        }
        if self.max_depth == 0 {
            return Err(EngineError::Config("max_depth must be positive".into()));
        }
        self.levels.validate()?;
        self.policy.validate()?;
        Ok(())
    }
}

/// The bug to reproduce, as handed to the oracles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BugReport {
    pub text: String,
    pub app_name: String,
}

#[derive(Clone, Copy)]
pub struct OraclePair<'a> {
    pub expander: &'a dyn Expander,
    pub simulator: &'a dyn Simulator,
}

impl<'a> OraclePair<'a> {
    /// Both roles served by one object.
    pub fn single<O: Expander + Simulator>(oracle: &'a O) -> Self {
        OraclePair { expander: oracle, simulator: oracle }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    CrashReproduced,
    BudgetExhausted,
    TreeExhausted,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::CrashReproduced => "crash_reproduced",
            Outcome::BudgetExhausted => "budget_exhausted",
            Outcome::TreeExhausted => "tree_exhausted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub action: ActionCommand,
    pub digest: ObservationDigest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproductionTrace {
    pub root_digest: ObservationDigest,
    /// Path to the crash; empty unless the crash was reproduced.
    pub steps: Vec<TraceStep>,
    pub outcome: Outcome,
    pub iterations_used: u64,
    pub wall_clock_used: Duration,
}

impl ReproductionTrace {
    pub fn to_trace_file(&self, header: Vec<String>) -> TraceFile {
        TraceFile {
            header,
            root_digest: Some(self.root_digest),
            steps: self
                .steps
                .iter()
                .map(|s| TraceFileStep { action: s.action.clone(), digest: Some(s.digest) })
                .collect(),
        }
    }
}

/// One simulated child within an iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChildRecord {
    pub action: ActionCommand,
    /// Environment digest right before the action ran; equals the parent's digest.
    pub pre_digest: ObservationDigest,
    pub post_digest: ObservationDigest,
    pub raw: u8,
    pub mapped: u32,
    pub crash: bool,
}

/// Everything that happened in one iteration; doubles as the per-iteration log record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationOutcome {
    pub iteration: u64,
    pub selected_path: Vec<usize>,
    pub path_actions: Vec<String>,
    pub parent_digest: ObservationDigest,
    pub children: Vec<ChildRecord>,
    /// Mean mapped value added along the path, or the failed-expansion value.
    pub backpropagated: Option<f64>,
    pub crash_found: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    /// Digest after the end-of-iteration reset; absent when the search stopped on a crash.
    pub end_digest: Option<ObservationDigest>,
}

impl IterationOutcome {
    pub fn expanded_actions(&self) -> Vec<&ActionCommand> {
        self.children.iter().map(|c| &c.action).collect()
    }

    pub fn raw_scores(&self) -> Vec<u8> {
        self.children.iter().map(|c| c.raw).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SearchResult<S> {
    pub trace: ReproductionTrace,
    pub iterations: Vec<IterationOutcome>,
    pub tree: SearchTree<S>,
}

pub fn detect_terminal(obs: &Observation) -> bool {
    obs.crash
}

/// Resets `env` and replays `steps`, checking the reset digest and every recorded
/// post-action digest. Returns the observation after each step, reset first.
pub fn replay_path<E: Environment + ?Sized>(
    env: &mut E,
    root_digest: ObservationDigest,
    steps: &[(&ActionCommand, ObservationDigest)],
) -> Result<Vec<Observation>, EngineError> {
    let first = env.reset()?;
    let actual = first.digest();
    if actual != root_digest {
        return Err(EngineError::Determinism { step: 0, action: "reset".into(), expected: root_digest, actual });
    }
    let mut out = Vec::with_capacity(steps.len() + 1);
    out.push(first);
    for (i, (action, expected)) in steps.iter().enumerate() {
        let obs = env.execute(action)?.observation;
        let actual = obs.digest();
        if actual != *expected {
            return Err(EngineError::Determinism { step: i + 1, action: action.to_line(), expected: *expected, actual });
        }
        out.push(obs);
    }
    Ok(out)
}

/// Brings `env` to the state at the end of `steps` by reset and replay.
pub fn restore_state<E: Environment + ?Sized>(
    env: &mut E,
    root_digest: ObservationDigest,
    steps: &[(&ActionCommand, ObservationDigest)],
) -> Result<Observation, EngineError> {
    Ok(replay_path(env, root_digest, steps)?.pop().expect("reset observation"))
}

enum Selection {
    Node(Vec<NodeId>),
    TreeExhausted,
}

/// Result of one [`Search::iterate`] call.
#[derive(Debug, Clone)]
pub enum Step {
    Done(IterationOutcome),
    /// The iteration hit a crash; carries the full path to it.
    Crash(IterationOutcome, Vec<TraceStep>),
    TreeExhausted,
}

/// A search in progress. Most callers want [`run_search`].
pub struct Search<'a, S, E> {
    pub tree: SearchTree<S>,
    env: E,
    oracles: OraclePair<'a>,
    report: &'a BugReport,
    config: SearchConfig,
    rng: ChaCha8Rng,
    rollout_rng: ChaCha8Rng,
    completed: u64,
}

impl<'a, S: Scalar, E: Environment> Search<'a, S, E> {
    pub fn new(
        config: SearchConfig,
        mut env: E,
        oracles: OraclePair<'a>,
        report: &'a BugReport,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        let root = env.reset()?;
        let mut rollout_rng = ChaCha8Rng::seed_from_u64(config.policy.seed);
        rollout_rng.set_stream(1);
        Ok(Search {
            tree: SearchTree::new(root.digest()),
            env,
            oracles,
            report,
            config,
            rng: ChaCha8Rng::seed_from_u64(config.policy.seed),
            rollout_rng,
            completed: 0,
        })
    }

    pub fn env(&self) -> &E {
        &self.env
    }

    fn select(&mut self) -> Result<Selection, EngineError> {
        'restart: loop {
            let root = self.tree.root();
            if !self.tree.node(root).status.is_selectable() {
                return Ok(Selection::TreeExhausted);
            }
            let mut path = vec![root];
            let mut node = root;
            while self.tree.node(node).status == NodeStatus::Expanded {
                match self.tree.sample_child(node, &self.config.policy, &mut self.rng) {
                    Ok(edge) => {
                        node = edge.child;
                        path.push(node);
                    }
                    Err(TreeError::SubtreeExhausted) => {
                        self.tree.mark_exhausted(node);
                        continue 'restart;
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            if self.tree.node(node).depth >= self.config.max_depth {
                log::debug!("depth cap reached at {node:?}");
                self.tree.mark_exhausted(node);
                continue;
            }
            return Ok(Selection::Node(path));
        }
    }

    fn edge_steps(&self, node: NodeId) -> Vec<(ActionCommand, ObservationDigest)> {
        self.tree.edges_to(node).into_iter().map(|e| (e.action.clone(), e.post_digest)).collect()
    }

    fn restore(&mut self, steps: &[(ActionCommand, ObservationDigest)]) -> Result<Vec<Observation>, EngineError> {
        let refs: Vec<(&ActionCommand, ObservationDigest)> = steps.iter().map(|(a, d)| (a, *d)).collect();
        replay_path(&mut self.env, self.tree.root_digest(), &refs)
    }

    fn fatal(e: &OracleError) -> bool {
        matches!(e, OracleError::Auth(_) | OracleError::Config(_))
    }

    fn rollout(&mut self) -> Result<u8, EngineError> {
        for _ in 0..ROLLOUT_HORIZON {
            let actions = self.env.executable_actions();
            let Some(a) = actions.choose(&mut self.rollout_rng) else { break };
            if detect_terminal(&self.env.execute(a)?.observation) {
                return Ok(10);
            }
        }
        Ok(0)
    }

    /// Runs one iteration. The environment is back at the root afterwards unless a
    /// crash was found.
    pub fn iterate(&mut self) -> Result<Step, EngineError> {
        let path = match self.select()? {
            Selection::Node(p) => p,
            Selection::TreeExhausted => return Ok(Step::TreeExhausted),
        };
        let node = *path.last().expect("path holds the root");
        let steps = self.edge_steps(node);
        let observations = self.restore(&steps)?;
        let parent_obs = observations.last().expect("reset observation").clone();
        let parent_digest = parent_obs.digest();

        let history: Vec<HistoryEntry> = steps
            .iter()
            .zip(&observations[1..])
            .map(|((action, _), obs)| HistoryEntry { action: action.clone(), outcome: obs.summary() })
            .collect();
        let history = &history[history.len().saturating_sub(HISTORY_LIMIT)..];

        let mut outcome = IterationOutcome {
            iteration: self.completed,
            selected_path: path.iter().map(|n| n.0).collect(),
            path_actions: steps.iter().map(|(a, _)| a.to_line()).collect(),
            parent_digest,
            children: Vec::new(),
            backpropagated: None,
            crash_found: false,
            note: None,
            end_digest: None,
        };

        let flags = self.config.ablation;
        let k = if flags.disable_topk { None } else { Some(self.config.k) };
        let request = ExpandRequest {
            report: &self.report.text,
            app_name: &self.report.app_name,
            observation: &parent_obs,
            history,
            k,
            flags,
        };
        let proposals = match self.oracles.expander.propose(&request) {
            Ok(p) => p,
            Err(e) if Self::fatal(&e) => return Err(EngineError::Oracle(e)),
            Err(e) => {
                log::warn!("expansion failed at {node:?}: {e}");
                outcome.note = Some(format!("expansion failed: {e}"));
                Vec::new()
            }
        };
        let mut actions: Vec<ActionCommand> = Vec::new();
        for p in &proposals {
            match p.to_command() {
                Ok(a) if !actions.iter().any(|b| b.normalized_key() == a.normalized_key()) => actions.push(a),
                Ok(_) => {}
                Err(e) => log::debug!("dropping proposal {p:?}: {e}"),
            }
        }
        if let Some(k) = k {
            actions.truncate(k);
        }
        if actions.is_empty() {
            return self.fail_expansion(path, outcome, "no valid proposals");
        }

        let mut pending: Vec<(ActionCommand, ChildRecord, NodeStatus)> = Vec::new();
        for (i, action) in actions.iter().enumerate() {
            let pre_digest = self.env.observe()?.digest();
            if pre_digest != parent_digest {
                return Err(EngineError::Determinism {
                    step: steps.len(),
                    action: format!("restore before {}", action.to_line()),
                    expected: parent_digest,
                    actual: pre_digest,
                });
            }
            let after = self.env.execute(action)?.observation;
            let post_digest = after.digest();
            if detect_terminal(&after) {
                let raw = 10;
                let mapped = self.config.levels.map(raw)?;
                let rec = ChildRecord { action: action.clone(), pre_digest, post_digest, raw, mapped, crash: true };
                pending.push((action.clone(), rec, NodeStatus::TerminalCrash));
                outcome.crash_found = true;
                break;
            }
            let raw = if flags.standard_rollout {
                self.rollout()?
            } else {
                let req = SimulateRequest {
                    report: &self.report.text,
                    history,
                    target: action,
                    before: &parent_obs,
                    after: &after,
                    flags,
                };
                match self.oracles.simulator.score(&req) {
                    Ok(s) => s.raw(),
                    Err(e) if Self::fatal(&e) => return Err(EngineError::Oracle(e)),
                    Err(e) => {
                        log::warn!("scoring failed at {node:?}: {e}");
                        outcome.note = Some(format!("scoring failed: {e}"));
                        outcome.children = pending.into_iter().map(|(_, r, _)| r).collect();
                        return self.fail_expansion(path, outcome, "scoring failed");
                    }
                }
            };
            let mapped = self.config.levels.map(raw)?;
            pending.push((
                action.clone(),
                ChildRecord { action: action.clone(), pre_digest, post_digest, raw, mapped, crash: false },
                NodeStatus::Unexpanded,
            ));
            if i + 1 < actions.len() {
                self.restore(&steps)?;
            }
        }

        let mut mapped = Vec::with_capacity(pending.len());
        let mut crash_child = None;
        for (action, rec, status) in &pending {
            let id = self.tree.add_child(node, action.clone(), rec.post_digest, rec.mapped, *status)?;
            mapped.push(rec.mapped);
            if *status == NodeStatus::TerminalCrash {
                crash_child = Some(id);
            }
        }
        let mean = self.tree.backpropagate(&path, &mapped)?;
        outcome.backpropagated = mean.to_f64();
        outcome.children = pending.into_iter().map(|(_, r, _)| r).collect();
        self.completed += 1;

        if let Some(child) = crash_child {
            let trace = self
                .tree
                .edges_to(child)
                .into_iter()
                .map(|e| TraceStep { action: e.action.clone(), digest: e.post_digest })
                .collect();
            return Ok(Step::Crash(outcome, trace));
        }
        outcome.end_digest = Some(self.reset_to_root()?);
        Ok(Step::Done(outcome))
    }

    fn fail_expansion(&mut self, path: Vec<NodeId>, mut outcome: IterationOutcome, why: &str) -> Result<Step, EngineError> {
        let node = *path.last().expect("nonempty path");
        let value = S::count(self.config.levels.low as u64);
        self.tree.backpropagate_value(&path, value)?;
        // a half-simulated node keeps no children, so it is closed off as a leaf
        self.tree.mark_exhausted(node);
        outcome.backpropagated = value.to_f64();
        outcome.note.get_or_insert_with(|| why.to_string());
        self.completed += 1;
        outcome.end_digest = Some(self.reset_to_root()?);
        Ok(Step::Done(outcome))
    }

    fn reset_to_root(&mut self) -> Result<ObservationDigest, EngineError> {
        let actual = self.env.reset()?.digest();
        let expected = self.tree.root_digest();
        if actual != expected {
            return Err(EngineError::Determinism { step: 0, action: "reset".into(), expected, actual });
        }
        Ok(actual)
    }

    /// Iterates until a crash, budget exhaustion or an exhausted tree.
    pub fn run(mut self) -> Result<SearchResult<S>, EngineError> {
        let start = Instant::now();
        let mut iterations = Vec::new();
        let mut steps = Vec::new();
        let outcome = loop {
            if self.completed >= self.config.iteration_budget || start.elapsed() >= self.config.wall_clock_budget {
                break Outcome::BudgetExhausted;
            }
            match self.iterate()? {
                Step::Done(o) => iterations.push(o),
                Step::Crash(o, trace) => {
                    iterations.push(o);
                    steps = trace;
                    break Outcome::CrashReproduced;
                }
                Step::TreeExhausted => break Outcome::TreeExhausted,
            }
        };
        log::info!("search finished: {} after {} iterations", outcome.as_str(), self.completed);
        Ok(SearchResult {
            trace: ReproductionTrace {
                root_digest: self.tree.root_digest(),
                steps,
                outcome,
                iterations_used: self.completed,
                wall_clock_used: start.elapsed(),
            },
            iterations,
            tree: self.tree,
        })
    }
}

pub fn run_search<S: Scalar, E: Environment>(
    config: SearchConfig,
    env: E,
    oracles: OraclePair<'_>,
    report: &BugReport,
) -> Result<SearchResult<S>, EngineError> {
    Search::new(config, env, oracles, report)?.run()
}
