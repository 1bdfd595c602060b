#![allow(dead_code)]

use std::cell::RefCell;
use std::path::PathBuf;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use repro_mcts::engine::{run_search, BugReport, OraclePair, SearchConfig, SearchResult};
use repro_mcts::env::{
    ActionCommand, EnvError, Environment, Observation, ObservationDigest, SimAppSpec, SimEnvironment,
    TransitionResult,
};
use repro_mcts::oracle::{
    ExpandRequest, Expander, OracleError, OracleProposal, OracleScore, ScriptedOracle, ScriptedOracleSpec,
    SimulateRequest, Simulator,
};

pub const SCENARIOS: [&str; 4] = ["fake_standby", "single_crash", "login", "news_settings"];

pub fn fixture(name: &str, file: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name).join(file)
}

pub struct Scenario {
    pub app: Arc<SimAppSpec>,
    pub oracle: ScriptedOracleSpec,
    pub report: BugReport,
}

pub fn scenario(name: &str) -> Scenario {
    let app = repro_mcts::env::load_sim_app(fixture(name, "app.json")).unwrap();
    let oracle = ScriptedOracleSpec::load(fixture(name, "oracle.json")).unwrap();
    let report = BugReport { text: app.report().unwrap_or("crash").into(), app_name: app.name().into() };
    Scenario { app: Arc::new(app), oracle, report }
}

impl Scenario {
    pub fn run(&self, config: SearchConfig) -> SearchResult<f64> {
        let o = ScriptedOracle::new(&self.oracle, config.policy.seed).unwrap();
        run_search(config, SimEnvironment::new(self.app.clone()), OraclePair::single(&o), &self.report).unwrap()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnvEvent {
    Reset(ObservationDigest),
    Execute { action: ActionCommand, pre: ObservationDigest, post: ObservationDigest },
}

/// Wraps an environment and logs every reset and action with digests computed here,
/// independently of what the engine records.
pub struct Recording<E> {
    pub inner: E,
    pub events: Rc<RefCell<Vec<EnvEvent>>>,
}

impl<E: Environment> Recording<E> {
    pub fn new(inner: E) -> (Self, Rc<RefCell<Vec<EnvEvent>>>) {
        let events = Rc::new(RefCell::new(Vec::new()));
        (Recording { inner, events: events.clone() }, events)
    }
}

impl<E: Environment> Environment for Recording<E> {
    fn reset(&mut self) -> Result<Observation, EnvError> {
        let obs = self.inner.reset()?;
        self.events.borrow_mut().push(EnvEvent::Reset(obs.digest()));
        Ok(obs)
    }
    fn execute(&mut self, action: &ActionCommand) -> Result<TransitionResult, EnvError> {
        let pre = self.inner.observe()?.digest();
        let r = self.inner.execute(action)?;
        self.events.borrow_mut().push(EnvEvent::Execute { action: action.clone(), pre, post: r.observation.digest() });
        Ok(r)
    }
    fn observe(&self) -> Result<Observation, EnvError> {
        self.inner.observe()
    }
    fn executable_actions(&self) -> Vec<ActionCommand> {
        self.inner.executable_actions()
    }
}

/// Counts oracle calls and delegates to an inner oracle.
pub struct Counting<O> {
    pub inner: O,
    pub proposals: AtomicUsize,
    pub scores: AtomicUsize,
}

impl<O> Counting<O> {
    pub fn new(inner: O) -> Self {
        Counting { inner, proposals: AtomicUsize::new(0), scores: AtomicUsize::new(0) }
    }
    pub fn calls(&self) -> (usize, usize) {
        (self.proposals.load(Ordering::SeqCst), self.scores.load(Ordering::SeqCst))
    }
}

impl<O: Expander> Expander for Counting<O> {
    fn propose(&self, req: &ExpandRequest<'_>) -> Result<Vec<OracleProposal>, OracleError> {
        self.proposals.fetch_add(1, Ordering::SeqCst);
        self.inner.propose(req)
    }
}

impl<O: Simulator> Simulator for Counting<O> {
    fn score(&self, req: &SimulateRequest<'_>) -> Result<OracleScore, OracleError> {
        self.scores.fetch_add(1, Ordering::SeqCst);
        self.inner.score(req)
    }
}

pub fn lines(steps: &[repro_mcts::engine::TraceStep]) -> Vec<String> {
    steps.iter().map(|s| s.action.to_line()).collect()
}
