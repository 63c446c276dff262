//! The closed loop: plant, dropout links and the actor-identifier-critic
//! controller stepped once per sample.

use nalgebra::DVector;

use crate::actor::{ActorNet, ActorRates};
use crate::channels::{stream_rng, DropoutChannel, Stream};
use crate::config::RunConfig;
use crate::critic::{CostWeights, CriticNet, QuadraticBasis};
use crate::dynamics::{make_benchmark, step_euler, BenchmarkKind, HurwitzDecomposition, SimState};
use crate::error::{AicError, Result};
use crate::identifier::{IdentifierNet, IdentifierRates};

/// Stages of one control step, in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    /// Pick the measurement or, on a sensor drop, the cached prediction.
    ResolveState,
    /// Output the command from the current error estimate.
    Act,
    /// Predict the next tracking error with and without the command.
    PredictError,
    CriticUpdate,
    /// Cache the dropout-weighted next-state prediction and, when a
    /// measurement arrived, tune the identifier against the previous one.
    IdentifierUpdate,
    ActorUpdate,
}

/// What the controller computed during one step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepFragment {
    pub x_used: DVector<f64>,
    pub e_hat: DVector<f64>,
    pub u_c: DVector<f64>,
    pub td: f64,
    pub value: f64,
    /// `None` when no identifier update ran this step.
    pub x_tilde_norm: Option<f64>,
    pub actor_grad_mean: f64,
}

#[derive(Clone, Debug)]
pub struct AicController {
    pub identifier: IdentifierNet,
    pub critic: CriticNet,
    pub actor: ActorNet,
    pub cost: CostWeights,
    /// Actuator pass probability the controller assumes.
    pub gamma_bar_c: f64,
    /// With the actor disabled the command is always zero and the actor never
    /// learns; identifier and critic still run.
    pub actor_enabled: bool,
    last_prediction: Option<DVector<f64>>,
    last_input: Option<DVector<f64>>,
    trace: Option<Vec<Stage>>,
}

impl AicController {
    pub fn new(
        identifier: IdentifierNet,
        critic: CriticNet,
        actor: ActorNet,
        cost: CostWeights,
        gamma_bar_c: f64,
    ) -> Self {
        Self {
            identifier,
            critic,
            actor,
            cost,
            gamma_bar_c,
            actor_enabled: true,
            last_prediction: None,
            last_input: None,
            trace: None,
        }
    }

    /// Builds the three networks from a run config, drawing initial weights
    /// from the config seed's identifier and actor streams.
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let (n_x, n_u) = cfg.benchmark.dims();
        let a_c = HurwitzDecomposition::new(DVector::from_column_slice(&cfg.a_c))?;
        let identifier = IdentifierNet::new(
            n_x,
            n_u,
            cfg.identifier_hidden,
            IdentifierRates {
                eta_w: cfg.eta_i1,
                eta_v: cfg.eta_i2,
                rho: cfg.rho,
            },
            a_c,
            cfg.identifier_init_scale,
            &mut stream_rng(cfg.seed, Stream::Identifier),
        );
        let cost = CostWeights::diagonal(&cfg.q, &cfg.r)?;
        let basis = QuadraticBasis::new(n_x);
        let w_c = match &cfg.critic_init {
            Some(w) if w.len() == basis.len() => DVector::from_column_slice(w),
            Some(w) => {
                return Err(AicError::config(
                    "critic.init",
                    format!("expected {} weights, got {}", basis.len(), w.len()),
                ))
            }
            None => basis.weights_for_quadratic_form(&cost.q),
        };
        let critic = CriticNet::new(w_c, basis, cfg.eta_c);
        let actor = ActorNet::new(
            n_x,
            n_u,
            cfg.actor_hidden,
            ActorRates {
                eta_w: cfg.eta_a1,
                eta_v: cfg.eta_a2,
            },
            cfg.actor_init_scale,
            &mut stream_rng(cfg.seed, Stream::Actor),
        )
        .with_command_limit(cfg.command_limit);
        let mut ctrl = Self::new(identifier, critic, actor, cost, cfg.belief_gamma_c());
        ctrl.actor_enabled = !cfg.uncontrolled;
        Ok(ctrl)
    }

    /// Record the stage sequence of subsequent steps.
    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn trace(&self) -> Option<&[Stage]> {
        self.trace.as_deref()
    }

    pub fn last_prediction(&self) -> Option<&DVector<f64>> {
        self.last_prediction.as_ref()
    }

    fn mark(&mut self, stage: Stage) {
        if let Some(trace) = self.trace.as_mut() {
            trace.push(stage);
        }
    }

    /// One pass of the control loop.
    ///
    /// `measurement` is `None` when the sensor packet was lost; the previous
    /// one-step prediction then stands in for the state (or `x_d_now` before
    /// any prediction exists).
    pub fn control_step(
        &mut self,
        measurement: Option<&DVector<f64>>,
        x_d_now: &DVector<f64>,
        x_d_next: &DVector<f64>,
        dt: f64,
    ) -> Result<(DVector<f64>, StepFragment)> {
        let n_u = self.identifier.n_u();
        let zero_u = DVector::zeros(n_u);
        let x_used = match (measurement, &self.last_prediction) {
            (Some(x), _) => x.clone(),
            (None, Some(pred)) => pred.clone(),
            (None, None) => x_d_now.clone(),
        };
        self.mark(Stage::ResolveState);

        let e_hat = &x_used - x_d_now;
        let u_c = if self.actor_enabled {
            self.actor.act(&e_hat)
        } else {
            zero_u.clone()
        };
        self.mark(Stage::Act);

        let e_next_u = self
            .identifier
            .predict_tracking_error(&x_used, &u_c, x_d_next, dt);
        let e_next_0 = self
            .identifier
            .predict_tracking_error(&x_used, &zero_u, x_d_next, dt);
        self.mark(Stage::PredictError);

        let cost = self.cost.running_cost(&e_hat, &u_c, dt);
        let value = self.critic.value(&e_hat);
        let td = self
            .critic
            .td_error(cost, &e_hat, &e_next_u, &e_next_0, self.gamma_bar_c);
        self.critic.update(td, &e_hat, dt)?;
        self.mark(Stage::CriticUpdate);

        let prediction = self
            .identifier
            .mixture_prediction(&x_used, &u_c, self.gamma_bar_c, dt);
        let x_bar = self.identifier.input(&x_used, &u_c);

        let mut x_tilde_norm = None;
        if let (Some(_), Some(prev), Some(prev_input)) =
            (measurement, &self.last_prediction, &self.last_input)
        {
            let x_tilde = &x_used - prev;
            x_tilde_norm = Some(x_tilde.norm());
            self.identifier.update(&x_tilde, prev_input, dt)?;
        }
        self.last_prediction = Some(prediction);
        self.last_input = Some(x_bar);
        self.mark(Stage::IdentifierUpdate);

        let mut actor_grad_mean = 0.0;
        if self.actor_enabled {
            // chain rule through the networks as they stand after this step's updates
            let e_next = self
                .identifier
                .predict_tracking_error(&x_used, &u_c, x_d_next, dt);
            let critic_grad = self.critic.value_gradient(&e_next);
            let jac = self.identifier.control_jacobian(&x_used, &u_c);
            let bracket = self
                .actor
                .bracket_term(&critic_grad, &jac, &self.cost.r, &u_c, dt)?;
            actor_grad_mean = self.actor.update(&bracket, &e_hat, dt)?.mean_abs();
            self.mark(Stage::ActorUpdate);
        }

        Ok((
            u_c.clone(),
            StepFragment {
                x_used,
                e_hat,
                u_c,
                td,
                value,
                x_tilde_norm,
                actor_grad_mean,
            },
        ))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub x_true: DVector<f64>,
    pub x_d: DVector<f64>,
    pub gamma_s: u8,
    pub gamma_c: u8,
    pub x_used: DVector<f64>,
    pub e_hat: DVector<f64>,
    pub u_c: DVector<f64>,
    pub u_applied: DVector<f64>,
    pub td: f64,
    pub value: f64,
    pub x_tilde_norm: Option<f64>,
    pub w_i_norm: f64,
    pub v_i_norm: f64,
    pub w_c_norm: f64,
    pub w_a_norm: f64,
    pub v_a_norm: f64,
    pub actor_grad_mean: f64,
}

impl StepRecord {
    /// True tracking error `x - x_d`.
    pub fn error(&self) -> DVector<f64> {
        &self.x_true - &self.x_d
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryLog {
    pub benchmark: BenchmarkKind,
    pub seed: u64,
    pub config_hash: u64,
    pub dt: f64,
    pub n_x: usize,
    pub n_u: usize,
    pub records: Vec<StepRecord>,
    /// Critic weights when the run ended.
    pub critic_weights: DVector<f64>,
}

impl TrajectoryLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        self.records.len() as f64 * self.dt
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| r.t)
    }
}

/// A run that stopped early; `log` holds every step completed before `error`.
#[derive(Debug)]
pub struct EpisodeFailure {
    pub log: TrajectoryLog,
    pub error: AicError,
}

impl std::fmt::Display for EpisodeFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "run aborted after {} steps: {}",
            self.log.len(),
            self.error
        )
    }
}

impl std::error::Error for EpisodeFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Runs one closed-loop episode. Deterministic in `cfg` (including its seed).
pub fn run_episode(cfg: &RunConfig) -> std::result::Result<TrajectoryLog, EpisodeFailure> {
    run_episode_observed(cfg, |_, _| {})
}

/// [`run_episode`], calling `observer` with the controller after each logged step.
pub fn run_episode_observed<F>(
    cfg: &RunConfig,
    mut observer: F,
) -> std::result::Result<TrajectoryLog, EpisodeFailure>
where
    F: FnMut(&AicController, &StepRecord),
{
    let (n_x, n_u) = cfg.benchmark.dims();
    let empty_log = |critic_weights| TrajectoryLog {
        benchmark: cfg.benchmark,
        seed: cfg.seed,
        config_hash: cfg.fingerprint(),
        dt: cfg.dt,
        n_x,
        n_u,
        records: Vec::new(),
        critic_weights,
    };
    let mut ctrl = match AicController::from_config(cfg) {
        Ok(c) => c,
        Err(error) => {
            return Err(EpisodeFailure {
                log: empty_log(DVector::zeros(0)),
                error,
            })
        }
    };
    let mut log = empty_log(ctrl.critic.weights().clone());
    match drive(cfg, &mut ctrl, &mut log, &mut observer) {
        Ok(()) => {
            log.critic_weights = ctrl.critic.weights().clone();
            Ok(log)
        }
        Err(error) => {
            log.critic_weights = ctrl.critic.weights().clone();
            Err(EpisodeFailure { log, error })
        }
    }
}

/// Number of control steps in a horizon, rounding to absorb binary
/// representation error in `horizon / dt`.
pub fn step_count(horizon: f64, dt: f64) -> usize {
    if horizon <= 0.0 {
        0
    } else {
        (horizon / dt).round() as usize
    }
}

fn drive(
    cfg: &RunConfig,
    ctrl: &mut AicController,
    log: &mut TrajectoryLog,
    observer: &mut dyn FnMut(&AicController, &StepRecord),
) -> Result<()> {
    let (plant, reference) = make_benchmark(cfg.benchmark, Some(cfg.vsm));
    let mut sensor = DropoutChannel::seeded(cfg.gamma_bar_s, cfg.seed, Stream::Sensor);
    let mut actuator = DropoutChannel::seeded(cfg.gamma_bar_c, cfg.seed, Stream::Actuator);
    let dt = cfg.dt;
    let steps = step_count(cfg.horizon, dt);
    log.records.reserve(steps);

    let (x_d0, _) = reference.at(0.0);
    let mut state = SimState::new(0.0, x_d0 + DVector::from_column_slice(&cfg.x0_offset));

    for k in 0..steps {
        let t = k as f64 * dt;
        state.t = t;
        let (x_d, _) = reference.at(t);
        let (x_d_next, _) = reference.at(t + dt);

        let (measured, gamma_s) = sensor.apply(&state.x);
        let measurement = (gamma_s == 1).then_some(&measured);
        let (u_c, frag) = ctrl
            .control_step(measurement, &x_d, &x_d_next, dt)
            .map_err(|e| e.at_step(k))?;
        let (u_applied, gamma_c) = actuator.apply(&u_c);

        log.records.push(StepRecord {
            t,
            x_true: state.x.clone(),
            x_d,
            gamma_s,
            gamma_c,
            x_used: frag.x_used,
            e_hat: frag.e_hat,
            u_c,
            u_applied: u_applied.clone(),
            td: frag.td,
            value: frag.value,
            x_tilde_norm: frag.x_tilde_norm,
            w_i_norm: ctrl.identifier.w_norm(),
            v_i_norm: ctrl.identifier.v_norm(),
            w_c_norm: ctrl.critic.w_norm(),
            w_a_norm: ctrl.actor.w_norm(),
            v_a_norm: ctrl.actor.v_norm(),
            actor_grad_mean: frag.actor_grad_mean,
        });
        if let Some(r) = log.records.last() {
            observer(ctrl, r);
        }

        state = step_euler(plant.as_ref(), &state, &u_applied, dt).map_err(|e| e.at_step(k))?;
    }
    Ok(())
}
