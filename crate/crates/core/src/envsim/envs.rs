//! Desk-scale environments.
//!
//! * `cartpole_lite`: classic cart-pole, Euler integration at `dt = 0.02`,
//!   force ±10 N, reward +1 per step, terminal when `|θ| > 12°`, `|x| > 2.4`
//!   or after 500 steps. Observation `[x, ẋ, θ, θ̇]`, raw.
//! * `pointmass`: damped 2-D double integrator driven towards the origin.
//!   Force is clipped to `[−1, 1]²`; reward `−‖pos‖²`; 200-step episodes.
//!   Observation `[x, y, ẋ, ẏ]`, raw.
//! * `pixelgrid`: agent on a 5×5 grid rendered as a 1×16×16 image with pixels
//!   in `[0, 1]`; four moves; +1 and terminal at the goal, −0.01 otherwise;
//!   100-step cap.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::network::{HeadKind, ObsShape};
use crate::policy::ActionValue;

pub mod cartpole {
    pub const GRAVITY: f64 = 9.8;
    pub const MASS_CART: f64 = 1.0;
    pub const MASS_POLE: f64 = 0.1;
    pub const HALF_LENGTH: f64 = 0.5;
    pub const FORCE: f64 = 10.0;
    pub const DT: f64 = 0.02;
    pub const THETA_LIMIT: f64 = 12.0 * std::f64::consts::PI / 180.0;
    pub const X_LIMIT: f64 = 2.4;
    pub const MAX_STEPS: u32 = 500;
    pub const RESET_RANGE: f64 = 0.05;
}

pub mod pointmass {
    pub const DT: f64 = 0.1;
    /// Acceleration per unit force.
    pub const GAIN: f64 = 5.0;
    /// Linear velocity damping rate.
    pub const DAMPING: f64 = 2.0;
    pub const MAX_STEPS: u32 = 200;
    /// Initial position is uniform in `[−RESET_RANGE, RESET_RANGE]²`.
    pub const RESET_RANGE: f64 = 1.0;
}

pub mod pixelgrid {
    pub const GRID: usize = 5;
    pub const CELL: usize = 3;
    pub const SIZE: usize = 16;
    pub const MAX_STEPS: u32 = 100;
    pub const GOAL_REWARD: f64 = 1.0;
    pub const STEP_REWARD: f64 = -0.01;
    pub const AGENT_PIXEL: f64 = 1.0;
    pub const GOAL_PIXEL: f64 = 0.5;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EnvId {
    CartPoleLite,
    PointMass,
    PixelGrid,
}

impl EnvId {
    pub fn obs_shape(self) -> ObsShape {
        match self {
            EnvId::CartPoleLite => ObsShape::Vector(4),
            EnvId::PointMass => ObsShape::Vector(4),
            EnvId::PixelGrid => ObsShape::Image {
                c: 1,
                h: pixelgrid::SIZE,
                w: pixelgrid::SIZE,
            },
        }
    }

    /// Policy head matching the action space.
    pub fn head(self) -> HeadKind {
        match self {
            EnvId::CartPoleLite => HeadKind::Softmax { actions: 2 },
            EnvId::PointMass => HeadKind::Gaussian { dim: 2 },
            EnvId::PixelGrid => HeadKind::Softmax { actions: 4 },
        }
    }

    pub fn is_continuous(self) -> bool {
        matches!(self.head(), HeadKind::Gaussian { .. })
    }

    pub fn max_steps(self) -> u32 {
        match self {
            EnvId::CartPoleLite => cartpole::MAX_STEPS,
            EnvId::PointMass => pointmass::MAX_STEPS,
            EnvId::PixelGrid => pixelgrid::MAX_STEPS,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EnvId::CartPoleLite => "cartpole_lite",
            EnvId::PointMass => "pointmass",
            EnvId::PixelGrid => "pixelgrid",
        }
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cartpole_lite" => Ok(EnvId::CartPoleLite),
            "pointmass" => Ok(EnvId::PointMass),
            "pixelgrid" => Ok(EnvId::PixelGrid),
            other => Err(Error::Config(format!("unknown environment `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Dynamics {
    CartPole {
        x: f64,
        x_dot: f64,
        theta: f64,
        theta_dot: f64,
    },
    PointMass {
        pos: [f64; 2],
        vel: [f64; 2],
    },
    PixelGrid {
        agent: (usize, usize),
        goal: (usize, usize),
    },
}

/// Result of one environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    /// Observation to act on next; already the reset observation when `done`.
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    /// Undiscounted return of the episode that just ended.
    pub episode_return: Option<f64>,
}

/// One worker's environment with its own random stream.
#[derive(Clone, Debug)]
pub struct EnvInstance {
    id: EnvId,
    dynamics: Dynamics,
    rng: ChaCha8Rng,
    steps: u32,
    episode_return: f64,
}

impl EnvInstance {
    /// Worker `worker` of a run seeded with `seed`; each worker uses its own ChaCha stream.
    pub fn new(id: EnvId, seed: u64, worker: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(worker + 1);
        let mut env = EnvInstance {
            id,
            dynamics: Dynamics::PixelGrid {
                agent: (0, 0),
                goal: (0, 0),
            },
            rng,
            steps: 0,
            episode_return: 0.0,
        };
        env.reset();
        env
    }

    pub fn id(&self) -> EnvId {
        self.id
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub(crate) fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    pub fn reset(&mut self) -> Vec<f64> {
        let rng = &mut self.rng;
        self.dynamics = match self.id {
            EnvId::CartPoleLite => {
                let r = cartpole::RESET_RANGE;
                Dynamics::CartPole {
                    x: rng.random_range(-r..r),
                    x_dot: rng.random_range(-r..r),
                    theta: rng.random_range(-r..r),
                    theta_dot: rng.random_range(-r..r),
                }
            }
            EnvId::PointMass => {
                let r = pointmass::RESET_RANGE;
                Dynamics::PointMass {
                    pos: [rng.random_range(-r..r), rng.random_range(-r..r)],
                    vel: [0.0; 2],
                }
            }
            EnvId::PixelGrid => {
                let cells = pixelgrid::GRID * pixelgrid::GRID;
                let a = rng.random_range(0..cells);
                let mut g = rng.random_range(0..cells - 1);
                if g >= a {
                    g += 1;
                }
                let at = |c: usize| (c / pixelgrid::GRID, c % pixelgrid::GRID);
                Dynamics::PixelGrid {
                    agent: at(a),
                    goal: at(g),
                }
            }
        };
        self.steps = 0;
        self.episode_return = 0.0;
        self.observation()
    }

    pub fn observation(&self) -> Vec<f64> {
        match &self.dynamics {
            Dynamics::CartPole {
                x,
                x_dot,
                theta,
                theta_dot,
            } => vec![*x, *x_dot, *theta, *theta_dot],
            Dynamics::PointMass { pos, vel } => vec![pos[0], pos[1], vel[0], vel[1]],
            Dynamics::PixelGrid { agent, goal } => render_grid(*agent, *goal),
        }
    }

    /// Advances one step, auto-resetting after a terminal transition.
    pub fn step(&mut self, action: &ActionValue) -> Result<StepOutcome> {
        let (reward, terminal) = match (&mut self.dynamics, action) {
            (
                Dynamics::CartPole {
                    x,
                    x_dot,
                    theta,
                    theta_dot,
                },
                ActionValue::Discrete(a),
            ) if *a < 2 => {
                use cartpole::*;
                let force = if *a == 1 { FORCE } else { -FORCE };
                let total_mass = MASS_CART + MASS_POLE;
                let pole_ml = MASS_POLE * HALF_LENGTH;
                let (sin, cos) = theta.sin_cos();
                let temp = (force + pole_ml * *theta_dot * *theta_dot * sin) / total_mass;
                let theta_acc = (GRAVITY * sin - cos * temp)
                    / (HALF_LENGTH * (4.0 / 3.0 - MASS_POLE * cos * cos / total_mass));
                let x_acc = temp - pole_ml * theta_acc * cos / total_mass;
                *x += DT * *x_dot;
                *x_dot += DT * x_acc;
                *theta += DT * *theta_dot;
                *theta_dot += DT * theta_acc;
                let fallen = x.abs() > X_LIMIT || theta.abs() > THETA_LIMIT;
                (1.0, fallen)
            }
            (Dynamics::PointMass { pos, vel }, ActionValue::Continuous(f))
                if f.len() == 2 && f.iter().all(|v| v.is_finite()) =>
            {
                use pointmass::*;
                for d in 0..2 {
                    let force = f[d].clamp(-1.0, 1.0);
                    vel[d] += DT * (GAIN * force - DAMPING * vel[d]);
                    pos[d] += DT * vel[d];
                }
                (-(pos[0] * pos[0] + pos[1] * pos[1]), false)
            }
            (Dynamics::PixelGrid { agent, goal }, ActionValue::Discrete(a)) if *a < 4 => {
                let last = pixelgrid::GRID - 1;
                let (r, c) = *agent;
                *agent = match a {
                    0 => (r.saturating_sub(1), c),
                    1 => ((r + 1).min(last), c),
                    2 => (r, c.saturating_sub(1)),
                    _ => (r, (c + 1).min(last)),
                };
                if agent == goal {
                    (pixelgrid::GOAL_REWARD, true)
                } else {
                    (pixelgrid::STEP_REWARD, false)
                }
            }
            (_, action) => {
                return Err(Error::InvalidAction(format!(
                    "{action:?} is not valid for {}",
                    self.id
                )));
            }
        };
        self.steps += 1;
        self.episode_return += reward;
        let done = terminal || self.steps >= self.id.max_steps();
        if done {
            let ret = self.episode_return;
            let obs = self.reset();
            Ok(StepOutcome {
                obs,
                reward,
                done,
                episode_return: Some(ret),
            })
        } else {
            Ok(StepOutcome {
                obs: self.observation(),
                reward,
                done,
                episode_return: None,
            })
        }
    }

    /// Physical state, step counter and running return as doubles.
    pub(crate) fn export_state(&self) -> Vec<f64> {
        let mut out = match &self.dynamics {
            Dynamics::CartPole {
                x,
                x_dot,
                theta,
                theta_dot,
            } => vec![*x, *x_dot, *theta, *theta_dot],
            Dynamics::PointMass { pos, vel } => vec![pos[0], pos[1], vel[0], vel[1]],
            Dynamics::PixelGrid { agent, goal } => {
                vec![agent.0 as f64, agent.1 as f64, goal.0 as f64, goal.1 as f64]
            }
        };
        out.push(self.steps as f64);
        out.push(self.episode_return);
        out
    }

    pub(crate) fn import_state(&mut self, state: &[f64], rng: ChaCha8Rng) -> Result<()> {
        if state.len() != 6 {
            return Err(Error::Checkpoint(format!(
                "environment state of length {}",
                state.len()
            )));
        }
        self.dynamics = match self.id {
            EnvId::CartPoleLite => Dynamics::CartPole {
                x: state[0],
                x_dot: state[1],
                theta: state[2],
                theta_dot: state[3],
            },
            EnvId::PointMass => Dynamics::PointMass {
                pos: [state[0], state[1]],
                vel: [state[2], state[3]],
            },
            EnvId::PixelGrid => Dynamics::PixelGrid {
                agent: (state[0] as usize, state[1] as usize),
                goal: (state[2] as usize, state[3] as usize),
            },
        };
        self.steps = state[4] as u32;
        self.episode_return = state[5];
        self.rng = rng;
        Ok(())
    }

    #[cfg(test)]
    fn set_cartpole(&mut self, s: [f64; 4]) {
        self.dynamics = Dynamics::CartPole {
            x: s[0],
            x_dot: s[1],
            theta: s[2],
            theta_dot: s[3],
        };
    }

    #[cfg(test)]
    fn set_pointmass(&mut self, pos: [f64; 2], vel: [f64; 2]) {
        self.dynamics = Dynamics::PointMass { pos, vel };
    }

    #[cfg(test)]
    fn set_grid(&mut self, agent: (usize, usize), goal: (usize, usize)) {
        self.dynamics = Dynamics::PixelGrid { agent, goal };
    }
}

fn render_grid(agent: (usize, usize), goal: (usize, usize)) -> Vec<f64> {
    use pixelgrid::*;
    let mut img = vec![0.0; SIZE * SIZE];
    let mut paint = |(r, c): (usize, usize), value: f64| {
        for i in 0..CELL {
            for j in 0..CELL {
                img[(r * CELL + i) * SIZE + c * CELL + j] = value;
            }
        }
    };
    paint(goal, GOAL_PIXEL);
    paint(agent, AGENT_PIXEL);
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cartpole_upright_at_rest_survives_a_step() {
        let mut env = EnvInstance::new(EnvId::CartPoleLite, 0, 0);
        env.set_cartpole([0.0; 4]);
        for a in 0..2 {
            let mut e = env.clone();
            let out = e.step(&ActionValue::Discrete(a)).unwrap();
            assert!(!out.done);
            assert_eq!(out.reward, 1.0);
        }
    }

    #[test]
    fn cartpole_terminates_and_resets() {
        let mut env = EnvInstance::new(EnvId::CartPoleLite, 0, 0);
        env.set_cartpole([0.0, 0.0, 0.2, 2.0]);
        let out = env.step(&ActionValue::Discrete(1)).unwrap();
        assert!(out.done);
        assert_eq!(out.episode_return, Some(1.0));
        assert!(out.obs.iter().all(|v| v.abs() <= cartpole::RESET_RANGE));
        assert_eq!(env.steps(), 0);
    }

    #[test]
    fn pointmass_at_goal_with_zero_force() {
        let mut env = EnvInstance::new(EnvId::PointMass, 0, 0);
        env.set_pointmass([0.0; 2], [0.0; 2]);
        let out = env.step(&ActionValue::Continuous(vec![0.0, 0.0])).unwrap();
        assert_eq!(out.reward, 0.0);
        assert!(!out.done);
    }

    #[test]
    fn pointmass_episode_length() {
        let mut env = EnvInstance::new(EnvId::PointMass, 3, 1);
        let mut dones = 0;
        for t in 1..=400 {
            if env
                .step(&ActionValue::Continuous(vec![0.3, -2.0]))
                .unwrap()
                .done
            {
                dones += 1;
                assert_eq!(t % 200, 0);
            }
        }
        assert_eq!(dones, 2);
    }

    #[test]
    fn pixelgrid_reaching_goal() {
        let mut env = EnvInstance::new(EnvId::PixelGrid, 0, 0);
        env.set_grid((2, 2), (2, 3));
        let out = env.step(&ActionValue::Discrete(3)).unwrap();
        assert_eq!(out.reward, 1.0);
        assert!(out.done);
    }

    #[test]
    fn pixelgrid_render_bounds() {
        let env = EnvInstance::new(EnvId::PixelGrid, 5, 2);
        let obs = env.observation();
        assert_eq!(obs.len(), 256);
        assert!(obs.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(obs.iter().filter(|&&v| v == 1.0).count(), 9);
        assert_eq!(obs.iter().filter(|&&v| v == 0.5).count(), 9);
    }

    #[test]
    fn invalid_actions_are_rejected() {
        let mut env = EnvInstance::new(EnvId::CartPoleLite, 0, 0);
        assert!(env.step(&ActionValue::Discrete(2)).is_err());
        assert!(env.step(&ActionValue::Continuous(vec![0.0])).is_err());
        let mut env = EnvInstance::new(EnvId::PointMass, 0, 0);
        assert!(env
            .step(&ActionValue::Continuous(vec![f64::NAN, 0.0]))
            .is_err());
    }

    #[test]
    fn workers_have_independent_streams() {
        let a = EnvInstance::new(EnvId::PointMass, 7, 0).observation();
        let b = EnvInstance::new(EnvId::PointMass, 7, 1).observation();
        let c = EnvInstance::new(EnvId::PointMass, 7, 0).observation();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }
}
