//! Bayesian policy reuse driven by fitted transition-dynamics models.
//!
//! A library of source policies is paired with one dynamics model per source
//! task. While acting on an unknown target task, every observed transition is
//! scored under each model and the resulting likelihoods update a belief over
//! which source task the target resembles. The most probable task's policy is
//! reused, and when no entry fits well the library is grown online with a newly
//! learned policy and a freshly fitted model.
//!
//! Modules:
//!
//! - [`belief`]: transition samples, signal layouts, belief arithmetic, returns.
//! - [`dynamics`]: Gaussian-process and MLP dynamics models and the per-sample
//!   Gaussian observation likelihood.
//! - [`engine`]: the reuse phase, novelty detection, learning phase and
//!   plug-and-play library expansion.
//! - [`env`]: 2-D navigation and cart-pole simulators.
//! - [`policy`]: scripted source controllers, linear policies and the
//!   cross-entropy-method learner.
//! - [`baselines`]: return-signal BPR, probabilistic policy reuse and UCB
//!   policy selection.
//! - [`harness`]: seeded experiments, ablations, continual runs, CSV and SVG
//!   output.

pub mod baselines;
pub mod belief;
pub mod dynamics;
pub mod engine;
pub mod env;
pub mod harness;
pub mod policy;
pub mod rng;

pub use belief::{Belief, DiscountConfig, EpisodeResult, SignalLayout, SignalMode, TransitionSample};
