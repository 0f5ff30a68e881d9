//! Closed forms and Monte Carlo for the 2-hop majority-voting model: path
//! success probabilities, vote-fraction moments, the Chebyshev ensemble error
//! bound, multi-generation learning curves and the class-count sweep.

mod analytic;
mod generations;
mod montecarlo;

pub use analytic::{chebyshev_bound, pe_minus, pe_plus, vote_moments, BoundVariant, VoteMoments};
pub use generations::{simulate_generations, GenerationPoint, GenerationSimConfig};
pub use montecarlo::{simulate_ensemble, sweep_classes, wilson_interval, EnsembleSimConfig, SimResult};
