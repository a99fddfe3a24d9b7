//! Utilities, scenarios and the forward/inverse share problem.

mod scenario;
mod shares;
mod utility;
mod volumes;

pub use scenario::{cordon_toll_schedule, post_utility, AppliedCell, MarketAdjustments, MarketScope, Scenario};
pub use shares::{inverse_utility, solve_shares, ForwardModel, Shares, SolverOptions};
pub use utility::{systematic_utility, utility_with_dest_asc};
pub use volumes::{
    market_utilities, predict_markets, predict_volumes, solve_market, Availability, MarketPrediction,
    MarketUtilities, Prediction, PredictionSummary,
};

