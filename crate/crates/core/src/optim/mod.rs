//! Parameter-update rules: RMSProp, the RLS rules for critic output, fc
//! hidden and conv layers, the `k`/`μ` schedules and momentum.

mod rls;
mod rmsprop;
mod schedule;

pub use rls::{momentum_wrap, RlsLayerState, RlsStepInfo};
pub use rmsprop::RmspropState;
pub use schedule::{LinearDecay, ScheduleState};
