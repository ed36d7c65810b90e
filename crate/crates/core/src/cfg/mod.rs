//! Control-flow analyses over DIR functions: graph construction, dominators,
//! loop discovery, backward slicing, dead-code removal, and CFG cleanup.

mod graph;
mod loops;
mod simplify;
mod slice;

pub use graph::{build_cfg, dominators, natural_loops, Cfg, DomTree, NaturalLoop};
pub use loops::{find_loops, trip_count, Induction, LoopCmp, LoopInfo, LoopScan, SkippedLoop};
pub use simplify::simplify_cfg;
pub use slice::{backward_slice, dce, unused_loads, SliceError, SliceSet};
