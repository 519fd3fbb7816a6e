//! Web perception: accessibility-tree observations, role+name targeted
//! actions, and the browse loop.

mod ax;
mod browse;
#[cfg(feature = "devtools")]
mod devtools;
mod observe;
mod session;
mod simtask;
mod simweb;

pub use ax::*;
pub use browse::*;
#[cfg(feature = "devtools")]
pub use devtools::*;
pub use observe::*;
pub use session::*;
pub use simtask::*;
pub use simweb::*;
