//! Domain types and the framed wire encoding spoken by the headset client,
//! the gateway and the workers.

mod codec;
mod types;

pub use codec::*;
pub use types::*;
