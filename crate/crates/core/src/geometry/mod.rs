//! Pinhole projection, PnP pose annotation and synthetic fixtures.

mod camera;
pub mod fixture;
pub mod pnp;
pub mod seven_segment;

pub use camera::*;
pub use fixture::{gen_fixture_scene, FixtureError, FixtureScene, SceneSpec};
pub use pnp::*;
pub use seven_segment::*;
