//! Shared fixtures for unit tests.

pub const LISTING: &str = include_str!("../../../programs/listing.json");
pub const IDENTITY: &str = include_str!("../../../programs/identity.json");
pub const DIAMOND: &str = include_str!("../../../programs/diamond.json");
pub const CHAIN5: &str = include_str!("../../../programs/chain5.json");
